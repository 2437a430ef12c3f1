//! Weakly supervised object localization with two complementary branches.
//!
//! Branch A learns an ordinary class activation map (CAM). Branch B sees the
//! backbone features scaled by `1 - CAM`, which pushes it toward the object
//! parts branch A ignores. The two branches' maps are fused (max, addition or
//! l1-norm activity weighting) into the map boxes are extracted from.
//!
//! Modules, bottom up:
//!
//! * [`tensor`]: dense tensors and a small reverse-mode autodiff tape.
//! * [`cam`]: CAM extraction, min-max normalization, complement, erasing.
//! * [`fusion`]: the three fusion strategies.
//! * [`model`]: the network, training loop, checkpoints, inference wrapper.
//! * [`metrics`]: boxes, IoU and the top-k / GT-known scores.
//! * [`data`]: synthetic dataset generator and PPM/PGM/CSV codecs.

pub mod cam;
pub mod data;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod model;
pub mod tensor;

pub use cam::CamMap;
pub use data::{DatasetConfig, Sample};
pub use error::{Error, Result};
pub use fusion::{FusionConfig, FusionStrategy};
pub use metrics::{BBox, EvalRecord, Evaluation, MetricsReport};
pub use model::{GuidanceMode, HclLocalizer, ModelConfig, ModelParams, TrainConfig, TrainReport};
pub use tensor::Tensor;
