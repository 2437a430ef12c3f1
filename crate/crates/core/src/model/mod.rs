//! The two-branch network.
//!
//! A shared convolutional backbone feeds branch A directly. Branch A's CAM
//! for the guide class is turned into a guidance map (its complement, or a
//! binary erase mask), which scales the backbone features before branch B
//! sees them. Each branch ends in a 1×1 scoring convolution whose global
//! average gives that branch's logits.

mod checkpoint;
mod localizer;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use localizer::{Explanation, HclLocalizer};
pub use train::{train, train_with, EpochStats, TrainConfig, TrainReport};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

use crate::cam::{class_map, complement, normalize_minmax, threshold_erase, CamMap};
use crate::error::{Error, Result};
use crate::tensor::{Parameter, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub input_height: usize,
    pub input_width: usize,
    /// Output channels of each conv + relu + 2×2 pool backbone block.
    pub backbone_channels: Vec<usize>,
    /// Channels of the two 3×3 convolutions in each branch head.
    pub head_width: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            input_height: 64,
            input_width: 64,
            backbone_channels: vec![16, 32, 64],
            head_width: 64,
            seed: 7,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("num_classes", "must be at least 2"));
        }
        if self.backbone_channels.is_empty() || self.backbone_channels.contains(&0) {
            return Err(Error::config("backbone_channels", "must be a non-empty list of positive ints"));
        }
        if self.head_width == 0 {
            return Err(Error::config("head_width", "must be positive"));
        }
        let stride = 1usize
            .checked_shl(self.backbone_channels.len() as u32)
            .ok_or_else(|| Error::config("backbone_channels", "too many blocks"))?;
        for (field, v) in [("input_height", self.input_height), ("input_width", self.input_width)] {
            if v == 0 || v % stride != 0 {
                return Err(Error::config(field, format!("must be a positive multiple of {stride}")));
            }
        }
        Ok(())
    }

    /// Spatial size of the score maps.
    pub fn feature_size(&self) -> (usize, usize) {
        let stride = 1 << self.backbone_channels.len();
        (self.input_height / stride, self.input_width / stride)
    }
}

/// How branch A's CAM is turned into the map that scales branch B's input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GuidanceMode {
    /// `1 - normalized CAM`.
    Complementary,
    /// Zero where the normalized CAM reaches the threshold, one elsewhere.
    Threshold(f32),
}

pub const DEFAULT_ERASE_THRESHOLD: f32 = 0.6;

impl GuidanceMode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Complementary => "ccam",
            Self::Threshold(_) => "threshold",
        }
    }

    /// Parses `ccam` or `threshold`, the latter with the given erase level.
    pub fn parse(name: &str, erase_threshold: f32) -> Result<Self> {
        match name {
            "ccam" => Ok(Self::Complementary),
            "threshold" => Ok(Self::Threshold(erase_threshold)),
            other => Err(Error::InvalidArgument(format!(
                "unknown cam mode `{other}` (valid: ccam, threshold)"
            ))),
        }
    }
}

impl fmt::Display for GuidanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GuidanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s, DEFAULT_ERASE_THRESHOLD)
    }
}

/// Guidance map for `class` from branch A's `[C, h, w]` score maps.
pub fn guidance_map(score_maps_a: &Tensor, class: usize, mode: GuidanceMode) -> Result<CamMap> {
    let cam = normalize_minmax(&class_map(score_maps_a, class)?)?;
    match mode {
        GuidanceMode::Complementary => complement(&cam),
        GuidanceMode::Threshold(delta) => threshold_erase(&cam, delta),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub kernel: Parameter,
    pub bias: Parameter,
    pub pad: usize,
}

impl ConvLayer {
    fn init(name: &str, cin: usize, cout: usize, k: usize, rng: &mut Pcg64) -> Self {
        let fan_in = cin * k * k;
        let fan_out = cout * k * k;
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
        let kernel = Tensor::from_fn(&[cout, cin, k, k], |_| rng.random_range(-bound..=bound));
        Self {
            kernel: Parameter::new(format!("{name}.kernel"), kernel),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[cout])),
            pad: k / 2,
        }
    }
}

/// Two 3×3 conv + relu layers and a 1×1 class-scoring conv.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchHead {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    pub score: ConvLayer,
}

impl BranchHead {
    fn init(name: &str, features: usize, width: usize, classes: usize, rng: &mut Pcg64) -> Self {
        Self {
            conv1: ConvLayer::init(&format!("{name}.conv1"), features, width, 3, rng),
            conv2: ConvLayer::init(&format!("{name}.conv2"), width, width, 3, rng),
            score: ConvLayer::init(&format!("{name}.score"), width, classes, 1, rng),
        }
    }

    fn layers(&self) -> [&ConvLayer; 3] {
        [&self.conv1, &self.conv2, &self.score]
    }

    fn layers_mut(&mut self) -> [&mut ConvLayer; 3] {
        [&mut self.conv1, &mut self.conv2, &mut self.score]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub backbone: Vec<ConvLayer>,
    pub branch_a: BranchHead,
    pub branch_b: BranchHead,
}

/// Glorot-uniform kernels and zero biases, drawn in order backbone, branch
/// A, branch B from a PCG stream seeded with `config.seed`.
pub fn init_model(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = Pcg64::seed_from_u64(config.seed);
    let mut cin = 3;
    let mut backbone = Vec::with_capacity(config.backbone_channels.len());
    for (i, &cout) in config.backbone_channels.iter().enumerate() {
        backbone.push(ConvLayer::init(&format!("backbone.{i}"), cin, cout, 3, &mut rng));
        cin = cout;
    }
    let branch_a = BranchHead::init("branch_a", cin, config.head_width, config.num_classes, &mut rng);
    let branch_b = BranchHead::init("branch_b", cin, config.head_width, config.num_classes, &mut rng);
    Ok(ModelParams {
        backbone,
        branch_a,
        branch_b,
    })
}

impl ModelParams {
    pub fn layers(&self) -> impl Iterator<Item = &ConvLayer> {
        self.backbone
            .iter()
            .chain(self.branch_a.layers())
            .chain(self.branch_b.layers())
    }

    pub fn parameters(&self) -> impl Iterator<Item = &Parameter> {
        self.layers().flat_map(|l| [&l.kernel, &l.bias])
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.backbone
            .iter_mut()
            .chain(self.branch_a.layers_mut())
            .chain(self.branch_b.layers_mut())
            .flat_map(|l| [&mut l.kernel, &mut l.bias])
    }

    pub fn num_classes(&self) -> usize {
        self.branch_a.score.kernel.value.shape()[0]
    }

    /// Architecture implied by the tensor shapes; input size and seed are
    /// taken from the arguments.
    pub fn infer_config(&self, input_height: usize, input_width: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            num_classes: self.num_classes(),
            input_height,
            input_width,
            backbone_channels: self.backbone.iter().map(|l| l.kernel.value.shape()[0]).collect(),
            head_width: self.branch_a.conv1.kernel.value.shape()[0],
            seed,
        }
    }

    /// Checks that the parameters form a network for `config`: matching
    /// shapes, identically shaped branches, finite values.
    pub fn check_against(&self, config: &ModelConfig) -> Result<()> {
        config.validate()?;
        let expected = init_model(&ModelConfig { seed: 0, ..config.clone() })?;
        let actual: Vec<_> = self.parameters().collect();
        let wanted: Vec<_> = expected.parameters().collect();
        if actual.len() != wanted.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                wanted.len(),
                actual.len()
            )));
        }
        for (a, w) in actual.iter().zip(&wanted) {
            if a.name != w.name || a.value.shape() != w.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    a.name,
                    a.value.shape(),
                    w.name,
                    w.value.shape()
                )));
            }
            if !a.value.all_finite() {
                return Err(Error::NonFinite("model parameters"));
            }
        }
        Ok(())
    }
}

/// Selects the class whose CAM guides branch B.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Guide {
    /// A known class, e.g. the training label.
    Class(usize),
    /// Branch A's top-1 prediction.
    TopPrediction,
}

/// Everything one forward pass produces.
#[derive(Clone, Debug)]
pub struct ForwardArtifacts {
    /// Backbone output `[K, h, w]`.
    pub features: Tensor,
    pub score_maps_a: Tensor,
    pub score_maps_b: Tensor,
    pub logits_a: Tensor,
    pub logits_b: Tensor,
    pub guidance: CamMap,
    pub guide_class: usize,
}

struct LayerVars {
    kernel: Var,
    bias: Var,
    pad: usize,
}

/// Model parameters bound as leaves on a tape.
pub(crate) struct BoundParams {
    backbone: Vec<LayerVars>,
    branch_a: [LayerVars; 3],
    branch_b: [LayerVars; 3],
}

impl BoundParams {
    pub fn bind(tape: &mut Tape, params: &ModelParams, trainable: bool) -> Self {
        let mut bind_layer = |l: &ConvLayer| LayerVars {
            kernel: tape.leaf(l.kernel.value.clone(), trainable),
            bias: tape.leaf(l.bias.value.clone(), trainable),
            pad: l.pad,
        };
        let backbone = params.backbone.iter().map(&mut bind_layer).collect();
        let branch_a = params.branch_a.layers().map(&mut bind_layer);
        let branch_b = params.branch_b.layers().map(&mut bind_layer);
        Self {
            backbone,
            branch_a,
            branch_b,
        }
    }

    /// Leaf handles in the same order as [`ModelParams::parameters`].
    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.backbone
            .iter()
            .chain(&self.branch_a)
            .chain(&self.branch_b)
            .flat_map(|l| [l.kernel, l.bias])
    }
}

pub(crate) struct TracedForward {
    pub features: Var,
    pub score_maps_a: Var,
    pub score_maps_b: Var,
    pub logits_a: Var,
    pub logits_b: Var,
    pub guidance: CamMap,
    pub guide_class: usize,
}

fn conv(tape: &mut Tape, x: Var, l: &LayerVars) -> Result<Var> {
    tape.conv2d(x, l.kernel, l.bias, 1, l.pad)
}

fn head(tape: &mut Tape, x: Var, layers: &[LayerVars; 3]) -> Result<Var> {
    let h = conv(tape, x, &layers[0])?;
    let h = tape.relu(h);
    let h = conv(tape, h, &layers[1])?;
    let h = tape.relu(h);
    conv(tape, h, &layers[2])
}

fn check_image(config: &ModelConfig, image: &Tensor) -> Result<()> {
    let expected = [3, config.input_height, config.input_width];
    if image.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "forward (image vs model input)",
            left: image.shape().to_vec(),
            right: expected.to_vec(),
        });
    }
    Ok(())
}

pub(crate) enum GuidanceSource<'a> {
    Computed(Guide, GuidanceMode),
    Fixed(&'a CamMap),
}

pub(crate) fn trace_forward(
    tape: &mut Tape,
    bound: &BoundParams,
    config: &ModelConfig,
    image: &Tensor,
    source: GuidanceSource<'_>,
) -> Result<TracedForward> {
    check_image(config, image)?;
    let mut x = tape.constant(image.clone());
    for l in &bound.backbone {
        x = conv(tape, x, l)?;
        x = tape.relu(x);
        x = tape.maxpool2d(x)?;
    }
    let features = x;

    let score_maps_a = head(tape, features, &bound.branch_a)?;
    let logits_a = tape.global_avg_pool(score_maps_a)?;

    let (guidance, guide_class) = match source {
        GuidanceSource::Computed(guide, mode) => {
            let class = match guide {
                Guide::Class(c) if c < config.num_classes => c,
                Guide::Class(c) => {
                    return Err(Error::IndexOutOfRange {
                        what: "guide class",
                        index: c,
                        bound: config.num_classes,
                    })
                }
                Guide::TopPrediction => tape.value(logits_a).argmax(),
            };
            (guidance_map(tape.value(score_maps_a), class, mode)?, class)
        }
        GuidanceSource::Fixed(map) => (map.clone(), usize::MAX),
    };

    let guided = tape.mask_channels(features, guidance.values())?;
    let score_maps_b = head(tape, guided, &bound.branch_b)?;
    let logits_b = tape.global_avg_pool(score_maps_b)?;

    Ok(TracedForward {
        features,
        score_maps_a,
        score_maps_b,
        logits_a,
        logits_b,
        guidance,
        guide_class,
    })
}

fn collect(tape: Tape, t: TracedForward) -> ForwardArtifacts {
    ForwardArtifacts {
        features: tape.value(t.features).clone(),
        score_maps_a: tape.value(t.score_maps_a).clone(),
        score_maps_b: tape.value(t.score_maps_b).clone(),
        logits_a: tape.value(t.logits_a).clone(),
        logits_b: tape.value(t.logits_b).clone(),
        guidance: t.guidance,
        guide_class: t.guide_class,
    }
}

/// Inference pass: branch B is guided by branch A's map for `guide`.
pub fn forward(
    params: &ModelParams,
    config: &ModelConfig,
    image: &Tensor,
    guide: Guide,
    mode: GuidanceMode,
) -> Result<ForwardArtifacts> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params, false);
    let traced = trace_forward(&mut tape, &bound, config, image, GuidanceSource::Computed(guide, mode))?;
    Ok(collect(tape, traced))
}

/// Inference pass with an externally supplied guidance map. The reported
/// `guide_class` is `usize::MAX`.
pub fn forward_with_guidance(
    params: &ModelParams,
    config: &ModelConfig,
    image: &Tensor,
    guidance: &CamMap,
) -> Result<ForwardArtifacts> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params, false);
    let traced = trace_forward(&mut tape, &bound, config, image, GuidanceSource::Fixed(guidance))?;
    Ok(collect(tape, traced))
}

/// Sum of both branches' cross-entropies against `label`.
pub fn dual_branch_loss(tape: &mut Tape, logits_a: Var, logits_b: Var, label: usize) -> Result<Var> {
    let ce_a = tape.softmax_cross_entropy(logits_a, label)?;
    let ce_b = tape.softmax_cross_entropy(logits_b, label)?;
    tape.add(ce_a, ce_b)
}

/// `-log softmax(logits)[label]` in `f64`.
pub fn cross_entropy(logits: &Tensor, label: usize) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let ce = tape.softmax_cross_entropy(l, label)?;
    Ok(tape.value(ce).item()? as f64)
}

/// Dual-branch loss evaluated outside of training.
pub fn dual_branch_loss_value(logits_a: &Tensor, logits_b: &Tensor, label: usize) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(logits_a.clone());
    let b = tape.constant(logits_b.clone());
    let loss = dual_branch_loss(&mut tape, a, b, label)?;
    Ok(tape.value(loss).item()? as f64)
}
