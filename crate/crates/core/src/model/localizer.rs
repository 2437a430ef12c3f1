use super::{forward, ForwardArtifacts, Guide, GuidanceMode, ModelConfig, ModelParams};
use crate::cam::{class_map, normalize_minmax, CamMap};
use crate::error::Result;
use crate::fusion::{fuse_scores, FusionConfig};
use crate::metrics::{Localization, Localizer};
use crate::tensor::{bilinear_upsample, softmax, Tensor};

/// A trained model wired up for inference: branch B is guided by branch A's
/// top-1 class, classes are ranked by the softmax of the averaged logits, and
/// class maps come from the configured fusion strategy.
#[derive(Clone, Debug)]
pub struct HclLocalizer {
    pub params: ModelParams,
    pub config: ModelConfig,
    pub fusion: FusionConfig,
    pub guidance: GuidanceMode,
    /// Localize with branch A's CAM alone, ignoring branch B's maps.
    pub single_branch: bool,
}

/// Per-image maps, all normalized and at input resolution. `cam_a` and
/// `guidance` belong to `guide_class`, the rest to the predicted `class`.
#[derive(Clone, Debug)]
pub struct Explanation {
    pub class: usize,
    pub guide_class: usize,
    pub cam_a: Tensor,
    pub guidance: Tensor,
    pub cam_b: Tensor,
    pub fused: Tensor,
}

impl HclLocalizer {
    pub fn run(&self, image: &Tensor) -> Result<ForwardArtifacts> {
        forward(&self.params, &self.config, image, Guide::TopPrediction, self.guidance)
    }

    fn to_image(&self, map: &Tensor) -> Result<Tensor> {
        bilinear_upsample(map, self.config.input_height, self.config.input_width)
    }

    /// Normalized localization map for `class` at input resolution.
    pub fn class_map(&self, out: &ForwardArtifacts, class: usize) -> Result<Tensor> {
        let fused = if self.single_branch {
            normalize_minmax(&class_map(&out.score_maps_a, class)?)?.into_values()
        } else {
            fuse_scores(&out.score_maps_a, &out.score_maps_b, class, &self.fusion)?.into_values()
        };
        let up = self.to_image(&fused)?;
        Ok(normalize_minmax(&CamMap::new(up)?)?.into_values())
    }

    pub fn probabilities(out: &ForwardArtifacts) -> Result<Tensor> {
        let mean = out.logits_a.zip_with(&out.logits_b, "mean logits", |a, b| 0.5 * (a + b))?;
        Ok(softmax(&mean))
    }

    /// The maps behind the top-ranked class of `image`.
    pub fn explain(&self, image: &Tensor) -> Result<Explanation> {
        let out = self.run(image)?;
        let class = Self::probabilities(&out)?.argmax();
        let guide_norm = normalize_minmax(&class_map(&out.score_maps_a, out.guide_class)?)?;
        Ok(Explanation {
            class,
            guide_class: out.guide_class,
            cam_a: self.to_image(guide_norm.values())?,
            guidance: self.to_image(out.guidance.values())?,
            cam_b: self.to_image(normalize_minmax(&class_map(&out.score_maps_b, class)?)?.values())?,
            fused: self.class_map(&out, class)?,
        })
    }
}

impl Localizer for HclLocalizer {
    fn localize(&self, image: &Tensor) -> Result<Localization> {
        let out = self.run(image)?;
        let probabilities = Self::probabilities(&out)?.into_data();
        let class_maps = (0..self.config.num_classes)
            .map(|c| self.class_map(&out, c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Localization {
            probabilities,
            class_maps,
        })
    }
}
