use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_pcg::Pcg64;

use super::{dual_branch_loss, trace_forward, BoundParams, Guide, GuidanceMode, GuidanceSource, ModelConfig, ModelParams};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::tensor::{clip_grad_norm, sgd_step, Tape};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub guidance: GuidanceMode,
    /// Joint L2 bound on the batch-averaged gradient; `None` disables clipping.
    pub max_grad_norm: Option<f32>,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            learning_rate: 0.3,
            guidance: GuidanceMode::Complementary,
            max_grad_norm: Some(1.0),
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be a finite non-negative number"));
        }
        if let Some(n) = self.max_grad_norm {
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::config("max_grad_norm", "must be a finite positive number"));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if let GuidanceMode::Threshold(d) = self.guidance {
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::config("erase_threshold", "must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean dual-branch loss over the epoch's samples, measured before each
    /// sample's update.
    pub loss: f64,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

pub fn train(
    params: &mut ModelParams,
    config: &ModelConfig,
    samples: &[Sample],
    train_config: &TrainConfig,
) -> Result<TrainReport> {
    train_with(params, config, samples, train_config, |_| {})
}

/// Mini-batch SGD over `samples`; branch B is guided by the label's CAM.
/// Gradients are summed in sample order, averaged over the batch and then
/// clipped to `max_grad_norm`.
/// `on_epoch` sees each epoch's stats as soon as it finishes.
pub fn train_with(
    params: &mut ModelParams,
    config: &ModelConfig,
    samples: &[Sample],
    train_config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    train_config.validate()?;
    params.check_against(config)?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = Pcg64::seed_from_u64(train_config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut report = TrainReport::default();

    for epoch in 0..train_config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits_a, mut hits_b) = (0.0f64, 0usize, 0usize);
        for batch in order.chunks(train_config.batch_size) {
            for &idx in batch {
                let sample = &samples[idx];
                let mut tape = Tape::new();
                let bound = BoundParams::bind(&mut tape, params, true);
                let out = trace_forward(
                    &mut tape,
                    &bound,
                    config,
                    &sample.image,
                    GuidanceSource::Computed(Guide::Class(sample.label), train_config.guidance),
                )?;
                let loss = dual_branch_loss(&mut tape, out.logits_a, out.logits_b, sample.label)?;
                let value = tape.value(loss).item()? as f64;
                if !value.is_finite() {
                    return Err(Error::NumericFailure(format!(
                        "loss became {value} at epoch {epoch} on sample {}",
                        sample.id
                    )));
                }
                loss_sum += value;
                hits_a += usize::from(tape.value(out.logits_a).argmax() == sample.label);
                hits_b += usize::from(tape.value(out.logits_b).argmax() == sample.label);

                let mut grads = tape.backward(loss)?;
                let vars: Vec<_> = bound.vars().collect();
                for (param, var) in params.parameters_mut().zip(vars) {
                    let g = grads
                        .take(var)
                        .ok_or_else(|| Error::MissingGradient(param.name.clone()))?;
                    param.accumulate_grad(&g)?;
                }
            }
            let scale = 1.0 / batch.len() as f32;
            for p in params.parameters_mut() {
                if let Some(g) = p.grad.take() {
                    p.grad = Some(g.map(|v| v * scale));
                }
            }
            if let Some(max_norm) = train_config.max_grad_norm {
                clip_grad_norm(params.parameters_mut(), max_norm)?;
            }
            sgd_step(params.parameters_mut(), train_config.learning_rate)?;
        }
        let n = samples.len() as f64;
        let stats = EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / n,
            accuracy_a: hits_a as f64 / n,
            accuracy_b: hits_b as f64 / n,
        };
        on_epoch(&stats);
        report.epochs.push(stats);
    }
    Ok(report)
}
