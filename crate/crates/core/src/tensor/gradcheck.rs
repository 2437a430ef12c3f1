//! Central finite-difference checks for tape gradients.

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome for one input of the checked graph.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheck {
    /// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`, zero when both vanish.
    pub fn relative_error(&self) -> f64 {
        let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
        let diff = norm(&mut self.analytic.iter().zip(&self.numeric).map(|(a, n)| a - n));
        let scale = norm(&mut self.analytic.iter().copied()).max(norm(&mut self.numeric.iter().copied()));
        if scale == 0.0 {
            0.0
        } else {
            diff / scale
        }
    }
}

/// Compares the tape's gradient of `Σ wᵢ·outᵢ` (random fixed weights drawn
/// from `seed`) against central differences with step `step`, for every
/// element of every input. `build` receives the inputs as gradient-tracked
/// leaves and returns the graph output.
pub fn check_gradients(
    inputs: &[Tensor],
    step: f32,
    seed: u64,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<Vec<GradCheck>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference step {step} must be positive")));
    }
    let eval = |values: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.parameter(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };

    let (mut tape, vars, out) = eval(inputs)?;
    let mut rng = Pcg64::seed_from_u64(seed);
    let shape = tape.value(out).shape().to_vec();
    let weights = Tensor::from_fn(&shape, |_| rng.random_range(-1.0f32..1.0));
    let objective = |t: &Tensor| -> f64 {
        t.data()
            .iter()
            .zip(weights.data())
            .map(|(&o, &w)| o as f64 * w as f64)
            .sum()
    };
    let w = tape.constant(weights.clone());
    let weighted = tape.mul(out, w)?;
    let loss = tape.sum(weighted);
    let grads = tape.backward(loss)?;

    let mut report = Vec::with_capacity(inputs.len());
    for (i, var) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match grads.get(*var) {
            Some(g) => g.data().iter().map(|&v| v as f64).collect(),
            None => vec![0.0; inputs[i].len()],
        };
        let mut numeric = Vec::with_capacity(inputs[i].len());
        for j in 0..inputs[i].len() {
            let probe = |delta: f32| -> Result<(f64, f32)> {
                let mut values = inputs.to_vec();
                let mut data = values[i].data().to_vec();
                data[j] += delta;
                let moved = data[j];
                values[i] = Tensor::new(values[i].shape().to_vec(), data)?;
                let (t, _, o) = eval(&values)?;
                Ok((objective(t.value(o)), moved))
            };
            let (plus, hi) = probe(step)?;
            let (minus, lo) = probe(-step)?;
            numeric.push((plus - minus) / (hi as f64 - lo as f64));
        }
        report.push(GradCheck { analytic, numeric });
    }
    Ok(report)
}
