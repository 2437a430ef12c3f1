use super::Tensor;
use crate::error::{Error, Result};

/// A trainable tensor and its pending gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value,
            grad: None,
        }
    }

    /// Adds `delta` into the pending gradient.
    pub fn accumulate_grad(&mut self, delta: &Tensor) -> Result<()> {
        if delta.shape() != self.value.shape() {
            return Err(Error::ShapeMismatch {
                op: "accumulate_grad",
                left: self.value.shape().to_vec(),
                right: delta.shape().to_vec(),
            });
        }
        match &mut self.grad {
            Some(g) => *g = g.zip_with(delta, "accumulate_grad", |a, b| a + b)?,
            None => self.grad = Some(delta.clone()),
        }
        Ok(())
    }
}

/// Plain gradient descent: `p <- p - lr * grad`, then clears every gradient.
///
/// Fails without touching any parameter if one of them has no gradient.
pub fn sgd_step<'a>(params: impl IntoIterator<Item = &'a mut Parameter>, lr: f32) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate must be >= 0, got {lr}")));
    }
    let params: Vec<&mut Parameter> = params.into_iter().collect();
    if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
        return Err(Error::MissingGradient(p.name.clone()));
    }
    for p in params {
        let grad = p.grad.take().expect("checked above");
        p.value = p.value.zip_with(&grad, "sgd_step", |v, g| v - lr * g)?;
    }
    Ok(())
}

/// Rescales all pending gradients together so their joint l2 norm is at
/// most `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm<'a>(params: impl IntoIterator<Item = &'a mut Parameter>, max_norm: f32) -> Result<f64> {
    if !(max_norm > 0.0 && max_norm.is_finite()) {
        return Err(Error::InvalidArgument(format!("max gradient norm must be > 0, got {max_norm}")));
    }
    let mut grads: Vec<&mut Tensor> = params.into_iter().filter_map(|p| p.grad.as_mut()).collect();
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&v| v as f64 * v as f64)
        .sum::<f64>()
        .sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFinite("gradient norm"));
    }
    if norm > max_norm as f64 {
        let scale = (max_norm as f64 / norm) as f32;
        for g in grads.iter_mut() {
            **g = g.map(|v| v * scale);
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f32, g: Option<f32>) -> Parameter {
        Parameter {
            name: "p".into(),
            value: Tensor::scalar(v),
            grad: g.map(Tensor::scalar),
        }
    }

    #[test]
    fn single_step() {
        let mut p = param(1.0, Some(0.5));
        sgd_step([&mut p], 0.1).unwrap();
        assert_eq!(p.value.item().unwrap(), 0.95);
        assert!(p.grad.is_none());
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = param(0.3, Some(-7.0));
        sgd_step([&mut p], 0.0).unwrap();
        assert_eq!(p.value.item().unwrap(), 0.3);
    }

    #[test]
    fn two_steps_with_constant_grad() {
        let mut p = param(1.0, Some(0.25));
        sgd_step([&mut p], 0.5).unwrap();
        p.grad = Some(Tensor::scalar(0.25));
        sgd_step([&mut p], 0.5).unwrap();
        assert!((p.value.item().unwrap() - (1.0 - 2.0 * 0.5 * 0.25)).abs() < 1e-7);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let mut a = param(1.0, Some(1.0));
        let mut b = param(1.0, None);
        assert!(matches!(
            sgd_step([&mut a, &mut b], 0.1),
            Err(Error::MissingGradient(_))
        ));
        assert_eq!(a.value.item().unwrap(), 1.0);
    }

    #[test]
    fn clipping_rescales_to_the_bound() {
        let mut a = param(0.0, Some(3.0));
        let mut b = param(0.0, Some(-4.0));
        let norm = clip_grad_norm([&mut a, &mut b], 1.0).unwrap();
        assert_eq!(norm, 5.0);
        let ga = a.grad.unwrap().item().unwrap();
        let gb = b.grad.unwrap().item().unwrap();
        assert!((ga - 0.6).abs() < 1e-7 && (gb + 0.8).abs() < 1e-7);
    }

    #[test]
    fn small_gradients_are_untouched() {
        let mut a = param(0.0, Some(0.3));
        let mut b = param(0.0, None);
        assert!((clip_grad_norm([&mut a, &mut b], 1.0).unwrap() - 0.3).abs() < 1e-7);
        assert_eq!(a.grad.unwrap().item().unwrap(), 0.3);
        assert!(b.grad.is_none());
    }

    #[test]
    fn clipping_rejects_bad_input() {
        let mut a = param(0.0, Some(f32::INFINITY));
        assert!(matches!(clip_grad_norm([&mut a], 1.0), Err(Error::NonFinite(_))));
        let mut b = param(0.0, Some(1.0));
        assert!(matches!(clip_grad_norm([&mut b], 0.0), Err(Error::InvalidArgument(_))));
    }
}
