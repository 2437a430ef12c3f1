//! Class activation maps and the two guidance maps derived from them: the
//! complementary map `1 - CAM` and the binary threshold-erased map.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A single-channel `[h, w]` spatial map.
#[derive(Clone, Debug, PartialEq)]
pub struct CamMap {
    values: Tensor,
    normalized: bool,
}

impl CamMap {
    /// Wraps raw (unnormalized) values.
    pub fn new(values: Tensor) -> Result<Self> {
        values.dims2("cam")?;
        Ok(Self {
            values,
            normalized: false,
        })
    }

    /// Wraps values already known to lie in `[0, 1]`.
    pub fn normalized(values: Tensor) -> Result<Self> {
        values.dims2("cam")?;
        if values.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("normalized map has values outside [0, 1]".into()));
        }
        Ok(Self {
            values,
            normalized: true,
        })
    }

    pub fn ones(h: usize, w: usize) -> Self {
        Self {
            values: Tensor::ones(&[h, w]),
            normalized: true,
        }
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.values.shape()[0], self.values.shape()[1])
    }

    fn require_normalized(&self, op: &str) -> Result<()> {
        if self.normalized {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("{op} requires a normalized map")))
        }
    }
}

/// Channel `class` of a `[C, h, w]` score-map stack. With a 1×1 scoring
/// convolution followed by global average pooling, this channel is the CAM.
pub fn class_map(score_maps: &Tensor, class: usize) -> Result<CamMap> {
    CamMap::new(score_maps.channel(class)?)
}

/// `(v - min) / (max - min)`; a constant map becomes all zeros.
pub fn normalize_minmax(map: &CamMap) -> Result<CamMap> {
    let values = map.values();
    if !values.all_finite() {
        return Err(Error::NonFinite("normalize_minmax"));
    }
    let (lo, hi) = (values.min(), values.max());
    let normalized = if hi > lo {
        let range = (hi - lo) as f64;
        values.map(|v| (((v - lo) as f64) / range).clamp(0.0, 1.0) as f32)
    } else {
        Tensor::zeros(values.shape())
    };
    Ok(CamMap {
        values: normalized,
        normalized: true,
    })
}

/// The complementary map `1 - m`.
pub fn complement(map: &CamMap) -> Result<CamMap> {
    map.require_normalized("complement")?;
    Ok(CamMap {
        values: map.values.map(|v| 1.0 - v),
        normalized: true,
    })
}

/// Binary mask: 0 where `m >= delta`, 1 elsewhere.
pub fn threshold_erase(map: &CamMap, delta: f32) -> Result<CamMap> {
    map.require_normalized("threshold_erase")?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "erase threshold must lie in (0, 1), got {delta}"
        )));
    }
    Ok(CamMap {
        values: map.values.map(|v| if v >= delta { 0.0 } else { 1.0 }),
        normalized: true,
    })
}
