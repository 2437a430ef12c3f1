//! Strategies for combining the maps of the two branches into one
//! localization map.
//!
//! * `max`: pointwise maximum of the two normalized CAMs.
//! * `addition`: pointwise sum of the two normalized CAMs.
//! * `l1norm`: each branch's raw score map for the class is weighted by its
//!   share of the block-averaged l1 activity over all class channels.

use std::fmt;
use std::str::FromStr;

use crate::cam::{class_map, normalize_minmax, CamMap};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionStrategy {
    Max,
    Addition,
    L1Norm,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 3] = [Self::Max, Self::Addition, Self::L1Norm];

    pub fn name(self) -> &'static str {
        match self {
            Self::Max => "max",
            Self::Addition => "addition",
            Self::L1Norm => "l1norm",
        }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown fusion strategy `{s}` (valid: max, addition, l1norm)"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FusionConfig {
    pub strategy: FusionStrategy,
    /// Half-width of the square averaging window over the activity map.
    pub block_radius: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            strategy: FusionStrategy::Addition,
            block_radius: 1,
        }
    }
}

/// Non-negative per-pixel activity level.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivityMap(Tensor);

impl ActivityMap {
    pub fn new(values: Tensor) -> Result<Self> {
        values.dims2("activity_map")?;
        if values.data().iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::InvalidArgument(
                "activity map must be finite and non-negative".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &Tensor {
        &self.0
    }
}

/// Per-pixel fusion weight in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMap(Tensor);

impl WeightMap {
    pub fn values(&self) -> &Tensor {
        &self.0
    }
}

/// Fused localization map for one class.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedMap(Tensor);

impl FusedMap {
    pub fn values(&self) -> &Tensor {
        &self.0
    }

    pub fn into_values(self) -> Tensor {
        self.0
    }
}

pub fn fuse_max(a: &CamMap, b: &CamMap) -> Result<FusedMap> {
    a.values()
        .zip_with(b.values(), "fuse_max", f32::max)
        .map(FusedMap)
}

pub fn fuse_addition(a: &CamMap, b: &CamMap) -> Result<FusedMap> {
    a.values()
        .zip_with(b.values(), "fuse_addition", |x, y| x + y)
        .map(FusedMap)
}

/// `M(y, x) = sum_c |f_c(y, x)|` over every class channel.
pub fn activity_map(score_maps: &Tensor) -> Result<ActivityMap> {
    let (_, h, w) = score_maps.dims3("activity_map")?;
    let plane = h * w;
    let mut out = vec![0.0f32; plane];
    for chan in score_maps.data().chunks(plane) {
        out.iter_mut().zip(chan).for_each(|(o, v)| *o += v.abs());
    }
    Ok(ActivityMap(Tensor::from_parts(vec![h, w], out)))
}

/// Mean over the `(2r+1)²` window around each pixel. Out-of-bounds terms
/// count as zero and the divisor stays `(2r+1)²` at the borders.
pub fn block_average(m: &ActivityMap, r: usize) -> ActivityMap {
    let values = m.values();
    let (h, w) = (values.shape()[0], values.shape()[1]);
    let side = 2 * r + 1;
    // Separable box sum: rows first, then columns.
    let mut rows = vec![0.0f32; h * w];
    for (src, dst) in values.data().chunks(w).zip(rows.chunks_mut(w)) {
        for (x, d) in dst.iter_mut().enumerate() {
            *d = src[x.saturating_sub(r)..(x + r + 1).min(w)].iter().sum();
        }
    }
    let divisor = (side * side) as f32;
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
            for x in 0..w {
                out[y * w + x] += rows[yy * w + x];
            }
        }
    }
    out.iter_mut().for_each(|v| *v /= divisor);
    ActivityMap(Tensor::from_parts(vec![h, w], out))
}

/// `w_i = M_i / (M_a + M_b)`, with `(0.5, 0.5)` where both activities vanish.
pub fn fusion_weights(ma: &ActivityMap, mb: &ActivityMap) -> Result<(WeightMap, WeightMap)> {
    let (a, b) = (ma.values(), mb.values());
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "fusion_weights",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (wa, wb): (Vec<f32>, Vec<f32>) = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let total = x + y;
            if total > 0.0 {
                (x / total, y / total)
            } else {
                (0.5, 0.5)
            }
        })
        .unzip();
    let shape = a.shape().to_vec();
    Ok((
        WeightMap(Tensor::from_parts(shape.clone(), wa)),
        WeightMap(Tensor::from_parts(shape, wb)),
    ))
}

/// Activity-weighted combination of channel `class` of both branches' raw
/// score maps.
pub fn fuse_l1norm(score_maps_a: &Tensor, score_maps_b: &Tensor, class: usize, block_radius: usize) -> Result<FusedMap> {
    if score_maps_a.shape() != score_maps_b.shape() {
        return Err(Error::ShapeMismatch {
            op: "fuse_l1norm",
            left: score_maps_a.shape().to_vec(),
            right: score_maps_b.shape().to_vec(),
        });
    }
    let fa = score_maps_a.channel(class)?;
    let fb = score_maps_b.channel(class)?;
    let ma = block_average(&activity_map(score_maps_a)?, block_radius);
    let mb = block_average(&activity_map(score_maps_b)?, block_radius);
    let (wa, wb) = fusion_weights(&ma, &mb)?;
    let data = fa
        .data()
        .iter()
        .zip(fb.data())
        .zip(wa.values().data().iter().zip(wb.values().data()))
        .map(|((&a, &b), (&u, &v))| u * a + v * b)
        .collect();
    Ok(FusedMap(Tensor::from_parts(fa.shape().to_vec(), data)))
}

/// Fused map for `class` from the two branches' `[C, h, w]` score maps,
/// using normalized CAMs for max/addition and raw scores for l1norm.
pub fn fuse_scores(score_maps_a: &Tensor, score_maps_b: &Tensor, class: usize, config: &FusionConfig) -> Result<FusedMap> {
    match config.strategy {
        FusionStrategy::L1Norm => fuse_l1norm(score_maps_a, score_maps_b, class, config.block_radius),
        strategy => {
            let a = normalize_minmax(&class_map(score_maps_a, class)?)?;
            let b = normalize_minmax(&class_map(score_maps_b, class)?)?;
            if strategy == FusionStrategy::Max {
                fuse_max(&a, &b)
            } else {
                fuse_addition(&a, &b)
            }
        }
    }
}
