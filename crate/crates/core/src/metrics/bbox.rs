use std::collections::VecDeque;
use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Axis-aligned box in pixel units; minimums inclusive, maximums exclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self> {
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::InvalidArgument(format!(
                "degenerate box ({x_min}, {y_min}, {x_max}, {y_max})"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self {
            x_min: 0,
            y_min: 0,
            x_max: width,
            y_max: height,
        }
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.x_max <= width && self.y_max <= height
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        (self.x_min..self.x_max).contains(&x) && (self.y_min..self.y_max).contains(&y)
    }

    pub fn intersection_area(&self, other: &BBox) -> u64 {
        let w = self.x_max.min(other.x_max).saturating_sub(self.x_min.max(other.x_min));
        let h = self.y_max.min(other.y_max).saturating_sub(self.y_min.max(other.y_min));
        w as u64 * h as u64
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x_min, self.y_min, self.x_max, self.y_max)
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

/// Tight box around the largest 4-connected component of the pixels at or
/// above `tau * max(map)`. An all-zero map yields the full-image box.
pub fn extract_bbox(map: &Tensor, tau: f32) -> Result<BBox> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("bbox tau must lie in (0, 1), got {tau}")));
    }
    let (h, w) = map.dims2("extract_bbox")?;
    let full = BBox::full(w as u32, h as u32);
    let peak = map.max();
    if peak.is_nan() || peak <= 0.0 {
        return Ok(full);
    }
    let cutoff = tau * peak;
    let on: Vec<bool> = map.data().iter().map(|&v| v >= cutoff).collect();

    let mut label = vec![false; h * w];
    let mut queue = VecDeque::new();
    let mut best: Option<(usize, BBox)> = None;
    for start in 0..h * w {
        if !on[start] || label[start] {
            continue;
        }
        label[start] = true;
        queue.push_back(start);
        let mut count = 0usize;
        let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
        while let Some(idx) = queue.pop_front() {
            count += 1;
            let (y, x) = (idx / w, idx % w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
            let mut visit = |n: usize| {
                if on[n] && !label[n] {
                    label[n] = true;
                    queue.push_back(n);
                }
            };
            if x > 0 {
                visit(idx - 1);
            }
            if x + 1 < w {
                visit(idx + 1);
            }
            if y > 0 {
                visit(idx - w);
            }
            if y + 1 < h {
                visit(idx + w);
            }
        }
        if best.as_ref().is_none_or(|(n, _)| count > *n) {
            let bbox = BBox {
                x_min: x0 as u32,
                y_min: y0 as u32,
                x_max: x1 as u32,
                y_max: y1 as u32,
            };
            best = Some((count, bbox));
        }
    }
    Ok(best.map(|(_, b)| b).unwrap_or(full))
}
