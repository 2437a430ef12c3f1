//! Reference checks for fusion, box geometry, C-CAM algebra and the
//! single-sample overfit run.

use std::time::Instant;

use hclnet::cam::{complement, normalize_minmax, CamMap};
use hclnet::data::{DatasetConfig, Generator, Split};
use hclnet::fusion::{activity_map, block_average, fuse_l1norm, fusion_weights, ActivityMap};
use hclnet::metrics::{iou, BBox};
use hclnet::model::{dual_branch_loss_value, forward, init_model, train, Guide, GuidanceMode, ModelConfig, TrainConfig};
use hclnet::Tensor;
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

use super::Check;

/// Double loop over the window with zero padding and a fixed divisor.
pub fn naive_block_average(values: &Tensor, r: usize) -> Vec<f64> {
    let (h, w) = (values.shape()[0] as isize, values.shape()[1] as isize);
    let r = r as isize;
    let side = (2 * r + 1) as f64;
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0f64;
            for yy in y - r..=y + r {
                for xx in x - r..=x + r {
                    if (0..h).contains(&yy) && (0..w).contains(&xx) {
                        sum += values.data()[(yy * w + xx) as usize] as f64;
                    }
                }
            }
            out.push(sum / (side * side));
        }
    }
    out
}

fn random_activity(rng: &mut Pcg64, zero_fraction: f64) -> ActivityMap {
    let (h, w) = (rng.random_range(1..=12), rng.random_range(1..=12));
    let t = Tensor::from_fn(&[h, w], |_| {
        if rng.random_bool(zero_fraction) {
            0.0
        } else {
            rng.random_range(0.0f32..5.0)
        }
    });
    ActivityMap::new(t).unwrap()
}

pub const FUSION_TOLERANCE: f64 = 1e-6;

/// Worst deviation of `block_average` from the naive oracle over `maps`
/// random maps for each radius in `0..=2`.
pub fn block_average_error(maps: usize, seed: u64) -> f64 {
    let mut rng = Pcg64::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for r in 0..=2 {
        for _ in 0..maps {
            let m = random_activity(&mut rng, 0.1);
            let got = block_average(&m, r);
            let want = naive_block_average(m.values(), r);
            for (g, w) in got.values().data().iter().zip(&want) {
                worst = worst.max((*g as f64 - w).abs());
            }
        }
    }
    worst
}

/// Worst `|w_a + w_b - 1|` over pixels where the activities do not both
/// vanish.
pub fn weight_sum_error(maps: usize, seed: u64) -> f64 {
    let mut rng = Pcg64::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..maps {
        let a = random_activity(&mut rng, 0.3);
        let b = ActivityMap::new(Tensor::from_fn(a.values().shape(), |_| {
            if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0f32..5.0) }
        }))
        .unwrap();
        let (wa, wb) = fusion_weights(&a, &b).unwrap();
        for i in 0..a.values().len() {
            if a.values().data()[i] + b.values().data()[i] > 0.0 {
                let s = wa.values().data()[i] as f64 + wb.values().data()[i] as f64;
                worst = worst.max((s - 1.0).abs());
            }
        }
    }
    worst
}

/// Worst deviation of `fuse_l1norm(s, s, c)` from channel `c` of `s`.
pub fn identical_branch_error(maps: usize, seed: u64) -> f64 {
    let mut rng = Pcg64::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..maps {
        let c = rng.random_range(2..6);
        let (h, w) = (rng.random_range(1..=10), rng.random_range(1..=10));
        let s = Tensor::from_fn(&[c, h, w], |_| rng.random_range(-3.0f32..3.0));
        let class = rng.random_range(0..c);
        let r = rng.random_range(0..=2);
        let fused = fuse_l1norm(&s, &s, class, r).unwrap();
        let want = s.channel(class).unwrap();
        for (g, w) in fused.values().data().iter().zip(want.data()) {
            worst = worst.max((g - w).abs() as f64);
        }
    }
    worst
}

/// Block average of a 3×3 all-ones activity map with radius 1.
pub fn ones_3x3_values() -> (f32, f32, f32) {
    let ones = activity_map(&Tensor::ones(&[1, 3, 3])).unwrap();
    let m = block_average(&ones, 1);
    let d = m.values().data();
    (d[4], d[0], d[1])
}

pub fn fusion_check() -> Check {
    let block = block_average_error(50, 11);
    let weights = weight_sum_error(50, 12);
    let identical = identical_branch_error(50, 13);
    let (center, corner, edge) = ones_3x3_values();
    let exact = center == 1.0 && corner == 4.0 / 9.0 && edge == 6.0 / 9.0;
    let passed = block <= FUSION_TOLERANCE && weights <= FUSION_TOLERANCE && identical <= FUSION_TOLERANCE && exact;
    Check::new(
        passed,
        format!(
            "block_average err {block:.2e}, weight sum err {weights:.2e}, identical-branch err {identical:.2e}, \
             3x3 ones center {center} corner {corner} edge {edge}"
        ),
    )
}

pub fn random_box(rng: &mut Pcg64, extent: u32) -> BBox {
    let (x0, y0) = (rng.random_range(0..extent), rng.random_range(0..extent));
    let x1 = rng.random_range(x0 + 1..=extent);
    let y1 = rng.random_range(y0 + 1..=extent);
    BBox::new(x0, y0, x1, y1).unwrap()
}

/// IoU from counting grid pixels covered by one or both boxes.
pub fn pixel_iou(a: &BBox, b: &BBox, extent: u32) -> f64 {
    let (mut inter, mut union) = (0u64, 0u64);
    for y in 0..extent {
        for x in 0..extent {
            let (ia, ib) = (a.contains(x, y), b.contains(x, y));
            inter += u64::from(ia && ib);
            union += u64::from(ia || ib);
        }
    }
    inter as f64 / union as f64
}

pub fn geometry_check() -> Check {
    const EXTENT: u32 = 24;
    let mut rng = Pcg64::seed_from_u64(21);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (a, b) = (random_box(&mut rng, EXTENT), random_box(&mut rng, EXTENT));
        if iou(&a, &b) != pixel_iou(&a, &b, EXTENT) {
            mismatches += 1;
        }
    }
    let third = iou(&BBox::new(0, 0, 10, 10).unwrap(), &BBox::new(5, 0, 15, 10).unwrap());
    let third_err = (third - 1.0 / 3.0).abs();
    Check::new(
        mismatches == 0 && third_err <= 1e-6,
        format!("{mismatches}/1000 pixel-count mismatches, (0,0,10,10)/(5,0,15,10) iou {third:.9}"),
    )
}

fn argmin(t: &Tensor) -> usize {
    t.data()
        .iter()
        .enumerate()
        .fold((0, f32::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) })
        .0
}

/// Random normalized map whose maximum is attained exactly once.
pub fn unique_max_map(rng: &mut Pcg64) -> CamMap {
    loop {
        let (h, w) = (rng.random_range(2..=16), rng.random_range(2..=16));
        let raw = Tensor::from_fn(&[h, w], |_| rng.random_range(-2.0f32..2.0));
        let m = normalize_minmax(&CamMap::new(raw).unwrap()).unwrap();
        if m.values().data().iter().filter(|&&v| v == 1.0).count() == 1 {
            return m;
        }
    }
}

pub fn ccam_check() -> Check {
    let mut rng = Pcg64::seed_from_u64(31);
    let mut worst = 0.0f64;
    let mut argmax_mismatch = 0;
    for _ in 0..100 {
        let m = unique_max_map(&mut rng);
        let c = complement(&m).unwrap();
        let back = complement(&c).unwrap();
        for (a, b) in back.values().data().iter().zip(m.values().data()) {
            worst = worst.max((a - b).abs() as f64);
        }
        if m.values().argmax() != argmin(c.values()) {
            argmax_mismatch += 1;
        }
    }
    Check::new(
        worst <= 1e-7 && argmax_mismatch == 0,
        format!("involution err {worst:.2e}, argmax/argmin mismatches {argmax_mismatch}/100"),
    )
}

pub const OVERFIT_STEPS: usize = 50;
pub const OVERFIT_LR: f32 = 0.01;

#[derive(Debug)]
pub struct Overfit {
    pub initial: f64,
    pub last: f64,
    pub seconds: f64,
}

fn sample_loss(params: &hclnet::ModelParams, config: &ModelConfig, sample: &hclnet::Sample) -> f64 {
    let out = forward(params, config, &sample.image, Guide::Class(sample.label), GuidanceMode::Complementary).unwrap();
    dual_branch_loss_value(&out.logits_a, &out.logits_b, sample.label).unwrap()
}

/// Trains the default model on one generated sample for
/// [`OVERFIT_STEPS`] single-sample steps.
pub fn overfit_one_sample(max_grad_norm: Option<f32>) -> Overfit {
    let start = Instant::now();
    let data = DatasetConfig {
        train_samples: 1,
        test_samples: 1,
        ..DatasetConfig::default()
    };
    let sample = Generator::new(data).unwrap().split(Split::Train);
    let config = ModelConfig::default();
    let mut params = init_model(&config).unwrap();
    let initial = sample_loss(&params, &config, &sample[0]);
    let tc = TrainConfig {
        epochs: OVERFIT_STEPS,
        batch_size: 1,
        learning_rate: OVERFIT_LR,
        max_grad_norm,
        ..TrainConfig::default()
    };
    train(&mut params, &config, &sample, &tc).unwrap();
    let last = sample_loss(&params, &config, &sample[0]);
    Overfit {
        initial,
        last,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn overfit_check() -> Check {
    let run = overfit_one_sample(None);
    let drop = 1.0 - run.last / run.initial;
    Check::new(
        drop >= 0.5 && run.seconds < 30.0,
        format!(
            "loss {:.4} -> {:.4} ({:.1}% drop) in {:.2}s",
            run.initial,
            run.last,
            100.0 * drop,
            run.seconds
        ),
    )
}
