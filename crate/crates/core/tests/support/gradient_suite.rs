//! Finite-difference cases for every differentiable tape op.

use hclnet::model::dual_branch_loss;
use hclnet::tensor::gradcheck::check_gradients;
use hclnet::tensor::{conv2d, maxpool2d, relu, Tape, Tensor, Var};
use hclnet::Result;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

pub const STEP: f32 = 1e-3;
pub const TOLERANCE: f64 = 1e-3;
pub const SHAPES_PER_OP: usize = 5;

/// Worst relative error of one op across its seeded shapes.
#[derive(Debug)]
pub struct OpResult {
    pub op: &'static str,
    pub cases: usize,
    pub worst: f64,
}

impl OpResult {
    pub fn passed(&self) -> bool {
        self.cases >= SHAPES_PER_OP && self.worst < TOLERANCE
    }
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;
type Case = (Vec<Tensor>, Build);

fn uniform(rng: &mut Pcg64, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values bounded away from zero so a step never crosses the relu kink.
fn off_kink(rng: &mut Pcg64, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05f32..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Distinct values spaced 0.01 apart so pooling windows have clear winners.
fn spaced(rng: &mut Pcg64, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f32> = (0..n).map(|i| i as f32 * 0.01 - n as f32 * 0.005).collect();
    v.shuffle(rng);
    Tensor::new(shape.to_vec(), v).unwrap()
}

fn run(
    op: &'static str,
    cases: Vec<Case>,
) -> OpResult {
    let mut worst = 0.0f64;
    let n = cases.len();
    for (seed, (inputs, build)) in cases.into_iter().enumerate() {
        let report = check_gradients(&inputs, STEP, seed as u64 + 100, build).unwrap();
        for check in &report {
            worst = worst.max(check.relative_error());
        }
    }
    OpResult { op, cases: n, worst }
}

fn conv_cases(rng: &mut Pcg64) -> Vec<Case> {
    // (cin, h, w, cout, k, stride, pad)
    let geoms = [
        (1, 5, 5, 2, 3, 1, 1),
        (2, 6, 6, 3, 3, 2, 1),
        (3, 4, 7, 2, 1, 1, 0),
        (2, 8, 8, 4, 3, 1, 0),
        (4, 7, 5, 1, 3, 2, 0),
        (3, 6, 6, 2, 1, 2, 1),
    ];
    geoms
        .iter()
        .map(|&(cin, h, w, cout, k, stride, pad)| {
            let inputs = vec![
                uniform(rng, &[cin, h, w], -1.0, 1.0),
                uniform(rng, &[cout, cin, k, k], -1.0, 1.0),
                uniform(rng, &[cout], -1.0, 1.0),
            ];
            let build: Build =
                Box::new(move |t, v| t.conv2d(v[0], v[1], v[2], stride, pad));
            (inputs, build)
        })
        .collect()
}

fn shapes3() -> [[usize; 3]; 5] {
    [[1, 2, 2], [2, 4, 4], [3, 4, 6], [4, 8, 8], [2, 6, 2]]
}

fn unary(rng: &mut Pcg64, gen: fn(&mut Pcg64, &[usize]) -> Tensor, f: fn(&mut Tape, Var) -> Result<Var>) -> Vec<Case> {
    shapes3()
        .iter()
        .map(|s| {
            let build: Build = Box::new(move |t, v| f(t, v[0]));
            (vec![gen(rng, s)], build)
        })
        .collect()
}

fn any(rng: &mut Pcg64, shape: &[usize]) -> Tensor {
    uniform(rng, shape, -1.0, 1.0)
}

fn mask_cases(rng: &mut Pcg64) -> Vec<Case> {
    shapes3()
        .iter()
        .map(|s| {
            let mask = uniform(rng, &s[1..], 0.0, 1.0);
            let build: Build =
                Box::new(move |t, v| t.mask_channels(v[0], &mask));
            (vec![any(rng, s)], build)
        })
        .collect()
}

fn ce_cases(rng: &mut Pcg64) -> Vec<Case> {
    [2usize, 3, 4, 7, 10]
        .iter()
        .map(|&c| {
            let label = rng.random_range(0..c);
            let build: Build =
                Box::new(move |t, v| t.softmax_cross_entropy(v[0], label));
            (vec![uniform(rng, &[c], -3.0, 3.0)], build)
        })
        .collect()
}

/// Logits stay in [-1, 1] so the f32 loss keeps enough precision for a
/// 1e-3 central difference.
fn dual_loss_cases(rng: &mut Pcg64) -> Vec<Case> {
    [2usize, 3, 4, 6, 9]
        .iter()
        .map(|&c| {
            let label = rng.random_range(0..c);
            let build: Build =
                Box::new(move |t, v| dual_branch_loss(t, v[0], v[1], label));
            (vec![any(rng, &[c]), any(rng, &[c])], build)
        })
        .collect()
}

fn binary(rng: &mut Pcg64, f: fn(&mut Tape, Var, Var) -> Result<Var>) -> Vec<Case> {
    shapes3()
        .iter()
        .map(|s| {
            let build: Build = Box::new(move |t, v| f(t, v[0], v[1]));
            (vec![any(rng, s), any(rng, s)], build)
        })
        .collect()
}

/// Smallest distance of a pre-activation to the relu kink, and of each
/// pooling window's winner to its runner-up.
fn margins(pre: &Tensor) -> f32 {
    let kink = pre.data().iter().fold(f32::INFINITY, |m, v| m.min(v.abs()));
    let act = relu(pre);
    let (c, h, w) = (act.shape()[0], act.shape()[1], act.shape()[2]);
    let mut gap = f32::INFINITY;
    for ch in 0..c {
        for y in (0..h).step_by(2) {
            for x in (0..w).step_by(2) {
                let mut win: Vec<f32> = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|(dy, dx)| act.data()[(ch * h + y + dy) * w + x + dx])
                    .collect();
                win.sort_by(|a, b| b.total_cmp(a));
                // Ties among zeros are harmless: none of them carry gradient.
                if win[0] > 0.0 {
                    gap = gap.min(win[0] - win[1]);
                }
            }
        }
    }
    kink.min(gap)
}

/// conv → relu → maxpool → two conv heads → GAP → combined logits. Inputs are
/// redrawn until no step can cross a kink or flip a pooling winner.
fn composite_cases(rng: &mut Pcg64) -> Vec<Case> {
    let dims = [(1, 4, 4, 2, 2), (2, 4, 6, 3, 3), (3, 6, 4, 2, 4), (2, 8, 8, 3, 3), (1, 6, 6, 4, 2)];
    dims.iter()
        .map(|&(cin, h, w, mid, classes)| loop {
            let x = any(rng, &[cin, h, w]);
            let k1 = any(rng, &[mid, cin, 3, 3]);
            let b1 = any(rng, &[mid]);
            let ka = any(rng, &[classes, mid, 3, 3]);
            let kb = any(rng, &[classes, mid, 1, 1]);
            let bias = any(rng, &[classes]);
            let pre = conv2d(&x, &k1, &b1, 1, 1).unwrap();
            let pooled = maxpool2d(&relu(&pre)).unwrap();
            if margins(&pre) < 0.05 || pooled.data().iter().all(|&v| v == 0.0) {
                continue;
            }
            let build: Build = Box::new(move |t, v| {
                let h = t.conv2d(v[0], v[1], v[2], 1, 1)?;
                let h = t.relu(h);
                let h = t.maxpool2d(h)?;
                let sa = t.conv2d(h, v[3], v[5], 1, 1)?;
                let sb = t.conv2d(h, v[4], v[5], 1, 0)?;
                let sb = t.scale(sb, 0.5);
                let sa = t.add(sa, sb)?;
                let la = t.global_avg_pool(sa)?;
                let lb = t.global_avg_pool(sb)?;
                let lb = t.scale(lb, 2.0);
                t.add(la, lb)
            });
            break (vec![x, k1, b1, ka, kb, bias], build);
        })
        .collect()
}

/// Every op with its worst error over [`SHAPES_PER_OP`] or more shapes.
pub fn run_suite() -> Vec<OpResult> {
    let mut rng = Pcg64::seed_from_u64(2024);
    let rng = &mut rng;
    vec![
        run("conv2d", conv_cases(rng)),
        run("relu", unary(rng, off_kink, |t, x| Ok(t.relu(x)))),
        run("maxpool2d", unary(rng, spaced, |t, x| t.maxpool2d(x))),
        run("global_avg_pool", unary(rng, any, |t, x| t.global_avg_pool(x))),
        run("mask_channels", mask_cases(rng)),
        run("softmax_cross_entropy", ce_cases(rng)),
        run("add", binary(rng, |t, a, b| t.add(a, b))),
        run("mul", binary(rng, |t, a, b| t.mul(a, b))),
        run("sum", unary(rng, any, |t, x| Ok(t.sum(x)))),
        run("scale", unary(rng, any, |t, x| Ok(t.scale(x, -1.7)))),
        run("dual_branch_loss", dual_loss_cases(rng)),
        run("composite", composite_cases(rng)),
    ]
}

pub fn gradient_check() -> super::Check {
    let start = std::time::Instant::now();
    let results = run_suite();
    let seconds = start.elapsed().as_secs_f64();
    let bad: Vec<String> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{} ({} cases, {:.2e})", r.op, r.cases, r.worst))
        .collect();
    let worst = results.iter().map(|r| r.worst).fold(0.0, f64::max);
    let detail = if bad.is_empty() {
        format!("{} ops, worst rel err {worst:.2e}, {seconds:.2}s", results.len())
    } else {
        format!("failing: {}", bad.join(", "))
    };
    super::Check::new(bad.is_empty() && seconds < 60.0, detail)
}
