use super::kernels::{self, ConvGeometry};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geometry: ConvGeometry,
        cols: Vec<f32>,
    },
    Relu(Var),
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    /// Features scaled per pixel by a constant `[H, W]` map.
    MaskChannels {
        features: Var,
        mask: Tensor,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Scale(Var, f32),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations in execution order. Since every node is pushed after
/// its inputs, node order is a topological order of the graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`]: one gradient per grad-enabled node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn parameter(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let (x, k, b) = (self.value(input), self.value(kernel), self.value(bias));
        let geometry = ConvGeometry::new(x, k, b, stride, pad)?;
        let (out, cols) = kernels::conv2d_forward(x, k, b, &geometry);
        let rg = self.requires_grad(input) || self.requires_grad(kernel) || self.requires_grad(bias);
        // Without a gradient the column matrix is dead weight.
        let cols = if rg { cols } else { Vec::new() };
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geometry,
                cols,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = kernels::relu(self.value(x));
        let rg = self.requires_grad(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn maxpool2d(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = kernels::maxpool2d_with_argmax(self.value(input))?;
        let rg = self.requires_grad(input);
        Ok(self.push(out, Op::MaxPool { input, argmax }, rg))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let out = kernels::global_avg_pool(self.value(input))?;
        let rg = self.requires_grad(input);
        Ok(self.push(out, Op::GlobalAvgPool(input), rg))
    }

    /// `out[k, y, x] = features[k, y, x] * map[y, x]`. The map is a constant:
    /// no gradient flows into it.
    pub fn mask_channels(&mut self, features: Var, map: &Tensor) -> Result<Var> {
        let f = self.value(features);
        let (k, h, w) = f.dims3("broadcast_mul_channels")?;
        if map.shape() != [h, w] {
            return Err(Error::ShapeMismatch {
                op: "broadcast_mul_channels",
                left: f.shape().to_vec(),
                right: map.shape().to_vec(),
            });
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(k * plane);
        for chan in f.data().chunks(plane) {
            data.extend(chan.iter().zip(map.data()).map(|(&a, &m)| a * m));
        }
        let out = Tensor::from_parts(vec![k, h, w], data);
        let rg = self.requires_grad(features);
        Ok(self.push(
            out,
            Op::MaskChannels {
                features,
                mask: map.clone(),
            },
            rg,
        ))
    }

    /// `-log softmax(logits)[label]`, evaluated in `f64`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let l = self.value(logits);
        let [classes] = *l.shape() else {
            return Err(Error::InvalidShape {
                op: "softmax_cross_entropy",
                shape: l.shape().to_vec(),
                reason: "logits must be 1-d".into(),
            });
        };
        if label >= classes {
            return Err(Error::IndexOutOfRange {
                what: "label",
                index: label,
                bound: classes,
            });
        }
        let max = l.max() as f64;
        let shifted: Vec<f64> = l.data().iter().map(|&v| v as f64 - max).collect();
        let log_total = shifted.iter().map(|v| v.exp()).sum::<f64>().ln();
        let loss = log_total - shifted[label];
        let probs = shifted.iter().map(|v| (v - log_total).exp()).collect();
        let rg = self.requires_grad(logits);
        Ok(self.push(
            Tensor::scalar(loss as f32),
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_with(self.value(b), "add", |x, y| x + y)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_with(self.value(b), "mul", |x, y| x * y)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(total as f32), Op::Sum(x), rg)
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Var {
        let out = self.value(x).map(|v| v * factor);
        let rg = self.requires_grad(x);
        self.push(out, Op::Scale(x, factor), rg)
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        if root.requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => grads[idx] = Some(g),
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    geometry,
                    cols,
                } => {
                    let cg = kernels::conv2d_backward(&g, self.value(*kernel), cols, geometry);
                    self.accumulate(&mut grads, *input, cg.input);
                    self.accumulate(&mut grads, *kernel, cg.kernel);
                    self.accumulate(&mut grads, *bias, cg.bias);
                }
                Op::Relu(x) => {
                    let d = self
                        .value(*x)
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(&v, &dg)| if v > 0.0 { dg } else { 0.0 })
                        .collect();
                    self.accumulate(&mut grads, *x, d);
                }
                Op::MaxPool { input, argmax } => {
                    let mut d = vec![0.0f32; self.value(*input).len()];
                    for (&src, &dg) in argmax.iter().zip(&g) {
                        d[src] += dg;
                    }
                    self.accumulate(&mut grads, *input, d);
                }
                Op::GlobalAvgPool(x) => {
                    let xv = self.value(*x);
                    let plane = xv.len() / g.len().max(1);
                    let inv = 1.0 / plane as f32;
                    let d = g
                        .iter()
                        .flat_map(|&dg| std::iter::repeat_n(dg * inv, plane))
                        .collect();
                    self.accumulate(&mut grads, *x, d);
                }
                Op::MaskChannels { features, mask } => {
                    let plane = mask.len();
                    let d = g
                        .chunks(plane)
                        .flat_map(|chan| chan.iter().zip(mask.data()).map(|(&dg, &m)| dg * m))
                        .collect();
                    self.accumulate(&mut grads, *features, d);
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    label,
                    probs,
                } => {
                    let up = g[0] as f64;
                    let d = probs
                        .iter()
                        .enumerate()
                        .map(|(i, &p)| {
                            let onehot = if i == *label { 1.0 } else { 0.0 };
                            ((p - onehot) * up) as f32
                        })
                        .collect();
                    self.accumulate(&mut grads, *logits, d);
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, g.clone());
                    self.accumulate(&mut grads, *b, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    let da = g.iter().zip(bv).map(|(&dg, &y)| dg * y).collect();
                    let db = g.iter().zip(av).map(|(&dg, &x)| dg * x).collect();
                    self.accumulate(&mut grads, *a, da);
                    self.accumulate(&mut grads, *b, db);
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    self.accumulate(&mut grads, *x, vec![g[0]; n]);
                }
                Op::Scale(x, factor) => {
                    let d = g.iter().map(|&dg| dg * factor).collect();
                    self.accumulate(&mut grads, *x, d);
                }
            }
        }

        // Only leaves keep their gradient after the sweep; interior buffers
        // were consumed on the way down.
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| g.map(|g| Tensor::from_parts(node.value.shape().to_vec(), g)))
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f32>>], target: Var, delta: Vec<f32>) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        match &mut grads[target.0] {
            Some(existing) => existing.iter_mut().zip(&delta).for_each(|(e, d)| *e += d),
            slot @ None => *slot = Some(delta),
        }
    }
}
