//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every primitive evaluates eagerly and appends one entry to the [`Tape`].
//! Entries only ever reference earlier entries, so walking the tape backwards
//! from the seed visits each entry once in a valid reverse topological order.

mod gradcheck;
mod kernels;

pub use gradcheck::{finite_difference_check, GradCheck};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Probability floor applied before taking logarithms in the loss primitives.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    Dense {
        input: Var,
        weights: Var,
        bias: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Mean(Var),
    /// Gradient wrt the logits is stored at forward time.
    LogitLoss { logits: Var, grad: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// 2-D cross-correlation of a `C×H×W` input with `O×C×K×K` kernels plus
    /// a per-output-channel bias.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let x = self.value(input);
        let k = self.value(kernel);
        let b = self.value(bias);
        let geom = kernels::ConvGeometry::new(x.shape(), k.shape(), b.shape(), stride, padding)?;
        let out = kernels::conv2d_forward(&geom, x.data(), k.data(), b.data());
        let value = Tensor::new(vec![geom.out_channels, geom.out_h, geom.out_w], out)?;
        let rg = self.needs(&[input, kernel, bias]);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
            rg,
        ))
    }

    /// Affine map `weights · flatten(input) + bias` with `weights` of shape `M×N`.
    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weights);
        let b = self.value(bias);
        let (m, n) = match w.shape()[..] {
            [m, n] => (m, n),
            _ => return Err(Error::shape("dense weights", "2 dimensions", w.shape())),
        };
        if x.len() != n {
            return Err(Error::shape("dense input length", n, x.len()));
        }
        if b.shape() != [m] {
            return Err(Error::shape("dense bias", [m], b.shape()));
        }
        let xd = x.data();
        let out: Vec<T> = w
            .data()
            .chunks_exact(n)
            .zip(b.data())
            .map(|(row, &bias)| row.iter().zip(xd).fold(bias, |acc, (&w, &x)| acc + w * x))
            .collect();
        let value = Tensor::new(vec![m], out)?;
        let rg = self.needs(&[input, weights, bias]);
        Ok(self.push(value, Op::Dense { input, weights, bias }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.needs(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let rg = self.needs(&[x]);
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn binary(&mut self, a: Var, b: Var, context: &'static str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        va.same_shape(vb, context)?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.needs(&[x]);
        self.push(value, Op::Scale(x, factor), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum();
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let total: T = v.data().iter().copied().sum();
        let n = T::from_usize(v.len()).expect("length as float");
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(total / n), Op::Mean(x), rg)
    }

    /// `−log softmax(logits)[label]`, with the probability floored at
    /// [`PROB_FLOOR`]. Where the floor is active the loss is constant and its
    /// gradient is zero.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits);
        check_label(z, label)?;
        let lse = log_sum_exp(z.data(), None);
        let cap = T::lit(-PROB_FLOOR.ln());
        let raw = lse - z.data()[label];
        let grad = if raw >= cap {
            vec![T::zero(); z.len()]
        } else {
            let mut g: Vec<T> = z.data().iter().map(|&v| (v - lse).exp()).collect();
            g[label] -= T::one();
            g
        };
        let rg = self.needs(&[logits]);
        Ok(self.push(Tensor::scalar(raw.min(cap)), Op::LogitLoss { logits, grad }, rg))
    }

    /// `−log(1 − softmax(logits)[label])`: cross-entropy of the event "the
    /// prediction is anything but `label`". Minimizing it pushes the label's
    /// probability towards zero without saturating when that probability is
    /// close to one. The argument of the log is floored at [`PROB_FLOOR`].
    pub fn complement_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits);
        check_label(z, label)?;
        if z.len() < 2 {
            return Err(Error::InvalidLabel {
                label,
                categories: z.len(),
            });
        }
        let lse_all = log_sum_exp(z.data(), None);
        let lse_rest = log_sum_exp(z.data(), Some(label));
        let cap = T::lit(-PROB_FLOOR.ln());
        let raw = lse_all - lse_rest;
        let grad = if raw >= cap {
            vec![T::zero(); z.len()]
        } else {
            z.data()
                .iter()
                .enumerate()
                .map(|(j, &v)| {
                    let p = (v - lse_all).exp();
                    if j == label {
                        p
                    } else {
                        p - (v - lse_rest).exp()
                    }
                })
                .collect()
        };
        let rg = self.needs(&[logits]);
        Ok(self.push(Tensor::scalar(raw.min(cap)), Op::LogitLoss { logits, grad }, rg))
    }

    /// Reverse accumulation from a scalar `seed`.
    pub fn backward(&self, seed: Var) -> Result<Gradients<T>> {
        let seed_value = self.value(seed);
        if !seed_value.is_scalar() {
            return Err(Error::NonScalarSeed(seed_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[seed.0] = Some(Tensor::full(seed_value.shape().to_vec(), T::one()));

        for i in (0..=seed.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            if let Op::Leaf = node.op {
                grads[i] = Some(gout);
                continue;
            }
            self.propagate(node, &gout, &mut grads);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            leaves: self
                .nodes
                .iter()
                .map(|n| matches!(n.op, Op::Leaf) && n.requires_grad)
                .collect(),
        })
    }

    fn propagate(&self, node: &Node<T>, gout: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let g = gout.data();
        match node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            } => {
                let x = self.value(input);
                let k = self.value(kernel);
                let geom = kernels::ConvGeometry::new(x.shape(), k.shape(), self.value(bias).shape(), stride, padding)
                    .expect("validated at forward time");
                if self.nodes[input.0].requires_grad {
                    let dx = kernels::conv2d_backward_input(&geom, k.data(), g);
                    self.accumulate(grads, input, dx);
                }
                if self.nodes[kernel.0].requires_grad {
                    let dk = kernels::conv2d_backward_kernel(&geom, x.data(), g);
                    self.accumulate(grads, kernel, dk);
                }
                if self.nodes[bias.0].requires_grad {
                    let plane = geom.out_h * geom.out_w;
                    let db = g.chunks_exact(plane).map(|c| c.iter().copied().sum()).collect();
                    self.accumulate(grads, bias, db);
                }
            }
            Op::Dense { input, weights, bias } => {
                let x = self.value(input).data();
                let w = self.value(weights).data();
                let n = x.len();
                if self.nodes[input.0].requires_grad {
                    let mut dx = vec![T::zero(); n];
                    for (row, &gi) in w.chunks_exact(n).zip(g) {
                        for (d, &wv) in dx.iter_mut().zip(row) {
                            *d += wv * gi;
                        }
                    }
                    self.accumulate(grads, input, dx);
                }
                if self.nodes[weights.0].requires_grad {
                    let mut dw = Vec::with_capacity(w.len());
                    for &gi in g {
                        dw.extend(x.iter().map(|&xv| gi * xv));
                    }
                    self.accumulate(grads, weights, dw);
                }
                if self.nodes[bias.0].requires_grad {
                    self.accumulate(grads, bias, g.to_vec());
                }
            }
            Op::Relu(x) => {
                let xv = self.value(x).data();
                let dx = xv
                    .iter()
                    .zip(g)
                    .map(|(&v, &gi)| if v > T::zero() { gi } else { T::zero() })
                    .collect();
                self.accumulate(grads, x, dx);
            }
            Op::Sigmoid(x) => {
                let dx = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&s, &gi)| gi * s * (T::one() - s))
                    .collect();
                self.accumulate(grads, x, dx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, a, g.to_vec());
                self.accumulate(grads, b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, g.to_vec());
                self.accumulate(grads, b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                self.accumulate(grads, a, g.iter().zip(vb).map(|(&gi, &y)| gi * y).collect());
                self.accumulate(grads, b, g.iter().zip(va).map(|(&gi, &x)| gi * x).collect());
            }
            Op::Scale(x, factor) => {
                self.accumulate(grads, x, g.iter().map(|&v| v * factor).collect());
            }
            Op::Sum(x) => {
                let n = self.value(x).len();
                self.accumulate(grads, x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(x).len();
                let share = g[0] / T::from_usize(n).expect("length as float");
                self.accumulate(grads, x, vec![share; n]);
            }
            Op::LogitLoss { logits, ref grad } => {
                self.accumulate(grads, logits, grad.iter().map(|&v| v * g[0]).collect());
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], var: Var, delta: Vec<T>) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta) {
                    *e += d;
                }
            }
            slot @ None => {
                let shape = self.nodes[var.0].value.shape().to_vec();
                *slot = Some(Tensor::new(shape, delta).expect("gradient matches operand shape"));
            }
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T: Real = f32> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
    leaves: Vec<bool>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the seed with respect to `var`. Leaves the seed does not
    /// depend on get an all-zero gradient of their own shape.
    pub fn wrt(&self, var: Var) -> Tensor<T> {
        self.grads[var.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[var.0].clone()))
    }

    /// Moves the gradient out, avoiding a copy.
    pub fn take(&mut self, var: Var) -> Tensor<T> {
        self.grads[var.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[var.0].clone()))
    }

    /// `(leaf, gradient)` for every differentiable leaf on the tape.
    pub fn leaves(&self) -> impl Iterator<Item = (Var, Tensor<T>)> + '_ {
        self.leaves
            .iter()
            .enumerate()
            .filter(|(_, &is_leaf)| is_leaf)
            .map(|(i, _)| (Var(i), self.wrt(Var(i))))
    }
}

fn check_label<T: Real>(logits: &Tensor<T>, label: usize) -> Result<()> {
    if label >= logits.len() {
        return Err(Error::InvalidLabel {
            label,
            categories: logits.len(),
        });
    }
    Ok(())
}

fn log_sum_exp<T: Real>(values: &[T], skip: Option<usize>) -> T {
    let kept = || values.iter().enumerate().filter(move |(i, _)| Some(*i) != skip).map(|(_, &v)| v);
    let max = kept().fold(T::neg_infinity(), T::max);
    let total: T = kept().map(|v| (v - max).exp()).sum();
    max + total.ln()
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable softmax of a logit vector.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let lse = log_sum_exp(logits.data(), None);
    logits.map(|v| (v - lse).exp())
}
