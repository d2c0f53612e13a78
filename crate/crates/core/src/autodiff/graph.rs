//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every primitive appends one node holding its output value and whatever
//! it needs for the backward rule. Nodes are appended in evaluation order,
//! so the node list is already topologically sorted and `backward` simply
//! walks it in reverse.
//!
//! Each primitive also adds its cost to a FLOP counter. The rates are:
//!
//! | op                               | FLOPs                     |
//! |----------------------------------|---------------------------|
//! | `matmul` (m×k · k×n)             | 2·m·k·n                   |
//! | `add`, `sub`, `mul`, `scale`     | 1 per output element      |
//! | `relu`, `tanh`, `sigmoid`        | 1 per element             |
//! | `softmax`                        | 4 per element             |
//! | `layer_norm`                     | 7 per element             |
//! | `broadcast_add_bias`             | 1 per output element      |
//! | `mean`, `max`, `sum`             | 1 per input element       |
//! | `concat`, `slice`, `transpose`   | 0                         |

use std::ops::Range;

use super::Tensor;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const SOFTMAX_FLOPS_PER_ELEMENT: u64 = 4;
pub const LAYER_NORM_FLOPS_PER_ELEMENT: u64 = 7;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        ranges: Vec<Range<usize>>,
    },
    Mean {
        x: Var,
        axis: usize,
    },
    Max {
        x: Var,
        axis: usize,
        argmax: Vec<usize>,
    },
    Transpose(Var),
    AddBias(Var, Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `∂loss/∂var`, or `None` when `var` does not influence the loss or
    /// does not require gradients.
    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

/// Splits a shape around `axis` into (outer, axis length, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    flops: u64,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// FLOPs executed by every primitive recorded so far.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape matches value")
    }

    /// Bytes held by node values, a proxy for activation memory.
    pub fn value_bytes(&self) -> usize {
        self.nodes.iter().map(|n| n.value.len() * 8).sum()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a tensor as a leaf. Gradients are tracked if the tensor
    /// requests them.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.values().to_vec(), t.requires_grad, Op::Leaf)
    }

    /// Records a constant (no gradient) leaf.
    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::shape("constant", &shape, &[values.len()]));
        }
        Ok(self.push(shape, values, false, Op::Leaf))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                for (o, y) in row.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                    *o += x * y;
                }
            }
        }
        self.flops += 2 * (m * k * n) as u64;
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, rg, Op::MatMul(a, b)))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| f(*x, *y)).collect();
        self.flops += out.len() as u64;
        Ok(out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, rg, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, rg, Op::Mul(a, b)))
    }

    /// Multiplies by a scalar constant.
    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out: Vec<f64> = self.value(x).iter().map(|v| v * s).collect();
        self.flops += out.len() as u64;
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, rg, Op::Scale(x, s))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self.value(x).iter().map(|&v| f(v)).collect();
        self.flops += out.len() as u64;
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, rg, op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            },
            Op::Sigmoid(x),
        )
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(x).len() {
            return Err(Error::shape(op, self.shape(x), &[axis]));
        }
        Ok(())
    }

    /// Softmax along `axis`, with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let (outer, n, inner) = split_axis(self.shape(x), axis);
        let xv = self.value(x);
        let mut out = vec![0.0; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * n + k) * inner + i;
                let max = (0..n).map(|k| xv[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for k in 0..n {
                    let e = (xv[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    sum += e;
                }
                for k in 0..n {
                    out[idx(k)] /= sum;
                }
            }
        }
        self.flops += SOFTMAX_FLOPS_PER_ELEMENT * out.len() as u64;
        let rg = self.rg(&[x]);
        Ok(self.push(self.shape(x).to_vec(), out, rg, Op::Softmax { x, axis }))
    }

    /// Normalises over the last axis, then applies per-feature gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().ok_or_else(|| Error::shape("layer_norm", &shape, &[]))?;
        if self.shape(gain) != [n] || self.shape(bias) != [n] {
            return Err(Error::shape("layer_norm", &shape, self.shape(gain)));
        }
        let rows = self.value(x).len() / n;
        let mut xhat = vec![0.0; rows * n];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * n];
        let (xv, g, b) = (self.value(x), self.value(gain), self.value(bias));
        for r in 0..rows {
            let row = &xv[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        self.flops += LAYER_NORM_FLOPS_PER_ELEMENT * out.len() as u64;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            shape,
            out,
            rg,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in xs {
                let n = self.shape(v)[axis];
                let block = n * inner;
                out.extend_from_slice(&self.value(v)[o * block..(o + 1) * block]);
            }
        }
        let rg = self.rg(xs);
        Ok(self.push(
            shape,
            out,
            rg,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
        ))
    }

    /// Sub-block selected by one range per axis.
    pub fn slice(&mut self, x: Var, ranges: &[Range<usize>]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if ranges.len() != shape.len()
            || ranges.iter().zip(&shape).any(|(r, &n)| r.start > r.end || r.end > n)
        {
            let ends: Vec<usize> = ranges.iter().map(|r| r.end).collect();
            return Err(Error::shape("slice", &shape, &ends));
        }
        let out_shape: Vec<usize> = ranges.iter().map(|r| r.end - r.start).collect();
        let out: Vec<f64> = slice_indices(&shape, ranges)
            .into_iter()
            .map(|i| self.value(x)[i])
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(
            out_shape,
            out,
            rg,
            Op::Slice {
                x,
                ranges: ranges.to_vec(),
            },
        ))
    }

    fn reduce_shape(&self, x: Var, axis: usize) -> Vec<usize> {
        let mut s = self.shape(x).to_vec();
        s.remove(axis);
        if s.is_empty() {
            s.push(1);
        }
        s
    }

    /// Mean along `axis`; the axis is removed.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("mean", x, axis)?;
        let (outer, n, inner) = split_axis(self.shape(x), axis);
        let xv = self.value(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                out[o * inner + i] = (0..n).map(|k| xv[(o * n + k) * inner + i]).sum::<f64>() / n as f64;
            }
        }
        self.flops += xv.len() as u64;
        let shape = self.reduce_shape(x, axis);
        let rg = self.rg(&[x]);
        Ok(self.push(shape, out, rg, Op::Mean { x, axis }))
    }

    /// Max along `axis`; ties resolve to the first index.
    pub fn max(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("max", x, axis)?;
        let (outer, n, inner) = split_axis(self.shape(x), axis);
        let xv = self.value(x);
        let mut out = vec![0.0; outer * inner];
        let mut argmax = vec![0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = 0;
                for k in 1..n {
                    if xv[(o * n + k) * inner + i] > xv[(o * n + best) * inner + i] {
                        best = k;
                    }
                }
                out[o * inner + i] = xv[(o * n + best) * inner + i];
                argmax[o * inner + i] = best;
            }
        }
        self.flops += xv.len() as u64;
        let shape = self.reduce_shape(x, axis);
        let rg = self.rg(&[x]);
        Ok(self.push(shape, out, rg, Op::Max { x, axis, argmax }))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::shape("transpose", s, &[2]));
        }
        let (r, c) = (s[0], s[1]);
        let out = transpose_values(self.value(x), r, c);
        let rg = self.rg(&[x]);
        Ok(self.push(vec![c, r], out, rg, Op::Transpose(x)))
    }

    /// Adds a vector over the last axis of `x`.
    pub fn broadcast_add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let s = self.shape(x);
        let n = s.last().copied().unwrap_or(0);
        if self.shape(b) != [n] {
            return Err(Error::shape("broadcast_add_bias", s, self.shape(b)));
        }
        let bv = self.value(b);
        let out: Vec<f64> = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + bv[i % n])
            .collect();
        self.flops += out.len() as u64;
        let rg = self.rg(&[x, b]);
        Ok(self.push(self.shape(x).to_vec(), out, rg, Op::AddBias(x, b)))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.flops += self.value(x).len() as u64;
        let rg = self.rg(&[x]);
        self.push(vec![1], vec![s], rg, Op::Sum(x))
    }

    /// Reverse sweep from a single-element `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let n = self.nodes[loss.0].value.len();
        if n != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        // Only nodes that require gradients get one.
        for (id, g) in grads.iter_mut().enumerate() {
            if !self.nodes[id].requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, contribution: impl FnOnce() -> Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let c = contribution();
        match &mut grads[v.0] {
            Some(g) => g.iter_mut().zip(&c).for_each(|(a, b)| *a += b),
            slot => *slot = Some(c),
        }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, || {
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            ga[i * k + p] = (0..n).map(|j| g[i * n + j] * bv[p * n + j]).sum();
                        }
                    }
                    ga
                });
                self.accumulate(grads, *b, || {
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let x = av[i * k + p];
                            for j in 0..n {
                                gb[p * n + j] += x * g[i * n + j];
                            }
                        }
                    }
                    gb
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, || g.to_vec());
                self.accumulate(grads, *b, || g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, || g.to_vec());
                self.accumulate(grads, *b, || g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, || g.iter().zip(bv).map(|(g, b)| g * b).collect());
                self.accumulate(grads, *b, || g.iter().zip(av).map(|(g, a)| g * a).collect());
            }
            Op::Scale(x, s) => self.accumulate(grads, *x, || g.iter().map(|v| v * s).collect()),
            Op::Relu(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, || {
                    g.iter().zip(xv).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect()
                })
            }
            Op::Tanh(x) => {
                self.accumulate(grads, *x, || g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect())
            }
            Op::Sigmoid(x) => {
                self.accumulate(grads, *x, || g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect())
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = split_axis(&node.shape, *axis);
                self.accumulate(grads, *x, || {
                    let mut gx = vec![0.0; y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |k: usize| (o * n + k) * inner + i;
                            let dot: f64 = (0..n).map(|k| g[idx(k)] * y[idx(k)]).sum();
                            for k in 0..n {
                                gx[idx(k)] = y[idx(k)] * (g[idx(k)] - dot);
                            }
                        }
                    }
                    gx
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let n = *node.shape.last().unwrap();
                let rows = y.len() / n;
                let gv = self.value(*gain);
                self.accumulate(grads, *gain, || {
                    let mut out = vec![0.0; n];
                    for r in 0..rows {
                        for j in 0..n {
                            out[j] += g[r * n + j] * xhat[r * n + j];
                        }
                    }
                    out
                });
                self.accumulate(grads, *bias, || {
                    let mut out = vec![0.0; n];
                    for r in 0..rows {
                        for j in 0..n {
                            out[j] += g[r * n + j];
                        }
                    }
                    out
                });
                self.accumulate(grads, *x, || {
                    let mut out = vec![0.0; rows * n];
                    let nf = n as f64;
                    for r in 0..rows {
                        let dxhat: Vec<f64> = (0..n).map(|j| g[r * n + j] * gv[j]).collect();
                        let sum: f64 = dxhat.iter().sum();
                        let dot: f64 = (0..n).map(|j| dxhat[j] * xhat[r * n + j]).sum();
                        for j in 0..n {
                            out[r * n + j] =
                                inv_std[r] / nf * (nf * dxhat[j] - sum - xhat[r * n + j] * dot);
                        }
                    }
                    out
                });
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = split_axis(&node.shape, *axis);
                let mut offset = 0;
                for &v in xs {
                    let n = self.shape(v)[*axis];
                    self.accumulate(grads, v, || {
                        let mut out = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            out.extend_from_slice(&g[start..start + n * inner]);
                        }
                        out
                    });
                    offset += n;
                }
            }
            Op::Slice { x, ranges } => {
                let shape = self.shape(*x);
                self.accumulate(grads, *x, || {
                    let mut out = vec![0.0; shape.iter().product()];
                    for (gi, i) in slice_indices(shape, ranges).into_iter().enumerate() {
                        out[i] += g[gi];
                    }
                    out
                });
            }
            Op::Mean { x, axis } => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                self.accumulate(grads, *x, || {
                    let mut out = vec![0.0; outer * n * inner];
                    for o in 0..outer {
                        for k in 0..n {
                            for i in 0..inner {
                                out[(o * n + k) * inner + i] = g[o * inner + i] / n as f64;
                            }
                        }
                    }
                    out
                });
            }
            Op::Max { x, axis, argmax } => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                self.accumulate(grads, *x, || {
                    let mut out = vec![0.0; outer * n * inner];
                    for o in 0..outer {
                        for i in 0..inner {
                            let k = argmax[o * inner + i];
                            out[(o * n + k) * inner + i] += g[o * inner + i];
                        }
                    }
                    out
                });
            }
            Op::Transpose(x) => {
                let (r, c) = (node.shape[0], node.shape[1]);
                self.accumulate(grads, *x, || transpose_values(g, r, c));
            }
            Op::AddBias(x, b) => {
                let n = self.shape(*b)[0];
                self.accumulate(grads, *x, || g.to_vec());
                self.accumulate(grads, *b, || {
                    let mut out = vec![0.0; n];
                    for (i, v) in g.iter().enumerate() {
                        out[i % n] += v;
                    }
                    out
                });
            }
            Op::Sum(x) => {
                let len = self.value(*x).len();
                self.accumulate(grads, *x, || vec![g[0]; len]);
            }
        }
    }
}

fn transpose_values(v: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = v[i * cols + j];
        }
    }
    out
}

/// Flat source indices of a rectangular sub-block, in row-major order.
fn slice_indices(shape: &[usize], ranges: &[Range<usize>]) -> Vec<usize> {
    let st = strides(shape);
    let mut idx = vec![0usize];
    for (r, &stride) in ranges.iter().zip(&st) {
        idx = idx
            .iter()
            .flat_map(|&base| r.clone().map(move |k| base + k * stride))
            .collect();
    }
    idx
}
