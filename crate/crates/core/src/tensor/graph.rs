use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use super::{broadcast_index_map, broadcast_shape, Tensor};
use crate::math;
use crate::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryOp {
    Exp,
    Log,
    Sigmoid,
    Relu,
    Square,
    Neg,
    Scale(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary {
        op: BinaryOp,
        a: Var,
        b: Var,
        // linear index into each operand per output element; None when the
        // operand already has the output shape
        a_map: Option<Vec<usize>>,
        b_map: Option<Vec<usize>>,
    },
    Unary(UnaryOp, Var),
    Sum(Var),
    MeanLastAxis(Var),
    Reshape(Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    Conv1d {
        input: Var,
        kernel: Var,
        stride: usize,
        padding: usize,
    },
    Softmax {
        x: Var,
        mask: Option<Vec<bool>>,
    },
    LogSoftmax {
        x: Var,
        mask: Option<Vec<bool>>,
        probs: Vec<f64>,
    },
    NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation tape. Nodes are appended in execution order and replayed in
/// reverse by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    // accumulated gradients of requires-grad leaves, indexed by node
    leaf_grads: Vec<Option<Vec<f64>>>,
}

const NORM_EPS: f64 = 1e-12;

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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Registers a leaf that does not receive gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Registers a trainable leaf.
    pub fn parameter(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a trainable leaf, if `backward` has reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads[v.0].as_deref()
    }

    /// Clears accumulated leaf gradients.
    pub fn zero_grad(&mut self) {
        for g in &mut self.leaf_grads {
            *g = None;
        }
    }

    /// Activation pattern of every ReLU on the tape (true where the input is positive).
    ///
    /// Two evaluations with equal patterns lie in the same linear region of all
    /// rectifiers, which finite-difference checks use to detect kink crossings.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for n in &self.nodes {
            if let Op::Unary(UnaryOp::Relu, x) = n.op {
                out.extend(self.nodes[x.0].value.data().iter().map(|&v| v > 0.0));
            }
        }
        out
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let name = match op {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
        };
        let out_shape = broadcast_shape(name, self.shape(a), self.shape(b))?;
        if op == BinaryOp::Div && self.value(b).data().contains(&0.0) {
            return Err(Error::Domain {
                op: "div",
                detail: "division by zero".to_string(),
            });
        }
        let a_map = (self.shape(a) != out_shape.as_slice())
            .then(|| broadcast_index_map(self.shape(a), &out_shape));
        let b_map = (self.shape(b) != out_shape.as_slice())
            .then(|| broadcast_index_map(self.shape(b), &out_shape));
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let n: usize = out_shape.iter().product();
        let f = |x: f64, y: f64| match op {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
            BinaryOp::Div => x / y,
        };
        let data: Vec<f64> = (0..n)
            .map(|i| {
                let ia = a_map.as_ref().map_or(i, |m| m[i]);
                let ib = b_map.as_ref().map_or(i, |m| m[i]);
                f(av[ia], bv[ib])
            })
            .collect();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(
            Tensor::new(out_shape, data)?,
            Op::Binary {
                op,
                a,
                b,
                a_map,
                b_map,
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn unary(&mut self, op: UnaryOp, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if op == UnaryOp::Log {
            if let Some(bad) = xv.data().iter().find(|&&v| v <= 0.0) {
                return Err(Error::Domain {
                    op: "log",
                    detail: format!("nonpositive input {bad}"),
                });
            }
        }
        let data: Vec<f64> = xv
            .data()
            .iter()
            .map(|&v| match op {
                UnaryOp::Exp => math::exp(v),
                UnaryOp::Log => math::ln(v),
                UnaryOp::Sigmoid => math::sigmoid(v),
                UnaryOp::Relu => v.max(0.0),
                UnaryOp::Square => v * v,
                UnaryOp::Neg => -v,
                UnaryOp::Scale(k) => k * v,
            })
            .collect();
        let shape = xv.shape().to_vec();
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::Unary(op, x), rg))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Sigmoid, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Relu, x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Square, x)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Neg, x)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        self.unary(UnaryOp::Scale(k), x)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(Error::Contract("mean of empty tensor".to_string()));
        }
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Mean over the last axis: `[.., L] -> [..]`.
    pub fn mean_last_axis(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let Some((&l, head)) = shape.split_last() else {
            return Err(Error::Contract("mean_last_axis of a scalar".to_string()));
        };
        if l == 0 {
            return Err(Error::Contract("mean_last_axis over empty axis".to_string()));
        }
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks(l)
            .map(|c| c.iter().sum::<f64>() / l as f64)
            .collect();
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::new(head.to_vec(), data)?, Op::MeanLastAxis(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let rg = self.requires_grad(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::Dimension {
                op: "transpose",
                left: s,
                right: vec![],
            });
        }
        let (m, n) = (s[0], s[1]);
        let v = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = v[i * n + j];
            }
        }
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Transpose(x), rg))
    }

    /// Stacks 2-D tensors with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Contract("concat_rows of nothing".to_string()));
        };
        let cols = self.shape(first).get(1).copied().unwrap_or(0);
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[1] != cols {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    left: self.shape(first).to_vec(),
                    right: s.to_vec(),
                });
            }
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let rg = self.any_grad(parts);
        Ok(self.push(
            Tensor::new(vec![rows, cols], data)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    /// 1-D cross-correlation of `[B, Cin, L]` with kernels `[Cout, Cin, K]`.
    pub fn conv1d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if si.len() != 3 || sk.len() != 3 || si[1] != sk[1] {
            return Err(Error::Dimension {
                op: "conv1d",
                left: si,
                right: sk,
            });
        }
        if stride == 0 {
            return Err(Error::Contract("conv1d stride must be positive".to_string()));
        }
        let geo = ConvGeometry::new(&si, &sk, stride, padding)?;
        let out = geo.forward(self.value(input).data(), self.value(kernel).data());
        let rg = self.any_grad(&[input, kernel]);
        Ok(self.push(
            Tensor::new(vec![geo.batch, geo.cout, geo.lout], out)?,
            Op::Conv1d {
                input,
                kernel,
                stride,
                padding,
            },
            rg,
        ))
    }

    /// Row-wise softmax of a 2-D tensor.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.softmax_impl(x, None, false)
    }

    /// Row-wise softmax over the entries where `include` is true; excluded entries are 0.
    pub fn masked_softmax_rows(&mut self, x: Var, include: &[bool]) -> Result<Var> {
        self.softmax_impl(x, Some(include.to_vec()), false)
    }

    /// Row-wise log-softmax of a 2-D tensor.
    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.softmax_impl(x, None, true)
    }

    /// Row-wise log-softmax over included entries; excluded entries are 0.
    pub fn masked_log_softmax_rows(&mut self, x: Var, include: &[bool]) -> Result<Var> {
        self.softmax_impl(x, Some(include.to_vec()), true)
    }

    fn softmax_impl(&mut self, x: Var, mask: Option<Vec<bool>>, log: bool) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::Dimension {
                op: "softmax_rows",
                left: s,
                right: vec![],
            });
        }
        if let Some(m) = &mask {
            if m.len() != s[0] * s[1] {
                return Err(Error::Dimension {
                    op: "softmax_rows mask",
                    left: s,
                    right: vec![m.len()],
                });
            }
        }
        let v = self.value(x);
        if !v.is_finite() {
            return Err(Error::Domain {
                op: "softmax_rows",
                detail: "non-finite input".to_string(),
            });
        }
        let (probs, logp) = softmax_raw(v.data(), s[0], s[1], mask.as_deref());
        let rg = self.requires_grad(x);
        let shape = s.clone();
        if log {
            Ok(self.push(
                Tensor::new(shape, logp)?,
                Op::LogSoftmax { x, mask, probs },
                rg,
            ))
        } else {
            Ok(self.push(Tensor::new(shape, probs)?, Op::Softmax { x, mask }, rg))
        }
    }

    /// Divides each row of a 2-D tensor by its Euclidean norm.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::Dimension {
                op: "normalize_rows",
                left: s,
                right: vec![],
            });
        }
        let n = s[1];
        let mut out = self.value(x).data().to_vec();
        let mut norms = Vec::with_capacity(s[0]);
        for row in out.chunks_mut(n.max(1)) {
            let norm = math::sqrt(row.iter().map(|v| v * v).sum::<f64>()).max(NORM_EPS);
            row.iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::new(s, out)?, Op::NormalizeRows { x, norms }, rg))
    }

    /// Back-propagates from a scalar `loss`, accumulating into every trainable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => match &mut self.leaf_grads[i] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                },
                op => self.backprop_node(op, &node.value, &g, &mut adj),
            }
        }
        Ok(())
    }

    fn backprop_node(&self, op: &Op, out: &Tensor, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut send = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = adj[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
            f(slot);
        };
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                send(*a, &mut |da| {
                    // da += g · bᵀ
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let br = &bv[p * n..(p + 1) * n];
                            da[i * k + p] += gi.iter().zip(br).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                send(*b, &mut |db| {
                    // db += aᵀ · g
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            let row = &mut db[p * n..(p + 1) * n];
                            row.iter_mut().zip(gi).for_each(|(d, x)| *d += aip * x);
                        }
                    }
                });
            }
            Op::Binary {
                op,
                a,
                b,
                a_map,
                b_map,
            } => {
                let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                let ia = |i: usize| a_map.as_ref().map_or(i, |m| m[i]);
                let ib = |i: usize| b_map.as_ref().map_or(i, |m| m[i]);
                send(*a, &mut |da| {
                    for (i, gi) in g.iter().enumerate() {
                        da[ia(i)] += match op {
                            BinaryOp::Add | BinaryOp::Sub => *gi,
                            BinaryOp::Mul => gi * bv[ib(i)],
                            BinaryOp::Div => gi / bv[ib(i)],
                        };
                    }
                });
                send(*b, &mut |db| {
                    for (i, gi) in g.iter().enumerate() {
                        let y = bv[ib(i)];
                        db[ib(i)] += match op {
                            BinaryOp::Add => *gi,
                            BinaryOp::Sub => -gi,
                            BinaryOp::Mul => gi * av[ia(i)],
                            BinaryOp::Div => -gi * av[ia(i)] / (y * y),
                        };
                    }
                });
            }
            Op::Unary(op, x) => {
                let xv = nodes[x.0].value.data();
                let yv = out.data();
                send(*x, &mut |dx| {
                    for i in 0..g.len() {
                        dx[i] += g[i]
                            * match op {
                                UnaryOp::Exp => yv[i],
                                UnaryOp::Log => 1.0 / xv[i],
                                UnaryOp::Sigmoid => yv[i] * (1.0 - yv[i]),
                                UnaryOp::Relu => {
                                    if xv[i] > 0.0 {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                }
                                UnaryOp::Square => 2.0 * xv[i],
                                UnaryOp::Neg => -1.0,
                                UnaryOp::Scale(k) => *k,
                            };
                    }
                });
            }
            Op::Sum(x) => send(*x, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0])),
            Op::MeanLastAxis(x) => {
                let l = *nodes[x.0].value.shape().last().unwrap_or(&1);
                send(*x, &mut |dx| {
                    for (chunk, gi) in dx.chunks_mut(l).zip(g) {
                        chunk.iter_mut().for_each(|d| *d += gi / l as f64);
                    }
                });
            }
            Op::Reshape(x) => send(*x, &mut |dx| dx.iter_mut().zip(g).for_each(|(d, gi)| *d += gi)),
            Op::Transpose(x) => {
                let s = nodes[x.0].value.shape();
                let (m, n) = (s[0], s[1]);
                send(*x, &mut |dx| {
                    for i in 0..m {
                        for j in 0..n {
                            dx[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = nodes[p.0].value.numel();
                    let gs = &g[off..off + len];
                    send(*p, &mut |dp| dp.iter_mut().zip(gs).for_each(|(d, x)| *d += x));
                    off += len;
                }
            }
            Op::Conv1d {
                input,
                kernel,
                stride,
                padding,
            } => {
                let (iv, kv) = (&nodes[input.0].value, &nodes[kernel.0].value);
                // geometry was validated in the forward pass
                if let Ok(geo) = ConvGeometry::new(iv.shape(), kv.shape(), *stride, *padding) {
                    send(*input, &mut |di| geo.backward_input(g, kv.data(), di));
                    send(*kernel, &mut |dk| geo.backward_kernel(g, iv.data(), dk));
                }
            }
            Op::Softmax { x, mask } => {
                let s = out.shape();
                let (m, n) = (s[0], s[1]);
                let p = out.data();
                send(*x, &mut |dx| {
                    for r in 0..m {
                        let row = r * n..(r + 1) * n;
                        let dot: f64 = p[row.clone()].iter().zip(&g[row.clone()]).map(|(a, b)| a * b).sum();
                        for j in row {
                            if mask.as_ref().is_none_or(|mk| mk[j]) {
                                dx[j] += p[j] * (g[j] - dot);
                            }
                        }
                    }
                });
            }
            Op::LogSoftmax { x, mask, probs } => {
                let s = out.shape();
                let (m, n) = (s[0], s[1]);
                send(*x, &mut |dx| {
                    for r in 0..m {
                        let row = r * n..(r + 1) * n;
                        let included = |j: usize| mask.as_ref().is_none_or(|mk| mk[j]);
                        let gsum: f64 = row.clone().filter(|&j| included(j)).map(|j| g[j]).sum();
                        for j in row {
                            if included(j) {
                                dx[j] += g[j] - probs[j] * gsum;
                            }
                        }
                    }
                });
            }
            Op::NormalizeRows { x, norms } => {
                let y = out.data();
                let n = out.shape()[1].max(1);
                send(*x, &mut |dx| {
                    for (r, norm) in norms.iter().enumerate() {
                        let row = r * n..(r + 1) * n;
                        let dot: f64 = y[row.clone()].iter().zip(&g[row.clone()]).map(|(a, b)| a * b).sum();
                        for j in row {
                            dx[j] += (g[j] - y[j] * dot) / norm;
                        }
                    }
                });
            }
        }
    }
}

/// Plain row-major matrix product, shared with non-differentiable callers.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            orow.iter_mut().zip(brow).for_each(|(o, x)| *o += aip * x);
        }
    }
    out
}

/// Returns (probabilities, log-probabilities); excluded entries are 0 in both.
fn softmax_raw(x: &[f64], m: usize, n: usize, mask: Option<&[bool]>) -> (Vec<f64>, Vec<f64>) {
    let mut probs = vec![0.0; m * n];
    let mut logp = vec![0.0; m * n];
    for r in 0..m {
        let row = r * n..(r + 1) * n;
        let inc = |j: usize| mask.is_none_or(|mk| mk[j]);
        let max = row
            .clone()
            .filter(|&j| inc(j))
            .map(|j| x[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let z: f64 = row.clone().filter(|&j| inc(j)).map(|j| math::exp(x[j] - max)).sum();
        let lz = math::ln(z);
        for j in row {
            if inc(j) {
                logp[j] = x[j] - max - lz;
                probs[j] = math::exp(logp[j]);
            }
        }
    }
    (probs, logp)
}

struct ConvGeometry {
    batch: usize,
    cin: usize,
    len: usize,
    cout: usize,
    ksize: usize,
    stride: usize,
    padding: usize,
    lout: usize,
}

impl ConvGeometry {
    fn new(input: &[usize], kernel: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let (batch, cin, len) = (input[0], input[1], input[2]);
        let (cout, ksize) = (kernel[0], kernel[2]);
        if ksize == 0 || ksize > len + 2 * padding {
            return Err(Error::Dimension {
                op: "conv1d (kernel longer than padded input)",
                left: input.to_vec(),
                right: kernel.to_vec(),
            });
        }
        let lout = (len + 2 * padding - ksize) / stride + 1;
        Ok(Self {
            batch,
            cin,
            len,
            cout,
            ksize,
            stride,
            padding,
            lout,
        })
    }

    /// Output positions `t` for which input index `t*stride + k - padding` is in range.
    fn t_range(&self, k: usize) -> core::ops::Range<usize> {
        let lo = if k >= self.padding {
            0
        } else {
            (self.padding - k).div_ceil(self.stride)
        };
        if self.len + self.padding < k + 1 {
            return 0..0;
        }
        let hi = ((self.len - 1 + self.padding - k) / self.stride + 1).min(self.lout);
        lo..hi.max(lo)
    }

    fn forward(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.batch * self.cout * self.lout];
        for b in 0..self.batch {
            for o in 0..self.cout {
                let orow = &mut out[(b * self.cout + o) * self.lout..][..self.lout];
                for c in 0..self.cin {
                    let xrow = &x[(b * self.cin + c) * self.len..][..self.len];
                    for k in 0..self.ksize {
                        let wk = w[(o * self.cin + c) * self.ksize + k];
                        let tr = self.t_range(k);
                        if self.stride == 1 {
                            let start = tr.start + k - self.padding;
                            let src = &xrow[start..start + tr.len()];
                            orow[tr].iter_mut().zip(src).for_each(|(o, xv)| *o += wk * xv);
                        } else {
                            for t in tr {
                                orow[t] += wk * xrow[t * self.stride + k - self.padding];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn backward_input(&self, g: &[f64], w: &[f64], dx: &mut [f64]) {
        for b in 0..self.batch {
            for o in 0..self.cout {
                let grow = &g[(b * self.cout + o) * self.lout..][..self.lout];
                for c in 0..self.cin {
                    let drow = &mut dx[(b * self.cin + c) * self.len..][..self.len];
                    for k in 0..self.ksize {
                        let wk = w[(o * self.cin + c) * self.ksize + k];
                        for t in self.t_range(k) {
                            drow[t * self.stride + k - self.padding] += wk * grow[t];
                        }
                    }
                }
            }
        }
    }

    fn backward_kernel(&self, g: &[f64], x: &[f64], dw: &mut [f64]) {
        for b in 0..self.batch {
            for o in 0..self.cout {
                let grow = &g[(b * self.cout + o) * self.lout..][..self.lout];
                for c in 0..self.cin {
                    let xrow = &x[(b * self.cin + c) * self.len..][..self.len];
                    for k in 0..self.ksize {
                        let mut acc = 0.0;
                        for t in self.t_range(k) {
                            acc += grow[t] * xrow[t * self.stride + k - self.padding];
                        }
                        dw[(o * self.cin + c) * self.ksize + k] += acc;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_projector() {
        let mut g = Graph::new();
        let i2 = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let out = g.matmul(i2, m).unwrap();
        assert_eq!(g.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

        let p = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 0.0]));
        let m2 = g.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
        let out = g.matmul(p, m2).unwrap();
        assert_eq!(g.value(out).data(), &[5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        match g.matmul(a, b) {
            Err(Error::Dimension { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn conv1d_hand_cases() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 1, 5], 1.0));
        let k = g.constant(t(&[1, 1, 1], &[1.0]));
        let y = g.conv1d(x, k, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), &[1.0; 5]);

        let x = g.constant(t(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0]));
        let k = g.constant(t(&[1, 1, 2], &[1.0, 1.0]));
        let y = g.conv1d(x, k, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 5.0, 7.0]);

        // padding 1, stride 2: padded [0,1,2,3,4,0] -> windows at 0,2,4
        let y = g.conv1d(x, k, 2, 1).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 5.0, 4.0]);
    }

    #[test]
    fn conv1d_rejects_long_kernel() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 1, 2]));
        let k = g.constant(Tensor::zeros(&[1, 1, 5]));
        assert!(matches!(g.conv1d(x, k, 1, 1), Err(Error::Dimension { .. })));
        assert!(g.conv1d(x, k, 1, 2).is_ok());
    }

    #[test]
    fn elementwise_identities() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::scalar(0.0));
        let s = g.sigmoid(z).unwrap();
        assert_eq!(g.value(s).data(), &[0.5]);

        let x = g.constant(t(&[3], &[-2.0, 0.0, 3.7]));
        let e = g.exp(x).unwrap();
        let l = g.log(e).unwrap();
        for (a, b) in g.value(l).data().iter().zip([-2.0, 0.0, 3.7]) {
            assert!((a - b).abs() < 1e-12);
        }

        let r = g.constant(t(&[2], &[-5.0, 5.0]));
        let r = g.relu(r).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 5.0]);
    }

    #[test]
    fn domain_errors() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[1.0, 0.0]));
        assert!(matches!(g.log(x), Err(Error::Domain { .. })));
        let one = g.constant(Tensor::scalar(1.0));
        assert!(matches!(g.div(one, x), Err(Error::Domain { .. })));
    }

    #[test]
    fn softmax_cases() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3, 3], &[0.0, 0.0, 0.0, 1000.0, 0.0, 0.0, 1.0, 2.0, 3.0]));
        let p = g.softmax_rows(x).unwrap();
        let v = g.value(p).data();
        for j in 0..3 {
            assert!((v[j] - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((v[3] - 1.0).abs() < 1e-15 && v[4] < 1e-300);
        let z = libm::exp(1.0) + libm::exp(2.0) + libm::exp(3.0);
        for (j, e) in [1.0, 2.0, 3.0].iter().enumerate() {
            assert!((v[6 + j] - libm::exp(*e) / z).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_simple_sums() {
        let mut g = Graph::new();
        let x = g.parameter(t(&[2, 2], &[1.0, -1.0, 2.0, 0.5]));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 4]);

        let mut g = Graph::new();
        let x = g.parameter(t(&[3], &[1.0, 2.0, 3.0]));
        let sq = g.square(x).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
        // a second call accumulates
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[4.0, 8.0, 12.0]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.parameter(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let a = g.parameter(t(&[2], &[1.0, 2.0]));
        let c = g.constant(t(&[2], &[3.0, 4.0]));
        let m = g.mul(a, c).unwrap();
        let s = g.sum(m).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[3.0, 4.0]);
        assert!(g.grad(c).is_none());
    }
}
