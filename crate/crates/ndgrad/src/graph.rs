//! The gradient tape.
//!
//! Every op evaluates eagerly and appends a node. Nodes whose inputs do not
//! require gradients are stored as constants, so inference graphs record no
//! backward work. `backward` walks the tape once in reverse; the tape cannot
//! be differentiated twice.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{axis_extents, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    /// Value only; no gradient flows through it.
    Const,
    /// Differentiable leaf.
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, Var),
    DivScalar(Var, Var),
    ScaleConst(Var, f64),
    AddConst(Var),
    Recip(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        padding: usize,
    },
    MaxPool1d {
        x: Var,
        argmax: Vec<usize>,
    },
    Relu(Var),
    Tanh(Var),
    Sigmoid {
        x: Var,
        steepness: f64,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    ReduceSum(Var),
    ReduceMean(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    LstmCell {
        z: Var,
        c: Var,
        /// Per element of `c`: `i, f, g, o, tanh(c')`.
        cache: Vec<f64>,
    },
    GruCell {
        x: Var,
        h_proj: Var,
        h: Var,
        /// Per element of `h`: `r, z, n`.
        cache: Vec<f64>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Const | Op::Leaf => Vec::new(),
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Scale(a, b)
            | Op::DivScalar(a, b)
            | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::ScaleConst(x, _)
            | Op::AddConst(x)
            | Op::Recip(x)
            | Op::Transpose(x)
            | Op::Relu(x)
            | Op::Tanh(x)
            | Op::Reshape(x)
            | Op::ReduceSum(x)
            | Op::ReduceMean(x) => vec![*x],
            Op::Affine { x, w, b } | Op::Conv1d { x, w, b, .. } => vec![*x, *w, *b],
            Op::MaxPool1d { x, .. }
            | Op::Sigmoid { x, .. }
            | Op::Softmax { x, .. }
            | Op::Dropout { x, .. }
            | Op::Slice { x, .. } => vec![*x],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
            Op::LstmCell { z, c, .. } => vec![*z, *c],
            Op::GruCell { x, h_proj, h, .. } => vec![*x, *h_proj, *h],
        }
    }
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// A single forward/backward tape, optionally bound to a [`ParamStore`].
pub struct Graph<'p> {
    nodes: Vec<Node>,
    params: Option<&'p ParamStore>,
    bound: BTreeMap<String, Var>,
    training: bool,
    track_params: bool,
    rng: ChaCha8Rng,
    consumed: bool,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    /// Empty tape in evaluation mode with RNG seed 0.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: None,
            bound: BTreeMap::new(),
            training: false,
            track_params: true,
            rng: ChaCha8Rng::seed_from_u64(0),
            consumed: false,
        }
    }

    pub fn with_params(params: &'p ParamStore) -> Self {
        Self {
            params: Some(params),
            ..Self::new()
        }
    }

    /// Training mode enables dropout.
    pub fn training(mut self, on: bool) -> Self {
        self.training = on;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    /// When false, trainable parameters bind as constants and no backward
    /// work is recorded.
    pub fn track_params(mut self, on: bool) -> Self {
        self.track_params = on;
        self
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
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

    /// Gradient of a leaf after `backward`; `None` for constants.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let op = if requires_grad { Op::Leaf } else { Op::Const };
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Const };
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// Differentiable leaf.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Binds a named parameter from the attached store, once per tape.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let store = self
            .params
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        let p = store
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        let v = self.push_leaf(p.value.clone(), p.trainable && self.track_params);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Gradients of every bound trainable parameter. Parameters that were
    /// bound but received no gradient get zeros.
    pub fn param_grads(&self) -> BTreeMap<String, Tensor> {
        self.bound
            .iter()
            .filter(|(_, v)| self.nodes[v.0].requires_grad)
            .map(|(name, v)| {
                let node = &self.nodes[v.0];
                let g = node
                    .grad
                    .clone()
                    .unwrap_or_else(|| vec![0.0; node.value.numel()]);
                let t = Tensor::new(node.value.shape().to_vec(), g).expect("grad shape");
                (name.clone(), t)
            })
            .collect()
    }

    // ---- elementwise ----

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(x);
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
            .expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// `s * x` where `s` holds a single element.
    pub fn scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s).item().ok_or_else(|| Error::ShapeMismatch {
            op: "scale",
            lhs: self.shape(x).to_vec(),
            rhs: self.shape(s).to_vec(),
        })?;
        let out = self.map(x, |v| sv * v);
        Ok(self.push(out, Op::Scale(x, s)))
    }

    /// `x / s` where `s` holds a single nonzero element. Unlike scaling by a
    /// reciprocal, `x / x_sum` is exactly 1 when the two are equal.
    pub fn div_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s).item().ok_or_else(|| Error::ShapeMismatch {
            op: "div_scalar",
            lhs: self.shape(x).to_vec(),
            rhs: self.shape(s).to_vec(),
        })?;
        if sv == 0.0 {
            return Err(Error::InvalidArgument {
                op: "div_scalar",
                msg: "division by zero".into(),
            });
        }
        let out = self.map(x, |v| v / sv);
        Ok(self.push(out, Op::DivScalar(x, s)))
    }

    pub fn scale_const(&mut self, x: Var, c: f64) -> Var {
        let out = self.map(x, |v| c * v);
        self.push(out, Op::ScaleConst(x, c))
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let out = self.map(x, |v| v + c);
        self.push(out, Op::AddConst(x))
    }

    pub fn recip(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().contains(&0.0) {
            return Err(Error::InvalidArgument {
                op: "recip",
                msg: "division by zero".into(),
            });
        }
        let out = self.map(x, |v| 1.0 / v);
        Ok(self.push(out, Op::Recip(x)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.map(x, f64::tanh);
        self.push(out, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.sigmoid_steep(x, 1.0)
    }

    /// `1 / (1 + exp(-steepness * x))`.
    pub fn sigmoid_steep(&mut self, x: Var, steepness: f64) -> Var {
        let out = self.map(x, |v| logistic(steepness * v));
        self.push(out, Op::Sigmoid { x, steepness })
    }

    // ---- linear algebra ----

    /// `[m,k] x [k,n]`, or batched `[b,m,k] x [b,k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        let (batch, m, k, n) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n),
            ([ba, m, k], [bb, k2, n]) if ba == bb && k == k2 => (*ba, *m, *k, *n),
            _ => return Err(mismatch()),
        };
        let mut out = vec![0.0; batch * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for bi in 0..batch {
            matmul_acc(
                &da[bi * m * k..(bi + 1) * m * k],
                &db[bi * k * n..(bi + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let shape = if sa.len() == 2 {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(a, b)))
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let (batch, r, c) = match s.as_slice() {
            [r, c] => (1, *r, *c),
            [b, r, c] => (*b, *r, *c),
            _ => {
                return Err(Error::InvalidArgument {
                    op: "transpose",
                    msg: format!("expected rank 2 or 3, got shape {s:?}"),
                })
            }
        };
        let out = transpose_data(self.value(x).data(), batch, r, c);
        let mut shape = s.clone();
        let n = shape.len();
        shape.swap(n - 2, n - 1);
        Ok(self.push(Tensor::new(shape, out)?, Op::Transpose(x)))
    }

    /// `x W + b` over the last axis: `[..., in] x [in, out] + [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (
            self.shape(x).to_vec(),
            self.shape(w).to_vec(),
            self.shape(b).to_vec(),
        );
        let ok = !sx.is_empty()
            && sw.len() == 2
            && sw[0] == *sx.last().unwrap()
            && sb.as_slice() == [sw[1]];
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "affine",
                lhs: sx,
                rhs: sw,
            });
        }
        let (fan_in, fan_out) = (sw[0], sw[1]);
        let rows = self.value(x).numel() / fan_in;
        let bias = self.value(b).data();
        let mut out = Vec::with_capacity(rows * fan_out);
        for _ in 0..rows {
            out.extend_from_slice(bias);
        }
        matmul_acc(
            self.value(x).data(),
            self.value(w).data(),
            &mut out,
            rows,
            fan_in,
            fan_out,
        );
        let mut shape = sx;
        *shape.last_mut().unwrap() = fan_out;
        Ok(self.push(Tensor::new(shape, out)?, Op::Affine { x, w, b }))
    }

    /// Stride-1 convolution over the time axis.
    /// `x: [B, L, Cin]`, `w: [Cout, Cin, K]`, `b: [Cout]` gives
    /// `[B, L + 2*padding - K + 1, Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, padding: usize) -> Result<Var> {
        let (sx, sw, sb) = (
            self.shape(x).to_vec(),
            self.shape(w).to_vec(),
            self.shape(b).to_vec(),
        );
        let ok = sx.len() == 3
            && sw.len() == 3
            && sw[1] == sx[2]
            && sb.as_slice() == [sw[0]]
            && sx[1] + 2 * padding >= sw[2];
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                lhs: sx,
                rhs: sw,
            });
        }
        let geom = ConvGeom {
            batch: sx[0],
            len_in: sx[1],
            c_in: sx[2],
            c_out: sw[0],
            kernel: sw[2],
            padding,
        };
        let out = conv1d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let shape = vec![geom.batch, geom.len_out(), geom.c_out];
        Ok(self.push(Tensor::new(shape, out)?, Op::Conv1d { x, w, b, padding }))
    }

    /// Max pooling over the time axis of `[B, L, C]`.
    pub fn max_pool1d(&mut self, x: Var, size: usize, stride: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || size == 0 || stride == 0 || s[1] < size {
            return Err(Error::InvalidArgument {
                op: "max_pool1d",
                msg: format!("shape {s:?} with size {size}, stride {stride}"),
            });
        }
        let (batch, len, ch) = (s[0], s[1], s[2]);
        let len_out = (len - size) / stride + 1;
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(batch * len_out * ch);
        let mut argmax = Vec::with_capacity(batch * len_out * ch);
        for bi in 0..batch {
            for t in 0..len_out {
                for c in 0..ch {
                    let mut best = (bi * len + t * stride) * ch + c;
                    for j in 1..size {
                        let idx = (bi * len + t * stride + j) * ch + c;
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best);
                }
            }
        }
        let t = Tensor::new(vec![batch, len_out, ch], out)?;
        Ok(self.push(t, Op::MaxPool1d { x, argmax }))
    }

    // ---- normalisation / regularisation ----

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::InvalidArgument {
                op: "softmax",
                msg: format!("axis {axis} out of range for shape {s:?}"),
            });
        }
        let (outer, n, inner) = axis_extents(&s, axis);
        let data = self.value(x).data();
        let mut out = vec![0.0; data.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let max = (0..n)
                    .map(|j| data[at(j)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..n {
                    let e = (data[at(j)] - max).exp();
                    out[at(j)] = e;
                    sum += e;
                }
                for j in 0..n {
                    out[at(j)] /= sum;
                }
            }
        }
        Ok(self.push(Tensor::new(s, out)?, Op::Softmax { x, axis }))
    }

    /// Inverted dropout. Identity outside training mode.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument {
                op: "dropout",
                msg: format!("rate {rate} outside [0, 1)"),
            });
        }
        if !self.training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if self.rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let t = self.value(x);
        let out = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(t, Op::Dropout { x, mask }))
    }

    // ---- structural ----

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::InvalidArgument {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::InvalidArgument {
                op: "concat",
                msg: format!("axis {axis} out of range for shape {base:?}"),
            });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_extents(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] || len == 0 {
            return Err(Error::InvalidArgument {
                op: "slice",
                msg: format!("[{start}, {}) on axis {axis} of shape {s:?}", start + len),
            });
        }
        let (outer, n, inner) = axis_extents(&s, axis);
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * n + start) * inner;
            out.extend_from_slice(&data[from..from + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        Ok(self.push(Tensor::new(shape, out)?, Op::Slice { x, axis, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// Collapses every axis after the first: `[B, ...] -> [B, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let b = *s.first().ok_or_else(|| Error::InvalidArgument {
            op: "flatten",
            msg: "scalar input".into(),
        })?;
        let rest = s[1..].iter().product();
        self.reshape(x, &[b, rest])
    }

    /// Slice of width one along `axis` with that axis removed.
    pub fn select(&mut self, x: Var, axis: usize, index: usize) -> Result<Var> {
        let y = self.slice(x, axis, index, 1)?;
        let mut shape = self.shape(y).to_vec();
        shape.remove(axis);
        self.reshape(y, &shape)
    }

    /// Inserts a new axis at `axis` and concatenates along it.
    pub fn stack(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let mut expanded = Vec::with_capacity(parts.len());
        for &p in parts {
            let mut shape = self.shape(p).to_vec();
            if axis > shape.len() {
                return Err(Error::InvalidArgument {
                    op: "stack",
                    msg: format!("axis {axis} out of range for shape {shape:?}"),
                });
            }
            shape.insert(axis, 1);
            expanded.push(self.reshape(p, &shape)?);
        }
        self.concat(&expanded, axis)
    }

    pub fn reduce_sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::ReduceSum(x))
    }

    pub fn reduce_mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(m), Op::ReduceMean(x))
    }

    // ---- fused blocks ----

    /// Multi-head scaled dot-product attention. `q`, `k`, `v` are
    /// `[B, L, D]` with `heads` dividing `D`; head `h` uses feature columns
    /// `h*D/heads ..`. Returns the `[B, L, D]` output and the attention
    /// probabilities `[B, heads, L, L]` (rows sum to 1).
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let s = self.shape(q).to_vec();
        let ok = s.len() == 3
            && self.shape(k) == s.as_slice()
            && self.shape(v) == s.as_slice()
            && heads > 0
            && s[2].is_multiple_of(heads);
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "attention",
                lhs: s,
                rhs: self.shape(k).to_vec(),
            });
        }
        let (batch, len, width) = (s[0], s[1], s[2]);
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut probs = vec![0.0; batch * heads * len * len];
        let mut out = vec![0.0; batch * len * width];
        let mut o = vec![0.0; len * dh];
        for b in 0..batch {
            for h in 0..heads {
                let (qh, _) = head_block(qd, b, h, len, width, dh);
                let (_, kt) = head_block(kd, b, h, len, width, dh);
                let (_, vt) = head_block(vd, b, h, len, width, dh);
                let p = &mut probs[(b * heads + h) * len * len..][..len * len];
                matmul_acc(&qh, &kt, p, len, dh, len);
                for row in p.chunks_exact_mut(len) {
                    let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                    let mut sum = 0.0;
                    for x in row.iter_mut() {
                        *x = (scale * (*x - max)).exp();
                        sum += *x;
                    }
                    row.iter_mut().for_each(|x| *x /= sum);
                }
                o.iter_mut().for_each(|x| *x = 0.0);
                matmul_grad_lhs(p, &vt, &mut o, len, dh, len);
                scatter_head(&o, &mut out, b, h, len, width, dh);
            }
        }
        // The op is kept even off the gradient path so the weights stay
        // readable; a node without `requires_grad` never receives a gradient.
        let requires_grad = [q, k, v].iter().any(|x| self.nodes[x.0].requires_grad);
        self.nodes.push(Node {
            value: Tensor::new(s, out)?,
            grad: None,
            requires_grad,
            op: Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Attention probabilities `[B, heads, L, L]` recorded by an
    /// [`attention`](Self::attention) node, if it is on the tape.
    pub fn attention_weights(&self, y: Var) -> Option<Tensor> {
        let node = self.nodes.get(y.0)?;
        let (heads, probs) = match &node.op {
            Op::Attention { heads, probs, .. } => (*heads, probs),
            _ => return None,
        };
        let s = node.value.shape();
        Tensor::new(vec![s[0], heads, s[1], s[1]], probs.clone()).ok()
    }

    /// LSTM cell update from pre-activations `z = [i | f | g | o]` of shape
    /// `[B, 4H]` and the previous cell state `c: [B, H]`. Returns `[h | c']`
    /// of shape `[B, 2H]`.
    pub fn lstm_cell(&mut self, z: Var, c: Var) -> Result<Var> {
        let (sz, sc) = (self.shape(z).to_vec(), self.shape(c).to_vec());
        if sz.len() != 2 || sc.len() != 2 || sz[0] != sc[0] || sz[1] != 4 * sc[1] {
            return Err(Error::ShapeMismatch {
                op: "lstm_cell",
                lhs: sz,
                rhs: sc,
            });
        }
        let (batch, hid) = (sc[0], sc[1]);
        let (zd, cd) = (self.value(z).data(), self.value(c).data());
        let mut out = vec![0.0; batch * 2 * hid];
        let mut cache = vec![0.0; batch * hid * 5];
        for b in 0..batch {
            let zr = &zd[b * 4 * hid..][..4 * hid];
            for j in 0..hid {
                let i = logistic(zr[j]);
                let f = logistic(zr[hid + j]);
                let g = zr[2 * hid + j].tanh();
                let o = logistic(zr[3 * hid + j]);
                let c_new = f * cd[b * hid + j] + i * g;
                let tc = c_new.tanh();
                out[b * 2 * hid + j] = o * tc;
                out[b * 2 * hid + hid + j] = c_new;
                cache[(b * hid + j) * 5..][..5].copy_from_slice(&[i, f, g, o, tc]);
            }
        }
        let t = Tensor::new(vec![batch, 2 * hid], out)?;
        Ok(self.push(t, Op::LstmCell { z, c, cache }))
    }

    /// GRU update `h' = n + z * (h - n)` with `r = sigmoid(x_r + p_r)`,
    /// `z = sigmoid(x_z + p_z)`, `n = tanh(x_n + r * p_n)`, where `x` and
    /// `h_proj = p` are the `[B, 3H]` input and hidden projections laid out
    /// `[r | z | n]`.
    pub fn gru_cell(&mut self, x: Var, h_proj: Var, h: Var) -> Result<Var> {
        let (sx, sp, sh) = (
            self.shape(x).to_vec(),
            self.shape(h_proj).to_vec(),
            self.shape(h).to_vec(),
        );
        if sx.len() != 2 || sx != sp || sh.len() != 2 || sh[0] != sx[0] || sx[1] != 3 * sh[1] {
            return Err(Error::ShapeMismatch {
                op: "gru_cell",
                lhs: sx,
                rhs: sh,
            });
        }
        let (batch, hid) = (sh[0], sh[1]);
        let (xd, pd, hd) = (
            self.value(x).data(),
            self.value(h_proj).data(),
            self.value(h).data(),
        );
        let mut out = vec![0.0; batch * hid];
        let mut cache = vec![0.0; batch * hid * 3];
        for b in 0..batch {
            let (xr, pr) = (&xd[b * 3 * hid..][..3 * hid], &pd[b * 3 * hid..][..3 * hid]);
            for j in 0..hid {
                let r = logistic(xr[j] + pr[j]);
                let z = logistic(xr[hid + j] + pr[hid + j]);
                let n = (xr[2 * hid + j] + r * pr[2 * hid + j]).tanh();
                out[b * hid + j] = n + z * (hd[b * hid + j] - n);
                cache[(b * hid + j) * 3..][..3].copy_from_slice(&[r, z, n]);
            }
        }
        let t = Tensor::new(vec![batch, hid], out)?;
        Ok(self.push(
            t,
            Op::GruCell {
                x,
                h_proj,
                h,
                cache,
            },
        ))
    }

    // ---- backward ----

    /// Reverse pass from a one-element `loss`. Leaf gradients are kept;
    /// intermediate gradients are released as soon as they are consumed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let out = &self.nodes[loss.0];
        if out.value.numel() != 1 {
            return Err(Error::NotScalar(out.value.shape().to_vec()));
        }
        self.consumed = true;
        if !out.requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(gy) = self.nodes[i].grad.take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Const);
            self.propagate(i, &op, &gy);
            let keep = matches!(op, Op::Leaf);
            self.nodes[i].op = op;
            if keep {
                self.nodes[i].grad = Some(gy);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&[Node], &mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let mut g = self.nodes[v.0].grad.take().unwrap_or_else(|| vec![0.0; n]);
        f(&self.nodes, &mut g);
        self.nodes[v.0].grad = Some(g);
    }

    fn propagate(&mut self, i: usize, op: &Op, gy: &[f64]) {
        match *op {
            Op::Const | Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(a, |_, g| add_into(g, gy));
                self.accumulate(b, |_, g| add_into(g, gy));
            }
            Op::Sub(a, b) => {
                self.accumulate(a, |_, g| add_into(g, gy));
                self.accumulate(b, |_, g| g.iter_mut().zip(gy).for_each(|(g, d)| *g -= d));
            }
            Op::Mul(a, b) => {
                self.accumulate(a, |n, g| {
                    let y = n[b.0].value.data();
                    for ((g, d), y) in g.iter_mut().zip(gy).zip(y) {
                        *g += d * y;
                    }
                });
                self.accumulate(b, |n, g| {
                    let x = n[a.0].value.data();
                    for ((g, d), x) in g.iter_mut().zip(gy).zip(x) {
                        *g += d * x;
                    }
                });
            }
            Op::Scale(x, s) => {
                self.accumulate(x, |n, g| {
                    let sv = n[s.0].value.data()[0];
                    g.iter_mut().zip(gy).for_each(|(g, d)| *g += sv * d);
                });
                self.accumulate(s, |n, g| {
                    let xv = n[x.0].value.data();
                    g[0] += xv.iter().zip(gy).map(|(x, d)| x * d).sum::<f64>();
                });
            }
            Op::DivScalar(x, s) => {
                let sv = self.nodes[s.0].value.data()[0];
                self.accumulate(x, |_, g| {
                    g.iter_mut().zip(gy).for_each(|(g, d)| *g += d / sv)
                });
                self.accumulate(s, |n, g| {
                    let y = n[i].value.data();
                    g[0] -= y.iter().zip(gy).map(|(y, d)| y * d).sum::<f64>() / sv;
                });
            }
            Op::ScaleConst(x, c) => {
                self.accumulate(x, |_, g| {
                    g.iter_mut().zip(gy).for_each(|(g, d)| *g += c * d)
                });
            }
            Op::AddConst(x) => self.accumulate(x, |_, g| add_into(g, gy)),
            Op::Recip(x) => self.accumulate(x, |n, g| {
                let y = n[i].value.data();
                for ((g, d), y) in g.iter_mut().zip(gy).zip(y) {
                    *g -= d * y * y;
                }
            }),
            Op::Relu(x) => self.accumulate(x, |n, g| {
                let xv = n[x.0].value.data();
                for ((g, d), x) in g.iter_mut().zip(gy).zip(xv) {
                    if *x > 0.0 {
                        *g += d;
                    }
                }
            }),
            Op::Tanh(x) => self.accumulate(x, |n, g| {
                let y = n[i].value.data();
                for ((g, d), y) in g.iter_mut().zip(gy).zip(y) {
                    *g += d * (1.0 - y * y);
                }
            }),
            Op::Sigmoid { x, steepness } => self.accumulate(x, |n, g| {
                let y = n[i].value.data();
                for ((g, d), y) in g.iter_mut().zip(gy).zip(y) {
                    *g += d * steepness * y * (1.0 - y);
                }
            }),
            Op::MatMul(a, b) => {
                let sa = self.nodes[a.0].value.shape().to_vec();
                let sb = self.nodes[b.0].value.shape().to_vec();
                let (batch, m, k) = if sa.len() == 2 {
                    (1, sa[0], sa[1])
                } else {
                    (sa[0], sa[1], sa[2])
                };
                let nn = *sb.last().unwrap();
                self.accumulate(a, |nodes, g| {
                    let bv = nodes[b.0].value.data();
                    for bi in 0..batch {
                        matmul_grad_lhs(
                            &gy[bi * m * nn..(bi + 1) * m * nn],
                            &bv[bi * k * nn..(bi + 1) * k * nn],
                            &mut g[bi * m * k..(bi + 1) * m * k],
                            m,
                            k,
                            nn,
                        );
                    }
                });
                self.accumulate(b, |nodes, g| {
                    let av = nodes[a.0].value.data();
                    for bi in 0..batch {
                        matmul_grad_rhs(
                            &av[bi * m * k..(bi + 1) * m * k],
                            &gy[bi * m * nn..(bi + 1) * m * nn],
                            &mut g[bi * k * nn..(bi + 1) * k * nn],
                            m,
                            k,
                            nn,
                        );
                    }
                });
            }
            Op::Transpose(x) => {
                let s = self.nodes[i].value.shape().to_vec();
                let (batch, r, c) = if s.len() == 2 {
                    (1, s[0], s[1])
                } else {
                    (s[0], s[1], s[2])
                };
                let back = transpose_data(gy, batch, r, c);
                self.accumulate(x, |_, g| add_into(g, &back));
            }
            Op::Affine { x, w, b } => {
                let sw = self.nodes[w.0].value.shape().to_vec();
                let (fan_in, fan_out) = (sw[0], sw[1]);
                let rows = gy.len() / fan_out;
                self.accumulate(x, |n, g| {
                    matmul_grad_lhs(gy, n[w.0].value.data(), g, rows, fan_in, fan_out)
                });
                self.accumulate(w, |n, g| {
                    matmul_grad_rhs(n[x.0].value.data(), gy, g, rows, fan_in, fan_out)
                });
                self.accumulate(b, |_, g| {
                    for row in gy.chunks_exact(fan_out) {
                        add_into(g, row);
                    }
                });
            }
            Op::Conv1d { x, w, b, padding } => {
                let sx = self.nodes[x.0].value.shape().to_vec();
                let sw = self.nodes[w.0].value.shape().to_vec();
                let geom = ConvGeom {
                    batch: sx[0],
                    len_in: sx[1],
                    c_in: sx[2],
                    c_out: sw[0],
                    kernel: sw[2],
                    padding,
                };
                self.accumulate(x, |n, g| {
                    conv1d_grad_input(&geom, gy, n[w.0].value.data(), g)
                });
                self.accumulate(w, |n, g| {
                    conv1d_grad_weight(&geom, gy, n[x.0].value.data(), g)
                });
                self.accumulate(b, |_, g| {
                    for row in gy.chunks_exact(geom.c_out) {
                        add_into(g, row);
                    }
                });
            }
            Op::MaxPool1d { x, ref argmax } => self.accumulate(x, |_, g| {
                for (d, &idx) in gy.iter().zip(argmax) {
                    g[idx] += d;
                }
            }),
            Op::Softmax { x, axis } => {
                let s = self.nodes[i].value.shape().to_vec();
                let (outer, n, inner) = axis_extents(&s, axis);
                self.accumulate(x, |nodes, g| {
                    let y = nodes[i].value.data();
                    for o in 0..outer {
                        for ii in 0..inner {
                            let at = |j: usize| (o * n + j) * inner + ii;
                            let dot: f64 = (0..n).map(|j| gy[at(j)] * y[at(j)]).sum();
                            for j in 0..n {
                                g[at(j)] += y[at(j)] * (gy[at(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::Dropout { x, ref mask } => self.accumulate(x, |_, g| {
                for ((g, d), m) in g.iter_mut().zip(gy).zip(mask) {
                    *g += d * m;
                }
            }),
            Op::Concat { ref parts, axis } => {
                let s = self.nodes[i].value.shape().to_vec();
                let (outer, total, inner) = axis_extents(&s, axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.shape()[axis];
                    self.accumulate(p, |_, g| {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * len * inner;
                            add_into(&mut g[dst..dst + len * inner], &gy[src..src + len * inner]);
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let s = self.nodes[x.0].value.shape().to_vec();
                let len = self.nodes[i].value.shape()[axis];
                let (outer, n, inner) = axis_extents(&s, axis);
                self.accumulate(x, |_, g| {
                    for o in 0..outer {
                        let dst = (o * n + start) * inner;
                        let src = o * len * inner;
                        add_into(&mut g[dst..dst + len * inner], &gy[src..src + len * inner]);
                    }
                });
            }
            Op::Reshape(x) => self.accumulate(x, |_, g| add_into(g, gy)),
            Op::ReduceSum(x) => self.accumulate(x, |_, g| g.iter_mut().for_each(|g| *g += gy[0])),
            Op::ReduceMean(x) => self.accumulate(x, |_, g| {
                let d = gy[0] / g.len() as f64;
                g.iter_mut().for_each(|g| *g += d);
            }),
            Op::Attention {
                q,
                k,
                v,
                heads,
                ref probs,
            } => {
                let s = self.nodes[q.0].value.shape().to_vec();
                let (batch, len, width) = (s[0], s[1], s[2]);
                let dh = width / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let n = batch * len * width;
                let (mut gq, mut gk, mut gv) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
                {
                    let qd = self.nodes[q.0].value.data();
                    let kd = self.nodes[k.0].value.data();
                    let vd = self.nodes[v.0].value.data();
                    let mut ds = vec![0.0; len * len];
                    let (mut gqh, mut gkt, mut gvt) = (
                        vec![0.0; len * dh],
                        vec![0.0; len * dh],
                        vec![0.0; len * dh],
                    );
                    for b in 0..batch {
                        for h in 0..heads {
                            let (_, qt) = head_block(qd, b, h, len, width, dh);
                            let (_, kt) = head_block(kd, b, h, len, width, dh);
                            let (_, vt) = head_block(vd, b, h, len, width, dh);
                            let (go, got) = head_block(gy, b, h, len, width, dh);
                            let p = &probs[(b * heads + h) * len * len..][..len * len];
                            // dA = dO V^T, then the softmax Jacobian.
                            ds.iter_mut().for_each(|x| *x = 0.0);
                            matmul_acc(&go, &vt, &mut ds, len, dh, len);
                            for (drow, prow) in ds.chunks_exact_mut(len).zip(p.chunks_exact(len)) {
                                let dot = dot(drow, prow);
                                for (d, &pj) in drow.iter_mut().zip(prow) {
                                    *d = pj * (*d - dot) * scale;
                                }
                            }
                            for buf in [&mut gqh, &mut gkt, &mut gvt] {
                                buf.iter_mut().for_each(|x| *x = 0.0);
                            }
                            matmul_acc(&got, p, &mut gvt, dh, len, len);
                            matmul_grad_lhs(&ds, &kt, &mut gqh, len, dh, len);
                            matmul_acc(&qt, &ds, &mut gkt, dh, len, len);
                            scatter_head(&gqh, &mut gq, b, h, len, width, dh);
                            scatter_head_t(&gkt, &mut gk, b, h, len, width, dh);
                            scatter_head_t(&gvt, &mut gv, b, h, len, width, dh);
                        }
                    }
                }
                self.accumulate(q, |_, g| add_into(g, &gq));
                self.accumulate(k, |_, g| add_into(g, &gk));
                self.accumulate(v, |_, g| add_into(g, &gv));
            }
            Op::LstmCell { z, c, ref cache } => {
                let hid = self.nodes[c.0].value.shape()[1];
                let batch = self.nodes[c.0].value.shape()[0];
                let mut gz = vec![0.0; batch * 4 * hid];
                let mut gc = vec![0.0; batch * hid];
                {
                    let cd = self.nodes[c.0].value.data();
                    for b in 0..batch {
                        for j in 0..hid {
                            let e = b * hid + j;
                            let [i, f, g, o, tc] = cache[e * 5..e * 5 + 5] else {
                                unreachable!()
                            };
                            let gh = gy[b * 2 * hid + j];
                            let dc = gy[b * 2 * hid + hid + j] + gh * o * (1.0 - tc * tc);
                            let zr = &mut gz[b * 4 * hid..][..4 * hid];
                            zr[j] = dc * g * i * (1.0 - i);
                            zr[hid + j] = dc * cd[e] * f * (1.0 - f);
                            zr[2 * hid + j] = dc * i * (1.0 - g * g);
                            zr[3 * hid + j] = gh * tc * o * (1.0 - o);
                            gc[e] = dc * f;
                        }
                    }
                }
                self.accumulate(z, |_, g| add_into(g, &gz));
                self.accumulate(c, |_, g| add_into(g, &gc));
            }
            Op::GruCell {
                x,
                h_proj,
                h,
                ref cache,
            } => {
                let hid = self.nodes[h.0].value.shape()[1];
                let batch = self.nodes[h.0].value.shape()[0];
                let mut gx = vec![0.0; batch * 3 * hid];
                let mut gp = vec![0.0; batch * 3 * hid];
                let mut gh = vec![0.0; batch * hid];
                {
                    let hd = self.nodes[h.0].value.data();
                    let pd = self.nodes[h_proj.0].value.data();
                    for b in 0..batch {
                        for j in 0..hid {
                            let e = b * hid + j;
                            let [r, z, n] = cache[e * 3..e * 3 + 3] else {
                                unreachable!()
                            };
                            let d = gy[e];
                            gh[e] = d * z;
                            let dn = d * (1.0 - z) * (1.0 - n * n);
                            let dz = d * (hd[e] - n) * z * (1.0 - z);
                            let dr = dn * pd[b * 3 * hid + 2 * hid + j] * r * (1.0 - r);
                            let row = b * 3 * hid;
                            gx[row + j] = dr;
                            gp[row + j] = dr;
                            gx[row + hid + j] = dz;
                            gp[row + hid + j] = dz;
                            gx[row + 2 * hid + j] = dn;
                            gp[row + 2 * hid + j] = dn * r;
                        }
                    }
                }
                self.accumulate(x, |_, g| add_into(g, &gx));
                self.accumulate(h_proj, |_, g| add_into(g, &gp));
                self.accumulate(h, |_, g| add_into(g, &gh));
            }
        }
    }
}

pub(crate) fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Columns `h*dh..` of batch item `b` in `[B, L, width]` data, as a row-major
/// `[L, dh]` block and its transpose `[dh, L]`.
fn head_block(
    src: &[f64],
    b: usize,
    h: usize,
    len: usize,
    width: usize,
    dh: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut rows = Vec::with_capacity(len * dh);
    let mut cols = vec![0.0; len * dh];
    for i in 0..len {
        let r = &src[(b * len + i) * width + h * dh..][..dh];
        rows.extend_from_slice(r);
        for (d, &x) in r.iter().enumerate() {
            cols[d * len + i] = x;
        }
    }
    (rows, cols)
}

/// Inverse of the row-major half of [`head_block`].
fn scatter_head(
    block: &[f64],
    dst: &mut [f64],
    b: usize,
    h: usize,
    len: usize,
    width: usize,
    dh: usize,
) {
    for i in 0..len {
        dst[(b * len + i) * width + h * dh..][..dh].copy_from_slice(&block[i * dh..][..dh]);
    }
}

/// Inverse of the transposed half of [`head_block`].
fn scatter_head_t(
    block: &[f64],
    dst: &mut [f64],
    b: usize,
    h: usize,
    len: usize,
    width: usize,
    dh: usize,
) {
    for i in 0..len {
        for d in 0..dh {
            dst[(b * len + i) * width + h * dh + d] = block[d * len + i];
        }
    }
}

/// `c[m,n] += a[m,k] * b[k,n]`
fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (c, b) in row.iter_mut().zip(brow) {
                *c += av * b;
            }
        }
    }
}

/// `ga[m,k] += gc[m,n] * b[k,n]^T`
fn matmul_grad_lhs(gc: &[f64], b: &[f64], ga: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &gc[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            ga[i * k + p] += dot(grow, brow);
        }
    }
}

/// Four independent accumulators let the compiler vectorise the reduction.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `gb[k,n] += a[m,k]^T * gc[m,n]`
fn matmul_grad_rhs(a: &[f64], gc: &[f64], gb: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &gc[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (g, d) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *g += av * d;
            }
        }
    }
}

fn transpose_data(src: &[f64], batch: usize, r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for b in 0..batch {
        let base = b * r * c;
        for i in 0..r {
            for j in 0..c {
                out[base + j * r + i] = src[base + i * c + j];
            }
        }
    }
    out
}

struct ConvGeom {
    batch: usize,
    len_in: usize,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    padding: usize,
}

impl ConvGeom {
    fn len_out(&self) -> usize {
        self.len_in + 2 * self.padding + 1 - self.kernel
    }

    /// Input time index feeding output step `t` through tap `k`, if in range.
    fn source(&self, t: usize, k: usize) -> Option<usize> {
        (t + k)
            .checked_sub(self.padding)
            .filter(|&s| s < self.len_in)
    }
}

fn conv1d_forward(geom: &ConvGeom, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let lo = geom.len_out();
    let mut out = Vec::with_capacity(geom.batch * lo * geom.c_out);
    for bi in 0..geom.batch {
        for t in 0..lo {
            for o in 0..geom.c_out {
                let mut acc = b[o];
                for k in 0..geom.kernel {
                    if let Some(s) = geom.source(t, k) {
                        let xrow = &x[(bi * geom.len_in + s) * geom.c_in..][..geom.c_in];
                        for (c, xv) in xrow.iter().enumerate() {
                            acc += w[(o * geom.c_in + c) * geom.kernel + k] * xv;
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

fn conv1d_grad_input(geom: &ConvGeom, gy: &[f64], w: &[f64], gx: &mut [f64]) {
    let lo = geom.len_out();
    for bi in 0..geom.batch {
        for t in 0..lo {
            for o in 0..geom.c_out {
                let d = gy[(bi * lo + t) * geom.c_out + o];
                for k in 0..geom.kernel {
                    if let Some(s) = geom.source(t, k) {
                        let row = &mut gx[(bi * geom.len_in + s) * geom.c_in..][..geom.c_in];
                        for (c, g) in row.iter_mut().enumerate() {
                            *g += d * w[(o * geom.c_in + c) * geom.kernel + k];
                        }
                    }
                }
            }
        }
    }
}

fn conv1d_grad_weight(geom: &ConvGeom, gy: &[f64], x: &[f64], gw: &mut [f64]) {
    let lo = geom.len_out();
    for bi in 0..geom.batch {
        for t in 0..lo {
            for o in 0..geom.c_out {
                let d = gy[(bi * lo + t) * geom.c_out + o];
                for k in 0..geom.kernel {
                    if let Some(s) = geom.source(t, k) {
                        let xrow = &x[(bi * geom.len_in + s) * geom.c_in..][..geom.c_in];
                        for (c, xv) in xrow.iter().enumerate() {
                            gw[(o * geom.c_in + c) * geom.kernel + k] += d * xv;
                        }
                    }
                }
            }
        }
    }
}
