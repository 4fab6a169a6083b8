//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Operations are recorded in evaluation order; [`Tape::backward`] walks the
//! record in reverse from a scalar and returns one gradient per leaf that was
//! registered with `requires_grad`. Forward values come from the kernels in
//! [`crate::tensor`], so taped and untaped evaluations agree bit-for-bit.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{self, Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    AddConst(Var),
    MulConst(Var, Vec<T>),
    ScalarMul(Var, Var),
    ScalarAdd(Var, Var),
    Sum(Var),
    Mean(Var),
    Dot(Var, Var),
    Abs(Var),
    Tanh(Var),
    Gather(Var, Vec<usize>),
    Concat(Vec<Var>),
    SliceRows { x: Var, start: usize },
    Reshape(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Softmax(Var),
    Attend {
        q: Var,
        keys: Vec<Var>,
        values: Vec<Var>,
        weights: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    check_finite: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every `requires_grad` leaf.
#[derive(Debug, Clone)]
pub struct Gradients<T = f32> {
    grads: HashMap<Var, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl<T: Real> Tape<T> {
    /// A tape with non-finite detection enabled.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: true,
        }
    }

    /// Toggles the NaN/Inf check run after every recorded operation.
    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded value and saved operand.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.nodes.shrink_to_fit();
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = match op {
            Op::Leaf => value.requires_grad(),
            _ => parents.iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a leaf; it receives a gradient iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push("leaf", t, Op::Leaf, &[])
    }

    pub fn param(&mut self, t: Tensor<T>) -> Result<Var> {
        self.leaf(t.with_requires_grad(true))
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var> {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        self.push("matmul", v, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::add(self.value(a), self.value(b))?;
        self.push("add", v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::sub(self.value(a), self.value(b))?;
        self.push("sub", v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::mul(self.value(a), self.value(b))?;
        self.push("mul", v, Op::Mul(a, b), &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::div(self.value(a), self.value(b))?;
        self.push("div", v, Op::Div(a, b), &[a, b])
    }

    /// `x[.., n] + b[n]`, broadcasting `b` over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let v = tensor::add_row(self.value(x), self.value(b).data())?;
        self.push("add_row", v, Op::AddRow(x, b), &[x, b])
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        // matmul + add_row recorded as two nodes; the forward value is
        // produced by the shared kernel so it matches the untaped path.
        let xs = self.value(x).shape().to_vec();
        let k = self.value(x).last_dim();
        let flat = if xs.len() == 2 {
            x
        } else {
            let rows = self.value(x).rows();
            self.reshape(x, vec![rows, k])?
        };
        let mm = self.matmul(flat, w)?;
        let y = self.add_row(mm, b)?;
        if xs.len() == 2 {
            Ok(y)
        } else {
            let mut shape = xs;
            *shape.last_mut().unwrap() = self.value(w).shape()[1];
            self.reshape(y, shape)
        }
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let v = tensor::map(self.value(x), |a| a * c);
        self.push("scale", v, Op::Scale(x, c), &[x])
    }

    /// `x + k` for a constant tensor `k` of the same shape.
    pub fn add_const(&mut self, x: Var, k: &Tensor<T>) -> Result<Var> {
        let v = tensor::add(self.value(x), k)?;
        self.push("add_const", v, Op::AddConst(x), &[x])
    }

    /// `x ⊙ k` for a constant tensor `k` of the same shape.
    pub fn mul_const(&mut self, x: Var, k: &Tensor<T>) -> Result<Var> {
        let v = tensor::mul(self.value(x), k)?;
        self.push("mul_const", v, Op::MulConst(x, k.data().to_vec()), &[x])
    }

    fn expect_scalar(&self, op: &'static str, s: Var) -> Result<T> {
        let t = self.value(s);
        if t.len() != 1 {
            return Err(Error::shape(op, format!("expected a scalar, got {:?}", t.shape())));
        }
        Ok(t.item())
    }

    /// `x * s` where `s` is a one-element tensor.
    pub fn scalar_mul(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.expect_scalar("scalar_mul", s)?;
        let v = tensor::map(self.value(x), |a| a * sv);
        self.push("scalar_mul", v, Op::ScalarMul(x, s), &[x, s])
    }

    /// `x + s` where `s` is a one-element tensor.
    pub fn scalar_add(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.expect_scalar("scalar_add", s)?;
        let v = tensor::map(self.value(x), |a| a + sv);
        self.push("scalar_add", v, Op::ScalarAdd(x, s), &[x, s])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(x).data().iter().copied().sum());
        self.push("sum", v, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::InvalidArgument("mean of an empty tensor".into()));
        }
        let n = T::lit(t.len() as f64);
        let v = Tensor::scalar(t.data().iter().copied().sum::<T>() / n);
        self.push("mean", v, Op::Mean(x), &[x])
    }

    /// Sum of the elementwise product; both inputs must share a shape.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("dot", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let v = Tensor::scalar(ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).sum());
        self.push("dot", v, Op::Dot(a, b), &[a, b])
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let v = tensor::map(self.value(x), |a| a.abs());
        self.push("abs", v, Op::Abs(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let v = tensor::map(self.value(x), |a| a.tanh());
        self.push("tanh", v, Op::Tanh(x), &[x])
    }

    /// Picks flat elements of `x` into a vector.
    pub fn gather(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let t = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.len()) {
            return Err(Error::shape("gather", format!("index {bad} out of {}", t.len())));
        }
        let data = idx.iter().map(|&i| t.data()[i]).collect();
        let v = Tensor::vector(data);
        self.push("gather", v, Op::Gather(x, idx), &[x])
    }

    /// Concatenates along the first axis; trailing axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let tail: Vec<usize> = self.value(*first).shape()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            let t = self.value(*p);
            if t.shape()[1..] != tail[..] {
                return Err(Error::shape("concat", format!("{:?} vs tail {tail:?}", t.shape())));
            }
            lead += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let v = Tensor::new(shape, data)?;
        self.push("concat", v, Op::Concat(parts.to_vec()), parts)
    }

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let d = t.last_dim();
        if start + len > t.rows() {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {start}..{} of {}", start + len, t.rows()),
            ));
        }
        let v = Tensor::new(vec![len, d], t.data()[start * d..(start + len) * d].to_vec())?;
        self.push("slice_rows", v, Op::SliceRows { x, start }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        self.push("reshape", v, Op::Reshape(x), &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let parts = tensor::layer_norm_parts(self.value(x), self.value(gain), self.value(bias), eps)?;
        self.push(
            "layer_norm",
            parts.out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat: parts.xhat,
                rstd: parts.rstd,
            },
            &[x, gain, bias],
        )
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let v = tensor::softmax_rows(self.value(x));
        self.push("softmax_rows", v, Op::Softmax(x), &[x])
    }

    /// Per-token attention, see [`tensor::attend_tokens`].
    pub fn attend(&mut self, q: Var, keys: &[Var], values: &[Var]) -> Result<Var> {
        let kt: Vec<&Tensor<T>> = keys.iter().map(|k| self.value(*k)).collect();
        let vt: Vec<&Tensor<T>> = values.iter().map(|v| self.value(*v)).collect();
        let (out, weights) = tensor::attend_tokens(self.value(q), &kt, &vt)?;
        let mut parents = vec![q];
        parents.extend_from_slice(keys);
        parents.extend_from_slice(values);
        self.push(
            "attend",
            out,
            Op::Attend {
                q,
                keys: keys.to_vec(),
                values: values.to_vec(),
                weights: weights.into_data(),
            },
            &parents,
        )
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        if !lt.item().is_finite() {
            return Err(Error::NonFinite { op: "backward" });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if let Op::Leaf = node.op {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }

        let mut out = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let g = grads[i].take().unwrap_or_else(|| vec![T::zero(); node.value.len()]);
                out.insert(Var(i), Tensor::new(node.value.shape().to_vec(), g)?);
            }
        }
        Ok(Gradients { grads: out })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.len()]);
            f(slot);
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if wants(*a) {
                    acc(*a, &mut |ga| {
                        for i in 0..m {
                            for p in 0..k {
                                let mut s = T::zero();
                                for j in 0..n {
                                    s = s + g[i * n + j] * tb.data()[p * n + j];
                                }
                                ga[i * k + p] = ga[i * k + p] + s;
                            }
                        }
                    });
                }
                if wants(*b) {
                    acc(*b, &mut |gb| {
                        for i in 0..m {
                            for p in 0..k {
                                let aip = ta.data()[i * k + p];
                                for j in 0..n {
                                    gb[p * n + j] = gb[p * n + j] + aip * g[i * n + j];
                                }
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| {
                    for (o, &gi) in gb.iter_mut().zip(g) {
                        *o = *o - gi;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for ((o, &gi), &bv) in ga.iter_mut().zip(g).zip(tb.data()) {
                        *o = *o + gi * bv;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, &gi), &av) in gb.iter_mut().zip(g).zip(ta.data()) {
                        *o = *o + gi * av;
                    }
                });
            }
            Op::Div(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for ((o, &gi), &bv) in ga.iter_mut().zip(g).zip(tb.data()) {
                        *o = *o + gi / bv;
                    }
                });
                acc(*b, &mut |gb| {
                    for (((o, &gi), &av), &bv) in gb.iter_mut().zip(g).zip(ta.data()).zip(tb.data()) {
                        *o = *o - gi * av / (bv * bv);
                    }
                });
            }
            Op::AddRow(x, b) => {
                acc(*x, &mut |gx| add_into(gx, g));
                let n = val(*b).len();
                acc(*b, &mut |gb| {
                    for row in g.chunks_exact(n) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |gx| {
                for (o, &gi) in gx.iter_mut().zip(g) {
                    *o = *o + gi * *c;
                }
            }),
            Op::AddConst(x) => acc(*x, &mut |gx| add_into(gx, g)),
            Op::MulConst(x, k) => acc(*x, &mut |gx| {
                for ((o, &gi), &kv) in gx.iter_mut().zip(g).zip(k) {
                    *o = *o + gi * kv;
                }
            }),
            Op::ScalarMul(x, s) => {
                let sv = val(*s).item();
                let tx = val(*x);
                acc(*x, &mut |gx| {
                    for (o, &gi) in gx.iter_mut().zip(g) {
                        *o = *o + gi * sv;
                    }
                });
                acc(*s, &mut |gs| {
                    gs[0] = gs[0] + g.iter().zip(tx.data()).map(|(&a, &b)| a * b).sum::<T>();
                });
            }
            Op::ScalarAdd(x, s) => {
                acc(*x, &mut |gx| add_into(gx, g));
                acc(*s, &mut |gs| gs[0] = gs[0] + g.iter().copied().sum::<T>());
            }
            Op::Sum(x) => acc(*x, &mut |gx| {
                for o in gx.iter_mut() {
                    *o = *o + g[0];
                }
            }),
            Op::Mean(x) => {
                let n = T::lit(val(*x).len() as f64);
                acc(*x, &mut |gx| {
                    for o in gx.iter_mut() {
                        *o = *o + g[0] / n;
                    }
                });
            }
            Op::Dot(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for (o, &bv) in ga.iter_mut().zip(tb.data()) {
                        *o = *o + g[0] * bv;
                    }
                });
                acc(*b, &mut |gb| {
                    for (o, &av) in gb.iter_mut().zip(ta.data()) {
                        *o = *o + g[0] * av;
                    }
                });
            }
            Op::Abs(x) => {
                let tx = val(*x);
                acc(*x, &mut |gx| {
                    for ((o, &gi), &xv) in gx.iter_mut().zip(g).zip(tx.data()) {
                        let sign = if xv > T::zero() {
                            T::one()
                        } else if xv < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        *o = *o + gi * sign;
                    }
                });
            }
            Op::Tanh(x) => {
                let y = &node.value;
                acc(*x, &mut |gx| {
                    for ((o, &gi), &yv) in gx.iter_mut().zip(g).zip(y.data()) {
                        *o = *o + gi * (T::one() - yv * yv);
                    }
                });
            }
            Op::Gather(x, idx) => acc(*x, &mut |gx| {
                for (&i, &gi) in idx.iter().zip(g) {
                    gx[i] = gx[i] + gi;
                }
            }),
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = val(*p).len();
                    acc(*p, &mut |gp| add_into(gp, &g[off..off + n]));
                    off += n;
                }
            }
            Op::SliceRows { x, start } => {
                let d = val(*x).last_dim();
                let off = start * d;
                acc(*x, &mut |gx| add_into(&mut gx[off..off + g.len()], g));
            }
            Op::Reshape(x) => acc(*x, &mut |gx| add_into(gx, g)),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gain_v = val(*gain).data();
                let d = gain_v.len();
                let inv_d = T::one() / T::lit(d as f64);
                acc(*x, &mut |gx| {
                    for (r, &rs) in rstd.iter().enumerate() {
                        let span = r * d..(r + 1) * d;
                        let gr = &g[span.clone()];
                        let hr = &xhat[span.clone()];
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..d {
                            let dh = gr[j] * gain_v[j];
                            m1 = m1 + dh;
                            m2 = m2 + dh * hr[j];
                        }
                        m1 = m1 * inv_d;
                        m2 = m2 * inv_d;
                        for j in 0..d {
                            let dh = gr[j] * gain_v[j];
                            gx[r * d + j] = gx[r * d + j] + rs * (dh - m1 - hr[j] * m2);
                        }
                    }
                });
                acc(*gain, &mut |gg| {
                    for (gr, hr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for j in 0..d {
                            gg[j] = gg[j] + gr[j] * hr[j];
                        }
                    }
                });
                acc(*bias, &mut |gb| {
                    for gr in g.chunks_exact(d) {
                        add_into(gb, gr);
                    }
                });
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let n = y.last_dim();
                acc(*x, &mut |gx| {
                    for ((gxr, gr), yr) in gx
                        .chunks_exact_mut(n)
                        .zip(g.chunks_exact(n))
                        .zip(y.data().chunks_exact(n))
                    {
                        let inner: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for j in 0..n {
                            gxr[j] = gxr[j] + yr[j] * (gr[j] - inner);
                        }
                    }
                });
            }
            Op::Attend {
                q,
                keys,
                values,
                weights,
            } => {
                let tq = val(*q);
                let (s, c) = (tq.shape()[0], tq.shape()[1]);
                let w = keys.len();
                let scale = T::one() / T::lit(c as f64).sqrt();
                // d(score) per (token, window slot)
                let mut dscore = vec![T::zero(); s * w];
                for tok in 0..s {
                    let grow = &g[tok * c..(tok + 1) * c];
                    let arow = &weights[tok * w..(tok + 1) * w];
                    let da: Vec<T> = values
                        .iter()
                        .map(|v| {
                            let vrow = val(*v).row(tok);
                            grow.iter().zip(vrow).map(|(&a, &b)| a * b).sum()
                        })
                        .collect();
                    let inner: T = arow.iter().zip(&da).map(|(&a, &b)| a * b).sum();
                    for k in 0..w {
                        dscore[tok * w + k] = arow[k] * (da[k] - inner) * scale;
                    }
                }
                acc(*q, &mut |gq| {
                    for tok in 0..s {
                        for (k, key) in keys.iter().enumerate() {
                            let ds = dscore[tok * w + k];
                            let krow = val(*key).row(tok);
                            for j in 0..c {
                                gq[tok * c + j] = gq[tok * c + j] + ds * krow[j];
                            }
                        }
                    }
                });
                for (k, key) in keys.iter().enumerate() {
                    acc(*key, &mut |gk| {
                        for tok in 0..s {
                            let ds = dscore[tok * w + k];
                            let qrow = tq.row(tok);
                            for j in 0..c {
                                gk[tok * c + j] = gk[tok * c + j] + ds * qrow[j];
                            }
                        }
                    });
                }
                for (k, v) in values.iter().enumerate() {
                    acc(*v, &mut |gv| {
                        for tok in 0..s {
                            let a = weights[tok * w + k];
                            for j in 0..c {
                                gv[tok * c + j] = gv[tok * c + j] + a * g[tok * c + j];
                            }
                        }
                    });
                }
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (o, &s) in dst.iter_mut().zip(src) {
        *o = *o + s;
    }
}
