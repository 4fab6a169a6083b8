//! Dense row-major tensors and the forward kernels shared by the plain
//! inference path and the differentiable [`Tape`](crate::tape::Tape).
//!
//! Every kernel here is used by both paths, so a streaming forward pass and
//! a taped batch forward pass perform the same floating point operations in
//! the same order.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

use crate::error::{Error, Result};

/// Scalar element type. `f32` is the base precision; `f64` exists so the
/// same generic code can be checked against finite differences without
/// single-precision round-off dominating the comparison.
pub trait Real: Float + Debug + Display + Default + Sum + Send + Sync + 'static {
    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
            requires_grad: false,
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
            requires_grad: false,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
        }
    }

    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("tensor", "ragged rows"));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
            requires_grad: false,
        }
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the last axis (1 for a rank-0-like scalar vector).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of rows when viewed as `[rows x last_dim]`.
    pub fn rows(&self) -> usize {
        let d = self.last_dim();
        if d == 0 {
            0
        } else {
            self.data.len() / d
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let d = self.last_dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape, b.shape)));
    }
    Ok(())
}

fn as_matrix<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape.as_slice() {
        [m, n] => Ok((*m, *n)),
        s => Err(Error::shape(op, format!("expected a matrix, got {s:?}"))),
    }
}

pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = as_matrix("matmul", a)?;
    let (k2, n) = as_matrix("matmul", b)?;
    if k != k2 {
        return Err(Error::shape("matmul", format!("[{m}x{k}] x [{k2}x{n}]")));
    }
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a.data[i * k + p];
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub fn transpose<T: Real>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = as_matrix("transpose", a)?;
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("add", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape.clone(), data)
}

pub fn sub<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("sub", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| x - y).collect();
    Tensor::new(a.shape.clone(), data)
}

pub fn mul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("mul", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| x * y).collect();
    Tensor::new(a.shape.clone(), data)
}

pub fn div<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("div", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| x / y).collect();
    Tensor::new(a.shape.clone(), data)
}

/// `x[.., n] + b[n]` with `b` broadcast over every row.
pub fn add_row<T: Real>(x: &Tensor<T>, b: &[T]) -> Result<Tensor<T>> {
    let n = x.last_dim();
    if b.len() != n {
        return Err(Error::shape(
            "add_row",
            format!("row of {} added to last axis {n}", b.len()),
        ));
    }
    let mut data = x.data.clone();
    for row in data.chunks_exact_mut(n) {
        for (v, &bv) in row.iter_mut().zip(b) {
            *v = *v + bv;
        }
    }
    Tensor::new(x.shape.clone(), data)
}

pub fn map<T: Real>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| f(v)).collect(),
        requires_grad: false,
    }
}

/// Row-wise softmax over the last axis, stabilised by subtracting the row max.
pub fn softmax_rows<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let n = x.last_dim();
    let mut data = x.data.clone();
    if n > 0 {
        for row in data.chunks_exact_mut(n) {
            softmax_in_place(row);
        }
    }
    Tensor {
        shape: x.shape.clone(),
        data,
        requires_grad: false,
    }
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

/// Output of [`layer_norm_parts`]: the result plus what backward needs.
pub(crate) struct LayerNormParts<T> {
    pub out: Tensor<T>,
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

pub(crate) fn layer_norm_parts<T: Real>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<LayerNormParts<T>> {
    let d = x.last_dim();
    if d == 0 {
        return Err(Error::shape("layer_norm", "last axis is empty"));
    }
    if gain.len() != d || bias.len() != d {
        return Err(Error::shape(
            "layer_norm",
            format!("gain {} / bias {} vs last axis {d}", gain.len(), bias.len()),
        ));
    }
    if !(eps > T::zero()) {
        return Err(Error::InvalidArgument("layer_norm eps must be > 0".into()));
    }
    let inv_d = T::one() / T::lit(d as f64);
    let rows = x.rows();
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd.push(rs);
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gain.data[j] + bias.data[j];
        }
    }
    Ok(LayerNormParts {
        out: Tensor::new(x.shape.clone(), out)?,
        xhat,
        rstd,
    })
}

/// Normalises the last axis to zero mean and unit variance, then applies
/// `gain` and `bias`.
pub fn layer_norm<T: Real>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    layer_norm_parts(x, gain, bias, eps).map(|p| p.out)
}

/// `x[.., k] · w[k x n] + b[n]`.
pub fn linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (k, n) = as_matrix("linear", w)?;
    if x.last_dim() != k || b.len() != n {
        return Err(Error::shape(
            "linear",
            format!(
                "x last axis {} , w [{k}x{n}], b {}",
                x.last_dim(),
                b.len()
            ),
        ));
    }
    let flat = Tensor::new(vec![x.rows(), k], x.data.clone())?;
    let y = add_row(&matmul(&flat, w)?, &b.data)?;
    let mut shape = x.shape.clone();
    *shape.last_mut().expect("linear input has a last axis") = n;
    Tensor::new(shape, y.data)
}

/// Per-token attention of one query frame over a window of key/value frames.
///
/// `q`, every key and every value are `[S x C]`; token `s` of the query only
/// attends to token `s` of each window frame. Returns the attended values
/// `[S x C]` and the attention weights `[S x w]`.
pub fn attend_tokens<T: Real>(
    q: &Tensor<T>,
    keys: &[&Tensor<T>],
    values: &[&Tensor<T>],
) -> Result<(Tensor<T>, Tensor<T>)> {
    let w = keys.len();
    if w == 0 {
        return Err(Error::EmptyWindow);
    }
    if values.len() != w {
        return Err(Error::shape("attend", "keys and values differ in length"));
    }
    let (s, c) = as_matrix("attend", q)?;
    for t in keys.iter().chain(values) {
        if t.shape != q.shape {
            return Err(Error::shape(
                "attend",
                format!("window entry {:?} vs query {:?}", t.shape, q.shape),
            ));
        }
    }
    let scale = T::one() / T::lit(c as f64).sqrt();
    let mut weights = vec![T::zero(); s * w];
    let mut out = vec![T::zero(); s * c];
    for tok in 0..s {
        let qrow = q.row(tok);
        let wrow = &mut weights[tok * w..(tok + 1) * w];
        for (slot, k) in wrow.iter_mut().zip(keys) {
            let krow = k.row(tok);
            *slot = qrow.iter().zip(krow).map(|(&a, &b)| a * b).sum::<T>() * scale;
        }
        softmax_in_place(wrow);
        let orow = &mut out[tok * c..(tok + 1) * c];
        for (&a, v) in wrow.iter().zip(values) {
            for (o, &vv) in orow.iter_mut().zip(v.row(tok)) {
                *o = *o + a * vv;
            }
        }
    }
    Ok((Tensor::new(vec![s, c], out)?, Tensor::new(vec![s, w], weights)?))
}
