//! Dense row-major tensors and the forward kernels shared by the autodiff graph.
//!
//! Everything here is generic over [`Scalar`] so the same model code runs in
//! `f32` for training and `f64` for finite-difference gradient checks.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }
    fn f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn row(data: Vec<T>) -> Self {
        Self {
            shape: vec![1, data.len()],
            data,
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("from_rows", &[cols], &[r.len()]));
            }
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// View as a matrix: rank 0 is 1×1, rank 1 is 1×n, higher ranks fold the
    /// leading axes into rows.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => {
                let cols = *self.shape.last().unwrap();
                let rows = self.shape[..self.shape.len() - 1].iter().product();
                (rows, cols)
            }
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().0
    }

    pub fn cols(&self) -> usize {
        self.dims2().1
    }

    pub fn row_slice(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn get2(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, &shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::of(x.f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = self.dims2();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self {
            shape: vec![c, r],
            data: out,
        }
    }
}

/// `a[m×k] · b[k×n]`, accumulating into `out` (which must be m×n).
pub(crate) fn gemm_acc<T: Scalar>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2();
    let (k2, n) = b.dims2();
    if k != k2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![T::zero(); m * n];
    gemm_acc(&a.data, &b.data, &mut out, m, k, n);
    Tensor::matrix(m, n, out)
}

pub(crate) fn softmax_row<T: Scalar>(row: &mut [T], valid: usize) {
    let max = row[..valid]
        .iter()
        .copied()
        .fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in row[..valid].iter_mut() {
        *x = (*x - max).exp();
        sum = sum + *x;
    }
    for x in row[..valid].iter_mut() {
        *x = *x / sum;
    }
    for x in row[valid..].iter_mut() {
        *x = T::zero();
    }
}

/// Softmax along `axis`, max-subtracted.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let rank = x.shape().len().max(1);
    if axis >= rank {
        return Err(Error::Invalid(format!(
            "softmax axis {axis} invalid for shape {:?}",
            x.shape()
        )));
    }
    let shape: Vec<usize> = if x.shape().is_empty() {
        vec![1]
    } else {
        x.shape().to_vec()
    };
    let extent = shape[axis];
    if extent == 0 {
        return Err(Error::Invalid("softmax over an empty axis".into()));
    }
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = x.data().to_vec();
    let mut buf = vec![T::zero(); extent];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * extent * inner + i;
            for (e, b) in buf.iter_mut().enumerate() {
                *b = out[base + e * inner];
            }
            softmax_row(&mut buf, extent);
            for (e, b) in buf.iter().enumerate() {
                out[base + e * inner] = *b;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Per-row normalization followed by `gain ⊙ z + bias`.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let (r, d) = x.dims2();
    if d == 0 {
        return Err(Error::Invalid("layer_norm over zero-width rows".into()));
    }
    if gain.len() != d || bias.len() != d {
        return Err(Error::shape("layer_norm", x.shape(), gain.shape()));
    }
    let mut out = vec![T::zero(); r * d];
    for i in 0..r {
        let (z, _) = normalize_row(&x.data()[i * d..(i + 1) * d], eps);
        for j in 0..d {
            out[i * d + j] = gain.data()[j] * z[j] + bias.data()[j];
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Returns the zero-mean unit-variance row and `1/sqrt(var + eps)`.
pub(crate) fn normalize_row<T: Scalar>(row: &[T], eps: f64) -> (Vec<T>, T) {
    let d = T::of(row.len() as f64);
    let mean = row.iter().fold(T::zero(), |a, &b| a + b) / d;
    let var = row
        .iter()
        .fold(T::zero(), |a, &b| a + (b - mean) * (b - mean))
        / d;
    let inv = T::one() / (var + T::of(eps)).sqrt();
    (row.iter().map(|&v| (v - mean) * inv).collect(), inv)
}

pub(crate) fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

pub(crate) fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s = row.iter().fold(T::zero(), |a, &v| a + (v - max).exp());
    max + s.ln()
}

/// `-log softmax(logits)[target]` for a single logit vector.
pub fn cross_entropy_logits<T: Scalar>(logits: &Tensor<T>, target: usize) -> Result<T> {
    let v = logits.len();
    if target >= v {
        return Err(Error::Index {
            index: target,
            len: v,
        });
    }
    let lse = log_sum_exp(logits.data());
    Ok((lse - logits.data()[target]).max(T::zero()))
}

/// Log-probabilities of a logit row, in f64.
pub fn log_softmax_f64<T: Scalar>(logits: &[T]) -> Vec<f64> {
    let row: Vec<f64> = logits.iter().map(|x| x.f64()).collect();
    let lse = log_sum_exp(&row);
    row.iter().map(|x| x - lse).collect()
}
