//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every primitive application in order, so node `i` only
//! ever reads nodes `< i`. Model parameters are borrowed from a
//! [`ParamStore`](crate::params::ParamStore) and occupy the first variable
//! slots, which means `ParamId(i)` and `Var(i)` coincide.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{self, gemm_acc, normalize_row, softmax_row, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl From<ParamId> for Var {
    fn from(p: ParamId) -> Self {
        Var(p.0)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleRows(Var, Var),
    Sigmoid(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, eps: f64 },
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    GatherRows { table: Var, idx: Vec<usize> },
    Gather { x: Var, idx: Vec<usize> },
    GroupMax { x: Var, argmax: Vec<Option<usize>> },
    MeanRows(Var),
    Sum(Var),
    CrossEntropy { logits: Var, targets: Vec<usize> },
    BceMean { p: Var, labels: Vec<f64>, eps: f64 },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'a, T: Scalar> {
    params: &'a [Tensor<T>],
    params_require_grad: bool,
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by variable.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
    n_params: usize,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: impl Into<Var>) -> Option<Tensor<T>> {
        let v = v.into();
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[v.0].clone(), g.clone()).unwrap())
    }

    /// Parameter gradients in store order; `None` where a parameter was
    /// unreachable from the loss.
    pub fn param_grads(&self) -> Vec<Option<Tensor<T>>> {
        (0..self.n_params).map(|i| self.get(Var(i))).collect()
    }
}

impl<'a, T: Scalar> Default for Graph<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new() -> Self {
        Self {
            params: &[],
            params_require_grad: false,
            nodes: Vec::new(),
        }
    }

    /// A graph whose first variables are the store's parameters.
    pub fn with_params(store: &'a ParamStore<T>, requires_grad: bool) -> Self {
        Self {
            params: store.tensors(),
            params_require_grad: requires_grad,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.params.len() + self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        if v.0 < self.params.len() {
            &self.params[v.0]
        } else {
            &self.nodes[v.0 - self.params.len()].value
        }
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        if v.0 < self.params.len() {
            self.params_require_grad
        } else {
            self.nodes[v.0 - self.params.len()].requires_grad
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.len() - 1)
    }

    fn derived(&mut self, value: Tensor<T>, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|&v| self.requires_grad(v));
        self.push(value, op, rg)
    }

    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    pub fn param(&self, p: ParamId) -> Var {
        Var(p.0)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn rows(&self, v: Var) -> usize {
        self.value(v).rows()
    }

    pub fn cols(&self, v: Var) -> usize {
        self.value(v).cols()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.derived(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.derived(out, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.dims2() != y.dims2() {
            return Err(Error::shape("add", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.derived(out, Op::Add(a, b), &[a, b]))
    }

    /// Adds a length-`cols` vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        let (m, n) = x.dims2();
        if r.len() != n {
            return Err(Error::shape("add_row", x.shape(), r.shape()));
        }
        let mut data = x.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] = data[i * n + j] + r.data()[j];
            }
        }
        let out = Tensor::matrix(m, n, data)?;
        Ok(self.derived(out, Op::AddRow(a, row), &[a, row]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.dims2() != y.dims2() {
            return Err(Error::shape("mul", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.derived(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let cs = T::of(c);
        let out = self.value(a).map(|v| v * cs);
        self.derived(out, Op::Scale(a, c), &[a])
    }

    /// Multiplies row `i` of `a` by element `i` of `s`.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (x, sv) = (self.value(a), self.value(s));
        let (m, n) = x.dims2();
        if sv.len() != m {
            return Err(Error::shape("scale_rows", x.shape(), sv.shape()));
        }
        let mut data = x.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] = data[i * n + j] * sv.data()[i];
            }
        }
        let out = Tensor::matrix(m, n, data)?;
        Ok(self.derived(out, Op::ScaleRows(a, s), &[a, s]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = tensor::sigmoid(self.value(a));
        self.derived(out, Op::Sigmoid(a), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| gelu_fwd(x).0);
        self.derived(out, Op::Gelu(a), &[a])
    }

    /// Softmax along the last axis. With `causal`, row `i` only sees columns
    /// `0..=i + (cols - rows)`; masked entries are exactly zero.
    pub fn softmax_rows(&mut self, a: Var, causal: bool) -> Result<Var> {
        let x = self.value(a);
        let (m, n) = x.dims2();
        if n == 0 {
            return Err(Error::Invalid("softmax over an empty axis".into()));
        }
        if causal && m > n {
            return Err(Error::shape("causal softmax", x.shape(), &[m, n]));
        }
        let mut data = x.data().to_vec();
        for i in 0..m {
            let valid = if causal { n - m + i + 1 } else { n };
            softmax_row(&mut data[i * n..(i + 1) * n], valid);
        }
        let out = Tensor::matrix(m, n, data)?;
        Ok(self.derived(out, Op::Softmax(a), &[a]))
    }

    /// Softmax along `axis` of a matrix (0 = down columns, 1 = along rows).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        match axis {
            1 => self.softmax_rows(a, false),
            0 => {
                let t = self.transpose(a);
                let s = self.softmax_rows(t, false)?;
                Ok(self.transpose(s))
            }
            _ => Err(Error::Invalid(format!("softmax axis {axis} out of range"))),
        }
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let out = tensor::layer_norm(self.value(x), self.value(gain), self.value(bias), eps)?;
        let out = out.reshape(vec![self.rows(x), self.cols(x)])?;
        Ok(self.derived(out, Op::LayerNorm { x, gain, bias, eps }, &[x, gain, bias]))
    }

    /// Stacks matrices along the row axis. Zero-row parts are allowed.
    pub fn concat_rows(&mut self, parts: &[Var], cols: usize) -> Result<Var> {
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            let (r, c) = v.dims2();
            if r == 0 {
                continue;
            }
            if c != cols {
                return Err(Error::shape("concat_rows", &[r, c], &[cols]));
            }
            rows += r;
            data.extend_from_slice(v.data());
        }
        let out = Tensor::matrix(rows, cols, data)?;
        Ok(self.derived(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        let (r, c) = v.dims2();
        if start + len > r {
            return Err(Error::Index {
                index: start + len,
                len: r,
            });
        }
        let out = Tensor::matrix(len, c, v.data()[start * c..(start + len) * c].to_vec())?;
        Ok(self.derived(out, Op::SliceRows { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.rows(parts[0]);
        let widths: Vec<usize> = parts.iter().map(|&p| self.cols(p)).collect();
        let total: usize = widths.iter().sum();
        let mut data = vec![T::zero(); rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(Error::shape("concat_cols", &[rows], v.shape()));
            }
            for i in 0..rows {
                data[i * total + off..i * total + off + w].copy_from_slice(v.row_slice(i));
            }
            off += w;
        }
        let out = Tensor::matrix(rows, total, data)?;
        Ok(self.derived(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        let (r, c) = v.dims2();
        if start + len > c {
            return Err(Error::Index {
                index: start + len,
                len: c,
            });
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&v.row_slice(i)[start..start + len]);
        }
        let out = Tensor::matrix(r, len, data)?;
        Ok(self.derived(out, Op::SliceCols { x, start }, &[x]))
    }

    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(table);
        let (r, c) = v.dims2();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(Error::Index { index: i, len: r });
            }
            data.extend_from_slice(v.row_slice(i));
        }
        let out = Tensor::matrix(idx.len(), c, data)?;
        Ok(self.derived(
            out,
            Op::GatherRows {
                table,
                idx: idx.to_vec(),
            },
            &[table],
        ))
    }

    /// Picks flat elements of `x` into a `1×k` row.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let mut data = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= v.len() {
                return Err(Error::Index {
                    index: i,
                    len: v.len(),
                });
            }
            data.push(v.data()[i]);
        }
        let out = Tensor::matrix(1, idx.len(), data)?;
        Ok(self.derived(
            out,
            Op::Gather {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        ))
    }

    /// Max of `x` over each index group; empty groups take `fill`.
    pub fn group_max(&mut self, x: Var, groups: &[Vec<usize>], fill: f64) -> Result<Var> {
        let v = self.value(x);
        let mut data = Vec::with_capacity(groups.len());
        let mut argmax = Vec::with_capacity(groups.len());
        for g in groups {
            let mut best: Option<usize> = None;
            for &i in g {
                if i >= v.len() {
                    return Err(Error::Index {
                        index: i,
                        len: v.len(),
                    });
                }
                if best.map_or(true, |b| v.data()[i] > v.data()[b]) {
                    best = Some(i);
                }
            }
            data.push(best.map_or(T::of(fill), |b| v.data()[b]));
            argmax.push(best);
        }
        let out = Tensor::matrix(1, groups.len(), data)?;
        Ok(self.derived(out, Op::GroupMax { x, argmax }, &[x]))
    }

    /// Column means as a `1×cols` row; zero rows give zeros.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let (r, c) = v.dims2();
        let mut data = vec![T::zero(); c];
        if r > 0 {
            let inv = T::one() / T::of(r as f64);
            for i in 0..r {
                for (d, &x) in data.iter_mut().zip(v.row_slice(i)) {
                    *d = *d + x;
                }
            }
            for d in &mut data {
                *d = *d * inv;
            }
        }
        let out = Tensor::row(data);
        self.derived(out, Op::MeanRows(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self
            .value(a)
            .data()
            .iter()
            .fold(T::zero(), |acc, &x| acc + x);
        self.derived(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Sum over rows of `-log softmax(logits[i])[targets[i]]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let v = self.value(logits);
        let (m, n) = v.dims2();
        if targets.len() != m {
            return Err(Error::shape("cross_entropy", v.shape(), &[targets.len()]));
        }
        let mut total = T::zero();
        for (i, &t) in targets.iter().enumerate() {
            let row = Tensor::row(v.row_slice(i).to_vec());
            if t >= n {
                return Err(Error::Index { index: t, len: n });
            }
            total = total + tensor::cross_entropy_logits(&row, t)?;
        }
        Ok(self.derived(
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        ))
    }

    /// Mean binary cross-entropy of probabilities `p` (clamped to
    /// `[eps, 1-eps]`) against labels in {0,1}. The clamp is treated as the
    /// identity in the backward pass.
    pub fn bce_mean(&mut self, p: Var, labels: &[f64], eps: f64) -> Result<Var> {
        let v = self.value(p);
        if v.len() != labels.len() {
            return Err(Error::shape("bce", v.shape(), &[labels.len()]));
        }
        if labels.is_empty() {
            return Err(Error::Invalid("bce over an empty attribute set".into()));
        }
        let n = labels.len() as f64;
        let mut total = 0.0;
        for (&pi, &yi) in v.data().iter().zip(labels) {
            let q = pi.f64().clamp(eps, 1.0 - eps);
            total -= yi * q.ln() + (1.0 - yi) * (1.0 - q).ln();
        }
        Ok(self.derived(
            Tensor::scalar(T::of(total / n)),
            Op::BceMean {
                p,
                labels: labels.to_vec(),
                eps,
            },
            &[p],
        ))
    }

    /// Reverse pass from a scalar `loss`, accumulating additively over fan-out.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let total = self.len();
        let np = self.params.len();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; total];
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (np..=loss.0).rev() {
            let node = &self.nodes[idx - np];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            self.backward_node(&node.op, &node.value, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        let shapes = (0..total).map(|i| self.value(Var(i)).shape().to_vec()).collect();
        Ok(Gradients {
            grads,
            shapes,
            n_params: np,
        })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.requires_grad(v) {
            return None;
        }
        let n = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn backward_node(&self, op: &Op, y: &Tensor<T>, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2();
                let n = bv.cols();
                if let Some(ga) = self.acc(grads, *a) {
                    // dA = dY · Bᵀ
                    let bt = bv.transpose();
                    gemm_acc(gy, bt.data(), ga, m, n, k);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    // dB = Aᵀ · dY
                    let at = av.transpose();
                    gemm_acc(at.data(), gy, gb, k, m, n);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = y.dims2();
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..r {
                        for j in 0..c {
                            ga[j * r + i] = ga[j * r + i] + gy[i * c + j];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(g) = self.acc(grads, *v) {
                        add_into(g, gy);
                    }
                }
            }
            Op::AddRow(a, r) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, gy);
                }
                let n = y.cols();
                if let Some(gr) = self.acc(grads, *r) {
                    for (i, &g) in gy.iter().enumerate() {
                        gr[i % n] = gr[i % n] + g;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..gy.len() {
                        ga[i] = ga[i] + gy[i] * bv[i];
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for i in 0..gy.len() {
                        gb[i] = gb[i] + gy[i] * av[i];
                    }
                }
            }
            Op::Scale(a, c) => {
                let c = T::of(*c);
                if let Some(ga) = self.acc(grads, *a) {
                    for (g, &d) in ga.iter_mut().zip(gy) {
                        *g = *g + d * c;
                    }
                }
            }
            Op::ScaleRows(a, s) => {
                let (av, sv) = (self.value(*a).data(), self.value(*s).data());
                let n = y.cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..gy.len() {
                        ga[i] = ga[i] + gy[i] * sv[i / n];
                    }
                }
                if let Some(gs) = self.acc(grads, *s) {
                    for i in 0..gy.len() {
                        gs[i / n] = gs[i / n] + gy[i] * av[i];
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for (i, &s) in y.data().iter().enumerate() {
                        ga[i] = ga[i] + gy[i] * s * (T::one() - s);
                    }
                }
            }
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..gy.len() {
                        ga[i] = ga[i] + gy[i] * gelu_fwd(x[i]).1;
                    }
                }
            }
            Op::Softmax(x) => {
                let (m, n) = y.dims2();
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..m {
                        let yr = &y.data()[i * n..(i + 1) * n];
                        let gr = &gy[i * n..(i + 1) * n];
                        let dot = yr.iter().zip(gr).fold(T::zero(), |a, (&p, &q)| a + p * q);
                        for j in 0..n {
                            gx[i * n + j] = gx[i * n + j] + yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let xv = self.value(*x);
                let gv = self.value(*gain).data();
                let (m, d) = xv.dims2();
                let dn = T::of(d as f64);
                let mut dx = vec![T::zero(); m * d];
                let mut dg = vec![T::zero(); d];
                let mut db = vec![T::zero(); d];
                for i in 0..m {
                    let (z, inv) = normalize_row(xv.row_slice(i), *eps);
                    let gr = &gy[i * d..(i + 1) * d];
                    let dz: Vec<T> = (0..d).map(|j| gr[j] * gv[j]).collect();
                    let mean_dz = dz.iter().fold(T::zero(), |a, &b| a + b) / dn;
                    let mean_dzz = dz
                        .iter()
                        .zip(&z)
                        .fold(T::zero(), |a, (&p, &q)| a + p * q)
                        / dn;
                    for j in 0..d {
                        dx[i * d + j] = inv * (dz[j] - mean_dz - z[j] * mean_dzz);
                        dg[j] = dg[j] + gr[j] * z[j];
                        db[j] = db[j] + gr[j];
                    }
                }
                for (v, g) in [(x, dx), (gain, dg), (bias, db)] {
                    if let Some(acc) = self.acc(grads, *v) {
                        add_into(acc, &g);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.value(p).rows() == 0 {
                        continue;
                    }
                    if let Some(g) = self.acc(grads, p) {
                        add_into(g, &gy[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::SliceRows { x, start } => {
                let c = y.cols();
                if let Some(g) = self.acc(grads, *x) {
                    add_into(&mut g[start * c..start * c + gy.len()], gy);
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = y.dims2();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if let Some(g) = self.acc(grads, p) {
                        for i in 0..rows {
                            add_into(
                                &mut g[i * w..(i + 1) * w],
                                &gy[i * total + off..i * total + off + w],
                            );
                        }
                    }
                    off += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (rows, len) = y.dims2();
                let c = self.value(*x).cols();
                if let Some(g) = self.acc(grads, *x) {
                    for i in 0..rows {
                        add_into(
                            &mut g[i * c + start..i * c + start + len],
                            &gy[i * len..(i + 1) * len],
                        );
                    }
                }
            }
            Op::GatherRows { table, idx } => {
                let c = y.cols();
                if let Some(g) = self.acc(grads, *table) {
                    for (k, &r) in idx.iter().enumerate() {
                        add_into(&mut g[r * c..(r + 1) * c], &gy[k * c..(k + 1) * c]);
                    }
                }
            }
            Op::Gather { x, idx } => {
                if let Some(g) = self.acc(grads, *x) {
                    for (k, &i) in idx.iter().enumerate() {
                        g[i] = g[i] + gy[k];
                    }
                }
            }
            Op::GroupMax { x, argmax } => {
                if let Some(g) = self.acc(grads, *x) {
                    for (k, a) in argmax.iter().enumerate() {
                        if let Some(i) = a {
                            g[*i] = g[*i] + gy[k];
                        }
                    }
                }
            }
            Op::MeanRows(a) => {
                let (r, c) = self.value(*a).dims2();
                if r == 0 {
                    return;
                }
                let inv = T::one() / T::of(r as f64);
                if let Some(g) = self.acc(grads, *a) {
                    for i in 0..r {
                        for j in 0..c {
                            g[i * c + j] = g[i * c + j] + gy[j] * inv;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(g) = self.acc(grads, *a) {
                    for v in g.iter_mut() {
                        *v = *v + gy[0];
                    }
                }
            }
            Op::CrossEntropy { logits, targets } => {
                let lv = self.value(*logits);
                let n = lv.cols();
                if let Some(g) = self.acc(grads, *logits) {
                    for (i, &t) in targets.iter().enumerate() {
                        let mut row = lv.row_slice(i).to_vec();
                        softmax_row(&mut row, n);
                        row[t] = row[t] - T::one();
                        for j in 0..n {
                            g[i * n + j] = g[i * n + j] + gy[0] * row[j];
                        }
                    }
                }
            }
            Op::BceMean { p, labels, eps } => {
                let pv = self.value(*p).data();
                let n = labels.len() as f64;
                if let Some(g) = self.acc(grads, *p) {
                    for i in 0..labels.len() {
                        let q = pv[i].f64().clamp(*eps, 1.0 - *eps);
                        let d = -(labels[i] / q - (1.0 - labels[i]) / (1.0 - q)) / n;
                        g[i] = g[i] + gy[0] * T::of(d);
                    }
                }
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

/// tanh-approximated GELU and its derivative.
fn gelu_fwd<T: Scalar>(x: T) -> (T, T) {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let k = T::of(0.044715);
    let half = T::of(0.5);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let y = half * x * (T::one() + t);
    let dinner = c * (T::one() + T::of(3.0) * k * x * x);
    let dy = half * (T::one() + t) + half * x * (T::one() - t * t) * dinner;
    (y, dy)
}
