//! Tape-based reverse-mode differentiation.
//!
//! Every primitive appends one node holding its forward value and whatever
//! it needs for the backward pass. Nodes are only ever appended, so the
//! recording order is a valid evaluation order and `backward` walks it once
//! in reverse.

use std::borrow::Cow;
use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::scalar::gemm;
use crate::numerics::{Scalar, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    Sigmoid(Var),
    Dropout { x: Var, mask: Vec<T> },
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    GatherRows { table: Var, idx: Vec<usize> },
    PairDot { q: Var, pairs: Var },
    GatherScalar { table: Var, idx: Vec<usize> },
    CrossEntropy {
        logits: Var,
        probs: Vec<T>,
        targets: Vec<Option<usize>>,
        count: usize,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<T>,
        valid: Vec<bool>,
        pos_weight: T,
        count: usize,
    },
    Sum(Var),
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
    param: Option<String>,
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients<T: Scalar> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new() -> Self {
        Gradients {
            map: BTreeMap::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.map.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor<T>) {
        self.map.insert(name.into(), grad);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Element-wise accumulate; names missing on one side are adopted.
    pub fn accumulate(&mut self, other: &Gradients<T>) -> Result<()> {
        for (name, g) in &other.map {
            match self.map.get_mut(name) {
                Some(mine) => {
                    if mine.shape() != g.shape() {
                        return Err(Error::dim("accumulate", mine.shape(), g.shape()));
                    }
                    for (a, &b) in mine.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => {
                    self.map.insert(name.clone(), g.clone());
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for g in self.map.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn global_norm(&self) -> T {
        self.map
            .values()
            .flat_map(|g| g.data().iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.map.values().all(Tensor::is_finite)
    }
}

/// Recording of one forward computation.
pub struct Graph<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
}

impl<T: Scalar> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn gelu_parts<T: Scalar>(x: T) -> (T, T) {
    // tanh approximation; returns (value, derivative)
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let a = T::lit(0.044715);
    let half = T::lit(0.5);
    let u = c * (x + a * x * x * x);
    let th = u.tanh();
    let value = half * x * (T::one() + th);
    let du = c * (T::one() + T::lit(3.0) * a * x * x);
    let deriv = half * (T::one() + th) + half * x * (T::one() - th * th) * du;
    (value, deriv)
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// log(1 + exp(x)) without overflow.
fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
            needs_grad: false,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Borrow a named parameter into the graph.
    pub fn param(&mut self, name: &str, value: &'a Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            needs_grad: true,
            param: Some(name.to_string()),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param_owned(&mut self, name: &str, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
            needs_grad: true,
            param: Some(name.to_string()),
        });
        Var(self.nodes.len() - 1)
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::dim(op, s, &[]));
        }
        Ok((s[0], s[1]))
    }

    /// `a [m×k] · b [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = Tensor::zeros(&[m, n]);
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, out.data_mut(), false);
        Ok(self.push(out, Op::MatMul { a, b, trans_b: false }, &[a, b]))
    }

    /// `a [m×k] · bᵀ` with `b [n×k]`; the linear-layer form `x Wᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul_nt")?;
        let (n, k2) = self.matrix_dims(b, "matmul_nt")?;
        if k != k2 {
            return Err(Error::dim("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = Tensor::zeros(&[m, n]);
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), true, out.data_mut(), false);
        Ok(self.push(out, Op::MatMul { a, b, trans_b: true }, &[a, b]))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(name, self.shape(a), self.shape(b)));
        }
        let va = self.value(a);
        let data = va.data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a length-`n` vector to every row of `a [..×n]`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let cols = self.value(a).cols();
        if self.value(bias).numel() != cols {
            return Err(Error::dim("add_bias", self.shape(a), self.shape(bias)));
        }
        let b = self.value(bias).data().to_vec();
        let va = self.value(a);
        let data = va
            .data()
            .chunks(cols.max(1))
            .flat_map(|row| row.iter().zip(&b).map(|(&x, &y)| x + y))
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddBias(a, bias), &[a, bias]))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| gelu_parts(x).0);
        self.push(out, Op::Gelu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    /// Inverted dropout; identity when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let n = self.value(a).numel();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let va = self.value(a);
        let data = va.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Dropout { x: a, mask }, &[a]))
    }

    /// Row-wise softmax over the last axis. Entries with `mask == false`
    /// get exactly zero weight; a row with no valid entry is all zeros.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let vx = self.value(x);
        if let Some(m) = mask {
            if m.len() != vx.numel() {
                return Err(Error::dim("softmax mask", vx.shape(), &[m.len()]));
            }
        }
        let cols = vx.cols();
        if cols == 0 {
            return Err(Error::Contract("softmax over empty axis".into()));
        }
        let mut out = vec![T::zero(); vx.numel()];
        for (r, row) in vx.data().chunks(cols).enumerate() {
            let valid = |j: usize| mask.is_none_or(|m| m[r * cols + j]);
            let mut max = T::neg_infinity();
            for (j, &v) in row.iter().enumerate() {
                if v.is_nan() {
                    return Err(Error::Numeric("NaN input to softmax".into()));
                }
                if valid(j) && v > max {
                    max = v;
                }
            }
            if max == T::neg_infinity() {
                continue;
            }
            let o = &mut out[r * cols..(r + 1) * cols];
            let mut total = T::zero();
            for (j, &v) in row.iter().enumerate() {
                if valid(j) {
                    let e = (v - max).exp();
                    o[j] = e;
                    total += e;
                }
            }
            for v in o.iter_mut() {
                *v /= total;
            }
        }
        let out = Tensor::new(vx.shape().to_vec(), out)?;
        Ok(self.push(out, Op::Softmax(x), &[x]))
    }

    /// Normalize each row to zero mean and unit variance, then apply the
    /// affine `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Config(format!("layer_norm eps must be positive, got {eps}")));
        }
        let vx = self.value(x);
        let h = vx.cols();
        if self.value(gamma).numel() != h || self.value(beta).numel() != h {
            return Err(Error::dim("layer_norm", vx.shape(), self.shape(gamma)));
        }
        let eps = T::lit(eps);
        let hn = T::lit(h as f64);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Vec::with_capacity(vx.numel());
        let mut inv_std = Vec::with_capacity(vx.rows());
        let mut out = Vec::with_capacity(vx.numel());
        for row in vx.data().chunks(h) {
            let mean = row.iter().copied().sum::<T>() / hn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / hn;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let xh = (v - mean) * is;
                xhat.push(xh);
                out.push(g[j] * xh + b[j]);
            }
        }
        let out = Tensor::new(vx.shape().to_vec(), out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(x, "slice_cols")?;
        if start + len > cols {
            return Err(Error::dim("slice_cols", self.shape(x), &[start, len]));
        }
        let vx = self.value(x);
        let data = (0..rows)
            .flat_map(|r| vx.row(r)[start..start + len].iter().copied())
            .collect();
        let out = Tensor::new(vec![rows, len], data)?;
        Ok(self.push(out, Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.matrix_dims(parts[0], "concat_cols")?.0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.matrix_dims(p, "concat_cols")?;
            if r != rows {
                return Err(Error::dim("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
            total += c;
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.matrix_dims(parts[0], "concat_rows")?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.matrix_dims(p, "concat_rows")?;
            if c != cols {
                return Err(Error::dim("concat_rows", self.shape(parts[0]), self.shape(p)));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Row lookup `table[idx[r]]`; the embedding primitive.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let (n, h) = self.matrix_dims(table, "gather_rows")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Data(format!("row index {bad} out of range for table with {n} rows")));
        }
        let vt = self.value(table);
        let data = idx.iter().flat_map(|&i| vt.row(i).iter().copied()).collect();
        let out = Tensor::new(vec![idx.len(), h], data)?;
        Ok(self.push(
            out,
            Op::GatherRows {
                table,
                idx: idx.to_vec(),
            },
            &[table],
        ))
    }

    /// `out[i][j] = q_i · pairs[i·N + j]` for `q [N×d]`, `pairs [N²×d]`.
    pub fn pair_dot(&mut self, q: Var, pairs: Var) -> Result<Var> {
        let (n, d) = self.matrix_dims(q, "pair_dot")?;
        let (np, dp) = self.matrix_dims(pairs, "pair_dot")?;
        if np != n * n || dp != d {
            return Err(Error::dim("pair_dot", self.shape(q), self.shape(pairs)));
        }
        let vq = self.value(q).data();
        let vp = self.value(pairs).data();
        let mut out = vec![T::zero(); n * n];
        for i in 0..n {
            let qi = &vq[i * d..(i + 1) * d];
            for j in 0..n {
                let p = &vp[(i * n + j) * d..(i * n + j + 1) * d];
                out[i * n + j] = qi.iter().zip(p).map(|(&a, &b)| a * b).sum();
            }
        }
        let out = Tensor::new(vec![n, n], out)?;
        Ok(self.push(out, Op::PairDot { q, pairs }, &[q, pairs]))
    }

    /// Scalar table lookup producing a tensor of `shape`.
    pub fn gather_scalar(&mut self, table: Var, idx: &[usize], shape: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        if shape.iter().product::<usize>() != idx.len() {
            return Err(Error::dim("gather_scalar", shape, &[idx.len()]));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= vt.numel()) {
            return Err(Error::Data(format!("bucket {bad} out of range for table of {}", vt.numel())));
        }
        let data = idx.iter().map(|&i| vt.data()[i]).collect();
        let out = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push(
            out,
            Op::GatherScalar {
                table,
                idx: idx.to_vec(),
            },
            &[table],
        ))
    }

    /// Mean softmax cross-entropy over rows whose target is `Some`.
    ///
    /// `valid` (same size as `logits`) excludes candidate classes; an
    /// empty set of counted rows yields a loss of exactly zero.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>], valid: Option<&[bool]>) -> Result<Var> {
        let vl = self.value(logits);
        let (rows, cols) = (vl.rows(), vl.cols());
        if targets.len() != rows {
            return Err(Error::Contract(format!(
                "cross_entropy: {} targets for {rows} rows",
                targets.len()
            )));
        }
        if let Some(m) = valid {
            if m.len() != vl.numel() {
                return Err(Error::dim("cross_entropy mask", vl.shape(), &[m.len()]));
            }
        }
        let mut probs = vec![T::zero(); vl.numel()];
        let mut total = T::zero();
        let mut count = 0usize;
        for (r, target) in targets.iter().enumerate() {
            let Some(t) = *target else { continue };
            let ok = |j: usize| valid.is_none_or(|m| m[r * cols + j]);
            if t >= cols || !ok(t) {
                return Err(Error::Contract(format!("cross_entropy: target {t} invalid in row {r}")));
            }
            let row = vl.row(r);
            let mut max = T::neg_infinity();
            for (j, &v) in row.iter().enumerate() {
                if ok(j) && v > max {
                    max = v;
                }
            }
            let mut z = T::zero();
            for (j, &v) in row.iter().enumerate() {
                if ok(j) {
                    let e = (v - max).exp();
                    probs[r * cols + j] = e;
                    z += e;
                }
            }
            for p in &mut probs[r * cols..(r + 1) * cols] {
                *p /= z;
            }
            total += z.ln() + max - row[t];
            count += 1;
        }
        if !total.is_finite() {
            return Err(Error::Numeric("non-finite cross-entropy".into()));
        }
        let loss = if count == 0 {
            T::zero()
        } else {
            total / T::lit(count as f64)
        };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
                count,
            },
            &[logits],
        ))
    }

    /// Mean binary cross-entropy on raw logits over `valid` entries, with
    /// positive examples weighted by `pos_weight`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T], valid: &[bool], pos_weight: T) -> Result<Var> {
        let vl = self.value(logits);
        if targets.len() != vl.numel() || valid.len() != vl.numel() {
            return Err(Error::dim("bce_with_logits", vl.shape(), &[targets.len()]));
        }
        let mut total = T::zero();
        let mut count = 0usize;
        for ((&x, &t), &ok) in vl.data().iter().zip(targets).zip(valid) {
            if !ok {
                continue;
            }
            // -[w t log σ(x) + (1 - t) log(1 - σ(x))]
            total += pos_weight * t * softplus(-x) + (T::one() - t) * softplus(x);
            count += 1;
        }
        let loss = if count == 0 {
            T::zero()
        } else {
            total / T::lit(count as f64)
        };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
                valid: valid.to_vec(),
                pos_weight,
                count,
            },
            &[logits],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Reverse sweep from a scalar `loss`. Every parameter registered in the
    /// graph gets an entry; parameters the loss does not reach get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients::new();
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Some(name) = &node.param {
                let t = Tensor::new(node.value.shape().to_vec(), g)?;
                match out.map.get_mut(name) {
                    Some(prev) => {
                        for (a, &b) in prev.data_mut().iter_mut().zip(t.data()) {
                            *a += b;
                        }
                    }
                    None => {
                        out.map.insert(name.clone(), t);
                    }
                }
                continue;
            }
            self.backprop_node(i, &g, &mut grads)?;
        }
        for node in &self.nodes {
            if let Some(name) = &node.param {
                out.map
                    .entry(name.clone())
                    .or_insert_with(|| Tensor::zeros(node.value.shape()));
            }
        }
        Ok(out)
    }

    fn buf<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.numel()]))
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = node.value.shape()[1];
                if let Some(da) = self.buf(grads, *a) {
                    // dA = G · op(B)ᵀ
                    gemm(m, n, k, g, false, vb.data(), !*trans_b, da, true);
                }
                if let Some(db) = self.buf(grads, *b) {
                    if *trans_b {
                        // B is [n×k]: dB = Gᵀ · A
                        gemm(n, m, k, g, true, va.data(), false, db, true);
                    } else {
                        // B is [k×n]: dB = Aᵀ · G
                        gemm(k, m, n, va.data(), true, g, false, db, true);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.buf(grads, v) {
                        d.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.buf(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                if let Some(d) = self.buf(grads, *b) {
                    d.iter_mut().zip(g).for_each(|(x, &y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = self.buf(grads, *a) {
                    for ((x, &gy), &bv) in d.iter_mut().zip(g).zip(vb) {
                        *x += gy * bv;
                    }
                }
                if let Some(d) = self.buf(grads, *b) {
                    for ((x, &gy), &av) in d.iter_mut().zip(g).zip(va) {
                        *x += gy * av;
                    }
                }
            }
            Op::AddBias(a, bias) => {
                if let Some(d) = self.buf(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                let cols = self.value(*bias).numel();
                if let Some(d) = self.buf(grads, *bias) {
                    for row in g.chunks(cols.max(1)) {
                        d.iter_mut().zip(row).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(d) = self.buf(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(x, &y)| *x += y * *f);
                }
            }
            Op::Gelu(a) => {
                let va = self.value(*a).data();
                if let Some(d) = self.buf(grads, *a) {
                    for ((x, &gy), &xv) in d.iter_mut().zip(g).zip(va) {
                        *x += gy * gelu_parts(xv).1;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                if let Some(d) = self.buf(grads, *a) {
                    for ((x, &gy), &s) in d.iter_mut().zip(g).zip(y) {
                        *x += gy * s * (T::one() - s);
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(d) = self.buf(grads, *x) {
                    for ((v, &gy), &m) in d.iter_mut().zip(g).zip(mask) {
                        *v += gy * m;
                    }
                }
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let cols = node.value.cols();
                if let Some(d) = self.buf(grads, *x) {
                    for ((dr, gr), yr) in d.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for ((dv, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                            *dv += yv * (gv - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let h = node.value.cols();
                let gm = self.value(*gamma).data().to_vec();
                if let Some(d) = self.buf(grads, *gamma) {
                    for (gr, xr) in g.chunks(h).zip(xhat.chunks(h)) {
                        for ((dv, &gv), &xv) in d.iter_mut().zip(gr).zip(xr) {
                            *dv += gv * xv;
                        }
                    }
                }
                if let Some(d) = self.buf(grads, *beta) {
                    for gr in g.chunks(h) {
                        d.iter_mut().zip(gr).for_each(|(dv, &gv)| *dv += gv);
                    }
                }
                if let Some(d) = self.buf(grads, *x) {
                    let hn = T::lit(h as f64);
                    for (r, ((dr, gr), xr)) in d.chunks_mut(h).zip(g.chunks(h)).zip(xhat.chunks(h)).enumerate() {
                        let mut sum_dxh = T::zero();
                        let mut sum_dxh_xh = T::zero();
                        for j in 0..h {
                            let dxh = gr[j] * gm[j];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xr[j];
                        }
                        let scale = inv_std[r] / hn;
                        for j in 0..h {
                            let dxh = gr[j] * gm[j];
                            dr[j] += scale * (hn * dxh - sum_dxh - xr[j] * sum_dxh_xh);
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let cols = self.value(*x).cols();
                let len = node.value.cols();
                if let Some(d) = self.buf(grads, *x) {
                    for (r, gr) in g.chunks(len).enumerate() {
                        let dst = &mut d[r * cols + start..r * cols + start + len];
                        dst.iter_mut().zip(gr).for_each(|(a, &b)| *a += b);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if let Some(d) = self.buf(grads, p) {
                        for (r, dr) in d.chunks_mut(c).enumerate() {
                            let src = &g[r * total + offset..r * total + offset + c];
                            dr.iter_mut().zip(src).for_each(|(a, &b)| *a += b);
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if let Some(d) = self.buf(grads, p) {
                        d.iter_mut().zip(&g[offset..offset + n]).for_each(|(a, &b)| *a += b);
                    }
                    offset += n;
                }
            }
            Op::Reshape(x) => {
                if let Some(d) = self.buf(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
                }
            }
            Op::GatherRows { table, idx } => {
                let h = node.value.cols();
                if let Some(d) = self.buf(grads, *table) {
                    for (gr, &row) in g.chunks(h).zip(idx) {
                        d[row * h..(row + 1) * h].iter_mut().zip(gr).for_each(|(a, &b)| *a += b);
                    }
                }
            }
            Op::PairDot { q, pairs } => {
                let vq = self.value(*q);
                let (n, dim) = (vq.shape()[0], vq.shape()[1]);
                let vp = self.value(*pairs).data();
                if let Some(d) = self.buf(grads, *q) {
                    for i in 0..n {
                        let di = &mut d[i * dim..(i + 1) * dim];
                        for j in 0..n {
                            let gij = g[i * n + j];
                            let p = &vp[(i * n + j) * dim..(i * n + j + 1) * dim];
                            di.iter_mut().zip(p).for_each(|(a, &b)| *a += gij * b);
                        }
                    }
                }
                if let Some(d) = self.buf(grads, *pairs) {
                    let qd = vq.data();
                    for i in 0..n {
                        let qi = &qd[i * dim..(i + 1) * dim];
                        for j in 0..n {
                            let gij = g[i * n + j];
                            let dp = &mut d[(i * n + j) * dim..(i * n + j + 1) * dim];
                            dp.iter_mut().zip(qi).for_each(|(a, &b)| *a += gij * b);
                        }
                    }
                }
            }
            Op::GatherScalar { table, idx } => {
                if let Some(d) = self.buf(grads, *table) {
                    for (&gv, &k) in g.iter().zip(idx) {
                        d[k] += gv;
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                probs,
                targets,
                count,
            } => {
                if *count == 0 {
                    return Ok(());
                }
                let cols = self.value(*logits).cols();
                let scale = g[0] / T::lit(*count as f64);
                if let Some(d) = self.buf(grads, *logits) {
                    for (r, target) in targets.iter().enumerate() {
                        let Some(t) = *target else { continue };
                        let dr = &mut d[r * cols..(r + 1) * cols];
                        let pr = &probs[r * cols..(r + 1) * cols];
                        dr.iter_mut().zip(pr).for_each(|(a, &p)| *a += scale * p);
                        dr[t] -= scale;
                    }
                }
            }
            Op::BceWithLogits {
                logits,
                targets,
                valid,
                pos_weight,
                count,
            } => {
                if *count == 0 {
                    return Ok(());
                }
                let scale = g[0] / T::lit(*count as f64);
                let vl = self.value(*logits).data();
                if let Some(d) = self.buf(grads, *logits) {
                    for e in 0..vl.len() {
                        if !valid[e] {
                            continue;
                        }
                        let s = sigmoid(vl[e]);
                        let t = targets[e];
                        let grad = -*pos_weight * t * (T::one() - s) + (T::one() - t) * s;
                        d[e] += scale * grad;
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(d) = self.buf(grads, *x) {
                    d.iter_mut().for_each(|a| *a += g[0]);
                }
            }
        }
        Ok(())
    }
}
