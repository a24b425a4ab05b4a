//! Reverse-mode automatic differentiation over an append-only operation tape.
//!
//! Every operation appends a node holding its forward value and enough saved
//! state to replay its adjoint. `backward` walks the nodes in reverse
//! execution order, so each recorded op is visited exactly once per replay.
//! Leaf gradients accumulate across replays until `zero_grad` or `clear`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul_nt_raw, matmul_raw, matmul_tn_raw, transpose_raw, Tensor};

/// Epsilon added to the variance inside `layer_norm`.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Added to squared row norms before cosine normalization.
pub const COSINE_SMOOTHING: f64 = 1e-8;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    MeanRows(Var),
    SoftmaxRows(Var),
    LnClamped(Var, T),
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        normed: Vec<T>,
        inv_std: Vec<T>,
    },
    Mask(Var, Vec<T>),
    Conv1dSame {
        x: Var,
        kernels: Var,
        bias: Var,
    },
    AvgPoolSame {
        x: Var,
        window: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    CosineGram {
        x: Var,
        unit: Vec<T>,
        norms: Vec<T>,
    },
    SymNormalize {
        a: Var,
        scale: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Single-owner record of executed operations.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node and gradient.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient buffer of `v` after `backward`.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.value(v)
            .dims2()
            .map_err(|_| Error::dim(op, format!("expected matrix, got {:?}", self.value(v).shape())))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    // ---- forward operations ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (p, q) = self.dims2(a, "matmul")?;
        let (q2, r) = self.dims2(b, "matmul")?;
        if q != q2 {
            return Err(Error::dim(
                "matmul",
                format!(
                    "inner extents differ: {:?} x {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            ));
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), p, q, r);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(vec![p, r], data)?, Op::MatMul(a, b), rg))
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Adds a vector of length `cols` to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let cols = self.value(x).last_dim();
        if self.value(bias).numel() != cols {
            return Err(Error::dim(
                "add_bias",
                format!("bias {:?} for input {:?}", self.value(bias).shape(), self.value(x).shape()),
            ));
        }
        let b = self.value(bias).data().to_vec();
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_mut(cols) {
            for (v, &bv) in row.iter_mut().zip(&b) {
                *v += bv;
            }
        }
        let rg = self.any_grad(&[x, bias]);
        Ok(self.push(value, Op::AddBias(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Scale(x, c), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose()?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    /// Mean over the row axis: `[p×q] -> [1×q]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (p, q) = self.dims2(x, "mean_rows")?;
        if p == 0 {
            return Err(Error::dim("mean_rows", "no rows"));
        }
        let inv = T::one() / T::of_usize(p);
        let mut out = vec![T::zero(); q];
        for row in self.value(x).data().chunks(q) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o *= inv);
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(vec![1, q], out)?, Op::MeanRows(x), rg))
    }

    /// Row-wise softmax over the last axis, stabilized by max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let value = softmax_rows_value(self.value(x));
        let rg = self.any_grad(&[x]);
        self.push(value, Op::SoftmaxRows(x), rg)
    }

    /// Natural log with inputs clamped from below at `floor`.
    pub fn ln_clamped(&mut self, x: Var, floor: T) -> Var {
        let value = self.value(x).map(|v| v.max(floor).ln());
        let rg = self.any_grad(&[x]);
        self.push(value, Op::LnClamped(x, floor), rg)
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies `gain` and `shift`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if d == 0 {
            return Err(Error::dim("layer_norm", "empty feature axis"));
        }
        if self.value(gain).numel() != d || self.value(shift).numel() != d {
            return Err(Error::dim(
                "layer_norm",
                format!(
                    "gain {:?} / shift {:?} for feature width {d}",
                    self.value(gain).shape(),
                    self.value(shift).shape()
                ),
            ));
        }
        let eps = T::of(LAYER_NORM_EPS);
        let dn = T::of_usize(d);
        let g = self.value(gain).data().to_vec();
        let s = self.value(shift).data().to_vec();
        let xv = self.value(x);
        let rows = xv.numel() / d;
        let mut normed = Vec::with_capacity(xv.numel());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (k, &v) in row.iter().enumerate() {
                let nv = (v - mean) * is;
                normed.push(nv);
                out.push(nv * g[k] + s[k]);
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.any_grad(&[x, gain, shift]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                shift,
                normed,
                inv_std,
            },
            rg,
        ))
    }

    /// Inverted dropout. Identity when `training` is false or `rate` is zero.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Mask(x, mask), rg))
    }

    /// Convolves each of the `n` series in `x [n×L]` with each of the `m` kernels
    /// in `kernels [m×t]`, zero-padded to keep length `L`. Output is `[n×m×L]`.
    pub fn conv1d_same(&mut self, x: Var, kernels: Var, bias: Var) -> Result<Var> {
        let (n, len) = self.dims2(x, "conv1d_same")?;
        let (m, t) = self.dims2(kernels, "conv1d_same")?;
        if t % 2 == 0 {
            return Err(Error::Config(format!("conv kernel size must be odd, got {t}")));
        }
        if len == 0 {
            return Err(Error::dim("conv1d_same", "empty series"));
        }
        if self.value(bias).numel() != m {
            return Err(Error::dim(
                "conv1d_same",
                format!("bias {:?} for {m} kernels", self.value(bias).shape()),
            ));
        }
        let pad = (t - 1) / 2;
        let xs = self.value(x).data();
        let ks = self.value(kernels).data();
        let bs = self.value(bias).data();
        let mut out = vec![T::zero(); n * m * len];
        for i in 0..n {
            let series = &xs[i * len..(i + 1) * len];
            for k in 0..m {
                let kern = &ks[k * t..(k + 1) * t];
                let dst = &mut out[(i * m + k) * len..(i * m + k + 1) * len];
                for (s, o) in dst.iter_mut().enumerate() {
                    let mut acc = bs[k];
                    for (u, &w) in kern.iter().enumerate() {
                        let pos = s + u;
                        if pos >= pad && pos - pad < len {
                            acc += w * series[pos - pad];
                        }
                    }
                    *o = acc;
                }
            }
        }
        let rg = self.any_grad(&[x, kernels, bias]);
        Ok(self.push(
            Tensor::new(vec![n, m, len], out)?,
            Op::Conv1dSame { x, kernels, bias },
            rg,
        ))
    }

    /// Moving average of width `window` along the last axis with edge-replicate padding.
    pub fn avgpool1d_same(&mut self, x: Var, window: usize) -> Result<Var> {
        if window < 1 {
            return Err(Error::Config("average pool window must be at least 1".into()));
        }
        let len = self.value(x).last_dim();
        let xv = self.value(x);
        let mut out = Vec::with_capacity(xv.numel());
        let inv = T::one() / T::of_usize(window);
        for row in xv.data().chunks(len.max(1)) {
            for s in 0..len {
                // offsets from the centre value keep constant rows exactly constant
                let centre = row[s];
                let acc: T = (0..window)
                    .map(|u| row[replicate_index(s, u, window, len)] - centre)
                    .sum();
                out.push(centre + acc * inv);
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::AvgPoolSame { x, window }, rg))
    }

    /// Columns `start..start + width` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (r, c) = self.dims2(x, "slice_cols")?;
        if start + width > c {
            return Err(Error::dim(
                "slice_cols",
                format!("columns {start}..{} of {c}", start + width),
            ));
        }
        let xs = self.value(x).data();
        let data = (0..r)
            .flat_map(|i| xs[i * c + start..i * c + start + width].iter().copied())
            .collect();
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(vec![r, width], data)?, Op::SliceCols { x, start }, rg))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::dim("concat_cols", "nothing to concatenate"))?;
        let (r, _) = self.dims2(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims2(p, "concat_cols")?;
            if pr != r {
                return Err(Error::dim("concat_cols", format!("row counts {r} vs {pr}")));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = self.any_grad(parts);
        Ok(self.push(Tensor::new(vec![r, total], data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Cosine-similarity Gram matrix of the rows of `x [n×d]`.
    ///
    /// Rows are scaled by `1/sqrt(|x_i|² + COSINE_SMOOTHING)` and multiplied by
    /// their transpose. The smoothing term keeps the map differentiable at
    /// zero rows, which then contribute zero similarity. The result is symmetric
    /// by construction with the diagonal pinned to exactly 1.
    pub fn cosine_gram(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.dims2(x, "cosine_gram")?;
        let xs = self.value(x).data();
        let smoothing = T::of(COSINE_SMOOTHING);
        let mut unit = vec![T::zero(); n * d];
        let mut norms = vec![T::zero(); n];
        let mut degenerate = Vec::new();
        for i in 0..n {
            let row = &xs[i * d..(i + 1) * d];
            let ss = row.iter().map(|&v| v * v).sum::<T>();
            if ss == T::zero() {
                degenerate.push(i);
            }
            let norm = (ss + smoothing).sqrt();
            norms[i] = norm;
            for (u, &v) in unit[i * d..(i + 1) * d].iter_mut().zip(row) {
                *u = v / norm;
            }
        }
        if !degenerate.is_empty() {
            log::debug!("cosine_gram: zero-norm rows {degenerate:?} map to zero vectors");
        }
        let mut out = vec![T::zero(); n * n];
        for i in 0..n {
            out[i * n + i] = T::one();
            for j in (i + 1)..n {
                let v: T = unit[i * d..(i + 1) * d]
                    .iter()
                    .zip(&unit[j * d..(j + 1) * d])
                    .map(|(&a, &b)| a * b)
                    .sum();
                let v = v.max(-T::one()).min(T::one());
                out[i * n + j] = v;
                out[j * n + i] = v;
            }
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(vec![n, n], out)?, Op::CosineGram { x, unit, norms }, rg))
    }

    /// Symmetric degree normalization `D^{-1/2} A D^{-1/2}` with `D_ii = Σ_j |A_ij|`.
    pub fn sym_normalize(&mut self, a: Var) -> Result<Var> {
        let (n, c) = self.dims2(a, "sym_normalize")?;
        if n != c {
            return Err(Error::dim("sym_normalize", format!("non-square {n}x{c}")));
        }
        let av = self.value(a).data();
        let scale: Vec<T> = (0..n)
            .map(|i| {
                let deg: T = av[i * n..(i + 1) * n].iter().map(|v| v.abs()).sum();
                if deg > T::zero() {
                    T::one() / deg.sqrt()
                } else {
                    T::zero()
                }
            })
            .collect();
        let mut out = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = av[i * n + j] * scale[i] * scale[j];
            }
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::new(vec![n, n], out)?, Op::SymNormalize { a, scale }, rg))
    }

    // ---- reverse pass ----

    /// Back-propagates from the scalar `loss` with seed adjoint 1.
    ///
    /// Intermediate adjoints are reset first; leaf gradients accumulate, so two
    /// replays without `zero_grad` yield twice the gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        for (node, g) in self.nodes.iter().zip(self.grads.iter_mut()) {
            match node.op {
                Op::Leaf if node.requires_grad => {
                    if g.is_none() {
                        *g = Some(vec![T::zero(); node.value.numel()]);
                    }
                }
                _ => *g = None,
            }
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        if matches!(self.nodes[loss.0].op, Op::Leaf) {
            self.grads[loss.0].as_mut().expect("leaf grad")[0] += T::one();
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            if matches!(self.nodes[idx].op, Op::Leaf) || !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            self.backward_node(idx, &g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contribution: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.iter_mut().zip(contribution).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn backward_node(&mut self, idx: usize, g: &[T]) {
        let nodes = &self.nodes;
        let out = &nodes[idx].value;
        let mut contributions: Vec<(Var, Vec<T>)> = Vec::new();
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (p, q) = nodes[a.0].value.dims2().expect("matmul lhs");
                let r = nodes[b.0].value.last_dim();
                if nodes[a.0].requires_grad {
                    contributions.push((*a, matmul_nt_raw(g, nodes[b.0].value.data(), p, r, q)));
                }
                if nodes[b.0].requires_grad {
                    contributions.push((*b, matmul_tn_raw(nodes[a.0].value.data(), g, p, q, r)));
                }
            }
            Op::Add(a, b) => {
                contributions.push((*a, g.to_vec()));
                contributions.push((*b, g.to_vec()));
            }
            Op::Sub(a, b) => {
                contributions.push((*a, g.to_vec()));
                contributions.push((*b, g.iter().map(|&v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                contributions.push((*a, g.iter().zip(bv).map(|(&d, &y)| d * y).collect()));
                contributions.push((*b, g.iter().zip(av).map(|(&d, &x)| d * x).collect()));
            }
            Op::AddBias(x, bias) => {
                let cols = nodes[bias.0].value.numel();
                let mut gb = vec![T::zero(); cols];
                for row in g.chunks(cols) {
                    gb.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                }
                contributions.push((*x, g.to_vec()));
                contributions.push((*bias, gb));
            }
            Op::Scale(x, c) => contributions.push((*x, g.iter().map(|&v| v * *c).collect())),
            Op::Relu(x) => {
                let xv = nodes[x.0].value.data();
                contributions.push((
                    *x,
                    g.iter()
                        .zip(xv)
                        .map(|(&d, &v)| if v > T::zero() { d } else { T::zero() })
                        .collect(),
                ));
            }
            Op::Transpose(x) => {
                let (r, c) = out.dims2().expect("transpose output");
                contributions.push((*x, transpose_raw(g, r, c)));
            }
            Op::Reshape(x) => contributions.push((*x, g.to_vec())),
            Op::Sum(x) => contributions.push((*x, vec![g[0]; nodes[x.0].value.numel()])),
            Op::MeanRows(x) => {
                let (p, q) = nodes[x.0].value.dims2().expect("mean_rows input");
                let inv = T::one() / T::of_usize(p);
                let row: Vec<T> = g.iter().map(|&v| v * inv).collect();
                contributions.push((*x, (0..p * q).map(|k| row[k % q]).collect()));
            }
            Op::SoftmaxRows(x) => {
                let c = out.last_dim();
                let mut dx = Vec::with_capacity(g.len());
                for (yr, gr) in out.data().chunks(c).zip(g.chunks(c)) {
                    let dot: T = yr.iter().zip(gr).map(|(&y, &d)| y * d).sum();
                    dx.extend(yr.iter().zip(gr).map(|(&y, &d)| y * (d - dot)));
                }
                contributions.push((*x, dx));
            }
            Op::LnClamped(x, floor) => {
                let xv = nodes[x.0].value.data();
                contributions.push((
                    *x,
                    g.iter()
                        .zip(xv)
                        .map(|(&d, &v)| if v > *floor { d / v } else { T::zero() })
                        .collect(),
                ));
            }
            Op::LayerNorm {
                x,
                gain,
                shift,
                normed,
                inv_std,
            } => {
                let d = out.last_dim();
                let dn = T::of_usize(d);
                let gv = nodes[gain.0].value.data();
                let mut dx = Vec::with_capacity(g.len());
                let mut dgain = vec![T::zero(); d];
                let mut dshift = vec![T::zero(); d];
                for ((gr, nr), &is) in g.chunks(d).zip(normed.chunks(d)).zip(inv_std) {
                    let mut sum_dn = T::zero();
                    let mut sum_dn_n = T::zero();
                    for k in 0..d {
                        let dnk = gr[k] * gv[k];
                        sum_dn += dnk;
                        sum_dn_n += dnk * nr[k];
                        dgain[k] += gr[k] * nr[k];
                        dshift[k] += gr[k];
                    }
                    for k in 0..d {
                        let dnk = gr[k] * gv[k];
                        dx.push(is / dn * (dn * dnk - sum_dn - nr[k] * sum_dn_n));
                    }
                }
                contributions.push((*x, dx));
                contributions.push((*gain, dgain));
                contributions.push((*shift, dshift));
            }
            Op::Mask(x, mask) => {
                contributions.push((*x, g.iter().zip(mask).map(|(&d, &m)| d * m).collect()))
            }
            Op::Conv1dSame { x, kernels, bias } => {
                let (n, len) = nodes[x.0].value.dims2().expect("conv input");
                let (m, t) = nodes[kernels.0].value.dims2().expect("conv kernels");
                let pad = (t - 1) / 2;
                let xs = nodes[x.0].value.data();
                let ks = nodes[kernels.0].value.data();
                let mut dx = vec![T::zero(); n * len];
                let mut dk = vec![T::zero(); m * t];
                let mut db = vec![T::zero(); m];
                for i in 0..n {
                    let series = &xs[i * len..(i + 1) * len];
                    for k in 0..m {
                        let go = &g[(i * m + k) * len..(i * m + k + 1) * len];
                        for (s, &d) in go.iter().enumerate() {
                            db[k] += d;
                            for u in 0..t {
                                let pos = s + u;
                                if pos >= pad && pos - pad < len {
                                    dk[k * t + u] += d * series[pos - pad];
                                    dx[i * len + pos - pad] += d * ks[k * t + u];
                                }
                            }
                        }
                    }
                }
                contributions.push((*x, dx));
                contributions.push((*kernels, dk));
                contributions.push((*bias, db));
            }
            Op::AvgPoolSame { x, window } => {
                let len = out.last_dim();
                let inv = T::one() / T::of_usize(*window);
                let mut dx = vec![T::zero(); g.len()];
                for (gr, dr) in g.chunks(len).zip(dx.chunks_mut(len)) {
                    for (s, &d) in gr.iter().enumerate() {
                        for u in 0..*window {
                            dr[replicate_index(s, u, *window, len)] += d * inv;
                        }
                    }
                }
                contributions.push((*x, dx));
            }
            Op::SliceCols { x, start } => {
                let (r, c) = nodes[x.0].value.dims2().expect("slice input");
                let w = out.last_dim();
                let mut dx = vec![T::zero(); r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                contributions.push((*x, dx));
            }
            Op::ConcatCols(parts) => {
                let (r, total) = out.dims2().expect("concat output");
                let mut offset = 0;
                for &p in parts {
                    let w = nodes[p.0].value.last_dim();
                    let mut dp = Vec::with_capacity(r * w);
                    for i in 0..r {
                        dp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                    }
                    offset += w;
                    contributions.push((p, dp));
                }
            }
            Op::CosineGram { x, unit, norms } => {
                let (n, d) = nodes[x.0].value.dims2().expect("gram input");
                let mut dx = vec![T::zero(); n * d];
                for i in 0..n {
                    // adjoint w.r.t. the unit row u_i
                    let mut du = vec![T::zero(); d];
                    for j in 0..n {
                        if j == i {
                            continue;
                        }
                        let w = g[i * n + j] + g[j * n + i];
                        for (a, &b) in du.iter_mut().zip(&unit[j * d..(j + 1) * d]) {
                            *a += w * b;
                        }
                    }
                    let ui = &unit[i * d..(i + 1) * d];
                    let radial: T = du.iter().zip(ui).map(|(&a, &b)| a * b).sum();
                    for k in 0..d {
                        dx[i * d + k] = (du[k] - radial * ui[k]) / norms[i];
                    }
                }
                contributions.push((*x, dx));
            }
            Op::SymNormalize { a, scale } => {
                let n = scale.len();
                let av = nodes[a.0].value.data();
                let mut da = vec![T::zero(); n * n];
                let mut dscale = vec![T::zero(); n];
                for i in 0..n {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        da[i * n + j] += gij * scale[i] * scale[j];
                        dscale[i] += gij * av[i * n + j] * scale[j];
                        dscale[j] += gij * av[i * n + j] * scale[i];
                    }
                }
                let half = T::of(0.5);
                for i in 0..n {
                    if scale[i] == T::zero() {
                        continue;
                    }
                    // s = deg^{-1/2}  =>  ds/ddeg = -s^3 / 2
                    let ddeg = -dscale[i] * half * scale[i] * scale[i] * scale[i];
                    for j in 0..n {
                        let v = av[i * n + j];
                        let sign = if v > T::zero() {
                            T::one()
                        } else if v < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        da[i * n + j] += ddeg * sign;
                    }
                }
                contributions.push((*a, da));
            }
        }
        for (v, c) in contributions {
            self.accumulate(v, c);
        }
    }
}

/// Row-wise softmax of a plain tensor.
pub fn softmax_rows_value<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let c = x.last_dim().max(1);
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    Tensor::new(x.shape().to_vec(), out).expect("softmax shape")
}

fn replicate_index(s: usize, u: usize, window: usize, len: usize) -> usize {
    let left = (window - 1) / 2;
    let pos = (s + u) as isize - left as isize;
    pos.clamp(0, len as isize - 1) as usize
}
