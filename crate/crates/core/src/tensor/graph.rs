use std::sync::Arc;

use super::kernels::{self, ConvGeometry};
use super::{cast, Scalar, Tensor};
use crate::error::{Error, Result};

/// Variance floor inside virtual batch norm.
pub const VBN_EPS: f64 = 1e-5;

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Frozen per-channel statistics of a virtual batch norm reference batch.
#[derive(Debug, Clone, PartialEq)]
pub struct VbnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Number of examples in the reference batch.
    pub count: T,
}

impl<T: Scalar> VbnStats<T> {
    /// Per-channel mean and variance over every example and position of `x`.
    pub fn from_batch(x: &Tensor<T>) -> Result<Self> {
        let (b, l, c) = x.dims3("vbn_reference")?;
        let n: T = cast((b * l) as f64);
        let mut mean = kernels::channel_sum(x.data(), c);
        mean.iter_mut().for_each(|m| *m = *m / n);
        let mut var = vec![T::zero(); c];
        for row in x.data().chunks_exact(c) {
            for ((v, &xv), &m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (xv - m) * (xv - m);
            }
        }
        var.iter_mut().for_each(|v| *v = *v / n);
        Ok(Self { mean, var, count: cast(b as f64) })
    }
}

enum Op<T> {
    Leaf,
    Conv1d { x: Var, w: Var, b: Var, geom: ConvGeometry },
    ConvTranspose1d { y: Var, w: Var, b: Var, geom: ConvGeometry },
    Prelu { x: Var, alpha: Var },
    LeakyRelu { x: Var, alpha: T },
    Vbn { x: Var, gamma: Var, beta: Var, norm: Vec<T>, inv_std: Vec<T>, mean: Vec<T>, ex_weight: T },
    Concat { a: Var, b: Var },
    Linear { x: Var, w: Var, b: Var },
    Tanh { x: Var },
    L1 { a: Var, b: Var },
    Lsq { x: Var, target: T },
    Add { a: Var, b: Var },
    Scale { x: Var, k: T },
    Sum { x: Var },
    WeightedSum { x: Var, weights: Tensor<T> },
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// A recorded forward computation. Build it by calling the op methods, then run
/// [`Graph::backward`] on a scalar node.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite value produced by op");
        self.nodes.push(Node { value: Arc::new(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, t: impl Into<Arc<Tensor<T>>>) -> Var {
        self.nodes.push(Node { value: t.into(), op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is tracked (trainable parameter or probed input).
    pub fn variable(&mut self, t: impl Into<Arc<Tensor<T>>>) -> Var {
        self.nodes.push(Node { value: t.into(), op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shared_value(&self, v: Var) -> Arc<Tensor<T>> {
        Arc::clone(&self.nodes[v.0].value)
    }

    /// Scalar value of a loss node.
    pub fn item(&self, v: Var) -> T {
        self.value(v).data()[0]
    }

    fn conv_weights(&self, op: &'static str, w: Var, b: Var, c_in: usize) -> Result<(usize, usize)> {
        let ws = self.value(w).shape();
        let [width, wc_in, c_out] = ws[..] else {
            return Err(mismatch(op, format!("weight must be rank 3, got {ws:?}")));
        };
        if wc_in != c_in {
            return Err(mismatch(op, format!("weight {ws:?} expects {wc_in} input channels, input has {c_in}")));
        }
        if self.value(b).shape() != [c_out] {
            return Err(mismatch(op, format!("bias {:?} for {c_out} output channels", self.value(b).shape())));
        }
        if width == 0 || (width != 1 && width % 2 == 0) {
            return Err(mismatch(op, format!("filter width {width} must be odd or 1")));
        }
        Ok((width, c_out))
    }

    /// Strided "same" convolution: `(B, L, Cin) * (width, Cin, Cout) -> (B, ceil(L/stride), Cout)`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (batch, len, c_in) = self.value(x).dims3("conv1d")?;
        if len == 0 || stride == 0 {
            return Err(mismatch("conv1d", format!("length {len}, stride {stride}")));
        }
        let (width, c_out) = self.conv_weights("conv1d", w, b, c_in)?;
        let geom = ConvGeometry::new(batch, len, c_in, c_out, width, stride);
        let out = kernels::conv_long_to_short(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            Some(self.value(b).data()),
        );
        let t = Tensor::from_vec(&[batch, geom.short_len, c_out], out)?;
        let needs = self.needs(&[x, w, b]);
        Ok(self.push(t, Op::Conv1d { x, w, b, geom }, needs))
    }

    /// Transposed convolution, the adjoint of [`Graph::conv1d`]:
    /// `(B, L, Cin) * (width, Cout, Cin) -> (B, L·stride, Cout)`.
    pub fn conv1d_transpose(&mut self, y: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (batch, len, c_in) = self.value(y).dims3("conv1d_transpose")?;
        let ws = self.value(w).shape().to_vec();
        let [width, c_out, wc_in] = ws[..] else {
            return Err(mismatch("conv1d_transpose", format!("weight must be rank 3, got {ws:?}")));
        };
        if wc_in != c_in || self.value(b).shape() != [c_out] || stride == 0 {
            return Err(mismatch(
                "conv1d_transpose",
                format!("input {:?}, weight {ws:?}, bias {:?}", self.value(y).shape(), self.value(b).shape()),
            ));
        }
        let geom = ConvGeometry::new(batch, len * stride, c_out, c_in, width, stride);
        debug_assert_eq!(geom.short_len, len);
        let out = kernels::conv_short_to_long(
            &geom,
            self.value(y).data(),
            self.value(w).data(),
            Some(self.value(b).data()),
        );
        let t = Tensor::from_vec(&[batch, geom.long_len, c_out], out)?;
        let needs = self.needs(&[y, w, b]);
        Ok(self.push(t, Op::ConvTranspose1d { y, w, b, geom }, needs))
    }

    /// Parametric ReLU with one trainable slope per channel.
    pub fn prelu(&mut self, x: Var, alpha: Var) -> Result<Var> {
        let (_, _, c) = self.value(x).dims3("prelu")?;
        if self.value(alpha).shape() != [c] {
            return Err(mismatch("prelu", format!("{c} channels, slopes {:?}", self.value(alpha).shape())));
        }
        let xs = self.value(x);
        let a = self.value(alpha).data();
        let mut out = xs.clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            for (v, &s) in row.iter_mut().zip(a) {
                if *v <= T::zero() {
                    *v = s * *v;
                }
            }
        }
        let needs = self.needs(&[x, alpha]);
        Ok(self.push(out, Op::Prelu { x, alpha }, needs))
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Result<Var> {
        let alpha: T = cast(alpha);
        let out = self.value(x).map(|v| if v > T::zero() { v } else { alpha * v });
        let needs = self.needs(&[x]);
        Ok(self.push(out, Op::LeakyRelu { x, alpha }, needs))
    }

    /// Virtual batch norm: each example is normalized with the per-channel
    /// moments of the frozen reference batch blended with its own moments,
    /// weighting the example by `1 / (count + 1)`.
    pub fn virtual_batch_norm(&mut self, x: Var, stats: &VbnStats<T>, gamma: Var, beta: Var) -> Result<Var> {
        let (batch, len, c) = self.value(x).dims3("virtual_batch_norm")?;
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(mismatch("virtual_batch_norm", format!("{c} channels, reference stats for {}", stats.mean.len())));
        }
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(mismatch("virtual_batch_norm", "gamma/beta must have one entry per channel".into()));
        }
        let ex_weight = T::one() / (stats.count + T::one());
        let ref_weight = T::one() - ex_weight;
        let eps: T = cast(VBN_EPS);
        let inv_len: T = cast(1.0 / len as f64);
        let xd = self.value(x).data();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());

        let mut mean = vec![T::zero(); batch * c];
        let mut inv_std = vec![T::zero(); batch * c];
        let mut norm = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for bi in 0..batch {
            let xb = &xd[bi * len * c..(bi + 1) * len * c];
            let mut m1 = vec![T::zero(); c];
            let mut m2 = vec![T::zero(); c];
            for row in xb.chunks_exact(c) {
                for ch in 0..c {
                    m1[ch] += row[ch];
                    m2[ch] += row[ch] * row[ch];
                }
            }
            for ch in 0..c {
                let ref_sq = stats.var[ch] + stats.mean[ch] * stats.mean[ch];
                let mu = ref_weight * stats.mean[ch] + ex_weight * m1[ch] * inv_len;
                let sq = ref_weight * ref_sq + ex_weight * m2[ch] * inv_len;
                let var = (sq - mu * mu).max(T::zero());
                mean[bi * c + ch] = mu;
                inv_std[bi * c + ch] = T::one() / (var + eps).sqrt();
            }
            for (l, row) in xb.chunks_exact(c).enumerate() {
                let at = bi * len * c + l * c;
                for ch in 0..c {
                    let xh = (row[ch] - mean[bi * c + ch]) * inv_std[bi * c + ch];
                    norm[at + ch] = xh;
                    out[at + ch] = g[ch] * xh + bt[ch];
                }
            }
        }
        let t = Tensor::from_vec(&[batch, len, c], out)?;
        let needs = self.needs(&[x, gamma, beta]);
        Ok(self.push(t, Op::Vbn { x, gamma, beta, norm, inv_std, mean, ex_weight }, needs))
    }

    /// Channel-axis concatenation of two `(B, L, _)` tensors.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ba, la, ca) = self.value(a).dims3("concat_channels")?;
        let (bb, lb, cb) = self.value(b).dims3("concat_channels")?;
        if ba != bb || la != lb {
            return Err(mismatch("concat_channels", format!("({ba}, {la}, _) vs ({bb}, {lb}, _)")));
        }
        let mut out = Vec::with_capacity(ba * la * (ca + cb));
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..ba * la {
            out.extend_from_slice(&ad[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&bd[i * cb..(i + 1) * cb]);
        }
        let t = Tensor::from_vec(&[ba, la, ca + cb], out)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(t, Op::Concat { a, b }, needs))
    }

    /// Affine map from each flattened example (`N` values) to one output:
    /// `(B, ...) * (N, 1) + (1) -> (B, 1)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape();
        let batch = *xs.first().ok_or_else(|| mismatch("linear", "scalar input".into()))?;
        let n: usize = xs[1..].iter().product();
        if self.value(w).shape() != [n, 1] || self.value(b).shape() != [1] {
            return Err(mismatch(
                "linear",
                format!("input {xs:?} needs weight [{n}, 1] and bias [1], got {:?} / {:?}", self.value(w).shape(), self.value(b).shape()),
            ));
        }
        let (wd, bias) = (self.value(w).data(), self.value(b).data()[0]);
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks_exact(n.max(1))
            .map(|row| row.iter().zip(wd).map(|(&a, &c)| a * c).sum::<T>() + bias)
            .collect();
        let out = if n == 0 { vec![bias; batch] } else { out };
        let t = Tensor::from_vec(&[batch, 1], out)?;
        let needs = self.needs(&[x, w, b]);
        Ok(self.push(t, Op::Linear { x, w, b }, needs))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.tanh());
        let needs = self.needs(&[x]);
        Ok(self.push(out, Op::Tanh { x }, needs))
    }

    /// Mean absolute difference. The subgradient at `a == b` is taken as 0.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(mismatch("l1_loss", format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape())));
        }
        let n = self.value(a).len().max(1);
        let s: T = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| (x - y).abs()).sum();
        let needs = self.needs(&[a, b]);
        Ok(self.push(Tensor::scalar(s / cast(n as f64)), Op::L1 { a, b }, needs))
    }

    /// Least-squares GAN loss `½·mean((x − target)²)`.
    pub fn lsq_loss(&mut self, x: Var, target: f64) -> Result<Var> {
        let target: T = cast(target);
        let n = self.value(x).len().max(1);
        let s: T = self.value(x).data().iter().map(|&v| (v - target) * (v - target)).sum();
        let half: T = cast(0.5);
        let needs = self.needs(&[x]);
        Ok(self.push(Tensor::scalar(half * s / cast(n as f64)), Op::Lsq { x, target }, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(mismatch("add", format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape())));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add { a, b }, needs))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let k: T = cast(k);
        let out = self.value(x).map(|v| v * k);
        let needs = self.needs(&[x]);
        Ok(self.push(out, Op::Scale { x, k }, needs))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        let needs = self.needs(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Sum { x }, needs))
    }

    /// `Σ x·weights` against a constant probe tensor.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor<T>) -> Result<Var> {
        if self.value(x).shape() != weights.shape() {
            return Err(mismatch("weighted_sum", format!("{:?} vs {:?}", self.value(x).shape(), weights.shape())));
        }
        let s = self.value(x).dot(&weights);
        let needs = self.needs(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }, needs))
    }

    /// Reverse-mode accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.value(loss).shape();
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(shape, T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d { x, w, b, geom } => {
                if needs(*x) {
                    let gx = kernels::conv_short_to_long(geom, gd, self.value(*w).data(), None);
                    self.accumulate(grads, *x, tensor_like(self.value(*x), gx));
                }
                if needs(*w) {
                    let gw = kernels::conv_weight_grad(geom, self.value(*x).data(), gd);
                    self.accumulate(grads, *w, tensor_like(self.value(*w), gw));
                }
                if needs(*b) {
                    let gb = kernels::channel_sum(gd, geom.c_short);
                    self.accumulate(grads, *b, tensor_like(self.value(*b), gb));
                }
            }
            Op::ConvTranspose1d { y, w, b, geom } => {
                if needs(*y) {
                    let gy = kernels::conv_long_to_short(geom, gd, self.value(*w).data(), None);
                    self.accumulate(grads, *y, tensor_like(self.value(*y), gy));
                }
                if needs(*w) {
                    let gw = kernels::conv_weight_grad(geom, gd, self.value(*y).data());
                    self.accumulate(grads, *w, tensor_like(self.value(*w), gw));
                }
                if needs(*b) {
                    let gb = kernels::channel_sum(gd, geom.c_long);
                    self.accumulate(grads, *b, tensor_like(self.value(*b), gb));
                }
            }
            Op::Prelu { x, alpha } => {
                let xs = self.value(*x);
                let a = self.value(*alpha).data();
                let c = a.len();
                if needs(*x) {
                    let mut gx = g.clone();
                    for (grow, xrow) in gx.data_mut().chunks_exact_mut(c).zip(xs.data().chunks_exact(c)) {
                        for ((gv, &xv), &s) in grow.iter_mut().zip(xrow).zip(a) {
                            if xv <= T::zero() {
                                *gv *= s;
                            }
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                if needs(*alpha) {
                    let mut ga = vec![T::zero(); c];
                    for (grow, xrow) in gd.chunks_exact(c).zip(xs.data().chunks_exact(c)) {
                        for ((acc, &gv), &xv) in ga.iter_mut().zip(grow).zip(xrow) {
                            if xv <= T::zero() {
                                *acc += gv * xv;
                            }
                        }
                    }
                    self.accumulate(grads, *alpha, tensor_like(self.value(*alpha), ga));
                }
            }
            Op::LeakyRelu { x, alpha } => {
                let gx = gd
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { gv * *alpha })
                    .collect();
                self.accumulate(grads, *x, tensor_like(self.value(*x), gx));
            }
            Op::Vbn { x, gamma, beta, norm, inv_std, mean, ex_weight } => {
                let xs = self.value(*x);
                let (batch, len, c) = xs.dims3("vbn").expect("checked in forward");
                let gam = self.value(*gamma).data();
                if needs(*gamma) {
                    let mut gg = vec![T::zero(); c];
                    for (grow, nrow) in gd.chunks_exact(c).zip(norm.chunks_exact(c)) {
                        for ((acc, &gv), &nv) in gg.iter_mut().zip(grow).zip(nrow) {
                            *acc += gv * nv;
                        }
                    }
                    self.accumulate(grads, *gamma, tensor_like(self.value(*gamma), gg));
                }
                if needs(*beta) {
                    let gb = kernels::channel_sum(gd, c);
                    self.accumulate(grads, *beta, tensor_like(self.value(*beta), gb));
                }
                if needs(*x) {
                    let two: T = cast(2.0);
                    let half: T = cast(0.5);
                    let w_over_len = *ex_weight / cast(len as f64);
                    let mut gx = vec![T::zero(); xs.len()];
                    for bi in 0..batch {
                        let range = bi * len * c..(bi + 1) * len * c;
                        let (xb, gb, nb) = (&xs.data()[range.clone()], &gd[range.clone()], &norm[range.clone()]);
                        // per-channel reductions of dL/dxhat
                        let mut sum_g = vec![T::zero(); c];
                        let mut sum_gn = vec![T::zero(); c];
                        for (grow, nrow) in gb.chunks_exact(c).zip(nb.chunks_exact(c)) {
                            for ch in 0..c {
                                let gh = grow[ch] * gam[ch];
                                sum_g[ch] += gh;
                                sum_gn[ch] += gh * nrow[ch];
                            }
                        }
                        let mut d_mu = vec![T::zero(); c];
                        let mut d_sq = vec![T::zero(); c];
                        for ch in 0..c {
                            let inv = inv_std[bi * c + ch];
                            let d_var = -half * inv * inv * sum_gn[ch];
                            d_sq[ch] = d_var;
                            d_mu[ch] = -inv * sum_g[ch] - two * mean[bi * c + ch] * d_var;
                        }
                        let out = &mut gx[range];
                        for ((orow, grow), xrow) in out.chunks_exact_mut(c).zip(gb.chunks_exact(c)).zip(xb.chunks_exact(c)) {
                            for ch in 0..c {
                                orow[ch] = grow[ch] * gam[ch] * inv_std[bi * c + ch]
                                    + w_over_len * (d_mu[ch] + two * xrow[ch] * d_sq[ch]);
                            }
                        }
                    }
                    self.accumulate(grads, *x, tensor_like(xs, gx));
                }
            }
            Op::Concat { a, b } => {
                let ca = self.value(*a).shape()[2];
                let cb = self.value(*b).shape()[2];
                let rows = gd.chunks_exact(ca + cb);
                if needs(*a) {
                    let ga = rows.clone().flat_map(|r| r[..ca].iter().copied()).collect();
                    self.accumulate(grads, *a, tensor_like(self.value(*a), ga));
                }
                if needs(*b) {
                    let gb = rows.flat_map(|r| r[ca..].iter().copied()).collect();
                    self.accumulate(grads, *b, tensor_like(self.value(*b), gb));
                }
            }
            Op::Linear { x, w, b } => {
                let n = self.value(*w).shape()[0];
                if needs(*x) {
                    let wd = self.value(*w).data();
                    let gx = gd.iter().flat_map(|&gv| wd.iter().map(move |&wv| gv * wv)).collect();
                    self.accumulate(grads, *x, tensor_like(self.value(*x), gx));
                }
                if needs(*w) {
                    let mut gw = vec![T::zero(); n];
                    for (row, &gv) in self.value(*x).data().chunks_exact(n.max(1)).zip(gd) {
                        gw.iter_mut().zip(row).for_each(|(acc, &xv)| *acc += gv * xv);
                    }
                    self.accumulate(grads, *w, tensor_like(self.value(*w), gw));
                }
                if needs(*b) {
                    self.accumulate(grads, *b, tensor_like(self.value(*b), vec![g.sum()]));
                }
            }
            Op::Tanh { x } => {
                let gx = gd.iter().zip(node.value.data()).map(|(&gv, &y)| gv * (T::one() - y * y)).collect();
                self.accumulate(grads, *x, tensor_like(self.value(*x), gx));
            }
            Op::L1 { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = gd[0] / cast(av.len().max(1) as f64);
                let ga: Vec<T> = av
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(&x, &y)| {
                        let d = x - y;
                        if d > T::zero() {
                            k
                        } else if d < T::zero() {
                            -k
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                if needs(*b) {
                    let gb = ga.iter().map(|&v| -v).collect();
                    self.accumulate(grads, *b, tensor_like(bv, gb));
                }
                self.accumulate(grads, *a, tensor_like(av, ga));
            }
            Op::Lsq { x, target } => {
                let xv = self.value(*x);
                let k = gd[0] / cast(xv.len().max(1) as f64);
                let gx = xv.data().iter().map(|&v| k * (v - *target)).collect();
                self.accumulate(grads, *x, tensor_like(xv, gx));
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Scale { x, k } => {
                self.accumulate(grads, *x, g.map(|v| v * *k));
            }
            Op::Sum { x } => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, Tensor::full(xv.shape(), gd[0]));
            }
            Op::WeightedSum { x, weights } => {
                self.accumulate(grads, *x, weights.map(|v| v * gd[0]));
            }
        }
    }
}

fn tensor_like<T: Scalar>(like: &Tensor<T>, data: Vec<T>) -> Tensor<T> {
    Tensor::from_vec(like.shape(), data).expect("gradient has the shape of its input")
}

/// Gradients produced by [`Graph::backward`], indexed by leaf [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf; `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of a leaf, zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, g: &Graph<T>, v: Var) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.variable(t(&[1, 3, 1], &[1.0, -2.0, 3.0]));
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.variable(t(&[1, 2, 1], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn unused_parameters_get_zero_gradient() {
        let mut g = Graph::new();
        let x = g.variable(t(&[1, 2, 1], &[1.0, 2.0]));
        let unused = g.variable(t(&[2], &[5.0, 6.0]));
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.get_or_zeros(&g, unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn prelu_fixtures() {
        let mut g = Graph::new();
        let x = g.variable(t(&[1, 2, 1], &[-1.0, 2.0]));
        let a0 = g.variable(t(&[1], &[0.0]));
        let y = g.prelu(x, a0).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 2.0]);
        let a1 = g.constant(t(&[1], &[1.0]));
        let y = g.prelu(x, a1).unwrap();
        assert_eq!(g.value(y).data(), &[-1.0, 2.0]);

        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 1], &[-3.0]));
        let a = g.variable(t(&[1], &[0.25]));
        let y = g.prelu(x, a).unwrap();
        let s = g.sum(y).unwrap();
        assert_eq!(g.backward(s).unwrap().get(a).unwrap().data(), &[-3.0]);
    }

    #[test]
    fn leaky_relu_fixtures() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 3, 1], &[-1.0, 0.0, 2.0]));
        let y = g.leaky_relu(x, 0.3).unwrap();
        assert_eq!(g.value(y).data(), &[-0.3, 0.0, 2.0]);
        let y = g.leaky_relu(x, 1.0).unwrap();
        assert_eq!(g.value(y).data(), &[-1.0, 0.0, 2.0]);
    }

    #[test]
    fn tanh_fixtures() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 3, 1], &[0.0, 50.0, -50.0]));
        let y = g.tanh(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 1.0, -1.0]);
    }

    #[test]
    fn loss_fixtures() {
        let mut g = Graph::<f64>::new();
        let a = g.variable(t(&[2], &[1.0, 1.0]));
        let b = g.constant(t(&[2], &[0.0, 2.0]));
        let l = g.l1_loss(a, b).unwrap();
        assert_eq!(g.item(l), 1.0);
        let same = g.l1_loss(a, a).unwrap();
        assert_eq!(g.item(same), 0.0);
        assert_eq!(g.backward(same).unwrap().get(a).unwrap().data(), &[0.0, 0.0]);

        let d0 = g.constant(t(&[1, 1], &[0.0]));
        let l = g.lsq_loss(d0, 1.0).unwrap();
        assert_eq!(g.item(l), 0.5);
        let d2 = g.constant(t(&[1, 1], &[2.0]));
        let l = g.lsq_loss(d2, 0.0).unwrap();
        assert_eq!(g.item(l), 2.0);
        let on_target = g.constant(t(&[3, 1], &[1.0, 1.0, 1.0]));
        let l = g.lsq_loss(on_target, 1.0).unwrap();
        assert_eq!(g.item(l), 0.0);
    }

    #[test]
    fn concat_fixtures() {
        let mut g = Graph::<f64>::new();
        let a = g.variable(Tensor::full(&[1, 8, 1024], 1.0));
        let b = g.variable(Tensor::full(&[1, 8, 1024], 2.0));
        let c = g.concat_channels(a, b).unwrap();
        assert_eq!(g.value(c).shape(), &[1, 8, 2048]);
        let s = g.sum(c).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(a).unwrap().data().iter().all(|&v| v == 1.0));
        assert!(grads.get(b).unwrap().data().iter().all(|&v| v == 1.0));

        let a = g.constant(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let empty = g.constant(Tensor::zeros(&[1, 2, 0]));
        let c = g.concat_channels(a, empty).unwrap();
        assert_eq!(g.value(c), g.value(a));
        let wrong = g.constant(Tensor::zeros(&[1, 3, 1]));
        assert!(g.concat_channels(a, wrong).is_err());
    }

    #[test]
    fn linear_fixtures() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::randn(&[3, 8, 1], 1.0, 1));
        let w = g.variable(Tensor::zeros(&[8, 1]));
        let b = g.variable(t(&[1], &[0.5]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5, 0.5]);

        let x = g.constant(t(&[2, 1, 1], &[0.7, -1.2]));
        let w = g.constant(t(&[1, 1], &[1.0]));
        let b = g.constant(t(&[1], &[0.0]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[0.7, -1.2]);
        let bad = g.constant(Tensor::zeros(&[3, 1]));
        assert!(g.linear(x, bad, b).is_err());
    }

    #[test]
    fn conv_identity_kernel_is_passthrough() {
        let mut g = Graph::<f64>::new();
        let xt = Tensor::randn(&[2, 5, 3], 1.0, 9);
        let x = g.constant(xt.clone());
        let mut eye = Tensor::zeros(&[1, 3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let w = g.constant(eye);
        let b = g.constant(Tensor::zeros(&[3]));
        let y = g.conv1d(x, w, b, 1).unwrap();
        assert_eq!(g.value(y), &xt);
    }

    #[test]
    fn conv_shapes() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[1, 16384, 1]));
        let w = g.constant(Tensor::zeros(&[31, 1, 16]));
        let b = g.constant(Tensor::zeros(&[16]));
        let y = g.conv1d(x, w, b, 2).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 8192, 16]);

        let y = g.constant(Tensor::zeros(&[1, 8, 1024]));
        let w = g.constant(Tensor::zeros(&[31, 512, 1024]));
        let b = g.constant(Tensor::zeros(&[512]));
        let x = g.conv1d_transpose(y, w, b, 2).unwrap();
        assert_eq!(g.value(x).shape(), &[1, 16, 512]);

        let bad_w = g.constant(Tensor::zeros(&[31, 2, 16]));
        let b16 = g.constant(Tensor::zeros(&[16]));
        let x1 = g.constant(Tensor::zeros(&[1, 10, 1]));
        assert!(matches!(g.conv1d(x1, bad_w, b16, 2), Err(Error::ShapeMismatch { .. })));
        let even_w = g.constant(Tensor::zeros(&[4, 1, 16]));
        assert!(g.conv1d(x1, even_w, b16, 2).is_err());
    }

    #[test]
    fn vbn_fixtures() {
        // Example equal to the reference mean with unit reference variance normalizes to 0.
        let stats = VbnStats { mean: vec![0.3, -1.0], var: vec![1.0, 1.0], count: 4.0 };
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 3, 2], &[0.3, -1.0, 0.3, -1.0, 0.3, -1.0]));
        let gamma = g.variable(t(&[2], &[1.0, 1.0]));
        let beta = g.variable(t(&[2], &[0.0, 0.0]));
        let y = g.virtual_batch_norm(x, &stats, gamma, beta).unwrap();
        assert!(g.value(y).max_abs() < 1e-3);

        let gamma0 = g.constant(t(&[2], &[0.0, 0.0]));
        let beta1 = g.constant(t(&[2], &[0.7, -0.2]));
        let xr = g.constant(Tensor::randn(&[2, 5, 2], 1.0, 3));
        let y = g.virtual_batch_norm(xr, &stats, gamma0, beta1).unwrap();
        for row in g.value(y).data().chunks_exact(2) {
            assert_eq!(row, &[0.7, -0.2]);
        }
        let wrong = VbnStats { mean: vec![0.0], var: vec![1.0], count: 1.0 };
        assert!(g.virtual_batch_norm(xr, &wrong, gamma0, beta1).is_err());
    }

    #[test]
    fn vbn_large_reference_approaches_plain_normalization() {
        let stats = VbnStats { mean: vec![0.5, -0.25], var: vec![2.0, 0.5], count: 1e6 };
        let xt = Tensor::<f64>::randn(&[2, 7, 2], 1.0, 11);
        let mut g = Graph::new();
        let x = g.constant(xt.clone());
        let gamma = g.constant(t(&[2], &[1.5, 0.5]));
        let beta = g.constant(t(&[2], &[0.1, -0.1]));
        let y = g.virtual_batch_norm(x, &stats, gamma, beta).unwrap();
        for (i, (&yv, &xv)) in g.value(y).data().iter().zip(xt.data()).enumerate() {
            let ch = i % 2;
            let direct = [1.5, 0.5][ch] * (xv - stats.mean[ch]) / (stats.var[ch] + VBN_EPS).sqrt() + [0.1, -0.1][ch];
            assert!((yv - direct).abs() < 1e-4, "{yv} vs {direct}");
        }
    }

    #[test]
    fn reference_stats_from_batch() {
        let x = t(&[2, 2, 1], &[1.0, 3.0, 5.0, 7.0]);
        let s = VbnStats::from_batch(&x).unwrap();
        assert_eq!(s.mean, vec![4.0]);
        assert_eq!(s.var, vec![5.0]);
        assert_eq!(s.count, 2.0);
    }

    #[test]
    fn backward_is_repeatable() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::randn(&[2, 16, 2], 1.0, 1));
        let w = g.variable(Tensor::randn(&[5, 2, 3], 0.3, 2));
        let b = g.variable(Tensor::randn(&[3], 0.3, 3));
        let y = g.conv1d(x, w, b, 2).unwrap();
        let l = g.lsq_loss(y, 1.0).unwrap();
        let g1 = g.backward(l).unwrap();
        let g2 = g.backward(l).unwrap();
        assert_eq!(g1.get(w), g2.get(w));
        assert_eq!(g1.get(b), g2.get(b));
    }
}
