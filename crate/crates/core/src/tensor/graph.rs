use std::collections::BTreeMap;

use super::ops::{self, gemm_into, gelu_grad, sigmoid};
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
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
    AddRow(Var, Var),
    AddConst(Var),
    Mul(Var, Var),
    Scale(Var, T),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<T>,
        inv_std: Vec<T>,
    },
    Gelu(Var),
    Glu(Var),
    GatherRows { x: Var, ids: Vec<usize> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    Unfold { x: Var, kernel: usize, stride: usize, pad: usize },
    MaskMul { x: Var, mask: Vec<T> },
    SmoothedXent { logits: Var, targets: Vec<usize>, eps: T, probs: Vec<T> },
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

/// Tape of primitive operations.
///
/// Nodes are appended in execution order, which is a topological order;
/// [`Graph::backward`] walks them in reverse exactly once. Every matrix
/// product also records its multiply-add count under the current scope
/// label, which the FLOP model is checked against.
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
    macs: BTreeMap<&'static str, u64>,
    scope: &'static str,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by leaf variable.
pub struct Grads<T> {
    by_node: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.by_node.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.by_node.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            macs: BTreeMap::new(),
            scope: "unscoped",
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Sets the label that subsequent multiply-adds are charged to and
    /// returns the previous one.
    pub fn set_scope(&mut self, scope: &'static str) -> &'static str {
        std::mem::replace(&mut self.scope, scope)
    }

    /// Multiply-add counts per scope label.
    pub fn macs(&self) -> &BTreeMap<&'static str, u64> {
        &self.macs
    }

    pub fn total_macs(&self) -> u64 {
        self.macs.values().sum()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is wanted.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn charge(&mut self, macs: u64) {
        *self.macs.entry(self.scope).or_insert(0) += macs;
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let out = ops::matmul_t(self.value(a), self.value(b), trans_b)?;
        let inner = self.value(a).cols() as u64;
        self.charge(out.numel() as u64 * inner);
        Ok(self.push(out, Op::MatMul { a, b, trans_b }, &[a, b]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let out = Tensor::new(self.value(a).shape(), data)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Adds a length-`cols` vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, c) = self.value(x).expect_matrix("add_row")?;
        if self.value(row).numel() != c {
            return Err(Error::shape(
                "add_row",
                format!("row of {} for width {c}", self.value(row).numel()),
            ));
        }
        let r = self.value(row).data();
        let data = self
            .value(x)
            .data()
            .chunks(c)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(&a, &b)| a + b))
            .collect();
        let out = Tensor::new(self.value(x).shape(), data)?;
        Ok(self.push(out, Op::AddRow(x, row), &[x, row]))
    }

    /// Adds a fixed tensor that takes no part in differentiation.
    pub fn add_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var> {
        if self.value(x).shape() != c.shape() {
            return Err(Error::shape(
                "add_const",
                format!("{:?} vs {:?}", self.value(x).shape(), c.shape()),
            ));
        }
        let data = zip_map(self.value(x), c, |a, b| a + b);
        let out = Tensor::new(c.shape(), data)?;
        Ok(self.push(out, Op::AddConst(x), &[x]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let out = Tensor::new(self.value(a).shape(), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s), &[x])
    }

    /// Row softmax with an optional keep-mask (see [`ops::softmax_rows`]).
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let out = ops::softmax_rows(self.value(x), mask)?;
        Ok(self.push(out, Op::Softmax(x), &[x]))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let parts = ops::layer_norm_parts(
            self.value(x),
            self.value(gain),
            self.value(bias),
            ops::LAYER_NORM_EPS,
        )?;
        Ok(self.push(
            parts.out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized: parts.normalized,
                inv_std: parts.inv_std,
            },
            &[x, gain, bias],
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(ops::gelu);
        self.push(out, Op::Gelu(x), &[x])
    }

    /// Gated linear unit over the column halves: `left * sigmoid(right)`.
    pub fn glu(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).expect_matrix("glu")?;
        if c % 2 != 0 {
            return Err(Error::shape("glu", format!("odd width {c}")));
        }
        let h = c / 2;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(r * h);
        for row in src.chunks(c) {
            data.extend(row[..h].iter().zip(&row[h..]).map(|(&a, &b)| a * sigmoid(b)));
        }
        let out = Tensor::new(&[r, h], data)?;
        Ok(self.push(out, Op::Glu(x), &[x]))
    }

    pub fn gather_rows(&mut self, x: Var, ids: &[usize]) -> Result<Var> {
        let out = self.value(x).gather_rows(ids)?;
        Ok(self.push(
            out,
            Op::GatherRows {
                x,
                ids: ids.to_vec(),
            },
            &[x],
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.value(x).expect_matrix("slice_cols")?;
        if start + len > c {
            return Err(Error::shape(
                "slice_cols",
                format!("columns {start}..{} of {c}", start + len),
            ));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(r * len);
        for row in src.chunks(c) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let out = Tensor::new(&[r, len], data)?;
        Ok(self.push(out, Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).expect_matrix("concat_cols")?;
            if r != rows {
                return Err(Error::shape("concat_cols", format!("{r} rows vs {rows}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(&[rows, total], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Sliding-window unfold over the row (time) axis: output row `o` holds
    /// input rows `o*stride - pad .. o*stride - pad + kernel`, zero outside
    /// the input. A following matrix product realizes a 1-D convolution.
    pub fn unfold(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let (len, c) = self.value(x).expect_matrix("unfold")?;
        if kernel == 0 || stride == 0 || len + 2 * pad < kernel {
            return Err(Error::shape(
                "unfold",
                format!("length {len}, kernel {kernel}, stride {stride}, pad {pad}"),
            ));
        }
        let out_len = (len + 2 * pad - kernel) / stride + 1;
        let src = self.value(x).data();
        let mut data = vec![T::ZERO; out_len * kernel * c];
        for o in 0..out_len {
            for j in 0..kernel {
                let t = (o * stride + j) as isize - pad as isize;
                if t < 0 || t as usize >= len {
                    continue;
                }
                let t = t as usize;
                let dst = (o * kernel + j) * c;
                data[dst..dst + c].copy_from_slice(&src[t * c..(t + 1) * c]);
            }
        }
        let out = Tensor::new(&[out_len, kernel * c], data)?;
        Ok(self.push(
            out,
            Op::Unfold {
                x,
                kernel,
                stride,
                pad,
            },
            &[x],
        ))
    }

    /// Elementwise product with a fixed mask (dropout).
    pub fn mask_mul(&mut self, x: Var, mask: Vec<T>) -> Result<Var> {
        if mask.len() != self.value(x).numel() {
            return Err(Error::shape("mask_mul", "mask size"));
        }
        let data = self.value(x).data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let out = Tensor::new(self.value(x).shape(), data)?;
        Ok(self.push(out, Op::MaskMul { x, mask }, &[x]))
    }

    /// Mean over rows of label-smoothed cross-entropy:
    /// `(1 - eps) * nll + eps * mean_v(-log p_v)`.
    pub fn smoothed_cross_entropy(&mut self, logits: Var, targets: &[usize], eps: f64) -> Result<Var> {
        let (rows, vocab) = self.value(logits).expect_matrix("cross_entropy")?;
        if rows != targets.len() || rows == 0 {
            return Err(Error::shape(
                "cross_entropy",
                format!("{rows} logit rows for {} targets", targets.len()),
            ));
        }
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::contract("label smoothing must lie in [0, 1)"));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= vocab) {
            return Err(Error::Index(format!("target {bad} outside vocabulary {vocab}")));
        }
        let probs = ops::softmax_rows(self.value(logits), None)?.into_data();
        let eps_t = T::from_f64(eps);
        let inv_v = T::from_f64(1.0 / vocab as f64);
        let mut total = T::ZERO;
        for (r, &y) in targets.iter().enumerate() {
            let row = self.value(logits).row(r);
            let max = row.iter().copied().fold(T::NEG_INFINITY, T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            let nll = lse - row[y];
            let mean_nll = lse - row.iter().copied().sum::<T>() * inv_v;
            total += (T::ONE - eps_t) * nll + eps_t * mean_nll;
        }
        let loss = total / T::from_f64(rows as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SmoothedXent {
                logits,
                targets: targets.to_vec(),
                eps: eps_t,
                probs,
            },
            &[logits],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut leaves: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::ONE));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            match &node.op {
                Op::Leaf => leaves[idx] = Some(g),
                Op::MatMul { a, b, trans_b } => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let (p, q) = (av.rows(), av.cols());
                    let (br, bc) = (bv.rows(), bv.cols());
                    let r = g.cols();
                    if self.is_tracked(*a) {
                        // dA = G * op(B)^T
                        let mut da = vec![T::ZERO; p * q];
                        gemm_into(g.data(), (p, r), false, bv.data(), (br, bc), !trans_b, &mut da, false);
                        accumulate(&mut grads, *a, av.shape(), da);
                    }
                    if self.is_tracked(*b) {
                        let mut db = vec![T::ZERO; br * bc];
                        if *trans_b {
                            // B is r x q: dB = G^T * A
                            gemm_into(g.data(), (p, r), true, av.data(), (p, q), false, &mut db, false);
                        } else {
                            gemm_into(av.data(), (p, q), true, g.data(), (p, r), false, &mut db, false);
                        }
                        accumulate(&mut grads, *b, bv.shape(), db);
                    }
                }
                Op::Add(a, b) => {
                    if self.is_tracked(*a) {
                        accumulate(&mut grads, *a, g.shape(), g.data().to_vec());
                    }
                    if self.is_tracked(*b) {
                        accumulate_tensor(&mut grads, *b, g);
                    }
                }
                Op::AddRow(x, row) => {
                    if self.is_tracked(*row) {
                        let c = g.cols();
                        let mut dr = vec![T::ZERO; c];
                        for chunk in g.data().chunks(c) {
                            for (d, &v) in dr.iter_mut().zip(chunk) {
                                *d += v;
                            }
                        }
                        accumulate(&mut grads, *row, self.value(*row).shape(), dr);
                    }
                    if self.is_tracked(*x) {
                        accumulate_tensor(&mut grads, *x, g);
                    }
                }
                Op::AddConst(x) => accumulate_tensor(&mut grads, *x, g),
                Op::Mul(a, b) => {
                    if self.is_tracked(*a) {
                        let d = zip_map(&g, self.value(*b), |x, y| x * y);
                        accumulate(&mut grads, *a, g.shape(), d);
                    }
                    if self.is_tracked(*b) {
                        let d = zip_map(&g, self.value(*a), |x, y| x * y);
                        accumulate(&mut grads, *b, g.shape(), d);
                    }
                }
                Op::Scale(x, s) => {
                    let d = g.data().iter().map(|&v| v * *s).collect();
                    accumulate(&mut grads, *x, g.shape(), d);
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let c = y.cols();
                    let mut d = vec![T::ZERO; y.numel()];
                    for ((yr, gr), dr) in y.data().chunks(c).zip(g.data().chunks(c)).zip(d.chunks_mut(c)) {
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for ((o, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                            *o = yv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads, *x, y.shape(), d);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normalized,
                    inv_std,
                } => {
                    let c = g.cols();
                    let gv = self.value(*gain).data();
                    if self.is_tracked(*gain) || self.is_tracked(*bias) {
                        let mut dg = vec![T::ZERO; c];
                        let mut db = vec![T::ZERO; c];
                        for (gr, hr) in g.data().chunks(c).zip(normalized.chunks(c)) {
                            for j in 0..c {
                                dg[j] += gr[j] * hr[j];
                                db[j] += gr[j];
                            }
                        }
                        if self.is_tracked(*gain) {
                            accumulate(&mut grads, *gain, self.value(*gain).shape(), dg);
                        }
                        if self.is_tracked(*bias) {
                            accumulate(&mut grads, *bias, self.value(*bias).shape(), db);
                        }
                    }
                    if self.is_tracked(*x) {
                        let inv_c = T::from_f64(1.0 / c as f64);
                        let mut dx = vec![T::ZERO; g.numel()];
                        for (r, ((gr, hr), dr)) in g
                            .data()
                            .chunks(c)
                            .zip(normalized.chunks(c))
                            .zip(dx.chunks_mut(c))
                            .enumerate()
                        {
                            let mut mean_dh = T::ZERO;
                            let mut mean_dh_h = T::ZERO;
                            for j in 0..c {
                                let dh = gr[j] * gv[j];
                                mean_dh += dh;
                                mean_dh_h += dh * hr[j];
                            }
                            mean_dh *= inv_c;
                            mean_dh_h *= inv_c;
                            for j in 0..c {
                                dr[j] = inv_std[r] * (gr[j] * gv[j] - mean_dh - hr[j] * mean_dh_h);
                            }
                        }
                        accumulate(&mut grads, *x, g.shape(), dx);
                    }
                }
                Op::Gelu(x) => {
                    let d = zip_map(&g, self.value(*x), |gv, xv| gv * gelu_grad(xv));
                    accumulate(&mut grads, *x, g.shape(), d);
                }
                Op::Glu(x) => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let h = c / 2;
                    let mut d = vec![T::ZERO; xv.numel()];
                    for ((xr, gr), dr) in xv.data().chunks(c).zip(g.data().chunks(h)).zip(d.chunks_mut(c)) {
                        for j in 0..h {
                            let s = sigmoid(xr[h + j]);
                            dr[j] = gr[j] * s;
                            dr[h + j] = gr[j] * xr[j] * s * (T::ONE - s);
                        }
                    }
                    accumulate(&mut grads, *x, xv.shape(), d);
                }
                Op::GatherRows { x, ids } => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let mut d = vec![T::ZERO; xv.numel()];
                    for (gr, &i) in g.data().chunks(c).zip(ids) {
                        for (o, &v) in d[i * c..(i + 1) * c].iter_mut().zip(gr) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *x, xv.shape(), d);
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let w = g.cols();
                    let mut d = vec![T::ZERO; xv.numel()];
                    for (gr, dr) in g.data().chunks(w).zip(d.chunks_mut(c)) {
                        dr[*start..*start + w].copy_from_slice(gr);
                    }
                    accumulate(&mut grads, *x, xv.shape(), d);
                }
                Op::ConcatCols(parts) => {
                    let total = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let w = pv.cols();
                        if self.is_tracked(p) {
                            let mut d = Vec::with_capacity(pv.numel());
                            for gr in g.data().chunks(total) {
                                d.extend_from_slice(&gr[offset..offset + w]);
                            }
                            accumulate(&mut grads, p, pv.shape(), d);
                        }
                        offset += w;
                    }
                }
                Op::Unfold {
                    x,
                    kernel,
                    stride,
                    pad,
                } => {
                    let xv = self.value(*x);
                    let (len, c) = (xv.rows(), xv.cols());
                    let out_len = g.rows();
                    let mut d = vec![T::ZERO; xv.numel()];
                    let gd = g.data();
                    for o in 0..out_len {
                        for j in 0..*kernel {
                            let t = (o * stride + j) as isize - *pad as isize;
                            if t < 0 || t as usize >= len {
                                continue;
                            }
                            let t = t as usize;
                            let src = (o * kernel + j) * c;
                            for ch in 0..c {
                                d[t * c + ch] += gd[src + ch];
                            }
                        }
                    }
                    accumulate(&mut grads, *x, xv.shape(), d);
                }
                Op::MaskMul { x, mask } => {
                    let d = g.data().iter().zip(mask).map(|(&a, &m)| a * m).collect();
                    accumulate(&mut grads, *x, g.shape(), d);
                }
                Op::SmoothedXent {
                    logits,
                    targets,
                    eps,
                    probs,
                } => {
                    let lv = self.value(*logits);
                    let (rows, vocab) = (lv.rows(), lv.cols());
                    let scale = g.item() / T::from_f64(rows as f64);
                    let uniform = *eps / T::from_f64(vocab as f64);
                    let mut d: Vec<T> = probs.iter().map(|&p| (p - uniform) * scale).collect();
                    for (r, &y) in targets.iter().enumerate() {
                        d[r * vocab + y] -= (T::ONE - *eps) * scale;
                    }
                    accumulate(&mut grads, *logits, lv.shape(), d);
                }
                Op::Sum(x) => {
                    let xv = self.value(*x);
                    accumulate(&mut grads, *x, xv.shape(), vec![g.item(); xv.numel()]);
                }
            }
        }
        Ok(Grads { by_node: leaves })
    }
}

fn zip_map<T: Element>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Vec<T> {
    a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
}

fn accumulate_tensor<T: Element>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, &x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn accumulate<T: Element>(grads: &mut [Option<Tensor<T>>], v: Var, shape: &[usize], d: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(d) {
                *e += x;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape, d).expect("gradient shape follows its value"));
        }
    }
}

/// Compares reverse-mode gradients with central finite differences.
///
/// `f` builds a scalar loss on a fresh graph from the leaves bound to
/// `params`. Returns the maximum over all coordinates of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
pub fn finite_diff_check<F>(params: &[Tensor<f64>], step: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    Ok(finite_diff_report(params, step, f)?.worst_error)
}

/// Location and size of the worst gradient disagreement.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FiniteDiffReport {
    pub worst_error: f64,
    pub param: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Coordinates compared.
    pub checked: usize,
}

/// [`finite_diff_check`] with the worst coordinate identified.
pub fn finite_diff_report<F>(params: &[Tensor<f64>], step: f64, f: F) -> Result<FiniteDiffReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut report = FiniteDiffReport::default();
    for_each_coordinate(params, step, f, |param, element, analytic, numeric| {
        let denom = analytic.abs().max(numeric.abs()).max(1e-12);
        let err = (analytic - numeric).abs() / denom;
        report.checked += 1;
        if err > report.worst_error || report.checked == 1 {
            report = FiniteDiffReport {
                worst_error: err,
                param,
                element,
                analytic,
                numeric,
                checked: report.checked,
            };
        }
    })?;
    Ok(report)
}

/// Calls `visit(param, element, analytic, numeric)` for every coordinate.
pub fn for_each_coordinate<F, V>(params: &[Tensor<f64>], step: f64, f: F, mut visit: V) -> Result<()>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    V: FnMut(usize, usize, f64, f64),
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut work = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let zeros = Tensor::zeros(params[pi].shape());
        let analytic = grads.get(*var).unwrap_or(&zeros);
        for i in 0..params[pi].numel() {
            let orig = work[pi].data()[i];
            work[pi].data_mut()[i] = orig + step;
            let up = eval(&work)?;
            work[pi].data_mut()[i] = orig - step;
            let down = eval(&work)?;
            work[pi].data_mut()[i] = orig;
            visit(pi, i, analytic.data()[i], (up - down) / (2.0 * step));
        }
    }
    Ok(())
}
