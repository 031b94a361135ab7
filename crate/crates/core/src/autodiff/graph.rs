use rand::Rng;

use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Multiply-accumulate counts recorded while building a graph.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MacCounts {
    pub matmul: u64,
    pub conv: u64,
    pub attention: u64,
}

impl MacCounts {
    pub fn total(&self) -> u64 {
        self.matmul + self.conv + self.attention
    }
}

enum Op<F> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    AddRow {
        x: Var,
        bias: Var,
    },
    Scale {
        x: Var,
        c: F,
    },
    AddScalar {
        x: Var,
    },
    Relu {
        x: Var,
    },
    Tanh {
        x: Var,
    },
    Square {
        x: Var,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
        padding_idx: Option<usize>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<F>,
        inv_std: Vec<F>,
    },
    Dropout {
        x: Var,
        mask: Vec<F>,
    },
    Softmax {
        x: Var,
    },
    LogSoftmax {
        x: Var,
    },
    LnFloor {
        x: Var,
        eps: F,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    DotConst {
        x: Var,
        coeff: Vec<F>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        batch: usize,
        seq: usize,
        k: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        batch: usize,
        seq: usize,
        lens: Vec<usize>,
        probs: Vec<F>,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    MeanRows {
        x: Var,
        groups: Vec<(usize, usize)>,
    },
    ConcatCols {
        xs: Vec<Var>,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Tape of operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so insertion order is a
/// topological order. `backward` walks it exactly in reverse.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
    consumed: bool,
    macs: MacCounts,
}

impl<F: Element> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn dim_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Dimension {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// Accumulation buffer for `v`, or `None` when `v` takes no gradient.
fn slot<'a, F: Element>(grads: &'a mut [Option<Vec<F>>], nodes: &[Node<F>], v: Var) -> Option<&'a mut Vec<F>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let n = node.value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); n]))
}

fn accumulate<F: Element>(grads: &mut [Option<Vec<F>>], nodes: &[Node<F>], v: Var, contribution: &[F]) {
    if let Some(buf) = slot(grads, nodes, v) {
        for (b, c) in buf.iter_mut().zip(contribution) {
            *b += *c;
        }
    }
}

/// `c[m×n] = a[m×k] · b[k×n]`, accumulating over `k` in ascending order.
pub(crate) fn matmul_kernel<F: Element>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

fn dot<F: Element>(a: &[F], b: &[F]) -> F {
    let mut s = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

impl<F: Element> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
            macs: MacCounts::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn mac_counts(&self) -> MacCounts {
        self.macs
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// First element of `v` as `f64`; intended for scalar losses.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0].as_f64()
    }

    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads[v.0].as_deref()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_kernel(self.value(a).data(), self.value(b).data(), m, k, n);
        self.macs.matmul += (m * k * n) as u64;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b }, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Tensor<F> {
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(va.shape().to_vec(), data).expect("shape preserved")
    }

    fn map(&self, x: Var, f: impl Fn(F) -> F) -> Tensor<F> {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&v| f(v)).collect();
        Tensor::new(vx.shape().to_vec(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_map(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul { a, b }, rg))
    }

    /// Adds `bias` (length = columns of `x`) to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let cols = self.value(x).cols();
        if self.value(bias).numel() != cols {
            return Err(dim_err("add_row", self.shape(x), self.shape(bias)));
        }
        let bv = self.value(bias).data().to_vec();
        let vx = self.value(x);
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(cols) {
            for (d, &b) in row.iter_mut().zip(&bv) {
                *d += b;
            }
        }
        let out = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddRow { x, bias }, rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = F::of(c);
        let out = self.map(x, |v| v * c);
        let rg = self.rg(x);
        self.push(out, Op::Scale { x, c }, rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = F::of(c);
        let out = self.map(x, |v| v + c);
        let rg = self.rg(x);
        self.push(out, Op::AddScalar { x }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| if v > F::zero() { v } else { F::zero() });
        let rg = self.rg(x);
        self.push(out, Op::Relu { x }, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v.tanh());
        let rg = self.rg(x);
        self.push(out, Op::Tanh { x }, rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v * v);
        let rg = self.rg(x);
        self.push(out, Op::Square { x }, rg)
    }

    /// Gathers rows of `table` (`[vocab × dim]`) for each id.
    ///
    /// Rows selected by `padding_idx` receive no gradient.
    pub fn embedding(&mut self, table: Var, ids: &[usize], padding_idx: Option<usize>) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(dim_err("embedding", t.shape(), &[ids.len()]));
        }
        let (vocab, dim) = (t.shape()[0], t.shape()[1]);
        if ids.is_empty() {
            return Err(Error::precondition("embedding lookup of an empty id list"));
        }
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(Error::precondition(format!(
                    "token id {id} out of range for vocabulary of {vocab}"
                )));
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::new(vec![ids.len(), dim], data)?;
        let rg = self.rg(table);
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
                padding_idx,
            },
            rg,
        ))
    }

    /// Row-wise layer normalization with learned gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let cols = self.value(x).cols();
        if self.value(gamma).numel() != cols || self.value(beta).numel() != cols {
            return Err(dim_err("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let eps = F::of(eps);
        let n = F::of(cols as f64);
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let vx = self.value(x);
        let rows = vx.rows();
        let mut xhat = Vec::with_capacity(vx.numel());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(vx.numel());
        for r in 0..rows {
            let row = vx.row(r);
            let mut mean = F::zero();
            for &v in row {
                mean += v;
            }
            mean = mean / n;
            let mut var = F::zero();
            for &v in row {
                var += (v - mean) * (v - mean);
            }
            var = var / n;
            let is = F::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (c, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * g[c] + b[c]);
            }
        }
        let out = Tensor::new(vx.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Inverted dropout: zero with probability `p`, scale survivors by `1/(1-p)`.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config(format!("dropout rate {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let keep = F::of(1.0 / (1.0 - p));
        let n = self.value(x).numel();
        let mask: Vec<F> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { F::zero() } else { keep })
            .collect();
        let vx = self.value(x);
        let data = vx.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Dropout { x, mask }, rg))
    }

    fn check_finite(&self, op: &str, x: Var) -> Result<()> {
        if self.value(x).data().iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric(format!("{op} received NaN input")));
        }
        Ok(())
    }

    /// Softmax over the last dimension, stabilized by max-subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.check_finite("softmax", x)?;
        let vx = self.value(x);
        let cols = vx.cols();
        let mut out = Vec::with_capacity(vx.numel());
        for row in vx.data().chunks(cols) {
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let start = out.len();
            let mut s = F::zero();
            for &v in row {
                let e = (v - m).exp();
                s += e;
                out.push(e);
            }
            for o in &mut out[start..] {
                *o = *o / s;
            }
        }
        let out = Tensor::new(vx.shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Softmax { x }, rg))
    }

    /// Log-softmax over the last dimension.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        self.check_finite("log_softmax", x)?;
        let vx = self.value(x);
        let cols = vx.cols();
        let mut out = Vec::with_capacity(vx.numel());
        for row in vx.data().chunks(cols) {
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut s = F::zero();
            for &v in row {
                s += (v - m).exp();
            }
            let lse = m + s.ln();
            out.extend(row.iter().map(|&v| v - lse));
        }
        let out = Tensor::new(vx.shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::LogSoftmax { x }, rg))
    }

    /// `ln(max(x, eps))` elementwise.
    pub fn ln_floor(&mut self, x: Var, eps: f64) -> Var {
        let eps = F::of(eps);
        let out = self.map(x, |v| v.max(eps).ln());
        let rg = self.rg(x);
        self.push(out, Op::LnFloor { x, eps }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let mut s = F::zero();
        for &v in self.value(x).data() {
            s += v;
        }
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let mut s = F::zero();
        for &v in vx.data() {
            s += v;
        }
        let s = s / F::of(vx.numel() as f64);
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean { x }, rg)
    }

    /// `Σ x ⊙ coeff` for a constant coefficient tensor of the same shape.
    pub fn dot_const(&mut self, x: Var, coeff: Vec<F>) -> Result<Var> {
        if coeff.len() != self.value(x).numel() {
            return Err(dim_err("dot_const", self.shape(x), &[coeff.len()]));
        }
        let s = dot(self.value(x).data(), &coeff);
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::DotConst { x, coeff }, rg))
    }

    /// Valid 1-D convolution over `batch` stacked sequences of length `seq`.
    ///
    /// `x` is `[batch·seq × dim]`, `w` is `[k·dim × channels]` (window rows
    /// flattened in time order), `b` is `[channels]`. Output is
    /// `[batch·(seq−k+1) × channels]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, batch: usize, seq: usize, k: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 2 || sx[0] != batch * seq {
            return Err(dim_err("conv1d", &sx, &[batch, seq]));
        }
        if k == 0 || seq < k {
            return Err(Error::precondition(format!(
                "sequence length {seq} shorter than filter size {k}"
            )));
        }
        let dim = sx[1];
        if sw.len() != 2 || sw[0] != k * dim {
            return Err(dim_err("conv1d", &sx, &sw));
        }
        let ch = sw[1];
        if self.value(b).numel() != ch {
            return Err(dim_err("conv1d", &sw, self.shape(b)));
        }
        let t_out = seq - k + 1;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let kd = k * dim;
        let mut out = vec![F::zero(); batch * t_out * ch];
        for bi in 0..batch {
            for t in 0..t_out {
                let orow = &mut out[(bi * t_out + t) * ch..(bi * t_out + t + 1) * ch];
                orow.copy_from_slice(bv);
                let start = (bi * seq + t) * dim;
                let window = &xv[start..start + kd];
                for (p, &xval) in window.iter().enumerate() {
                    let wrow = &wv[p * ch..(p + 1) * ch];
                    for (o, &wval) in orow.iter_mut().zip(wrow) {
                        *o += xval * wval;
                    }
                }
            }
        }
        self.macs.conv += (batch * t_out * kd * ch) as u64;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(
            Tensor::new(vec![batch * t_out, ch], out)?,
            Op::Conv1d { x, w, b, batch, seq, k },
            rg,
        ))
    }

    /// Per-channel maximum over time for `batch` stacked feature maps.
    ///
    /// Ties resolve to the earliest time step, which alone receives gradient.
    pub fn maxpool_time(&mut self, x: Var, batch: usize) -> Result<Var> {
        let vx = self.value(x);
        let (rows, ch) = (vx.rows(), vx.cols());
        if batch == 0 || rows % batch != 0 || rows / batch == 0 {
            return Err(Error::precondition(format!(
                "max-pool needs a non-empty time axis, got {rows} rows for batch {batch}"
            )));
        }
        let t = rows / batch;
        let data = vx.data();
        let mut out = Vec::with_capacity(batch * ch);
        let mut argmax = Vec::with_capacity(batch * ch);
        for bi in 0..batch {
            for c in 0..ch {
                let mut best = (bi * t) * ch + c;
                for s in 1..t {
                    let idx = (bi * t + s) * ch + c;
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![batch, ch], out)?, Op::MaxPool { x, argmax }, rg))
    }

    /// Multi-head scaled dot-product attention over `batch` stacked sequences.
    ///
    /// `q`, `k`, `v` are `[batch·seq × d]`; key positions at or beyond
    /// `lens[b]` are masked out for sequence `b`.
    #[allow(clippy::too_many_arguments)]
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        batch: usize,
        seq: usize,
        lens: &[usize],
    ) -> Result<Var> {
        let sq = self.shape(q).to_vec();
        if sq.len() != 2 || sq[0] != batch * seq {
            return Err(dim_err("attention", &sq, &[batch, seq]));
        }
        self.same_shape("attention", q, k)?;
        self.same_shape("attention", q, v)?;
        let d = sq[1];
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::config(format!("hidden size {d} not divisible by {heads} heads")));
        }
        if lens.len() != batch || lens.iter().any(|&l| l == 0 || l > seq) {
            return Err(Error::precondition(format!(
                "attention lengths {lens:?} invalid for batch {batch} × seq {seq}"
            )));
        }
        let dh = d / heads;
        let scale = F::of(1.0 / (dh as f64).sqrt());
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![F::zero(); batch * heads * seq * seq];
        let mut out = vec![F::zero(); batch * seq * d];
        let mut macs = 0u64;
        for b in 0..batch {
            let len = lens[b];
            for h in 0..heads {
                let off = h * dh;
                for i in 0..seq {
                    let qi = &qv[(b * seq + i) * d + off..(b * seq + i) * d + off + dh];
                    let prow = &mut probs[((b * heads + h) * seq + i) * seq..][..seq];
                    let mut m = F::neg_infinity();
                    for j in 0..len {
                        let kj = &kv[(b * seq + j) * d + off..(b * seq + j) * d + off + dh];
                        let s = dot(qi, kj) * scale;
                        prow[j] = s;
                        m = m.max(s);
                    }
                    let mut z = F::zero();
                    for p in prow.iter_mut().take(len) {
                        *p = (*p - m).exp();
                        z += *p;
                    }
                    for p in prow.iter_mut().take(len) {
                        *p = *p / z;
                    }
                    let orow = &mut out[(b * seq + i) * d + off..(b * seq + i) * d + off + dh];
                    for (j, &p) in prow.iter().enumerate().take(len) {
                        let vj = &vv[(b * seq + j) * d + off..(b * seq + j) * d + off + dh];
                        for (o, &x) in orow.iter_mut().zip(vj) {
                            *o += p * x;
                        }
                    }
                    macs += 2 * (len * dh) as u64;
                }
            }
        }
        self.macs.attention += macs;
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(
            Tensor::new(vec![batch * seq, d], out)?,
            Op::Attention {
                q,
                k,
                v,
                heads,
                batch,
                seq,
                lens: lens.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let (n, cols) = (vx.rows(), vx.cols());
        if rows.is_empty() || rows.iter().any(|&r| r >= n) {
            return Err(Error::precondition(format!(
                "row selection {rows:?} out of range for {n} rows"
            )));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            data.extend_from_slice(vx.row(r));
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![rows.len(), cols], data)?,
            Op::SelectRows { x, rows: rows.to_vec() },
            rg,
        ))
    }

    /// Mean of each row group `(start, len)`; one output row per group.
    pub fn mean_rows(&mut self, x: Var, groups: &[(usize, usize)]) -> Result<Var> {
        let vx = self.value(x);
        let (n, cols) = (vx.rows(), vx.cols());
        if groups.is_empty() || groups.iter().any(|&(s, l)| l == 0 || s + l > n) {
            return Err(Error::precondition(format!(
                "row groups {groups:?} invalid for {n} rows"
            )));
        }
        let mut data = Vec::with_capacity(groups.len() * cols);
        for &(s, l) in groups {
            let mut acc = vec![F::zero(); cols];
            for r in s..s + l {
                for (a, &v) in acc.iter_mut().zip(vx.row(r)) {
                    *a += v;
                }
            }
            let inv = F::of(1.0 / l as f64);
            data.extend(acc.into_iter().map(|a| a * inv));
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![groups.len(), cols], data)?,
            Op::MeanRows {
                x,
                groups: groups.to_vec(),
            },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::precondition("concat of zero tensors"))?;
        let rows = self.value(first).rows();
        for &x in xs {
            if self.value(x).rows() != rows {
                return Err(dim_err("concat_cols", self.shape(first), self.shape(x)));
            }
        }
        let total: usize = xs.iter().map(|&x| self.value(x).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &x in xs {
                data.extend_from_slice(self.value(x).row(r));
            }
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(
            Tensor::new(vec![rows, total], data)?,
            Op::ConcatCols { xs: xs.to_vec() },
            rg,
        ))
    }

    /// Reverse pass from a scalar `loss`. Consumes the graph: a second call fails.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Usage("graph already consumed by backward".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar root, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![F::one()]);
        let Graph { nodes, grads, .. } = self;
        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            backprop_node(nodes, grads, i, &g);
            grads[i] = Some(g);
        }
        Ok(())
    }
}

fn backprop_node<F: Element>(nodes: &[Node<F>], grads: &mut [Option<Vec<F>>], i: usize, g: &[F]) {
    let node = &nodes[i];
    let val = |v: Var| nodes[v.0].value.data();
    let rg = |v: Var| nodes[v.0].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b } => {
            let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let (av, bv) = (val(*a), val(*b));
            if rg(*a) {
                let mut da = vec![F::zero(); m * k];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        da[i * k + p] = dot(grow, &bv[p * n..(p + 1) * n]);
                    }
                }
                accumulate(grads, nodes, *a, &da);
            }
            if rg(*b) {
                let mut db = vec![F::zero(); k * n];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aval = av[i * k + p];
                        for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *d += aval * gv;
                        }
                    }
                }
                accumulate(grads, nodes, *b, &db);
            }
        }
        Op::Add { a, b } => {
            accumulate(grads, nodes, *a, g);
            accumulate(grads, nodes, *b, g);
        }
        Op::Sub { a, b } => {
            accumulate(grads, nodes, *a, g);
            if rg(*b) {
                let neg: Vec<F> = g.iter().map(|&v| -v).collect();
                accumulate(grads, nodes, *b, &neg);
            }
        }
        Op::Mul { a, b } => {
            if rg(*a) {
                let da: Vec<F> = g.iter().zip(val(*b)).map(|(&gv, &y)| gv * y).collect();
                accumulate(grads, nodes, *a, &da);
            }
            if rg(*b) {
                let db: Vec<F> = g.iter().zip(val(*a)).map(|(&gv, &x)| gv * x).collect();
                accumulate(grads, nodes, *b, &db);
            }
        }
        Op::AddRow { x, bias } => {
            accumulate(grads, nodes, *x, g);
            if rg(*bias) {
                let cols = nodes[bias.0].value.numel();
                let mut db = vec![F::zero(); cols];
                for row in g.chunks(cols) {
                    for (d, &gv) in db.iter_mut().zip(row) {
                        *d += gv;
                    }
                }
                accumulate(grads, nodes, *bias, &db);
            }
        }
        Op::Scale { x, c } => {
            let dx: Vec<F> = g.iter().map(|&v| v * *c).collect();
            accumulate(grads, nodes, *x, &dx);
        }
        Op::AddScalar { x } => accumulate(grads, nodes, *x, g),
        Op::Relu { x } => {
            let dx: Vec<F> = g
                .iter()
                .zip(val(*x))
                .map(|(&gv, &xv)| if xv > F::zero() { gv } else { F::zero() })
                .collect();
            accumulate(grads, nodes, *x, &dx);
        }
        Op::Tanh { x } => {
            let y = node.value.data();
            let dx: Vec<F> = g.iter().zip(y).map(|(&gv, &yv)| gv * (F::one() - yv * yv)).collect();
            accumulate(grads, nodes, *x, &dx);
        }
        Op::Square { x } => {
            let two = F::of(2.0);
            let dx: Vec<F> = g.iter().zip(val(*x)).map(|(&gv, &xv)| two * xv * gv).collect();
            accumulate(grads, nodes, *x, &dx);
        }
        Op::Embedding {
            table,
            ids,
            padding_idx,
        } => {
            let dim = nodes[table.0].value.cols();
            if let Some(buf) = slot(grads, nodes, *table) {
                for (r, &id) in ids.iter().enumerate() {
                    if Some(id) == *padding_idx {
                        continue;
                    }
                    for (d, &gv) in buf[id * dim..(id + 1) * dim].iter_mut().zip(&g[r * dim..(r + 1) * dim]) {
                        *d += gv;
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
            let cols = nodes[gamma.0].value.numel();
            let gam = val(*gamma);
            if rg(*gamma) {
                let mut dg = vec![F::zero(); cols];
                for (grow, hrow) in g.chunks(cols).zip(xhat.chunks(cols)) {
                    for c in 0..cols {
                        dg[c] += grow[c] * hrow[c];
                    }
                }
                accumulate(grads, nodes, *gamma, &dg);
            }
            if rg(*beta) {
                let mut db = vec![F::zero(); cols];
                for grow in g.chunks(cols) {
                    for (d, &gv) in db.iter_mut().zip(grow) {
                        *d += gv;
                    }
                }
                accumulate(grads, nodes, *beta, &db);
            }
            if rg(*x) {
                let n = F::of(cols as f64);
                let mut dx = Vec::with_capacity(g.len());
                for ((grow, hrow), &is) in g.chunks(cols).zip(xhat.chunks(cols)).zip(inv_std) {
                    let mut s1 = F::zero();
                    let mut s2 = F::zero();
                    for c in 0..cols {
                        let dh = grow[c] * gam[c];
                        s1 += dh;
                        s2 += dh * hrow[c];
                    }
                    let (m1, m2) = (s1 / n, s2 / n);
                    for c in 0..cols {
                        let dh = grow[c] * gam[c];
                        dx.push(is * (dh - m1 - hrow[c] * m2));
                    }
                }
                accumulate(grads, nodes, *x, &dx);
            }
        }
        Op::Dropout { x, mask } => {
            let dx: Vec<F> = g.iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
            accumulate(grads, nodes, *x, &dx);
        }
        Op::Softmax { x } => {
            let y = node.value.data();
            let cols = node.value.cols();
            let mut dx = Vec::with_capacity(g.len());
            for (grow, yrow) in g.chunks(cols).zip(y.chunks(cols)) {
                let s = dot(grow, yrow);
                dx.extend(grow.iter().zip(yrow).map(|(&gv, &yv)| yv * (gv - s)));
            }
            accumulate(grads, nodes, *x, &dx);
        }
        Op::LogSoftmax { x } => {
            let y = node.value.data();
            let cols = node.value.cols();
            let mut dx = Vec::with_capacity(g.len());
            for (grow, yrow) in g.chunks(cols).zip(y.chunks(cols)) {
                let mut s = F::zero();
                for &gv in grow {
                    s += gv;
                }
                dx.extend(grow.iter().zip(yrow).map(|(&gv, &yv)| gv - yv.exp() * s));
            }
            accumulate(grads, nodes, *x, &dx);
        }
        Op::LnFloor { x, eps } => {
            let dx: Vec<F> = g
                .iter()
                .zip(val(*x))
                .map(|(&gv, &xv)| if xv > *eps { gv / xv } else { F::zero() })
                .collect();
            accumulate(grads, nodes, *x, &dx);
        }
        Op::Sum { x } => {
            let n = nodes[x.0].value.numel();
            accumulate(grads, nodes, *x, &vec![g[0]; n]);
        }
        Op::Mean { x } => {
            let n = nodes[x.0].value.numel();
            let v = g[0] / F::of(n as f64);
            accumulate(grads, nodes, *x, &vec![v; n]);
        }
        Op::DotConst { x, coeff } => {
            let dx: Vec<F> = coeff.iter().map(|&c| c * g[0]).collect();
            accumulate(grads, nodes, *x, &dx);
        }
        Op::Conv1d { x, w, b, batch, seq, k } => {
            let (batch, seq, k) = (*batch, *seq, *k);
            let dim = nodes[x.0].value.cols();
            let ch = nodes[w.0].value.cols();
            let t_out = seq - k + 1;
            let kd = k * dim;
            let (xv, wv) = (val(*x), val(*w));
            if rg(*b) {
                let mut db = vec![F::zero(); ch];
                for grow in g.chunks(ch) {
                    for (d, &gv) in db.iter_mut().zip(grow) {
                        *d += gv;
                    }
                }
                accumulate(grads, nodes, *b, &db);
            }
            if rg(*w) {
                let mut dw = vec![F::zero(); kd * ch];
                for bi in 0..batch {
                    for t in 0..t_out {
                        let grow = &g[(bi * t_out + t) * ch..(bi * t_out + t + 1) * ch];
                        let start = (bi * seq + t) * dim;
                        for (p, &xval) in xv[start..start + kd].iter().enumerate() {
                            for (d, &gv) in dw[p * ch..(p + 1) * ch].iter_mut().zip(grow) {
                                *d += xval * gv;
                            }
                        }
                    }
                }
                accumulate(grads, nodes, *w, &dw);
            }
            if rg(*x) {
                let mut dx = vec![F::zero(); batch * seq * dim];
                for bi in 0..batch {
                    for t in 0..t_out {
                        let grow = &g[(bi * t_out + t) * ch..(bi * t_out + t + 1) * ch];
                        let start = (bi * seq + t) * dim;
                        for p in 0..kd {
                            dx[start + p] += dot(&wv[p * ch..(p + 1) * ch], grow);
                        }
                    }
                }
                accumulate(grads, nodes, *x, &dx);
            }
        }
        Op::MaxPool { x, argmax } => {
            if let Some(buf) = slot(grads, nodes, *x) {
                for (&idx, &gv) in argmax.iter().zip(g) {
                    buf[idx] += gv;
                }
            }
        }
        Op::Attention {
            q,
            k,
            v,
            heads,
            batch,
            seq,
            lens,
            probs,
        } => {
            let (heads, batch, seq) = (*heads, *batch, *seq);
            let d = nodes[q.0].value.cols();
            let dh = d / heads;
            let scale = F::of(1.0 / (dh as f64).sqrt());
            let (qv, kv, vv) = (val(*q), val(*k), val(*v));
            let mut dq = vec![F::zero(); qv.len()];
            let mut dk = vec![F::zero(); kv.len()];
            let mut dv = vec![F::zero(); vv.len()];
            let mut ds = vec![F::zero(); seq];
            for b in 0..batch {
                let len = lens[b];
                for h in 0..heads {
                    let off = h * dh;
                    for i in 0..seq {
                        let gi = &g[(b * seq + i) * d + off..(b * seq + i) * d + off + dh];
                        let prow = &probs[((b * heads + h) * seq + i) * seq..][..seq];
                        let mut pd = F::zero();
                        for j in 0..len {
                            let r = (b * seq + j) * d + off;
                            let dp = dot(gi, &vv[r..r + dh]);
                            ds[j] = dp;
                            pd += prow[j] * dp;
                            for (dvv, &gv) in dv[r..r + dh].iter_mut().zip(gi) {
                                *dvv += prow[j] * gv;
                            }
                        }
                        let qi_off = (b * seq + i) * d + off;
                        for j in 0..len {
                            let s = prow[j] * (ds[j] - pd) * scale;
                            let r = (b * seq + j) * d + off;
                            for e in 0..dh {
                                dq[qi_off + e] += s * kv[r + e];
                                dk[r + e] += s * qv[qi_off + e];
                            }
                        }
                    }
                }
            }
            accumulate(grads, nodes, *q, &dq);
            accumulate(grads, nodes, *k, &dk);
            accumulate(grads, nodes, *v, &dv);
        }
        Op::SelectRows { x, rows } => {
            let cols = nodes[x.0].value.cols();
            if let Some(buf) = slot(grads, nodes, *x) {
                for (r, &src) in rows.iter().enumerate() {
                    for (d, &gv) in buf[src * cols..(src + 1) * cols]
                        .iter_mut()
                        .zip(&g[r * cols..(r + 1) * cols])
                    {
                        *d += gv;
                    }
                }
            }
        }
        Op::MeanRows { x, groups } => {
            let cols = nodes[x.0].value.cols();
            if let Some(buf) = slot(grads, nodes, *x) {
                for (gi, &(s, l)) in groups.iter().enumerate() {
                    let inv = F::of(1.0 / l as f64);
                    let grow = &g[gi * cols..(gi + 1) * cols];
                    for r in s..s + l {
                        for (d, &gv) in buf[r * cols..(r + 1) * cols].iter_mut().zip(grow) {
                            *d += gv * inv;
                        }
                    }
                }
            }
        }
        Op::ConcatCols { xs } => {
            let total = node.value.cols();
            let rows = node.value.rows();
            let mut off = 0;
            for &x in xs {
                let c = nodes[x.0].value.cols();
                if rg(x) {
                    let mut dx = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        dx.extend_from_slice(&g[r * total + off..r * total + off + c]);
                    }
                    accumulate(grads, nodes, x, &dx);
                }
                off += c;
            }
        }
    }
}
