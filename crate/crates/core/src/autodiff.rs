//! Reverse-mode automatic differentiation on an explicit tape.
//!
//! Forward calls record one node per primitive (define-by-run, eager values);
//! [`Tape::backward`] walks the recording in reverse, applying each
//! primitive's hand-derived local gradient. Node indices are topologically
//! ordered by construction, so a single reverse sweep suffices.
//!
//! The op set is exactly what the sequence models need: dense matmul, the two
//! 1-D convolutions, pointwise nonlinearities, the normalization layers, the
//! zero-order-hold discretization, the linear state recurrence, and the
//! smoothed cross-entropy head. Gradient correctness for every op is pinned
//! by central-difference checks in the test module below.

use crate::error::{Error, Result};
use crate::ssm::{zoh_abar, zoh_bbar, zoh_bbar_dgrad_a, zoh_bbar_dgrad_delta};
use crate::tensor::{matmul_slices, Tensor};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Batch-norm statistics source.
#[derive(Debug, Clone)]
pub enum BnMode {
    /// Normalize with statistics of the current input (training).
    Train,
    /// Normalize with externally supplied running statistics (inference).
    Eval { mean: Vec<f64>, var: Vec<f64> },
}

/// Per-feature statistics observed by a training-mode batch-norm node.
/// `var` is the unbiased estimate, ready for running-average updates.
#[derive(Debug, Clone)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    Tanh(Var),
    Softplus(Var),
    Exp(Var),
    SoftmaxVec(Var),
    SumAll(Var),
    MeanRows(Var),
    Transpose(Var),
    Reverse(Var),
    SliceCols { x: Var, start: usize, len: usize },
    ConcatCols(Vec<Var>),
    LayerNormRows { x: Var, gamma: Var, beta: Var, eps: f64 },
    BatchNorm { x: Var, gamma: Var, beta: Var, eps: f64, mean: Vec<f64>, var: Vec<f64>, train: bool },
    ConvSame { x: Var, w: Var, b: Var },
    DwConvCausal { x: Var, w: Var, b: Var },
    ZohDecay { delta: Var, a: Var },
    ZohDrive { delta: Var, a: Var, b_in: Var, x: Var },
    ScanRec { decay: Var, drive: Var },
    Readout { h: Var, c: Var },
    SmoothedCe { logits: Var, target: usize, eps: f64 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::MulRow(..) => "mul_row",
            Op::Scale(..) => "scale",
            Op::Silu(..) => "silu",
            Op::Tanh(..) => "tanh",
            Op::Softplus(..) => "softplus",
            Op::Exp(..) => "exp",
            Op::SoftmaxVec(..) => "softmax_vec",
            Op::SumAll(..) => "sum_all",
            Op::MeanRows(..) => "mean_rows",
            Op::Transpose(..) => "transpose",
            Op::Reverse(..) => "reverse",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::LayerNormRows { .. } => "layer_norm_rows",
            Op::BatchNorm { .. } => "batch_norm",
            Op::ConvSame { .. } => "conv1d_same",
            Op::DwConvCausal { .. } => "dw_conv_causal",
            Op::ZohDecay { .. } => "zoh_decay",
            Op::ZohDrive { .. } => "zoh_drive",
            Op::ScanRec { .. } => "scan_rec",
            Op::Readout { .. } => "readout",
            Op::SmoothedCe { .. } => "smoothed_ce",
        }
    }
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softplus `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Recording tape. One tape per forward pass; parameters are re-registered as
/// leaves each time, so node handles are only valid for the tape that made them.
pub struct Tape {
    vals: Vec<Tensor>,
    ops: Vec<Op>,
    macs: u64,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads {
    g: Vec<Option<Vec<f64>>>,
}

impl Grads {
    /// Gradient for `v`, if the backward sweep reached it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.g[v.0].as_deref()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape { vals: Vec::new(), ops: Vec::new(), macs: 0 }
    }

    /// Nominal multiply-accumulate count of the forward ops recorded so far
    /// (dense matmul, convolutions, and the state recurrence/readout; the
    /// standard convention that ignores padding short-circuits and
    /// elementwise work). Used to validate the analytic cost profiler.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    /// Register an input or parameter tensor.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Value of a node.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.vals[v.0]
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    fn push(&mut self, val: Tensor, op: Op) -> Var {
        self.vals.push(val);
        self.ops.push(op);
        Var(self.vals.len() - 1)
    }

    fn shape_err(&self, op: &str, detail: String) -> Error {
        Error::Shape(format!("{op}: {detail}"))
    }

    // ── Dense / elementwise ops ─────────────────────────────────────────

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.vals[a.0].shape(), self.vals[b.0].shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_slices(self.vals[a.0].data(), self.vals[b.0].data(), &mut out, m, k, n);
        self.macs += (m * k * n) as u64;
        Ok(self.push(Tensor::from_vec(&[m, n], out)?, Op::MatMul(a, b)))
    }

    /// Elementwise sum of two same-shape nodes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.vals[a.0].zip(&self.vals[b.0], |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    /// `[m,n] + [n]` with the row vector broadcast over rows.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (sx, sr) = (self.vals[x.0].shape(), self.vals[row.0].shape());
        if sx.len() != 2 || sr != [sx[1]] {
            return Err(self.shape_err("add_row", format!("{sx:?} + {sr:?}")));
        }
        let (m, n) = (sx[0], sx[1]);
        let xv = self.vals[x.0].data();
        let rv = self.vals[row.0].data();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(xv[i * n + j] + rv[j]);
            }
        }
        Ok(self.push(Tensor::from_vec(&[m, n], out)?, Op::AddRow(x, row)))
    }

    /// Elementwise product of two same-shape nodes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.vals[a.0].zip(&self.vals[b.0], |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    /// `[m,n] * [n]` with the row vector broadcast over rows.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (sx, sr) = (self.vals[x.0].shape(), self.vals[row.0].shape());
        if sx.len() != 2 || sr != [sx[1]] {
            return Err(self.shape_err("mul_row", format!("{sx:?} * {sr:?}")));
        }
        let (m, n) = (sx[0], sx[1]);
        let xv = self.vals[x.0].data();
        let rv = self.vals[row.0].data();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(xv[i * n + j] * rv[j]);
            }
        }
        Ok(self.push(Tensor::from_vec(&[m, n], out)?, Op::MulRow(x, row)))
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.vals[a.0].map(|x| c * x);
        self.push(t, Op::Scale(a, c))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let t = self.vals[a.0].map(|x| x * sigmoid(x));
        self.push(t, Op::Silu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.vals[a.0].map(f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let t = self.vals[a.0].map(softplus);
        self.push(t, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.vals[a.0].map(f64::exp);
        self.push(t, Op::Exp(a))
    }

    /// Softmax over all elements, treated as one flat vector.
    pub fn softmax_vec(&mut self, a: Var) -> Var {
        let x = self.vals[a.0].data();
        let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = x.iter().map(|&v| (v - mx).exp()).collect();
        let z: f64 = exps.iter().sum();
        let t = Tensor::from_vec(self.vals[a.0].shape(), exps.iter().map(|e| e / z).collect())
            .expect("same shape");
        self.push(t, Op::SoftmaxVec(a))
    }

    /// Sum of all elements, as a `[1]` scalar node.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.vals[a.0].data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    /// Column means of `[m,n]`, as `[1,n]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let s = self.vals[a.0].shape();
        if s.len() != 2 || s[0] == 0 {
            return Err(self.shape_err("mean_rows", format!("{s:?}")));
        }
        let (m, n) = (s[0], s[1]);
        let x = self.vals[a.0].data();
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += x[i * n + j];
            }
        }
        for o in &mut out {
            *o /= m as f64;
        }
        Ok(self.push(Tensor::from_vec(&[1, n], out)?, Op::MeanRows(a)))
    }

    /// Transpose of a rank-2 node.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.vals[a.0].transpose2()?;
        Ok(self.push(t, Op::Transpose(a)))
    }

    /// Rows in reverse order (time reversal for `[L, d]`).
    pub fn reverse_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.vals[a.0].reverse_rows()?;
        Ok(self.push(t, Op::Reverse(a)))
    }

    /// Columns `start..start+len` of a rank-2 node.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.vals[x.0].shape();
        if s.len() != 2 || start + len > s[1] {
            return Err(self.shape_err("slice_cols", format!("{s:?} cols {start}..{}", start + len)));
        }
        let (m, n) = (s[0], s[1]);
        let xv = self.vals[x.0].data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&xv[i * n + start..i * n + start + len]);
        }
        Ok(self.push(Tensor::from_vec(&[m, len], out)?, Op::SliceCols { x, start, len }))
    }

    /// Concatenate rank-2 nodes with equal row counts along columns.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(self.shape_err("concat_cols", "empty input list".into()));
        }
        let m = self.vals[xs[0].0].dim(0);
        let mut widths = Vec::with_capacity(xs.len());
        for &v in xs {
            let s = self.vals[v.0].shape();
            if s.len() != 2 || s[0] != m {
                return Err(self.shape_err("concat_cols", format!("row mismatch: {s:?}")));
            }
            widths.push(s[1]);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&v, &w) in xs.iter().zip(&widths) {
                let d = self.vals[v.0].data();
                out.extend_from_slice(&d[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(Tensor::from_vec(&[m, n], out)?, Op::ConcatCols(xs.to_vec())))
    }

    // ── Normalization ───────────────────────────────────────────────────

    /// Layer norm over the last axis of `[m,n]`, with per-feature affine.
    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let s = self.vals[x.0].shape().to_vec();
        if s.len() != 2
            || self.vals[gamma.0].shape() != [s[1]]
            || self.vals[beta.0].shape() != [s[1]]
        {
            return Err(self.shape_err("layer_norm_rows", format!("x {s:?}")));
        }
        let (m, n) = (s[0], s[1]);
        let xv = self.vals[x.0].data();
        let g = self.vals[gamma.0].data();
        let b = self.vals[beta.0].data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..n {
                out[i * n + j] = g[j] * (row[j] - mu) * inv + b[j];
            }
        }
        Ok(self.push(Tensor::from_vec(&[m, n], out)?, Op::LayerNormRows { x, gamma, beta, eps }))
    }

    /// Batch norm over `[F, M]` where rows are feature maps and columns are
    /// the samples normalized over (batch x time). In `Train` mode the second
    /// return value carries the observed batch statistics (unbiased variance)
    /// for running-average updates; in `Eval` mode it is `None`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        mode: BnMode,
    ) -> Result<(Var, Option<BnBatchStats>)> {
        let s = self.vals[x.0].shape().to_vec();
        if s.len() != 2
            || self.vals[gamma.0].shape() != [s[0]]
            || self.vals[beta.0].shape() != [s[0]]
        {
            return Err(self.shape_err("batch_norm", format!("x {s:?}")));
        }
        let (f, m) = (s[0], s[1]);
        let (mean, var, train, stats) = match mode {
            BnMode::Train => {
                if m < 2 {
                    return Err(Error::Config(format!(
                        "batch_norm: training mode needs at least 2 samples per feature, got {m}"
                    )));
                }
                let xv = self.vals[x.0].data();
                let mut mean = vec![0.0; f];
                let mut var = vec![0.0; f];
                for fi in 0..f {
                    let row = &xv[fi * m..(fi + 1) * m];
                    let mu = row.iter().sum::<f64>() / m as f64;
                    let v = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / m as f64;
                    mean[fi] = mu;
                    var[fi] = v;
                }
                let unbiased: Vec<f64> =
                    var.iter().map(|&v| v * m as f64 / (m as f64 - 1.0)).collect();
                let stats = BnBatchStats { mean: mean.clone(), var: unbiased };
                (mean, var, true, Some(stats))
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != f || var.len() != f {
                    return Err(self.shape_err(
                        "batch_norm",
                        format!("running stats length {} for {} features", mean.len(), f),
                    ));
                }
                (mean, var, false, None)
            }
        };
        let xv = self.vals[x.0].data();
        let g = self.vals[gamma.0].data();
        let b = self.vals[beta.0].data();
        let mut out = vec![0.0; f * m];
        for fi in 0..f {
            let inv = 1.0 / (var[fi] + eps).sqrt();
            for j in 0..m {
                out[fi * m + j] = g[fi] * (xv[fi * m + j] - mean[fi]) * inv + b[fi];
            }
        }
        let v = self.push(
            Tensor::from_vec(&[f, m], out)?,
            Op::BatchNorm { x, gamma, beta, eps, mean, var, train },
        );
        Ok((v, stats))
    }

    // ── Convolutions ────────────────────────────────────────────────────

    /// Same-padded 1-D convolution: `x [Cin,L]`, `w [Cout,Cin,k]` (odd `k`),
    /// `b [Cout]` -> `[Cout,L]`. Zero padding of `(k-1)/2` on both sides.
    pub fn conv1d_same(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let sx = self.vals[x.0].shape().to_vec();
        let sw = self.vals[w.0].shape().to_vec();
        if sx.len() != 2 || sw.len() != 3 || sw[1] != sx[0] {
            return Err(self.shape_err("conv1d_same", format!("x {sx:?}, w {sw:?}")));
        }
        let (cin, l) = (sx[0], sx[1]);
        let (cout, k) = (sw[0], sw[2]);
        if k % 2 == 0 {
            return Err(Error::Config(format!(
                "conv1d_same: kernel size must be odd for symmetric padding, got {k}"
            )));
        }
        if self.vals[b.0].shape() != [cout] {
            return Err(self.shape_err("conv1d_same", format!("bias {:?}", self.vals[b.0].shape())));
        }
        let pad = (k - 1) / 2;
        let xv = self.vals[x.0].data();
        let wv = self.vals[w.0].data();
        let bv = self.vals[b.0].data();
        let mut out = vec![0.0; cout * l];
        for o in 0..cout {
            for t in 0..l {
                let mut acc = bv[o];
                for c in 0..cin {
                    for j in 0..k {
                        let src = t as isize + j as isize - pad as isize;
                        if src >= 0 && (src as usize) < l {
                            acc += wv[(o * cin + c) * k + j] * xv[c * l + src as usize];
                        }
                    }
                }
                out[o * l + t] = acc;
            }
        }
        self.macs += (cout * cin * k * l) as u64;
        Ok(self.push(Tensor::from_vec(&[cout, l], out)?, Op::ConvSame { x, w, b }))
    }

    /// Depthwise causal 1-D convolution on time-major input: `x [L,D]`,
    /// `w [D,k]`, `b [D]` -> `[L,D]`, left-padded with `k-1` zeros.
    pub fn dw_conv_causal(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let sx = self.vals[x.0].shape().to_vec();
        let sw = self.vals[w.0].shape().to_vec();
        if sx.len() != 2 || sw.len() != 2 || sw[0] != sx[1] {
            return Err(self.shape_err("dw_conv_causal", format!("x {sx:?}, w {sw:?}")));
        }
        let (l, d) = (sx[0], sx[1]);
        let k = sw[1];
        if self.vals[b.0].shape() != [d] {
            return Err(self.shape_err("dw_conv_causal", format!("bias {:?}", self.vals[b.0].shape())));
        }
        let xv = self.vals[x.0].data();
        let wv = self.vals[w.0].data();
        let bv = self.vals[b.0].data();
        let mut out = vec![0.0; l * d];
        for t in 0..l {
            for di in 0..d {
                let mut acc = bv[di];
                for j in 0..k {
                    let src = t as isize - (k as isize - 1) + j as isize;
                    if src >= 0 {
                        acc += wv[di * k + j] * xv[src as usize * d + di];
                    }
                }
                out[t * d + di] = acc;
            }
        }
        self.macs += (d * k * l) as u64;
        Ok(self.push(Tensor::from_vec(&[l, d], out)?, Op::DwConvCausal { x, w, b }))
    }

    // ── Selective-state-space primitives ────────────────────────────────

    /// Discrete decay factors `exp(delta[l,d] * a[d,n])` -> `[L,D,N]`.
    pub fn zoh_decay(&mut self, delta: Var, a: Var) -> Result<Var> {
        let sd = self.vals[delta.0].shape().to_vec();
        let sa = self.vals[a.0].shape().to_vec();
        if sd.len() != 2 || sa.len() != 2 || sd[1] != sa[0] {
            return Err(self.shape_err("zoh_decay", format!("delta {sd:?}, a {sa:?}")));
        }
        let (l, d, n) = (sd[0], sd[1], sa[1]);
        let dv = self.vals[delta.0].data();
        let av = self.vals[a.0].data();
        let mut out = vec![0.0; l * d * n];
        for li in 0..l {
            for di in 0..d {
                let dt = dv[li * d + di];
                for ni in 0..n {
                    out[(li * d + di) * n + ni] = zoh_abar(dt, av[di * n + ni]);
                }
            }
        }
        Ok(self.push(Tensor::from_vec(&[l, d, n], out)?, Op::ZohDecay { delta, a }))
    }

    /// Discrete drive `bbar(delta, a) * B[l,n] * x[l,d]` -> `[L,D,N]`, where
    /// `bbar` is the zero-order-hold input coefficient with its small-|delta*a|
    /// series branch.
    pub fn zoh_drive(&mut self, delta: Var, a: Var, b_in: Var, x: Var) -> Result<Var> {
        let sd = self.vals[delta.0].shape().to_vec();
        let sa = self.vals[a.0].shape().to_vec();
        let sb = self.vals[b_in.0].shape().to_vec();
        let sx = self.vals[x.0].shape().to_vec();
        if sd.len() != 2 || sa.len() != 2 || sd[1] != sa[0] {
            return Err(self.shape_err("zoh_drive", format!("delta {sd:?}, a {sa:?}")));
        }
        let (l, d, n) = (sd[0], sd[1], sa[1]);
        if sb != [l, n] || sx != [l, d] {
            return Err(self.shape_err("zoh_drive", format!("B {sb:?}, x {sx:?}")));
        }
        let dv = self.vals[delta.0].data();
        let av = self.vals[a.0].data();
        let bv = self.vals[b_in.0].data();
        let xv = self.vals[x.0].data();
        let mut out = vec![0.0; l * d * n];
        for li in 0..l {
            for di in 0..d {
                let dt = dv[li * d + di];
                let xval = xv[li * d + di];
                for ni in 0..n {
                    out[(li * d + di) * n + ni] =
                        zoh_bbar(dt, av[di * n + ni], bv[li * n + ni]) * xval;
                }
            }
        }
        Ok(self.push(Tensor::from_vec(&[l, d, n], out)?, Op::ZohDrive { delta, a, b_in, x }))
    }

    /// Linear recurrence `h_t = decay_t * h_{t-1} + drive_t` over axis 0 of
    /// `[L,D,N]`, with `h_{-1} = 0`.
    pub fn scan_rec(&mut self, decay: Var, drive: Var) -> Result<Var> {
        let sa = self.vals[decay.0].shape().to_vec();
        if sa.len() != 3 || self.vals[drive.0].shape() != sa.as_slice() {
            return Err(self.shape_err(
                "scan_rec",
                format!("decay {sa:?}, drive {:?}", self.vals[drive.0].shape()),
            ));
        }
        let (l, lane) = (sa[0], sa[1] * sa[2]);
        let av = self.vals[decay.0].data();
        let bv = self.vals[drive.0].data();
        let mut out = vec![0.0; l * lane];
        for t in 0..l {
            for j in 0..lane {
                let prev = if t == 0 { 0.0 } else { out[(t - 1) * lane + j] };
                out[t * lane + j] = av[t * lane + j] * prev + bv[t * lane + j];
            }
        }
        self.macs += (l * lane) as u64;
        Ok(self.push(Tensor::from_vec(&sa, out)?, Op::ScanRec { decay, drive }))
    }

    /// Per-step state readout `y[l,d] = sum_n h[l,d,n] * c[l,n]`.
    pub fn readout(&mut self, h: Var, c: Var) -> Result<Var> {
        let sh = self.vals[h.0].shape().to_vec();
        let sc = self.vals[c.0].shape().to_vec();
        if sh.len() != 3 || sc != [sh[0], sh[2]] {
            return Err(self.shape_err("readout", format!("h {sh:?}, c {sc:?}")));
        }
        let (l, d, n) = (sh[0], sh[1], sh[2]);
        let hv = self.vals[h.0].data();
        let cv = self.vals[c.0].data();
        let mut out = vec![0.0; l * d];
        for li in 0..l {
            for di in 0..d {
                let mut acc = 0.0;
                for ni in 0..n {
                    acc += hv[(li * d + di) * n + ni] * cv[li * n + ni];
                }
                out[li * d + di] = acc;
            }
        }
        self.macs += (l * d * n) as u64;
        Ok(self.push(Tensor::from_vec(&[l, d], out)?, Op::Readout { h, c }))
    }

    // ── Loss ────────────────────────────────────────────────────────────

    /// Label-smoothed cross-entropy of one logit vector against a class index.
    /// Targets are smoothed to `(1-eps)` on the true class plus `eps/K` everywhere.
    pub fn smoothed_ce(&mut self, logits: Var, target: usize, eps: f64) -> Result<Var> {
        let k = self.vals[logits.0].numel();
        if k == 0 || target >= k {
            return Err(Error::Config(format!(
                "smoothed_ce: target {target} out of range for {k} classes"
            )));
        }
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::Config(format!("smoothed_ce: smoothing {eps} not in [0,1)")));
        }
        let z = self.vals[logits.0].data();
        let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = z.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln() + mx;
        let mut loss = 0.0;
        for (i, &zi) in z.iter().enumerate() {
            let q = eps / k as f64 + if i == target { 1.0 - eps } else { 0.0 };
            loss -= q * (zi - lse);
        }
        Ok(self.push(Tensor::scalar(loss), Op::SmoothedCe { logits, target, eps }))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar root. Returns per-node gradients.
    pub fn backward(&self, root: Var) -> Result<Grads> {
        if self.vals[root.0].numel() != 1 {
            return Err(Error::Shape(format!(
                "backward: root must be scalar, got shape {:?}",
                self.vals[root.0].shape()
            )));
        }
        let mut g: Vec<Option<Vec<f64>>> = vec![None; self.vals.len()];
        g[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(gout) = g[i].take() else { continue };
            if matches!(self.ops[i], Op::Leaf) {
                g[i] = Some(gout); // keep leaf gradients for the caller
                continue;
            }
            if gout.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient flowing into '{}' node {i}",
                    self.ops[i].name()
                )));
            }
            self.apply_backward(i, &gout, &mut g);
        }
        Ok(Grads { g })
    }

    fn acc<'a>(g: &'a mut [Option<Vec<f64>>], v: Var, len: usize) -> &'a mut [f64] {
        g[v.0].get_or_insert_with(|| vec![0.0; len]).as_mut_slice()
    }

    fn apply_backward(&self, i: usize, gout: &[f64], g: &mut [Option<Vec<f64>>]) {
        match &self.ops[i] {
            Op::Leaf => unreachable!("leaves handled in backward loop"),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.vals[a.0].data(), self.vals[b.0].data());
                let (m, k) = (self.vals[a.0].dim(0), self.vals[a.0].dim(1));
                let n = self.vals[b.0].dim(1);
                {
                    // dA[i,p] += sum_j g[i,j] * B[p,j]
                    let da = Self::acc(g, *a, m * k);
                    for ii in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += gout[ii * n + j] * bv[p * n + j];
                            }
                            da[ii * k + p] += acc;
                        }
                    }
                }
                {
                    // dB[p,j] += sum_i A[i,p] * g[i,j]
                    let db = Self::acc(g, *b, k * n);
                    for p in 0..k {
                        for ii in 0..m {
                            let apv = av[ii * k + p];
                            if apv == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] += apv * gout[ii * n + j];
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    let d = Self::acc(g, *v, gout.len());
                    for (dst, &src) in d.iter_mut().zip(gout) {
                        *dst += src;
                    }
                }
            }
            Op::AddRow(x, row) => {
                let (m, n) = (self.vals[x.0].dim(0), self.vals[x.0].dim(1));
                {
                    let dx = Self::acc(g, *x, m * n);
                    for (dst, &src) in dx.iter_mut().zip(gout) {
                        *dst += src;
                    }
                }
                let dr = Self::acc(g, *row, n);
                for i in 0..m {
                    for j in 0..n {
                        dr[j] += gout[i * n + j];
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.vals[a.0].data(), self.vals[b.0].data());
                {
                    let da = Self::acc(g, *a, av.len());
                    for j in 0..da.len() {
                        da[j] += gout[j] * bv[j];
                    }
                }
                let db = Self::acc(g, *b, bv.len());
                for j in 0..db.len() {
                    db[j] += gout[j] * av[j];
                }
            }
            Op::MulRow(x, row) => {
                let (m, n) = (self.vals[x.0].dim(0), self.vals[x.0].dim(1));
                let xv = self.vals[x.0].data();
                let rv = self.vals[row.0].data();
                {
                    let dx = Self::acc(g, *x, m * n);
                    for i in 0..m {
                        for j in 0..n {
                            dx[i * n + j] += gout[i * n + j] * rv[j];
                        }
                    }
                }
                let dr = Self::acc(g, *row, n);
                for i in 0..m {
                    for j in 0..n {
                        dr[j] += gout[i * n + j] * xv[i * n + j];
                    }
                }
            }
            Op::Scale(a, c) => {
                let da = Self::acc(g, *a, gout.len());
                for (dst, &src) in da.iter_mut().zip(gout) {
                    *dst += c * src;
                }
            }
            Op::Silu(a) => {
                let xv = self.vals[a.0].data();
                let da = Self::acc(g, *a, gout.len());
                for j in 0..da.len() {
                    let s = sigmoid(xv[j]);
                    da[j] += gout[j] * s * (1.0 + xv[j] * (1.0 - s));
                }
            }
            Op::Tanh(a) => {
                let yv = self.vals[i].data();
                let da = Self::acc(g, *a, gout.len());
                for j in 0..da.len() {
                    da[j] += gout[j] * (1.0 - yv[j] * yv[j]);
                }
            }
            Op::Softplus(a) => {
                let xv = self.vals[a.0].data();
                let da = Self::acc(g, *a, gout.len());
                for j in 0..da.len() {
                    da[j] += gout[j] * sigmoid(xv[j]);
                }
            }
            Op::Exp(a) => {
                let yv = self.vals[i].data();
                let da = Self::acc(g, *a, gout.len());
                for j in 0..da.len() {
                    da[j] += gout[j] * yv[j];
                }
            }
            Op::SoftmaxVec(a) => {
                let yv = self.vals[i].data();
                let dot: f64 = gout.iter().zip(yv).map(|(&gi, &yi)| gi * yi).sum();
                let da = Self::acc(g, *a, gout.len());
                for j in 0..da.len() {
                    da[j] += yv[j] * (gout[j] - dot);
                }
            }
            Op::SumAll(a) => {
                let da = Self::acc(g, *a, self.vals[a.0].numel());
                for d in da.iter_mut() {
                    *d += gout[0];
                }
            }
            Op::MeanRows(a) => {
                let (m, n) = (self.vals[a.0].dim(0), self.vals[a.0].dim(1));
                let da = Self::acc(g, *a, m * n);
                for ii in 0..m {
                    for j in 0..n {
                        da[ii * n + j] += gout[j] / m as f64;
                    }
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (self.vals[a.0].dim(0), self.vals[a.0].dim(1));
                let da = Self::acc(g, *a, m * n);
                // gout has shape [n, m]
                for ii in 0..m {
                    for j in 0..n {
                        da[ii * n + j] += gout[j * m + ii];
                    }
                }
            }
            Op::Reverse(a) => {
                let (m, n) = (self.vals[a.0].dim(0), self.vals[a.0].dim(1));
                let da = Self::acc(g, *a, m * n);
                for ii in 0..m {
                    let src = &gout[(m - 1 - ii) * n..(m - ii) * n];
                    for j in 0..n {
                        da[ii * n + j] += src[j];
                    }
                }
            }
            Op::SliceCols { x, start, len } => {
                let (m, n) = (self.vals[x.0].dim(0), self.vals[x.0].dim(1));
                let dx = Self::acc(g, *x, m * n);
                for ii in 0..m {
                    for j in 0..*len {
                        dx[ii * n + start + j] += gout[ii * len + j];
                    }
                }
            }
            Op::ConcatCols(xs) => {
                let widths: Vec<usize> = xs.iter().map(|v| self.vals[v.0].dim(1)).collect();
                let m = self.vals[xs[0].0].dim(0);
                let n: usize = widths.iter().sum();
                let mut off = 0;
                for (&v, &w) in xs.iter().zip(&widths) {
                    let dv = Self::acc(g, v, m * w);
                    for ii in 0..m {
                        for j in 0..w {
                            dv[ii * w + j] += gout[ii * n + off + j];
                        }
                    }
                    off += w;
                }
            }
            Op::LayerNormRows { x, gamma, beta, eps } => {
                let (m, n) = (self.vals[x.0].dim(0), self.vals[x.0].dim(1));
                let xv = self.vals[x.0].data();
                let gv = self.vals[gamma.0].data();
                let nf = n as f64;
                // Recompute per-row statistics (cheap relative to storing them).
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                let mut dx = vec![0.0; m * n];
                for ii in 0..m {
                    let row = &xv[ii * n..(ii + 1) * n];
                    let grow = &gout[ii * n..(ii + 1) * n];
                    let mu = row.iter().sum::<f64>() / nf;
                    let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / nf;
                    let inv = 1.0 / (var + eps).sqrt();
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for j in 0..n {
                        let xh = (row[j] - mu) * inv;
                        let t = grow[j] * gv[j];
                        dgamma[j] += grow[j] * xh;
                        dbeta[j] += grow[j];
                        m1 += t;
                        m2 += t * xh;
                    }
                    m1 /= nf;
                    m2 /= nf;
                    for j in 0..n {
                        let xh = (row[j] - mu) * inv;
                        dx[ii * n + j] = (grow[j] * gv[j] - m1 - xh * m2) * inv;
                    }
                }
                {
                    let d = Self::acc(g, *x, m * n);
                    for (dst, src) in d.iter_mut().zip(&dx) {
                        *dst += src;
                    }
                }
                {
                    let d = Self::acc(g, *gamma, n);
                    for (dst, src) in d.iter_mut().zip(&dgamma) {
                        *dst += src;
                    }
                }
                let d = Self::acc(g, *beta, n);
                for (dst, src) in d.iter_mut().zip(&dbeta) {
                    *dst += src;
                }
            }
            Op::BatchNorm { x, gamma, beta, eps, mean, var, train } => {
                let (f, m) = (self.vals[x.0].dim(0), self.vals[x.0].dim(1));
                let xv = self.vals[x.0].data();
                let gv = self.vals[gamma.0].data();
                let mf = m as f64;
                let mut dgamma = vec![0.0; f];
                let mut dbeta = vec![0.0; f];
                let mut dx = vec![0.0; f * m];
                for fi in 0..f {
                    let inv = 1.0 / (var[fi] + eps).sqrt();
                    let row = &xv[fi * m..(fi + 1) * m];
                    let grow = &gout[fi * m..(fi + 1) * m];
                    if *train {
                        // Gradients flow through the batch statistics.
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..m {
                            let xh = (row[j] - mean[fi]) * inv;
                            dgamma[fi] += grow[j] * xh;
                            dbeta[fi] += grow[j];
                            let t = grow[j] * gv[fi];
                            m1 += t;
                            m2 += t * xh;
                        }
                        m1 /= mf;
                        m2 /= mf;
                        for j in 0..m {
                            let xh = (row[j] - mean[fi]) * inv;
                            dx[fi * m + j] = (grow[j] * gv[fi] - m1 - xh * m2) * inv;
                        }
                    } else {
                        // Running statistics are constants.
                        for j in 0..m {
                            let xh = (row[j] - mean[fi]) * inv;
                            dgamma[fi] += grow[j] * xh;
                            dbeta[fi] += grow[j];
                            dx[fi * m + j] = grow[j] * gv[fi] * inv;
                        }
                    }
                }
                {
                    let d = Self::acc(g, *x, f * m);
                    for (dst, src) in d.iter_mut().zip(&dx) {
                        *dst += src;
                    }
                }
                {
                    let d = Self::acc(g, *gamma, f);
                    for (dst, src) in d.iter_mut().zip(&dgamma) {
                        *dst += src;
                    }
                }
                let d = Self::acc(g, *beta, f);
                for (dst, src) in d.iter_mut().zip(&dbeta) {
                    *dst += src;
                }
            }
            Op::ConvSame { x, w, b } => {
                let (cin, l) = (self.vals[x.0].dim(0), self.vals[x.0].dim(1));
                let (cout, k) = (self.vals[w.0].dim(0), self.vals[w.0].dim(2));
                let pad = (k - 1) / 2;
                let xv = self.vals[x.0].data();
                let wv = self.vals[w.0].data();
                {
                    let db = Self::acc(g, *b, cout);
                    for o in 0..cout {
                        db[o] += gout[o * l..(o + 1) * l].iter().sum::<f64>();
                    }
                }
                {
                    let dw = Self::acc(g, *w, cout * cin * k);
                    for o in 0..cout {
                        for c in 0..cin {
                            for j in 0..k {
                                let mut acc = 0.0;
                                for t in 0..l {
                                    let src = t as isize + j as isize - pad as isize;
                                    if src >= 0 && (src as usize) < l {
                                        acc += gout[o * l + t] * xv[c * l + src as usize];
                                    }
                                }
                                dw[(o * cin + c) * k + j] += acc;
                            }
                        }
                    }
                }
                let dx = Self::acc(g, *x, cin * l);
                for c in 0..cin {
                    for s in 0..l {
                        let mut acc = 0.0;
                        for o in 0..cout {
                            for j in 0..k {
                                let t = s as isize - j as isize + pad as isize;
                                if t >= 0 && (t as usize) < l {
                                    acc += wv[(o * cin + c) * k + j] * gout[o * l + t as usize];
                                }
                            }
                        }
                        dx[c * l + s] += acc;
                    }
                }
            }
            Op::DwConvCausal { x, w, b } => {
                let (l, d) = (self.vals[x.0].dim(0), self.vals[x.0].dim(1));
                let k = self.vals[w.0].dim(1);
                let xv = self.vals[x.0].data();
                let wv = self.vals[w.0].data();
                {
                    let db = Self::acc(g, *b, d);
                    for t in 0..l {
                        for di in 0..d {
                            db[di] += gout[t * d + di];
                        }
                    }
                }
                {
                    let dw = Self::acc(g, *w, d * k);
                    for di in 0..d {
                        for j in 0..k {
                            let mut acc = 0.0;
                            for t in 0..l {
                                let src = t as isize - (k as isize - 1) + j as isize;
                                if src >= 0 {
                                    acc += gout[t * d + di] * xv[src as usize * d + di];
                                }
                            }
                            dw[di * k + j] += acc;
                        }
                    }
                }
                let dx = Self::acc(g, *x, l * d);
                for s in 0..l {
                    for di in 0..d {
                        let mut acc = 0.0;
                        for j in 0..k {
                            let t = s as isize + (k as isize - 1) - j as isize;
                            if t >= 0 && (t as usize) < l {
                                acc += wv[di * k + j] * gout[t as usize * d + di];
                            }
                        }
                        dx[s * d + di] += acc;
                    }
                }
            }
            Op::ZohDecay { delta, a } => {
                let (l, d) = (self.vals[delta.0].dim(0), self.vals[delta.0].dim(1));
                let n = self.vals[a.0].dim(1);
                let dv = self.vals[delta.0].data();
                let av = self.vals[a.0].data();
                let outv = self.vals[i].data();
                {
                    let dd = Self::acc(g, *delta, l * d);
                    for li in 0..l {
                        for di in 0..d {
                            let mut acc = 0.0;
                            for ni in 0..n {
                                let idx = (li * d + di) * n + ni;
                                acc += gout[idx] * outv[idx] * av[di * n + ni];
                            }
                            dd[li * d + di] += acc;
                        }
                    }
                }
                let da = Self::acc(g, *a, d * n);
                for li in 0..l {
                    for di in 0..d {
                        let dt = dv[li * d + di];
                        for ni in 0..n {
                            let idx = (li * d + di) * n + ni;
                            da[di * n + ni] += gout[idx] * outv[idx] * dt;
                        }
                    }
                }
            }
            Op::ZohDrive { delta, a, b_in, x } => {
                let (l, d) = (self.vals[delta.0].dim(0), self.vals[delta.0].dim(1));
                let n = self.vals[a.0].dim(1);
                let dv = self.vals[delta.0].data();
                let av = self.vals[a.0].data();
                let bv = self.vals[b_in.0].data();
                let xv = self.vals[x.0].data();
                let mut dd = vec![0.0; l * d];
                let mut da = vec![0.0; d * n];
                let mut db = vec![0.0; l * n];
                let mut dx = vec![0.0; l * d];
                for li in 0..l {
                    for di in 0..d {
                        let dt = dv[li * d + di];
                        let xval = xv[li * d + di];
                        for ni in 0..n {
                            let go = gout[(li * d + di) * n + ni];
                            if go == 0.0 {
                                continue;
                            }
                            let aval = av[di * n + ni];
                            let bval = bv[li * n + ni];
                            let bb = zoh_bbar(dt, aval, 1.0);
                            dd[li * d + di] += go * zoh_bbar_dgrad_delta(dt, aval) * bval * xval;
                            da[di * n + ni] += go * zoh_bbar_dgrad_a(dt, aval) * bval * xval;
                            db[li * n + ni] += go * bb * xval;
                            dx[li * d + di] += go * bb * bval;
                        }
                    }
                }
                for (dst, src) in Self::acc(g, *delta, l * d).iter_mut().zip(&dd) {
                    *dst += src;
                }
                for (dst, src) in Self::acc(g, *a, d * n).iter_mut().zip(&da) {
                    *dst += src;
                }
                for (dst, src) in Self::acc(g, *b_in, l * n).iter_mut().zip(&db) {
                    *dst += src;
                }
                for (dst, src) in Self::acc(g, *x, l * d).iter_mut().zip(&dx) {
                    *dst += src;
                }
            }
            Op::ScanRec { decay, drive } => {
                let s = self.vals[i].shape();
                let (l, lane) = (s[0], s[1] * s[2]);
                let av = self.vals[decay.0].data();
                let hv = self.vals[i].data();
                let mut dreach = vec![0.0; lane]; // dL/dh_t accumulated from the future
                let mut da = vec![0.0; l * lane];
                let mut db = vec![0.0; l * lane];
                for t in (0..l).rev() {
                    for j in 0..lane {
                        let gt = gout[t * lane + j] + dreach[j];
                        db[t * lane + j] = gt;
                        let hprev = if t == 0 { 0.0 } else { hv[(t - 1) * lane + j] };
                        da[t * lane + j] = gt * hprev;
                        dreach[j] = gt * av[t * lane + j];
                    }
                }
                for (dst, src) in Self::acc(g, *decay, l * lane).iter_mut().zip(&da) {
                    *dst += src;
                }
                for (dst, src) in Self::acc(g, *drive, l * lane).iter_mut().zip(&db) {
                    *dst += src;
                }
            }
            Op::Readout { h, c } => {
                let s = self.vals[h.0].shape();
                let (l, d, n) = (s[0], s[1], s[2]);
                let hv = self.vals[h.0].data();
                let cv = self.vals[c.0].data();
                {
                    let dh = Self::acc(g, *h, l * d * n);
                    for li in 0..l {
                        for di in 0..d {
                            let go = gout[li * d + di];
                            if go == 0.0 {
                                continue;
                            }
                            for ni in 0..n {
                                dh[(li * d + di) * n + ni] += go * cv[li * n + ni];
                            }
                        }
                    }
                }
                let dc = Self::acc(g, *c, l * n);
                for li in 0..l {
                    for di in 0..d {
                        let go = gout[li * d + di];
                        if go == 0.0 {
                            continue;
                        }
                        for ni in 0..n {
                            dc[li * n + ni] += go * hv[(li * d + di) * n + ni];
                        }
                    }
                }
            }
            Op::SmoothedCe { logits, target, eps } => {
                let z = self.vals[logits.0].data();
                let k = z.len();
                let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = z.iter().map(|&v| (v - mx).exp()).sum();
                let dl = Self::acc(g, *logits, k);
                for j in 0..k {
                    let p = (z[j] - mx).exp() / denom;
                    let q = eps / k as f64 + if j == *target { 1.0 - eps } else { 0.0 };
                    dl[j] += gout[0] * (p - q);
                }
            }
        }
    }
}

// ── Finite-difference gradient checking ─────────────────────────────────

/// Outcome of a gradient check: the worst relative disagreement between
/// analytic and central-difference gradients over all parameter coordinates.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Index of the parameter tensor holding the worst coordinate.
    pub worst_param: usize,
    /// Flat coordinate within that parameter.
    pub worst_coord: usize,
}

/// Compare analytic gradients against central differences for a scalar-valued
/// function of the given parameter tensors.
///
/// `f` must deterministically build a scalar node from leaves registered in
/// the order of `params`. Relative error per coordinate is
/// `|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)`. The step `h` must lie in
/// `[1e-6, 1e-4]`.
pub fn grad_check(
    f: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>,
    params: &[Tensor],
    h: f64,
) -> Result<GradCheckReport> {
    if !(1e-6..=1e-4).contains(&h) {
        return Err(Error::Config(format!("grad_check: step {h} outside [1e-6, 1e-4]")));
    }
    let eval = |theta: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = theta.iter().map(|t| tape.leaf(t.clone())).collect();
        let root = f(&mut tape, &vars)?;
        Ok(tape.value(root).data()[0])
    };

    // Analytic gradients.
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let grads = tape.backward(root)?;

    let mut theta: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport { max_rel_err: 0.0, worst_param: 0, worst_coord: 0 };
    for (pi, p) in params.iter().enumerate() {
        let ga = grads.get(vars[pi]);
        for ci in 0..p.numel() {
            let orig = p.data()[ci];
            theta[pi].data_mut()[ci] = orig + h;
            let fp = eval(&theta)?;
            theta[pi].data_mut()[ci] = orig - h;
            let fm = eval(&theta)?;
            theta[pi].data_mut()[ci] = orig;
            let gf = (fp - fm) / (2.0 * h);
            let gan = ga.map_or(0.0, |s| s[ci]);
            let rel = (gan - gf).abs() / 1.0_f64.max(gan.abs()).max(gf.abs());
            if rel > report.max_rel_err {
                report = GradCheckReport { max_rel_err: rel, worst_param: pi, worst_coord: ci };
            }
        }
    }
    Ok(report)
}
