//! Zero-phase Butterworth low-pass filtering for signal rescue.
//!
//! The design pipeline is classical: place the analog Butterworth prototype
//! poles on the unit circle's left half, pre-warp the cutoff for the
//! bilinear transform, scale the prototype, then map to the z-plane. The
//! filter is applied forward and backward (squaring the magnitude response
//! and cancelling the phase), with odd-reflection edge padding and
//! steady-state initial conditions so transients do not leak in from the
//! boundaries.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use num_complex::Complex64;

/// Odd-reflection pad length used by [`filtfilt`] (three times the digital
/// filter's coefficient span of 2·order).
pub const FILTFILT_PAD: usize = 24;

/// Filter order fixed by the rescue-preprocessing recipe.
pub const BUTTER_ORDER: usize = 4;

/// Design a digital Butterworth low-pass filter via the bilinear transform
/// with frequency pre-warping. Returns numerator `b` and monic denominator
/// `a`, both of length `order + 1`.
pub fn butter_lowpass(order: usize, cutoff_hz: f64, fs_hz: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if order == 0 {
        return Err(Error::Config("filter order must be at least 1".into()));
    }
    if !(fs_hz > 0.0 && fs_hz.is_finite()) {
        return Err(Error::Config(format!("sampling rate must be positive, got {fs_hz}")));
    }
    if !(cutoff_hz > 0.0) || cutoff_hz >= fs_hz / 2.0 {
        return Err(Error::Config(format!(
            "cutoff {cutoff_hz} Hz must lie strictly between 0 and the Nyquist rate {} Hz",
            fs_hz / 2.0
        )));
    }

    // Analog prototype: poles at unit radius, equally spaced on the left
    // half-circle.
    let n = order as i32;
    let prototype: Vec<Complex64> = (0..order)
        .map(|k| {
            let m = (2 * k as i32 + 1 - n) as f64; // -N+1, -N+3, ..., N-1
            -Complex64::from_polar(1.0, std::f64::consts::PI * m / (2.0 * n as f64))
        })
        .collect();

    // Pre-warp the cutoff so the bilinear transform lands it exactly.
    let warped = 2.0 * fs_hz * (std::f64::consts::PI * cutoff_hz / fs_hz).tan();
    let poles: Vec<Complex64> = prototype.iter().map(|p| p * warped).collect();
    let gain = warped.powi(n);

    // Bilinear transform s = 2·fs·(z−1)/(z+1): poles map to
    // (2fs + p)/(2fs − p), the N zeros land at z = −1, and the gain picks
    // up one factor 1/(2fs − p) per pole.
    let fs2 = 2.0 * fs_hz;
    let z_poles: Vec<Complex64> =
        poles.iter().map(|p| (fs2 + p) / (fs2 - p)).collect();
    let denom: Complex64 = poles.iter().map(|p| fs2 - p).product();
    let k_digital = (gain / denom).re;

    // b(z) = k·(z+1)^N, a(z) = Π(z − z_i); conjugate pole pairs make the
    // coefficients real.
    let zeros = vec![Complex64::new(-1.0, 0.0); order];
    let b: Vec<f64> = poly_from_roots(&zeros).iter().map(|c| k_digital * c.re).collect();
    let a: Vec<f64> = poly_from_roots(&z_poles).iter().map(|c| c.re).collect();
    Ok((b, a))
}

/// Expand Π(z − r_i) into coefficients in descending powers (monic).
fn poly_from_roots(roots: &[Complex64]) -> Vec<Complex64> {
    let mut coeffs = vec![Complex64::new(1.0, 0.0)];
    for &r in roots {
        coeffs.push(Complex64::new(0.0, 0.0));
        for i in (1..coeffs.len()).rev() {
            let prev = coeffs[i - 1];
            coeffs[i] -= r * prev;
        }
    }
    coeffs
}

/// Single-pass IIR filter in transposed direct form II. `zi` supplies the
/// initial delay-line state (length `a.len() − 1`); the final state is
/// discarded.
pub fn lfilter(b: &[f64], a: &[f64], x: &[f64], zi: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.len() || a.is_empty() || a[0] != 1.0 {
        return Err(Error::Config(
            "filter coefficients must have equal length and a monic denominator".into(),
        ));
    }
    let order = a.len() - 1;
    if zi.len() != order {
        return Err(Error::Shape(format!(
            "initial state length {} does not match filter order {order}",
            zi.len()
        )));
    }
    let mut z = zi.to_vec();
    let mut y = Vec::with_capacity(x.len());
    for &xi in x {
        let yi = b[0] * xi + if order > 0 { z[0] } else { 0.0 };
        for j in 0..order {
            let carry = if j + 1 < order { z[j + 1] } else { 0.0 };
            z[j] = b[j + 1] * xi + carry - a[j + 1] * yi;
        }
        y.push(yi);
    }
    Ok(y)
}

/// Steady-state delay-line state of the filter for a unit-step input:
/// seeding [`lfilter`] with `zi · x[0]` removes the start-up transient.
///
/// Solves (I − Aᵀ)·zi = B where A is the companion matrix of `a` and
/// B = b[1..] − a[1..]·b[0].
pub fn lfilter_zi(b: &[f64], a: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.len() || a.len() < 2 || a[0] != 1.0 {
        return Err(Error::Config(
            "steady state needs equal-length coefficients with a monic denominator".into(),
        ));
    }
    let n = a.len() - 1;
    // M = I − companion(a)ᵀ. companion(a) has first row −a[1..] and ones on
    // the subdiagonal, so Mᵀ entries: M[i][0] = δ_{i0} + a[i+1], and for
    // j ≥ 1: M[i][j] = δ_{ij} − δ_{i,j−1... } — built explicitly below.
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let comp = if j == 0 {
                -a[i + 1] // companion first row, transposed into column 0
            } else if i == j - 1 {
                1.0 // subdiagonal of the companion, transposed
            } else {
                0.0
            };
            m[i][j] = if i == j { 1.0 - comp } else { -comp };
        }
    }
    let rhs: Vec<f64> = (0..n).map(|i| b[i + 1] - a[i + 1] * b[0]).collect();
    solve_dense(m, rhs)
}

/// Gaussian elimination with partial pivoting for the small dense systems
/// the steady-state computation produces.
fn solve_dense(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Result<Vec<f64>> {
    let n = rhs.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        if m[pivot][col].abs() < 1e-300 {
            return Err(Error::Numeric("singular system in steady-state solve".into()));
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                let v = m[col][k];
                m[row][k] -= f * v;
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = rhs[row];
        for k in row + 1..n {
            s -= m[row][k] * x[k];
        }
        x[row] = s / m[row][row];
    }
    Ok(x)
}

/// Zero-phase filtering of one channel: odd-reflection pad by
/// [`FILTFILT_PAD`], filter forward and backward with steady-state initial
/// conditions, and strip the padding.
pub fn filtfilt_1d(b: &[f64], a: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let pad = FILTFILT_PAD;
    if x.len() <= pad {
        return Err(Error::Data(format!(
            "signal length {} is too short for zero-phase filtering (needs more than {pad} samples)",
            x.len()
        )));
    }
    // Odd reflection: rotate the edge samples by 180° about the endpoints,
    // which keeps both the value and the slope continuous.
    let first = x[0];
    let last = x[x.len() - 1];
    let mut ext = Vec::with_capacity(x.len() + 2 * pad);
    for i in (1..=pad).rev() {
        ext.push(2.0 * first - x[i]);
    }
    ext.extend_from_slice(x);
    for i in (x.len() - pad - 1..x.len() - 1).rev() {
        ext.push(2.0 * last - x[i]);
    }

    let zi = lfilter_zi(b, a)?;
    let scaled: Vec<f64> = zi.iter().map(|&z| z * ext[0]).collect();
    let mut y = lfilter(b, a, &ext, &scaled)?;
    y.reverse();
    let scaled: Vec<f64> = zi.iter().map(|&z| z * y[0]).collect();
    let mut y = lfilter(b, a, &y, &scaled)?;
    y.reverse();
    Ok(y[pad..pad + x.len()].to_vec())
}

/// Zero-phase 4th-order Butterworth low-pass over every channel of a
/// `[C, T]` signal matrix.
pub fn butter_lowpass_filtfilt(x: &Tensor, cutoff_hz: f64, fs_hz: f64) -> Result<Tensor> {
    if x.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "expected a [channels, time] matrix, got shape {:?}",
            x.shape()
        )));
    }
    let (c, t) = (x.shape()[0], x.shape()[1]);
    let (b, a) = butter_lowpass(BUTTER_ORDER, cutoff_hz, fs_hz)?;
    let mut out = Vec::with_capacity(c * t);
    for ch in 0..c {
        out.extend(filtfilt_1d(&b, &a, &x.data()[ch * t..(ch + 1) * t])?);
    }
    Tensor::from_vec(&[c, t], out)
}
