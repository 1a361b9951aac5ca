//! Discretization and scan kernels for diagonal linear state-space layers.
//!
//! A continuous-time scalar state channel `h' = a*h + b*x` is discretized
//! with a zero-order hold over a step `delta`, giving the recurrence
//! `h_t = abar*h_{t-1} + bbar*x_t` with `abar = exp(delta*a)` and
//! `bbar = (exp(delta*a) - 1)/a * b`. Because every state channel is
//! independent (diagonal transition), the model only ever needs scalar
//! discretization plus a first-order linear scan.
//!
//! Two scan evaluators are provided: a plain sequential loop, and a
//! work-efficient tree scan over the associative "affine composition"
//! monoid. The tree scan exists to demonstrate the parallelizable form and
//! must agree with the loop to tight tolerance; the loop is the reference.

use crate::error::{Error, Result};

/// Below this magnitude of `delta*a` the input coefficient switches to a
/// second-order series to avoid catastrophic cancellation in
/// `(exp(delta*a) - 1)/a`.
pub const ZOH_SERIES_TOL: f64 = 1e-4;

/// Discrete decay factor `exp(delta * a)`.
#[inline]
pub(crate) fn zoh_abar(delta: f64, a: f64) -> f64 {
    (delta * a).exp()
}

/// Discrete input coefficient `(exp(delta*a) - 1)/a * b`, with the series
/// fallback `delta * (1 + delta*a/2) * b` for small `|delta*a|`.
#[inline]
pub(crate) fn zoh_bbar(delta: f64, a: f64, b: f64) -> f64 {
    let z = delta * a;
    if z.abs() > ZOH_SERIES_TOL {
        (z.exp() - 1.0) / a * b
    } else {
        delta * (1.0 + 0.5 * z) * b
    }
}

/// Partial derivative of `zoh_bbar(delta, a, 1)` with respect to `delta`.
#[inline]
pub(crate) fn zoh_bbar_dgrad_delta(delta: f64, a: f64) -> f64 {
    let z = delta * a;
    if z.abs() > ZOH_SERIES_TOL {
        z.exp()
    } else {
        1.0 + z
    }
}

/// Partial derivative of `zoh_bbar(delta, a, 1)` with respect to `a`.
#[inline]
pub(crate) fn zoh_bbar_dgrad_a(delta: f64, a: f64) -> f64 {
    let z = delta * a;
    if z.abs() > ZOH_SERIES_TOL {
        (delta * a * z.exp() - (z.exp() - 1.0)) / (a * a)
    } else {
        // d/da [delta + delta^2*a/2] with the cubic term negligible.
        0.5 * delta * delta
    }
}

/// Zero-order-hold discretization of one state channel.
///
/// Returns `(abar, bbar)` for the discrete recurrence
/// `h_t = abar * h_{t-1} + bbar * x_t`. The step must be positive and finite;
/// anything else is a numeric-domain error.
pub fn discretize_zoh(delta: f64, a: f64, b: f64) -> Result<(f64, f64)> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::Numeric(format!(
            "discretize_zoh: step must be positive and finite, got {delta}"
        )));
    }
    Ok((zoh_abar(delta, a), zoh_bbar(delta, a, b)))
}

/// One step of the recurrence viewed as an affine map `h -> a*h + b`.
/// Composition of such maps is associative, which is what makes the
/// recurrence scannable in parallel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanElement {
    pub a: f64,
    pub b: f64,
}

impl ScanElement {
    /// The identity map `h -> h`.
    pub fn identity() -> ScanElement {
        ScanElement { a: 1.0, b: 0.0 }
    }

    /// Composition "apply `self` first, then `next`":
    /// `next(self(h)) = (next.a * self.a) * h + (next.a * self.b + next.b)`.
    pub fn then(self, next: ScanElement) -> ScanElement {
        ScanElement { a: next.a * self.a, b: next.a * self.b + next.b }
    }
}

/// Reference evaluator: `h_t = decay_t * h_{t-1} + drive_t` with `h_{-1} = 0`.
pub fn scan_sequential(decay: &[f64], drive: &[f64]) -> Result<Vec<f64>> {
    if decay.len() != drive.len() {
        return Err(Error::Shape(format!(
            "scan_sequential: decay length {} vs drive length {}",
            decay.len(),
            drive.len()
        )));
    }
    let mut h = 0.0;
    let mut out = Vec::with_capacity(decay.len());
    for (&a, &b) in decay.iter().zip(drive) {
        h = a * h + b;
        out.push(h);
    }
    Ok(out)
}

/// Work-efficient tree scan over the affine-composition monoid.
///
/// Pads to a power of two with identity elements, runs a Blelloch-style
/// up-sweep/down-sweep, and converts the exclusive prefixes to inclusive
/// states. Combines against identity padding are short-circuited to copies,
/// so the number of real compositions stays below `4 * L`.
pub fn scan_parallel(decay: &[f64], drive: &[f64]) -> Result<Vec<f64>> {
    scan_parallel_counted(decay, drive).map(|(h, _)| h)
}

/// [`scan_parallel`] plus the number of `ScanElement` compositions performed,
/// so tests can pin the work bound.
pub fn scan_parallel_counted(decay: &[f64], drive: &[f64]) -> Result<(Vec<f64>, usize)> {
    if decay.len() != drive.len() {
        return Err(Error::Shape(format!(
            "scan_parallel: decay length {} vs drive length {}",
            decay.len(),
            drive.len()
        )));
    }
    let l = decay.len();
    if l == 0 {
        return Ok((Vec::new(), 0));
    }
    let n = l.next_power_of_two();
    let mut combines = 0usize;
    let mut comb = |x: Option<ScanElement>, y: Option<ScanElement>| -> Option<ScanElement> {
        match (x, y) {
            (Some(a), Some(b)) => {
                combines += 1;
                Some(a.then(b))
            }
            (Some(a), None) => Some(a),
            (None, Some(b)) => Some(b),
            (None, None) => None,
        }
    };

    // Perfect binary tree stored heap-style: internal nodes 1..n, leaves n..2n.
    // `None` is the identity element introduced by padding.
    let mut tree: Vec<Option<ScanElement>> = vec![None; 2 * n];
    for t in 0..l {
        tree[n + t] = Some(ScanElement { a: decay[t], b: drive[t] });
    }
    // Up-sweep: each node holds the composition of its leaf range, left first.
    for i in (1..n).rev() {
        tree[i] = comb(tree[2 * i], tree[2 * i + 1]);
    }
    // Down-sweep: exclusive prefix (composition of everything left of the
    // node's range). Root prefix is the identity.
    let mut prefix: Vec<Option<ScanElement>> = vec![None; 2 * n];
    for i in 1..n {
        prefix[2 * i] = prefix[i];
        prefix[2 * i + 1] = comb(prefix[i], tree[2 * i]);
    }
    // Inclusive state at t is the composite map applied to h_{-1} = 0, i.e.
    // just the additive part of prefix_t . elem_t.
    let mut out = Vec::with_capacity(l);
    for t in 0..l {
        let inclusive = comb(prefix[n + t], tree[n + t]).expect("real leaf");
        out.push(inclusive.b);
    }
    Ok((out, combines))
}
