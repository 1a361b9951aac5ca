//! Sensor-data pipeline: recordings, sliding-window extraction, leakage-free
//! splits, normalization, signal-rescue filtering, online augmentation, CSV
//! ingestion, and a synthetic dataset generator for desk-scale validation.
//!
//! Leakage discipline, enforced structurally:
//!
//! * Normalization statistics are fitted on the training split alone and
//!   then applied everywhere.
//! * Subject-based splits keep subject sets disjoint; single-subject data
//!   is turned away from them and directed to the temporal protocol.
//! * The temporal protocol orders each class chronologically and puts its
//!   earliest windows in the training split.

use crate::error::{Error, Result};
use crate::filter::butter_lowpass_filtfilt;
use crate::presets::{Preprocessing, SplitProtocol};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

/// Cutoff of the rescue low-pass filter (shared by both rescue modes).
pub const RESCUE_CUTOFF_HZ: f64 = 5.0;

// ── Recordings ───────────────────────────────────────────────────────────

/// One continuous multi-channel capture from a single subject, with a label
/// per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    /// `[C, T]` sample matrix.
    pub data: Tensor,
    pub sample_rate_hz: f64,
    pub labels: Vec<usize>,
}

impl Recording {
    pub fn new(
        subject_id: impl Into<String>,
        data: Tensor,
        sample_rate_hz: f64,
        labels: Vec<usize>,
    ) -> Result<Recording> {
        if data.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "recording data must be [channels, time], got {:?}",
                data.shape()
            )));
        }
        if labels.len() != data.shape()[1] {
            return Err(Error::Shape(format!(
                "{} labels for {} samples",
                labels.len(),
                data.shape()[1]
            )));
        }
        if !(sample_rate_hz > 0.0) {
            return Err(Error::Config(format!(
                "sampling rate must be positive, got {sample_rate_hz}"
            )));
        }
        Ok(Recording { subject_id: subject_id.into(), data, sample_rate_hz, labels })
    }

    pub fn num_channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn num_samples(&self) -> usize {
        self.data.shape()[1]
    }
}

// ── Window sets ──────────────────────────────────────────────────────────

/// A collection of fixed-size windows with aligned labels, provenance, and
/// chronological positions.
#[derive(Debug, Clone, Default)]
pub struct WindowSet {
    pub windows: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub subjects: Vec<String>,
    /// Position of each window in its source stream (offset order).
    pub chrono_index: Vec<usize>,
    /// Non-fatal observations from extraction (e.g. recordings shorter than
    /// one window).
    pub warnings: Vec<String>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Subset by window index, preserving order.
    pub fn select(&self, indices: &[usize]) -> WindowSet {
        WindowSet {
            windows: indices.iter().map(|&i| self.windows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            subjects: indices.iter().map(|&i| self.subjects[i].clone()).collect(),
            chrono_index: indices.iter().map(|&i| self.chrono_index[i]).collect(),
            warnings: Vec::new(),
        }
    }

    /// Append another set, enforcing uniform window geometry.
    pub fn extend(&mut self, other: WindowSet) -> Result<()> {
        if let (Some(a), Some(b)) = (self.windows.first(), other.windows.first()) {
            if a.shape() != b.shape() {
                return Err(Error::Shape(format!(
                    "cannot merge window sets of shapes {:?} and {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        self.windows.extend(other.windows);
        self.labels.extend(other.labels);
        self.subjects.extend(other.subjects);
        self.chrono_index.extend(other.chrono_index);
        self.warnings.extend(other.warnings);
        Ok(())
    }

    /// Distinct subjects in first-appearance order.
    pub fn unique_subjects(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for s in &self.subjects {
            if !seen.contains(s) {
                seen.push(s.clone());
            }
        }
        seen
    }
}

/// Slide a length-`l` window over `rec` at the given stride. Each window is
/// labeled by majority vote over its samples; ties go to the tied label
/// that appears earliest inside the window. A recording shorter than one
/// window yields an empty set carrying a warning.
pub fn window(rec: &Recording, l: usize, stride: usize) -> Result<WindowSet> {
    if l == 0 || stride == 0 {
        return Err(Error::Config("window length and stride must be at least 1".into()));
    }
    let t = rec.num_samples();
    let c = rec.num_channels();
    let mut out = WindowSet::default();
    if l > t {
        out.warnings.push(format!(
            "recording of subject {} has {t} samples, shorter than one {l}-sample window; skipped",
            rec.subject_id
        ));
        return Ok(out);
    }
    let mut chrono = 0usize;
    let mut offset = 0usize;
    while offset + l <= t {
        let mut data = Vec::with_capacity(c * l);
        for ch in 0..c {
            let row = &rec.data.data()[ch * t + offset..ch * t + offset + l];
            data.extend_from_slice(row);
        }
        out.windows.push(Tensor::from_vec(&[c, l], data)?);
        out.labels.push(majority_label(&rec.labels[offset..offset + l]));
        out.subjects.push(rec.subject_id.clone());
        out.chrono_index.push(chrono);
        chrono += 1;
        offset += stride;
    }
    Ok(out)
}

/// Window all recordings into one set (uniform geometry enforced).
pub fn window_all(recs: &[Recording], l: usize, stride: usize) -> Result<WindowSet> {
    let mut out = WindowSet::default();
    for rec in recs {
        out.extend(window(rec, l, stride)?)?;
    }
    Ok(out)
}

fn majority_label(labels: &[usize]) -> usize {
    let mut count: HashMap<usize, usize> = HashMap::new();
    let mut first_pos: HashMap<usize, usize> = HashMap::new();
    for (i, &lab) in labels.iter().enumerate() {
        *count.entry(lab).or_insert(0) += 1;
        first_pos.entry(lab).or_insert(i);
    }
    // Highest count wins; among tied counts, the label seen earliest.
    let mut best = labels[0];
    for (&lab, &n) in &count {
        let (bn, bp) = (count[&best], first_pos[&best]);
        if n > bn || (n == bn && first_pos[&lab] < bp) {
            best = lab;
        }
    }
    best
}

// ── Normalization ────────────────────────────────────────────────────────

/// Per-channel affine normalization statistics, fitted on training data
/// only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    /// "zscore" (mean/std) or "robust" (median/IQR).
    pub mode: String,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Floor applied to degenerate scale estimates (constant channels).
const SCALE_FLOOR: f64 = 1e-8;

impl NormStats {
    /// Mean and standard deviation per channel over every training sample.
    pub fn fit_zscore(train: &WindowSet) -> Result<NormStats> {
        let (c, per_channel) = gather_channels(train)?;
        let mut center = Vec::with_capacity(c);
        let mut scale = Vec::with_capacity(c);
        for ch in per_channel {
            let n = ch.len() as f64;
            let mean = ch.iter().sum::<f64>() / n;
            let var = ch.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
            center.push(mean);
            scale.push(var.sqrt().max(SCALE_FLOOR));
        }
        Ok(NormStats { mode: "zscore".into(), center, scale })
    }

    /// Median and inter-quartile range per channel.
    pub fn fit_robust(train: &WindowSet) -> Result<NormStats> {
        let (c, per_channel) = gather_channels(train)?;
        let mut center = Vec::with_capacity(c);
        let mut scale = Vec::with_capacity(c);
        for mut ch in per_channel {
            ch.sort_by(f64::total_cmp);
            let median = quantile_sorted(&ch, 0.5);
            let iqr = quantile_sorted(&ch, 0.75) - quantile_sorted(&ch, 0.25);
            center.push(median);
            scale.push(iqr.max(SCALE_FLOOR));
        }
        Ok(NormStats { mode: "robust".into(), center, scale })
    }

    /// Normalize one `[C, L]` window.
    pub fn apply_window(&self, x: &Tensor) -> Result<Tensor> {
        let c = x.shape()[0];
        if c != self.center.len() {
            return Err(Error::Shape(format!(
                "window has {c} channels but statistics cover {}",
                self.center.len()
            )));
        }
        let l = x.shape()[1];
        let mut data = Vec::with_capacity(c * l);
        for ch in 0..c {
            let (m, s) = (self.center[ch], self.scale[ch]);
            data.extend(x.data()[ch * l..(ch + 1) * l].iter().map(|&v| (v - m) / s));
        }
        Tensor::from_vec(&[c, l], data)
    }

    /// Normalize every window of a set.
    pub fn apply(&self, ws: &WindowSet) -> Result<WindowSet> {
        let mut out = ws.clone();
        for w in &mut out.windows {
            *w = self.apply_window(w)?;
        }
        Ok(out)
    }
}

/// Concatenate all samples of each channel across a set's windows.
fn gather_channels(ws: &WindowSet) -> Result<(usize, Vec<Vec<f64>>)> {
    let first = ws
        .windows
        .first()
        .ok_or_else(|| Error::Config("cannot fit statistics on an empty window set".into()))?;
    let (c, l) = (first.shape()[0], first.shape()[1]);
    let mut per_channel = vec![Vec::with_capacity(ws.len() * l); c];
    for w in &ws.windows {
        for ch in 0..c {
            per_channel[ch].extend_from_slice(&w.data()[ch * l..(ch + 1) * l]);
        }
    }
    Ok((c, per_channel))
}

/// Linear-interpolation quantile of an ascending-sorted slice.
fn quantile_sorted(x: &[f64], q: f64) -> f64 {
    let n = x.len();
    if n == 1 {
        return x[0];
    }
    let pos = (n - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < n {
        x[lo] * (1.0 - frac) + x[lo + 1] * frac
    } else {
        x[lo]
    }
}

// ── Splits ───────────────────────────────────────────────────────────────

fn reject_single_subject(ws: &WindowSet, protocol: &str) -> Result<()> {
    if ws.unique_subjects().len() < 2 {
        return Err(Error::Protocol(format!(
            "{protocol} split needs at least two subjects; this set has one — \
             use the temporal protocol for single-subject data"
        )));
    }
    Ok(())
}

/// Hold out the named subjects as the test split.
pub fn split_subject(ws: &WindowSet, test_subjects: &[String]) -> Result<(WindowSet, WindowSet)> {
    reject_single_subject(ws, "subject")?;
    if test_subjects.is_empty() {
        return Err(Error::Protocol("subject split needs at least one held-out subject".into()));
    }
    let (mut train_idx, mut test_idx) = (Vec::new(), Vec::new());
    for (i, s) in ws.subjects.iter().enumerate() {
        if test_subjects.contains(s) {
            test_idx.push(i);
        } else {
            train_idx.push(i);
        }
    }
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::Protocol(
            "subject split produced an empty side; check the held-out subject list".into(),
        ));
    }
    Ok((ws.select(&train_idx), ws.select(&test_idx)))
}

/// Leave-one-subject-out: one (train, test) fold per distinct subject, in
/// sorted subject order.
pub fn split_loso(ws: &WindowSet) -> Result<Vec<(WindowSet, WindowSet)>> {
    reject_single_subject(ws, "leave-one-subject-out")?;
    let mut subjects = ws.unique_subjects();
    subjects.sort();
    subjects
        .into_iter()
        .map(|held| split_subject(ws, std::slice::from_ref(&held)))
        .collect()
}

/// Chronological split: per class, the earliest `train_frac` of windows
/// (by chrono index) train, the remainder tests.
pub fn split_temporal(ws: &WindowSet, train_frac: f64) -> Result<(WindowSet, WindowSet)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {train_frac}"
        )));
    }
    if ws.is_empty() {
        return Err(Error::Protocol("cannot split an empty window set".into()));
    }
    let mut by_class: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, &y) in ws.labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut classes: Vec<usize> = by_class.keys().copied().collect();
    classes.sort();
    let (mut train_idx, mut test_idx) = (Vec::new(), Vec::new());
    for y in classes {
        let mut idx = by_class.remove(&y).unwrap();
        idx.sort_by_key(|&i| (ws.chrono_index[i], i));
        let n_train = (idx.len() as f64 * train_frac).floor() as usize;
        train_idx.extend_from_slice(&idx[..n_train]);
        test_idx.extend_from_slice(&idx[n_train..]);
    }
    train_idx.sort();
    test_idx.sort();
    Ok((ws.select(&train_idx), ws.select(&test_idx)))
}

// ── Signal rescue ────────────────────────────────────────────────────────

/// Apply the mode's continuous-signal stage (the 5 Hz zero-phase rescue
/// filter) to whole recordings before windowing. Plain z-score passes
/// through untouched.
pub fn rescue_filter(recs: &[Recording], mode: Preprocessing) -> Result<Vec<Recording>> {
    match mode {
        Preprocessing::Zscore => Ok(recs.to_vec()),
        Preprocessing::RescueRobust | Preprocessing::RescueLowpass => recs
            .iter()
            .map(|r| {
                let filtered =
                    butter_lowpass_filtfilt(&r.data, RESCUE_CUTOFF_HZ, r.sample_rate_hz)?;
                Recording::new(
                    r.subject_id.clone(),
                    filtered,
                    r.sample_rate_hz,
                    r.labels.clone(),
                )
            })
            .collect(),
    }
}

/// Fit the mode's normalization statistics on the training split.
pub fn fit_norm(train: &WindowSet, mode: Preprocessing) -> Result<NormStats> {
    match mode {
        Preprocessing::Zscore | Preprocessing::RescueLowpass => NormStats::fit_zscore(train),
        Preprocessing::RescueRobust => NormStats::fit_robust(train),
    }
}

// ── Augmentation ─────────────────────────────────────────────────────────

/// Online training-time augmentation recipe. Defaults follow the training
/// protocol; tests override individual probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub p_time_warp: f64,
    pub p_magnitude: f64,
    pub p_jitter: f64,
    pub p_channel_dropout: f64,
    pub warp_knots: usize,
    /// Knot displacement scale as a fraction of the window length.
    pub warp_sigma_frac: f64,
    pub magnitude_lo: f64,
    pub magnitude_hi: f64,
    pub jitter_sigma: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_time_warp: 0.5,
            p_magnitude: 0.5,
            p_jitter: 0.3,
            p_channel_dropout: 0.2,
            warp_knots: 4,
            warp_sigma_frac: 0.1,
            magnitude_lo: 0.8,
            magnitude_hi: 1.2,
            jitter_sigma: 0.05,
        }
    }
}

/// Standard normal draw (Box–Muller).
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let mut u1: f64 = rng.gen();
    while u1 <= f64::MIN_POSITIVE {
        u1 = rng.gen();
    }
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Smooth monotone time reparameterization with linear resampling: interior
/// knots are displaced by N(0, (σ_frac·L)²), kept monotone, and every
/// channel is resampled along the shared warped axis.
fn time_warp(x: &Tensor, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Tensor {
    let (c, l) = (x.shape()[0], x.shape()[1]);
    if l < cfg.warp_knots + 2 {
        return x.clone();
    }
    let last = (l - 1) as f64;
    let k = cfg.warp_knots;
    let mut knots_x = Vec::with_capacity(k + 2);
    let mut knots_y = Vec::with_capacity(k + 2);
    knots_x.push(0.0);
    knots_y.push(0.0);
    for i in 1..=k {
        let pos = last * i as f64 / (k + 1) as f64;
        knots_x.push(pos);
        let displaced = pos + cfg.warp_sigma_frac * l as f64 * gauss(rng);
        knots_y.push(displaced.clamp(0.0, last));
    }
    knots_x.push(last);
    knots_y.push(last);
    // Sorting the displaced interior keeps the map monotone while fixing
    // the endpoints (they are the extremes after clamping).
    knots_y.sort_by(f64::total_cmp);

    let mut data = Vec::with_capacity(c * l);
    for ch in 0..c {
        let row = &x.data()[ch * l..(ch + 1) * l];
        for t in 0..l {
            let tx = t as f64;
            // Locate the knot segment containing tx.
            let mut seg = knots_x.len() - 2;
            for i in 0..knots_x.len() - 1 {
                if tx <= knots_x[i + 1] {
                    seg = i;
                    break;
                }
            }
            let (x0, x1) = (knots_x[seg], knots_x[seg + 1]);
            let (y0, y1) = (knots_y[seg], knots_y[seg + 1]);
            let s = if x1 > x0 { y0 + (y1 - y0) * (tx - x0) / (x1 - x0) } else { y0 };
            // Linear interpolation at the (real-valued) source position.
            let i0 = (s.floor() as usize).min(l - 1);
            let i1 = (i0 + 1).min(l - 1);
            let frac = s - i0 as f64;
            data.push(row[i0] * (1.0 - frac) + row[i1] * frac);
        }
    }
    Tensor::from_vec(&[c, l], data).expect("warp preserves shape")
}

/// Apply the augmentation pipeline to one window: time warp, magnitude
/// scaling, Gaussian jitter, channel dropout — each independently gated by
/// its probability, all randomness drawn from `rng` in this fixed order.
pub fn augment(x: &Tensor, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if x.shape().len() != 2 {
        return Err(Error::Shape(format!("augment expects [C, L] windows, got {:?}", x.shape())));
    }
    let (c, l) = (x.shape()[0], x.shape()[1]);
    let mut out = x.clone();

    if rng.gen::<f64>() < cfg.p_time_warp {
        out = time_warp(&out, cfg, rng);
    }
    if rng.gen::<f64>() < cfg.p_magnitude {
        let alpha = rng.gen_range(cfg.magnitude_lo..cfg.magnitude_hi);
        out = out.map(|v| v * alpha);
    }
    if rng.gen::<f64>() < cfg.p_jitter {
        for v in out.data_mut() {
            *v += cfg.jitter_sigma * gauss(rng);
        }
    }
    if rng.gen::<f64>() < cfg.p_channel_dropout {
        let ch = rng.gen_range(0..c);
        for v in &mut out.data_mut()[ch * l..(ch + 1) * l] {
            *v = 0.0;
        }
    }
    Ok(out)
}

// ── Synthetic data ───────────────────────────────────────────────────────

/// Generate a deterministic synthetic activity corpus: one recording per
/// subject, holding one segment per class in class order. Channels carry a
/// class-specific (frequency, amplitude, harmonic-mix) signature modulated
/// by subject-specific gain and phase, plus Gaussian noise. The per-subject
/// stream keeps timestamps monotone, matching the CSV interchange contract.
pub fn synth_har(
    n_subjects: usize,
    num_classes: usize,
    c: usize,
    samples_per_class: usize,
    fs_hz: f64,
    seed: u64,
) -> Result<Vec<Recording>> {
    use rand::SeedableRng;
    if n_subjects == 0 || num_classes < 2 || c == 0 || samples_per_class == 0 {
        return Err(Error::Config(
            "synthetic corpus needs subjects ≥ 1, classes ≥ 2, channels ≥ 1, samples ≥ 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Subject idiosyncrasies: per-(subject, channel) gain and phase.
    let mut gains = vec![0.0; n_subjects * c];
    let mut phases = vec![0.0; n_subjects * c];
    for g in gains.iter_mut() {
        *g = rng.gen_range(0.85..1.15);
    }
    for p in phases.iter_mut() {
        *p = rng.gen_range(0.0..std::f64::consts::TAU);
    }

    let nyq = fs_hz / 2.0;
    let t_total = num_classes * samples_per_class;
    let mut recs = Vec::with_capacity(n_subjects);
    for subj in 0..n_subjects {
        let mut data = vec![0.0; c * t_total];
        let mut labels = Vec::with_capacity(t_total);
        for class in 0..num_classes {
            labels.extend(std::iter::repeat(class).take(samples_per_class));
            // Class signature per channel, bounded away from the Nyquist
            // rate so the harmonics stay representable.
            for ch in 0..c {
                let f0 = (1.0 + 0.9 * class as f64 + 0.13 * ch as f64).min(0.35 * nyq);
                let amp = 0.7 + 0.25 * ((class + 2 * ch) % 3) as f64;
                let harmonic = 0.2 + 0.1 * ((class + ch) % 2) as f64;
                let gain = gains[subj * c + ch];
                let phase = phases[subj * c + ch];
                for t in 0..samples_per_class {
                    let tau = std::f64::consts::TAU * t as f64 / fs_hz;
                    let v = amp * (f0 * tau + phase).sin()
                        + harmonic * (2.0 * f0 * tau + 0.7 * phase).sin()
                        + 0.1 * gauss(&mut rng);
                    data[ch * t_total + class * samples_per_class + t] = gain * v;
                }
            }
        }
        recs.push(Recording::new(
            format!("s{subj:02}"),
            Tensor::from_vec(&[c, t_total], data)?,
            fs_hz,
            labels,
        )?);
    }
    Ok(recs)
}

/// Synthetic task whose classes differ only in temporal direction: one
/// recording per subject, holding a class-0 segment followed by a class-1
/// segment. Every window-length stretch carries the same two events (a
/// sharp decaying burst and a smooth bump); the class is defined purely by
/// their order. The marginal content of both classes matches; only the
/// arrow of time separates them.
pub fn synth_har_directional(
    n_subjects: usize,
    c: usize,
    samples_per_class: usize,
    window_len: usize,
    fs_hz: f64,
    seed: u64,
) -> Result<Vec<Recording>> {
    use rand::SeedableRng;
    if window_len < 16 || samples_per_class < window_len {
        return Err(Error::Config(
            "directional corpus needs window_len ≥ 16 and at least one window per class".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_total = 2 * samples_per_class;
    let mut recs = Vec::with_capacity(n_subjects);
    for subj in 0..n_subjects {
        let gain = rng.gen_range(0.9..1.1);
        let mut data = vec![0.0; c * t_total];
        let mut labels = Vec::with_capacity(t_total);
        for class in 0..2usize {
            labels.extend(std::iter::repeat(class).take(samples_per_class));
            // One event pair per window-length stretch, at a jittered
            // position, identical across classes except for event order.
            let n_segments = samples_per_class / window_len;
            for seg in 0..n_segments {
                let base = class * samples_per_class + seg * window_len;
                let gap = window_len / 4;
                let margin = window_len / 8;
                let slack = window_len - 2 * gap - 2 * margin;
                let first = base + margin + rng.gen_range(0..slack.max(1));
                let (burst_at, bump_at) =
                    if class == 0 { (first, first + gap) } else { (first + gap, first) };
                for ch in 0..c {
                    let row = &mut data[ch * t_total..(ch + 1) * t_total];
                    // Sharp high-frequency burst.
                    for d in 0..gap / 2 {
                        let t = burst_at + d;
                        if t < t_total {
                            let env = 1.0 - d as f64 / (gap / 2) as f64;
                            row[t] += gain * env * (std::f64::consts::TAU * 0.4 * d as f64).sin();
                        }
                    }
                    // Smooth low bump.
                    for d in 0..gap {
                        let t = bump_at + d;
                        if t < t_total {
                            let u = d as f64 / gap as f64;
                            row[t] += gain * 0.8 * (std::f64::consts::PI * u).sin();
                        }
                    }
                }
            }
        }
        for v in data.iter_mut() {
            *v += 0.05 * gauss(&mut rng);
        }
        recs.push(Recording::new(
            format!("s{subj:02}"),
            Tensor::from_vec(&[c, t_total], data)?,
            fs_hz,
            labels,
        )?);
    }
    Ok(recs)
}

// ── CSV ingestion ────────────────────────────────────────────────────────

/// Parse the canonical CSV schema
/// `subject,timestamp,label,ch_0,...,ch_{C-1}` into per-subject recordings
/// (rows grouped by subject in first-appearance order; timestamps must be
/// monotone within each subject).
pub fn load_csv(path: &Path, sample_rate_hz: f64) -> Result<Vec<Recording>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("cannot read CSV header: {e}")))?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 4 || cols[0] != "subject" || cols[1] != "timestamp" || cols[2] != "label" {
        return Err(Error::Format(format!(
            "CSV header must start with subject,timestamp,label,ch_0,...; found {:?}",
            cols
        )));
    }
    let c = cols.len() - 3;
    for (i, col) in cols[3..].iter().enumerate() {
        if *col != format!("ch_{i}") {
            return Err(Error::Format(format!(
                "channel column {} must be named ch_{i}, found {col:?}",
                i + 3
            )));
        }
    }

    struct Acc {
        samples: Vec<Vec<f64>>, // per-channel sample streams
        labels: Vec<usize>,
        last_ts: f64,
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Acc> = HashMap::new();

    for (row_i, record) in reader.records().enumerate() {
        let line = row_i + 2; // header occupies line 1
        let record =
            record.map_err(|e| Error::Data(format!("line {line}: malformed row: {e}")))?;
        if record.len() != cols.len() {
            return Err(Error::Data(format!(
                "line {line}: expected {} fields, found {}",
                cols.len(),
                record.len()
            )));
        }
        let subject = record[0].to_string();
        let ts: f64 = record[1]
            .parse()
            .map_err(|_| Error::Data(format!("line {line}: non-numeric timestamp {:?}", &record[1])))?;
        let label: usize = record[2]
            .parse()
            .map_err(|_| Error::Data(format!("line {line}: non-numeric label {:?}", &record[2])))?;
        let acc = groups.entry(subject.clone()).or_insert_with(|| {
            order.push(subject.clone());
            Acc { samples: vec![Vec::new(); c], labels: Vec::new(), last_ts: f64::NEG_INFINITY }
        });
        if ts <= acc.last_ts {
            return Err(Error::Data(format!(
                "line {line}: timestamps must be strictly increasing per subject ({ts} after {})",
                acc.last_ts
            )));
        }
        acc.last_ts = ts;
        for ch in 0..c {
            let v: f64 = record[3 + ch].parse().map_err(|_| {
                Error::Data(format!(
                    "line {line}: non-numeric value {:?} in column ch_{ch}",
                    &record[3 + ch]
                ))
            })?;
            acc.samples[ch].push(v);
        }
        acc.labels.push(label);
    }

    order
        .into_iter()
        .map(|subject| {
            let acc = groups.remove(&subject).unwrap();
            let t = acc.labels.len();
            let mut data = Vec::with_capacity(c * t);
            for ch in acc.samples {
                data.extend(ch);
            }
            Recording::new(subject, Tensor::from_vec(&[c, t], data)?, sample_rate_hz, acc.labels)
        })
        .collect()
}

/// Write recordings in the canonical CSV schema. Timestamps are sample
/// indices over the sampling rate; float formatting uses the shortest
/// round-trippable representation.
pub fn save_csv(path: &Path, recs: &[Recording]) -> Result<()> {
    let c = match recs.first() {
        Some(r) => r.num_channels(),
        None => return Err(Error::Config("cannot write an empty recording list".into())),
    };
    if recs.iter().any(|r| r.num_channels() != c) {
        return Err(Error::Shape("all recordings must share one channel count".into()));
    }
    // The schema has no recording delimiter: timestamps must stay monotone
    // per subject, so each subject gets exactly one recording.
    let mut seen: Vec<&str> = Vec::new();
    for r in recs {
        if seen.contains(&r.subject_id.as_str()) {
            return Err(Error::Data(format!(
                "subject {} appears in multiple recordings; merge them before writing CSV",
                r.subject_id
            )));
        }
        seen.push(&r.subject_id);
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "subject,timestamp,label")?;
    for ch in 0..c {
        write!(out, ",ch_{ch}")?;
    }
    writeln!(out)?;
    for rec in recs {
        let t = rec.num_samples();
        for i in 0..t {
            write!(out, "{},{},{}", rec.subject_id, i as f64 / rec.sample_rate_hz, rec.labels[i])?;
            for ch in 0..c {
                write!(out, ",{}", rec.data.data()[ch * t + i])?;
            }
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

// ── Manifests ────────────────────────────────────────────────────────────

/// Self-describing dataset manifest: geometry, rates, preprocessing mode,
/// and split protocol, plus the CSV payload location (relative to the
/// manifest file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub num_channels: usize,
    pub num_classes: usize,
    pub sample_rate_hz: f64,
    pub seq_len: usize,
    pub stride: usize,
    pub preprocessing: Preprocessing,
    pub protocol: SplitProtocol,
    pub csv: String,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("bad manifest {}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Canonical JSON for content hashing.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("manifest serializes")
    }

    /// Resolve/load the CSV payload and slice it into windows.
    pub fn load_windows(&self, manifest_path: &Path) -> Result<WindowSet> {
        let csv_path = manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&self.csv);
        let recs = load_csv(&csv_path, self.sample_rate_hz)?;
        for r in &recs {
            if r.num_channels() != self.num_channels {
                return Err(Error::Data(format!(
                    "manifest declares {} channels but the CSV has {}",
                    self.num_channels,
                    r.num_channels()
                )));
            }
        }
        let filtered = rescue_filter(&recs, self.preprocessing)?;
        window_all(&filtered, self.seq_len, self.stride)
    }
}
