//! Benchmark dataset presets: window shapes, rates, preprocessing modes, and
//! split protocols for the eight reference HAR corpora. Only metadata lives
//! here — the raw datasets are not bundled; presets feed the cost profiler
//! and provide ready-made manifests for converted data.

use serde::{Deserialize, Serialize};

/// Per-channel preprocessing regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preprocessing {
    /// Plain per-channel z-score normalization.
    Zscore,
    /// 5 Hz zero-phase low-pass, then robust (median/IQR) scaling — for
    /// loose-sensor hardware artifacts.
    RescueRobust,
    /// 5 Hz zero-phase low-pass, then z-score — for vibration-contaminated
    /// environments.
    RescueLowpass,
}

/// Train/test split protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitProtocol {
    /// Fixed held-out subject set.
    Subject,
    /// Leave-one-subject-out cross-validation.
    Loso,
    /// Per-class chronological 80/20 split (single-subject data).
    Temporal,
}

/// Shape and protocol metadata for one benchmark dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetPreset {
    pub name: &'static str,
    pub subjects: usize,
    pub num_classes: usize,
    pub num_channels: usize,
    pub sample_rate_hz: f64,
    pub seq_len: usize,
    /// Window hop; 75% overlap unless the window length forces rounding.
    pub stride: usize,
    pub preprocessing: Preprocessing,
    pub protocol: SplitProtocol,
}

/// The eight benchmark shapes, in canonical order.
pub fn benchmark_suite() -> Vec<DatasetPreset> {
    use Preprocessing::*;
    use SplitProtocol::*;
    vec![
        DatasetPreset { name: "uci-har", subjects: 30, num_classes: 6, num_channels: 9, sample_rate_hz: 50.0, seq_len: 128, stride: 32, preprocessing: Zscore, protocol: Subject },
        DatasetPreset { name: "motionsense", subjects: 24, num_classes: 6, num_channels: 6, sample_rate_hz: 50.0, seq_len: 128, stride: 32, preprocessing: Zscore, protocol: Loso },
        DatasetPreset { name: "wisdm", subjects: 36, num_classes: 6, num_channels: 3, sample_rate_hz: 20.0, seq_len: 128, stride: 32, preprocessing: Zscore, protocol: Loso },
        DatasetPreset { name: "pamap2", subjects: 9, num_classes: 12, num_channels: 19, sample_rate_hz: 100.0, seq_len: 128, stride: 32, preprocessing: RescueRobust, protocol: Loso },
        DatasetPreset { name: "opportunity", subjects: 4, num_classes: 5, num_channels: 79, sample_rate_hz: 30.0, seq_len: 128, stride: 32, preprocessing: Zscore, protocol: Loso },
        DatasetPreset { name: "unimib", subjects: 30, num_classes: 9, num_channels: 3, sample_rate_hz: 50.0, seq_len: 128, stride: 32, preprocessing: Zscore, protocol: Loso },
        DatasetPreset { name: "skoda", subjects: 1, num_classes: 11, num_channels: 30, sample_rate_hz: 98.0, seq_len: 98, stride: 24, preprocessing: RescueLowpass, protocol: Temporal },
        DatasetPreset { name: "daphnet", subjects: 10, num_classes: 2, num_channels: 9, sample_rate_hz: 64.0, seq_len: 64, stride: 16, preprocessing: Zscore, protocol: Loso },
    ]
}

/// Look up a preset by its canonical name.
pub fn by_name(name: &str) -> Option<DatasetPreset> {
    benchmark_suite().into_iter().find(|p| p.name == name)
}

/// Canonical preset names, for CLI help and validation messages.
pub fn names() -> Vec<&'static str> {
    benchmark_suite().into_iter().map(|p| p.name).collect()
}
