//! Lightweight bidirectional selective state-space models for on-device
//! human activity recognition.
//!
//! The crate implements the full pipeline in plain Rust with `f64` math and
//! no linear-algebra dependencies: sensor windowing and normalization, a
//! selective state-space backbone with weight-tied bidirectional scanning,
//! gated attention pooling, tape-based reverse-mode differentiation, an
//! AdamW training loop, an analytic compute/parameter profiler, and a CLI
//! for end-to-end experiments (`count`, `train`, `eval`, `ablate`, `synth`).

pub mod autodiff;
pub mod blocks;
pub mod cli;
pub mod cost;
pub mod datapipe;
pub mod error;
pub mod filter;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod presets;
pub mod ssm;
pub mod tensor;

pub use error::{Error, Result};
