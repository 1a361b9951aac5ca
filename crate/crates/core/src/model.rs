//! Model assembly: configuration, deterministic initialization, the forward
//! pass for both architecture variants, and the on-disk model format.
//!
//! Two variants share every other component:
//!
//! * `ci` — channel-independent: a shared single-channel stem maps each of
//!   the C channels to its own `[L, d_model]` sequence; the backbone runs
//!   per channel; per-channel pooled vectors are averaged (late fusion).
//! * `crossover` — early fusion: one stem convolution mixes all C channels
//!   into a single `[L, d_model]` sequence, so backbone cost is independent
//!   of the channel count.
//!
//! Parameters live in an ordered name -> tensor list so initialization,
//! optimizer iteration, and serialization all agree on one inventory.

use crate::autodiff::{BnBatchStats, BnMode, Tape, Var};
use crate::blocks::{
    attention_pool, classify, late_fuse, mean_pool, ssm_block, stem_ci, stem_crossover,
    AttnPoolVars, HeadVars, SsmBlockVars, StemVars,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Stem / fusion strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Channel-independent processing with late fusion.
    Ci,
    /// Early fusion with a channel-mixing stem.
    Crossover,
}

/// Temporal aggregation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Gated attention pooling (learned convex combination over time).
    Gated,
    /// Arithmetic mean over time (ablation).
    Mean,
}

/// Full architectural configuration. Serialized verbatim into model files
/// and run directories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub d_model: usize,
    pub d_state: usize,
    pub n_layers: usize,
    pub expand: usize,
    pub k_stem: usize,
    pub k_conv: usize,
    /// Low-rank width of the step projection; `None` derives ceil(d_model/16).
    pub dt_rank: Option<usize>,
    pub num_channels: usize,
    pub num_classes: usize,
    pub seq_len: usize,
    pub bidirectional: bool,
    pub pooling: Pooling,
    pub seed: u64,
}

impl ModelConfig {
    /// Early-fusion defaults (d_model 26, d_state 8, 4 layers, expand 2).
    pub fn crossover_default(num_channels: usize, num_classes: usize, seq_len: usize) -> Self {
        ModelConfig {
            variant: Variant::Crossover,
            d_model: 26,
            d_state: 8,
            n_layers: 4,
            expand: 2,
            k_stem: 5,
            k_conv: 4,
            dt_rank: None,
            num_channels,
            num_classes,
            seq_len,
            bidirectional: true,
            pooling: Pooling::Gated,
            seed: 0,
        }
    }

    /// Channel-independent defaults (d_model 24, d_state 16, 4 layers, expand 2).
    pub fn ci_default(num_channels: usize, num_classes: usize, seq_len: usize) -> Self {
        ModelConfig {
            variant: Variant::Ci,
            d_model: 24,
            d_state: 16,
            n_layers: 4,
            expand: 2,
            k_stem: 5,
            k_conv: 4,
            dt_rank: None,
            num_channels,
            num_classes,
            seq_len,
            bidirectional: true,
            pooling: Pooling::Gated,
            seed: 0,
        }
    }

    /// Expanded inner width of the selective blocks.
    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    /// Effective low-rank step width.
    pub fn dt_rank(&self) -> usize {
        self.dt_rank.unwrap_or_else(|| self.d_model.div_ceil(16))
    }

    /// Attention width of the pooling head (tied to the model width).
    pub fn d_attn(&self) -> usize {
        self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("d_state", self.d_state),
            ("n_layers", self.n_layers),
            ("expand", self.expand),
            ("k_stem", self.k_stem),
            ("k_conv", self.k_conv),
            ("num_channels", self.num_channels),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if self.seq_len < 2 {
            return Err(Error::Config(
                "seq_len must be at least 2 (stem normalization needs multiple samples)".into(),
            ));
        }
        if self.k_stem % 2 == 0 {
            return Err(Error::Config(format!(
                "k_stem must be odd for symmetric padding, got {}",
                self.k_stem
            )));
        }
        if self.dt_rank == Some(0) {
            return Err(Error::Config("dt_rank must be at least 1".into()));
        }
        Ok(())
    }

    /// Canonical JSON (fixed field order) used for hashing and the model file.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

// ── Parameter inventory ──────────────────────────────────────────────────

enum InitKind {
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    UniformFanIn(usize),
    Zeros,
    Ones,
    /// a_log[d, n] = ln(n + 1), so A = -exp(a_log) = -(n + 1).
    StateLog,
    /// Inverse-softplus of a log-uniform step in [0.001, 0.1].
    StepBias,
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: InitKind,
}

fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    use InitKind::*;
    let d = cfg.d_model;
    let e = cfg.d_inner();
    let n = cfg.d_state;
    let r = cfg.dt_rank();
    let stem_cin = match cfg.variant {
        Variant::Ci => 1,
        Variant::Crossover => cfg.num_channels,
    };
    let mut specs = vec![
        ParamSpec {
            name: "stem.conv_w".into(),
            shape: vec![d, stem_cin, cfg.k_stem],
            init: UniformFanIn(stem_cin * cfg.k_stem),
        },
        ParamSpec { name: "stem.conv_b".into(), shape: vec![d], init: Zeros },
        ParamSpec { name: "stem.bn_gamma".into(), shape: vec![d], init: Ones },
        ParamSpec { name: "stem.bn_beta".into(), shape: vec![d], init: Zeros },
    ];
    for i in 0..cfg.n_layers {
        let b = |field: &str| format!("block{i}.{field}");
        specs.extend([
            ParamSpec { name: b("in_proj_w"), shape: vec![d, 2 * e], init: UniformFanIn(d) },
            ParamSpec { name: b("conv_w"), shape: vec![e, cfg.k_conv], init: UniformFanIn(cfg.k_conv) },
            ParamSpec { name: b("conv_b"), shape: vec![e], init: Zeros },
            ParamSpec { name: b("x_proj_w"), shape: vec![e, r + 2 * n], init: UniformFanIn(e) },
            ParamSpec { name: b("dt_up_w"), shape: vec![r, e], init: UniformFanIn(r) },
            ParamSpec { name: b("dt_bias"), shape: vec![e], init: StepBias },
            ParamSpec { name: b("a_log"), shape: vec![e, n], init: StateLog },
            ParamSpec { name: b("d_skip"), shape: vec![e], init: Ones },
            ParamSpec { name: b("out_proj_w"), shape: vec![e, d], init: UniformFanIn(e) },
            ParamSpec { name: b("ln_gamma"), shape: vec![d], init: Ones },
            ParamSpec { name: b("ln_beta"), shape: vec![d], init: Zeros },
        ]);
    }
    if cfg.pooling == Pooling::Gated {
        let da = cfg.d_attn();
        specs.extend([
            ParamSpec { name: "pool.w_g".into(), shape: vec![d, da], init: UniformFanIn(d) },
            ParamSpec { name: "pool.b_g".into(), shape: vec![da], init: Zeros },
            ParamSpec { name: "pool.v".into(), shape: vec![da, 1], init: UniformFanIn(da) },
        ]);
    }
    specs.extend([
        ParamSpec {
            name: "head.w".into(),
            shape: vec![d, cfg.num_classes],
            init: UniformFanIn(d),
        },
        ParamSpec { name: "head.b".into(), shape: vec![cfg.num_classes], init: Zeros },
    ]);
    specs
}

fn buffer_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, f64)> {
    vec![
        ("stem.bn_running_mean".into(), vec![cfg.d_model], 0.0),
        ("stem.bn_running_var".into(), vec![cfg.d_model], 1.0),
    ]
}

fn init_tensor(rng: &mut ChaCha8Rng, spec: &ParamSpec) -> Tensor {
    match spec.init {
        InitKind::UniformFanIn(fan) => {
            let bound = 1.0 / (fan as f64).sqrt();
            Tensor::uniform(rng, &spec.shape, -bound, bound)
        }
        InitKind::Zeros => Tensor::zeros(&spec.shape),
        InitKind::Ones => Tensor::full(&spec.shape, 1.0),
        InitKind::StateLog => {
            let (rows, cols) = (spec.shape[0], spec.shape[1]);
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                for n in 0..cols {
                    data.push(((n + 1) as f64).ln());
                }
            }
            Tensor::from_vec(&spec.shape, data).expect("state-log shape")
        }
        InitKind::StepBias => {
            let (lo, hi) = ((0.001f64).ln(), (0.1f64).ln());
            let numel: usize = spec.shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                let dt = rng.gen_range(lo..hi).exp();
                // Inverse softplus keeps softplus(bias) exactly at dt.
                data.push(dt.exp_m1().ln());
            }
            Tensor::from_vec(&spec.shape, data).expect("step-bias shape")
        }
    }
}

// ── Model ────────────────────────────────────────────────────────────────

/// Whether a forward pass uses batch or running normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A model's forward pass recorded on a tape: parameter handles in inventory
/// order, the logits node, and (in training mode) the stem's batch-norm
/// statistics for running-average updates.
pub struct Bound {
    pub param_vars: Vec<Var>,
    pub logits: Var,
    pub bn_stats: Option<BnBatchStats>,
}

/// A fully materialized model: configuration plus named parameters and
/// normalization buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Vec<(String, Tensor)>,
    buffers: Vec<(String, Tensor)>,
}

impl Model {
    /// Deterministically initialize from `cfg.seed`. Identical configs
    /// produce byte-identical models.
    pub fn build(cfg: &ModelConfig) -> Result<Model> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let params = param_specs(cfg)
            .iter()
            .map(|s| (s.name.clone(), init_tensor(&mut rng, s)))
            .collect();
        let buffers = buffer_specs(cfg)
            .into_iter()
            .map(|(name, shape, fill)| (name, Tensor::full(&shape, fill)))
            .collect();
        Ok(Model { config: cfg.clone(), params, buffers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Ordered parameter inventory.
    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    /// Mutable tensors in inventory order (for the optimizer).
    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.params.iter_mut().map(|(_, t)| t).collect()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor> {
        self.buffers.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Blend observed batch statistics into the running stem statistics.
    pub fn update_bn_running(&mut self, stats: &BnBatchStats, momentum: f64) {
        for (name, batch) in
            [("stem.bn_running_mean", &stats.mean), ("stem.bn_running_var", &stats.var)]
        {
            let buf = self
                .buffers
                .iter_mut()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .expect("running stat buffer exists");
            for (r, &b) in buf.data_mut().iter_mut().zip(batch) {
                *r = (1.0 - momentum) * *r + momentum * b;
            }
        }
    }

    /// Record the forward pass for one window on the given tape.
    pub fn forward_on_tape(&self, tape: &mut Tape, window: &Tensor, mode: Mode) -> Result<Bound> {
        let cfg = &self.config;
        if window.shape() != [cfg.num_channels, cfg.seq_len] {
            return Err(Error::Shape(format!(
                "window shape {:?} does not match configured [{}, {}]",
                window.shape(),
                cfg.num_channels,
                cfg.seq_len
            )));
        }

        let param_vars: Vec<Var> = self.params.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
        let mut idx = 0usize;
        let mut take = |n: usize| {
            let s = idx;
            idx += n;
            &param_vars[s..idx]
        };

        let sv = take(4);
        let stem = StemVars { conv_w: sv[0], conv_b: sv[1], bn_gamma: sv[2], bn_beta: sv[3] };
        let mut block_vars = Vec::with_capacity(cfg.n_layers);
        for _ in 0..cfg.n_layers {
            let bv = take(11);
            block_vars.push(SsmBlockVars {
                in_proj_w: bv[0],
                conv_w: bv[1],
                conv_b: bv[2],
                x_proj_w: bv[3],
                dt_up_w: bv[4],
                dt_bias: bv[5],
                a_log: bv[6],
                d_skip: bv[7],
                out_proj_w: bv[8],
                ln_gamma: bv[9],
                ln_beta: bv[10],
            });
        }
        let pool = match cfg.pooling {
            Pooling::Gated => {
                let pv = take(3);
                Some(AttnPoolVars { w_g: pv[0], b_g: pv[1], v: pv[2] })
            }
            Pooling::Mean => None,
        };
        let hv = take(2);
        let head = HeadVars { w: hv[0], b: hv[1] };

        let bn_mode = match mode {
            Mode::Train => BnMode::Train,
            Mode::Eval => BnMode::Eval {
                mean: self.buffer("stem.bn_running_mean").unwrap().data().to_vec(),
                var: self.buffer("stem.bn_running_var").unwrap().data().to_vec(),
            },
        };

        let pool_one = |tape: &mut Tape, z: Var| -> Result<Var> {
            match &pool {
                Some(p) => attention_pool(tape, z, p),
                None => mean_pool(tape, z),
            }
        };

        let (pooled, bn_stats) = match cfg.variant {
            Variant::Crossover => {
                let x = tape.leaf(window.clone());
                let (mut z, stats) = stem_crossover(tape, x, &stem, bn_mode)?;
                for p in &block_vars {
                    z = ssm_block(tape, z, p, cfg.bidirectional)?;
                }
                (pool_one(tape, z)?, stats)
            }
            Variant::Ci => {
                let l = cfg.seq_len;
                let channels: Vec<Var> = (0..cfg.num_channels)
                    .map(|c| {
                        let row = window.data()[c * l..(c + 1) * l].to_vec();
                        Ok(tape.leaf(Tensor::from_vec(&[1, l], row)?))
                    })
                    .collect::<Result<_>>()?;
                let (mut seqs, stats) = stem_ci(tape, &channels, &stem, bn_mode)?;
                for z in &mut seqs {
                    for p in &block_vars {
                        *z = ssm_block(tape, *z, p, cfg.bidirectional)?;
                    }
                }
                let per_channel: Vec<Var> = seqs
                    .into_iter()
                    .map(|z| pool_one(tape, z))
                    .collect::<Result<_>>()?;
                (late_fuse(tape, &per_channel)?, stats)
            }
        };

        let logits = classify(tape, pooled, &head)?;
        Ok(Bound { param_vars, logits, bn_stats })
    }

    /// Inference-mode logits for one window.
    pub fn forward_window(&self, window: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.forward_on_tape(&mut tape, window, Mode::Eval)?;
        Ok(tape.value(bound.logits).data().to_vec())
    }

    /// Inference-mode class prediction (argmax; ties take the lowest index).
    pub fn predict(&self, window: &Tensor) -> Result<usize> {
        let logits = self.forward_window(window)?;
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        Ok(best)
    }

    // ── Serialization ───────────────────────────────────────────────────

    /// Serialize to the model file format: magic, format version, canonical
    /// config JSON, then named tensors (parameters, then buffers).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let cfg = self.config.canonical_json().into_bytes();
        out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
        out.extend_from_slice(&cfg);
        for section in [&self.params, &self.buffers] {
            out.extend_from_slice(&(section.len() as u32).to_le_bytes());
            for (name, t) in section.iter() {
                let nb = name.as_bytes();
                out.extend_from_slice(&(nb.len() as u32).to_le_bytes());
                out.extend_from_slice(nb);
                out.push(DTYPE_F64);
                out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
                for &v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    /// Parse a model file, validating the format and the full tensor
    /// inventory against the embedded configuration.
    pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic = r.take(MAGIC.len())?;
        if magic != MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported model format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let cfg_len = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
        let cfg_bytes = r.take(cfg_len)?;
        let config: ModelConfig = serde_json::from_slice(cfg_bytes)
            .map_err(|e| Error::Format(format!("bad embedded config: {e}")))?;
        config.validate()?;

        let mut sections: Vec<Vec<(String, Tensor)>> = Vec::new();
        for _ in 0..2 {
            let count = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
            let mut section = Vec::with_capacity(count);
            for _ in 0..count {
                let name_len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
                let name = String::from_utf8(r.take(name_len)?.to_vec())
                    .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
                let dtype = r.take(1)?[0];
                if dtype != DTYPE_F64 {
                    return Err(Error::Format(format!("unsupported dtype tag {dtype}")));
                }
                let rank = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
                let mut shape = Vec::with_capacity(rank);
                for _ in 0..rank {
                    shape.push(u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize);
                }
                let numel: usize = shape.iter().product();
                let payload = r.take(numel * 8)?;
                let data: Vec<f64> = payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                section.push((name, Tensor::from_vec(&shape, data)?));
            }
            sections.push(section);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after model payload",
                bytes.len() - r.pos
            )));
        }
        let buffers = sections.pop().unwrap();
        let params = sections.pop().unwrap();

        // The inventory must match what the config implies, exactly.
        let specs = param_specs(&config);
        if specs.len() != params.len() {
            return Err(Error::Format(format!(
                "parameter count {} does not match config ({} expected)",
                params.len(),
                specs.len()
            )));
        }
        for (spec, (name, t)) in specs.iter().zip(&params) {
            if &spec.name != name || spec.shape != t.shape() {
                return Err(Error::Format(format!(
                    "parameter mismatch: expected {} {:?}, found {} {:?}",
                    spec.name,
                    spec.shape,
                    name,
                    t.shape()
                )));
            }
        }
        let bspecs = buffer_specs(&config);
        if bspecs.len() != buffers.len()
            || bspecs
                .iter()
                .zip(&buffers)
                .any(|((n, s, _), (bn, bt))| n != bn || s != bt.shape())
        {
            return Err(Error::Format("buffer inventory does not match config".into()));
        }
        Ok(Model { config, params, buffers })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        let bytes = std::fs::read(path)?;
        Model::from_bytes(&bytes)
    }
}

const MAGIC: &[u8] = b"BMHARMDL";
const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "truncated model file: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}
