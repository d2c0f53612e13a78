//! Closed-form FLOP counts. One multiply-accumulate is 2 FLOPs; every
//! elementwise op (including transcendental ones) is 1 FLOP per element.

use std::collections::BTreeMap;

use crate::autodiff::{LAYER_NORM_FLOPS_PER_ELEMENT, SOFTMAX_FLOPS_PER_ELEMENT};
use crate::error::{Error, Result};
use crate::features::MelConfig;
use crate::models::{ModelConfig, Variant};

/// One layer application: `frames` rows of width `input` mapped to width
/// `output`. Kinds that do not change width use `input == output`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCall {
    pub kind: String,
    pub frames: u64,
    pub input: u64,
    pub output: u64,
}

impl LayerCall {
    pub fn new(kind: &str, frames: usize, input: usize, output: usize) -> Self {
        Self {
            kind: kind.to_string(),
            frames: frames as u64,
            input: input as u64,
            output: output as u64,
        }
    }
}

struct Formula {
    doc: &'static str,
    eval: fn(&LayerCall) -> u64,
}

fn linear(t: u64, i: u64, o: u64) -> u64 {
    t * (2 * i * o + o)
}

/// Per-layer-kind formulas for every layer the downstream models use.
pub struct CostModel {
    formulas: BTreeMap<&'static str, Formula>,
}

impl Default for CostModel {
    fn default() -> Self {
        Self::standard()
    }
}

impl CostModel {
    pub fn standard() -> Self {
        let mut formulas = BTreeMap::new();
        let mut add = |k: &'static str, doc: &'static str, eval: fn(&LayerCall) -> u64| {
            formulas.insert(k, Formula { doc, eval });
        };
        add("linear", "T*(2*in*out + out)", |c| linear(c.frames, c.input, c.output));
        add("positional_encoding", "T*d (one add per element)", |c| c.frames * c.input);
        add("layer_norm", "7*T*d", |c| LAYER_NORM_FLOPS_PER_ELEMENT * c.frames * c.input);
        add("relu", "T*d", |c| c.frames * c.input);
        add("residual_add", "T*d", |c| c.frames * c.input);
        // Q, K, V, output projections; QK^T and AV contractions; 1/sqrt(d)
        // scaling (T^2) plus softmax (4 T^2) = 5 T^2.
        add(
            "self_attention",
            "4*T*(2*d*d + d) + 2*T^2*d*2 + 5*T^2",
            |c| 4 * linear(c.frames, c.input, c.input) + 4 * c.frames * c.frames * c.input + c.frames * c.frames * (1 + SOFTMAX_FLOPS_PER_ELEMENT),
        );
        add(
            "lstm_direction",
            "T*(4*(2*(in+hid)*hid + hid) + 9*hid)",
            |c| c.frames * (4 * (2 * (c.input + c.output) * c.output + c.output) + 9 * c.output),
        );
        // scores (matvec + bias), softmax over T, weighted sum.
        add("attention_pool", "2*T*d + T + 4*T + 2*T*d", |c| {
            2 * c.frames * c.input + c.frames + SOFTMAX_FLOPS_PER_ELEMENT * c.frames + 2 * c.frames * c.input
        });
        Self { formulas }
    }

    pub fn flops(&self, call: &LayerCall) -> Result<u64> {
        self.formulas
            .get(call.kind.as_str())
            .map(|f| (f.eval)(call))
            .ok_or_else(|| Error::CostModel(call.kind.clone()))
    }

    pub fn total(&self, plan: &[LayerCall]) -> Result<u64> {
        plan.iter().map(|c| self.flops(c)).sum()
    }

    /// `(kind, formula)` pairs for reports.
    pub fn describe(&self) -> Vec<(&'static str, &'static str)> {
        self.formulas.iter().map(|(k, f)| (*k, f.doc)).collect()
    }
}

/// Layer sequence of one inference pass over `frames` input frames. The
/// utterance MLP ignores `frames`: its mean/max pooling belongs to the
/// feature stage.
pub fn layer_plan(config: &ModelConfig, frames: usize) -> Vec<LayerCall> {
    let mut plan = Vec::new();
    let d = config.input_dim;
    let t = frames;
    match config.variant {
        Variant::FramewiseTransformer => {
            let (h, f) = (config.hidden_dim, config.ff_dim);
            plan.push(LayerCall::new("linear", t, d, h));
            if config.positional_encoding {
                plan.push(LayerCall::new("positional_encoding", t, h, h));
            }
            for _ in 0..config.n_transformer_layers {
                plan.push(LayerCall::new("layer_norm", t, h, h));
                plan.push(LayerCall::new("self_attention", t, h, h));
                plan.push(LayerCall::new("residual_add", t, h, h));
                plan.push(LayerCall::new("layer_norm", t, h, h));
                plan.push(LayerCall::new("linear", t, h, f));
                plan.push(LayerCall::new("relu", t, f, f));
                plan.push(LayerCall::new("linear", t, f, h));
                plan.push(LayerCall::new("residual_add", t, h, h));
            }
        }
        Variant::FramewiseBilstm => {
            let u = config.bilstm_units_per_dir;
            for l in 0..config.n_bilstm_layers {
                let input = if l == 0 { d } else { 2 * u };
                plan.push(LayerCall::new("lstm_direction", t, input, u));
                plan.push(LayerCall::new("lstm_direction", t, input, u));
            }
        }
        Variant::UtteranceMlp => {
            plan.push(LayerCall::new("linear", 1, 2 * d, d));
            plan.push(LayerCall::new("relu", 1, d, d));
            plan.push(LayerCall::new("linear", 1, d, d));
            plan.push(LayerCall::new("relu", 1, d, d));
        }
    }
    let trunk = config.trunk_dim();
    if config.variant.is_framewise() {
        plan.push(LayerCall::new("attention_pool", t, trunk, trunk));
    }
    for _ in &config.tasks {
        plan.push(LayerCall::new("linear", 1, trunk, 1));
    }
    plan
}

/// FLOPs of one downstream inference over `frames` frames.
pub fn count_flops(config: &ModelConfig, frames: usize) -> Result<u64> {
    if frames == 0 {
        return Err(Error::Argument("frame count must be >= 1".into()));
    }
    config.validate()?;
    CostModel::standard().total(&layer_plan(config, frames))
}

/// Estimated FLOPs of the log-mel front end on `n_samples` samples:
/// per frame, windowing (win), a radix-2 style FFT estimate
/// (5·N·log2 N), power spectrum (3 per bin), filterbank (2 per nonzero
/// weight) and floor-plus-log (2 per band).
pub fn mel_frontend_flops(cfg: &MelConfig, filter_nonzeros: usize, n_samples: usize) -> u64 {
    let Some(frames) = cfg.frame_count(n_samples) else {
        return 0;
    };
    let n = cfg.fft_size as f64;
    let fft = (5.0 * n * n.log2()).round() as u64;
    let per_frame = cfg.win_samples() as u64
        + fft
        + 3 * (cfg.fft_size as u64 / 2 + 1)
        + 2 * filter_nonzeros as u64
        + 2 * cfg.n_mels as u64;
    frames as u64 * per_frame
}
