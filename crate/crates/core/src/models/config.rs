use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    FramewiseTransformer,
    FramewiseBilstm,
    UtteranceMlp,
}

impl Variant {
    pub const ALL: [Variant; 3] = [
        Variant::FramewiseTransformer,
        Variant::FramewiseBilstm,
        Variant::UtteranceMlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::FramewiseTransformer => "framewise_transformer",
            Variant::FramewiseBilstm => "framewise_bilstm",
            Variant::UtteranceMlp => "utterance_mlp",
        }
    }

    pub fn is_framewise(self) -> bool {
        !matches!(self, Variant::UtteranceMlp)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transformer" => return Ok(Variant::FramewiseTransformer),
            "bilstm" => return Ok(Variant::FramewiseBilstm),
            "mlp" => return Ok(Variant::UtteranceMlp),
            _ => {}
        }
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown model variant `{s}`")))
    }
}

/// Affine map between natural label units and the space the heads regress
/// in: `scaled = (natural - shift) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub shift: f64,
    pub scale: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine { shift: 0.0, scale: 1.0 };

    pub fn to_scaled(&self, natural: f64) -> f64 {
        (natural - self.shift) / self.scale
    }

    pub fn to_natural(&self, scaled: f64) -> f64 {
        scaled * self.scale + self.shift
    }
}

/// Per-task target scaling. Tasks without an entry are unscaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TargetScaling(pub BTreeMap<Task, Affine>);

impl Default for TargetScaling {
    /// dB targets divided by 10, T60 by 1 s, MOS and STI unscaled.
    fn default() -> Self {
        let mut m = BTreeMap::new();
        for t in [Task::Snr, Task::Drr, Task::C50] {
            m.insert(t, Affine { shift: 0.0, scale: 10.0 });
        }
        m.insert(Task::T60, Affine { shift: 0.0, scale: 1.0 });
        Self(m)
    }
}

impl TargetScaling {
    pub fn get(&self, task: Task) -> Affine {
        self.0.get(&task).copied().unwrap_or(Affine::IDENTITY)
    }

    pub fn validate(&self) -> Result<()> {
        for (t, a) in &self.0 {
            if !(a.scale.is_finite() && a.scale != 0.0 && a.shift.is_finite()) {
                return Err(Error::Argument(format!("target scaling for {t} must be finite with nonzero scale")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Framewise embedding dimension D. The utterance MLP consumes 2·D.
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_transformer_layers: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub n_bilstm_layers: usize,
    pub bilstm_units_per_dir: usize,
    pub tasks: Vec<Task>,
    pub positional_encoding: bool,
    pub dropout_p: f64,
    #[serde(default)]
    pub normalize_embeddings: bool,
    #[serde(default)]
    pub target_scaling: TargetScaling,
}

impl ModelConfig {
    pub fn new(variant: Variant, input_dim: usize, tasks: Vec<Task>) -> Self {
        Self {
            variant,
            input_dim,
            hidden_dim: 64,
            n_transformer_layers: 2,
            n_heads: 1,
            ff_dim: 64,
            n_bilstm_layers: 2,
            bilstm_units_per_dir: 32,
            tasks,
            positional_encoding: variant == Variant::FramewiseTransformer,
            dropout_p: 0.1,
            normalize_embeddings: false,
            target_scaling: TargetScaling::default(),
        }
    }

    pub fn transformer(input_dim: usize, tasks: Vec<Task>) -> Self {
        Self::new(Variant::FramewiseTransformer, input_dim, tasks)
    }

    pub fn bilstm(input_dim: usize, tasks: Vec<Task>) -> Self {
        Self::new(Variant::FramewiseBilstm, input_dim, tasks)
    }

    pub fn mlp(input_dim: usize, tasks: Vec<Task>) -> Self {
        Self::new(Variant::UtteranceMlp, input_dim, tasks)
    }

    /// Width of the trunk output that feeds attention pooling (framewise) or
    /// the heads (MLP).
    pub fn trunk_dim(&self) -> usize {
        match self.variant {
            Variant::FramewiseTransformer => self.hidden_dim,
            Variant::FramewiseBilstm => 2 * self.bilstm_units_per_dir,
            Variant::UtteranceMlp => self.input_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(format!("model config: {m}")));
        if self.input_dim == 0 {
            return bad("input_dim must be >= 1".into());
        }
        if self.tasks.is_empty() {
            return bad("at least one task is required".into());
        }
        let mut sorted = self.tasks.clone();
        sorted.sort();
        sorted.dedup();
        if sorted != self.tasks {
            return bad("tasks must be unique and in canonical order (MOS, SNR, STI, T60, DRR, C50)".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        match self.variant {
            Variant::FramewiseTransformer => {
                if self.hidden_dim == 0 || self.ff_dim == 0 || self.n_transformer_layers == 0 {
                    return bad("transformer dimensions must be >= 1".into());
                }
                if self.n_heads != 1 {
                    return bad(format!("only single-head attention is supported, got {}", self.n_heads));
                }
            }
            Variant::FramewiseBilstm => {
                if self.bilstm_units_per_dir == 0 || self.n_bilstm_layers == 0 {
                    return bad("bilstm dimensions must be >= 1".into());
                }
            }
            Variant::UtteranceMlp => {}
        }
        self.target_scaling.validate()
    }
}
