use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, Variant};
use crate::autodiff::Tensor;

/// Named parameter tensors in name order.
pub type ParameterMap = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterRow {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterTable {
    pub rows: Vec<ParameterRow>,
    pub total: usize,
}

impl ParameterTable {
    pub fn get(&self, name: &str) -> Option<&ParameterRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Sum of counts over every tensor whose name starts with `prefix`.
    pub fn prefix_total(&self, prefix: &str) -> usize {
        self.rows.iter().filter(|r| r.name.starts_with(prefix)).map(|r| r.count).sum()
    }
}

/// Closed-form parameter table for a configuration, sorted by name.
pub fn describe_parameters(config: &ModelConfig) -> ParameterTable {
    let mut rows = Vec::new();
    let mut push = |name: String, shape: Vec<usize>| {
        let count = shape.iter().product();
        rows.push(ParameterRow { name, shape, count });
    };
    let d = config.input_dim;
    match config.variant {
        Variant::FramewiseTransformer => {
            let (h, f) = (config.hidden_dim, config.ff_dim);
            push("proj.w".into(), vec![d, h]);
            push("proj.b".into(), vec![h]);
            for l in 0..config.n_transformer_layers {
                for ln in ["ln1", "ln2"] {
                    push(format!("enc.{l}.{ln}.g"), vec![h]);
                    push(format!("enc.{l}.{ln}.b"), vec![h]);
                }
                for p in ["q", "k", "v", "o"] {
                    push(format!("enc.{l}.attn.{p}.w"), vec![h, h]);
                    push(format!("enc.{l}.attn.{p}.b"), vec![h]);
                }
                push(format!("enc.{l}.ff.0.w"), vec![h, f]);
                push(format!("enc.{l}.ff.0.b"), vec![f]);
                push(format!("enc.{l}.ff.1.w"), vec![f, h]);
                push(format!("enc.{l}.ff.1.b"), vec![h]);
            }
        }
        Variant::FramewiseBilstm => {
            let u = config.bilstm_units_per_dir;
            for l in 0..config.n_bilstm_layers {
                let input = if l == 0 { d } else { 2 * u };
                for dir in ["fwd", "bwd"] {
                    push(format!("enc.{l}.{dir}.w"), vec![input + u, 4 * u]);
                    push(format!("enc.{l}.{dir}.b"), vec![4 * u]);
                }
            }
        }
        Variant::UtteranceMlp => {
            push("mlp.0.w".into(), vec![2 * d, d]);
            push("mlp.0.b".into(), vec![d]);
            push("mlp.1.w".into(), vec![d, d]);
            push("mlp.1.b".into(), vec![d]);
        }
    }
    let trunk = config.trunk_dim();
    if config.variant.is_framewise() {
        push("pool.v".into(), vec![trunk, 1]);
        push("pool.b".into(), vec![1]);
    }
    for t in &config.tasks {
        push(format!("head.{}.w", t.name()), vec![trunk, 1]);
        push(format!("head.{}.b", t.name()), vec![1]);
    }
    rows.sort_by(|a, b| a.name.cmp(&b.name));
    let total = rows.iter().map(|r| r.count).sum();
    ParameterTable { rows, total }
}

struct Init {
    rng: ChaCha8Rng,
    params: ParameterMap,
}

impl Init {
    fn glorot(&mut self, name: String, fan_in: usize, fan_out: usize) {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let values = (0..fan_in * fan_out).map(|_| self.rng.gen_range(-a..=a)).collect();
        let t = Tensor::new(vec![fan_in, fan_out], values).expect("shape matches values");
        self.params.insert(name, t);
    }

    fn fill(&mut self, name: String, len: usize, value: f64) {
        self.params.insert(name, Tensor::full(vec![len], value));
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        self.glorot(format!("{prefix}.w"), fan_in, fan_out);
        self.fill(format!("{prefix}.b"), fan_out, 0.0);
    }

    fn layer_norm(&mut self, prefix: &str, dim: usize) {
        self.fill(format!("{prefix}.g"), dim, 1.0);
        self.fill(format!("{prefix}.b"), dim, 0.0);
    }

    /// Gates packed as [input, forget, candidate, output].
    fn lstm(&mut self, prefix: &str, input: usize, units: usize) {
        self.glorot(format!("{prefix}.w"), input + units, 4 * units);
        let mut b = vec![0.0; 4 * units];
        b[units..2 * units].fill(1.0);
        self.params.insert(format!("{prefix}.b"), Tensor::vector(b));
    }
}

/// Seeded initialization. Values are rounded to f32 so that checkpoints hold
/// them exactly.
pub(crate) fn init_parameters(config: &ModelConfig, seed: u64) -> ParameterMap {
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
        params: ParameterMap::new(),
    };
    let d = config.input_dim;
    match config.variant {
        Variant::FramewiseTransformer => {
            let (h, f) = (config.hidden_dim, config.ff_dim);
            init.linear("proj", d, h);
            for l in 0..config.n_transformer_layers {
                init.layer_norm(&format!("enc.{l}.ln1"), h);
                for p in ["q", "k", "v", "o"] {
                    init.linear(&format!("enc.{l}.attn.{p}"), h, h);
                }
                init.layer_norm(&format!("enc.{l}.ln2"), h);
                init.linear(&format!("enc.{l}.ff.0"), h, f);
                init.linear(&format!("enc.{l}.ff.1"), f, h);
            }
        }
        Variant::FramewiseBilstm => {
            let u = config.bilstm_units_per_dir;
            for l in 0..config.n_bilstm_layers {
                let input = if l == 0 { d } else { 2 * u };
                init.lstm(&format!("enc.{l}.fwd"), input, u);
                init.lstm(&format!("enc.{l}.bwd"), input, u);
            }
        }
        Variant::UtteranceMlp => {
            init.linear("mlp.0", 2 * d, d);
            init.linear("mlp.1", d, d);
        }
    }
    let trunk = config.trunk_dim();
    if config.variant.is_framewise() {
        init.glorot("pool.v".into(), trunk, 1);
        init.fill("pool.b".into(), 1, 0.0);
    }
    for t in &config.tasks {
        init.linear(&format!("head.{}", t.name()), trunk, 1);
    }
    let mut params = init.params;
    round_to_f32(&mut params);
    params
}

pub(crate) fn round_to_f32(params: &mut ParameterMap) {
    for t in params.values_mut() {
        for v in t.values_mut() {
            *v = *v as f32 as f64;
        }
    }
}
