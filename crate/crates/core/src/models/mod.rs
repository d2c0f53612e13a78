//! Downstream architectures: framewise transformer, framewise BiLSTM and
//! utterance MLP, each with per-task linear heads.

mod checkpoint;
mod config;
mod layers;
mod params;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::{Affine, ModelConfig, TargetScaling, Variant};
pub use layers::{
    attention_pool, attention_pool_values, linear, lstm_direction, self_attention, sinusoidal_encoding, AttentionWeights, Dropout,
};
pub use params::{describe_parameters, ParameterMap, ParameterRow, ParameterTable};

use std::collections::BTreeMap;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::features::{pool_mean_max, EmbeddingSequence, UtteranceEmbedding};
use crate::task::Task;

use layers::apply_dropout;

/// One value per configured task, in natural label units.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    values: Vec<(Task, f64)>,
}

impl PredictionSet {
    pub fn new(values: Vec<(Task, f64)>) -> Self {
        Self { values }
    }

    pub fn get(&self, task: Task) -> Option<f64> {
        self.values.iter().find(|(t, _)| *t == task).map(|(_, v)| *v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Task, f64)> + '_ {
        self.values.iter().copied()
    }

    pub fn tasks(&self) -> Vec<Task> {
        self.values.iter().map(|(t, _)| *t).collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Input in the form a variant consumes.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelInput {
    Frames(EmbeddingSequence),
    Utterance(UtteranceEmbedding),
}

/// Parameter tensors bound into one graph.
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Integrity(format!("missing parameter `{name}`")))
    }

    /// `(name, var)` in name order, matching [`DownstreamModel::parameters`].
    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Graph outputs: trunk activations and one 1×1 head output per task, in
/// the scaled target space.
pub struct GraphOutput {
    pub hidden: Var,
    pub heads: Vec<(Task, Var)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamModel {
    config: ModelConfig,
    params: ParameterMap,
}

pub fn init_model(config: ModelConfig, seed: u64) -> Result<DownstreamModel> {
    config.validate()?;
    let params = params::init_parameters(&config, seed);
    Ok(DownstreamModel { config, params })
}

impl DownstreamModel {
    /// Builds a model from explicit tensors, checking names and shapes
    /// against the configuration.
    pub fn from_parameters(config: ModelConfig, params: ParameterMap) -> Result<Self> {
        config.validate()?;
        let table = describe_parameters(&config);
        if table.rows.len() != params.len() {
            return Err(Error::Integrity(format!(
                "expected {} tensors for this configuration, found {}",
                table.rows.len(),
                params.len()
            )));
        }
        for row in &table.rows {
            let t = params
                .get(&row.name)
                .ok_or_else(|| Error::Integrity(format!("missing tensor `{}`", row.name)))?;
            if t.shape() != row.shape.as_slice() {
                return Err(Error::Integrity(format!(
                    "tensor `{}` has shape {:?}, configuration implies {:?}",
                    row.name,
                    t.shape(),
                    row.shape
                )));
            }
            if t.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::Integrity(format!("tensor `{}` holds non-finite values", row.name)));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tasks(&self) -> &[Task] {
        &self.config.tasks
    }

    pub fn parameters(&self) -> &ParameterMap {
        &self.params
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn set_target_scaling(&mut self, scaling: TargetScaling) {
        self.config.target_scaling = scaling;
    }

    /// Rounds every parameter to the nearest f32, the storage precision.
    pub fn round_to_storage(&mut self) {
        params::round_to_f32(&mut self.params);
    }

    /// Fails unless every requested task has a head.
    pub fn check_tasks(&self, requested: &[Task]) -> Result<()> {
        if requested.iter().all(|t| self.config.tasks.contains(t)) {
            Ok(())
        } else {
            Err(Error::TaskMismatch {
                model: self.config.tasks.iter().map(|t| t.name().to_string()).collect(),
                requested: requested.iter().map(|t| t.name().to_string()).collect(),
            })
        }
    }

    /// Converts a framewise sequence into this model's input, applying
    /// optional normalization and, for the MLP, mean/max pooling.
    pub fn prepare(&self, seq: &EmbeddingSequence) -> Result<ModelInput> {
        if seq.dim() != self.config.input_dim {
            return Err(Error::shape("model input", &[self.config.input_dim], &[seq.dim()]));
        }
        let seq = if self.config.normalize_embeddings { seq.normalized() } else { seq.clone() };
        Ok(match self.config.variant {
            Variant::UtteranceMlp => ModelInput::Utterance(pool_mean_max(&seq)),
            _ => ModelInput::Frames(seq),
        })
    }

    /// Adds every parameter to `g` as a leaf, marked trainable or not.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| {
                let v = if trainable && !t.requires_grad {
                    g.leaf(&t.clone().with_grad())
                } else {
                    g.leaf(t)
                };
                (name.clone(), v)
            })
            .collect();
        BoundParams { vars }
    }

    /// Pairs externally created leaves (one per parameter, in name order)
    /// with parameter names.
    pub fn bind_vars(&self, vars: &[Var]) -> Result<BoundParams> {
        if vars.len() != self.params.len() {
            return Err(Error::shape("bind_vars", &[self.params.len()], &[vars.len()]));
        }
        Ok(BoundParams {
            vars: self.params.keys().cloned().zip(vars.iter().copied()).collect(),
        })
    }

    /// Copies of every parameter tensor in name order.
    pub fn parameter_tensors(&self) -> Vec<Tensor> {
        self.params.values().cloned().collect()
    }

    /// Forward pass into an existing graph. `dropout` is `Some` only while
    /// training.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        input: &ModelInput,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<GraphOutput> {
        let trunk = match (self.config.variant, input) {
            (Variant::FramewiseTransformer, ModelInput::Frames(seq)) => {
                let x = self.frames_constant(g, seq)?;
                self.transformer_trunk(g, p, x, &mut dropout)?
            }
            (Variant::FramewiseBilstm, ModelInput::Frames(seq)) => {
                let x = self.frames_constant(g, seq)?;
                self.bilstm_trunk(g, p, x, &mut dropout)?
            }
            (Variant::UtteranceMlp, ModelInput::Utterance(emb)) => {
                let want = 2 * self.config.input_dim;
                if emb.len() != want {
                    return Err(Error::shape("forward_utterance_mlp", &[want], &[emb.len()]));
                }
                let x = g.constant(vec![1, want], emb.vector().to_vec())?;
                self.mlp_trunk(g, p, x, &mut dropout)?
            }
            (v, _) => {
                return Err(Error::Contract(format!("input kind does not match variant {v}")));
            }
        };
        let pooled = if self.config.variant.is_framewise() {
            attention_pool(g, trunk, p.get("pool.v")?, p.get("pool.b")?)?
        } else {
            trunk
        };
        let mut heads = Vec::with_capacity(self.config.tasks.len());
        for &t in &self.config.tasks {
            let name = t.name();
            let w = p.get(&format!("head.{name}.w"))?;
            let b = p.get(&format!("head.{name}.b"))?;
            heads.push((t, linear(g, pooled, w, b)?));
        }
        Ok(GraphOutput { hidden: trunk, heads })
    }

    fn frames_constant(&self, g: &mut Graph, seq: &EmbeddingSequence) -> Result<Var> {
        if seq.dim() != self.config.input_dim {
            return Err(Error::shape("forward_framewise", &[self.config.input_dim], &[seq.dim()]));
        }
        let data = seq.data().iter().map(|&v| v as f64).collect();
        g.constant(vec![seq.frames(), seq.dim()], data)
    }

    fn transformer_trunk(&self, g: &mut Graph, p: &BoundParams, x: Var, dropout: &mut Option<&mut Dropout>) -> Result<Var> {
        let mut h = linear(g, x, p.get("proj.w")?, p.get("proj.b")?)?;
        if self.config.positional_encoding {
            let (t, d) = (g.shape(h)[0], g.shape(h)[1]);
            let pe = g.constant(vec![t, d], sinusoidal_encoding(t, d))?;
            h = g.add(h, pe)?;
        }
        for l in 0..self.config.n_transformer_layers {
            let get = |s: &str| p.get(&format!("enc.{l}.{s}"));
            let a = g.layer_norm(h, get("ln1.g")?, get("ln1.b")?)?;
            let w = AttentionWeights {
                q: (get("attn.q.w")?, get("attn.q.b")?),
                k: (get("attn.k.w")?, get("attn.k.b")?),
                v: (get("attn.v.w")?, get("attn.v.b")?),
                o: (get("attn.o.w")?, get("attn.o.b")?),
            };
            let a = self_attention(g, a, &w)?;
            let a = apply_dropout(g, a, dropout)?;
            h = g.add(h, a)?;

            let f = g.layer_norm(h, get("ln2.g")?, get("ln2.b")?)?;
            let f = linear(g, f, get("ff.0.w")?, get("ff.0.b")?)?;
            let f = g.relu(f);
            let f = linear(g, f, get("ff.1.w")?, get("ff.1.b")?)?;
            let f = apply_dropout(g, f, dropout)?;
            h = g.add(h, f)?;
        }
        Ok(h)
    }

    fn bilstm_trunk(&self, g: &mut Graph, p: &BoundParams, x: Var, dropout: &mut Option<&mut Dropout>) -> Result<Var> {
        let units = self.config.bilstm_units_per_dir;
        let layers = self.config.n_bilstm_layers;
        let mut h = x;
        for l in 0..layers {
            let fwd = lstm_direction(g, h, p.get(&format!("enc.{l}.fwd.w"))?, p.get(&format!("enc.{l}.fwd.b"))?, units, false)?;
            let bwd = lstm_direction(g, h, p.get(&format!("enc.{l}.bwd.w"))?, p.get(&format!("enc.{l}.bwd.b"))?, units, true)?;
            let rows = fwd
                .into_iter()
                .zip(bwd)
                .map(|(f, b)| g.concat(&[f, b], 1))
                .collect::<Result<Vec<_>>>()?;
            h = g.concat(&rows, 0)?;
            if l + 1 < layers {
                h = apply_dropout(g, h, dropout)?;
            }
        }
        Ok(h)
    }

    fn mlp_trunk(&self, g: &mut Graph, p: &BoundParams, x: Var, dropout: &mut Option<&mut Dropout>) -> Result<Var> {
        let mut h = x;
        for l in 0..2 {
            h = linear(g, h, p.get(&format!("mlp.{l}.w"))?, p.get(&format!("mlp.{l}.b"))?)?;
            h = g.relu(h);
            h = apply_dropout(g, h, dropout)?;
        }
        Ok(h)
    }

    fn to_natural(&self, g: &Graph, heads: &[(Task, Var)]) -> PredictionSet {
        PredictionSet::new(
            heads
                .iter()
                .map(|&(t, v)| (t, self.config.target_scaling.get(t).to_natural(g.scalar(v))))
                .collect(),
        )
    }

    /// Inference-mode forward pass (dropout off). Returns trunk activations
    /// and predictions in natural units.
    pub fn forward(&self, input: &ModelInput) -> Result<(Tensor, PredictionSet)> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let out = self.forward_graph(&mut g, &p, input, None)?;
        let preds = self.to_natural(&g, &out.heads);
        Ok((g.to_tensor(out.hidden), preds))
    }

    /// FLOPs counted by the graph for one inference pass.
    pub fn forward_flops(&self, input: &ModelInput) -> Result<u64> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        self.forward_graph(&mut g, &p, input, None)?;
        Ok(g.flops())
    }

    fn expect_variant(&self, v: Variant) -> Result<()> {
        if self.config.variant == v {
            Ok(())
        } else {
            Err(Error::Contract(format!("model is {}, not {v}", self.config.variant)))
        }
    }

    pub fn forward_framewise_transformer(&self, seq: &EmbeddingSequence) -> Result<(Tensor, PredictionSet)> {
        self.expect_variant(Variant::FramewiseTransformer)?;
        self.forward(&ModelInput::Frames(seq.clone()))
    }

    pub fn forward_framewise_bilstm(&self, seq: &EmbeddingSequence) -> Result<(Tensor, PredictionSet)> {
        self.expect_variant(Variant::FramewiseBilstm)?;
        self.forward(&ModelInput::Frames(seq.clone()))
    }

    pub fn forward_utterance_mlp(&self, emb: &UtteranceEmbedding) -> Result<PredictionSet> {
        self.expect_variant(Variant::UtteranceMlp)?;
        Ok(self.forward(&ModelInput::Utterance(emb.clone()))?.1)
    }

    /// Prepares a framewise sequence and predicts.
    pub fn predict(&self, seq: &EmbeddingSequence) -> Result<PredictionSet> {
        Ok(self.forward(&self.prepare(seq)?)?.1)
    }
}

#[cfg(test)]
mod tests;
