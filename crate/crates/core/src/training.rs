//! Masked multi-task MSE training with Adam, validation-based model
//! selection and early stopping.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdamState, Graph, Var};
use crate::error::{Error, Result};
use crate::features::EmbeddingSequence;
use crate::metrics::TaskPairs;
use crate::models::{DownstreamModel, Dropout, ModelInput, PredictionSet, TargetScaling};
use crate::task::{Task, TaskLabels};

/// One supervised (or prediction-only) item.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub sequence: EmbeddingSequence,
    pub labels: TaskLabels,
}

impl Example {
    pub fn new(sequence: EmbeddingSequence, labels: TaskLabels) -> Self {
        Self { sequence, labels }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Indexed by [`Task::index`].
    pub task_weights: [f64; 6],
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Optional cap on optimizer steps; training stops mid-epoch when hit.
    pub max_steps: Option<usize>,
    pub patience: usize,
    pub seed: u64,
    pub target_scaling: TargetScaling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task_weights: [1.0; 6],
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            max_epochs: 100,
            max_steps: None,
            patience: 10,
            seed: 0,
            target_scaling: TargetScaling::default(),
        }
    }
}

impl TrainConfig {
    pub fn weight(&self, task: Task) -> f64 {
        self.task_weights[task.index()]
    }

    pub fn set_weight(&mut self, task: Task, w: f64) {
        self.task_weights[task.index()] = w;
    }

    pub fn validate(&self, tasks: &[Task]) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(format!("train config: {m}")));
        if self.task_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("task weights must be finite and >= 0".into());
        }
        if !tasks.iter().any(|t| self.weight(*t) > 0.0) {
            return bad("at least one configured task needs a positive weight".into());
        }
        if self.patience == 0 {
            return bad("patience must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be finite and >= 0", self.lr));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("betas must lie in [0, 1)".into());
        }
        if !(self.eps > 0.0) {
            return bad("eps must be > 0".into());
        }
        self.target_scaling.validate()
    }
}

fn check_batch(preds: &[PredictionSet], labels: &[TaskLabels]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::shape("multitask_loss", &[preds.len()], &[labels.len()]));
    }
    Ok(())
}

/// Unweighted masked MSE per task in the scaled space. Tasks without any
/// present label are omitted.
pub fn task_losses(preds: &[PredictionSet], labels: &[TaskLabels], scaling: &TargetScaling) -> Result<BTreeMap<Task, f64>> {
    check_batch(preds, labels)?;
    let mut sums: BTreeMap<Task, (f64, usize)> = BTreeMap::new();
    for (p, l) in preds.iter().zip(labels) {
        for (task, value) in p.iter() {
            if let Some(label) = l.get(task) {
                let a = scaling.get(task);
                let e = sums.entry(task).or_insert((0.0, 0));
                e.0 += (a.to_scaled(value) - a.to_scaled(label)).powi(2);
                e.1 += 1;
            }
        }
    }
    Ok(sums.into_iter().map(|(t, (s, n))| (t, s / n as f64)).collect())
}

/// `Σ_task w_task · MSE_task` with each MSE averaged over the samples
/// whose label for that task is present.
pub fn multitask_loss(preds: &[PredictionSet], labels: &[TaskLabels], cfg: &TrainConfig) -> Result<f64> {
    let per_task = task_losses(preds, labels, &cfg.target_scaling)?;
    if per_task.is_empty() {
        return Err(Error::EmptySupervision);
    }
    Ok(per_task.iter().map(|(t, l)| cfg.weight(*t) * l).sum())
}

/// The same loss as [`multitask_loss`], built in a graph from per-sample
/// head outputs (already in the scaled space).
pub fn multitask_loss_graph(
    g: &mut Graph,
    heads: &[Vec<(Task, Var)>],
    labels: &[TaskLabels],
    cfg: &TrainConfig,
) -> Result<Var> {
    if heads.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    if heads.len() != labels.len() {
        return Err(Error::shape("multitask_loss", &[heads.len()], &[labels.len()]));
    }
    let mut diffs: BTreeMap<Task, Vec<Var>> = BTreeMap::new();
    for (sample, l) in heads.iter().zip(labels) {
        for &(task, v) in sample {
            if let Some(label) = l.get(task) {
                let target = g.constant(vec![1, 1], vec![cfg.target_scaling.get(task).to_scaled(label)])?;
                diffs.entry(task).or_default().push(g.sub(v, target)?);
            }
        }
    }
    if diffs.is_empty() {
        return Err(Error::EmptySupervision);
    }
    let mut terms = Vec::with_capacity(diffs.len());
    for (task, d) in diffs {
        let n = d.len();
        let d = g.concat(&d, 1)?;
        let sq = g.mul(d, d)?;
        let s = g.sum(sq);
        terms.push(g.scale(s, cfg.weight(task) / n as f64));
    }
    let all = g.concat(&terms, 0)?;
    Ok(g.sum(all))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub best_so_far: Option<f64>,
}

pub fn write_history_csv<W: Write>(mut w: W, history: &[EpochRecord]) -> std::io::Result<()> {
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    writeln!(w, "epoch,train_loss,val_loss,best_so_far")?;
    for r in history {
        writeln!(w, "{},{},{},{}", r.epoch, r.train_loss, opt(r.val_loss), opt(r.best_so_far))?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DownstreamModel,
    pub history: Vec<EpochRecord>,
    pub steps: usize,
    /// Epoch whose parameters were kept (the last one without validation).
    pub best_epoch: usize,
}

fn prepare_all(model: &DownstreamModel, rows: &[Example]) -> Result<Vec<(ModelInput, TaskLabels)>> {
    rows.iter()
        .map(|r| Ok((model.prepare(&r.sequence)?, r.labels.clone())))
        .collect()
}

fn supervised(model: &DownstreamModel, labels: &TaskLabels) -> bool {
    model.tasks().iter().any(|t| labels.get(*t).is_some())
}

fn inference_loss(model: &DownstreamModel, data: &[(ModelInput, TaskLabels)], cfg: &TrainConfig) -> Result<f64> {
    let preds = data.iter().map(|(x, _)| Ok(model.forward(x)?.1)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<TaskLabels> = data.iter().map(|(_, l)| l.clone()).collect();
    multitask_loss(&preds, &labels, cfg)
}

/// Trains `model` in place of a copy and returns the selected parameters.
///
/// Every epoch reshuffles with the seeded stream and runs Adam over
/// mini-batches. With a validation set, the parameters with the lowest
/// validation loss are kept and training stops after `patience` epochs
/// without strict improvement. Batches that carry no label for any model
/// task are skipped. A non-finite batch loss aborts with its 1-based epoch
/// and 0-based batch index.
pub fn train(model: &DownstreamModel, train_rows: &[Example], val_rows: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if train_rows.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    cfg.validate(model.tasks())?;
    let mut model = model.clone();
    model.set_target_scaling(cfg.target_scaling.clone());
    let train_data = prepare_all(&model, train_rows)?;
    let val_data = prepare_all(&model, val_rows)?;
    if !train_data.iter().any(|(_, l)| supervised(&model, l)) {
        return Err(Error::EmptySupervision);
    }
    let use_val = val_data.iter().any(|(_, l)| supervised(&model, l));

    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);
    let mut dropout = Dropout::new(model.config().dropout_p, dropout_rng);
    let mut adam = AdamState::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);

    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, DownstreamModel, usize)> = None;
    let mut stale = 0;
    let mut steps = 0;

    'epochs: for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut order_rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        let mut hit_step_cap = false;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                hit_step_cap = true;
                break;
            }
            if !chunk.iter().any(|&i| supervised(&model, &train_data[i].1)) {
                continue;
            }
            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let mut heads = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (input, l) = &train_data[i];
                heads.push(model.forward_graph(&mut g, &bound, input, Some(&mut dropout))?.heads);
                labels.push(l.clone());
            }
            let loss = multitask_loss_graph(&mut g, &heads, &labels, cfg)?;
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            let grads = g.backward(loss)?;
            let grad_vecs: Vec<Vec<f64>> = bound
                .iter()
                .zip(model.parameters().values())
                .map(|((_, v), t)| grads.wrt(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
                .collect();
            drop(g);
            let grad_refs: Vec<&[f64]> = grad_vecs.iter().map(Vec::as_slice).collect();
            let mut values: Vec<&mut [f64]> = model.parameters_mut().map(|(_, t)| t.values_mut()).collect();
            adam.step_raw(&mut values, &grad_refs)?;
            model.round_to_storage();
            steps += 1;
            loss_sum += value;
            batches += 1;
        }
        if batches == 0 && hit_step_cap {
            break;
        }

        let val_loss = if use_val { Some(inference_loss(&model, &val_data, cfg)?) } else { None };
        if let Some(v) = val_loss {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: 0 });
            }
            if best.as_ref().map_or(true, |(b, _, _)| v < *b) {
                best = Some((v, model.clone(), epoch));
                stale = 0;
            } else {
                stale += 1;
            }
        }
        history.push(EpochRecord {
            epoch,
            train_loss: if batches > 0 { loss_sum / batches as f64 } else { f64::NAN },
            val_loss,
            best_so_far: best.as_ref().map(|(b, _, _)| *b),
        });
        if hit_step_cap || cfg.max_steps.is_some_and(|m| steps >= m) {
            break 'epochs;
        }
        if use_val && stale >= cfg.patience {
            break;
        }
    }

    let last_epoch = history.last().map_or(0, |r| r.epoch);
    let (model, best_epoch) = match best {
        Some((_, m, e)) => (m, e),
        None => (model, last_epoch),
    };
    Ok(TrainOutcome {
        model,
        history,
        steps,
        best_epoch,
    })
}

/// Inference over `rows` with dropout off. Pairs (prediction, label) are
/// emitted in row order for every present label of a model task, in
/// natural units.
pub fn evaluate(model: &DownstreamModel, rows: &[Example]) -> Result<TaskPairs> {
    if rows.is_empty() {
        return Err(Error::Argument("no rows to evaluate".into()));
    }
    let mut pairs = TaskPairs::new();
    for t in model.tasks() {
        pairs.insert(*t, Vec::new());
    }
    for row in rows {
        let preds = model.predict(&row.sequence)?;
        for (task, p) in preds.iter() {
            if let Some(label) = row.labels.get(task) {
                pairs.get_mut(&task).expect("task inserted above").push((p, label));
            }
        }
    }
    Ok(pairs)
}

/// Predictions for every row, in row order.
pub fn predict_all(model: &DownstreamModel, sequences: &[EmbeddingSequence]) -> Result<Vec<PredictionSet>> {
    sequences.iter().map(|s| model.predict(s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{pool_mean_max, SourceTag};
    use crate::models::{init_model, ModelConfig};
    use proptest::prelude::*;
    use rand::Rng;

    fn ps(values: &[(Task, f64)]) -> PredictionSet {
        PredictionSet::new(values.to_vec())
    }

    fn unscaled() -> TrainConfig {
        TrainConfig {
            target_scaling: TargetScaling(BTreeMap::new()),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn perfect_fit_is_zero() {
        let labels = vec![TaskLabels::new().with(Task::Mos, 3.0).with(Task::Snr, 20.0)];
        let preds = vec![ps(&[(Task::Mos, 3.0), (Task::Snr, 20.0)])];
        assert_eq!(multitask_loss(&preds, &labels, &TrainConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn weighted_single_sample() {
        let mut cfg = unscaled();
        cfg.set_weight(Task::Mos, 2.0);
        let loss = multitask_loss(&[ps(&[(Task::Mos, 3.0)])], &[TaskLabels::new().with(Task::Mos, 4.0)], &cfg).unwrap();
        assert_eq!(loss, 2.0);
    }

    #[test]
    fn no_supervision_is_an_error() {
        let preds = vec![ps(&[(Task::Mos, 3.0)])];
        let labels = vec![TaskLabels::new().with(Task::Snr, 4.0)];
        assert!(matches!(multitask_loss(&preds, &labels, &unscaled()), Err(Error::EmptySupervision)));
        assert!(matches!(multitask_loss(&[], &[], &unscaled()), Err(Error::Argument(_))));
    }

    #[test]
    fn scaling_applies_to_both_sides() {
        let cfg = TrainConfig::default();
        let loss = multitask_loss(&[ps(&[(Task::Snr, 15.0)])], &[TaskLabels::new().with(Task::Snr, 35.0)], &cfg).unwrap();
        assert!((loss - 4.0).abs() < 1e-12);
    }

    fn random_batch(seed: u64, n: usize) -> (Vec<PredictionSet>, Vec<TaskLabels>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            preds.push(PredictionSet::new(Task::ALL.iter().map(|&t| (t, rng.gen_range(-5.0..5.0))).collect()));
            let mut l = TaskLabels::new();
            if i % 2 == 0 {
                l.set(Task::Mos, Some(rng.gen_range(1.0..5.0)));
            } else {
                l.set(Task::Snr, Some(rng.gen_range(-5.0..40.0)));
                l.set(Task::Sti, Some(rng.gen_range(0.0..1.0)));
                l.set(Task::T60, Some(rng.gen_range(0.1..2.0)));
                l.set(Task::Drr, Some(rng.gen_range(-10.0..20.0)));
                l.set(Task::C50, Some(rng.gen_range(-5.0..30.0)));
            }
            labels.push(l);
        }
        (preds, labels)
    }

    fn brute_force(preds: &[PredictionSet], labels: &[TaskLabels], cfg: &TrainConfig) -> f64 {
        let mut total = 0.0;
        for task in Task::ALL {
            let a = cfg.target_scaling.get(task);
            let mut sq = Vec::new();
            for i in 0..preds.len() {
                if let (Some(p), Some(l)) = (preds[i].get(task), labels[i].get(task)) {
                    sq.push((a.to_scaled(p) - a.to_scaled(l)).powi(2));
                }
            }
            if !sq.is_empty() {
                total += cfg.weight(task) * sq.iter().sum::<f64>() / sq.len() as f64;
            }
        }
        total
    }

    #[test]
    fn mixed_batch_matches_brute_force() {
        let mut cfg = TrainConfig::default();
        cfg.set_weight(Task::Sti, 0.5);
        for seed in 0..20 {
            let (p, l) = random_batch(seed, 10);
            let got = multitask_loss(&p, &l, &cfg).unwrap();
            assert!((got - brute_force(&p, &l, &cfg)).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_loss_equals_plain_loss() {
        let cfg = TrainConfig::default();
        let (preds, labels) = random_batch(5, 7);
        let mut g = Graph::new();
        let heads: Vec<Vec<(Task, Var)>> = preds
            .iter()
            .map(|p| {
                p.iter()
                    .map(|(t, v)| (t, g.constant(vec![1, 1], vec![cfg.target_scaling.get(t).to_scaled(v)]).unwrap()))
                    .collect()
            })
            .collect();
        let loss = multitask_loss_graph(&mut g, &heads, &labels, &cfg).unwrap();
        assert!((g.scalar(loss) - multitask_loss(&preds, &labels, &cfg).unwrap()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn weight_scales_contribution(seed in any::<u64>(), lambda in 0.0f64..10.0) {
            let (p, l) = random_batch(seed, 6);
            let base = TrainConfig::default();
            let mut zero = base.clone();
            zero.set_weight(Task::T60, 0.0);
            let mut scaled = base.clone();
            scaled.set_weight(Task::T60, lambda);
            let part = multitask_loss(&p, &l, &base).unwrap() - multitask_loss(&p, &l, &zero).unwrap();
            let part_l = multitask_loss(&p, &l, &scaled).unwrap() - multitask_loss(&p, &l, &zero).unwrap();
            prop_assert!((part_l - lambda * part).abs() < 1e-12 * (1.0 + part_l.abs()));
        }

        #[test]
        fn order_invariant(seed in any::<u64>()) {
            let (p, l) = random_batch(seed, 8);
            let mut idx: Vec<usize> = (0..8).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
            let p2: Vec<_> = idx.iter().map(|&i| p[i].clone()).collect();
            let l2: Vec<_> = idx.iter().map(|&i| l[i].clone()).collect();
            let cfg = TrainConfig::default();
            let (a, b) = (multitask_loss(&p, &l, &cfg).unwrap(), multitask_loss(&p2, &l2, &cfg).unwrap());
            prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn fully_labelled_equals_plain_mse(values in prop::collection::vec((1.0f64..5.0, 1.0f64..5.0), 1..20)) {
            let preds: Vec<_> = values.iter().map(|(p, _)| ps(&[(Task::Mos, *p)])).collect();
            let labels: Vec<_> = values.iter().map(|(_, l)| TaskLabels::new().with(Task::Mos, *l)).collect();
            let mse = values.iter().map(|(p, l)| (p - l).powi(2)).sum::<f64>() / values.len() as f64;
            prop_assert!((multitask_loss(&preds, &labels, &unscaled()).unwrap() - mse).abs() < 1e-12);
        }
    }

    fn synthetic(n: usize, frames: usize, dim: usize, seed: u64) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let data = (0..frames * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
                let seq = EmbeddingSequence::new(frames, dim, data, 160.0, SourceTag::Other).unwrap();
                let mos = 3.0 + pool_mean_max(&seq).vector()[0].clamp(-1.0, 1.0);
                Example::new(seq, TaskLabels::new().with(Task::Mos, mos))
            })
            .collect()
    }

    fn small_model(tasks: Vec<Task>) -> DownstreamModel {
        let mut c = ModelConfig::transformer(4, tasks);
        c.hidden_dim = 8;
        c.ff_dim = 8;
        init_model(c, 1).unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_parameters_and_stops_after_two_epochs() {
        let model = small_model(vec![Task::Mos]);
        let train_rows = synthetic(6, 3, 4, 2);
        let mut val_rows = synthetic(4, 3, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for r in &mut val_rows {
            r.labels.set(Task::Mos, Some(rng.gen_range(1.0..5.0)));
        }
        let cfg = TrainConfig {
            lr: 0.0,
            patience: 1,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let out = train(&model, &train_rows, &val_rows, &cfg).unwrap();
        assert_eq!(out.history.len(), 2);
        assert_eq!(out.model.parameters(), model.parameters());
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let model = small_model(vec![Task::Mos]);
        let rows = synthetic(8, 3, 4, 4);
        let cfg = TrainConfig {
            lr: 1e-2,
            batch_size: 4,
            max_epochs: 15,
            ..TrainConfig::default()
        };
        let a = train(&model, &rows, &rows, &cfg).unwrap();
        let b = train(&model, &rows, &rows, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
        let first = a.history[0].val_loss.unwrap();
        assert!(a.history.last().unwrap().best_so_far.unwrap() < first);
        let mut csv = Vec::new();
        write_history_csv(&mut csv, &a.history).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("epoch,train_loss,val_loss,best_so_far\n1,"));
    }

    #[test]
    fn step_cap_and_errors() {
        let model = small_model(vec![Task::Mos]);
        let rows = synthetic(8, 2, 4, 1);
        let cfg = TrainConfig {
            batch_size: 2,
            max_steps: Some(5),
            ..TrainConfig::default()
        };
        assert_eq!(train(&model, &rows, &[], &cfg).unwrap().steps, 5);
        assert!(matches!(train(&model, &[], &[], &cfg), Err(Error::Argument(_))));
        let unlabeled: Vec<Example> = rows.iter().map(|r| Example::new(r.sequence.clone(), TaskLabels::new())).collect();
        assert!(matches!(train(&model, &unlabeled, &[], &cfg), Err(Error::EmptySupervision)));
        let wrong_dim = synthetic(2, 2, 3, 1);
        assert!(matches!(train(&model, &wrong_dim, &[], &cfg), Err(Error::Shape { .. })));
    }

    #[test]
    fn overflowing_loss_reports_where() {
        let mut model = small_model(vec![Task::Mos]);
        for (name, t) in model.parameters_mut() {
            if name == "head.MOS.w" {
                t.values_mut().fill(1e200);
            }
        }
        let rows = synthetic(4, 2, 4, 1);
        let cfg = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        match train(&model, &rows, &[], &cfg) {
            Err(Error::NonFiniteLoss { epoch: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn evaluation_masks_and_counts() {
        let model = small_model(vec![Task::Mos, Task::Snr]);
        let mut rows = synthetic(5, 2, 4, 6);
        rows[1].labels = TaskLabels::new().with(Task::Snr, 12.0);
        rows[3].labels.set(Task::Snr, Some(3.0));
        let pairs = evaluate(&model, &rows).unwrap();
        assert_eq!(pairs[&Task::Mos].len(), 4);
        assert_eq!(pairs[&Task::Snr].len(), 2);
        let direct = model.predict(&rows[1].sequence).unwrap().get(Task::Snr).unwrap();
        assert_eq!(pairs[&Task::Snr][0], (direct, 12.0));
        let no_mos: Vec<Example> = rows.iter().filter(|r| r.labels.get(Task::Mos).is_none()).cloned().collect();
        let pairs = evaluate(&model, &no_mos).unwrap();
        assert!(pairs[&Task::Mos].is_empty() && pairs[&Task::Snr].len() == 1);
    }
}
