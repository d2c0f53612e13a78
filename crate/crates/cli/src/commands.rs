use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use sqa_core::audio::{load_manifest, read_wav, resample, save_manifest, ManifestRow};
use sqa_core::features::{read_embedding_file, write_embedding_file, EmbeddingSequence, MelConfig, MelSpectrogram};
use sqa_core::metrics::{build_report, MIN_PAIRS_FOR_MAPPING};
use sqa_core::models::{init_model, load_checkpoint, save_checkpoint, DownstreamModel, ModelConfig, Variant};
use sqa_core::profiler::{profile as run_profile, FlopsScope, ProfileOptions};
use sqa_core::task::{parse_task_list, Task, TaskLabels};
use sqa_core::training::{evaluate, train as run_train, write_history_csv, Example, TrainConfig};

use crate::config::Options;
use crate::CliError;

type CmdResult = Result<(), CliError>;

fn is_manifest(path: &str) -> bool {
    Path::new(path).extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn base_dir(path: &str) -> PathBuf {
    Path::new(path).parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Quotes a CSV field when it needs it.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn io_err(path: &Path, e: io::Error) -> CliError {
    CliError::user(format!("{}: {e}", path.display()))
}

fn mel_config(o: &Options) -> Result<MelConfig, CliError> {
    let cfg = MelConfig {
        sample_rate: o.get("sample-rate")?,
        window_ms: o.get("window-ms")?,
        hop_ms: o.get("hop-ms")?,
        fft_size: o.get("fft-size")?,
        n_mels: o.get("n-mels")?,
        fmin: o.get("fmin")?,
        fmax: o.get("fmax")?,
        ..MelConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn model_config(o: &Options, input_dim: usize) -> Result<ModelConfig, CliError> {
    let variant: Variant = o.get::<String>("model")?.parse()?;
    let tasks = parse_task_list(&o.get::<String>("tasks")?)?;
    let mut c = ModelConfig::new(variant, input_dim, tasks);
    c.hidden_dim = o.get("hidden-dim")?;
    c.ff_dim = o.get("ff-dim")?;
    c.n_transformer_layers = o.get("transformer-layers")?;
    c.n_heads = o.get("heads")?;
    c.n_bilstm_layers = o.get("bilstm-layers")?;
    c.bilstm_units_per_dir = o.get("bilstm-units")?;
    c.positional_encoding = o.get::<bool>("positional-encoding")? && variant == Variant::FramewiseTransformer;
    c.dropout_p = o.get("dropout")?;
    c.normalize_embeddings = o.get("normalize")?;
    c.validate()?;
    Ok(c)
}

fn parse_task_weights(spec: &str, cfg: &mut TrainConfig) -> Result<(), CliError> {
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (task, w) = part
            .split_once('=')
            .ok_or_else(|| CliError::user(format!("task weight `{part}` should look like MOS=1.0")))?;
        let task: Task = task.trim().parse()?;
        let w: f64 = w
            .trim()
            .parse()
            .map_err(|e| CliError::user(format!("task weight `{part}`: {e}")))?;
        cfg.set_weight(task, w);
    }
    Ok(())
}

pub fn features(o: &Options) -> CmdResult {
    let input: String = o.get("input")?;
    let out_dir = PathBuf::from(o.get::<String>("out-dir")?);
    let cfg = mel_config(o)?;
    let mel = MelSpectrogram::new(cfg.clone())?;

    let (rows, base) = if is_manifest(&input) {
        (load_manifest(&input)?, base_dir(&input))
    } else {
        (vec![ManifestRow::new(input.clone(), TaskLabels::new())], PathBuf::new())
    };
    if rows.is_empty() {
        return Err(CliError::user(format!("{input}: no rows")));
    }
    fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;

    let mut used = HashSet::new();
    let mut out_rows = Vec::new();
    let mut failures = 0;
    for (i, row) in rows.iter().enumerate() {
        let src = if is_manifest(&input) { row.resolve(&base) } else { PathBuf::from(&row.source_path) };
        let result = (|| -> sqa_core::Result<EmbeddingSequence> {
            let mut clip = read_wav(&src)?;
            if clip.sample_rate() != cfg.sample_rate {
                clip = resample(&clip, cfg.sample_rate)?;
            }
            mel.compute(&clip)
        })();
        match result {
            Ok(seq) => {
                let stem = src.file_stem().map_or_else(|| format!("row{i}"), |s| s.to_string_lossy().into_owned());
                let mut name = format!("{stem}.sqe");
                if !used.insert(name.clone()) {
                    name = format!("{stem}_{i}.sqe");
                    used.insert(name.clone());
                }
                write_embedding_file(&seq, out_dir.join(&name))?;
                out_rows.push(ManifestRow::new(name, row.labels.clone()));
            }
            Err(e) => {
                failures += 1;
                eprintln!("warning: row {} ({}): {e}", i + 1, src.display());
            }
        }
    }
    if out_rows.is_empty() {
        return Err(CliError::user(format!("all {failures} rows failed")));
    }
    save_manifest(out_dir.join("manifest.csv"), &out_rows)?;
    eprintln!(
        "wrote {} feature files to {} ({failures} failed)",
        out_rows.len(),
        out_dir.display()
    );
    Ok(())
}

/// Loads every row of a manifest of embedding files. All sequences must
/// share `expected_dim` (or the first row's width when `None`).
fn load_examples(manifest: &str, expected_dim: Option<usize>) -> Result<Vec<Example>, CliError> {
    let rows = load_manifest(manifest)?;
    if rows.is_empty() {
        return Err(CliError::user(format!("{manifest}: no rows")));
    }
    let base = base_dir(manifest);
    let mut out = Vec::with_capacity(rows.len());
    let mut dim = expected_dim;
    for (i, row) in rows.iter().enumerate() {
        let path = row.resolve(&base);
        let seq = read_embedding_file(&path)
            .map_err(|e| CliError::user(format!("{manifest} line {}: {e}", i + 2)))?;
        match dim {
            Some(d) if d != seq.dim() => {
                return Err(CliError::user(format!(
                    "{manifest} line {} ({}): embedding dimension {} does not match expected {d}",
                    i + 2,
                    row.source_path,
                    seq.dim()
                )));
            }
            None => dim = Some(seq.dim()),
            _ => {}
        }
        out.push(Example::new(seq, row.labels.clone()));
    }
    Ok(out)
}

pub fn train(o: &Options) -> CmdResult {
    let manifest: String = o.get("manifest")?;
    let out: String = o.get("out")?;
    let history_path = o.opt::<String>("history")?.unwrap_or_else(|| format!("{out}.history.csv"));

    let train_rows = load_examples(&manifest, None)?;
    let dim = train_rows[0].sequence.dim();
    let val_rows = match o.opt::<String>("val-manifest")? {
        Some(v) => load_examples(&v, Some(dim))?,
        None => Vec::new(),
    };

    let model = init_model(model_config(o, dim)?, o.get("seed")?)?;
    let mut cfg = TrainConfig {
        lr: o.get("lr")?,
        beta1: o.get("beta1")?,
        beta2: o.get("beta2")?,
        eps: o.get("eps")?,
        batch_size: o.get("batch-size")?,
        max_epochs: o.get("epochs")?,
        max_steps: o.opt("max-steps")?,
        patience: o.get("patience")?,
        seed: o.get("seed")?,
        ..TrainConfig::default()
    };
    if let Some(spec) = o.opt::<String>("task-weights")? {
        parse_task_weights(&spec, &mut cfg)?;
    }

    let outcome = run_train(&model, &train_rows, &val_rows, &cfg)?;
    save_checkpoint(&outcome.model, &out)?;
    let file = File::create(&history_path).map_err(|e| io_err(Path::new(&history_path), e))?;
    write_history_csv(BufWriter::new(file), &outcome.history).map_err(|e| io_err(Path::new(&history_path), e))?;

    let last = outcome.history.last();
    eprintln!(
        "trained {} steps over {} epochs; checkpoint {out}, history {history_path}",
        outcome.steps,
        outcome.history.len()
    );
    match last.and_then(|r| r.best_so_far) {
        Some(best) => eprintln!("final validation loss: {best} (epoch {})", outcome.best_epoch),
        None => eprintln!(
            "final training loss: {} (no validation set)",
            last.map_or(f64::NAN, |r| r.train_loss)
        ),
    }
    Ok(())
}

pub fn predict(o: &Options) -> CmdResult {
    let model = load_checkpoint(o.get::<String>("checkpoint")?)?;
    let input: String = o.get("input")?;
    let items: Vec<(String, PathBuf)> = if is_manifest(&input) {
        let base = base_dir(&input);
        load_manifest(&input)?
            .into_iter()
            .map(|r| {
                let p = r.resolve(&base);
                (r.source_path, p)
            })
            .collect()
    } else {
        vec![(input.clone(), PathBuf::from(&input))]
    };
    if items.is_empty() {
        return Err(CliError::user(format!("{input}: no rows")));
    }
    let mut lines = Vec::new();
    for (shown, path) in &items {
        let seq = read_embedding_file(path)?;
        let preds = model
            .predict(&seq)
            .map_err(|e| CliError::user(format!("{shown}: {e}")))?;
        for (task, value) in preds.iter() {
            lines.push(format!("{},{},{value}", csv_field(shown), task.name()));
        }
    }
    let stdout = io::stdout();
    let mut w = BufWriter::new(stdout.lock());
    let write = |w: &mut BufWriter<_>| -> io::Result<()> {
        writeln!(w, "path,task,prediction")?;
        for l in &lines {
            writeln!(w, "{l}")?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| CliError::user(format!("stdout: {e}")))
}

fn checked_tasks(model: &DownstreamModel, o: &Options) -> Result<Vec<Task>, CliError> {
    let tasks = match o.opt::<String>("tasks")? {
        Some(spec) => parse_task_list(&spec)?,
        None => model.tasks().to_vec(),
    };
    model.check_tasks(&tasks)?;
    Ok(tasks)
}

pub fn eval(o: &Options) -> CmdResult {
    let model = load_checkpoint(o.get::<String>("checkpoint")?)?;
    let tasks = checked_tasks(&model, o)?;
    let manifest: String = o.get("manifest")?;
    let rows = load_examples(&manifest, Some(model.config().input_dim))?;
    let mut pairs = evaluate(&model, &rows)?;
    pairs.retain(|t, _| tasks.contains(t));
    if pairs.values().all(|p| p.len() < MIN_PAIRS_FOR_MAPPING) {
        let counts: Vec<String> = pairs.iter().map(|(t, p)| format!("{t}={}", p.len())).collect();
        return Err(CliError::user(format!(
            "insufficient pairs: need at least {MIN_PAIRS_FOR_MAPPING} labelled rows for some task, have {}",
            counts.join(", ")
        )));
    }
    let report = build_report(&pairs);
    let stdout = io::stdout();
    report
        .write_csv(stdout.lock())
        .map_err(|e| CliError::user(format!("stdout: {e}")))?;
    let _ = report.write_table(io::stderr().lock());
    Ok(())
}

pub fn profile(o: &Options) -> CmdResult {
    let seed: u64 = o.get("seed")?;
    let model = match o.opt::<String>("checkpoint")? {
        Some(path) => load_checkpoint(path)?,
        None => init_model(model_config(o, o.get("input-dim")?)?, seed)?,
    };
    let opts = ProfileOptions {
        runs: o.get("runs")?,
        warmup: o.get("warmup")?,
        seed,
        frame_step_ms: o.get("frame-step-ms")?,
        flops_scope: o.get::<String>("flops-scope")?.parse::<FlopsScope>()?,
        time_features: o.get("time-features")?,
        ..ProfileOptions::default()
    };
    let report = run_profile(&model, &opts)?;
    report
        .write_csv(io::stdout().lock())
        .map_err(|e| CliError::user(format!("stdout: {e}")))?;
    let _ = report.write_table(io::stderr().lock());
    Ok(())
}
