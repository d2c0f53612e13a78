//! `sqa`: feature extraction, training, prediction, evaluation and
//! profiling for speech quality models.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Arg, ArgAction, Command};
use sqa_core::profiler::CountingAllocator;

#[global_allocator]
static ALLOC: CountingAllocator = CountingAllocator;

/// A failure with its process exit code: 1 for user or data errors, 2 for
/// internal errors.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn user(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl From<sqa_core::Error> for CliError {
    fn from(e: sqa_core::Error) -> Self {
        use sqa_core::Error::*;
        let code = match e {
            Contract(_) | CostModel(_) => 2,
            _ => 1,
        };
        Self { code, message: e.to_string() }
    }
}

fn opt(id: &'static str, value_name: &'static str, help: &'static str) -> Arg {
    Arg::new(id).long(id).value_name(value_name).help(help).action(ArgAction::Set)
}

fn with_default(id: &'static str, value_name: &'static str, default: &'static str, help: &'static str) -> Arg {
    opt(id, value_name, help).default_value(default)
}

fn config_arg() -> Arg {
    opt("config", "FILE", "Read options from a `key = value` file; flags take precedence")
}

fn mel_args() -> Vec<Arg> {
    vec![
        with_default("sample-rate", "HZ", "16000", "Feature sample rate; audio is resampled to it"),
        with_default("window-ms", "MS", "25", "Analysis window length"),
        with_default("hop-ms", "MS", "10", "Hop between frames"),
        with_default("fft-size", "N", "512", "FFT length"),
        with_default("n-mels", "N", "64", "Number of mel bands"),
        with_default("fmin", "HZ", "60", "Lowest filter edge"),
        with_default("fmax", "HZ", "7800", "Highest filter edge"),
    ]
}

fn model_args() -> Vec<Arg> {
    vec![
        with_default("model", "KIND", "transformer", "Architecture: transformer, bilstm or mlp"),
        with_default("tasks", "LIST", "mos", "Tasks: mos, mosra (all six) or a comma list such as mos,t60"),
        with_default("hidden-dim", "N", "64", "Transformer width"),
        with_default("ff-dim", "N", "64", "Transformer feed-forward width"),
        with_default("transformer-layers", "N", "2", "Transformer blocks"),
        with_default("heads", "N", "1", "Attention heads (only 1 is supported)"),
        with_default("bilstm-layers", "N", "2", "Stacked BiLSTM layers"),
        with_default("bilstm-units", "N", "32", "LSTM units per direction"),
        with_default("positional-encoding", "BOOL", "true", "Add sinusoidal positions (transformer only)"),
        with_default("dropout", "P", "0.1", "Dropout probability during training"),
        with_default("normalize", "BOOL", "false", "Z-score each embedding dimension per sequence"),
    ]
}

pub fn cli() -> Command {
    let features = Command::new("features")
        .about("Compute log-mel features for a WAV file or a manifest of WAV files")
        .arg(opt("input", "PATH", "WAV file or manifest CSV (path,mos,snr,sti,t60,drr,c50)"))
        .arg(opt("out-dir", "DIR", "Directory for .sqe files and the output manifest.csv"))
        .arg(config_arg())
        .args(mel_args());

    let train = Command::new("train")
        .about("Train a downstream model on embedding files listed in a manifest")
        .arg(opt("manifest", "CSV", "Training manifest whose paths point to .sqe files"))
        .arg(opt("val-manifest", "CSV", "Validation manifest for model selection and early stopping"))
        .arg(opt("out", "FILE", "Checkpoint to write"))
        .arg(opt("history", "CSV", "Per-epoch history (default: <out>.history.csv)"))
        .arg(config_arg())
        .args(model_args())
        .arg(with_default("lr", "RATE", "0.001", "Adam learning rate"))
        .arg(with_default("beta1", "B", "0.9", "Adam first-moment decay"))
        .arg(with_default("beta2", "B", "0.999", "Adam second-moment decay"))
        .arg(with_default("eps", "E", "1e-8", "Adam epsilon"))
        .arg(with_default("batch-size", "N", "32", "Examples per step"))
        .arg(with_default("epochs", "N", "100", "Maximum epochs"))
        .arg(opt("max-steps", "N", "Stop after this many optimizer steps"))
        .arg(with_default("patience", "N", "10", "Epochs without validation improvement before stopping"))
        .arg(with_default("seed", "N", "0", "Seed for initialization, shuffling and dropout"))
        .arg(opt("task-weights", "LIST", "Loss weights such as MOS=1,T60=0.5 (unlisted tasks weigh 1)"));

    let predict = Command::new("predict")
        .about("Print path,task,prediction CSV for an embedding file or manifest")
        .arg(opt("checkpoint", "FILE", "Trained model"))
        .arg(opt("input", "PATH", ".sqe file or manifest CSV"))
        .arg(config_arg());

    let eval = Command::new("eval")
        .about("Score a checkpoint on a labelled manifest (PCC, RMSE, mapped RMSE)")
        .arg(opt("checkpoint", "FILE", "Trained model"))
        .arg(opt("manifest", "CSV", "Labelled manifest of .sqe files"))
        .arg(opt("tasks", "LIST", "Tasks to score (default: every task of the model)"))
        .arg(config_arg());

    let profile = Command::new("profile")
        .about("Report parameters, memory, latency and FLOPs of a model")
        .arg(opt("checkpoint", "FILE", "Profile this model instead of a fresh one built from the flags"))
        .arg(with_default("input-dim", "D", "2048", "Embedding width of a fresh model"))
        .args(model_args())
        .arg(with_default("runs", "N", "30", "Timed inferences"))
        .arg(with_default("warmup", "N", "5", "Untimed warmup inferences"))
        .arg(with_default("seed", "N", "0", "Seed for clips, embeddings and fresh weights"))
        .arg(with_default("frame-step-ms", "MS", "160", "Frame step of synthesized embeddings"))
        .arg(with_default(
            "flops-scope",
            "SCOPE",
            "features_plus_downstream",
            "FLOP scope: downstream_only or features_plus_downstream",
        ))
        .arg(with_default("time-features", "BOOL", "true", "Also time the features+downstream pipeline"))
        .arg(config_arg());

    Command::new("sqa")
        .about("Lightweight speech quality assessment")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .subcommands([features, train, predict, eval, profile])
}

fn main() -> ExitCode {
    let command = cli();
    let matches = match command.clone().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let sub_cmd = command.find_subcommand(name).expect("matched subcommand exists");
    let result = config::Options::new(sub, sub_cmd).and_then(|opts| match name {
        "features" => commands::features(&opts),
        "train" => commands::train(&opts),
        "predict" => commands::predict(&opts),
        "eval" => commands::eval(&opts),
        "profile" => commands::profile(&opts),
        _ => unreachable!("unknown subcommand {name}"),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
