//! Efficiency profiling: parameters, memory, latency and FLOPs.

mod alloc;
mod cost;

pub use alloc::{measure_peak, tracking_active, CountingAllocator};
pub use cost::{count_flops, layer_plan, mel_frontend_flops, CostModel, LayerCall};

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{synthesize_profiling_clip, AudioClip, CANONICAL_RATE, PROFILING_DURATION_S};
use crate::error::{Error, Result};
use crate::features::{EmbeddingSequence, MelConfig, MelSpectrogram, SourceTag};
use crate::models::{encode_checkpoint, DownstreamModel, ModelInput, Variant};

pub const DEFAULT_RUNS: usize = 30;
pub const DEFAULT_WARMUP: usize = 5;
/// Clip length used for the FLOP and memory figures.
pub const REFERENCE_CLIP_S: f64 = 6.0;
/// Frame step of the external embeddings assumed when synthesizing them.
pub const DEFAULT_FRAME_STEP_MS: f64 = 160.0;

pub fn count_params(model: &DownstreamModel) -> usize {
    model.parameters().values().map(|t| t.len()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlopsScope {
    DownstreamOnly,
    FeaturesPlusDownstream,
}

impl FlopsScope {
    pub fn name(self) -> &'static str {
        match self {
            FlopsScope::DownstreamOnly => "downstream_only",
            FlopsScope::FeaturesPlusDownstream => "features_plus_downstream",
        }
    }
}

impl fmt::Display for FlopsScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FlopsScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "downstream_only" => Ok(FlopsScope::DownstreamOnly),
            "features_plus_downstream" => Ok(FlopsScope::FeaturesPlusDownstream),
            _ => Err(Error::Argument(format!(
                "unknown flops scope `{s}` (expected downstream_only or features_plus_downstream)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileOptions {
    pub runs: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Step of synthesized embeddings, used when the model does not consume
    /// log-mel frames directly.
    pub frame_step_ms: f64,
    pub mel: MelConfig,
    pub flops_scope: FlopsScope,
    /// Also time the features+downstream pipeline.
    pub time_features: bool,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            runs: DEFAULT_RUNS,
            warmup: DEFAULT_WARMUP,
            seed: 0,
            frame_step_ms: DEFAULT_FRAME_STEP_MS,
            mel: MelConfig::default(),
            flops_scope: FlopsScope::FeaturesPlusDownstream,
            time_features: true,
        }
    }
}

impl ProfileOptions {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Argument("at least one timed run is required".into()));
        }
        if !(self.frame_step_ms > 0.0 && self.frame_step_ms.is_finite()) {
            return Err(Error::Argument(format!("frame step {} ms must be > 0", self.frame_step_ms)));
        }
        if self.mel.sample_rate != CANONICAL_RATE {
            return Err(Error::Argument(format!(
                "profiling clips are {CANONICAL_RATE} Hz, mel config says {} Hz",
                self.mel.sample_rate
            )));
        }
        self.mel.validate()
    }

    /// Log-mel frames feed the model directly when the widths agree.
    pub fn consumes_mel(&self, model: &DownstreamModel) -> bool {
        model.config().input_dim == self.mel.n_mels
    }

    /// Number of model input frames for a clip of `duration_s` seconds.
    pub fn frames_for(&self, model: &DownstreamModel, duration_s: f64) -> usize {
        if self.consumes_mel(model) {
            let n = (duration_s * CANONICAL_RATE as f64).round() as usize;
            self.mel.frame_count(n).unwrap_or(1)
        } else {
            ((duration_s * 1000.0 / self.frame_step_ms).floor() as usize).max(1)
        }
    }
}

/// Durations (seconds) of the warmup-then-timed clip sequence, uniform in
/// the profiling range.
pub fn clip_durations(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = PROFILING_DURATION_S;
    (0..n).map(|_| rng.gen_range(lo..=hi)).collect()
}

/// Stand-in for an external encoder's output: seeded N(0,1)-ish values.
pub fn synthesize_embedding(frames: usize, dim: usize, frame_step_ms: f64, seed: u64) -> Result<EmbeddingSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..frames * dim)
        .map(|_| (0..4).map(|_| rng.gen_range(-1.0f32..1.0)).sum::<f32>() * 0.866)
        .collect();
    EmbeddingSequence::new(frames, dim, data, frame_step_ms as f32, SourceTag::Other)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyStats {
    pub scope: FlopsScope,
    pub samples_ms: Vec<f64>,
    pub durations_s: Vec<f64>,
    pub median: f64,
    pub mean: f64,
    pub p95: f64,
    pub min: f64,
    pub max: f64,
    pub timer_resolution_ms: f64,
    /// Timer resolution coarser than 1% of the median.
    pub unreliable: bool,
    /// (p95 - min) / median >= 1: a noisy machine.
    pub high_spread: bool,
}

impl LatencyStats {
    pub fn from_samples(scope: FlopsScope, samples_ms: Vec<f64>, durations_s: Vec<f64>, timer_resolution_ms: f64) -> Result<Self> {
        if samples_ms.is_empty() {
            return Err(Error::Argument("no latency samples".into()));
        }
        let mut sorted = samples_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
        // Nearest-rank percentile.
        let p95 = sorted[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
        let mean = sorted.iter().sum::<f64>() / n as f64;
        let (min, max) = (sorted[0], sorted[n - 1]);
        Ok(Self {
            scope,
            samples_ms,
            durations_s,
            median,
            mean,
            p95,
            min,
            max,
            timer_resolution_ms,
            unreliable: timer_resolution_ms > 0.01 * median,
            high_spread: median > 0.0 && (p95 - min) / median >= 1.0,
        })
    }
}

/// Smallest observable nonzero step of the monotonic clock, in ms.
pub fn timer_resolution_ms() -> f64 {
    let mut best = f64::INFINITY;
    for _ in 0..64 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min((b - a).as_secs_f64() * 1e3);
    }
    best
}

struct Pipeline<'a> {
    model: &'a DownstreamModel,
    opts: &'a ProfileOptions,
    mel: MelSpectrogram,
}

impl<'a> Pipeline<'a> {
    fn new(model: &'a DownstreamModel, opts: &'a ProfileOptions) -> Result<Self> {
        opts.validate()?;
        Ok(Self {
            model,
            opts,
            mel: MelSpectrogram::new(opts.mel.clone())?,
        })
    }

    fn clip(&self, i: usize, duration_s: f64) -> Result<AudioClip> {
        synthesize_profiling_clip(self.opts.seed.wrapping_add(i as u64), duration_s, CANONICAL_RATE)
    }

    /// Model input for a clip that was not timed to produce.
    fn downstream_input(&self, i: usize, clip: &AudioClip) -> Result<ModelInput> {
        if self.opts.consumes_mel(self.model) {
            self.model.prepare(&self.mel.compute(clip)?)
        } else {
            let frames = self.opts.frames_for(self.model, clip.duration_s());
            let seq = synthesize_embedding(frames, self.model.config().input_dim, self.opts.frame_step_ms, self.opts.seed ^ (i as u64) << 20)?;
            self.model.prepare(&seq)
        }
    }

    fn time_run(&self, i: usize, clip: &AudioClip, scope: FlopsScope) -> Result<f64> {
        match scope {
            FlopsScope::DownstreamOnly => {
                let input = self.downstream_input(i, clip)?;
                let start = Instant::now();
                std::hint::black_box(self.model.forward(&input)?);
                Ok(start.elapsed().as_secs_f64() * 1e3)
            }
            FlopsScope::FeaturesPlusDownstream => {
                // An external encoder is outside this crate; its synthesized
                // output is prepared before the clock starts.
                let external = if self.opts.consumes_mel(self.model) {
                    None
                } else {
                    Some(self.downstream_input(i, clip)?)
                };
                let start = Instant::now();
                let mel = self.mel.compute(clip)?;
                let input = match external {
                    Some(input) => {
                        std::hint::black_box(&mel);
                        input
                    }
                    None => self.model.prepare(&mel)?,
                };
                std::hint::black_box(self.model.forward(&input)?);
                Ok(start.elapsed().as_secs_f64() * 1e3)
            }
        }
    }
}

/// Runs `warmup` untimed then `runs` timed inferences, one seeded clip per
/// run, in the given scope.
pub fn measure_latency(model: &DownstreamModel, opts: &ProfileOptions, scope: FlopsScope) -> Result<LatencyStats> {
    let pipe = Pipeline::new(model, opts)?;
    let durations = clip_durations(opts.seed, opts.warmup + opts.runs);
    let mut samples = Vec::with_capacity(opts.runs);
    for (i, &d) in durations.iter().enumerate() {
        let clip = pipe.clip(i, d)?;
        let ms = pipe.time_run(i, &clip, scope)?;
        if i >= opts.warmup {
            samples.push(ms);
        }
    }
    LatencyStats::from_samples(scope, samples, durations[opts.warmup..].to_vec(), timer_resolution_ms())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryReport {
    /// Serialized float32 weights plus checkpoint header.
    pub model_memory_bytes: usize,
    /// Model memory plus the allocation high-water mark of one inference;
    /// `None` without the counting allocator.
    pub peak_runtime_bytes: Option<usize>,
}

pub fn measure_memory(model: &DownstreamModel, input: &ModelInput) -> Result<MemoryReport> {
    let model_memory_bytes = encode_checkpoint(model)?.len();
    let (out, peak) = measure_peak(|| model.forward(input));
    out?;
    Ok(MemoryReport {
        model_memory_bytes,
        peak_runtime_bytes: peak.map(|p| p + model_memory_bytes),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Environment {
    pub cpu: String,
    pub threads: usize,
    pub os: String,
}

impl Environment {
    pub fn detect() -> Self {
        let cpu = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split_once(':'))
                    .map(|(_, v)| v.trim().to_string())
            })
            .unwrap_or_else(|| "unknown".into());
        Self {
            cpu,
            threads: 1,
            os: format!("{}-{}", std::env::consts::OS, std::env::consts::ARCH),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyReport {
    pub variant: Variant,
    pub param_count: usize,
    pub memory: MemoryReport,
    /// Model input frames for the reference clip.
    pub frames: usize,
    pub flops_scope: FlopsScope,
    pub flops_per_inference: u64,
    pub downstream_flops: u64,
    pub features_flops: u64,
    pub latency_downstream: LatencyStats,
    pub latency_features: Option<LatencyStats>,
    pub environment: Environment,
    pub formulas: Vec<(&'static str, &'static str)>,
}

pub fn profile(model: &DownstreamModel, opts: &ProfileOptions) -> Result<EfficiencyReport> {
    let pipe = Pipeline::new(model, opts)?;
    let reference = synthesize_profiling_clip(opts.seed, REFERENCE_CLIP_S, CANONICAL_RATE)?;
    let input = pipe.downstream_input(usize::MAX, &reference)?;
    let frames = match &input {
        ModelInput::Frames(seq) => seq.frames(),
        ModelInput::Utterance(_) => opts.frames_for(model, REFERENCE_CLIP_S),
    };
    let downstream_flops = count_flops(model.config(), frames)?;
    let features_flops = mel_frontend_flops(&opts.mel, pipe.mel.filterbank_nonzeros(), reference.len());
    let flops_per_inference = match opts.flops_scope {
        FlopsScope::DownstreamOnly => downstream_flops,
        FlopsScope::FeaturesPlusDownstream => downstream_flops + features_flops,
    };
    let memory = measure_memory(model, &input)?;
    let latency_downstream = measure_latency(model, opts, FlopsScope::DownstreamOnly)?;
    let latency_features = if opts.time_features {
        Some(measure_latency(model, opts, FlopsScope::FeaturesPlusDownstream)?)
    } else {
        None
    };
    Ok(EfficiencyReport {
        variant: model.config().variant,
        param_count: count_params(model),
        memory,
        frames,
        flops_scope: opts.flops_scope,
        flops_per_inference,
        downstream_flops,
        features_flops,
        latency_downstream,
        latency_features,
        environment: Environment::detect(),
        formulas: CostModel::standard().describe(),
    })
}

impl EfficiencyReport {
    /// `(metric, value, unit, scope)` rows.
    pub fn rows(&self) -> Vec<(String, String, &'static str, String)> {
        let mut rows = Vec::new();
        let mut push = |m: &str, v: String, u: &'static str, s: &str| rows.push((m.to_string(), v, u, s.to_string()));
        push("params", self.param_count.to_string(), "count", "downstream_only");
        push("model_memory", self.memory.model_memory_bytes.to_string(), "bytes", "downstream_only");
        if let Some(p) = self.memory.peak_runtime_bytes {
            push("peak_runtime_memory", p.to_string(), "bytes", "downstream_only");
        }
        push("frames", self.frames.to_string(), "count", "downstream_only");
        let scope = self.flops_scope.name();
        push("flops", self.flops_per_inference.to_string(), "FLOP", scope);
        push("gflops", format!("{:.6}", self.flops_per_inference as f64 / 1e9), "GFLOP", scope);
        for stats in std::iter::once(&self.latency_downstream).chain(self.latency_features.as_ref()) {
            let s = stats.scope.name();
            push("latency_runs", stats.samples_ms.len().to_string(), "count", s);
            push("latency_median", format!("{:.4}", stats.median), "ms", s);
            push("latency_mean", format!("{:.4}", stats.mean), "ms", s);
            push("latency_p95", format!("{:.4}", stats.p95), "ms", s);
            push("latency_min", format!("{:.4}", stats.min), "ms", s);
            push("latency_max", format!("{:.4}", stats.max), "ms", s);
        }
        rows
    }

    fn comments(&self) -> Vec<String> {
        let env = &self.environment;
        let mut c = vec![
            format!("# variant: {}", self.variant),
            format!("# cpu: {}", env.cpu),
            format!("# threads: {}", env.threads),
            format!("# os: {}", env.os),
            "# flop convention: multiply-accumulate = 2 FLOPs, elementwise op = 1 FLOP".to_string(),
            format!("# features flops (log-mel front end estimate): {}", self.features_flops),
        ];
        for (k, f) in &self.formulas {
            c.push(format!("# formula {k}: {f}"));
        }
        for stats in std::iter::once(&self.latency_downstream).chain(self.latency_features.as_ref()) {
            if stats.unreliable {
                c.push(format!(
                    "# warning: timer resolution {:.6} ms exceeds 1% of the {} median",
                    stats.timer_resolution_ms,
                    stats.scope
                ));
            }
            if stats.high_spread {
                c.push(format!("# warning: {} latency spread (p95 - min) / median >= 1", stats.scope));
            }
        }
        c
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "metric,value,unit,scope")?;
        for (m, v, u, s) in self.rows() {
            writeln!(w, "{m},{v},{u},{s}")?;
        }
        for c in self.comments() {
            writeln!(w, "{c}")?;
        }
        Ok(())
    }

    pub fn write_table<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let rows = self.rows();
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(6).max(6);
        let vwidth = rows.iter().map(|r| r.1.len()).max().unwrap_or(5).max(5);
        writeln!(w, "{:<width$}  {:>vwidth$}  {:<5}  scope", "metric", "value", "unit")?;
        for (m, v, u, s) in rows {
            writeln!(w, "{m:<width$}  {v:>vwidth$}  {u:<5}  {s}")?;
        }
        for c in self.comments() {
            writeln!(w, "{c}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use crate::models::{describe_parameters, init_model, ModelConfig};
    use crate::task::Task;

    fn quick(runs: usize) -> ProfileOptions {
        ProfileOptions {
            runs,
            warmup: 1,
            ..ProfileOptions::default()
        }
    }

    fn small(variant: Variant, dim: usize) -> DownstreamModel {
        let mut c = ModelConfig::new(variant, dim, vec![Task::Mos]);
        c.hidden_dim = 16;
        c.ff_dim = 16;
        c.bilstm_units_per_dir = 8;
        init_model(c, 0).unwrap()
    }

    #[test]
    fn params_match_table_and_head_arithmetic() {
        let mos = init_model(ModelConfig::transformer(2048, vec![Task::Mos]), 0).unwrap();
        let all = init_model(ModelConfig::transformer(2048, Task::ALL.to_vec()), 0).unwrap();
        assert_eq!(count_params(&mos), describe_parameters(mos.config()).total);
        assert_eq!(count_params(&all) - count_params(&mos), 5 * 65);
    }

    #[test]
    fn stats_use_nearest_rank() {
        let samples: Vec<f64> = (1..=20).map(f64::from).collect();
        let s = LatencyStats::from_samples(FlopsScope::DownstreamOnly, samples, vec![], 1e-6).unwrap();
        assert_eq!((s.median, s.p95, s.min, s.max, s.mean), (10.5, 19.0, 1.0, 20.0, 10.5));
        assert!(!s.unreliable);
        let coarse = LatencyStats::from_samples(FlopsScope::DownstreamOnly, vec![1.0, 1.0], vec![], 0.5).unwrap();
        assert!(coarse.unreliable);
    }

    #[test]
    fn durations_are_seeded_and_in_range() {
        let a = clip_durations(3, 35);
        assert_eq!(a, clip_durations(3, 35));
        assert!(a.iter().all(|d| (5.5..=6.5).contains(d)));
    }

    #[test]
    fn latency_protocol() {
        let model = small(Variant::FramewiseTransformer, 32);
        let opts = quick(4);
        let a = measure_latency(&model, &opts, FlopsScope::DownstreamOnly).unwrap();
        let b = measure_latency(&model, &opts, FlopsScope::DownstreamOnly).unwrap();
        assert_eq!(a.samples_ms.len(), 4);
        assert_eq!(a.durations_s, b.durations_s);
        assert_eq!(a.durations_s, clip_durations(0, 5)[1..].to_vec());
        assert!(a.p95 >= a.median && a.median >= a.min);
        let f = measure_latency(&model, &opts, FlopsScope::FeaturesPlusDownstream).unwrap();
        assert!(a.median <= f.median, "{} vs {}", a.median, f.median);
    }

    #[test]
    fn frames_follow_the_step_or_the_mel_hop() {
        let opts = ProfileOptions::default();
        assert_eq!(opts.frames_for(&small(Variant::FramewiseTransformer, 32), 6.08), 38);
        assert_eq!(opts.frames_for(&small(Variant::FramewiseTransformer, 64), 1.0), 98);
    }

    #[test]
    fn memory_peak_includes_model_and_grows_with_frames() {
        let model = small(Variant::FramewiseTransformer, 12);
        let input = |t| model.prepare(&synthesize_embedding(t, 12, 160.0, 1).unwrap()).unwrap();
        let a = measure_memory(&model, &input(10)).unwrap();
        let b = measure_memory(&model, &input(20)).unwrap();
        assert_eq!(a.model_memory_bytes, b.model_memory_bytes);
        assert!(a.model_memory_bytes > 4 * count_params(&model));
        let (pa, pb) = (a.peak_runtime_bytes.unwrap(), b.peak_runtime_bytes.unwrap());
        assert!(pa >= a.model_memory_bytes && pb > pa, "{pa} {pb}");
    }

    #[test]
    fn closed_form_matches_instrumented_tally() {
        for v in Variant::ALL {
            let model = small(v, 6);
            for t in [1, 3, 7] {
                let input = model.prepare(&synthesize_embedding(t, 6, 160.0, t as u64).unwrap()).unwrap();
                let mut g = Graph::new();
                let p = model.bind(&mut g, false);
                model.forward_graph(&mut g, &p, &input, None).unwrap();
                assert_eq!(count_flops(model.config(), t).unwrap(), g.flops(), "{v} T={t}");
            }
        }
    }

    #[test]
    fn report_is_complete_and_analytic_parts_are_stable() {
        let model = small(Variant::FramewiseBilstm, 20);
        let opts = quick(3);
        let a = profile(&model, &opts).unwrap();
        let b = profile(&model, &opts).unwrap();
        assert_eq!((a.param_count, a.flops_per_inference, a.memory.model_memory_bytes), (b.param_count, b.flops_per_inference, b.memory.model_memory_bytes));
        assert_eq!(a.frames, 37);
        assert_eq!(a.flops_per_inference, a.downstream_flops + a.features_flops);
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("metric,value,unit,scope\nparams,"));
        assert!(text.contains("latency_runs,3,count,downstream_only"));
        assert!(text.contains("latency_runs,3,count,features_plus_downstream"));
        assert!(text.contains("# threads: 1"));
        let mut table = Vec::new();
        a.write_table(&mut table).unwrap();
        assert!(String::from_utf8(table).unwrap().contains("latency_median"));
    }
}
