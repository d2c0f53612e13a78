use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{EmbeddingSequence, SourceTag};
use crate::audio::AudioClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub fft_size: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            window_ms: 25.0,
            hop_ms: 10.0,
            fft_size: 512,
            n_mels: 64,
            fmin: 60.0,
            fmax: 7800.0,
            log_floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn win_samples(&self) -> usize {
        (self.window_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    /// `1 + floor((n - win) / hop)`, or `None` when `n` is shorter than a window.
    pub fn frame_count(&self, n: usize) -> Option<usize> {
        let win = self.win_samples();
        (n >= win).then(|| 1 + (n - win) / self.hop_samples())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(format!("mel config: {m}")));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if !(self.hop_ms > 0.0 && self.window_ms >= self.hop_ms) {
            return bad(format!("need window_ms >= hop_ms > 0, got {} / {}", self.window_ms, self.hop_ms));
        }
        if self.hop_samples() == 0 {
            return bad("hop shorter than one sample".into());
        }
        if self.n_mels == 0 {
            return bad("n_mels must be >= 1".into());
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0) {
            return bad(format!("need 0 <= fmin < fmax <= sr/2, got {} / {}", self.fmin, self.fmax));
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be > 0".into());
        }
        if self.fft_size < self.win_samples() {
            return bad(format!(
                "fft_size {} shorter than the {}-sample window",
                self.fft_size,
                self.win_samples()
            ));
        }
        Ok(())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Sparse triangular filter: first FFT bin it touches plus its weights.
#[derive(Debug, Clone)]
struct Filter {
    start: usize,
    weights: Vec<f64>,
}

/// Precomputed STFT window, FFT plan and mel filterbank for one config.
/// Immutable after construction, so one instance can serve many clips.
pub struct MelSpectrogram {
    cfg: MelConfig,
    window: Vec<f64>,
    filters: Vec<Filter>,
    fft: Arc<dyn Fft<f64>>,
}

impl MelSpectrogram {
    pub fn new(cfg: MelConfig) -> Result<Self> {
        cfg.validate()?;
        let win = cfg.win_samples();
        // periodic Hann
        let window = (0..win)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win as f64).cos())
            .collect();
        let filters = build_filters(&cfg);
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(Self {
            cfg,
            window,
            filters,
            fft,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    /// Center frequency in Hz of every mel band.
    pub fn center_frequencies(&self) -> Vec<f64> {
        let (lo, hi) = (hz_to_mel(self.cfg.fmin), hz_to_mel(self.cfg.fmax));
        let step = (hi - lo) / (self.cfg.n_mels + 1) as f64;
        (1..=self.cfg.n_mels).map(|m| mel_to_hz(lo + step * m as f64)).collect()
    }

    /// Dense `n_mels x (fft_size/2 + 1)` filterbank.
    pub fn filterbank(&self) -> Vec<Vec<f64>> {
        let bins = self.cfg.fft_size / 2 + 1;
        self.filters
            .iter()
            .map(|f| {
                let mut row = vec![0.0; bins];
                row[f.start..f.start + f.weights.len()].copy_from_slice(&f.weights);
                row
            })
            .collect()
    }

    /// Number of nonzero filterbank weights.
    pub fn filterbank_nonzeros(&self) -> usize {
        self.filters.iter().map(|f| f.weights.len()).sum()
    }

    pub fn compute(&self, clip: &AudioClip) -> Result<EmbeddingSequence> {
        if clip.sample_rate() != self.cfg.sample_rate {
            return Err(Error::Argument(format!(
                "clip is {} Hz, mel config expects {} Hz",
                clip.sample_rate(),
                self.cfg.sample_rate
            )));
        }
        let samples = clip.samples();
        let win = self.cfg.win_samples();
        let hop = self.cfg.hop_samples();
        let frames = self.cfg.frame_count(samples.len()).ok_or(Error::TooShort {
            samples: samples.len(),
            needed: win,
        })?;
        let n_fft = self.cfg.fft_size;
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0f64; n_fft / 2 + 1];
        let mut out = Vec::with_capacity(frames * self.cfg.n_mels);
        for t in 0..frames {
            let frame = &samples[t * hop..t * hop + win];
            for (b, (&s, &w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *b = Complex::new(s as f64 * w, 0.0);
            }
            buf[win..].iter_mut().for_each(|b| *b = Complex::new(0.0, 0.0));
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for f in &self.filters {
                let energy: f64 = f
                    .weights
                    .iter()
                    .zip(&power[f.start..])
                    .map(|(w, p)| w * p)
                    .sum();
                out.push((energy + self.cfg.log_floor).ln() as f32);
            }
        }
        EmbeddingSequence::new(
            frames,
            self.cfg.n_mels,
            out,
            self.cfg.hop_ms as f32,
            SourceTag::Melspec,
        )
    }
}

/// HTK-scale triangles, each scaled to unit area (2 / bandwidth in Hz).
fn build_filters(cfg: &MelConfig) -> Vec<Filter> {
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let step = (hi - lo) / (cfg.n_mels + 1) as f64;
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + step * i as f64))
        .collect();
    let bins = cfg.fft_size / 2 + 1;
    let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
    edges
        .windows(3)
        .map(|e| {
            let (left, center, right) = (e[0], e[1], e[2]);
            let norm = 2.0 / (right - left);
            let dense: Vec<f64> = (0..bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let up = (f - left) / (center - left);
                    let down = (right - f) / (right - center);
                    up.min(down).max(0.0) * norm
                })
                .collect();
            match dense.iter().position(|&w| w > 0.0) {
                Some(start) => {
                    let end = dense.iter().rposition(|&w| w > 0.0).unwrap() + 1;
                    Filter {
                        start,
                        weights: dense[start..end].to_vec(),
                    }
                }
                None => Filter {
                    start: 0,
                    weights: Vec::new(),
                },
            }
        })
        .collect()
}

pub fn log_mel_spectrogram(clip: &AudioClip, cfg: &MelConfig) -> Result<EmbeddingSequence> {
    MelSpectrogram::new(cfg.clone())?.compute(clip)
}
