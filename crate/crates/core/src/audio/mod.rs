//! Audio clips: WAV decoding, resampling, synthetic profiling clips and
//! dataset manifests.

mod manifest;
mod resample;
mod wav;

pub use manifest::{load_manifest, read_manifest, save_manifest, write_manifest, ManifestRow};
pub use resample::resample;
pub use wav::{decode_wav, encode_wav_f32, encode_wav_pcm16, read_wav};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Sample rate every feature pipeline in this crate runs at.
pub const CANONICAL_RATE: u32 = 16_000;

/// Allowed duration range, in seconds, for synthesized profiling clips.
pub const PROFILING_DURATION_S: (f64, f64) = (5.5, 6.5);

/// Mono audio, amplitudes in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Argument("audio clip has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Argument("sample rate must be positive".into()));
        }
        if let Some(i) = samples
            .iter()
            .position(|s| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(Error::Data(format!(
                "sample {i} = {} is outside [-1, 1]",
                samples[i]
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }
}

/// Seeded uniform white noise in [-0.9, 0.9], used as the input unit for
/// latency and memory profiling.
pub fn synthesize_profiling_clip(seed: u64, duration_s: f64, sample_rate: u32) -> Result<AudioClip> {
    let (lo, hi) = PROFILING_DURATION_S;
    if !(lo..=hi).contains(&duration_s) {
        return Err(Error::Argument(format!(
            "profiling clip duration {duration_s} s outside [{lo}, {hi}]"
        )));
    }
    if sample_rate == 0 {
        return Err(Error::Argument("sample rate must be positive".into()));
    }
    let n = (duration_s * sample_rate as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n).map(|_| rng.gen_range(-0.9f32..=0.9)).collect();
    AudioClip::new(samples, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_invariants() {
        assert!(AudioClip::new(vec![], 16000).is_err());
        assert!(AudioClip::new(vec![0.0], 0).is_err());
        assert!(AudioClip::new(vec![1.5], 16000).is_err());
        assert!(AudioClip::new(vec![f32::NAN], 16000).is_err());
        assert!(AudioClip::new(vec![-1.0, 1.0], 16000).is_ok());
    }

    #[test]
    fn profiling_clip_is_deterministic() {
        let a = synthesize_profiling_clip(7, 6.0, 16000).unwrap();
        let b = synthesize_profiling_clip(7, 6.0, 16000).unwrap();
        assert_eq!(a, b);
        assert!(a.samples().iter().all(|s| s.abs() <= 0.9));
        let c = synthesize_profiling_clip(8, 6.0, 16000).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn profiling_clip_bounds_and_length() {
        assert!(matches!(
            synthesize_profiling_clip(1, 5.0, 16000),
            Err(Error::Argument(_))
        ));
        assert!(synthesize_profiling_clip(1, 6.6, 16000).is_err());
        assert_eq!(synthesize_profiling_clip(1, 5.5, 16000).unwrap().len(), 88000);
    }
}
