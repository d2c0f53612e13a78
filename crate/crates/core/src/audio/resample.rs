use super::AudioClip;
use crate::error::{Error, Result};

/// Kernel taps expressed at the lower of the two rates.
const TAPS: usize = 64;
const KAISER_BETA: f64 = 8.6;
/// Above this many polyphase branches the kernel is evaluated per sample
/// instead of tabulated.
const MAX_TABLE_PHASES: usize = 4096;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

struct Kernel {
    cutoff: f64,
    half_width: f64,
    reach: i64,
    i0_beta: f64,
}

impl Kernel {
    fn new(src: u32, dst: u32) -> Self {
        let cutoff = (dst as f64 / src as f64).min(1.0);
        let half_width = (TAPS / 2) as f64 / cutoff;
        Self {
            cutoff,
            half_width,
            reach: half_width.ceil() as i64,
            i0_beta: bessel_i0(KAISER_BETA),
        }
    }

    fn eval(&self, x: f64) -> f64 {
        let r = x / self.half_width;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let arg = std::f64::consts::PI * self.cutoff * x;
        let sinc = if arg == 0.0 { 1.0 } else { arg.sin() / arg };
        let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / self.i0_beta;
        self.cutoff * sinc * window
    }

    /// Weights for input offsets `-(reach-1)..=reach` around the base sample,
    /// normalised to unit DC gain.
    fn phase_weights(&self, frac: f64) -> Vec<f64> {
        let mut w: Vec<f64> = (-(self.reach - 1)..=self.reach)
            .map(|i| self.eval(frac - i as f64))
            .collect();
        let sum: f64 = w.iter().sum();
        if sum != 0.0 {
            w.iter_mut().for_each(|v| *v /= sum);
        }
        w
    }
}

/// Windowed-sinc polyphase resampling (64 taps at the lower rate, Kaiser
/// window with beta 8.6). Output length is `round(len * target / source)`.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::Argument("target rate must be positive".into()));
    }
    let src = clip.sample_rate();
    if src == target_rate {
        return Ok(clip.clone());
    }
    let g = gcd(src as u64, target_rate as u64);
    let up = target_rate as u64 / g;
    let down = src as u64 / g;
    let input = clip.samples();
    let n = input.len();
    let out_len = ((n as f64 * target_rate as f64 / src as f64).round() as usize).max(1);

    let kernel = Kernel::new(src, target_rate);
    let table: Option<Vec<Vec<f64>>> = (up as usize <= MAX_TABLE_PHASES).then(|| {
        (0..up)
            .map(|p| kernel.phase_weights(p as f64 / up as f64))
            .collect()
    });

    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len as u64 {
        let pos = j * down;
        let base = (pos / up) as i64;
        let phase = pos % up;
        let owned;
        let weights: &[f64] = match &table {
            Some(t) => &t[phase as usize],
            None => {
                owned = kernel.phase_weights(phase as f64 / up as f64);
                &owned
            }
        };
        let start = base - (kernel.reach - 1);
        let mut acc = 0.0f64;
        for (i, w) in weights.iter().enumerate() {
            let k = start + i as i64;
            if k >= 0 && (k as usize) < n {
                acc += w * input[k as usize] as f64;
            }
        }
        out.push(acc.clamp(-1.0, 1.0) as f32);
    }
    AudioClip::new(out, target_rate)
}
