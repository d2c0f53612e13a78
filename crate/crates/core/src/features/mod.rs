//! Framewise features (log-mel or externally computed embeddings) and
//! utterance-level pooling.

mod mel;
mod pool;
mod sqe;

pub use mel::{log_mel_spectrogram, MelConfig, MelSpectrogram};
pub use pool::{pool_mean_max, UtteranceEmbedding};
pub use sqe::{decode_embedding, encode_embedding, read_embedding_file, write_embedding_file};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which front end produced a framewise sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    Melspec,
    ByolsCvt,
    Xlsr,
    Other,
}

impl SourceTag {
    pub fn code(self) -> u8 {
        match self {
            SourceTag::Melspec => 0,
            SourceTag::ByolsCvt => 1,
            SourceTag::Xlsr => 2,
            SourceTag::Other => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => SourceTag::Melspec,
            1 => SourceTag::ByolsCvt,
            2 => SourceTag::Xlsr,
            3 => SourceTag::Other,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            SourceTag::Melspec => "melspec",
            SourceTag::ByolsCvt => "byols_cvt",
            SourceTag::Xlsr => "xlsr",
            SourceTag::Other => "other",
        }
    }
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SourceTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [SourceTag::Melspec, SourceTag::ByolsCvt, SourceTag::Xlsr, SourceTag::Other]
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown source tag `{s}`")))
    }
}

/// A `frames x dim` feature matrix, row-major, with the hop between rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    frames: usize,
    dim: usize,
    data: Vec<f32>,
    frame_step_ms: f32,
    source_tag: SourceTag,
}

impl EmbeddingSequence {
    pub fn new(
        frames: usize,
        dim: usize,
        data: Vec<f32>,
        frame_step_ms: f32,
        source_tag: SourceTag,
    ) -> Result<Self> {
        if frames == 0 || dim == 0 {
            return Err(Error::Argument(format!(
                "embedding sequence must be non-empty, got {frames}x{dim}"
            )));
        }
        if data.len() != frames * dim {
            return Err(Error::shape("embedding_sequence", &[frames, dim], &[data.len()]));
        }
        if !(frame_step_ms.is_finite() && frame_step_ms > 0.0) {
            return Err(Error::Argument(format!("frame step {frame_step_ms} ms must be > 0")));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at frame {}, dim {}",
                i / dim,
                i % dim
            )));
        }
        Ok(Self {
            frames,
            dim,
            data,
            frame_step_ms,
            source_tag,
        })
    }

    pub fn from_rows(rows: &[Vec<f32>], frame_step_ms: f32, source_tag: SourceTag) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Argument("ragged rows".into()));
        }
        Self::new(rows.len(), dim, rows.concat(), frame_step_ms, source_tag)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frame_step_ms(&self) -> f32 {
        self.frame_step_ms
    }

    pub fn source_tag(&self) -> SourceTag {
        self.source_tag
    }

    /// Reorders frames; `order[i]` is the source frame of output frame `i`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.frames];
        if order.len() != self.frames
            || order.iter().any(|&i| i >= self.frames || std::mem::replace(&mut seen[i], true))
        {
            return Err(Error::Argument("not a permutation of the frame indices".into()));
        }
        let data = order.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self::new(self.frames, self.dim, data, self.frame_step_ms, self.source_tag)
    }

    /// Per-column zero mean / unit variance over time. Constant columns are
    /// only centred.
    pub fn normalized(&self) -> Self {
        let t = self.frames as f64;
        let mut data = self.data.clone();
        for j in 0..self.dim {
            let col = || (0..self.frames).map(|i| self.data[i * self.dim + j] as f64);
            let mean = col().sum::<f64>() / t;
            let var = col().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t;
            let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
            for i in 0..self.frames {
                let v = &mut data[i * self.dim + j];
                *v = ((*v as f64 - mean) * scale) as f32;
            }
        }
        Self { data, ..self.clone() }
    }
}
