use super::{EmbeddingSequence, SourceTag};

/// Temporal max followed by temporal mean of a framewise sequence
/// (`2 * dim` values).
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceEmbedding {
    vector: Vec<f64>,
    source_tag: SourceTag,
}

impl UtteranceEmbedding {
    pub fn from_vector(vector: Vec<f64>, source_tag: SourceTag) -> Self {
        Self { vector, source_tag }
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn len(&self) -> usize {
        self.vector.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vector.is_empty()
    }

    /// Framewise dimension the vector was pooled from.
    pub fn frame_dim(&self) -> usize {
        self.vector.len() / 2
    }

    pub fn source_tag(&self) -> SourceTag {
        self.source_tag
    }
}

/// `max over frames ⊕ mean over frames`, column by column.
pub fn pool_mean_max(seq: &EmbeddingSequence) -> UtteranceEmbedding {
    let (t, d) = (seq.frames(), seq.dim());
    let mut vector = vec![0.0f64; 2 * d];
    let mut column = Vec::with_capacity(t);
    for j in 0..d {
        column.clear();
        column.extend((0..t).map(|i| seq.data()[i * d + j] as f64));
        // Sorting fixes the summation order, so the mean does not depend on
        // frame order at all.
        column.sort_by(f64::total_cmp);
        vector[j] = column[t - 1];
        vector[d + j] = column.iter().sum::<f64>() / t as f64;
    }
    UtteranceEmbedding {
        vector,
        source_tag: seq.source_tag(),
    }
}
