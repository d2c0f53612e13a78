//! `SQE1` embedding files.
//!
//! Little-endian layout:
//!
//! | bytes | field                                          |
//! |-------|------------------------------------------------|
//! | 4     | magic `SQE1`                                   |
//! | 4     | format version (u32, = 1)                      |
//! | 4     | frames T (u32)                                 |
//! | 4     | dim D (u32)                                    |
//! | 4     | frame step in ms (f32)                         |
//! | 1     | source tag (0 melspec, 1 byols_cvt, 2 xlsr, 3 other) |
//! | 3     | reserved, zero                                 |
//! | 4·T·D | f32 payload, row-major                         |

use std::path::Path;

use super::{EmbeddingSequence, SourceTag};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SQE1";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

pub fn encode_embedding(seq: &EmbeddingSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * seq.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(seq.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(seq.dim() as u32).to_le_bytes());
    out.extend_from_slice(&seq.frame_step_ms().to_le_bytes());
    out.push(seq.source_tag().code());
    out.extend_from_slice(&[0; 3]);
    for v in seq.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_embedding(bytes: &[u8]) -> Result<EmbeddingSequence> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        return Err(Error::Truncation {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let frames = u32_at(8) as usize;
    let dim = u32_at(12) as usize;
    let step = f32::from_le_bytes(bytes[16..20].try_into().unwrap());
    let tag = SourceTag::from_code(bytes[20])
        .ok_or_else(|| Error::Format(format!("unknown source tag {}", bytes[20])))?;
    if bytes[21..24] != [0, 0, 0] {
        return Err(Error::Format("reserved header bytes are not zero".into()));
    }
    let expected = frames
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format(format!("header dimensions {frames}x{dim} overflow")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Truncation {
            expected,
            found: payload.len(),
        });
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("payload contains NaN or Inf".into()));
    }
    EmbeddingSequence::new(frames, dim, data, step, tag)
}

pub fn read_embedding_file(path: impl AsRef<Path>) -> Result<EmbeddingSequence> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embedding(&bytes)
}

pub fn write_embedding_file(seq: &EmbeddingSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_embedding(seq)).map_err(|e| Error::io(path, e))
}
