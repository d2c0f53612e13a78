use std::path::Path;

use super::AudioClip;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 0x0001;
const FORMAT_IEEE_FLOAT: u16 = 0x0003;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, Copy)]
enum Encoding {
    Pcm16,
    Float32,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("unexpected end of data at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Decodes a RIFF/WAVE byte buffer (PCM16 or float32, any channel count)
/// into a mono clip. Channels are averaged; PCM16 is scaled by 1/32768.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).ok() != Some(b"RIFF".as_slice()) {
        return Err(Error::Format("missing RIFF tag".into()));
    }
    r.u32()?;
    if r.take(4)? != b"WAVE" {
        return Err(Error::Format("missing WAVE tag".into()));
    }

    let mut fmt: Option<(Encoding, usize, u32)> = None;
    let mut data: Option<&[u8]> = None;
    while r.remaining() >= 8 {
        let id: [u8; 4] = r.take(4)?.try_into().unwrap();
        let size = r.u32()? as usize;
        if &id == b"data" {
            // Some writers leave the size field at its maximum when streaming;
            // clamp to what is actually there.
            let size = size.min(r.remaining());
            data = Some(r.take(size)?);
        } else {
            let body = r.take(size).map_err(|_| {
                Error::Format(format!("chunk `{}` overruns file", String::from_utf8_lossy(&id)))
            })?;
            if &id == b"fmt " {
                fmt = Some(parse_fmt(body)?);
            }
        }
        if size % 2 == 1 && r.remaining() > 0 {
            r.take(1)?;
        }
    }

    let (encoding, channels, sample_rate) =
        fmt.ok_or_else(|| Error::Format("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Format("no data chunk".into()))?;

    let width = match encoding {
        Encoding::Pcm16 => 2,
        Encoding::Float32 => 4,
    };
    let frame = width * channels;
    if data.len() % frame != 0 {
        return Err(Error::Format(format!(
            "data chunk length {} is not a multiple of the frame size {frame}",
            data.len()
        )));
    }

    let mut samples = Vec::with_capacity(data.len() / frame);
    for chunk in data.chunks_exact(frame) {
        let mut acc = 0.0f64;
        for ch in chunk.chunks_exact(width) {
            let v = match encoding {
                Encoding::Pcm16 => i16::from_le_bytes([ch[0], ch[1]]) as f64 / 32768.0,
                Encoding::Float32 => {
                    let v = f32::from_le_bytes(ch.try_into().unwrap());
                    if !v.is_finite() {
                        return Err(Error::Data("non-finite float sample".into()));
                    }
                    v.clamp(-1.0, 1.0) as f64
                }
            };
            acc += v;
        }
        samples.push((acc / channels as f64) as f32);
    }
    if samples.is_empty() {
        return Err(Error::Format("data chunk holds no samples".into()));
    }
    AudioClip::new(samples, sample_rate)
}

fn parse_fmt(body: &[u8]) -> Result<(Encoding, usize, u32)> {
    let mut r = Reader { buf: body, pos: 0 };
    let mut format = r.u16()?;
    let channels = r.u16()? as usize;
    let sample_rate = r.u32()?;
    let _byte_rate = r.u32()?;
    let _block_align = r.u16()?;
    let bits = r.u16()?;
    if format == FORMAT_EXTENSIBLE {
        let _cb_size = r.u16()?;
        let _valid_bits = r.u16()?;
        let _mask = r.u32()?;
        format = r.u16()?;
    }
    if channels == 0 {
        return Err(Error::Format("zero channels".into()));
    }
    if sample_rate == 0 {
        return Err(Error::Format("zero sample rate".into()));
    }
    let encoding = match (format, bits) {
        (FORMAT_PCM, 16) => Encoding::Pcm16,
        (FORMAT_IEEE_FLOAT, 32) => Encoding::Float32,
        _ => {
            return Err(Error::UnsupportedEncoding(format!(
                "format tag {format:#06x} with {bits} bits per sample"
            )))
        }
    };
    Ok((encoding, channels, sample_rate))
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

fn encode(format: u16, bits: u16, channels: u16, sample_rate: u32, payload: &[u8]) -> Vec<u8> {
    let block_align = channels * bits / 8;
    let mut out = Vec::with_capacity(44 + payload.len());
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + payload.len() as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    if payload.len() % 2 == 1 {
        out.push(0);
    }
    out
}

/// Encodes interleaved float32 samples.
pub fn encode_wav_f32(interleaved: &[f32], channels: u16, sample_rate: u32) -> Vec<u8> {
    let payload: Vec<u8> = interleaved.iter().flat_map(|s| s.to_le_bytes()).collect();
    encode(FORMAT_IEEE_FLOAT, 32, channels, sample_rate, &payload)
}

/// Encodes interleaved PCM16 samples.
pub fn encode_wav_pcm16(interleaved: &[i16], channels: u16, sample_rate: u32) -> Vec<u8> {
    let payload: Vec<u8> = interleaved.iter().flat_map(|s| s.to_le_bytes()).collect();
    encode(FORMAT_PCM, 16, channels, sample_rate, &payload)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pcm16_silence() {
        let bytes = encode_wav_pcm16(&vec![0; 16000], 1, 16000);
        let clip = decode_wav(&bytes).unwrap();
        assert_eq!(clip.len(), 16000);
        assert_eq!(clip.sample_rate(), 16000);
        assert!(clip.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn pcm16_scale_endpoints() {
        let clip = decode_wav(&encode_wav_pcm16(&[-32768, 32767], 1, 8000)).unwrap();
        assert_eq!(clip.samples()[0], -1.0);
        assert_eq!(clip.samples()[1], (32767.0f64 / 32768.0) as f32);
    }

    #[test]
    fn stereo_is_averaged() {
        let interleaved: Vec<f32> = (0..200).map(|i| if i % 2 == 0 { 0.5 } else { -0.5 }).collect();
        let clip = decode_wav(&encode_wav_f32(&interleaved, 2, 48000)).unwrap();
        assert_eq!(clip.len(), 100);
        assert!(clip.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn malformed_header() {
        assert!(matches!(decode_wav(b"RIFX0000WAVE"), Err(Error::Format(_))));
        assert!(matches!(decode_wav(b""), Err(Error::Format(_))));
        let mut bytes = encode_wav_pcm16(&[1, 2, 3], 1, 16000);
        bytes.truncate(30);
        assert!(matches!(decode_wav(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn unsupported_codec() {
        let mut bytes = encode_wav_pcm16(&[1, 2, 3, 4], 1, 16000);
        // A-law tag
        bytes[20] = 6;
        assert!(matches!(decode_wav(&bytes), Err(Error::UnsupportedEncoding(_))));
        let mut bytes = encode_wav_pcm16(&[1, 2, 3, 4], 1, 16000);
        // 24-bit PCM claims
        bytes[34] = 24;
        assert!(matches!(decode_wav(&bytes), Err(Error::UnsupportedEncoding(_))));
    }

    #[test]
    fn extensible_float() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF\0\0\0\0WAVEfmt ");
        bytes.extend_from_slice(&40u32.to_le_bytes());
        bytes.extend_from_slice(&FORMAT_EXTENSIBLE.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&16000u32.to_le_bytes());
        bytes.extend_from_slice(&64000u32.to_le_bytes());
        bytes.extend_from_slice(&4u16.to_le_bytes());
        bytes.extend_from_slice(&32u16.to_le_bytes());
        bytes.extend_from_slice(&22u16.to_le_bytes());
        bytes.extend_from_slice(&32u16.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&FORMAT_IEEE_FLOAT.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 14]);
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&8u32.to_le_bytes());
        bytes.extend_from_slice(&0.25f32.to_le_bytes());
        bytes.extend_from_slice(&(-0.75f32).to_le_bytes());
        let clip = decode_wav(&bytes).unwrap();
        assert_eq!(clip.samples(), &[0.25, -0.75]);
    }

    proptest! {
        #[test]
        fn float32_roundtrip_is_bit_exact(samples in prop::collection::vec(-1.0f32..=1.0, 1..500)) {
            let once = decode_wav(&encode_wav_f32(&samples, 1, 16000)).unwrap();
            let twice = decode_wav(&encode_wav_f32(once.samples(), 1, 16000)).unwrap();
            prop_assert_eq!(once.samples(), &samples[..]);
            prop_assert_eq!(once, twice);
        }
    }
}
