//! Minimal WAV reader/writer. Ingestion accepts PCM16 or float32 at any
//! rate, mono or stereo, and standardizes to 16 kHz mono. Output is
//! always PCM16 mono at 16 kHz.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::resample::resample;
use super::{AudioError, Waveform, SAMPLE_RATE};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Loads a WAV file and standardizes it: channels are averaged to mono and
/// the result is resampled to 16 kHz.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform, AudioError> {
    let mut bytes = Vec::new();
    File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    decode_wav(&bytes)
}

pub(crate) fn decode_wav(bytes: &[u8]) -> Result<Waveform, AudioError> {
    let malformed = |msg: &str| AudioError::MalformedWav(msg.to_string());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(malformed("missing RIFF/WAVE header"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (code, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = pos + 8 + size;
        if body_end > bytes.len() {
            return Err(malformed("chunk extends past end of file"));
        }
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(malformed("fmt chunk too small"));
                }
                let mut code = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                if code == FORMAT_EXTENSIBLE {
                    if size < 40 {
                        return Err(malformed("extensible fmt chunk too small"));
                    }
                    code = u16::from_le_bytes(body[24..26].try_into().unwrap());
                }
                fmt = Some((code, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word-aligned.
        pos = body_end + (size & 1);
    }

    let (code, channels, rate, bits) = fmt.ok_or_else(|| malformed("missing fmt chunk"))?;
    let data = data.ok_or_else(|| malformed("missing data chunk"))?;
    if channels == 0 || !(1..=2).contains(&channels) {
        return Err(AudioError::UnsupportedWav(format!(
            "{channels} channels (mono or stereo only)"
        )));
    }
    if rate == 0 {
        return Err(malformed("zero sample rate"));
    }

    let ch = channels as usize;
    let interleaved: Vec<f32> = match (code, bits) {
        (FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0)
            .collect(),
        (FORMAT_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect(),
        _ => {
            return Err(AudioError::UnsupportedWav(format!(
                "format code {code} at {bits} bits (PCM16 or float32 only)"
            )))
        }
    };

    let mono: Vec<f32> = if ch == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(2)
            .map(|f| 0.5 * (f[0] + f[1]))
            .collect()
    };
    for (i, s) in mono.iter().enumerate() {
        if !s.is_finite() {
            return Err(AudioError::NonFinite(i));
        }
    }

    let standardized = if rate == SAMPLE_RATE {
        mono
    } else {
        resample(&mono, rate, SAMPLE_RATE)
    };
    Waveform::from_samples(standardized)
}

/// Writes a waveform as PCM16 mono at 16 kHz.
pub fn save_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<(), AudioError> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    out.write_all(&encode_wav(wave))?;
    out.flush()?;
    Ok(())
}

/// Encodes a waveform as PCM16 mono WAV bytes.
pub fn wav_to_bytes(wave: &Waveform) -> Vec<u8> {
    encode_wav(wave)
}

pub(crate) fn encode_wav(wave: &Waveform) -> Vec<u8> {
    let n = wave.len();
    let data_len = (n * 2) as u32;
    let mut bytes = Vec::with_capacity(44 + n * 2);
    bytes.extend_from_slice(b"RIFF");
    bytes.extend_from_slice(&(36 + data_len).to_le_bytes());
    bytes.extend_from_slice(b"WAVE");
    bytes.extend_from_slice(b"fmt ");
    bytes.extend_from_slice(&16u32.to_le_bytes());
    bytes.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    bytes.extend_from_slice(&1u16.to_le_bytes());
    bytes.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
    bytes.extend_from_slice(&(SAMPLE_RATE * 2).to_le_bytes());
    bytes.extend_from_slice(&2u16.to_le_bytes());
    bytes.extend_from_slice(&16u16.to_le_bytes());
    bytes.extend_from_slice(b"data");
    bytes.extend_from_slice(&data_len.to_le_bytes());
    for &s in wave.samples() {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        bytes.extend_from_slice(&q.to_le_bytes());
    }
    bytes
}
