//! Waveform handling: WAV ingestion, resampling, STFT analysis and the
//! mel compression / Griffin-Lim decompression pair.

mod mel;
mod resample;
mod stft;
mod vocoder;
mod wav;

pub use mel::{mel_compress, mel_compress_with_norm, mel_filterbank, mel_magnitudes, MelNorm, MelSpectrogram};
pub use resample::resample;
pub use stft::{hann_window, stft, StftSpec, HOP, N_BINS, N_FFT};
pub use vocoder::{
    mel_decompress, mel_to_linear, Decompressor, DecompressorRegistry, GriffinLim,
    GriffinLimDecompressor,
};
pub use wav::{load_wav, save_wav, wav_to_bytes};

use thiserror::Error;

/// Every waveform in the pipeline is mono at this rate.
pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("empty waveform")]
    Empty,
    #[error("waveform too short: {got} samples, need at least {min}")]
    TooShort { got: usize, min: usize },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("malformed wav file: {0}")]
    MalformedWav(String),
    #[error("unsupported wav encoding: {0}")]
    UnsupportedWav(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Errors surfaced by pluggable decompressor backends.
#[derive(Debug, Error)]
pub enum DecompressError {
    #[error("no decompressor registered under '{0}'")]
    UnknownPlugin(String),
    #[error("decompressor '{name}' failed: {reason}")]
    PluginFailed { name: String, reason: String },
}

/// Mono PCM audio at 16 kHz with samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
}

impl Waveform {
    /// Wraps raw samples, clamping to [-1, 1]. Rejects non-finite samples
    /// and clips shorter than one analysis hop.
    pub fn from_samples(mut samples: Vec<f32>) -> Result<Self, AudioError> {
        if samples.is_empty() {
            return Err(AudioError::Empty);
        }
        if samples.len() < HOP {
            return Err(AudioError::TooShort {
                got: samples.len(),
                min: HOP,
            });
        }
        for (i, s) in samples.iter().enumerate() {
            if !s.is_finite() {
                return Err(AudioError::NonFinite(i));
            }
        }
        for s in &mut samples {
            *s = s.clamp(-1.0, 1.0);
        }
        Ok(Self { samples })
    }

    /// A silent clip of the given sample count (at least one hop).
    pub fn silence(len: usize) -> Self {
        Self {
            samples: vec![0.0; len.max(HOP)],
        }
    }

    /// A pure sine tone, handy for tests and demos.
    pub fn sine(freq_hz: f32, amplitude: f32, len: usize) -> Self {
        let w = 2.0 * std::f32::consts::PI * freq_hz / SAMPLE_RATE as f32;
        let samples = (0..len.max(HOP))
            .map(|n| amplitude.clamp(-1.0, 1.0) * (w * n as f32).sin())
            .collect();
        Self { samples }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    /// Crops or zero-pads to exactly `len` samples (minimum one hop).
    pub fn fit_to(&self, len: usize) -> Self {
        let len = len.max(HOP);
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        Self { samples }
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }
}
