//! Mel compression: magnitude spectra projected through an 80-band
//! triangular filterbank, log-scaled and normalized to [0, 1].

use ndarray::Array2;

use super::stft::{hann_window, stft, HOP, N_BINS, N_FFT};
use super::{AudioError, Waveform, SAMPLE_RATE};

pub const N_MELS: usize = 80;
pub const FLOOR_DB: f32 = -80.0;
const FMIN: f32 = 0.0;
const FMAX: f32 = 8000.0;
/// Keeps normalized values of at-floor magnitudes distinct from the zero
/// code (which is reserved for silence) so they round-trip.
const FLOOR_GUARD_DB: f64 = 1e-9;

/// Normalization metadata shared between compression and decompression.
/// `ref_mag` is the magnitude mapped to 0 dB; training records the corpus
/// maximum here so reveal is self-contained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelNorm {
    pub floor_db: f32,
    pub ref_mag: f32,
}

impl Default for MelNorm {
    fn default() -> Self {
        Self {
            floor_db: FLOOR_DB,
            ref_mag: 1.0,
        }
    }
}

impl MelNorm {
    /// Maps a linear mel magnitude into [0, 1]. Exact zeros stay zero.
    pub fn normalize(&self, mag: f32) -> f32 {
        if mag <= 0.0 {
            return 0.0;
        }
        let floor = self.floor_db as f64;
        let db = 20.0 * (mag as f64 / self.ref_mag as f64).log10();
        let db = db.max(floor + FLOOR_GUARD_DB);
        (((db - floor) / -floor).clamp(0.0, 1.0)) as f32
    }

    /// Inverse of [`MelNorm::normalize`]; zero maps back to silence.
    pub fn denormalize(&self, v: f32) -> f32 {
        if v <= 0.0 {
            return 0.0;
        }
        let floor = self.floor_db as f64;
        let db = (v as f64).min(1.0) * -floor + floor;
        (self.ref_mag as f64 * 10f64.powf(db / 20.0)) as f32
    }
}

/// 80-bin log-mel features in [0, 1] plus everything needed to invert the
/// normalization and restore the original clip length.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    values: Array2<f32>,
    norm: MelNorm,
    source_len: usize,
}

impl MelSpectrogram {
    pub fn new(values: Array2<f32>, norm: MelNorm, source_len: usize) -> Self {
        assert_eq!(values.nrows(), N_MELS, "mel matrix must have 80 rows");
        Self {
            values,
            norm,
            source_len,
        }
    }

    pub fn values(&self) -> &Array2<f32> {
        &self.values
    }

    pub fn norm(&self) -> MelNorm {
        self.norm
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    /// Frame count carrying signal content: `ceil(source_len / hop)`.
    /// The centered analysis adds one padded frame when the length is an
    /// exact hop multiple; that frame is dropped before packing.
    pub fn content_frames(&self) -> usize {
        self.source_len.div_ceil(HOP)
    }

    /// Copy restricted to the content frames.
    pub fn trim_to_content(&self) -> MelSpectrogram {
        let t = self.content_frames().min(self.frames());
        MelSpectrogram {
            values: self.values.slice(ndarray::s![.., ..t]).to_owned(),
            norm: self.norm,
            source_len: self.source_len,
        }
    }
}

/// Triangular mel filterbank, `[N_MELS x N_BINS]`, spanning 0-8000 Hz with
/// unit-area (Slaney) normalization.
pub fn mel_filterbank() -> Array2<f32> {
    fn hz_to_mel(hz: f32) -> f32 {
        2595.0 * (1.0 + hz / 700.0).log10()
    }
    fn mel_to_hz(mel: f32) -> f32 {
        700.0 * (10f32.powf(mel / 2595.0) - 1.0)
    }

    let mel_lo = hz_to_mel(FMIN);
    let mel_hi = hz_to_mel(FMAX);
    let edges: Vec<f32> = (0..N_MELS + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f32 / (N_MELS + 1) as f32))
        .collect();
    let bin_hz: Vec<f32> = (0..N_BINS)
        .map(|k| k as f32 * SAMPLE_RATE as f32 / N_FFT as f32)
        .collect();

    let mut fb = Array2::zeros((N_MELS, N_BINS));
    for m in 0..N_MELS {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let area_norm = 2.0 / (hi - lo);
        for k in 0..N_BINS {
            let f = bin_hz[k];
            let rising = if mid > lo { (f - lo) / (mid - lo) } else { 0.0 };
            let falling = if hi > mid { (hi - f) / (hi - mid) } else { 0.0 };
            let w = rising.min(falling).max(0.0);
            fb[(m, k)] = w * area_norm;
        }
    }
    fb
}

/// Amplitude correction so a full-scale sine yields a spectral peak near
/// one regardless of the window.
pub(crate) fn magnitude_scale() -> f32 {
    2.0 / hann_window(N_FFT).iter().sum::<f32>()
}

/// Compresses a waveform to a normalized mel-spectrogram using the default
/// normalization (0 dB reference at magnitude 1).
pub fn mel_compress(wave: &Waveform) -> Result<MelSpectrogram, AudioError> {
    mel_compress_with_norm(wave, MelNorm::default())
}

/// Compression against an explicit normalization, e.g. a corpus-wide
/// reference recorded in a checkpoint.
pub fn mel_compress_with_norm(
    wave: &Waveform,
    norm: MelNorm,
) -> Result<MelSpectrogram, AudioError> {
    let spec = stft(wave)?;
    let mags = spec.magnitudes() * magnitude_scale();
    let fb = mel_filterbank();
    let mel = fb.dot(&mags);
    let values = mel.mapv(|m| norm.normalize(m));
    Ok(MelSpectrogram::new(values, norm, wave.len()))
}

/// Raw (pre-normalization) mel magnitudes; used when scanning a corpus for
/// its reference level.
pub fn mel_magnitudes(wave: &Waveform) -> Result<Array2<f32>, AudioError> {
    let spec = stft(wave)?;
    let mags = spec.magnitudes() * magnitude_scale();
    Ok(mel_filterbank().dot(&mags))
}
