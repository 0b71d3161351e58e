//! Lossless reshaping of acoustic features into image-shaped tensors.
//!
//! Three secret formats are supported. `mel` packs normalized
//! mel-spectrogram frames, `raw` packs the waveform samples directly and
//! `stft` packs the real and imaginary parts of a block short-time
//! spectrum. All formats emit `h x w x c` tensors in [0, 1] whose channel
//! count grows with clip duration.

use ndarray::{Array2, Array3};
use rustfft::num_complex::Complex32;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::audio::{MelNorm, MelSpectrogram, Waveform, HOP, SAMPLE_RATE};

/// Mel frames are 80 cells tall.
const MEL_ROWS: usize = 80;
/// Block-spectrum settings: rectangular non-overlapping 1600-sample frames
/// (10 Hz resolution at 16 kHz) of which the lowest 512 bins are retained,
/// real and imaginary planes stored separately.
pub const STFT_BLOCK: usize = 1600;
pub const STFT_KEPT_BINS: usize = 512;

#[derive(Debug, Error)]
pub enum PackError {
    #[error("duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("expected a {expected} secret, got {got}")]
    FormatMismatch { expected: String, got: String },
    #[error("geometry {h}x{w} too small for format {format}")]
    GeometryTooSmall { h: usize, w: usize, format: String },
    #[error("secret needs {needed} channels but {given} were requested")]
    ChannelsTooFew { needed: usize, given: usize },
    #[error("packed tensor is inconsistent: {0}")]
    Corrupt(String),
}

/// Secret encodings compared in the capacity study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecretFormat {
    Mel,
    Raw,
    Stft,
}

impl SecretFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            SecretFormat::Mel => "mel",
            SecretFormat::Raw => "raw",
            SecretFormat::Stft => "stft",
        }
    }
}

impl std::str::FromStr for SecretFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mel" => Ok(SecretFormat::Mel),
            "raw" => Ok(SecretFormat::Raw),
            "stft" => Ok(SecretFormat::Stft),
            other => Err(format!("unknown format '{other}' (mel, raw or stft)")),
        }
    }
}

impl std::fmt::Display for SecretFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Spatial size of packed tensors; matches the cover image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackGeometry {
    pub h: usize,
    pub w: usize,
}

impl Default for PackGeometry {
    fn default() -> Self {
        Self { h: 160, w: 160 }
    }
}

impl PackGeometry {
    pub fn square(size: usize) -> Self {
        Self { h: size, w: size }
    }

    pub fn cells(&self) -> usize {
        self.h * self.w
    }

    /// Mel frames (80 cells each) per channel. Frames never straddle a
    /// channel boundary.
    fn mel_frames_per_channel(&self) -> usize {
        if self.h % MEL_ROWS == 0 {
            (self.h / MEL_ROWS) * self.w
        } else {
            self.cells() / MEL_ROWS
        }
    }

    /// Block-spectrum frames per channel: each frame needs 2 x 512 cells.
    fn stft_frames_per_channel(&self) -> usize {
        self.cells() / (2 * STFT_KEPT_BINS)
    }

    fn check(&self, format: SecretFormat) -> Result<(), PackError> {
        let ok = match format {
            SecretFormat::Mel => self.mel_frames_per_channel() > 0,
            SecretFormat::Raw => self.cells() > 0,
            SecretFormat::Stft => self.stft_frames_per_channel() > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(PackError::GeometryTooSmall {
                h: self.h,
                w: self.w,
                format: format.to_string(),
            })
        }
    }
}

/// Everything needed to invert a pack exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct PackMeta {
    pub format: SecretFormat,
    /// Original sample count of the packed clip.
    pub source_len: usize,
    /// Packed frame count (mel or stft frames; 0 for raw).
    pub frames: usize,
    /// Mel normalization in effect (mel format only).
    pub norm: MelNorm,
    /// Amplitude scale for the stft format: re/im parts of magnitude up to
    /// `scale` map affinely into [0, 1].
    pub scale: f32,
}

/// An image-shaped secret tensor `[c x h x w]` in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PackedSecret {
    pub tensor: Array3<f32>,
    pub format: SecretFormat,
    /// Trailing cells that carry no data and are zero-filled.
    pub pad_cells: usize,
    pub meta: PackMeta,
}

impl PackedSecret {
    pub fn channels(&self) -> usize {
        self.tensor.dim().0
    }

    pub fn geometry(&self) -> PackGeometry {
        let (_, h, w) = self.tensor.dim();
        PackGeometry { h, w }
    }
}

/// Content frame count of a clip at the codec hop.
fn mel_content_frames(samples: usize) -> usize {
    samples.div_ceil(HOP)
}

fn stft_frame_count(samples: usize) -> usize {
    samples.div_ceil(STFT_BLOCK)
}

fn duration_samples(duration_s: f64) -> Result<usize, PackError> {
    if !(duration_s > 0.0) {
        return Err(PackError::NonPositiveDuration(duration_s));
    }
    Ok((duration_s * SAMPLE_RATE as f64).ceil() as usize)
}

/// Channel count needed to pack a clip of the given duration.
pub fn channels_for(duration_s: f64, format: SecretFormat) -> Result<usize, PackError> {
    channels_for_geometry(duration_s, format, PackGeometry::default())
}

pub fn channels_for_geometry(
    duration_s: f64,
    format: SecretFormat,
    geom: PackGeometry,
) -> Result<usize, PackError> {
    geom.check(format)?;
    let samples = duration_samples(duration_s)?;
    Ok(channels_for_samples(samples, format, geom))
}

pub(crate) fn channels_for_samples(
    samples: usize,
    format: SecretFormat,
    geom: PackGeometry,
) -> usize {
    match format {
        SecretFormat::Mel => mel_content_frames(samples).div_ceil(geom.mel_frames_per_channel()),
        SecretFormat::Raw => samples.div_ceil(geom.cells()),
        SecretFormat::Stft => stft_frame_count(samples).div_ceil(geom.stft_frames_per_channel()),
    }
    .max(1)
}

/// Channel count, padding and size summary for one duration/format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CapacityInfo {
    pub channels: usize,
    /// Cells of the packed tensor that carry data.
    pub data_cells: usize,
    /// Zero-filled trailing cells.
    pub pad_cells: usize,
}

pub fn capacity_info(
    duration_s: f64,
    format: SecretFormat,
    geom: PackGeometry,
) -> Result<CapacityInfo, PackError> {
    geom.check(format)?;
    let samples = duration_samples(duration_s)?;
    let channels = channels_for_samples(samples, format, geom);
    let data_cells = match format {
        SecretFormat::Mel => mel_content_frames(samples) * MEL_ROWS,
        SecretFormat::Raw => samples,
        SecretFormat::Stft => stft_frame_count(samples) * 2 * STFT_KEPT_BINS,
    };
    Ok(CapacityInfo {
        channels,
        data_cells,
        pad_cells: channels * geom.cells() - data_cells,
    })
}

/// Rebuilds the unpack metadata for a clip of `source_len` samples, e.g.
/// when a revealed tensor arrives with only its duration known.
pub fn meta_for_duration(
    format: SecretFormat,
    source_len: usize,
    norm: MelNorm,
    scale: f32,
) -> PackMeta {
    let frames = match format {
        SecretFormat::Mel => mel_content_frames(source_len),
        SecretFormat::Stft => stft_frame_count(source_len),
        SecretFormat::Raw => 0,
    };
    PackMeta {
        format,
        source_len,
        frames,
        norm,
        scale,
    }
}

/// Wraps a revealed tensor (values already in [0, 1]) back into a
/// `PackedSecret` so the normal unpack path applies.
pub fn packed_from_tensor(tensor: Array3<f32>, meta: PackMeta) -> Result<PackedSecret, PackError> {
    let (c, h, w) = tensor.dim();
    let geom = PackGeometry { h, w };
    geom.check(meta.format)?;
    let data_cells = match meta.format {
        SecretFormat::Mel => meta.frames * MEL_ROWS,
        SecretFormat::Raw => meta.source_len,
        SecretFormat::Stft => meta.frames * 2 * STFT_KEPT_BINS,
    };
    let capacity = c * geom.cells();
    if data_cells > capacity {
        return Err(PackError::Corrupt(format!(
            "{data_cells} data cells exceed tensor capacity {capacity}"
        )));
    }
    Ok(PackedSecret {
        format: meta.format,
        pad_cells: capacity - data_cells,
        tensor,
        meta,
    })
}

/// Cell coordinates of a mel value: frame `f`, band `b`.
///
/// When the image height is a multiple of 80 the layout is stripe-based:
/// a channel is split into `h/80` stripes of 80 rows, frames fill a stripe
/// left to right (band = row within stripe, frame = column) before moving
/// to the next stripe. Other geometries place frames consecutively in
/// column-major cell order.
fn mel_cell(f: usize, b: usize, geom: PackGeometry) -> (usize, usize, usize) {
    let fpc = geom.mel_frames_per_channel();
    let k = f / fpc;
    let m = f % fpc;
    if geom.h % MEL_ROWS == 0 {
        let stripe = m / geom.w;
        let col = m % geom.w;
        (k, stripe * MEL_ROWS + b, col)
    } else {
        let linear = m * MEL_ROWS + b;
        (k, linear % geom.h, linear / geom.h)
    }
}

/// Packs a mel-spectrogram with the minimal channel count.
pub fn pack_mel(mel: &MelSpectrogram, geom: PackGeometry) -> Result<PackedSecret, PackError> {
    let c = channels_needed_mel(mel, geom)?;
    pack_mel_with_channels(mel, geom, c)
}

fn channels_needed_mel(mel: &MelSpectrogram, geom: PackGeometry) -> Result<usize, PackError> {
    geom.check(SecretFormat::Mel)?;
    Ok(mel.frames().div_ceil(geom.mel_frames_per_channel()).max(1))
}

/// Packs into exactly `channels` planes (zero-filling the remainder), so a
/// batch of mixed-length clips shares one tensor shape.
pub fn pack_mel_with_channels(
    mel: &MelSpectrogram,
    geom: PackGeometry,
    channels: usize,
) -> Result<PackedSecret, PackError> {
    let needed = channels_needed_mel(mel, geom)?;
    if channels < needed {
        return Err(PackError::ChannelsTooFew {
            needed,
            given: channels,
        });
    }
    let t = mel.frames();
    let mut tensor = Array3::zeros((channels, geom.h, geom.w));
    for f in 0..t {
        for b in 0..MEL_ROWS {
            let (k, row, col) = mel_cell(f, b, geom);
            tensor[(k, row, col)] = mel.values()[(b, f)];
        }
    }
    Ok(PackedSecret {
        tensor,
        format: SecretFormat::Mel,
        pad_cells: channels * geom.cells() - t * MEL_ROWS,
        meta: PackMeta {
            format: SecretFormat::Mel,
            source_len: mel.source_len(),
            frames: t,
            norm: mel.norm(),
            scale: 1.0,
        },
    })
}

/// Exact inverse of [`pack_mel`].
pub fn unpack_mel(packed: &PackedSecret) -> Result<MelSpectrogram, PackError> {
    if packed.format != SecretFormat::Mel {
        return Err(PackError::FormatMismatch {
            expected: "mel".into(),
            got: packed.format.to_string(),
        });
    }
    let geom = packed.geometry();
    let t = packed.meta.frames;
    let capacity = packed.channels() * geom.mel_frames_per_channel();
    if t > capacity {
        return Err(PackError::Corrupt(format!(
            "{t} frames recorded but tensor holds at most {capacity}"
        )));
    }
    let mut values = Array2::zeros((MEL_ROWS, t));
    for f in 0..t {
        for b in 0..MEL_ROWS {
            let (k, row, col) = mel_cell(f, b, geom);
            values[(b, f)] = packed.tensor[(k, row, col)];
        }
    }
    Ok(MelSpectrogram::new(
        values,
        packed.meta.norm,
        packed.meta.source_len,
    ))
}

/// Packs raw samples, affinely mapped from [-1, 1] to [0, 1], row-major.
pub fn pack_raw(wave: &Waveform, geom: PackGeometry) -> Result<PackedSecret, PackError> {
    geom.check(SecretFormat::Raw)?;
    let c = wave.len().div_ceil(geom.cells()).max(1);
    pack_raw_with_channels(wave, geom, c)
}

pub fn pack_raw_with_channels(
    wave: &Waveform,
    geom: PackGeometry,
    channels: usize,
) -> Result<PackedSecret, PackError> {
    geom.check(SecretFormat::Raw)?;
    let needed = wave.len().div_ceil(geom.cells()).max(1);
    if channels < needed {
        return Err(PackError::ChannelsTooFew {
            needed,
            given: channels,
        });
    }
    let cells = geom.cells();
    let mut tensor = Array3::zeros((channels, geom.h, geom.w));
    for (s, &x) in wave.samples().iter().enumerate() {
        let k = s / cells;
        let r = s % cells;
        tensor[(k, r / geom.w, r % geom.w)] = (x + 1.0) * 0.5;
    }
    Ok(PackedSecret {
        tensor,
        format: SecretFormat::Raw,
        pad_cells: channels * cells - wave.len(),
        meta: PackMeta {
            format: SecretFormat::Raw,
            source_len: wave.len(),
            frames: 0,
            norm: MelNorm::default(),
            scale: 1.0,
        },
    })
}

/// Exact inverse of [`pack_raw`].
pub fn unpack_raw(packed: &PackedSecret) -> Result<Waveform, PackError> {
    if packed.format != SecretFormat::Raw {
        return Err(PackError::FormatMismatch {
            expected: "raw".into(),
            got: packed.format.to_string(),
        });
    }
    let geom = packed.geometry();
    let cells = geom.cells();
    let n = packed.meta.source_len;
    if n > packed.channels() * cells {
        return Err(PackError::Corrupt(format!(
            "{n} samples recorded but tensor holds at most {}",
            packed.channels() * cells
        )));
    }
    let mut samples = Vec::with_capacity(n);
    for s in 0..n {
        let k = s / cells;
        let r = s % cells;
        samples.push(2.0 * packed.tensor[(k, r / geom.w, r % geom.w)] - 1.0);
    }
    Waveform::from_samples(samples).map_err(|e| PackError::Corrupt(e.to_string()))
}

/// Non-overlapping rectangular-window spectrum of 1600-sample blocks,
/// truncated to the lowest 512 of 801 one-sided bins. Exact for tones on
/// the 10 Hz grid below 5.12 kHz; band-limited (lossy) otherwise.
pub fn block_stft(wave: &Waveform) -> Array2<Complex32> {
    let frames = stft_frame_count(wave.len());
    let fft = FftPlanner::<f32>::new().plan_fft_forward(STFT_BLOCK);
    let mut out = Array2::zeros((STFT_KEPT_BINS, frames));
    let mut buf = vec![Complex32::new(0.0, 0.0); STFT_BLOCK];
    for t in 0..frames {
        for (k, slot) in buf.iter_mut().enumerate() {
            let idx = t * STFT_BLOCK + k;
            let x = wave.samples().get(idx).copied().unwrap_or(0.0);
            *slot = Complex32::new(x, 0.0);
        }
        fft.process(&mut buf);
        for b in 0..STFT_KEPT_BINS {
            out[(b, t)] = buf[b];
        }
    }
    out
}

/// Inverts [`block_stft`]: unseen bins are zeroed, each block is an
/// independent inverse FFT.
pub fn block_istft(spec: &Array2<Complex32>, source_len: usize) -> Waveform {
    let frames = spec.ncols();
    let fft = FftPlanner::<f32>::new().plan_fft_inverse(STFT_BLOCK);
    let mut samples = vec![0.0f32; frames.max(1) * STFT_BLOCK];
    let mut buf = vec![Complex32::new(0.0, 0.0); STFT_BLOCK];
    for t in 0..frames {
        for slot in buf.iter_mut() {
            *slot = Complex32::new(0.0, 0.0);
        }
        for b in 0..STFT_KEPT_BINS {
            buf[b] = spec[(b, t)];
        }
        // Hermitian completion of the retained band.
        for b in 1..STFT_KEPT_BINS {
            buf[STFT_BLOCK - b] = spec[(b, t)].conj();
        }
        fft.process(&mut buf);
        for k in 0..STFT_BLOCK {
            samples[t * STFT_BLOCK + k] = buf[k].re / STFT_BLOCK as f32;
        }
    }
    samples.truncate(source_len.max(HOP));
    samples.resize(source_len.max(HOP), 0.0);
    Waveform::from_samples(samples).expect("block istft output is finite")
}

/// Packs the block spectrum of a waveform. Within each channel all real
/// planes precede all imaginary planes; cells fill in column-major order.
/// `scale` normalizes parts into [0, 1]; pass `None` to derive it from the
/// clip (training derives one scale per corpus and records it in the
/// checkpoint).
pub fn pack_stft(
    wave: &Waveform,
    geom: PackGeometry,
    scale: Option<f32>,
) -> Result<PackedSecret, PackError> {
    geom.check(SecretFormat::Stft)?;
    let frames = stft_frame_count(wave.len());
    let c = frames.div_ceil(geom.stft_frames_per_channel()).max(1);
    pack_stft_with_channels(wave, geom, c, scale)
}

pub fn pack_stft_with_channels(
    wave: &Waveform,
    geom: PackGeometry,
    channels: usize,
    scale: Option<f32>,
) -> Result<PackedSecret, PackError> {
    geom.check(SecretFormat::Stft)?;
    let spec = block_stft(wave);
    let frames = spec.ncols();
    let fpc = geom.stft_frames_per_channel();
    let needed = frames.div_ceil(fpc).max(1);
    if channels < needed {
        return Err(PackError::ChannelsTooFew {
            needed,
            given: channels,
        });
    }
    let scale = scale.unwrap_or_else(|| {
        spec.iter()
            .map(|c| c.re.abs().max(c.im.abs()))
            .fold(0.0f32, f32::max)
            .max(1e-6)
    });

    let mut tensor = Array3::zeros((channels, geom.h, geom.w));
    let mut place = |k: usize, linear: usize, value: f32| {
        let row = linear % geom.h;
        let col = linear / geom.h;
        tensor[(k, row, col)] = value;
    };
    for f in 0..frames {
        let k = f / fpc;
        let m = f % fpc;
        for b in 0..STFT_KEPT_BINS {
            let cell = spec[(b, f)];
            let re = 0.5 + cell.re / (2.0 * scale);
            let im = 0.5 + cell.im / (2.0 * scale);
            place(k, m * STFT_KEPT_BINS + b, re.clamp(0.0, 1.0));
            place(k, (fpc + m) * STFT_KEPT_BINS + b, im.clamp(0.0, 1.0));
        }
    }
    Ok(PackedSecret {
        tensor,
        format: SecretFormat::Stft,
        pad_cells: channels * geom.cells() - frames * 2 * STFT_KEPT_BINS,
        meta: PackMeta {
            format: SecretFormat::Stft,
            source_len: wave.len(),
            frames,
            norm: MelNorm::default(),
            scale,
        },
    })
}

/// Recovers the block spectrum from a packed tensor.
pub fn unpack_stft(packed: &PackedSecret) -> Result<Array2<Complex32>, PackError> {
    if packed.format != SecretFormat::Stft {
        return Err(PackError::FormatMismatch {
            expected: "stft".into(),
            got: packed.format.to_string(),
        });
    }
    let geom = packed.geometry();
    let fpc = geom.stft_frames_per_channel();
    let frames = packed.meta.frames;
    if fpc == 0 || frames > packed.channels() * fpc {
        return Err(PackError::Corrupt(format!(
            "{frames} frames recorded but tensor holds at most {}",
            packed.channels() * fpc
        )));
    }
    let scale = packed.meta.scale;
    let fetch = |k: usize, linear: usize| -> f32 {
        let row = linear % geom.h;
        let col = linear / geom.h;
        (packed.tensor[(k, row, col)] - 0.5) * 2.0 * scale
    };
    let mut spec = Array2::zeros((STFT_KEPT_BINS, frames));
    for f in 0..frames {
        let k = f / fpc;
        let m = f % fpc;
        for b in 0..STFT_KEPT_BINS {
            let re = fetch(k, m * STFT_KEPT_BINS + b);
            let im = fetch(k, (fpc + m) * STFT_KEPT_BINS + b);
            spec[(b, f)] = Complex32::new(re, im);
        }
    }
    Ok(spec)
}

/// Convenience: unpack and invert the block spectrum in one go.
pub fn unpack_stft_to_wave(packed: &PackedSecret) -> Result<Waveform, PackError> {
    let spec = unpack_stft(packed)?;
    Ok(block_istft(&spec, packed.meta.source_len))
}
