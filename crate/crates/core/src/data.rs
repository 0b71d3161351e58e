//! Corpus handling: indexing image/audio directories, standardizing
//! inputs and producing deterministic training pairs.

use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::audio::{
    load_wav, mel_compress_with_norm, mel_magnitudes, MelNorm, Waveform, SAMPLE_RATE,
};
use crate::pack::{
    block_stft, channels_for_samples, pack_mel_with_channels, pack_raw_with_channels,
    pack_stft_with_channels, PackError, PackGeometry, PackedSecret, SecretFormat,
};
use crate::train::DurationRange;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("directory {0} does not exist or is not readable")]
    BadDirectory(PathBuf),
    #[error("no usable {kind} files under {dir}")]
    NoUsableFiles { dir: PathBuf, kind: &'static str },
    #[error("cannot split {count} {kind} files into nonempty train/test sets")]
    SplitTooSmall { count: usize, kind: &'static str },
    #[error("not enough audio to splice {need_s:.1} s (have {have_s:.1} s)")]
    InsufficientAudio { need_s: f64, have_s: f64 },
    #[error("failed to read {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },
    #[error(transparent)]
    Pack(#[from] PackError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct AudioEntry {
    pub path: PathBuf,
    pub samples: usize,
}

/// Which half of the split to draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Deterministic index over an image corpus and an audio corpus with a
/// train/test split.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    images: Vec<PathBuf>,
    audio: Vec<AudioEntry>,
    image_split: usize,
    audio_split: usize,
    seed: u64,
}

impl CorpusIndex {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn images(&self, split: Split) -> &[PathBuf] {
        match split {
            Split::Train => &self.images[..self.image_split],
            Split::Test => &self.images[self.image_split..],
        }
    }

    pub fn audio(&self, split: Split) -> &[AudioEntry] {
        match split {
            Split::Train => &self.audio[..self.audio_split],
            Split::Test => &self.audio[self.audio_split..],
        }
    }

    pub fn all_audio(&self) -> &[AudioEntry] {
        &self.audio
    }
}

fn walk_files(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    if !dir.is_dir() {
        return Err(DatasetError::BadDirectory(dir.to_path_buf()));
    }
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(path);
            }
        }
    }
    files.sort();
    Ok(files)
}

fn split_point(count: usize, ratio: f64, kind: &'static str) -> Result<usize, DatasetError> {
    if count == 0 {
        return Err(DatasetError::SplitTooSmall { count, kind });
    }
    if count == 1 {
        // A single file all goes to training; evaluation needs its own data.
        return Ok(1);
    }
    let raw = (ratio * count as f64).round() as usize;
    Ok(raw.clamp(1, count - 1))
}

/// Scans both directories, keeps the decodable files (skipping the rest
/// with a warning), shuffles deterministically and splits.
pub fn build_index(
    image_dir: impl AsRef<Path>,
    audio_dir: impl AsRef<Path>,
    split_ratio: f64,
    seed: u64,
) -> Result<CorpusIndex, DatasetError> {
    let image_dir = image_dir.as_ref();
    let audio_dir = audio_dir.as_ref();

    let mut images = Vec::new();
    for path in walk_files(image_dir)? {
        match image::open(&path) {
            Ok(_) => images.push(path),
            Err(e) => eprintln!("warning: skipping image {}: {e}", path.display()),
        }
    }
    if images.is_empty() {
        return Err(DatasetError::NoUsableFiles {
            dir: image_dir.to_path_buf(),
            kind: "image",
        });
    }

    let mut audio = Vec::new();
    for path in walk_files(audio_dir)? {
        match load_wav(&path) {
            Ok(wave) => audio.push(AudioEntry {
                path,
                samples: wave.len(),
            }),
            Err(e) => eprintln!("warning: skipping audio {}: {e}", path.display()),
        }
    }
    if audio.is_empty() {
        return Err(DatasetError::NoUsableFiles {
            dir: audio_dir.to_path_buf(),
            kind: "audio",
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle(&mut images, &mut rng);
    shuffle(&mut audio, &mut rng);
    let image_split = split_point(images.len(), split_ratio, "image")?;
    let audio_split = split_point(audio.len(), split_ratio, "audio")?;
    Ok(CorpusIndex {
        images,
        audio,
        image_split,
        audio_split,
        seed,
    })
}

fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Loads an image, resizes it bilinearly to `size x size` and scales to
/// a `[3 x size x size]` tensor in [0, 1].
pub fn load_image_tensor(path: &Path, size: usize) -> Result<Array3<f32>, DatasetError> {
    let img = image::open(path)
        .map_err(|e| DatasetError::Unreadable {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .to_rgb8();
    let resized = image::imageops::resize(
        &img,
        size as u32,
        size as u32,
        image::imageops::FilterType::Triangle,
    );
    let mut tensor = Array3::zeros((3, size, size));
    for y in 0..size {
        for x in 0..size {
            let px = resized.get_pixel(x as u32, y as u32);
            for ch in 0..3 {
                tensor[(ch, y, x)] = px.0[ch] as f32 / 255.0;
            }
        }
    }
    Ok(tensor)
}

/// Normalization context shared by every pack of one training run.
#[derive(Debug, Clone, Copy)]
pub struct PackContext {
    pub format: SecretFormat,
    pub norm: MelNorm,
    pub stft_scale: f32,
}

impl Default for PackContext {
    fn default() -> Self {
        Self {
            format: SecretFormat::Mel,
            norm: MelNorm::default(),
            stft_scale: 1.0,
        }
    }
}

/// Packs a standardized clip at the channel count fixed by the range
/// maximum, so every pair in a run shares one tensor shape.
pub fn pack_clip(
    wave: &Waveform,
    geom: PackGeometry,
    channels: usize,
    ctx: &PackContext,
) -> Result<PackedSecret, DatasetError> {
    let packed = match ctx.format {
        SecretFormat::Mel => {
            let mel = mel_compress_with_norm(wave, ctx.norm)
                .map_err(|e| DatasetError::Unreadable {
                    path: PathBuf::new(),
                    reason: e.to_string(),
                })?
                .trim_to_content();
            pack_mel_with_channels(&mel, geom, channels)?
        }
        SecretFormat::Raw => pack_raw_with_channels(wave, geom, channels)?,
        SecretFormat::Stft => {
            pack_stft_with_channels(wave, geom, channels, Some(ctx.stft_scale))?
        }
    };
    Ok(packed)
}

/// Channel count every pair of a duration range uses.
pub fn max_channels(range: DurationRange, format: SecretFormat, geom: PackGeometry) -> usize {
    let max_samples = ((range.max_s * SAMPLE_RATE as f64).ceil() as usize).max(1);
    channels_for_samples(max_samples, format, geom)
}

/// One training pair: a resized image and a packed clip of a duration
/// drawn uniformly from `range`. Fully determined by `pair_seed`.
pub fn make_pair(
    index: &CorpusIndex,
    split: Split,
    ordinal: usize,
    range: DurationRange,
    geom: PackGeometry,
    ctx: &PackContext,
    pair_seed: u64,
) -> Result<(Array3<f32>, PackedSecret), DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(pair_seed);
    let images = index.images(split);
    let audio = index.audio(split);
    if images.is_empty() || audio.is_empty() {
        return Err(DatasetError::SplitTooSmall {
            count: 0,
            kind: "split",
        });
    }
    let image = load_image_tensor(&images[ordinal % images.len()], geom.h)?;
    let entry = &audio[(ordinal / images.len().max(1) + ordinal) % audio.len()];

    let duration = rng.random_range(range.min_s..=range.max_s);
    let samples = (duration * SAMPLE_RATE as f64).round() as usize;
    let channels = max_channels(range, ctx.format, geom);

    let packed = if samples == 0 {
        // Zero-length draw: all-zero planes at the shared shape.
        let mut p = pack_clip(&Waveform::silence(crate::audio::HOP), geom, channels, ctx)?;
        p.tensor.fill(match ctx.format {
            SecretFormat::Stft => 0.5,
            _ => 0.0,
        });
        p.meta.source_len = 0;
        p.meta.frames = 0;
        p
    } else {
        let clip = load_wav(&entry.path)
            .map_err(|e| DatasetError::Unreadable {
                path: entry.path.clone(),
                reason: e.to_string(),
            })?
            .fit_to(samples);
        pack_clip(&clip, geom, channels, ctx)?
    };
    Ok((image, packed))
}

/// Concatenates indexed clips in order until `target_duration_s` is
/// reached, then crops to the sample.
pub fn splice_clips(index: &CorpusIndex, target_duration_s: f64) -> Result<Waveform, DatasetError> {
    let target = (target_duration_s * SAMPLE_RATE as f64).round() as usize;
    let total: usize = index.all_audio().iter().map(|e| e.samples).sum();
    if total < target {
        return Err(DatasetError::InsufficientAudio {
            need_s: target_duration_s,
            have_s: total as f64 / SAMPLE_RATE as f64,
        });
    }
    let mut samples = Vec::with_capacity(target);
    for entry in index.all_audio() {
        if samples.len() >= target {
            break;
        }
        let wave = load_wav(&entry.path).map_err(|e| DatasetError::Unreadable {
            path: entry.path.clone(),
            reason: e.to_string(),
        })?;
        samples.extend_from_slice(wave.samples());
    }
    samples.truncate(target);
    Waveform::from_samples(samples).map_err(|e| DatasetError::Unreadable {
        path: PathBuf::new(),
        reason: e.to_string(),
    })
}

/// Scans training clips for the corpus-wide mel reference magnitude.
pub fn compute_corpus_norm(index: &CorpusIndex, max_clips: usize) -> Result<MelNorm, DatasetError> {
    let mut peak = 0.0f32;
    for entry in index.audio(Split::Train).iter().take(max_clips.max(1)) {
        let wave = load_wav(&entry.path).map_err(|e| DatasetError::Unreadable {
            path: entry.path.clone(),
            reason: e.to_string(),
        })?;
        let mags = mel_magnitudes(&wave).map_err(|e| DatasetError::Unreadable {
            path: entry.path.clone(),
            reason: e.to_string(),
        })?;
        peak = mags.iter().fold(peak, |a, &m| a.max(m));
    }
    Ok(MelNorm {
        ref_mag: peak.max(1e-6),
        ..MelNorm::default()
    })
}

/// Scans training clips for the corpus-wide block-spectrum scale.
pub fn compute_corpus_stft_scale(
    index: &CorpusIndex,
    max_clips: usize,
) -> Result<f32, DatasetError> {
    let mut peak = 0.0f32;
    for entry in index.audio(Split::Train).iter().take(max_clips.max(1)) {
        let wave = load_wav(&entry.path).map_err(|e| DatasetError::Unreadable {
            path: entry.path.clone(),
            reason: e.to_string(),
        })?;
        let spec = block_stft(&wave);
        peak = spec
            .iter()
            .map(|c| c.re.abs().max(c.im.abs()))
            .fold(peak, f32::max);
    }
    Ok(peak.max(1e-6))
}
