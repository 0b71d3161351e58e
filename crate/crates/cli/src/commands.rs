//! Implementations of the CLI subcommands. Each returns a short summary
//! plus the list of files it wrote; failures map to exit codes through
//! [`CliError`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use audiohide_core::audio::{load_wav, Waveform, SAMPLE_RATE};
use audiohide_core::data::{build_index, load_image_tensor, max_channels, PackContext};
use audiohide_core::metrics::{capacity_sweep, decode_packed_audio};
use audiohide_core::nested::{AccessLevel, NestedStack, MAX_DEPTH};
use audiohide_core::pack::{
    capacity_info, channels_for_geometry, meta_for_duration, packed_from_tensor, PackGeometry,
    SecretFormat,
};
use audiohide_core::train::driver::train_from_corpus;
use audiohide_core::train::{Checkpoint, DurationRange, TrainConfig};
use ndarray::Array3;

use crate::container::{
    encode_container_png, read_container_png, write_atomic, ContainerMeta,
};
use crate::errors::CliError;

pub struct Outcome {
    pub summary: String,
    pub written: Vec<PathBuf>,
}

const SPLIT_RATIO: f64 = 0.8;
const EVAL_SAMPLES: usize = 4;

fn pack_context(ckpt: &Checkpoint) -> PackContext {
    PackContext {
        format: ckpt.config.format,
        norm: ckpt.norm,
        stft_scale: ckpt.stft_scale,
    }
}

/// Crops or zero-pads a clip to the drawn duration, packing it at the
/// checkpoint's fixed channel count.
fn pack_for_checkpoint(
    ckpt: &Checkpoint,
    wave: &Waveform,
) -> Result<audiohide_core::pack::PackedSecret, CliError> {
    let cfg = &ckpt.config;
    let geom = PackGeometry::square(cfg.image_size);
    let range = cfg.duration_range_s;
    let capacity_samples = (range.max_s * SAMPLE_RATE as f64).ceil() as usize;
    if wave.len() > capacity_samples {
        return Err(CliError::Data(format!(
            "clip is {:.2} s but this checkpoint holds at most {} s (trained range {})",
            wave.duration_s(),
            range.max_s,
            range
        )));
    }
    let channels = max_channels(range, cfg.format, geom);
    let ctx = pack_context(ckpt);
    audiohide_core::data::pack_clip(wave, geom, channels, &ctx).map_err(Into::into)
}

pub fn cmd_train(
    config_path: &Path,
    image_dir: &Path,
    audio_dir: &Path,
    out: &Path,
    seed: Option<u64>,
    size: Option<usize>,
    depth: usize,
) -> Result<Outcome, CliError> {
    if depth == 0 || depth > MAX_DEPTH {
        return Err(CliError::Usage(format!(
            "--depth must be between 1 and {MAX_DEPTH}"
        )));
    }
    let text = std::fs::read_to_string(config_path).map_err(|e| {
        CliError::Usage(format!("cannot read config {}: {e}", config_path.display()))
    })?;
    let mut cfg = TrainConfig::parse_document(&text)?;
    cfg.apply_env_overrides()?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(size) = size {
        cfg.image_size = size;
    }
    cfg.validate()?;

    let index = build_index(image_dir, audio_dir, SPLIT_RATIO, cfg.seed)?;
    let mut log = String::from("epoch,total,container,cover_rec,secret_rec\n");
    let outcome = train_from_corpus(&cfg, &index, depth, |epoch, report| {
        println!(
            "epoch {epoch}: total {:.6} (container {:.6}, cover_rec {:.6}, secret_rec {:.6})",
            report.total, report.container, report.cover_rec, report.secret_rec
        );
    })?;
    for e in &outcome.epoch_log {
        let _ = writeln!(
            log,
            "{},{},{},{},{}",
            e.epoch, e.mean.total, e.mean.container, e.mean.cover_rec, e.mean.secret_rec
        );
    }

    write_atomic(out, &outcome.checkpoint.to_bytes())?;
    let log_path = out.with_extension("losses.csv");
    write_atomic(&log_path, log.as_bytes())?;
    Ok(Outcome {
        summary: format!(
            "trained depth-{depth} model for {} epochs ({} steps), final loss {:.6}",
            cfg.epochs,
            outcome.steps,
            outcome.epoch_log.last().map(|e| e.mean.total).unwrap_or(0.0)
        ),
        written: vec![out.to_path_buf(), log_path],
    })
}

pub fn cmd_embed(
    checkpoint: &Path,
    image: &Path,
    audio: &Path,
    out: &Path,
    no_meta: bool,
) -> Result<Outcome, CliError> {
    let ckpt = Checkpoint::load(checkpoint)?;
    if ckpt.depth() != 1 {
        return Err(CliError::Usage(
            "checkpoint is nested; use nested-embed".into(),
        ));
    }
    let wave = load_wav(audio)?;
    let packed = pack_for_checkpoint(&ckpt, &wave)?;
    let cover = load_image_tensor(image, ckpt.config.image_size)?;
    let result = ckpt
        .stack()
        .forward_embed(&cover, &packed.tensor)
        .map_err(|e| CliError::Data(e.to_string()))?;

    let meta = ContainerMeta {
        format: ckpt.config.format,
        channels: packed.channels(),
        durations_samples: vec![wave.len()],
    };
    let png = encode_container_png(&result.container, (!no_meta).then_some(&meta))?;
    write_atomic(out, &png)?;
    Ok(Outcome {
        summary: format!(
            "embedded {:.2} s of audio ({} format, {} channels) into a {}x{} container",
            wave.duration_s(),
            ckpt.config.format,
            packed.channels(),
            ckpt.config.image_size,
            ckpt.config.image_size
        ),
        written: vec![out.to_path_buf()],
    })
}

/// Shared reveal plumbing: container tensor -> clamped secret -> audio.
fn reveal_audio(
    ckpt: &Checkpoint,
    stacks: &NestedStack<f32>,
    container: &Array3<f32>,
    durations: &[usize],
    level: usize,
) -> Result<Vec<Waveform>, CliError> {
    let pairs = stacks.decode(container, AccessLevel(level))?;
    let ctx = pack_context(ckpt);
    let mut waves = Vec::with_capacity(level);
    for (k, (secret_est, _cover_est)) in pairs.into_iter().enumerate() {
        let clamped = secret_est.mapv(|v| v.clamp(0.0, 1.0));
        let meta = meta_for_duration(
            ckpt.config.format,
            durations[k],
            ctx.norm,
            ctx.stft_scale,
        );
        let packed = packed_from_tensor(clamped, meta)?;
        waves.push(decode_packed_audio(&packed)?);
    }
    Ok(waves)
}

fn check_container_shape(ckpt: &Checkpoint, container: &Array3<f32>) -> Result<(), CliError> {
    let size = ckpt.config.image_size;
    let (c, h, w) = container.dim();
    if (c, h, w) != (3, size, size) {
        return Err(CliError::Data(format!(
            "container is {w}x{h}, checkpoint expects {size}x{size}"
        )));
    }
    Ok(())
}

fn resolve_durations(
    meta: Option<&ContainerMeta>,
    flags: &[f64],
    ckpt: &Checkpoint,
    depth_needed: usize,
) -> Result<Vec<usize>, CliError> {
    if !flags.is_empty() {
        if flags.len() < depth_needed {
            return Err(CliError::Usage(format!(
                "need {depth_needed} --duration values, got {}",
                flags.len()
            )));
        }
        return Ok(flags
            .iter()
            .take(depth_needed)
            .map(|d| (d * SAMPLE_RATE as f64).round() as usize)
            .collect());
    }
    let meta = meta.ok_or_else(|| {
        CliError::Usage(
            "container has no embedded metadata; pass --duration for each layer".into(),
        )
    })?;
    if meta.format != ckpt.config.format {
        return Err(CliError::Data(format!(
            "container was embedded as {} but the checkpoint is {}",
            meta.format, ckpt.config.format
        )));
    }
    if meta.durations_samples.len() < depth_needed {
        return Err(CliError::Data(format!(
            "metadata lists {} layers, {depth_needed} requested",
            meta.durations_samples.len()
        )));
    }
    Ok(meta.durations_samples[..depth_needed].to_vec())
}

pub fn cmd_reveal(
    checkpoint: &Path,
    image: &Path,
    out: &Path,
    duration: Option<f64>,
) -> Result<Outcome, CliError> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let (container, meta) = read_container_png(image)?;
    check_container_shape(&ckpt, &container)?;
    let flags: Vec<f64> = duration.into_iter().collect();
    let durations = resolve_durations(meta.as_ref(), &flags, &ckpt, 1)?;
    let nested = ckpt.nested().map_err(CliError::from)?;
    let waves = reveal_audio(&ckpt, &nested, &container, &durations, 1)?;
    let bytes = wav_bytes(&waves[0]);
    write_atomic(out, &bytes)?;
    Ok(Outcome {
        summary: format!("revealed {:.2} s of audio", waves[0].duration_s()),
        written: vec![out.to_path_buf()],
    })
}

fn wav_bytes(wave: &Waveform) -> Vec<u8> {
    // Synthesize through a temp-free in-memory encoder.
    audiohide_core::audio::wav_to_bytes(wave)
}

fn load_layer_stacks(paths: &[PathBuf]) -> Result<(Checkpoint, NestedStack<f32>), CliError> {
    if paths.is_empty() {
        return Err(CliError::Usage("at least one --checkpoint is required".into()));
    }
    let first = Checkpoint::load(&paths[0])?;
    let nested = if paths.len() == 1 {
        first.nested()?
    } else {
        let mut layers = first.stacks.clone();
        for p in &paths[1..] {
            let ck = Checkpoint::load(p)?;
            layers.extend(ck.stacks.clone());
        }
        if layers.len() > MAX_DEPTH {
            return Err(CliError::Usage(format!(
                "{} layers exceed the depth limit {MAX_DEPTH}",
                layers.len()
            )));
        }
        NestedStack::new(layers)?
    };
    Ok((first, nested))
}

pub fn cmd_nested_embed(
    checkpoints: &[PathBuf],
    image: &Path,
    audio: &[PathBuf],
    out: &Path,
    no_meta: bool,
) -> Result<Outcome, CliError> {
    let (ckpt, nested) = load_layer_stacks(checkpoints)?;
    if audio.len() != nested.depth() {
        return Err(CliError::Usage(format!(
            "need one --audio per layer: {} layers, {} clips",
            nested.depth(),
            audio.len()
        )));
    }
    let cover = load_image_tensor(image, ckpt.config.image_size)?;
    let mut tensors = Vec::with_capacity(audio.len());
    let mut durations = Vec::with_capacity(audio.len());
    for path in audio {
        let wave = load_wav(path)?;
        let packed = pack_for_checkpoint(&ckpt, &wave)?;
        durations.push(wave.len());
        tensors.push(packed.tensor);
    }
    let result = nested.encode(&cover, &tensors)?;
    let meta = ContainerMeta {
        format: ckpt.config.format,
        channels: nested.secret_channels(),
        durations_samples: durations,
    };
    let png = encode_container_png(&result.container, (!no_meta).then_some(&meta))?;
    write_atomic(out, &png)?;
    Ok(Outcome {
        summary: format!(
            "embedded {} audio layers into a depth-{} container",
            audio.len(),
            nested.depth()
        ),
        written: vec![out.to_path_buf()],
    })
}

pub fn cmd_nested_reveal(
    checkpoints: &[PathBuf],
    image: &Path,
    out: &Path,
    level: usize,
    durations_flag: &[f64],
) -> Result<Outcome, CliError> {
    if level == 0 {
        return Err(CliError::Usage("--level must be at least 1".into()));
    }
    let (ckpt, nested) = load_layer_stacks(checkpoints)?;
    let (container, meta) = read_container_png(image)?;
    check_container_shape(&ckpt, &container)?;
    let durations = resolve_durations(meta.as_ref(), durations_flag, &ckpt, level)?;
    let waves = reveal_audio(&ckpt, &nested, &container, &durations, level)?;

    let mut written = Vec::with_capacity(waves.len());
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "revealed".into());
    for (k, wave) in waves.iter().enumerate() {
        let path = out.with_file_name(format!("{stem}.level{}.wav", k + 1));
        write_atomic(&path, &wav_bytes(wave))?;
        written.push(path);
    }
    Ok(Outcome {
        summary: format!("revealed {} audio layer(s) at access level {level}", waves.len()),
        written,
    })
}

pub fn cmd_info(duration: f64, format: SecretFormat, size: usize) -> Result<Outcome, CliError> {
    let geom = PackGeometry::square(size);
    let info = capacity_info(duration, format, geom)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let raw_c = channels_for_geometry(duration, SecretFormat::Raw, geom)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "format {format}, {duration} s at {size}x{size}: c = {}",
        info.channels
    );
    let _ = writeln!(
        summary,
        "data cells = {}, padded cells = {}",
        info.data_cells, info.pad_cells
    );
    let _ = write!(
        summary,
        "channel ratio vs raw = {}/{}",
        info.channels, raw_c
    );
    Ok(Outcome {
        summary,
        written: vec![],
    })
}

pub fn cmd_eval(
    checkpoints: &[PathBuf],
    image_dir: &Path,
    audio_dir: &Path,
    out: &Path,
    seed: Option<u64>,
) -> Result<Outcome, CliError> {
    if checkpoints.is_empty() {
        return Err(CliError::Usage("at least one --checkpoint is required".into()));
    }
    let loaded: Vec<Checkpoint> = checkpoints
        .iter()
        .map(Checkpoint::load)
        .collect::<Result<_, _>>()?;
    let mut ranges: Vec<DurationRange> = Vec::new();
    for c in &loaded {
        let r = c.config.duration_range_s;
        if !ranges
            .iter()
            .any(|x| x.min_s == r.min_s && x.max_s == r.max_s)
        {
            ranges.push(r);
        }
    }
    ranges.sort_by(|a, b| a.max_s.total_cmp(&b.max_s));

    let seed = seed.unwrap_or(loaded[0].config.seed);
    let index = build_index(image_dir, audio_dir, SPLIT_RATIO, seed)?;
    let refs: Vec<&Checkpoint> = loaded.iter().collect();
    let report = capacity_sweep(&refs, &index, &ranges, EVAL_SAMPLES)?;
    write_atomic(out, report.to_csv().as_bytes())?;
    Ok(Outcome {
        summary: report.to_table(),
        written: vec![out.to_path_buf()],
    })
}
