//! Shared fixtures for the CLI and acceptance suites: synthetic image and
//! audio corpora plus checkpoint helpers.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use audiohide_core::audio::{save_wav, Waveform};
use audiohide_core::inn::InnStack;
use audiohide_core::nested::NestedStack;
use audiohide_core::train::{Checkpoint, DurationRange, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_audiohide"))
}

/// Colorful smooth test images: gradients with one off-center disc.
pub fn synth_images(dir: &Path, n: usize, px: u32, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let cx = rng.random_range(px as f32 * 0.2..px as f32 * 0.8);
        let cy = rng.random_range(px as f32 * 0.2..px as f32 * 0.8);
        let r = rng.random_range(px as f32 * 0.12..px as f32 * 0.35);
        let (r0, g0, b0) = (
            rng.random_range(0..255u32),
            rng.random_range(0..255u32),
            rng.random_range(0..255u32),
        );
        let img = image::RgbImage::from_fn(px, px, |x, y| {
            let dx = x as f32 - cx;
            let dy = y as f32 - cy;
            let inside = (dx * dx + dy * dy).sqrt() < r;
            let base = [
                ((x as u32 * 2 + r0) % 256) as u8,
                ((y as u32 * 2 + g0) % 256) as u8,
                (((x + y) as u32 + b0) % 256) as u8,
            ];
            if inside {
                image::Rgb([255 - base[0], base[1] / 2, 255 - base[2]])
            } else {
                image::Rgb(base)
            }
        });
        img.save(dir.join(format!("img{i:03}.png"))).unwrap();
    }
}

/// Speech-like clips: two tones under a slow amplitude envelope.
pub fn synth_clips(dir: &Path, n: usize, min_len: usize, max_len: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let len = rng.random_range(min_len..=max_len);
        let f1 = rng.random_range(150.0..700.0f32);
        let f2 = rng.random_range(800.0..3000.0f32);
        let samples: Vec<f32> = (0..len)
            .map(|k| {
                let t = k as f32 / 16_000.0;
                let env = 0.5 + 0.5 * (2.0 * std::f32::consts::PI * 2.5 * t).sin();
                0.45 * env * (2.0 * std::f32::consts::PI * f1 * t).sin()
                    + 0.25 * env * (2.0 * std::f32::consts::PI * f2 * t).sin()
            })
            .collect();
        save_wav(
            dir.join(format!("clip{i:03}.wav")),
            &Waveform::from_samples(samples).unwrap(),
        )
        .unwrap();
    }
}

/// A full toy corpus under `root/images` and `root/audio`.
pub fn synth_corpus(root: &Path, n_images: usize, n_clips: usize, seed: u64) -> (PathBuf, PathBuf) {
    let images = root.join("images");
    let audio = root.join("audio");
    synth_images(&images, n_images, 120, seed);
    synth_clips(&audio, n_clips, 32_000, 64_000, seed.wrapping_add(1));
    (images, audio)
}

pub fn toy_config(max_s: f64, epochs: u32, seed: u64) -> String {
    format!(
        "epochs = {epochs}\nlearning_rate = 1e-3\nbatch_size = 8\nseed = {seed}\n\
         image_size = 64\nduration_range_s = 0-{max_s}\nformat = mel\n"
    )
}

/// Zero-initialized (identity) checkpoint for a 0-2 s mel range at 64x64.
pub fn identity_checkpoint(path: &Path, depth: usize) {
    let mut cfg = TrainConfig::default();
    cfg.image_size = 64;
    cfg.duration_range_s = DurationRange::new(0.0, 2.0);
    cfg.seed = 7;
    // 0-2 s mel at 64x64 packs into 3 channels.
    let ckpt = if depth == 1 {
        Checkpoint::for_stack(cfg, Default::default(), 1.0, InnStack::new(3, 3))
    } else {
        let layers = (0..depth)
            .map(|k| InnStack::new(if k == 0 { 3 } else { 3 }, 3))
            .collect();
        Checkpoint::for_nested(
            cfg,
            Default::default(),
            1.0,
            &NestedStack::new(layers).unwrap(),
        )
    };
    ckpt.save(path).unwrap();
}
