//! Acceptance suite: one test per shipping criterion, each printing a
//! `[PASS]` line with the measured numbers. Run with:
//!
//! ```text
//! cargo test -p audiohide-cli --test acceptance -- --nocapture
//! ```

mod common;

use std::time::Instant;

use audiohide_core::audio::{
    mel_compress, mel_decompress, save_wav, MelNorm, MelSpectrogram, Waveform, HOP,
};
use audiohide_core::data::{build_index, make_pair, PackContext, Split};
use audiohide_core::inn::{
    embed_backprop, embed_with_tape, reveal_backprop, reveal_with_tape, InnStack,
};
use audiohide_core::metrics::{capacity_sweep, lsd};
use audiohide_core::nested::NestedStack;
use audiohide_core::pack::{
    channels_for, pack_mel, pack_raw, pack_stft, unpack_mel, unpack_raw, unpack_stft_to_wave,
    PackGeometry, SecretFormat,
};
use audiohide_core::train::{
    train_step, Adam, Batch, Checkpoint, DurationRange, LossWeights, TrainConfig,
};
use common::{bin, synth_corpus, toy_config};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::tempdir;

/// Learning rate for the desk-scale smoke runs. The criterion pins the
/// step budget and thresholds but not the rate; the paper-default 2e-4
/// moves too slowly to halve the loss within 100 steps at this scale.
const SMOKE_LR: f64 = 2e-3;

fn random_tensor(ch: usize, h: usize, w: usize, seed: u64) -> Array3<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_fn((ch, h, w), |_| rng.random_range(0.0..1.0))
}

fn random_tensor64(ch: usize, h: usize, w: usize, seed: u64) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_fn((ch, h, w), |_| rng.random_range(0.0..1.0))
}

/// Criterion 1: exact invertibility with the true latent at 64x64 for
/// c in {1, 2, 4}, 100 random seeds, f32 < 1e-3 and f64 < 1e-9, under
/// two minutes.
#[test]
fn criterion_1_invertibility_suite() {
    let start = Instant::now();
    let mut worst_f32 = 0.0f32;
    let mut worst_f64 = 0.0f64;
    for seed in 0..100u64 {
        let c = [1usize, 2, 4][seed as usize % 3];
        {
            let stack = InnStack::<f32>::seeded(3, c, seed);
            let cover = random_tensor(3, 64, 64, 1000 + seed);
            let secret = random_tensor(c, 64, 64, 2000 + seed);
            let out = stack.forward_embed(&cover, &secret).unwrap();
            let (s_back, c_back) = stack.backward_reveal(&out.container, &out.latent).unwrap();
            let err = s_back
                .iter()
                .zip(secret.iter())
                .chain(c_back.iter().zip(cover.iter()))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max);
            worst_f32 = worst_f32.max(err);
        }
        {
            let stack = InnStack::<f64>::seeded(3, c, seed);
            let cover = random_tensor64(3, 64, 64, 3000 + seed);
            let secret = random_tensor64(c, 64, 64, 4000 + seed);
            let out = stack.forward_embed(&cover, &secret).unwrap();
            let (s_back, c_back) = stack.backward_reveal(&out.container, &out.latent).unwrap();
            let err = s_back
                .iter()
                .zip(secret.iter())
                .chain(c_back.iter().zip(cover.iter()))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            worst_f64 = worst_f64.max(err);
        }
    }
    let elapsed = start.elapsed();
    assert!(worst_f32 < 1e-3, "f32 max abs error {worst_f32}");
    assert!(worst_f64 < 1e-9, "f64 max abs error {worst_f64}");
    assert!(elapsed.as_secs() < 120, "took {elapsed:?}");
    println!(
        "[PASS] criterion 1: invertibility over 100 seeds, max err f32 {worst_f32:.2e} (<1e-3), f64 {worst_f64:.2e} (<1e-9), {elapsed:.1?}"
    );
}

/// Criterion 2: channel arithmetic matches the reported counts exactly.
#[test]
fn criterion_2_channel_arithmetic() {
    assert_eq!(channels_for(10.0, SecretFormat::Mel).unwrap(), 2);
    assert_eq!(channels_for(10.0, SecretFormat::Raw).unwrap(), 7);
    assert_eq!(channels_for(10.0, SecretFormat::Stft).unwrap(), 4);
    assert_eq!(channels_for(80.0, SecretFormat::Mel).unwrap(), 16);
    let mel = channels_for(10.0, SecretFormat::Mel).unwrap();
    let raw = channels_for(10.0, SecretFormat::Raw).unwrap();
    assert_eq!((mel, raw), (2, 7), "mel:raw ratio must be 2/7");
    println!(
        "[PASS] criterion 2: channels(10s) = 2 mel / 7 raw / 4 stft, mel:raw = 2/7, channels(80s, mel) = 16"
    );
}

/// Criterion 3: 1000 randomized packing round trips per format under a
/// minute; mel and raw bit-exact, stft < 1e-3 relative.
#[test]
fn criterion_3_packing_losslessness() {
    let start = Instant::now();
    let geom = PackGeometry::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);

    for _ in 0..1000 {
        let frames = rng.random_range(1..=640);
        let values =
            Array2::from_shape_fn((80, frames), |_| rng.random_range(0.0f32..1.0));
        let mel = MelSpectrogram::new(values, MelNorm::default(), frames * HOP);
        let packed = pack_mel(&mel, geom).unwrap();
        let back = unpack_mel(&packed).unwrap();
        assert_eq!(back.values(), mel.values(), "mel round trip must be bit-exact");
    }

    for _ in 0..1000 {
        let n = rng.random_range(256..=40_000);
        // PCM16-grid samples: the [-1,1] -> [0,1] affine map is exact there.
        let wave = Waveform::from_samples(
            (0..n)
                .map(|_| rng.random_range(-32768i32..=32767) as f32 / 32768.0)
                .collect(),
        )
        .unwrap();
        let packed = pack_raw(&wave, geom).unwrap();
        let back = unpack_raw(&packed).unwrap();
        assert_eq!(back.samples(), wave.samples(), "raw round trip must be bit-exact");
    }

    let mut worst_rel = 0.0f64;
    for _ in 0..1000 {
        // Tone mixtures on the 10 Hz block-spectrum grid, inside the
        // retained band.
        let n = rng.random_range(4_800..=32_000);
        let tones = rng.random_range(1..=5);
        let mut samples = vec![0.0f32; n];
        for _ in 0..tones {
            let f = 10.0 * rng.random_range(5..=480) as f32;
            let a = rng.random_range(0.05..0.18f32);
            let phase = rng.random_range(0.0..std::f32::consts::TAU);
            for (k, s) in samples.iter_mut().enumerate() {
                *s += a
                    * (std::f32::consts::TAU * f * k as f32 / 16_000.0 + phase).sin();
            }
        }
        let wave = Waveform::from_samples(samples).unwrap();
        let packed = pack_stft(&wave, geom, None).unwrap();
        let back = unpack_stft_to_wave(&packed).unwrap();
        let mut err = 0.0f64;
        let mut norm = 0.0f64;
        for (a, b) in wave.samples().iter().zip(back.samples()) {
            err += ((a - b) as f64).powi(2);
            norm += (*a as f64).powi(2);
        }
        let rel = (err / norm.max(1e-30)).sqrt();
        worst_rel = worst_rel.max(rel);
        assert!(rel < 1e-3, "stft round trip rel err {rel}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    println!(
        "[PASS] criterion 3: 1000 round trips per format; mel/raw bit-exact, stft worst rel {worst_rel:.2e} (<1e-3), {elapsed:.1?}"
    );
}

/// Criterion 4: zero-initialized final layers make the container equal
/// the cover bit-exact, singly and nested depth-2.
#[test]
fn criterion_4_identity_at_init() {
    let stack = InnStack::<f32>::seeded(3, 2, 11);
    let cover = random_tensor(3, 64, 64, 12);
    let secret = random_tensor(2, 64, 64, 13);
    let out = stack.forward_embed(&cover, &secret).unwrap();
    assert_eq!(out.container, cover, "single stack identity at init");

    let nested = NestedStack::<f32>::seeded(3, 2, 2, 14).unwrap();
    let a1 = random_tensor(2, 64, 64, 15);
    let a2 = random_tensor(2, 64, 64, 16);
    let results = nested.encode_detailed(&cover, &[a1.clone(), a2]).unwrap();
    assert_eq!(results[0].container, cover, "nested outer identity at init");
    assert_eq!(results[1].container, a1, "nested inner identity at init");
    println!("[PASS] criterion 4: identity at init holds bit-exact for single and depth-2 stacks");
}

/// Criterion 5: analytic gradients through a coupling block match central
/// finite differences at float64 on 4x4 toys, relative error < 1e-3.
#[test]
fn criterion_5_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut stack = InnStack::<f64>::with_shape(2, 3, 4, 1);
    stack.init_weights(22);
    for b in &mut stack.blocks {
        for net in [&mut b.e1, &mut b.e2, &mut b.e3] {
            for v in net.conv2.weight.iter_mut() {
                *v = rng.random_range(-0.2..0.2);
            }
        }
    }
    let cover = random_tensor64(2, 4, 4, 23);
    let secret = random_tensor64(3, 4, 4, 24);
    let p_cover = random_tensor64(2, 4, 4, 25);
    let p_secret = random_tensor64(3, 4, 4, 26);

    let mut checked = 0usize;
    let mut worst_rel = 0.0f64;
    let h = 1e-6;

    // Embedding direction.
    {
        let (_, _, tape) = embed_with_tape(&stack, &cover, &secret).unwrap();
        let mut grads = stack.zeros_like();
        embed_backprop(&stack, &tape, &p_cover, &p_secret, &mut grads);
        for (ni, ci, flat) in [(0usize, 0usize, 7usize), (1, 1, 3), (2, 0, 20), (0, 1, 0)] {
            let loss = |s: &InnStack<f64>| {
                let out = s.forward_embed(&cover, &secret).unwrap();
                (&out.container * &p_cover).sum() + (&out.latent * &p_secret).sum()
            };
            let write = |s: &mut InnStack<f64>, v: f64| {
                let b = &mut s.blocks[0];
                let net = [&mut b.e1, &mut b.e2, &mut b.e3].into_iter().nth(ni).unwrap();
                let conv = [&mut net.conv1, &mut net.conv2].into_iter().nth(ci).unwrap();
                conv.weight.as_slice_mut().unwrap()[flat] = v;
            };
            let read = |s: &InnStack<f64>| {
                let net = [&s.blocks[0].e1, &s.blocks[0].e2, &s.blocks[0].e3][ni];
                [&net.conv1, &net.conv2][ci].weight.as_slice().unwrap()[flat]
            };
            let orig = read(&stack);
            write(&mut stack, orig + h);
            let up = loss(&stack);
            write(&mut stack, orig - h);
            let down = loss(&stack);
            write(&mut stack, orig);
            let fd = (up - down) / (2.0 * h);
            let gnet = [&grads.blocks[0].e1, &grads.blocks[0].e2, &grads.blocks[0].e3][ni];
            let analytic = [&gnet.conv1, &gnet.conv2][ci].weight.as_slice().unwrap()[flat];
            let rel = (fd - analytic).abs() / fd.abs().max(1e-9);
            assert!(rel < 1e-3, "embed ({ni},{ci},{flat}): fd {fd} vs {analytic}");
            worst_rel = worst_rel.max(rel);
            checked += 1;
        }
    }

    // Revealing direction.
    {
        let container = random_tensor64(2, 4, 4, 27);
        let seed = random_tensor64(3, 4, 4, 28);
        let (_, _, tape) = reveal_with_tape(&stack, &container, &seed).unwrap();
        let mut grads = stack.zeros_like();
        reveal_backprop(&stack, &tape, &p_secret, &p_cover, &mut grads);
        for (ni, ci, flat) in [(0usize, 1usize, 5usize), (1, 0, 11), (2, 1, 8)] {
            let loss = |s: &InnStack<f64>| {
                let (s_est, c_est) = s.backward_reveal(&container, &seed).unwrap();
                (&s_est * &p_secret).sum() + (&c_est * &p_cover).sum()
            };
            let write = |s: &mut InnStack<f64>, v: f64| {
                let b = &mut s.blocks[0];
                let net = [&mut b.e1, &mut b.e2, &mut b.e3].into_iter().nth(ni).unwrap();
                let conv = [&mut net.conv1, &mut net.conv2].into_iter().nth(ci).unwrap();
                conv.weight.as_slice_mut().unwrap()[flat] = v;
            };
            let read = |s: &InnStack<f64>| {
                let net = [&s.blocks[0].e1, &s.blocks[0].e2, &s.blocks[0].e3][ni];
                [&net.conv1, &net.conv2][ci].weight.as_slice().unwrap()[flat]
            };
            let orig = read(&stack);
            write(&mut stack, orig + h);
            let up = loss(&stack);
            write(&mut stack, orig - h);
            let down = loss(&stack);
            write(&mut stack, orig);
            let fd = (up - down) / (2.0 * h);
            let gnet = [&grads.blocks[0].e1, &grads.blocks[0].e2, &grads.blocks[0].e3][ni];
            let analytic = [&gnet.conv1, &gnet.conv2][ci].weight.as_slice().unwrap()[flat];
            let rel = (fd - analytic).abs() / fd.abs().max(1e-9);
            assert!(rel < 1e-3, "reveal ({ni},{ci},{flat}): fd {fd} vs {analytic}");
            worst_rel = worst_rel.max(rel);
            checked += 1;
        }
    }
    println!(
        "[PASS] criterion 5: {checked} coupling-block gradients match central differences, worst rel {worst_rel:.2e} (<1e-3)"
    );
}

/// Shared smoke-training loop mirroring the driver's batch assembly.
fn run_smoke(
    index: &audiohide_core::data::CorpusIndex,
    range: DurationRange,
    steps: usize,
    seed: u64,
) -> (Checkpoint, f64, f64, f64) {
    let mut cfg = TrainConfig::default();
    cfg.image_size = 64;
    cfg.duration_range_s = range;
    cfg.learning_rate = SMOKE_LR;
    cfg.seed = seed;
    let geom = PackGeometry::square(64);
    let ctx = PackContext::default();
    let ctx = PackContext {
        format: cfg.format,
        norm: audiohide_core::data::compute_corpus_norm(index, 64).unwrap(),
        ..ctx
    };
    let channels = audiohide_core::data::max_channels(range, cfg.format, geom);
    let mut stack = InnStack::<f32>::seeded(3, channels, seed);
    let mut adam = Adam::new(&stack);
    let weights = LossWeights::default();
    let n_train = index.images(Split::Train).len();

    let mut first_total = 0.0;
    let mut last = None;
    for step in 0..steps {
        let mut covers = Vec::with_capacity(cfg.batch_size);
        let mut secrets = Vec::with_capacity(cfg.batch_size);
        for b in 0..cfg.batch_size {
            let position = step * cfg.batch_size + b;
            let (img, packed) = make_pair(
                index,
                Split::Train,
                position % n_train,
                range,
                geom,
                &ctx,
                seed
                    .wrapping_mul(0x9E37_79B9)
                    .wrapping_add(position as u64),
            )
            .unwrap();
            covers.push(img);
            secrets.push(packed.tensor);
        }
        let report = train_step(
            &mut stack,
            &mut adam,
            &Batch { covers, secrets },
            &cfg,
            &weights,
        )
        .unwrap();
        if step == 0 {
            first_total = report.total;
        }
        last = Some(report);
    }
    let last = last.unwrap();
    let final_psnr = 10.0 * (1.0 / last.container.max(1e-10)).log10();
    let ckpt = Checkpoint::for_stack(cfg, ctx.norm, ctx.stft_scale, stack);
    (ckpt, first_total, last.total, final_psnr.min(100.0))
}

/// Criterion 6: 100-step desk-scale smoke halves the loss and keeps the
/// final-step container PSNR at or above 30 dB, within 15 minutes.
#[test]
fn criterion_6_training_smoke() {
    let start = Instant::now();
    let tmp = tempdir().unwrap();
    let (images, audio) = synth_corpus(tmp.path(), 40, 16, 42);
    // 40 images at ratio 0.8 leave exactly 32 training pairs.
    let index = build_index(&images, &audio, 0.8, 42).unwrap();
    assert_eq!(index.images(Split::Train).len(), 32);

    let (_ckpt, first, last, final_psnr) =
        run_smoke(&index, DurationRange::new(0.0, 2.0), 100, 1);
    let elapsed = start.elapsed();
    assert!(
        last < 0.5 * first,
        "loss {first:.4} -> {last:.4} did not fall below half"
    );
    assert!(final_psnr >= 30.0, "final-step container PSNR {final_psnr:.2} dB");
    assert!(elapsed.as_secs() < 900, "took {elapsed:?}");
    println!(
        "[PASS] criterion 6: smoke loss {first:.4} -> {last:.4} (x{:.3} < 0.5), final-step PSNR {final_psnr:.2} dB (>= 30), {elapsed:.0?}",
        last / first
    );
}

/// Criterion 7: container PSNR is non-increasing in the duration range
/// (1 dB margin) across 0-2 s, 0-4 s and 0-8 s checkpoints. Each range
/// trains to a comparable per-channel budget; the paper's full-scale
/// trend (39.72 dB at 0-20 s down to 28.25 dB at 0-80 s on LJ Speech) is
/// an annotation, not an assertion.
#[test]
fn criterion_7_capacity_monotonicity() {
    let tmp = tempdir().unwrap();
    let (images, audio) = synth_corpus(tmp.path(), 40, 16, 43);
    let index = build_index(&images, &audio, 0.8, 43).unwrap();

    let mut checkpoints = Vec::new();
    let mut ranges = Vec::new();
    for max_s in [2.0f64, 4.0, 8.0] {
        let range = DurationRange::new(0.0, max_s);
        let c = audiohide_core::data::max_channels(
            range,
            SecretFormat::Mel,
            PackGeometry::square(64),
        );
        // Equal optimizer budget per channel keeps the three runs at a
        // comparable distance from their loss equilibria.
        let steps = 30 * c;
        let (ckpt, ..) = run_smoke(&index, range, steps, 5);
        checkpoints.push(ckpt);
        ranges.push(range);
    }
    let refs: Vec<&Checkpoint> = checkpoints.iter().collect();
    let report = capacity_sweep(&refs, &index, &ranges, 8).unwrap();
    let psnrs: Vec<f64> = report.rows.iter().map(|r| r.psnr_db).collect();
    println!("{}", report.to_table());
    assert!(
        psnrs[1] <= psnrs[0] + 1.0,
        "PSNR rose beyond margin: 0-2s {} -> 0-4s {}",
        psnrs[0],
        psnrs[1]
    );
    assert!(
        psnrs[2] <= psnrs[1] + 1.0,
        "PSNR rose beyond margin: 0-4s {} -> 0-8s {}",
        psnrs[1],
        psnrs[2]
    );
    println!(
        "[PASS] criterion 7: container PSNR {:.2} / {:.2} / {:.2} dB non-increasing within 1 dB (paper full-scale annotation: 39.72 dB at 0-20 s to 28.25 dB at 0-80 s)",
        psnrs[0], psnrs[1], psnrs[2]
    );
}

/// Criterion 8: codec round trip on a 440 Hz sine stays under 2.5 dB
/// LSD, silence maps to exact silence, output length within one hop.
#[test]
fn criterion_8_codec_round_trip() {
    let wave = Waveform::sine(440.0, 0.8, 16_000);
    let out = mel_decompress(&mel_compress(&wave).unwrap());
    let d = lsd(&wave, &out).unwrap();
    assert!(d < 2.5, "sine LSD {d:.3} dB");
    let len_err = (out.len() as i64 - wave.len() as i64).unsigned_abs();
    assert!(len_err <= 256, "length error {len_err}");

    let silent = mel_decompress(&mel_compress(&Waveform::silence(16_000)).unwrap());
    assert!(silent.samples().iter().all(|&s| s == 0.0), "silence must stay silent");
    assert_eq!(silent.len(), 16_000);

    let ten_s = Waveform::sine(440.0, 0.6, 160_000);
    let out = mel_decompress(&mel_compress(&ten_s).unwrap().trim_to_content());
    let len_err = (out.len() as i64 - 160_000i64).unsigned_abs();
    assert!(len_err <= 256, "10 s length error {len_err}");
    println!(
        "[PASS] criterion 8: 440 Hz LSD {d:.3} dB (<2.5), silence exact, lengths within one 256-sample hop"
    );
}

/// Criterion 9: the CLI round-trips end to end with a smoke-trained
/// checkpoint and honors the exit-code contract on tampered inputs.
#[test]
fn criterion_9_cli_end_to_end() {
    let tmp = tempdir().unwrap();
    let (images, audio) = synth_corpus(tmp.path(), 10, 8, 77);
    let cfg_path = tmp.path().join("train.cfg");
    std::fs::write(&cfg_path, toy_config(2.0, 8, 3)).unwrap();

    let run = |args: &[&str]| {
        let out = bin().args(args).output().expect("spawn audiohide");
        (
            out.status.code().unwrap_or(-1),
            String::from_utf8_lossy(&out.stderr).into_owned(),
        )
    };

    // Train a small single-layer model through the binary.
    let ckpt = tmp.path().join("smoke.ckpt");
    let (code, err) = run(&[
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--image",
        images.to_str().unwrap(),
        "--audio",
        audio.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");

    // Embed then reveal: the WAV must have the embedded duration.
    let clip = tmp.path().join("clip.wav");
    save_wav(&clip, &Waveform::sine(440.0, 0.5, 24_000)).unwrap();
    let cover = images.join("img000.png");
    let container = tmp.path().join("container.png");
    let (code, err) = run(&[
        "embed",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--image",
        cover.to_str().unwrap(),
        "--audio",
        clip.to_str().unwrap(),
        "--out",
        container.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let revealed = tmp.path().join("revealed.wav");
    let (code, err) = run(&[
        "reveal",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--image",
        container.to_str().unwrap(),
        "--out",
        revealed.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(
        audiohide_core::audio::load_wav(&revealed).unwrap().len(),
        24_000,
        "revealed WAV must match the embedded duration"
    );

    // Nested depth-2: train briefly, embed two clips, reveal both.
    std::fs::write(&cfg_path, toy_config(2.0, 2, 4)).unwrap();
    let nested_ckpt = tmp.path().join("nested.ckpt");
    let (code, err) = run(&[
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--image",
        images.to_str().unwrap(),
        "--audio",
        audio.to_str().unwrap(),
        "--out",
        nested_ckpt.to_str().unwrap(),
        "--depth",
        "2",
    ]);
    assert_eq!(code, 0, "{err}");
    let clip2 = tmp.path().join("clip2.wav");
    save_wav(&clip2, &Waveform::sine(250.0, 0.5, 16_000)).unwrap();
    let nested_container = tmp.path().join("nested.png");
    let (code, err) = run(&[
        "nested-embed",
        "--checkpoint",
        nested_ckpt.to_str().unwrap(),
        "--image",
        cover.to_str().unwrap(),
        "--audio",
        clip.to_str().unwrap(),
        "--audio",
        clip2.to_str().unwrap(),
        "--out",
        nested_container.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let (code, err) = run(&[
        "nested-reveal",
        "--checkpoint",
        nested_ckpt.to_str().unwrap(),
        "--image",
        nested_container.to_str().unwrap(),
        "--out",
        tmp.path().join("nested-out").to_str().unwrap(),
        "--level",
        "2",
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(tmp.path().join("nested-out.level1.wav").exists());
    assert!(tmp.path().join("nested-out.level2.wav").exists());

    // Exit-code contract on tampered/bad inputs.
    let (code, _) = run(&["embed", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(code, 1, "missing flags are usage errors");

    let long = tmp.path().join("long.wav");
    save_wav(&long, &Waveform::sine(440.0, 0.5, 48_000)).unwrap();
    let (code, _) = run(&[
        "embed",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--image",
        cover.to_str().unwrap(),
        "--audio",
        long.to_str().unwrap(),
        "--out",
        tmp.path().join("x.png").to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "over-capacity clip is a data error");

    let broken = tmp.path().join("broken.ckpt");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes[0] ^= 0xFF;
    std::fs::write(&broken, bytes).unwrap();
    let (code, _) = run(&[
        "reveal",
        "--checkpoint",
        broken.to_str().unwrap(),
        "--image",
        container.to_str().unwrap(),
        "--out",
        tmp.path().join("y.wav").to_str().unwrap(),
    ]);
    assert_eq!(code, 3, "corrupt checkpoint is a checkpoint error");

    println!(
        "[PASS] criterion 9: CLI embed/reveal round trip (24000 samples), nested depth-2 emits 2 WAVs, exit codes 1/2/3 honored"
    );
}

/// Criterion 10: checkpoints round-trip bit-exact and fixed-seed training
/// reproduces bit-identical checkpoint files.
#[test]
fn criterion_10_checkpoint_determinism() {
    let tmp = tempdir().unwrap();
    let (images, audio) = synth_corpus(tmp.path(), 8, 8, 55);
    let index = build_index(&images, &audio, 0.8, 55).unwrap();

    let run = || {
        let (ckpt, ..) = run_smoke(&index, DurationRange::new(0.0, 2.0), 10, 9);
        ckpt.to_bytes()
    };
    let a = run();
    let b = run();
    assert_eq!(a, b, "fixed-seed training must be bit-identical");

    let loaded = Checkpoint::from_bytes(&a).unwrap();
    assert_eq!(loaded.to_bytes(), a, "checkpoint round trip must be bit-exact");

    // Round trip through the filesystem as well.
    let path = tmp.path().join("model.ckpt");
    loaded.save(&path).unwrap();
    let reloaded = Checkpoint::load(&path).unwrap();
    assert_eq!(reloaded, loaded);
    println!(
        "[PASS] criterion 10: checkpoint round trip bit-exact; two fixed-seed runs produced identical {}-byte checkpoints",
        a.len()
    );
}
