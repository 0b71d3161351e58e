//! Epoch loop over an indexed corpus: builds batches, runs the optimizer
//! and produces a ready-to-save checkpoint with per-epoch statistics.

use thiserror::Error;

use super::{
    train_nested, train_step, Adam, Batch, Checkpoint, LossReport, LossWeights, NestedBatch,
    TrainConfig, TrainError,
};
use crate::data::{
    compute_corpus_norm, compute_corpus_stft_scale, load_image_tensor, make_pair, max_channels,
    CorpusIndex, DatasetError, PackContext, Split,
};
use crate::inn::InnStack;
use crate::nested::{NestedError, NestedStack};
use crate::pack::{PackGeometry, SecretFormat};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Nested(#[from] NestedError),
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: u32,
    pub mean: LossReport,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub epoch_log: Vec<EpochStats>,
    pub steps: u64,
}

/// Deterministic per-sample seed derivation (splitmix-style).
fn pair_seed(seed: u64, epoch: u64, position: u64) -> u64 {
    let mut z = seed
        .wrapping_add(epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(position.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the pack normalization context for a run from its corpus.
pub fn corpus_context(
    cfg: &TrainConfig,
    index: &CorpusIndex,
) -> Result<PackContext, DatasetError> {
    // A bounded scan keeps startup cheap on large corpora.
    const NORM_SCAN_CLIPS: usize = 64;
    let mut ctx = PackContext {
        format: cfg.format,
        ..PackContext::default()
    };
    match cfg.format {
        SecretFormat::Mel => ctx.norm = compute_corpus_norm(index, NORM_SCAN_CLIPS)?,
        SecretFormat::Stft => {
            ctx.stft_scale = compute_corpus_stft_scale(index, NORM_SCAN_CLIPS)?
        }
        SecretFormat::Raw => {}
    }
    Ok(ctx)
}

/// Trains a stack (or a nested cascade when `depth > 1`) over the train
/// split. `progress` receives `(epoch, mean loss)` after each epoch.
pub fn train_from_corpus(
    cfg: &TrainConfig,
    index: &CorpusIndex,
    depth: usize,
    mut progress: impl FnMut(u32, &LossReport),
) -> Result<TrainOutcome, DriverError> {
    let geom = PackGeometry::square(cfg.image_size);
    let ctx = corpus_context(cfg, index)?;
    let channels = max_channels(cfg.duration_range_s, cfg.format, geom);
    let weights = LossWeights::default();

    let n_train = index.images(Split::Train).len();
    let steps_per_epoch = n_train.div_ceil(cfg.batch_size).max(1);

    let mut epoch_log = Vec::with_capacity(cfg.epochs as usize);
    let mut steps = 0u64;

    let checkpoint = if depth <= 1 {
        let mut stack = InnStack::<f32>::seeded(3, channels, cfg.seed);
        let mut adam = Adam::new(&stack);
        for epoch in 0..cfg.epochs {
            let mut acc = LossReport {
                container: 0.0,
                cover_rec: 0.0,
                secret_rec: 0.0,
                total: 0.0,
            };
            for step in 0..steps_per_epoch {
                let mut covers = Vec::with_capacity(cfg.batch_size);
                let mut secrets = Vec::with_capacity(cfg.batch_size);
                for b in 0..cfg.batch_size {
                    let position = (step * cfg.batch_size + b) as u64;
                    let (img, packed) = make_pair(
                        index,
                        Split::Train,
                        position as usize % n_train,
                        cfg.duration_range_s,
                        geom,
                        &ctx,
                        pair_seed(cfg.seed, epoch as u64, position),
                    )?;
                    covers.push(img);
                    secrets.push(packed.tensor);
                }
                let batch = Batch { covers, secrets };
                let report = train_step(&mut stack, &mut adam, &batch, cfg, &weights)?;
                steps += 1;
                acc.container += report.container / steps_per_epoch as f64;
                acc.cover_rec += report.cover_rec / steps_per_epoch as f64;
                acc.secret_rec += report.secret_rec / steps_per_epoch as f64;
                acc.total += report.total / steps_per_epoch as f64;
            }
            progress(epoch, &acc);
            epoch_log.push(EpochStats { epoch, mean: acc });
        }
        Checkpoint::for_stack(cfg.clone(), ctx.norm, ctx.stft_scale, stack)
    } else {
        let mut nested = NestedStack::<f32>::seeded(3, channels, depth, cfg.seed)?;
        let mut adams: Vec<Adam> = nested.layers().iter().map(Adam::new).collect();
        for epoch in 0..cfg.epochs {
            let mut acc = LossReport {
                container: 0.0,
                cover_rec: 0.0,
                secret_rec: 0.0,
                total: 0.0,
            };
            for step in 0..steps_per_epoch {
                let mut images = Vec::with_capacity(cfg.batch_size);
                let mut audio_layers = Vec::with_capacity(cfg.batch_size);
                for b in 0..cfg.batch_size {
                    let position = (step * cfg.batch_size + b) as u64;
                    let (img, first) = make_pair(
                        index,
                        Split::Train,
                        position as usize % n_train,
                        cfg.duration_range_s,
                        geom,
                        &ctx,
                        pair_seed(cfg.seed, epoch as u64, position),
                    )?;
                    // Deeper layers draw from offset positions so the
                    // clip sets differ per level.
                    let mut group = vec![first.tensor];
                    for layer in 1..depth {
                        let (_, packed) = make_pair(
                            index,
                            Split::Train,
                            (position as usize + layer * 7919) % n_train,
                            cfg.duration_range_s,
                            geom,
                            &ctx,
                            pair_seed(cfg.seed ^ (layer as u64) << 32, epoch as u64, position),
                        )?;
                        group.push(packed.tensor);
                    }
                    images.push(img);
                    audio_layers.push(group);
                }
                let batch = NestedBatch {
                    images,
                    audio_layers,
                };
                let report = train_nested(&mut nested, &mut adams, &batch, cfg, &weights)?;
                steps += 1;
                let d = steps_per_epoch as f64;
                acc.container += report.per_layer[0].container / d;
                acc.cover_rec += report.per_layer[0].cover_rec / d;
                acc.secret_rec += report.per_layer[0].secret_rec / d;
                acc.total += report.total / d;
            }
            progress(epoch, &acc);
            epoch_log.push(EpochStats { epoch, mean: acc });
        }
        Checkpoint::for_nested(cfg.clone(), ctx.norm, ctx.stft_scale, &nested)
    };

    Ok(TrainOutcome {
        checkpoint,
        epoch_log,
        steps,
    })
}

/// Convenience for tests and evaluation: embeds one image/clip pair with
/// a trained checkpoint and returns (cover, container).
pub fn embed_image(
    checkpoint: &Checkpoint,
    image_path: &std::path::Path,
) -> Result<ndarray::Array3<f32>, DatasetError> {
    load_image_tensor(image_path, checkpoint.config.image_size)
}
