//! Optimization of embedding stacks: the weighted reconstruction loss,
//! Adam updates, single-stack and nested training steps, plus checkpoint
//! and configuration handling in the submodules.

mod checkpoint;
mod config;
pub mod driver;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use config::{ConfigError, DurationRange, TrainConfig, ENV_PREFIX};

use ndarray::Array3;
use rayon::prelude::*;
use thiserror::Error;

use crate::inn::{
    embed_backprop, embed_with_tape, reveal_backprop, reveal_with_tape, InnError, InnStack,
    StackGrads,
};
use crate::nested::NestedStack;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("bad batch: {0}")]
    BatchShape(String),
    #[error("non-finite loss at step {step} (container {container}, cover_rec {cover_rec}, secret_rec {secret_rec})")]
    NonFiniteLoss {
        step: u64,
        container: f64,
        cover_rec: f64,
        secret_rec: f64,
    },
    #[error(transparent)]
    Inn(#[from] InnError),
}

/// Balance weights of the three reconstruction terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_c: f64,
    pub lambda_i: f64,
    pub lambda_a: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_c: 32.0,
            lambda_i: 1.0,
            lambda_a: 32.0,
        }
    }
}

/// Loss components of one step (all mean-squared errors) and their
/// weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    /// Container vs cover.
    pub container: f64,
    /// Revealed cover vs cover.
    pub cover_rec: f64,
    /// Revealed secret vs secret.
    pub secret_rec: f64,
    pub total: f64,
}

impl LossReport {
    fn weighted(container: f64, cover_rec: f64, secret_rec: f64, w: &LossWeights) -> Self {
        Self {
            container,
            cover_rec,
            secret_rec,
            total: w.lambda_c * container + w.lambda_i * cover_rec + w.lambda_a * secret_rec,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

fn mse(a: &Array3<f32>, b: &Array3<f32>) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = (*x - *y) as f64;
        acc += d * d;
    }
    acc / a.len() as f64
}

/// The weighted training loss over one embed/reveal round trip.
pub fn loss_total(
    container: &Array3<f32>,
    cover: &Array3<f32>,
    revealed_cover: &Array3<f32>,
    revealed_secret: &Array3<f32>,
    secret: &Array3<f32>,
    w: &LossWeights,
) -> Result<LossReport, TrainError> {
    if container.dim() != cover.dim() || revealed_cover.dim() != cover.dim() {
        return Err(TrainError::BatchShape(format!(
            "cover-side shapes disagree: {:?} / {:?} / {:?}",
            container.dim(),
            cover.dim(),
            revealed_cover.dim()
        )));
    }
    if revealed_secret.dim() != secret.dim() {
        return Err(TrainError::BatchShape(format!(
            "secret-side shapes disagree: {:?} / {:?}",
            revealed_secret.dim(),
            secret.dim()
        )));
    }
    Ok(LossReport::weighted(
        mse(container, cover),
        mse(revealed_cover, cover),
        mse(revealed_secret, secret),
        w,
    ))
}

/// 8-bit quantization of a unit-range value; training treats it as the
/// identity in the backward pass.
pub fn quantize_unit(x: f32) -> f32 {
    (x.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Adam hyperparameters, lifted from the training configuration.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&TrainConfig> for AdamParams {
    fn from(cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        }
    }
}

/// Adaptive-moment optimizer state for one stack.
#[derive(Debug, Clone)]
pub struct Adam {
    m: InnStack<f32>,
    v: InnStack<f32>,
    t: u64,
}

impl Adam {
    pub fn new(shape_of: &InnStack<f32>) -> Self {
        Self {
            m: shape_of.zeros_like(),
            v: shape_of.zeros_like(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, stack: &mut InnStack<f32>, grads: &StackGrads<f32>, p: &AdamParams) {
        self.t += 1;
        let bc1 = 1.0 - p.beta1.powi(self.t as i32);
        let bc2 = 1.0 - p.beta2.powi(self.t as i32);
        let mut weights = stack.params_mut();
        let mut ms = self.m.params_mut();
        let mut vs = self.v.params_mut();
        let gs = grads.params();
        for i in 0..weights.len() {
            let w = &mut weights[i];
            let m = &mut ms[i];
            let v = &mut vs[i];
            let g = gs[i].2;
            for j in 0..w.len() {
                let gj = g[j] as f64;
                let mj = p.beta1 * m[j] as f64 + (1.0 - p.beta1) * gj;
                let vj = p.beta2 * v[j] as f64 + (1.0 - p.beta2) * gj * gj;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let update = p.lr * (mj / bc1) / ((vj / bc2).sqrt() + p.eps);
                w[j] -= update as f32;
            }
        }
    }
}

/// One training batch: covers paired with packed secret tensors.
#[derive(Debug, Clone)]
pub struct Batch {
    pub covers: Vec<Array3<f32>>,
    pub secrets: Vec<Array3<f32>>,
}

impl Batch {
    fn validate(&self) -> Result<(), TrainError> {
        if self.covers.is_empty() || self.covers.len() != self.secrets.len() {
            return Err(TrainError::BatchShape(format!(
                "{} covers vs {} secrets",
                self.covers.len(),
                self.secrets.len()
            )));
        }
        let cd = self.covers[0].dim();
        let sd = self.secrets[0].dim();
        for (c, s) in self.covers.iter().zip(&self.secrets) {
            if c.dim() != cd || s.dim() != sd {
                return Err(TrainError::BatchShape(
                    "mixed tensor shapes within a batch".into(),
                ));
            }
        }
        Ok(())
    }
}

fn scaled_diff(a: &Array3<f32>, b: &Array3<f32>, scale: f64) -> Array3<f32> {
    let s = scale as f32;
    let mut out = a - b;
    out.mapv_inplace(|v| v * s);
    out
}

/// One optimizer update over a batch: forward embed, optional container
/// quantization (pass-through gradient), zero-seed reveal, weighted loss,
/// Adam. Deterministic for a fixed seed; sample gradients are reduced in
/// batch order regardless of thread count.
pub fn train_step(
    stack: &mut InnStack<f32>,
    adam: &mut Adam,
    batch: &Batch,
    cfg: &TrainConfig,
    w: &LossWeights,
) -> Result<LossReport, TrainError> {
    batch.validate()?;
    let quantize = cfg.quantize_container;
    let frozen: &InnStack<f32> = stack;
    let per_sample: Vec<Result<(LossReport, StackGrads<f32>), InnError>> = batch
        .covers
        .par_iter()
        .zip(batch.secrets.par_iter())
        .map(|(cover, secret)| sample_pass(frozen, cover, secret, quantize, w))
        .collect();

    let bs = batch.covers.len() as f64;
    let mut grads = stack.zeros_like();
    let mut sum = LossReport::weighted(0.0, 0.0, 0.0, w);
    for r in per_sample {
        let (report, g) = r?;
        grads.add_scaled(&g, (1.0 / bs) as f32);
        sum.container += report.container / bs;
        sum.cover_rec += report.cover_rec / bs;
        sum.secret_rec += report.secret_rec / bs;
        sum.total += report.total / bs;
    }
    if !sum.is_finite() {
        return Err(TrainError::NonFiniteLoss {
            step: adam.steps_taken() + 1,
            container: sum.container,
            cover_rec: sum.cover_rec,
            secret_rec: sum.secret_rec,
        });
    }
    adam.step(stack, &grads, &AdamParams::from(cfg));
    Ok(sum)
}

fn sample_pass(
    stack: &InnStack<f32>,
    cover: &Array3<f32>,
    secret: &Array3<f32>,
    quantize: bool,
    w: &LossWeights,
) -> Result<(LossReport, StackGrads<f32>), InnError> {
    let (container, _latent, embed_tape) = embed_with_tape(stack, cover, secret)?;
    let shipped = if quantize {
        container.mapv(quantize_unit)
    } else {
        container
    };
    let seed = Array3::zeros(secret.dim());
    let (secret_est, cover_est, reveal_tape) = reveal_with_tape(stack, &shipped, &seed)?;

    let report = LossReport::weighted(
        mse(&shipped, cover),
        mse(&cover_est, cover),
        mse(&secret_est, secret),
        w,
    );

    let n_cover = cover.len() as f64;
    let n_secret = secret.len() as f64;
    let mut grads = stack.zeros_like();
    let d_secret_est = scaled_diff(&secret_est, secret, 2.0 * w.lambda_a / n_secret);
    let d_cover_est = scaled_diff(&cover_est, cover, 2.0 * w.lambda_i / n_cover);
    let (d_container_rev, _d_seed) =
        reveal_backprop(stack, &reveal_tape, &d_secret_est, &d_cover_est, &mut grads);
    // The quantizer backpropagates as the identity.
    let d_container = d_container_rev + scaled_diff(&shipped, cover, 2.0 * w.lambda_c / n_cover);
    let d_latent = Array3::zeros(secret.dim());
    embed_backprop(stack, &embed_tape, &d_container, &d_latent, &mut grads);
    Ok((report, grads))
}

/// A nested batch: each sample pairs an image with one audio tensor per
/// layer (level-1 audio first, deepest secret last).
#[derive(Debug, Clone)]
pub struct NestedBatch {
    pub images: Vec<Array3<f32>>,
    pub audio_layers: Vec<Vec<Array3<f32>>>,
}

/// Per-layer reports of a nested step; the grand total is their sum.
#[derive(Debug, Clone)]
pub struct NestedReport {
    pub per_layer: Vec<LossReport>,
    pub total: f64,
}

/// Jointly optimizes every layer of a cascade with the summed per-layer
/// losses; gradients flow end to end through the whole encode/decode
/// chain.
pub fn train_nested(
    nested: &mut NestedStack<f32>,
    adams: &mut [Adam],
    batch: &NestedBatch,
    cfg: &TrainConfig,
    w: &LossWeights,
) -> Result<NestedReport, TrainError> {
    let depth = nested.depth();
    if adams.len() != depth {
        return Err(TrainError::BatchShape(format!(
            "{} optimizer states for depth {depth}",
            adams.len()
        )));
    }
    if batch.images.is_empty() || batch.images.len() != batch.audio_layers.len() {
        return Err(TrainError::BatchShape(format!(
            "{} images vs {} audio groups",
            batch.images.len(),
            batch.audio_layers.len()
        )));
    }
    for group in &batch.audio_layers {
        if group.len() != depth {
            return Err(TrainError::BatchShape(format!(
                "audio group of size {} for depth {depth}",
                group.len()
            )));
        }
    }

    let quantize = cfg.quantize_container;
    let frozen: &NestedStack<f32> = nested;
    let per_sample: Vec<Result<(Vec<LossReport>, Vec<StackGrads<f32>>), InnError>> = batch
        .images
        .par_iter()
        .zip(batch.audio_layers.par_iter())
        .map(|(image, audio)| nested_sample_pass(frozen, image, audio, quantize, w))
        .collect();

    let bs = batch.images.len() as f64;
    let mut grads: Vec<StackGrads<f32>> =
        nested.layers().iter().map(|l| l.zeros_like()).collect();
    let mut reports = vec![LossReport::weighted(0.0, 0.0, 0.0, w); depth];
    for r in per_sample {
        let (sample_reports, sample_grads) = r?;
        for k in 0..depth {
            grads[k].add_scaled(&sample_grads[k], (1.0 / bs) as f32);
            reports[k].container += sample_reports[k].container / bs;
            reports[k].cover_rec += sample_reports[k].cover_rec / bs;
            reports[k].secret_rec += sample_reports[k].secret_rec / bs;
            reports[k].total += sample_reports[k].total / bs;
        }
    }
    let total: f64 = reports.iter().map(|r| r.total).sum();
    if !total.is_finite() {
        let r = &reports[0];
        return Err(TrainError::NonFiniteLoss {
            step: adams[0].steps_taken() + 1,
            container: r.container,
            cover_rec: r.cover_rec,
            secret_rec: r.secret_rec,
        });
    }
    let params = AdamParams::from(cfg);
    for (k, layer) in nested.layers_mut().iter_mut().enumerate() {
        adams[k].step(layer, &grads[k], &params);
    }
    Ok(NestedReport {
        per_layer: reports,
        total,
    })
}

fn nested_sample_pass(
    nested: &NestedStack<f32>,
    image: &Array3<f32>,
    audio: &[Array3<f32>],
    quantize: bool,
    w: &LossWeights,
) -> Result<(Vec<LossReport>, Vec<StackGrads<f32>>), InnError> {
    let depth = nested.depth();
    let layers = nested.layers();

    // Forward chain, deepest layer first. chain[k] is the true secret
    // entering layer k-1 (chain[depth] is the deepest audio input).
    let mut chain: Vec<Array3<f32>> = vec![Array3::zeros((0, 0, 0)); depth + 1];
    chain[depth] = audio[depth - 1].clone();
    let mut embed_tapes = Vec::with_capacity(depth);
    embed_tapes.resize_with(depth, || None);
    for k in (1..depth).rev() {
        let (container, _latent, tape) = embed_with_tape(&layers[k], &audio[k - 1], &chain[k + 1])?;
        chain[k] = container;
        embed_tapes[k] = Some(tape);
    }
    let (outer, _latent0, tape0) = embed_with_tape(&layers[0], image, &chain[1])?;
    embed_tapes[0] = Some(tape0);
    let shipped = if quantize {
        outer.mapv(quantize_unit)
    } else {
        outer
    };

    // Reveal per layer. The outer layer reveals from the shipped
    // container; deeper layers reveal from their own true containers
    // (teacher forcing), which keeps every layer an identity at
    // zero-init. Deployment chains the estimates instead.
    let mut reveal_tapes = Vec::with_capacity(depth);
    let mut secret_ests: Vec<Array3<f32>> = Vec::with_capacity(depth);
    let mut cover_ests: Vec<Array3<f32>> = Vec::with_capacity(depth);
    for (k, layer) in layers.iter().enumerate() {
        let carrier = if k == 0 { &shipped } else { &chain[k] };
        let seed = Array3::zeros((layer.secret_channels(), carrier.dim().1, carrier.dim().2));
        let (s_est, c_est, tape) = reveal_with_tape(layer, carrier, &seed)?;
        secret_ests.push(s_est);
        cover_ests.push(c_est);
        reveal_tapes.push(tape);
    }

    // Per-layer losses. Layer k hides chain[k+1] in cover_k, producing
    // chain[k] (the shipped container for k = 0).
    let mut reports = Vec::with_capacity(depth);
    for k in 0..depth {
        let cover_k = if k == 0 { image } else { &audio[k - 1] };
        let container_k = if k == 0 { &shipped } else { &chain[k] };
        reports.push(LossReport::weighted(
            mse(container_k, cover_k),
            mse(&cover_ests[k], cover_k),
            mse(&secret_ests[k], &chain[k + 1]),
            w,
        ));
    }

    // Backward. d_est[j]: gradient into the revealed secret s_est of layer
    // j-1; d_true[j]: gradient into the true chain tensor chain[j].
    let mut grads: Vec<StackGrads<f32>> = layers.iter().map(|l| l.zeros_like()).collect();
    let mut d_est: Vec<Array3<f32>> = Vec::with_capacity(depth + 1);
    let mut d_true: Vec<Array3<f32>> = Vec::with_capacity(depth + 1);
    d_est.push(Array3::zeros((0, 0, 0))); // index 0 unused
    d_true.push(Array3::zeros((0, 0, 0)));
    for j in 1..=depth {
        let n = secret_ests[j - 1].len() as f64;
        d_est.push(scaled_diff(
            &secret_ests[j - 1],
            &chain[j],
            2.0 * w.lambda_a / n,
        ));
        d_true.push(scaled_diff(
            &chain[j],
            &secret_ests[j - 1],
            2.0 * w.lambda_a / n,
        ));
    }
    // Container losses on the true chain (layer k >= 1).
    for k in 1..depth {
        let n = chain[k].len() as f64;
        let extra = scaled_diff(&chain[k], &audio[k - 1], 2.0 * w.lambda_c / n);
        d_true[k] = &d_true[k] + &extra;
    }
    let n_img = shipped.len() as f64;
    let mut d_shipped = scaled_diff(&shipped, image, 2.0 * w.lambda_c / n_img);

    // Reveal backprop. Each layer's reveal reads its own container, so
    // the carrier gradient lands on the true chain tensor.
    for k in (0..depth).rev() {
        let cover_k = if k == 0 { image } else { &audio[k - 1] };
        let n = cover_ests[k].len() as f64;
        let d_cover_est = scaled_diff(&cover_ests[k], cover_k, 2.0 * w.lambda_i / n);
        let (d_carrier, _d_seed) = reveal_backprop(
            &layers[k],
            &reveal_tapes[k],
            &d_est[k + 1],
            &d_cover_est,
            &mut grads[k],
        );
        if k == 0 {
            d_shipped = d_shipped + d_carrier;
        } else {
            d_true[k] = &d_true[k] + &d_carrier;
        }
    }

    // Embed backprop in reverse execution order (outer layer first); the
    // quantizer backpropagates as the identity.
    let zero_latent =
        |k: usize| Array3::<f32>::zeros((layers[k].secret_channels(), shipped.dim().1, shipped.dim().2));
    let (_d_image, d_s1) = embed_backprop(
        &layers[0],
        embed_tapes[0].as_ref().unwrap(),
        &d_shipped,
        &zero_latent(0),
        &mut grads[0],
    );
    if depth > 1 {
        d_true[1] = &d_true[1] + &d_s1;
        for k in 1..depth {
            let (_d_cover, d_next) = embed_backprop(
                &layers[k],
                embed_tapes[k].as_ref().unwrap(),
                &d_true[k],
                &zero_latent(k),
                &mut grads[k],
            );
            if k + 1 < depth {
                d_true[k + 1] = &d_true[k + 1] + &d_next;
            }
        }
    }
    Ok((reports, grads))
}
