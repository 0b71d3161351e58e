//! Cascaded embedding: several stacks chained so that multiple audio
//! tensors hide in one image. Holders of the first k layers' weights can
//! decode k clips; deeper content stays sealed.

use ndarray::Array3;
use thiserror::Error;

use crate::inn::{EmbedResult, InnError, InnStack, Real};

/// Configured ceiling on cascade depth.
pub const MAX_DEPTH: usize = 4;

#[derive(Debug, Error)]
pub enum NestedError {
    #[error("nested stack needs between 1 and {MAX_DEPTH} layers, got {0}")]
    BadDepth(usize),
    #[error("layer {layer} has cover/secret channels {got:?}, expected {expected:?}")]
    ChannelMismatch {
        layer: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("access level {level} requires layers 1..={level}, but only {available} are available")]
    MissingLayer { level: usize, available: usize },
    #[error("access level must be at least 1")]
    ZeroLevel,
    #[error(transparent)]
    Inn(#[from] InnError),
}

/// Decode depth requested by a user; level k yields k audio tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessLevel(pub usize);

/// Layer 1 embeds into the image (cover channels 3); every deeper layer
/// embeds one audio tensor into another, so all share the audio channel
/// count `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedStack<F> {
    layers: Vec<InnStack<F>>,
}

impl<F: Real> NestedStack<F> {
    pub fn new(layers: Vec<InnStack<F>>) -> Result<Self, NestedError> {
        if layers.is_empty() || layers.len() > MAX_DEPTH {
            return Err(NestedError::BadDepth(layers.len()));
        }
        let c = layers[0].secret_channels();
        for (i, layer) in layers.iter().enumerate() {
            let expected = if i == 0 {
                (layers[0].cover_channels(), c)
            } else {
                (c, c)
            };
            let got = (layer.cover_channels(), layer.secret_channels());
            if got != expected {
                return Err(NestedError::ChannelMismatch {
                    layer: i + 1,
                    expected,
                    got,
                });
            }
        }
        Ok(Self { layers })
    }

    /// Fresh cascade with deterministic per-layer weights.
    pub fn seeded(
        image_channels: usize,
        secret_channels: usize,
        depth: usize,
        seed: u64,
    ) -> Result<Self, NestedError> {
        let layers = (0..depth)
            .map(|k| {
                let cover = if k == 0 { image_channels } else { secret_channels };
                InnStack::seeded(cover, secret_channels, seed.wrapping_add(k as u64))
            })
            .collect();
        Self::new(layers)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn secret_channels(&self) -> usize {
        self.layers[0].secret_channels()
    }

    pub fn layers(&self) -> &[InnStack<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [InnStack<F>] {
        &mut self.layers
    }

    /// Embeds `audio_layers` (level 1 first, deepest secret last) into
    /// `image`. Deeper layers run first: each acts as the cover for the
    /// one above it. Returns one result per layer, outermost first, so
    /// `[0]` holds the shipped container.
    pub fn encode_detailed(
        &self,
        image: &Array3<F>,
        audio_layers: &[Array3<F>],
    ) -> Result<Vec<EmbedResult<F>>, NestedError> {
        if audio_layers.len() != self.depth() {
            return Err(NestedError::MissingLayer {
                level: audio_layers.len(),
                available: self.depth(),
            });
        }
        let mut results: Vec<EmbedResult<F>> = Vec::with_capacity(self.depth());
        // Deepest secret flows upward through the cascade.
        let mut secret = audio_layers[self.depth() - 1].clone();
        for k in (1..self.depth()).rev() {
            let out = self.layers[k].forward_embed(&audio_layers[k - 1], &secret)?;
            secret = out.container.clone();
            results.push(out);
        }
        results.push(self.layers[0].forward_embed(image, &secret)?);
        results.reverse();
        Ok(results)
    }

    /// Embeds and returns just the outer result (container + discarded
    /// latent), mirroring the single-stack embed signature.
    pub fn encode(
        &self,
        image: &Array3<F>,
        audio_layers: &[Array3<F>],
    ) -> Result<EmbedResult<F>, NestedError> {
        Ok(self.encode_detailed(image, audio_layers)?.swap_remove(0))
    }

    /// Deployed decode down to `level`: layer 1 reveals from the
    /// container, each deeper layer reveals from the secret recovered
    /// above it. Returns one `(secret_est, cover_est)` pair per layer.
    pub fn decode(
        &self,
        container: &Array3<F>,
        level: AccessLevel,
    ) -> Result<Vec<(Array3<F>, Array3<F>)>, NestedError> {
        let AccessLevel(level) = level;
        if level == 0 {
            return Err(NestedError::ZeroLevel);
        }
        if level > self.depth() {
            return Err(NestedError::MissingLayer {
                level,
                available: self.depth(),
            });
        }
        let mut pairs = Vec::with_capacity(level);
        let mut carrier = container.clone();
        for k in 0..level {
            let (secret_est, cover_est) = self.layers[k].reveal_deployed(&carrier)?;
            carrier = secret_est.clone();
            pairs.push((secret_est, cover_est));
        }
        Ok(pairs)
    }

    /// Test-mode decode threading the true latents recorded at encode
    /// time; composes the exact inverses.
    pub fn decode_with_latents(
        &self,
        container: &Array3<F>,
        latents: &[Array3<F>],
    ) -> Result<Vec<(Array3<F>, Array3<F>)>, NestedError> {
        if latents.len() != self.depth() {
            return Err(NestedError::MissingLayer {
                level: latents.len(),
                available: self.depth(),
            });
        }
        let mut pairs = Vec::with_capacity(self.depth());
        let mut carrier = container.clone();
        for (k, latent) in latents.iter().enumerate() {
            let (secret_est, cover_est) = self.layers[k].backward_reveal(&carrier, latent)?;
            carrier = secret_est.clone();
            pairs.push((secret_est, cover_est));
        }
        Ok(pairs)
    }
}
