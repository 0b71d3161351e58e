//! The invertible embedding-revealing stack: a chain of coupling blocks
//! whose forward pass hides a secret tensor in a cover tensor and whose
//! backward pass is the exact algebraic inverse.

mod conv;
mod grad;

pub use conv::{Conv2d, Conv2dGrad, Subnet, SubnetGrads, SubnetTape, LEAKY_SLOPE};
pub use grad::{
    embed_backprop, embed_with_tape, reveal_backprop, reveal_with_tape, EmbedTape, RevealTape,
};

use ndarray::{Array3, NdFloat};
use num_traits::FromPrimitive;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// Float element of a stack; the pipeline trains in `f32`, while gradient
/// and invertibility checks also run in `f64`.
pub trait Real: NdFloat + FromPrimitive {}
impl Real for f32 {}
impl Real for f64 {}

pub const DEFAULT_BLOCKS: usize = 8;
pub const DEFAULT_HIDDEN: usize = 32;
/// Standard deviation for hidden-conv initialization.
const INIT_STD: f64 = 0.02;

#[derive(Debug, Error)]
pub enum InnError {
    #[error("tensor shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
}

fn shape_err(expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> InnError {
    InnError::Shape {
        expected: format!("{expected:?}"),
        got: format!("{got:?}"),
    }
}

/// Elementwise `exp(sigmoid(x))`: the multiplicative gate on the secret
/// branch. Strictly inside (1, e), so the reverse division never divides
/// by anything at or below 1 (up to float rounding at the open ends).
pub fn es_gate<F: Real>(x: F) -> F {
    sigmoid(x).exp()
}

pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Analytic derivative of [`es_gate`]: `exp(sigmoid(x)) sigmoid(x) (1 - sigmoid(x))`.
pub fn es_gate_derivative<F: Real>(x: F) -> F {
    let s = sigmoid(x);
    s.exp() * s * (F::one() - s)
}

/// One invertible coupling block. `e1` maps the secret branch onto the
/// cover branch; `e2`/`e3` map the updated cover onto the secret branch
/// as additive and (gated) multiplicative terms.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBlock<F> {
    pub e1: Subnet<F>,
    pub e2: Subnet<F>,
    pub e3: Subnet<F>,
}

impl<F: Real> CouplingBlock<F> {
    fn zeros(cover_ch: usize, secret_ch: usize, hidden: usize) -> Self {
        Self {
            e1: Subnet::zeros(secret_ch, cover_ch, hidden),
            e2: Subnet::zeros(cover_ch, secret_ch, hidden),
            e3: Subnet::zeros(cover_ch, secret_ch, hidden),
        }
    }

    /// Forward (embedding) update of one block.
    pub fn forward(&self, cover: &Array3<F>, secret: &Array3<F>) -> (Array3<F>, Array3<F>) {
        let cover_out = cover + &self.e1.forward(secret);
        let gate = self.e3.forward(&cover_out).mapv(es_gate);
        let secret_out = secret * &gate + &self.e2.forward(&cover_out);
        (cover_out, secret_out)
    }

    /// Exact inverse of [`CouplingBlock::forward`].
    pub fn reverse(&self, cover_out: &Array3<F>, secret_out: &Array3<F>) -> (Array3<F>, Array3<F>) {
        let gate = self.e3.forward(cover_out).mapv(es_gate);
        let secret = (secret_out - &self.e2.forward(cover_out)) / &gate;
        let cover = cover_out - &self.e1.forward(&secret);
        (cover, secret)
    }
}

/// Result of a forward embedding: the container that ships, plus the
/// transformed secret branch. The latter is discarded at deployment and
/// replaced by zeros when revealing.
#[derive(Debug, Clone)]
pub struct EmbedResult<F> {
    pub container: Array3<F>,
    pub latent: Array3<F>,
}

/// An ordered chain of coupling blocks sharing one channel layout.
#[derive(Debug, Clone, PartialEq)]
pub struct InnStack<F> {
    pub blocks: Vec<CouplingBlock<F>>,
    cover_channels: usize,
    secret_channels: usize,
    hidden_channels: usize,
}

impl<F: Real> InnStack<F> {
    /// A zero-weight stack with the default depth and width; behaves as
    /// the identity on the cover branch.
    pub fn new(cover_channels: usize, secret_channels: usize) -> Self {
        Self::with_shape(cover_channels, secret_channels, DEFAULT_HIDDEN, DEFAULT_BLOCKS)
    }

    pub fn with_shape(
        cover_channels: usize,
        secret_channels: usize,
        hidden_channels: usize,
        blocks: usize,
    ) -> Self {
        let blocks = (0..blocks)
            .map(|_| CouplingBlock::zeros(cover_channels, secret_channels, hidden_channels))
            .collect();
        Self {
            blocks,
            cover_channels,
            secret_channels,
            hidden_channels,
        }
    }

    /// A freshly initialized stack: hidden convs drawn from N(0, 0.02),
    /// final convs and all biases zero, fully determined by `seed`.
    pub fn seeded(cover_channels: usize, secret_channels: usize, seed: u64) -> Self {
        let mut stack = Self::new(cover_channels, secret_channels);
        stack.init_weights(seed);
        stack
    }

    /// Re-draws the weights deterministically. The zero final layers make
    /// the container equal the cover at step 0.
    pub fn init_weights(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).unwrap();
        for block in &mut self.blocks {
            for net in [&mut block.e1, &mut block.e2, &mut block.e3] {
                for v in net.conv1.weight.iter_mut() {
                    *v = F::from_f64(normal.sample(&mut rng)).unwrap();
                }
                net.conv1.bias.fill(F::zero());
                net.conv2.weight.fill(F::zero());
                net.conv2.bias.fill(F::zero());
            }
        }
    }

    pub fn cover_channels(&self) -> usize {
        self.cover_channels
    }

    pub fn secret_channels(&self) -> usize {
        self.secret_channels
    }

    pub fn hidden_channels(&self) -> usize {
        self.hidden_channels
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub(crate) fn check_pair(
        &self,
        cover: &Array3<F>,
        secret: &Array3<F>,
    ) -> Result<(), InnError> {
        let (cc, ch, cw) = cover.dim();
        let (sc, sh, sw) = secret.dim();
        if cc != self.cover_channels || sc != self.secret_channels || ch != sh || cw != sw {
            return Err(shape_err(
                (self.cover_channels, self.secret_channels, "matching h/w"),
                ((cc, ch, cw), (sc, sh, sw)),
            ));
        }
        Ok(())
    }

    fn check_container(&self, container: &Array3<F>) -> Result<(), InnError> {
        let (cc, ..) = container.dim();
        if cc != self.cover_channels {
            return Err(shape_err(self.cover_channels, cc));
        }
        Ok(())
    }

    /// Runs every block forward, hiding `secret` inside `cover`.
    pub fn forward_embed(
        &self,
        cover: &Array3<F>,
        secret: &Array3<F>,
    ) -> Result<EmbedResult<F>, InnError> {
        self.check_pair(cover, secret)?;
        let mut c = cover.clone();
        let mut s = secret.clone();
        for block in &self.blocks {
            let (nc, ns) = block.forward(&c, &s);
            c = nc;
            s = ns;
        }
        Ok(EmbedResult {
            container: c,
            latent: s,
        })
    }

    /// Runs every block in reverse. With the latent produced by
    /// [`forward_embed`] this is the exact inverse; deployment seeds the
    /// secret branch with zeros instead.
    pub fn backward_reveal(
        &self,
        container: &Array3<F>,
        latent_seed: &Array3<F>,
    ) -> Result<(Array3<F>, Array3<F>), InnError> {
        self.check_pair(container, latent_seed)?;
        let mut c = container.clone();
        let mut s = latent_seed.clone();
        for block in self.blocks.iter().rev() {
            let (pc, ps) = block.reverse(&c, &s);
            c = pc;
            s = ps;
        }
        Ok((s, c))
    }

    /// Deployed reveal from the container alone (zero latent seed).
    pub fn reveal_deployed(&self, container: &Array3<F>) -> Result<(Array3<F>, Array3<F>), InnError> {
        self.check_container(container)?;
        let (_, h, w) = container.dim();
        let seed = Array3::zeros((self.secret_channels, h, w));
        self.backward_reveal(container, &seed)
    }

    /// Same-shaped stack with all parameters zero; used as a gradient or
    /// optimizer-state container.
    pub fn zeros_like(&self) -> Self {
        Self::with_shape(
            self.cover_channels,
            self.secret_channels,
            self.hidden_channels,
            self.blocks.len(),
        )
    }

    /// Ordered parameter views: `(name, shape, data)`.
    pub fn params(&self) -> Vec<(String, Vec<usize>, &[F])> {
        let mut out = Vec::new();
        for (bi, block) in self.blocks.iter().enumerate() {
            for (ni, net) in [&block.e1, &block.e2, &block.e3].into_iter().enumerate() {
                for (ci, conv) in [&net.conv1, &net.conv2].into_iter().enumerate() {
                    let prefix = format!("block{bi}.e{}.conv{}", ni + 1, ci + 1);
                    out.push((
                        format!("{prefix}.weight"),
                        conv.weight.shape().to_vec(),
                        conv.weight.as_slice().expect("standard layout"),
                    ));
                    out.push((
                        format!("{prefix}.bias"),
                        conv.bias.shape().to_vec(),
                        conv.bias.as_slice().expect("standard layout"),
                    ));
                }
            }
        }
        out
    }

    /// Mutable twin of [`InnStack::params`], same order.
    pub fn params_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::new();
        for block in self.blocks.iter_mut() {
            for net in [&mut block.e1, &mut block.e2, &mut block.e3] {
                for conv in [&mut net.conv1, &mut net.conv2] {
                    out.push(conv.weight.as_slice_mut().expect("standard layout"));
                    out.push(conv.bias.as_slice_mut().expect("standard layout"));
                }
            }
        }
        out
    }

    /// `self += other * scale`, elementwise over all parameters.
    pub fn add_scaled(&mut self, other: &Self, scale: F) {
        let mut mine = self.params_mut();
        let theirs = other.params();
        assert_eq!(mine.len(), theirs.len(), "stack shapes differ");
        for (m, (_, _, t)) in mine.iter_mut().zip(theirs) {
            for (a, b) in m.iter_mut().zip(t) {
                *a = *a + *b * scale;
            }
        }
    }
}

/// Gradients of a stack's parameters share the stack's own layout.
pub type StackGrads<F> = InnStack<F>;
