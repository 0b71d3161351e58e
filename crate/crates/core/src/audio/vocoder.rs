//! Waveform reconstruction from mel features. The default decompressor is
//! Griffin-Lim phase retrieval over a least-squares mel-to-linear lift;
//! alternative backends (e.g. a neural vocoder) plug in through
//! [`Decompressor`].

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rustfft::num_complex::Complex32;

use super::mel::{magnitude_scale, mel_filterbank, MelSpectrogram, N_MELS};
use super::stft::{hann_window, istft, stft_frames, HOP, N_BINS, N_FFT};
use super::{DecompressError, Waveform};

/// Fast Griffin-Lim configuration.
#[derive(Debug, Clone, Copy)]
pub struct GriffinLim {
    pub iterations: usize,
    pub momentum: f32,
}

impl Default for GriffinLim {
    fn default() -> Self {
        Self {
            iterations: 60,
            momentum: 0.99,
        }
    }
}

impl GriffinLim {
    /// Reconstructs a waveform whose STFT magnitudes approximate `target`
    /// (`[N_BINS x T]`, linear scale). Deterministic: phases start at zero.
    pub fn reconstruct(&self, target: &Array2<f32>, out_len: usize) -> Vec<f32> {
        self.run(target, out_len).0
    }

    /// As [`reconstruct`](Self::reconstruct), also returning the spectral
    /// convergence residual measured after each iteration.
    pub fn reconstruct_traced(&self, target: &Array2<f32>, out_len: usize) -> (Vec<f32>, Vec<f32>) {
        self.run(target, out_len)
    }

    fn run(&self, target: &Array2<f32>, out_len: usize) -> (Vec<f32>, Vec<f32>) {
        assert_eq!(target.nrows(), N_BINS, "expected one-sided 1024-pt magnitudes");
        let window = hann_window(N_FFT);
        let target_norm = target.iter().map(|m| (m * m) as f64).sum::<f64>().sqrt();
        let momentum_gain = self.momentum / (1.0 + self.momentum);

        let mut estimate = target.mapv(|m| Complex32::new(m, 0.0));
        let mut prev: Option<Array2<Complex32>> = None;
        let mut residuals = Vec::with_capacity(self.iterations);
        for _ in 0..self.iterations {
            let signal = istft(&estimate, &window, N_FFT, HOP, None);
            let rebuilt = stft_frames(&signal, &window, N_FFT, HOP);
            residuals.push(spectral_residual(&rebuilt, target, target_norm));

            let update = match &prev {
                Some(p) => &rebuilt + (&rebuilt - p) * Complex32::new(momentum_gain, 0.0),
                None => rebuilt.clone(),
            };
            prev = Some(rebuilt);

            for ((b, t), slot) in estimate.indexed_iter_mut() {
                let u = update[(b, t)];
                let mag = u.norm();
                let phase = if mag > 1e-12 {
                    u / mag
                } else {
                    Complex32::new(1.0, 0.0)
                };
                *slot = phase * target[(b, t)];
            }
        }
        (istft(&estimate, &window, N_FFT, HOP, Some(out_len)), residuals)
    }
}

fn spectral_residual(rebuilt: &Array2<Complex32>, target: &Array2<f32>, target_norm: f64) -> f32 {
    let mut err = 0.0f64;
    for (c, &m) in rebuilt.iter().zip(target.iter()) {
        err += ((c.norm() - m) as f64).powi(2);
    }
    (err.sqrt() / target_norm.max(1e-30)) as f32
}

/// Multiplicative-update refinement steps for the non-negative lift.
const NNLS_ITERS: usize = 40;

/// Lifts mel magnitudes `[N_MELS x T]` back to linear magnitudes
/// `[N_BINS x T]`: a ridge-regularized least-squares solve through the
/// 80x80 Gram matrix seeds a non-negative least-squares refinement
/// (multiplicative updates), which concentrates tonal peaks instead of
/// smearing them across each filter's support.
pub fn mel_to_linear(mel_mags: &Array2<f32>) -> Array2<f32> {
    assert_eq!(mel_mags.nrows(), N_MELS);
    let fb = mel_filterbank();
    // Gram matrix with a small relative ridge.
    let gram = fb.dot(&fb.t());
    let ridge = 1e-6 * gram.diag().sum() / N_MELS as f32;
    let mut a = gram;
    for i in 0..N_MELS {
        a[(i, i)] += ridge;
    }
    let chol = cholesky(&a);
    let mut z = Array2::zeros((N_MELS, mel_mags.ncols()));
    let mut col = Array1::zeros(N_MELS);
    for t in 0..mel_mags.ncols() {
        col.assign(&mel_mags.column(t));
        let solved = cholesky_solve(&chol, &col);
        z.column_mut(t).assign(&solved);
    }
    let mut linear = fb.t().dot(&z).mapv(|x| x.max(0.0));

    // Lee-Seung updates: x <- x * (M^T y) / (M^T M x), elementwise. Zero
    // mel columns stay exactly zero.
    let eps = 1e-12f32;
    let mty = fb.t().dot(mel_mags);
    for _ in 0..NNLS_ITERS {
        let denom = fb.t().dot(&fb.dot(&linear));
        ndarray::Zip::from(&mut linear)
            .and(&mty)
            .and(&denom)
            .for_each(|x, &num, &den| {
                *x *= num / (den + eps);
                if !x.is_finite() {
                    *x = 0.0;
                }
            });
    }
    linear
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
fn cholesky(a: &Array2<f32>) -> Array2<f32> {
    let n = a.nrows();
    let mut l = Array2::<f32>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[(i, j)] as f64;
            for k in 0..j {
                sum -= l[(i, k)] as f64 * l[(j, k)] as f64;
            }
            if i == j {
                l[(i, j)] = (sum.max(1e-20)).sqrt() as f32;
            } else {
                l[(i, j)] = (sum / l[(j, j)] as f64) as f32;
            }
        }
    }
    l
}

fn cholesky_solve(l: &Array2<f32>, b: &Array1<f32>) -> Array1<f32> {
    let n = l.nrows();
    let mut y = vec![0.0f64; n];
    for i in 0..n {
        let mut sum = b[i] as f64;
        for k in 0..i {
            sum -= l[(i, k)] as f64 * y[k];
        }
        y[i] = sum / l[(i, i)] as f64;
    }
    let mut x = Array1::zeros(n);
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[(k, i)] as f64 * x[k] as f64;
        }
        x[i] = (sum / l[(i, i)] as f64) as f32;
    }
    x
}

/// Full decompression pipeline: denormalize, lift mel to linear magnitudes,
/// Griffin-Lim, crop to the recorded source length.
pub fn mel_decompress(mel: &MelSpectrogram) -> Waveform {
    let norm = mel.norm();
    let mags = mel.values().mapv(|v| norm.denormalize(v));
    let linear = mel_to_linear(&mags) / magnitude_scale();
    let out_len = mel.source_len().max(HOP);
    let samples = GriffinLim::default().reconstruct(&linear, out_len);
    // Reconstruction can overshoot slightly; Waveform clamps to [-1, 1].
    Waveform::from_samples(samples).expect("griffin-lim output is finite and non-empty")
}

/// A mel-to-waveform backend. The Griffin-Lim implementation above is the
/// default; a trained neural vocoder can be registered in its place.
pub trait Decompressor: Send + Sync {
    fn name(&self) -> &str;
    fn decompress(&self, mel: &MelSpectrogram) -> Result<Waveform, DecompressError>;
}

/// Default backend: same code path as [`mel_decompress`].
#[derive(Debug, Default)]
pub struct GriffinLimDecompressor;

impl Decompressor for GriffinLimDecompressor {
    fn name(&self) -> &str {
        "griffin-lim"
    }

    fn decompress(&self, mel: &MelSpectrogram) -> Result<Waveform, DecompressError> {
        Ok(mel_decompress(mel))
    }
}

/// Named decompressor plugins with Griffin-Lim pre-registered.
pub struct DecompressorRegistry {
    plugins: BTreeMap<String, Arc<dyn Decompressor>>,
}

impl Default for DecompressorRegistry {
    fn default() -> Self {
        let mut reg = Self {
            plugins: BTreeMap::new(),
        };
        reg.register(Arc::new(GriffinLimDecompressor));
        reg
    }
}

impl DecompressorRegistry {
    pub const DEFAULT: &'static str = "griffin-lim";

    pub fn register(&mut self, plugin: Arc<dyn Decompressor>) {
        self.plugins.insert(plugin.name().to_string(), plugin);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Decompressor>, DecompressError> {
        self.plugins
            .get(name)
            .cloned()
            .ok_or_else(|| DecompressError::UnknownPlugin(name.to_string()))
    }

    pub fn decompress(&self, name: &str, mel: &MelSpectrogram) -> Result<Waveform, DecompressError> {
        self.get(name)?.decompress(mel)
    }
}
