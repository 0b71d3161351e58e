//! Short-time Fourier analysis with the fixed parameters used throughout
//! the pipeline: 1024-point FFT, hop 256, Hann window, centered frames
//! with reflect padding.

use ndarray::Array2;
use rustfft::num_complex::Complex32;
use rustfft::FftPlanner;

use super::{AudioError, Waveform};

pub const N_FFT: usize = 1024;
pub const HOP: usize = 256;
/// One-sided bin count for the 1024-point transform.
pub const N_BINS: usize = N_FFT / 2 + 1;

/// Complex one-sided spectrogram, `[N_BINS x T]` with `T = 1 + len/hop`.
#[derive(Debug, Clone)]
pub struct StftSpec {
    pub bins: Array2<Complex32>,
    pub hop: usize,
    pub window_len: usize,
}

impl StftSpec {
    pub fn frames(&self) -> usize {
        self.bins.ncols()
    }

    pub fn magnitudes(&self) -> Array2<f32> {
        self.bins.mapv(|c| c.norm())
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| {
            let x = std::f32::consts::PI * i as f32 / n as f32;
            x.sin() * x.sin()
        })
        .collect()
}

/// Reflect index without repeating the edge sample, bouncing as needed.
fn reflect_index(i: isize, len: usize) -> usize {
    debug_assert!(len > 0);
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= len as isize {
        j = period - j;
    }
    j as usize
}

fn padded_sample(samples: &[f32], idx: isize) -> f32 {
    samples[reflect_index(idx, samples.len())]
}

/// Forward transform of a standardized waveform.
pub fn stft(wave: &Waveform) -> Result<StftSpec, AudioError> {
    if wave.is_empty() {
        return Err(AudioError::Empty);
    }
    let bins = stft_frames(wave.samples(), &hann_window(N_FFT), N_FFT, HOP);
    Ok(StftSpec {
        bins,
        hop: HOP,
        window_len: N_FFT,
    })
}

/// Windowed one-sided FFT of centered frames. Frame `t` is centered on
/// sample `t * hop`; the signal is reflect-padded by `n_fft / 2` on both
/// sides, giving `1 + len / hop` frames.
pub(crate) fn stft_frames(
    samples: &[f32],
    window: &[f32],
    n_fft: usize,
    hop: usize,
) -> Array2<Complex32> {
    let n_bins = n_fft / 2 + 1;
    let frames = 1 + samples.len() / hop;
    let fft = FftPlanner::<f32>::new().plan_fft_forward(n_fft);
    let mut out = Array2::zeros((n_bins, frames));
    let mut buf = vec![Complex32::new(0.0, 0.0); n_fft];
    let half = n_fft as isize / 2;
    for t in 0..frames {
        let start = t as isize * hop as isize - half;
        for (k, slot) in buf.iter_mut().enumerate() {
            *slot = Complex32::new(padded_sample(samples, start + k as isize) * window[k], 0.0);
        }
        fft.process(&mut buf);
        for b in 0..n_bins {
            out[(b, t)] = buf[b];
        }
    }
    out
}

/// Inverse transform via windowed overlap-add with squared-window
/// normalization. Output length is `(T - 1) * hop` (the center padding is
/// trimmed), optionally zero-padded or cropped to `target_len`.
pub(crate) fn istft(
    spec: &Array2<Complex32>,
    window: &[f32],
    n_fft: usize,
    hop: usize,
    target_len: Option<usize>,
) -> Vec<f32> {
    let n_bins = n_fft / 2 + 1;
    assert_eq!(spec.nrows(), n_bins, "one-sided spectrum expected");
    let frames = spec.ncols();
    let fft = FftPlanner::<f32>::new().plan_fft_inverse(n_fft);

    let ola_len = n_fft + (frames.saturating_sub(1)) * hop;
    let mut acc = vec![0.0f32; ola_len];
    let mut norm = vec![0.0f32; ola_len];
    let mut buf = vec![Complex32::new(0.0, 0.0); n_fft];
    for t in 0..frames {
        for b in 0..n_bins {
            buf[b] = spec[(b, t)];
        }
        for b in n_bins..n_fft {
            buf[b] = spec[(n_fft - b, t)].conj();
        }
        fft.process(&mut buf);
        let offset = t * hop;
        for k in 0..n_fft {
            let v = buf[k].re / n_fft as f32;
            acc[offset + k] += v * window[k];
            norm[offset + k] += window[k] * window[k];
        }
    }
    let half = n_fft / 2;
    let end = ola_len - half;
    let mut out: Vec<f32> = (half..end)
        .map(|k| if norm[k] > 1e-9 { acc[k] / norm[k] } else { 0.0 })
        .collect();
    if let Some(len) = target_len {
        out.resize(len, 0.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frame_count_matches_hop_arithmetic() {
        // Independently counted: one frame per hop plus the centered frame 0.
        for len in [16_000usize, 160_000, 256, 257, 300, 1024] {
            let wave = Waveform::silence(len).fit_to(len);
            let spec = stft(&wave).unwrap();
            assert_eq!(spec.frames(), 1 + len / HOP, "len {len}");
        }
        assert_eq!(stft(&Waveform::silence(16_000)).unwrap().frames(), 63);
        assert_eq!(stft(&Waveform::silence(160_000)).unwrap().frames(), 626);
    }

    #[test]
    fn zero_input_gives_zero_spectrum() {
        let spec = stft(&Waveform::silence(4096)).unwrap();
        assert!(spec.bins.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn stft_is_linear_in_amplitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples: Vec<f32> = (0..8000).map(|_| rng.random_range(-0.4..0.4)).collect();
        let x = Waveform::from_samples(samples.clone()).unwrap();
        let x2 = Waveform::from_samples(samples.iter().map(|s| 2.0 * s).collect()).unwrap();
        let a = stft(&x).unwrap();
        let b = stft(&x2).unwrap();
        let max_mag = a.bins.iter().map(|c| c.norm()).fold(0.0f32, f32::max);
        for (&ca, &cb) in a.bins.iter().zip(b.bins.iter()) {
            let diff = (cb - ca * 2.0).norm();
            assert!(diff <= 1e-5 * max_mag.max(1.0), "diff {diff}");
        }
    }

    #[test]
    fn istft_inverts_stft() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<f32> = (0..6400).map(|_| rng.random_range(-0.8..0.8)).collect();
        let wave = Waveform::from_samples(samples.clone()).unwrap();
        let spec = stft(&wave).unwrap();
        let window = hann_window(N_FFT);
        let rec = istft(&spec.bins, &window, N_FFT, HOP, Some(samples.len()));
        for (i, (a, b)) in samples.iter().zip(rec.iter()).enumerate() {
            assert!((a - b).abs() < 1e-4, "sample {i}: {a} vs {b}");
        }
    }

    #[test]
    fn reflect_padding_bounces() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-4, 5), 4);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(0, 1), 0);
        // Long bounce for signals shorter than the pad amount.
        assert_eq!(reflect_index(-9, 5), 1);
    }
}
