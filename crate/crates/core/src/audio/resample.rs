//! Polyphase-style windowed-sinc resampler used to standardize ingested
//! audio to 16 kHz.

use std::f64::consts::PI;

/// Half-width of the sinc kernel in input samples.
const HALF_TAPS: usize = 24;

/// Resamples `input` from `from_rate` to `to_rate` with a Blackman-windowed
/// sinc kernel. The kernel cutoff tracks the lower of the two Nyquist
/// frequencies, so downsampling is anti-aliased.
pub fn resample(input: &[f32], from_rate: u32, to_rate: u32) -> Vec<f32> {
    if from_rate == to_rate || input.is_empty() {
        return input.to_vec();
    }
    let ratio = to_rate as f64 / from_rate as f64;
    let out_len = (input.len() as f64 * ratio).ceil() as usize;
    // Cutoff in cycles per input sample.
    let cutoff = 0.5 * ratio.min(1.0);
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let center = n as f64 / ratio;
        let i0 = center.floor() as isize - HALF_TAPS as isize + 1;
        let mut acc = 0.0f64;
        let mut norm = 0.0f64;
        for i in i0..i0 + 2 * HALF_TAPS as isize {
            let t = center - i as f64;
            let w = kernel(t, cutoff);
            norm += w;
            if i >= 0 && (i as usize) < input.len() {
                acc += w * input[i as usize] as f64;
            }
        }
        out.push(if norm > 0.0 { (acc / norm) as f32 } else { 0.0 });
    }
    out
}

fn kernel(t: f64, cutoff: f64) -> f64 {
    let x = 2.0 * cutoff * t;
    let sinc = if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    };
    // Blackman window over [-HALF_TAPS, HALF_TAPS].
    let u = t / HALF_TAPS as f64;
    if u.abs() >= 1.0 {
        return 0.0;
    }
    let w = 0.42 + 0.5 * (PI * u).cos() + 0.08 * (2.0 * PI * u).cos();
    2.0 * cutoff * sinc * w
}
