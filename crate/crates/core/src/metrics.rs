//! Image- and audio-quality measurement plus the capacity-sweep harness
//! that tabulates container distortion against hidden-clip length.

use ndarray::{Array2, Array3};
use thiserror::Error;

use crate::audio::{mel_decompress, stft, Waveform, HOP};
use crate::data::{make_pair, CorpusIndex, DatasetError, PackContext, Split};
use crate::nested::AccessLevel;
use crate::pack::{unpack_mel, unpack_raw, unpack_stft_to_wave, PackGeometry, SecretFormat};
use crate::train::{quantize_unit, Checkpoint, DurationRange};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("image {h}x{w} smaller than the {win}x{win} analysis window")]
    WindowTooLarge { h: usize, w: usize, win: usize },
    #[error("waveforms do not overlap")]
    EmptyOverlap,
    #[error("no checkpoint covers duration range {0}")]
    MissingCheckpoint(String),
    #[error("bad report document: {0}")]
    BadReport(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{0}")]
    Pipeline(String),
}

/// Peak signal-to-noise ratio in dB over unit-range images, capped at
/// 100 dB so identical inputs stay finite.
pub fn psnr(a: &Array3<f32>, b: &Array3<f32>) -> Result<f64, MetricsError> {
    if a.dim() != b.dim() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = (*x - *y) as f64;
        acc += d * d;
    }
    let mse = acc / a.len() as f64;
    if mse == 0.0 {
        return Ok(100.0);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(100.0))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

fn to_luma(img: &Array3<f32>) -> Result<Array2<f64>, MetricsError> {
    let (c, h, w) = img.dim();
    match c {
        1 => Ok(img.index_axis(ndarray::Axis(0), 0).mapv(|v| v as f64)),
        3 => {
            let mut out = Array2::zeros((h, w));
            for y in 0..h {
                for x in 0..w {
                    out[(y, x)] = 0.299 * img[(0, y, x)] as f64
                        + 0.587 * img[(1, y, x)] as f64
                        + 0.114 * img[(2, y, x)] as f64;
                }
            }
            Ok(out)
        }
        other => Err(MetricsError::ShapeMismatch(format!(
            "ssim expects 1 or 3 channels, got {other}"
        ))),
    }
}

/// Separable Gaussian blur with valid-mode output.
fn blur_valid(img: &Array2<f64>) -> Array2<f64> {
    let k = gaussian_kernel();
    let (h, w) = img.dim();
    let wo = w - SSIM_WINDOW + 1;
    let ho = h - SSIM_WINDOW + 1;
    let mut horiz = Array2::zeros((h, wo));
    for y in 0..h {
        for x in 0..wo {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * img[(y, x + i)];
            }
            horiz[(y, x)] = acc;
        }
    }
    let mut out = Array2::zeros((ho, wo));
    for y in 0..ho {
        for x in 0..wo {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * horiz[(y + i, x)];
            }
            out[(y, x)] = acc;
        }
    }
    out
}

/// Structural similarity over the luma plane: 11x11 Gaussian window
/// (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1, averaged over all
/// valid windows.
pub fn ssim(a: &Array3<f32>, b: &Array3<f32>) -> Result<f64, MetricsError> {
    if a.dim() != b.dim() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let (_, h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricsError::WindowTooLarge {
            h,
            w,
            win: SSIM_WINDOW,
        });
    }
    let x = to_luma(a)?;
    let y = to_luma(b)?;
    let mu_x = blur_valid(&x);
    let mu_y = blur_valid(&y);
    let xx = blur_valid(&(&x * &x));
    let yy = blur_valid(&(&y * &y));
    let xy = blur_valid(&(&x * &y));

    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut acc = 0.0;
    let n = mu_x.len() as f64;
    for idx in ndarray::indices(mu_x.dim()) {
        let (mx, my) = (mu_x[idx], mu_y[idx]);
        let vx = xx[idx] - mx * mx;
        let vy = yy[idx] - my * my;
        let cov = xy[idx] - mx * my;
        let s = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
            / ((mx * mx + my * my + c1) * (vx + vy + c2));
        acc += s;
    }
    Ok(acc / n)
}

/// Log-spectral distance in dB: RMS over frames of the per-frame RMS
/// difference of log-magnitude spectra. Magnitudes are floored 50 dB
/// below each signal's own spectral peak, so a uniform gain shows up
/// exactly while numerical noise floors do not dominate.
pub fn lsd(a: &Waveform, b: &Waveform) -> Result<f64, MetricsError> {
    let n = a.len().min(b.len());
    if n < HOP {
        return Err(MetricsError::EmptyOverlap);
    }
    let trim = |w: &Waveform| Waveform::from_samples(w.samples()[..n].to_vec()).unwrap();
    let sa = stft(&trim(a)).map_err(|e| MetricsError::Pipeline(e.to_string()))?;
    let sb = stft(&trim(b)).map_err(|e| MetricsError::Pipeline(e.to_string()))?;
    let ma = sa.magnitudes();
    let mb = sb.magnitudes();

    let peak = |m: &Array2<f32>| m.iter().fold(0.0f32, |acc, &v| acc.max(v)) as f64;
    let (pa, pb) = (peak(&ma), peak(&mb));
    if pa == 0.0 && pb == 0.0 {
        return Ok(0.0);
    }
    let floor_a = (pa * 10f64.powf(-50.0 / 20.0)).max(1e-12);
    let floor_b = (pb * 10f64.powf(-50.0 / 20.0)).max(1e-12);

    let frames = ma.ncols();
    let bins = ma.nrows();
    let mut frame_sq = 0.0f64;
    for t in 0..frames {
        let mut acc = 0.0f64;
        for f in 0..bins {
            let da = 20.0 * (ma[(f, t)] as f64).max(floor_a).log10();
            let db = 20.0 * (mb[(f, t)] as f64).max(floor_b).log10();
            let d = da - db;
            acc += d * d;
        }
        frame_sq += acc / bins as f64;
    }
    Ok((frame_sq / frames as f64).sqrt())
}

/// Rounds to six significant digits; report rows store pre-rounded
/// values so formatting round-trips bit-exactly.
pub fn round_sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let exp = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(5 - exp);
    (x * scale).round() / scale
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub range: DurationRange,
    pub format: SecretFormat,
    pub layer: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub lsd_db: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QualityReport {
    pub rows: Vec<ReportRow>,
}

impl QualityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("range_s,format,layer,psnr_db,ssim,lsd_db,n_samples\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.range, r.format, r.layer, r.psnr_db, r.ssim, r.lsd_db, r.n_samples
            ));
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self, MetricsError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| {
            MetricsError::BadReport("empty document".into())
        })?;
        if header != "range_s,format,layer,psnr_db,ssim,lsd_db,n_samples" {
            return Err(MetricsError::BadReport(format!("bad header '{header}'")));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(MetricsError::BadReport(format!(
                    "row {} has {} fields",
                    i + 2,
                    fields.len()
                )));
            }
            let bad = |what: &str| MetricsError::BadReport(format!("row {}: bad {what}", i + 2));
            rows.push(ReportRow {
                range: fields[0].parse().map_err(|_| bad("range"))?,
                format: fields[1].parse().map_err(|_| bad("format"))?,
                layer: fields[2].parse().map_err(|_| bad("layer"))?,
                psnr_db: fields[3].parse().map_err(|_| bad("psnr"))?,
                ssim: fields[4].parse().map_err(|_| bad("ssim"))?,
                lsd_db: fields[5].parse().map_err(|_| bad("lsd"))?,
                n_samples: fields[6].parse().map_err(|_| bad("n_samples"))?,
            });
        }
        Ok(Self { rows })
    }

    /// Aligned text table carrying exactly the CSV values.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10} {:<6} {:<5} {:>10} {:>8} {:>8} {:>9}\n",
            "range_s", "format", "layer", "psnr_db", "ssim", "lsd_db", "n_samples"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<10} {:<6} {:<5} {:>10} {:>8} {:>8} {:>9}\n",
                r.range.to_string(),
                r.format.to_string(),
                r.layer,
                r.psnr_db,
                r.ssim,
                r.lsd_db,
                r.n_samples
            ));
        }
        out
    }
}

/// Evaluates checkpoints over the test split, one row per duration range
/// and layer: container PSNR/SSIM against the cover image and revealed-
/// audio LSD against the clip that was embedded. Containers are 8-bit
/// quantized first, matching the deployed export path.
pub fn capacity_sweep(
    checkpoints: &[&Checkpoint],
    index: &CorpusIndex,
    ranges: &[DurationRange],
    samples_per_range: usize,
) -> Result<QualityReport, MetricsError> {
    let mut rows = Vec::new();
    for &range in ranges {
        let ckpt = checkpoints
            .iter()
            .find(|c| {
                let r = c.config.duration_range_s;
                (r.min_s - range.min_s).abs() < 1e-9 && (r.max_s - range.max_s).abs() < 1e-9
            })
            .ok_or_else(|| MetricsError::MissingCheckpoint(range.to_string()))?;
        rows.extend(sweep_one(ckpt, index, range, samples_per_range)?);
    }
    Ok(QualityReport { rows })
}

fn sweep_one(
    ckpt: &Checkpoint,
    index: &CorpusIndex,
    range: DurationRange,
    samples: usize,
) -> Result<Vec<ReportRow>, MetricsError> {
    let cfg = &ckpt.config;
    let geom = PackGeometry::square(cfg.image_size);
    let ctx = PackContext {
        format: cfg.format,
        norm: ckpt.norm,
        stft_scale: ckpt.stft_scale,
    };
    let depth = ckpt.depth();
    let nested = ckpt
        .nested()
        .map_err(|e| MetricsError::Pipeline(e.to_string()))?;

    let mut psnr_acc = 0.0;
    let mut ssim_acc = 0.0;
    let mut lsd_acc = vec![0.0f64; depth];
    let mut used = 0usize;
    for s in 0..samples.max(1) {
        // Per-layer clips; every layer draws from the shared range.
        let mut packed_layers = Vec::with_capacity(depth);
        let mut image = None;
        for layer in 0..depth {
            let (img, packed) = make_pair(
                index,
                Split::Test,
                s + layer * 131,
                range,
                geom,
                &ctx,
                0xEEA1 ^ (s as u64) << 8 ^ layer as u64,
            )?;
            if layer == 0 {
                image = Some(img);
            }
            packed_layers.push(packed);
        }
        let image = image.unwrap();
        let tensors: Vec<_> = packed_layers.iter().map(|p| p.tensor.clone()).collect();
        let container = nested
            .encode(&image, &tensors)
            .map_err(|e| MetricsError::Pipeline(e.to_string()))?
            .container
            .mapv(quantize_unit);

        psnr_acc += psnr(&container, &image)?;
        ssim_acc += ssim(&container, &image)?;

        let pairs = nested
            .decode(&container, AccessLevel(depth))
            .map_err(|e| MetricsError::Pipeline(e.to_string()))?;
        for (layer, (secret_est, _)) in pairs.iter().enumerate() {
            let mut revealed = packed_layers[layer].clone();
            revealed.tensor = secret_est.mapv(|v| v.clamp(0.0, 1.0));
            let audio_est = decode_packed_audio(&revealed)?;
            let reference = decode_packed_audio(&packed_layers[layer])?;
            lsd_acc[layer] += lsd(&reference, &audio_est)?;
        }
        used += 1;
    }

    let n = used as f64;
    Ok((0..depth)
        .map(|layer| ReportRow {
            range,
            format: cfg.format,
            layer: layer + 1,
            psnr_db: round_sig6(psnr_acc / n),
            ssim: round_sig6(ssim_acc / n),
            lsd_db: round_sig6(lsd_acc[layer] / n),
            n_samples: used,
        })
        .collect())
}

/// Decodes a packed secret back to audio along its format's path.
pub fn decode_packed_audio(packed: &crate::pack::PackedSecret) -> Result<Waveform, MetricsError> {
    let err = |e: crate::pack::PackError| MetricsError::Pipeline(e.to_string());
    match packed.format {
        SecretFormat::Mel => Ok(mel_decompress(&unpack_mel(packed).map_err(err)?)),
        SecretFormat::Raw => unpack_raw(packed).map_err(err),
        SecretFormat::Stft => unpack_stft_to_wave(packed).map_err(err),
    }
}
