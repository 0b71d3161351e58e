//! Container images on disk: 8-bit RGB PNG with an optional metadata
//! text chunk (format, channel count, per-layer clip durations). The
//! float-to-8-bit rounding here is part of the deployed reveal path.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::str::FromStr;

use audiohide_core::pack::SecretFormat;
use ndarray::Array3;

use crate::errors::CliError;

pub const META_KEYWORD: &str = "audiohide";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContainerMeta {
    pub format: SecretFormat,
    pub channels: usize,
    /// One entry per nesting layer, level 1 first.
    pub durations_samples: Vec<usize>,
}

impl ContainerMeta {
    pub fn to_text(&self) -> String {
        let durations: Vec<String> = self
            .durations_samples
            .iter()
            .map(|d| d.to_string())
            .collect();
        format!(
            "v=1;format={};c={};durations={}",
            self.format,
            self.channels,
            durations.join("+")
        )
    }

    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let mut format = None;
        let mut channels = None;
        let mut durations = None;
        for part in text.split(';') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| CliError::Data(format!("bad metadata field '{part}'")))?;
            match k {
                "v" => {
                    if v != "1" {
                        return Err(CliError::Data(format!("unsupported metadata version {v}")));
                    }
                }
                "format" => {
                    format = Some(SecretFormat::from_str(v).map_err(CliError::Data)?);
                }
                "c" => {
                    channels =
                        Some(v.parse().map_err(|_| {
                            CliError::Data(format!("bad channel count '{v}' in metadata"))
                        })?)
                }
                "durations" => {
                    let parsed: Result<Vec<usize>, _> =
                        v.split('+').map(|d| d.parse::<usize>()).collect();
                    durations = Some(parsed.map_err(|_| {
                        CliError::Data(format!("bad durations '{v}' in metadata"))
                    })?);
                }
                other => return Err(CliError::Data(format!("unknown metadata key '{other}'"))),
            }
        }
        Ok(Self {
            format: format.ok_or_else(|| CliError::Data("metadata missing format".into()))?,
            channels: channels.ok_or_else(|| CliError::Data("metadata missing c".into()))?,
            durations_samples: durations
                .ok_or_else(|| CliError::Data("metadata missing durations".into()))?,
        })
    }
}

fn to_rgb8(tensor: &Array3<f32>) -> Result<(u32, u32, Vec<u8>), CliError> {
    let (c, h, w) = tensor.dim();
    if c != 3 {
        return Err(CliError::Data(format!(
            "container tensor has {c} channels, expected 3"
        )));
    }
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let v = tensor[(ch, y, x)].clamp(0.0, 1.0);
                data.push((v * 255.0).round() as u8);
            }
        }
    }
    Ok((w as u32, h as u32, data))
}

/// Encodes the container to PNG bytes; the caller writes them atomically.
pub fn encode_container_png(
    tensor: &Array3<f32>,
    meta: Option<&ContainerMeta>,
) -> Result<Vec<u8>, CliError> {
    let (w, h, data) = to_rgb8(tensor)?;
    let mut bytes = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut bytes, w, h);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        if let Some(meta) = meta {
            encoder
                .add_text_chunk(META_KEYWORD.to_string(), meta.to_text())
                .map_err(|e| CliError::Data(format!("metadata chunk: {e}")))?;
        }
        let mut writer = encoder
            .write_header()
            .map_err(|e| CliError::Data(format!("png header: {e}")))?;
        writer
            .write_image_data(&data)
            .map_err(|e| CliError::Data(format!("png data: {e}")))?;
    }
    Ok(bytes)
}

/// Reads a container PNG back to a unit-range tensor plus any metadata.
pub fn read_container_png(path: &Path) -> Result<(Array3<f32>, Option<ContainerMeta>), CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(CliError::Data(format!(
            "{}: expected 8-bit RGB, got {:?}/{:?}",
            path.display(),
            info.color_type,
            info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut tensor = Array3::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                tensor[(ch, y, x)] = buf[(y * w + x) * 3 + ch] as f32 / 255.0;
            }
        }
    }
    let meta = reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .find(|t| t.keyword == META_KEYWORD)
        .map(|t| ContainerMeta::from_text(&t.text))
        .transpose()?;
    Ok((tensor, meta))
}

/// Writes bytes through a temp file and a rename, so failures leave no
/// partial output behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_file_name(format!(
        ".{}.tmp{}",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into()),
        std::process::id()
    ));
    let write = |p: &Path| -> std::io::Result<()> {
        let mut f = BufWriter::new(File::create(p)?);
        std::io::Write::write_all(&mut f, bytes)?;
        std::io::Write::flush(&mut f)?;
        Ok(())
    };
    match write(&tmp).and_then(|_| std::fs::rename(&tmp, path)) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(CliError::Data(format!(
                "cannot write {}: {e}",
                path.display()
            )))
        }
    }
}
