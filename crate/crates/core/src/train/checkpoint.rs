//! Binary checkpoint format: magic `THII`, little-endian, 64-bit offsets.
//!
//! Layout:
//! ```text
//! magic[4] version:u32
//! config_len:u32 config[..]          (canonical TrainConfig document)
//! floor_db:f32 ref_mag:f32 stft_scale:f32
//! depth:u32
//! tensor_count:u64
//!   { name_len:u16 name[..] dtype:u8 ndim:u8 dims:u64[ndim]
//!     offset:u64 byte_len:u64 } * tensor_count
//! payload_len:u64 payload[..]
//! ```
//! Tensor offsets index into the payload and must be strictly increasing.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use super::config::{ConfigError, TrainConfig};
use crate::audio::MelNorm;
use crate::inn::InnStack;
use crate::nested::{NestedError, NestedStack};

const MAGIC: &[u8; 4] = b"THII";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("corrupt checkpoint header: {0}")]
    CorruptHeader(String),
    #[error("unsupported checkpoint version {0}")]
    UnknownVersion(u32),
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A trained model plus everything needed to run it: config snapshot,
/// normalization scales and per-layer weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub norm: MelNorm,
    pub stft_scale: f32,
    /// Layer stacks; index 0 embeds into the image.
    pub stacks: Vec<InnStack<f32>>,
}

impl Checkpoint {
    pub fn for_stack(
        config: TrainConfig,
        norm: MelNorm,
        stft_scale: f32,
        stack: InnStack<f32>,
    ) -> Self {
        Self {
            config,
            norm,
            stft_scale,
            stacks: vec![stack],
        }
    }

    pub fn for_nested(
        config: TrainConfig,
        norm: MelNorm,
        stft_scale: f32,
        nested: &NestedStack<f32>,
    ) -> Self {
        Self {
            config,
            norm,
            stft_scale,
            stacks: nested.layers().to_vec(),
        }
    }

    pub fn depth(&self) -> usize {
        self.stacks.len()
    }

    pub fn stack(&self) -> &InnStack<f32> {
        &self.stacks[0]
    }

    pub fn secret_channels(&self) -> usize {
        self.stacks[0].secret_channels()
    }

    pub fn nested(&self) -> Result<NestedStack<f32>, NestedError> {
        NestedStack::new(self.stacks.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let config = self.config.to_document().into_bytes();
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(&config);
        out.extend_from_slice(&self.norm.floor_db.to_le_bytes());
        out.extend_from_slice(&self.norm.ref_mag.to_le_bytes());
        out.extend_from_slice(&self.stft_scale.to_le_bytes());
        out.extend_from_slice(&(self.stacks.len() as u32).to_le_bytes());

        // Build the table and payload together.
        let mut table = Vec::new();
        let mut payload: Vec<u8> = Vec::new();
        let mut count: u64 = 0;
        for (layer, stack) in self.stacks.iter().enumerate() {
            for (name, shape, data) in stack.params() {
                let name = format!("layer{layer}.{name}");
                table.extend_from_slice(&(name.len() as u16).to_le_bytes());
                table.extend_from_slice(name.as_bytes());
                table.push(DTYPE_F32);
                table.push(shape.len() as u8);
                for d in &shape {
                    table.extend_from_slice(&(*d as u64).to_le_bytes());
                }
                table.extend_from_slice(&(payload.len() as u64).to_le_bytes());
                table.extend_from_slice(&((data.len() * 4) as u64).to_le_bytes());
                for v in data {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
                count += 1;
            }
        }
        out.extend_from_slice(&count.to_le_bytes());
        out.extend_from_slice(&table);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(CheckpointError::CorruptHeader(format!(
                "bad magic {magic:02x?}"
            )));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::UnknownVersion(version));
        }
        let config_len = r.u32("config length")? as usize;
        let config_bytes = r.take(config_len, "config document")?;
        let config_text = std::str::from_utf8(config_bytes)
            .map_err(|e| CheckpointError::Corrupt(format!("config not utf-8: {e}")))?;
        let config = TrainConfig::parse_document(config_text)?;
        let norm = MelNorm {
            floor_db: r.f32("floor_db")?,
            ref_mag: r.f32("ref_mag")?,
        };
        let stft_scale = r.f32("stft_scale")?;
        let depth = r.u32("depth")? as usize;
        if depth == 0 || depth > crate::nested::MAX_DEPTH {
            return Err(CheckpointError::Corrupt(format!("bad depth {depth}")));
        }
        let count = r.u64("tensor count")?;

        struct Entry {
            dims: Vec<usize>,
            offset: u64,
            byte_len: u64,
        }
        let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
        let mut last_offset: Option<u64> = None;
        for i in 0..count {
            let name_len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|e| CheckpointError::Corrupt(format!("name not utf-8: {e}")))?
                .to_string();
            let dtype = r.u8("dtype")?;
            if dtype != DTYPE_F32 {
                return Err(CheckpointError::Corrupt(format!(
                    "tensor '{name}' has unsupported dtype {dtype}"
                )));
            }
            let ndim = r.u8("ndim")? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u64("dim")? as usize);
            }
            let offset = r.u64("offset")?;
            let byte_len = r.u64("byte length")?;
            if let Some(prev) = last_offset {
                if offset <= prev {
                    return Err(CheckpointError::Corrupt(format!(
                        "tensor {i} offset {offset} not strictly increasing (prev {prev})"
                    )));
                }
            }
            last_offset = Some(offset);
            let numel: usize = dims.iter().product();
            if numel * 4 != byte_len as usize {
                return Err(CheckpointError::Corrupt(format!(
                    "tensor '{name}' shape {dims:?} disagrees with byte length {byte_len}"
                )));
            }
            entries.insert(name, Entry { dims, offset, byte_len });
        }
        let payload_len = r.u64("payload length")? as usize;
        let payload = r.take(payload_len, "payload")?;
        for (name, e) in &entries {
            if e.offset as usize + e.byte_len as usize > payload.len() {
                return Err(CheckpointError::Truncated(format!(
                    "tensor '{name}' extends past payload end"
                )));
            }
        }

        let read_tensor = |name: &str| -> Result<(Vec<usize>, Vec<f32>), CheckpointError> {
            let e = entries
                .get(name)
                .ok_or_else(|| CheckpointError::Corrupt(format!("missing tensor '{name}'")))?;
            let start = e.offset as usize;
            let data = payload[start..start + e.byte_len as usize]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            Ok((e.dims.clone(), data))
        };

        let mut stacks = Vec::with_capacity(depth);
        for layer in 0..depth {
            stacks.push(load_stack(layer, &read_tensor)?);
        }
        let loaded = entries.len();
        let expected: usize = stacks.iter().map(|s| s.params().len()).sum();
        if loaded != expected {
            return Err(CheckpointError::Corrupt(format!(
                "{loaded} tensors in file, {expected} expected for depth {depth}"
            )));
        }
        Ok(Self {
            config,
            norm,
            stft_scale,
            stacks,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

fn load_stack(
    layer: usize,
    read_tensor: &dyn Fn(&str) -> Result<(Vec<usize>, Vec<f32>), CheckpointError>,
) -> Result<InnStack<f32>, CheckpointError> {
    // Structure is inferred from block0's tensors.
    let (w1, _) = read_tensor(&format!("layer{layer}.block0.e1.conv1.weight"))?;
    let (w2, _) = read_tensor(&format!("layer{layer}.block0.e1.conv2.weight"))?;
    let (hidden, secret_ch) = (w1[0], w1[1]);
    let cover_ch = w2[0];
    let mut blocks = 0;
    while read_tensor(&format!("layer{layer}.block{blocks}.e1.conv1.weight")).is_ok() {
        blocks += 1;
    }
    let mut stack = InnStack::<f32>::with_shape(cover_ch, secret_ch, hidden, blocks);
    let names: Vec<String> = stack
        .params()
        .iter()
        .map(|(n, _, _)| format!("layer{layer}.{n}"))
        .collect();
    let shapes: Vec<Vec<usize>> = stack.params().iter().map(|(_, s, _)| s.clone()).collect();
    for ((slot, name), shape) in stack.params_mut().into_iter().zip(&names).zip(&shapes) {
        let (dims, data) = read_tensor(name)?;
        if &dims != shape {
            return Err(CheckpointError::Corrupt(format!(
                "tensor '{name}' has shape {dims:?}, expected {shape:?}"
            )));
        }
        slot.copy_from_slice(&data);
    }
    Ok(stack)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated(format!(
                "{what} needs {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32, CheckpointError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}
