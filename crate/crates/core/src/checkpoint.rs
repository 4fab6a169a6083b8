//! Model checkpoints.
//!
//! All integers little-endian:
//!
//! ```text
//! magic      8 bytes  "SDEPTHCK"
//! version    u32      1
//! config     u32 byte length, then ModelConfig as UTF-8 JSON
//! step       u64      training steps taken
//! count      u32      number of tensors
//! tensor     u32 ndim, ndim x u32 dims, prod(dims) x f32
//! ```
//!
//! Tensors follow the encoder (weight, bias) and then
//! [`HeadParams::tensors`](crate::model::HeadParams::tensors) order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{DepthModel, ModelConfig};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SDEPTHCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: DepthModel,
    pub step: u64,
}

fn tensors(model: &DepthModel) -> Vec<&Tensor<f32>> {
    let mut out: Vec<&Tensor<f32>> = model.encoder.tensors().into_iter().collect();
    out.extend(model.head.tensors());
    out
}

pub fn encode_checkpoint(model: &DepthModel, step: u64) -> Vec<u8> {
    let config = serde_json::to_vec(&model.config).expect("config serialises");
    let ts = tensors(model);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&step.to_le_bytes());
    out.extend_from_slice(&(ts.len() as u32).to_le_bytes());
    for t in ts {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format("checkpoint", "truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {version}")));
    }
    let len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(len)?)
        .map_err(|e| Error::format("checkpoint", format!("config: {e}")))?;
    let step = r.u64()?;
    let mut model = DepthModel::new(config)?;
    let count = r.u32()? as usize;
    let expected = tensors(&model).len();
    if count != expected {
        return Err(Error::format("checkpoint", format!("{count} tensors, config implies {expected}")));
    }
    let mut slots: Vec<&mut Tensor<f32>> = model.encoder.tensors_mut().into_iter().collect();
    slots.extend(model.head.tensors_mut());
    for (i, slot) in slots.into_iter().enumerate() {
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        if shape != slot.shape() {
            return Err(Error::format(
                "checkpoint",
                format!("tensor {i}: shape {shape:?}, expected {:?}", slot.shape()),
            ));
        }
        let raw = r.take(slot.len() * 4)?;
        for (dst, c) in slot.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format("checkpoint", "trailing bytes"));
    }
    Ok(Checkpoint { model, step })
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &DepthModel, step: u64) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(model, step)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
