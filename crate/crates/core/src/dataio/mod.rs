//! Synthetic depth videos and their on-disk form (PFM, binary PPM and a
//! line-oriented manifest).

mod manifest;
mod pfm;
mod ppm;
mod scene;

pub use manifest::{
    load_sequence, read_manifest, write_manifest, write_sequence, FrameFiles, LoadedSequence,
    SequenceManifest, MANIFEST_FILE,
};
pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm};
pub use ppm::{decode_ppm, encode_ppm, read_ppm, write_ppm};
pub use scene::{generate_sequence, GeneratedSequence, MovingObject, Primitive, SceneSpec, MAX_DEPTH};

use crate::error::{Error, Result};

/// Single-channel float image, row-major, top row first.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl FloatMap {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(
                "float map",
                format!("{width}x{height} vs {} values", data.len()),
            ));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Interleaved RGB, values in `[0, 1]`, row-major, top row first.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::shape(
                "rgb image",
                format!("{width}x{height}x3 vs {} values", data.len()),
            ));
        }
        Ok(Self { width, height, data })
    }

    pub fn black(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }
}
