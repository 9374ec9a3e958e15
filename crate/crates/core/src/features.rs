//! Per-frame feature matrices and the WSLF binary container.
//!
//! Layout (all little-endian):
//!
//! | offset | size      | field                         |
//! |--------|-----------|-------------------------------|
//! | 0      | 4         | magic `b"WSLF"`               |
//! | 4      | 4         | `u32` version (1)             |
//! | 8      | 4         | `u32` frame count `T`         |
//! | 12     | 4         | `u32` feature dimension `Dv`  |
//! | 16     | `4*T*Dv`  | `f32` values, row-major       |
//!
//! Values are widened to `f64` on load.

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"WSLF";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

/// `T x D` matrix of per-frame features for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frames: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureSequence {
    pub fn new(frames: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || dim == 0 {
            return Err(Error::shape("features", format!("empty sequence {frames}x{dim}")));
        }
        if data.len() != frames * dim {
            return Err(Error::shape(
                "features",
                format!("{frames}x{dim} needs {} values, got {}", frames * dim, data.len()),
            ));
        }
        Ok(Self { frames, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let t = Tensor::from_rows(rows)?;
        Self::new(rows.len(), t.last_dim(), t.into_data())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.frames, self.dim, self.data.clone()).expect("validated shape")
    }

    /// Mean of frames `start..end`.
    pub fn mean(&self, start: usize, end: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for r in start..end {
            for (a, v) in acc.iter_mut().zip(self.row(r)) {
                *a += v;
            }
        }
        let count = (end - start) as f64;
        acc.iter_mut().for_each(|a| *a /= count);
        acc
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            frames: self.frames,
            dim: self.dim,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    /// Parses a WSLF buffer; `origin` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(origin, format!("truncated header ({} bytes)", bytes.len())));
        }
        if bytes[..4] != MAGIC {
            return Err(Error::format(origin, "bad magic, expected WSLF"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != VERSION {
            return Err(Error::format(origin, format!("unsupported version {version}")));
        }
        let (frames, dim) = (word(8) as usize, word(12) as usize);
        let expected = HEADER_LEN + 4 * frames * dim;
        if bytes.len() != expected {
            return Err(Error::format(
                origin,
                format!(
                    "truncated or oversized payload: {} bytes for {frames}x{dim}, expected {expected}",
                    bytes.len()
                ),
            ));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Self::new(frames, dim, data).map_err(|e| Error::format(origin, e.to_string()))
    }

    /// Rounds every value through `f32`, matching what a save/load cycle yields.
    pub fn quantized(mut self) -> Self {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
        self
    }
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureSequence::from_bytes(&bytes, path)
}

pub fn save_features(path: impl AsRef<Path>, features: &FeatureSequence) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, features.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads only the `(T, Dv)` header of a WSLF file.
pub fn read_header(path: impl AsRef<Path>) -> Result<(usize, usize)> {
    use std::io::Read;
    let path = path.as_ref();
    let mut head = [0u8; HEADER_LEN];
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    file.read_exact(&mut head)
        .map_err(|_| Error::format(path, "truncated header"))?;
    if head[..4] != MAGIC {
        return Err(Error::format(path, "bad magic, expected WSLF"));
    }
    let word = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().unwrap()) as usize;
    Ok((word(8), word(12)))
}
