//! Binary parameter checkpoints.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic   b"WSLC"
//! u32     version (1)
//! u32     entry count E
//! E x {   u32 name length, UTF-8 name, u32 rows, u32 cols }
//! f64 x sum(rows*cols), entries in header order, each row-major
//! ```
//!
//! Entries are `<layer>.weight` (`out x in`) and `<layer>.bias` (`out x 1`)
//! for the layers in [`LAYER_NAMES`] order.

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{ModelDims, ModelParams, LAYER_NAMES};

pub const MAGIC: [u8; 4] = *b"WSLC";
pub const VERSION: u32 = 1;

pub fn to_bytes(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&((LAYER_NAMES.len() * 2) as u32).to_le_bytes());
    for (name, layer) in LAYER_NAMES.iter().zip(params.layers()) {
        for (suffix, rows, cols) in [
            ("weight", layer.out_dim(), layer.in_dim()),
            ("bias", layer.out_dim(), 1),
        ] {
            let full = format!("{name}.{suffix}");
            out.extend_from_slice(&(full.len() as u32).to_le_bytes());
            out.extend_from_slice(full.as_bytes());
            out.extend_from_slice(&(rows as u32).to_le_bytes());
            out.extend_from_slice(&(cols as u32).to_le_bytes());
        }
    }
    for t in params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(Error::format(path, "bad magic, expected WSLC"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()?;
    if count != LAYER_NAMES.len() * 2 {
        return Err(Error::format(path, format!("expected 14 entries, found {count}")));
    }
    let mut header = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(path, "entry name is not UTF-8"))?
            .to_string();
        let rows = r.u32()?;
        let cols = r.u32()?;
        header.push((name, rows, cols));
    }
    for (i, (name, ..)) in header.iter().enumerate() {
        let expected = format!("{}.{}", LAYER_NAMES[i / 2], if i % 2 == 0 { "weight" } else { "bias" });
        if *name != expected {
            return Err(Error::format(path, format!("entry {i} is {name:?}, expected {expected:?}")));
        }
    }

    let shape = |i: usize| (header[i].1, header[i].2);
    let (d, width) = shape(0);
    let (_, query) = shape(2);
    let (h, _) = shape(6);
    if width < 2 || width % 2 != 0 {
        return Err(Error::format(path, format!("visual input width {width} is not 2*Dv+2")));
    }
    let dims = ModelDims::new((width - 2) / 2, query, d, h);
    let mut params = ModelParams::zeros(dims).map_err(|e| Error::format(path, e.to_string()))?;
    let tensors = params.tensors_mut();
    for (i, t) in tensors.into_iter().enumerate() {
        let (rows, cols) = shape(i);
        let expected = if t.rank() == 2 {
            (t.shape()[0], t.shape()[1])
        } else {
            (t.shape()[0], 1)
        };
        if (rows, cols) != expected {
            return Err(Error::format(
                path,
                format!("{} is {rows}x{cols}, expected {}x{}", header[i].0, expected.0, expected.1),
            ));
        }
        let raw = r.take(8 * rows * cols)?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        *t = Tensor::new(t.shape().to_vec(), values)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after checkpoint data"));
    }
    Ok(params)
}

pub fn save(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}
