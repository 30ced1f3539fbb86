//! IDX files: big-endian magic `00 00 <type> <ndim>`, then `ndim` big-endian
//! `u32` sizes, then the row-major payload.

use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Scalar;

const TYPE_U8: u8 = 0x08;

/// Raw unsigned-byte IDX contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub bytes: Vec<u8>,
}

fn parse_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.into(),
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn parse_idx(path: &Path, raw: &[u8]) -> Result<IdxArray> {
    if raw.len() < 4 {
        return Err(parse_err(path, raw.len(), format!("expected 4-byte magic, file has {} bytes", raw.len())));
    }
    if raw[0] != 0 || raw[1] != 0 {
        return Err(parse_err(path, 0, format!("bad magic {:02x}{:02x}, expected 0000", raw[0], raw[1])));
    }
    if raw[2] != TYPE_U8 {
        return Err(parse_err(path, 2, format!("unsupported element type 0x{:02x}, only unsigned bytes (0x08)", raw[2])));
    }
    let ndim = raw[3] as usize;
    let header = 4 + 4 * ndim;
    if raw.len() < header {
        return Err(parse_err(
            path,
            raw.len(),
            format!("truncated header: expected {header} bytes, found {}", raw.len()),
        ));
    }
    let dims: Vec<usize> = raw[4..header]
        .chunks_exact(4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize)
        .collect();
    let expected = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let expected = expected.ok_or_else(|| parse_err(path, 4, "dimension product overflows"))?;
    let actual = raw.len() - header;
    if actual != expected {
        return Err(parse_err(
            path,
            header,
            format!("payload length mismatch: expected {expected} bytes, found {actual}"),
        ));
    }
    Ok(IdxArray {
        dims,
        bytes: raw[header..].to_vec(),
    })
}

pub fn load_idx_raw(path: &Path) -> Result<IdxArray> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(path, &raw)
}

/// Tensor with the header's dimensions and bytes scaled to `[0, 1]`.
pub fn load_idx<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let a = load_idx_raw(path)?;
    let scale = T::lit(1.0 / 255.0);
    Tensor::new(a.dims, a.bytes.iter().map(|&b| T::lit(b as f64) * scale).collect())
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let a = load_idx_raw(path)?;
    if a.dims.len() != 1 {
        return Err(parse_err(path, 3, format!("label file must be 1-dimensional, found {} dims", a.dims.len())));
    }
    Ok(a.bytes.iter().map(|&b| b as usize).collect())
}

/// Images `[N, H, W]` become `[N, 1, H, W]`; `k` is the largest label plus one.
pub fn load_mnist<T: Scalar>(images: &Path, labels: &Path, d: usize) -> Result<Dataset<T>> {
    let x = load_idx::<T>(images)?;
    let y = load_idx_labels(labels)?;
    let shape = x.shape().to_vec();
    let x = match shape.len() {
        3 => x.reshape(vec![shape[0], 1, shape[1], shape[2]])?,
        _ => x,
    };
    let k = y.iter().max().map_or(0, |&m| m + 1);
    Dataset::new(x, y, k, d)
}
