//! `RLDS` dataset container: magic, version, N, D, K as little-endian `u32`,
//! then row-major `f64` inputs and `u16` labels.

use std::fs;
use std::path::Path;

use super::{Dataset, DatasetMeta};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const CONTAINER_MAGIC: &[u8; 4] = b"RLDS";
pub const CONTAINER_VERSION: u32 = 1;

pub fn encode_container(ds: &Dataset) -> Result<Vec<u8>> {
    if ds.k > usize::from(u16::MAX) + 1 {
        return Err(Error::Format(format!("{} classes do not fit u16 labels", ds.k)));
    }
    let mut out = Vec::with_capacity(20 + ds.x.data().len() * 8 + ds.len() * 2);
    out.extend_from_slice(CONTAINER_MAGIC);
    for v in [CONTAINER_VERSION, ds.len() as u32, ds.dim() as u32, ds.k as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in ds.x.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &l in &ds.y {
        out.extend_from_slice(&(l as u16).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_container(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < 20 {
        return Err(Error::Truncated {
            needed: 20,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != CONTAINER_MAGIC {
        return Err(Error::Format(format!("bad container magic {:02x?}", &bytes[..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != CONTAINER_VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let (n, d, k) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let needed = 20 + n * d * 8 + n * 2;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            needed,
            found: bytes.len(),
        });
    }
    let body = &bytes[20..];
    let data: Vec<f64> = body[..n * d * 8]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let y: Vec<usize> = body[n * d * 8..n * d * 8 + n * 2]
        .chunks_exact(2)
        .map(|c| usize::from(u16::from_le_bytes([c[0], c[1]])))
        .collect();
    let x = Matrix::from_vec_finite(n, d, data)?;
    Dataset::new(x, y, k, DatasetMeta::default())
}

pub fn write_container(path: &Path, ds: &Dataset) -> Result<()> {
    fs::write(path, encode_container(ds)?)?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<Dataset> {
    let mut ds = decode_container(&fs::read(path)?)?;
    ds.meta.name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(ds)
}
