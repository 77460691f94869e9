//! KTEN: a minimal little-endian tensor container.
//!
//! ```text
//! b"KTEN" | version: u8 = 1 | order K: u8 | K x dim: u32 | prod(dims) x f64
//! ```
//!
//! Values are vec-ordered (first index fastest). A factor set is a plain
//! concatenation of square order-2 records, one per mode.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, KtenError, Result};
use crate::tensor::{DenseTensor, SylvesterFactors};

pub const MAGIC: [u8; 4] = *b"KTEN";
pub const VERSION: u8 = 1;

/// Serializes one tensor.
pub fn encode(t: &DenseTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 4 * t.order() + 8 * t.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(u8::try_from(t.order()).expect("tensor order fits in a byte"));
    for &d in t.dims() {
        out.extend_from_slice(&u32::try_from(d).expect("dimension fits in u32").to_le_bytes());
    }
    for v in t.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses one record from the front of `bytes`, returning it and the number
/// of bytes consumed.
fn decode_prefix(bytes: &[u8]) -> std::result::Result<(DenseTensor, usize), KtenError> {
    let need = |expected: usize| {
        if bytes.len() < expected {
            Err(KtenError::Truncated {
                expected,
                actual: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(6)?;
    let magic: [u8; 4] = bytes[..4].try_into().expect("four bytes");
    if magic != MAGIC {
        return Err(KtenError::BadMagic(magic));
    }
    if bytes[4] != VERSION {
        return Err(KtenError::VersionMismatch { found: bytes[4] });
    }
    let order = bytes[5] as usize;
    if order == 0 {
        return Err(KtenError::InvalidShape("order 0".into()));
    }
    let header = 6 + 4 * order;
    need(header)?;
    let dims: Vec<usize> = bytes[6..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("four bytes")) as usize)
        .collect();
    if dims.contains(&0) {
        return Err(KtenError::InvalidShape(format!("zero dimension in {dims:?}")));
    }
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(header))
        .ok_or_else(|| KtenError::InvalidShape(format!("dims {dims:?} overflow")))?;
    need(len)?;
    let values = bytes[header..len]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
        .collect();
    let t = DenseTensor::new(dims, values).map_err(|e| KtenError::InvalidShape(e.to_string()))?;
    Ok((t, len))
}

/// Parses exactly one record.
pub fn decode(bytes: &[u8]) -> std::result::Result<DenseTensor, KtenError> {
    let (t, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(KtenError::TrailingBytes {
            expected: used,
            extra: bytes.len() - used,
        });
    }
    Ok(t)
}

/// Parses a concatenation of one or more records.
pub fn decode_stream(mut bytes: &[u8]) -> std::result::Result<Vec<DenseTensor>, KtenError> {
    let mut out = Vec::new();
    loop {
        let (t, used) = decode_prefix(bytes)?;
        out.push(t);
        bytes = &bytes[used..];
        if bytes.is_empty() {
            return Ok(out);
        }
    }
}

/// Writes `bytes` to a sibling temp file, syncs it, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("`{}` is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn read_kten(path: &Path) -> Result<DenseTensor> {
    Ok(decode(&fs::read(path)?)?)
}

pub fn write_kten(t: &DenseTensor, path: &Path) -> Result<()> {
    write_atomic(path, &encode(t))
}

pub fn read_kten_stream(path: &Path) -> Result<Vec<DenseTensor>> {
    Ok(decode_stream(&fs::read(path)?)?)
}

pub fn encode_factors(f: &SylvesterFactors) -> Vec<u8> {
    f.to_dense()
        .iter()
        .flat_map(|m| {
            let t = DenseTensor::new(vec![m.nrows(), m.ncols()], m.as_slice().to_vec()).expect("square factor");
            encode(&t)
        })
        .collect()
}

pub fn write_factors(f: &SylvesterFactors, path: &Path) -> Result<()> {
    write_atomic(path, &encode_factors(f))
}

/// Reads a factor set; every record must be a square matrix.
pub fn read_factors(path: &Path) -> Result<SylvesterFactors> {
    let records = read_kten_stream(path)?;
    let mats = records
        .into_iter()
        .map(|t| match t.dims() {
            [a, b] if a == b => Ok(DMatrix::from_column_slice(*a, *b, t.values())),
            dims => Err(Error::Kten(KtenError::InvalidShape(format!(
                "factor record must be a square matrix, got dims {dims:?}"
            )))),
        })
        .collect::<Result<Vec<_>>>()?;
    SylvesterFactors::from_dense(&mats)
}
