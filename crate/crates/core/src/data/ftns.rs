//! The `FTNS` binary tensor format.
//!
//! Layout, all little-endian: magic `FTNS`, `u32` version, `u32` ndim,
//! `ndim × u32` dims, then row-major values. Version 1 stores `f32` values
//! (feature files); version 2 stores `f64` values (parameter bundles, so
//! checkpoints round-trip exactly).

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FTNS";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn version(self) -> u32 {
        match self {
            Precision::F32 => 1,
            Precision::F64 => 2,
        }
    }

    fn from_version(v: u32) -> Option<Self> {
        match v {
            1 => Some(Precision::F32),
            2 => Some(Precision::F64),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Header {
    pub precision: Precision,
    pub dims: Vec<usize>,
}

impl Header {
    fn byte_len(&self) -> usize {
        12 + 4 * self.dims.len()
    }
}

pub fn encode_f32(data: &[f32], dims: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * dims.len() + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&Precision::F32.version().to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode(t: &Tensor, precision: Precision) -> Vec<u8> {
    match precision {
        Precision::F32 => {
            let data: Vec<f32> = t.data().iter().map(|&v| v as f32).collect();
            encode_f32(&data, t.shape())
        }
        Precision::F64 => {
            let mut out = Vec::with_capacity(12 + 4 * t.ndim() + 8 * t.len());
            out.extend_from_slice(MAGIC);
            out.extend_from_slice(&Precision::F64.version().to_le_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out
        }
    }
}

fn u32_at(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
}

pub fn decode_header(bytes: &[u8]) -> std::result::Result<Header, String> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err("missing FTNS magic".into());
    }
    let version = u32_at(bytes, 4).expect("checked length");
    let precision =
        Precision::from_version(version).ok_or_else(|| format!("unsupported version {version}"))?;
    let ndim = u32_at(bytes, 8).expect("checked length") as usize;
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let d = u32_at(bytes, 12 + 4 * i).ok_or("truncated dimension list")?;
        if d == 0 {
            return Err("zero-sized dimension".into());
        }
        dims.push(d as usize);
    }
    Ok(Header { precision, dims })
}

/// Decodes to `f32` values, as stored in feature files.
pub fn decode_f32(bytes: &[u8]) -> std::result::Result<(Vec<f32>, Vec<usize>), String> {
    let header = decode_header(bytes)?;
    let n: usize = header.dims.iter().product();
    let body = &bytes[header.byte_len()..];
    if body.len() != n * header.precision.width() {
        return Err(format!(
            "expected {} payload bytes, found {}",
            n * header.precision.width(),
            body.len()
        ));
    }
    let data = match header.precision {
        Precision::F32 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect(),
        Precision::F64 => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")) as f32)
            .collect(),
    };
    Ok((data, header.dims))
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    let header = decode_header(bytes)?;
    let n: usize = header.dims.iter().product();
    let body = &bytes[header.byte_len()..];
    if body.len() != n * header.precision.width() {
        return Err(format!(
            "expected {} payload bytes, found {}",
            n * header.precision.width(),
            body.len()
        ));
    }
    let data = match header.precision {
        Precision::F32 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        Precision::F64 => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    Tensor::new(header.dims, data).map_err(|e| e.to_string())
}

pub fn write(path: &Path, t: &Tensor, precision: Precision) -> Result<()> {
    fs::write(path, encode(t, precision)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|msg| Error::parse(path, msg))
}

pub fn read_f32(path: &Path) -> Result<(Vec<f32>, Vec<usize>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_f32(&bytes).map_err(|msg| Error::parse(path, msg))
}

/// Reads and validates only the header, checking the file size against it.
pub fn read_header(path: &Path) -> Result<Header> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let size = file.metadata().map_err(|e| Error::io(path, e))?.len() as usize;
    let mut head = [0u8; 12];
    file.read_exact(&mut head).map_err(|_| Error::parse(path, "truncated header"))?;
    let ndim = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes")) as usize;
    if ndim > 16 {
        return Err(Error::parse(path, format!("implausible ndim {ndim}")));
    }
    let mut bytes = head.to_vec();
    bytes.resize(12 + 4 * ndim, 0);
    file.read_exact(&mut bytes[12..])
        .map_err(|_| Error::parse(path, "truncated dimension list"))?;
    let header = decode_header(&bytes).map_err(|msg| Error::parse(path, msg))?;
    let n: usize = header.dims.iter().product();
    if size != header.byte_len() + n * header.precision.width() {
        return Err(Error::parse(path, "file size disagrees with header"));
    }
    Ok(header)
}
