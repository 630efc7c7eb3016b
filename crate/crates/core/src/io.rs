//! TFB1 tensor files.
//!
//! Layout: the magic bytes `TFB1`, five little-endian `u32` header fields
//! `[rank = 3, C, H, W, dtype]` (dtype 0 = `f32`, 1 = `f64`), then the
//! channel-major payload in little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Precision, Real, Shape, Tensor3};

pub const MAGIC: &[u8; 4] = b"TFB1";
pub const FORMAT_VERSION: &str = "TFB1";

pub fn encode<T: Real>(tensor: &Tensor3<T>) -> Vec<u8> {
    let shape = tensor.shape();
    let width = match T::PRECISION {
        Precision::Single => 4,
        Precision::Double => 8,
    };
    let mut out = Vec::with_capacity(24 + shape.len() * width);
    out.extend_from_slice(MAGIC);
    for field in [
        3,
        shape.channels as u32,
        shape.height as u32,
        shape.width as u32,
        T::PRECISION.code(),
    ] {
        out.extend_from_slice(&field.to_le_bytes());
    }
    for &v in tensor.data() {
        match T::PRECISION {
            Precision::Single => out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes()),
            Precision::Double => out.extend_from_slice(&v.to_f64().to_le_bytes()),
        }
    }
    out
}

/// Header of a TFB1 buffer: shape and stored precision.
pub fn header(bytes: &[u8]) -> Result<(Shape, Precision)> {
    if bytes.len() < 24 {
        return Err(Error::Format(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("missing TFB1 magic".into()));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    if field(0) != 3 {
        return Err(Error::Format(format!("rank {} is not 3", field(0))));
    }
    let shape = Shape::new(field(1) as usize, field(2) as usize, field(3) as usize);
    let precision = Precision::from_code(field(4))
        .ok_or_else(|| Error::Format(format!("unknown dtype code {}", field(4))))?;
    Ok((shape, precision))
}

/// Decodes a buffer, converting the stored precision to `T` if they differ.
pub fn decode<T: Real>(bytes: &[u8]) -> Result<Tensor3<T>> {
    let (shape, precision) = header(bytes)?;
    let payload = &bytes[24..];
    let width = match precision {
        Precision::Single => 4,
        Precision::Double => 8,
    };
    if payload.len() != shape.len() * width {
        return Err(Error::Format(format!(
            "payload is {} bytes, shape {shape} needs {}",
            payload.len(),
            shape.len() * width
        )));
    }
    let data = match precision {
        Precision::Single => payload
            .chunks_exact(4)
            .map(|b| T::from_f64(f32::from_le_bytes(b.try_into().unwrap()) as f64))
            .collect(),
        Precision::Double => payload
            .chunks_exact(8)
            .map(|b| T::from_f64(f64::from_le_bytes(b.try_into().unwrap())))
            .collect(),
    };
    Tensor3::from_vec(shape, data)
}

pub fn write_tensor<T: Real>(path: impl AsRef<Path>, tensor: &Tensor3<T>) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode(tensor))?;
    Ok(())
}

pub fn read_tensor<T: Real>(path: impl AsRef<Path>) -> Result<Tensor3<T>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
