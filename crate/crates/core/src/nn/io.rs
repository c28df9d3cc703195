//! Versioned binary model file.
//!
//! Layout (little-endian):
//! `b"SSSL"`, `u32` version, `u32` byte length + UTF-8 JSON header, `u32`
//! tensor count, then per tensor `u32` rank, `u32` dims, `f32` values.

use std::io::{Read, Write};

use serde::{de::DeserializeOwned, Serialize};

use super::{ModelParams, NnError, Tensor};

pub const MODEL_MAGIC: &[u8; 4] = b"SSSL";
pub const MODEL_VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<(), NnError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Writes `header` (any serde value, stored as JSON text) and the tensors.
pub fn write_model<W: Write, H: Serialize>(
    w: &mut W,
    header: &H,
    params: &ModelParams,
) -> Result<(), NnError> {
    let text = serde_json::to_string(header).map_err(|e| NnError::Format(e.to_string()))?;
    w.write_all(MODEL_MAGIC)?;
    put_u32(w, MODEL_VERSION)?;
    put_u32(w, text.len() as u32)?;
    w.write_all(text.as_bytes())?;
    put_u32(w, params.tensors.len() as u32)?;
    for t in &params.tensors {
        put_u32(w, t.shape().len() as u32)?;
        for &d in t.shape() {
            put_u32(w, d as u32)?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_model<R: Read, H: DeserializeOwned>(r: &mut R) -> Result<(H, ModelParams), NnError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(NnError::Format("not a model file (bad magic)".into()));
    }
    let version = get_u32(r)?;
    if version != MODEL_VERSION {
        return Err(NnError::Format(format!(
            "unsupported model version {version}"
        )));
    }
    let len = get_u32(r)? as usize;
    let mut text = vec![0u8; len];
    r.read_exact(&mut text)?;
    let text = String::from_utf8(text).map_err(|e| NnError::Format(e.to_string()))?;
    let header = serde_json::from_str(&text).map_err(|e| NnError::Format(e.to_string()))?;
    let count = get_u32(r)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = get_u32(r)? as usize;
        let shape = (0..rank)
            .map(|_| get_u32(r).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        tensors.push(Tensor::new(shape, data)?);
    }
    Ok((header, ModelParams { tensors }))
}
