//! Binary parameter file:
//!
//! ```text
//! 8 bytes   magic "FFCPARAM"
//! 4 bytes   header length H, little-endian u32
//! H bytes   UTF-8 JSON header (ParamsHeader)
//! 8·N bytes flat parameters, little-endian f64, in ParamShape::layout order
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelParams, ParamShape};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FFCPARAM";
pub const PARAMS_LAYOUT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsHeader {
    pub layout_version: u32,
    pub shape: ParamShape,
    pub seed: u64,
    pub len: usize,
    pub tensors: Vec<TensorEntry>,
}

impl ParamsHeader {
    pub fn new(shape: ParamShape, seed: u64) -> Self {
        Self {
            layout_version: PARAMS_LAYOUT_VERSION,
            shape,
            seed,
            len: shape.len(),
            tensors: shape
                .layout()
                .iter()
                .map(|&(name, rows, cols)| TensorEntry {
                    name: name.into(),
                    rows,
                    cols,
                })
                .collect(),
        }
    }
}

pub fn params_to_bytes(params: &ModelParams, seed: u64) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&ParamsHeader::new(params.shape(), seed))?;
    let flat = params.to_flat();
    let mut out = Vec::with_capacity(12 + header.len() + 8 * flat.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn params_from_bytes(bytes: &[u8]) -> Result<(ParamsHeader, ModelParams)> {
    let bad = |m: &str| Error::Serde(format!("params file: {m}"));
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let h_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(12..12 + h_len).ok_or_else(|| bad("truncated header"))?;
    let header: ParamsHeader = serde_json::from_slice(body)?;
    if header.layout_version != PARAMS_LAYOUT_VERSION {
        return Err(bad(&format!("unsupported layout version {}", header.layout_version)));
    }
    if header.len != header.shape.len() {
        return Err(bad("header length disagrees with shape"));
    }
    let data = &bytes[12 + h_len..];
    if data.len() != 8 * header.len {
        return Err(bad(&format!("expected {} values, found {} bytes", header.len, data.len())));
    }
    let flat: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let params = ModelParams::from_flat(header.shape, &flat)?;
    Ok((header, params))
}

pub fn write_params(path: impl AsRef<Path>, params: &ModelParams, seed: u64) -> Result<()> {
    crate::io::write_atomic(path.as_ref(), &params_to_bytes(params, seed)?)
}

pub fn read_params(path: impl AsRef<Path>) -> Result<(ParamsHeader, ModelParams)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    params_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip_is_exact() {
        let p = ModelParams::init(ParamShape { d_e: 4, hidden: 3 }, 8);
        let bytes = params_to_bytes(&p, 8).unwrap();
        let (h, back) = params_from_bytes(&bytes).unwrap();
        assert_eq!(h.seed, 8);
        assert_eq!(h.tensors[2].name, "classifier.fc1.weight");
        assert_eq!(back, p);
        assert!(params_from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(params_from_bytes(b"nope").is_err());
    }
}
