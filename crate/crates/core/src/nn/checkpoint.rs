//! Model checkpoint files.
//!
//! Layout: the magic `FLNIDSCK`, a little-endian `u32` header length, a JSON
//! header (format version, architecture, seed), a little-endian `u64`
//! parameter count, then the flat parameters as little-endian `f64`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FLNIDSCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: u32,
    pub kind: String,
    pub dims: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

pub fn encode(net: &Mlp, kind: &str, seed: u64, threshold: Option<f64>) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        format: FORMAT_VERSION,
        kind: kind.to_string(),
        dims: net.dims.clone(),
        hidden: net.hidden,
        output: net.output,
        seed,
        threshold,
    };
    let h = serde_json::to_vec(&header)?;
    let flat = net.params.flatten();
    let mut out = Vec::with_capacity(8 + 4 + h.len() + 8 + flat.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(h.len() as u32).to_le_bytes());
    out.extend_from_slice(&h);
    out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
    for v in flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Invalid(format!("checkpoint: {}", msg.into()))
}

pub fn decode(bytes: &[u8]) -> Result<(CheckpointHeader, Mlp)> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let hend = 12 + hlen;
    if bytes.len() < hend + 8 {
        return Err(bad("truncated header"));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[12..hend])?;
    if header.format != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {}", header.format)));
    }
    let count = u64::from_le_bytes(bytes[hend..hend + 8].try_into().expect("8 bytes")) as usize;
    let body = &bytes[hend + 8..];
    if body.len() != count * 8 {
        return Err(bad(format!("expected {count} parameters, found {} bytes", body.len())));
    }
    let flat: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut net = Mlp::zeros(&header.dims, header.hidden, header.output);
    net.params = net.params.unflatten_like(&flat)?;
    Ok((header, net))
}

pub fn save(path: &Path, net: &Mlp, kind: &str, seed: u64, threshold: Option<f64>) -> Result<()> {
    let bytes = encode(net, kind, seed, threshold)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(CheckpointHeader, Mlp)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn bit_exact_roundtrip() {
        let mut rng = stream(11, &[]);
        let net = Mlp::init(&[5, 10, 15, 3], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let bytes = encode(&net, "classifier", 11, None).unwrap();
        let (h, back) = decode(&bytes).unwrap();
        assert_eq!(h.seed, 11);
        let a: Vec<u64> = net.params.flatten().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.params.flatten().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(encode(&back, "classifier", 11, None).unwrap(), bytes);
    }

    #[test]
    fn truncated_file_rejected() {
        let net = Mlp::zeros(&[2, 2], Activation::Relu, Activation::Identity);
        let bytes = encode(&net, "mlp", 0, None).unwrap();
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode(b"nope").is_err());
    }
}
