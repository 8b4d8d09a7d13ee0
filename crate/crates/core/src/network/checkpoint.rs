//! Binary checkpoint format.
//!
//! ```text
//! "LMCK" | version: u16 LE | header_len: u32 LE | header (UTF-8 JSON) | payload
//! ```
//!
//! The header is `{"dims": [...], "activation": "...", "use_bias": bool,
//! "metadata": {...}}`. The payload lists the layers in order, each weight
//! matrix row-major as `f64` little-endian, followed by that layer's bias
//! vector when biases are enabled.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, Architecture, Layer, Mlp};
use crate::error::CheckpointError;
use crate::numerics::Matrix;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"LMCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dims: Vec<usize>,
    activation: Activation,
    use_bias: bool,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub weights: Mlp,
    pub metadata: BTreeMap<String, String>,
}

pub fn encode_checkpoint(weights: &Mlp, metadata: &BTreeMap<String, String>) -> Vec<u8> {
    let arch = weights.arch();
    let header = serde_json::to_vec(&Header {
        dims: arch.dims.clone(),
        activation: arch.activation,
        use_bias: arch.use_bias,
        metadata: metadata.clone(),
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(10 + header.len() + 8 * weights.param_count());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for p in weights.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn save_checkpoint(
    weights: &Mlp,
    metadata: &BTreeMap<String, String>,
    path: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    fs::write(path, encode_checkpoint(weights, metadata))?;
    Ok(())
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8], CheckpointError> {
    let end = pos.checked_add(n).ok_or_else(|| CheckpointError::ShapeOverflow("offset overflow".into()))?;
    if end > bytes.len() {
        return Err(CheckpointError::Truncated {
            needed: end,
            found: bytes.len(),
        });
    }
    let out = &bytes[*pos..end];
    *pos = end;
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut pos = 0;
    let magic: [u8; 4] = take(bytes, &mut pos, 4)?.try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = u16::from_le_bytes(take(bytes, &mut pos, 2)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header_len = u32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(take(bytes, &mut pos, header_len)?)
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    let arch = Architecture::new(header.dims, header.activation, header.use_bias)
        .map_err(|e| CheckpointError::Header(e.to_string()))?;

    let mut layers = Vec::with_capacity(arch.dims.len() - 1);
    for w in arch.dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let count = fan_in
            .checked_mul(fan_out)
            .filter(|c| c.checked_mul(8).is_some())
            .ok_or_else(|| CheckpointError::ShapeOverflow(format!("{fan_out}x{fan_in} layer")))?;
        let weight = Matrix::new(fan_out, fan_in, read_f64s(bytes, &mut pos, count)?)
            .expect("length checked");
        let bias = if arch.use_bias {
            Some(read_f64s(bytes, &mut pos, fan_out)?)
        } else {
            None
        };
        layers.push(Layer { weight, bias });
    }
    if pos != bytes.len() {
        return Err(CheckpointError::Header(format!(
            "{} trailing bytes after payload",
            bytes.len() - pos
        )));
    }
    let weights = Mlp::new(arch, layers).map_err(|e| CheckpointError::Header(e.to_string()))?;
    Ok(Checkpoint {
        weights,
        metadata: header.metadata,
    })
}

fn read_f64s(bytes: &[u8], pos: &mut usize, count: usize) -> Result<Vec<f64>, CheckpointError> {
    let raw = take(bytes, pos, count * 8)?;
    Ok(raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_weights, InitScheme};
    use crate::numerics::RngState;

    fn sample(bias: bool) -> Mlp {
        let arch = Architecture::new(vec![4, 3, 2], Activation::Tanh, bias).unwrap();
        let mut m = init_weights(&arch, &InitScheme::GaussianIid, &mut RngState::new(8)).unwrap();
        m.params_mut().enumerate().for_each(|(i, p)| *p += i as f64 * 1e-3);
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for bias in [false, true] {
            let net = sample(bias);
            let meta = BTreeMap::from([("lr".to_string(), "0.01".to_string())]);
            let path = dir.path().join(format!("net{bias}.lmck"));
            save_checkpoint(&net, &meta, &path).unwrap();
            let back = load_checkpoint(&path).unwrap();
            assert_eq!(back.metadata, meta);
            let a: Vec<u64> = net.params().map(f64::to_bits).collect();
            let b: Vec<u64> = back.weights.params().map(f64::to_bits).collect();
            assert_eq!(a, b);
            assert_eq!(back.weights.arch(), net.arch());
        }
    }

    #[test]
    fn layout_is_as_documented() {
        let net = sample(true);
        let bytes = encode_checkpoint(&net, &BTreeMap::new());
        assert_eq!(&bytes[..4], b"LMCK");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        let hl = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[10..10 + hl]).unwrap();
        assert_eq!(header["dims"], serde_json::json!([4, 3, 2]));
        assert_eq!(header["activation"], "tanh");
        // First payload value is W¹[0][0]; the layer-1 bias follows the 3x4 matrix.
        let p0 = f64::from_le_bytes(bytes[10 + hl..18 + hl].try_into().unwrap());
        assert_eq!(p0, net.layer(1).weight.get(0, 0));
        let off = 10 + hl + 12 * 8;
        let b0 = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        assert_eq!(b0, net.layer(1).bias.as_ref().unwrap()[0]);
        assert_eq!(bytes.len(), 10 + hl + 8 * net.param_count());
    }

    #[test]
    fn load_errors_are_distinct() {
        let good = encode_checkpoint(&sample(false), &BTreeMap::new());

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(CheckpointError::BadMagic(_))));

        let mut v2 = good.clone();
        v2[4] = 2;
        assert!(matches!(
            decode_checkpoint(&v2),
            Err(CheckpointError::VersionMismatch { found: 2, .. })
        ));

        assert!(matches!(
            decode_checkpoint(&good[..good.len() - 1]),
            Err(CheckpointError::Truncated { .. })
        ));

        let header = br#"{"dims":[4294967296,4294967296],"activation":"relu","use_bias":false}"#;
        let mut huge = Vec::new();
        huge.extend_from_slice(b"LMCK");
        huge.extend_from_slice(&1u16.to_le_bytes());
        huge.extend_from_slice(&(header.len() as u32).to_le_bytes());
        huge.extend_from_slice(header);
        assert!(matches!(decode_checkpoint(&huge), Err(CheckpointError::ShapeOverflow(_))));
    }
}
