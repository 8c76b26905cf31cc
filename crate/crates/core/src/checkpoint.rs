//! Binary model checkpoints.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "LPGN"
//! 4       4     format version, u32 little-endian
//! 8       4     header length H, u32 little-endian
//! 12      H     UTF-8 JSON header
//! 12+H    …     tensor payloads, f64 little-endian, in header order
//! ```
//!
//! The header records the architecture, the ordered tensor table
//! (name, shape, dtype), the payload length and its SHA-256 digest, and a free
//! metadata object. Serialization is canonical, so save → load → save is
//! byte-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::{ParamSet, Tensor};

pub const MAGIC: [u8; 4] = *b"LPGN";
pub const FORMAT_VERSION: u32 = 1;
const PREFIX: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub architecture: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    pub payload_bytes: usize,
    pub payload_sha256: String,
    pub metadata: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    /// Caller-defined provenance (training configuration, selection epoch …).
    pub metadata: serde_json::Value,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let params = self.model.params();
        let mut payload = Vec::with_capacity(params.scalar_count() * 8);
        for t in params.tensors() {
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            architecture: self.model.config().clone(),
            tensors: params
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    dtype: "f64".into(),
                })
                .collect(),
            payload_bytes: payload.len(),
            payload_sha256: sha256_hex(&payload),
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(PREFIX + json.len() + payload.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |m: String| Err(Error::Checkpoint(m));
        if bytes.len() < PREFIX {
            return fail(format!(
                "file of {} bytes is shorter than the {PREFIX}-byte prefix",
                bytes.len()
            ));
        }
        if bytes[..4] != MAGIC {
            return fail(format!(
                "bad magic {:?}, expected \"LPGN\"",
                String::from_utf8_lossy(&bytes[..4])
            ));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let version = word(4);
        if version != FORMAT_VERSION {
            return fail(format!(
                "unsupported format version {version}, expected {FORMAT_VERSION}"
            ));
        }
        let header_len = word(8) as usize;
        let Some(json) = bytes.get(PREFIX..PREFIX + header_len) else {
            return fail(format!(
                "header length {header_len} exceeds the {} bytes after the prefix",
                bytes.len() - PREFIX
            ));
        };
        let header: Header =
            serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;
        let payload = &bytes[PREFIX + header_len..];
        if payload.len() != header.payload_bytes {
            return fail(format!(
                "payload is {} bytes, header declares {}",
                payload.len(),
                header.payload_bytes
            ));
        }
        if sha256_hex(payload) != header.payload_sha256 {
            return fail("payload checksum mismatch".into());
        }
        let mut params = ParamSet::new();
        let mut offset = 0;
        for entry in &header.tensors {
            if entry.dtype != "f64" {
                return fail(format!("tensor {}: unsupported dtype {:?}", entry.name, entry.dtype));
            }
            let n: usize = entry.shape.iter().product();
            let Some(raw) = payload.get(offset..offset + n * 8) else {
                return fail(format!("tensor {} runs past the end of the payload", entry.name));
            };
            offset += n * 8;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(entry.shape.clone(), data)
                .map_err(|e| Error::Checkpoint(format!("tensor {}: {e}", entry.name)))?;
            params
                .push(entry.name.clone(), t)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        if offset != payload.len() {
            return fail(format!("{} trailing payload bytes", payload.len() - offset));
        }
        let model = Model::from_params(header.architecture, params)
            .map_err(|e| Error::Checkpoint(format!("header disagrees with architecture: {e}")))?;
        Ok(Checkpoint {
            model,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Byte offsets of single-byte corruptions that must each be rejected:
/// the four magic bytes, the version, the header length, the opening brace
/// of the header and the first byte of the first tensor name.
pub fn corruption_offsets(bytes: &[u8]) -> Vec<usize> {
    let mut offsets = vec![0, 1, 2, 3, 4, 8, PREFIX];
    let json = &bytes[PREFIX..];
    let needle = br#""tensors":[{"name":""#;
    if let Some(p) = json.windows(needle.len()).position(|w| w == needle) {
        offsets.push(PREFIX + p + needle.len());
    }
    offsets
}
