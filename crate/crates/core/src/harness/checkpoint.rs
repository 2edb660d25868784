//! Binary checkpoint format.
//!
//! ```text
//! 0   magic "BROSCKPT"
//! 8   format version, u32 LE
//! 12  header length in bytes, u64 LE
//! 20  CRC-32 of the header, u32 LE
//! 24  header: UTF-8 JSON (config, task, classes, vocabulary, tensor table)
//! ..  payload: tensors back to back, little-endian f32
//! ```
//!
//! Each tensor-table entry records its payload offset, length and CRC-32.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Task};
use super::model::Model;
use crate::data::{write_atomic, Vocab};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"BROSCKPT";
pub const VERSION: u32 = 1;
const PRELUDE: usize = 24;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    length: u64,
    crc32: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    task: Task,
    step: u64,
    config: RunConfig,
    classes: Vec<String>,
    vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in model.params.iter() {
        let offset = payload.len() as u64;
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        let bytes = &payload[offset as usize..];
        tensors.push(TensorEntry {
            name: name.clone(),
            dtype: "f32".into(),
            shape: t.shape().to_vec(),
            offset,
            length: bytes.len() as u64,
            crc32: crc32fast::hash(bytes),
        });
    }
    let header = Header {
        task: model.task,
        step: model.step,
        config: model.config.clone(),
        classes: model.classes.clone(),
        vocab: model.vocab.tokens()[crate::data::vocab::SPECIALS.len()..].to_vec(),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(PRELUDE + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&json).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

fn integrity(offset: usize, message: impl Into<String>) -> Error {
    Error::Integrity {
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < PRELUDE {
        return Err(integrity(bytes.len(), "file shorter than the checkpoint prelude"));
    }
    if &bytes[..8] != MAGIC {
        return Err(integrity(0, "not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version > VERSION {
        return Err(integrity(8, format!("format version {version} is newer than supported version {VERSION}")));
    }
    if version == 0 {
        return Err(integrity(8, "format version 0 is invalid"));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let header_crc = u32::from_le_bytes(bytes[20..24].try_into().expect("4 bytes"));
    let payload_start = PRELUDE
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| integrity(12, format!("header length {header_len} runs past end of file")))?;
    let json = &bytes[PRELUDE..payload_start];
    if crc32fast::hash(json) != header_crc {
        return Err(integrity(PRELUDE, "header checksum mismatch"));
    }
    let header: Header = serde_json::from_slice(json).map_err(|e| integrity(PRELUDE, format!("bad header: {e}")))?;
    let payload = &bytes[payload_start..];
    let mut params = ParamStore::new();
    let mut expected_end = 0u64;
    for t in &header.tensors {
        let at = payload_start + t.offset as usize;
        if t.dtype != "f32" {
            return Err(integrity(at, format!("tensor `{}` has unsupported dtype {}", t.name, t.dtype)));
        }
        let numel: usize = t.shape.iter().product();
        if t.length != 4 * numel as u64 || t.offset != expected_end {
            return Err(integrity(at, format!("tensor `{}` has an inconsistent extent", t.name)));
        }
        let end = (t.offset + t.length) as usize;
        if end > payload.len() {
            return Err(integrity(bytes.len(), format!("payload truncated inside tensor `{}`", t.name)));
        }
        let raw = &payload[t.offset as usize..end];
        if crc32fast::hash(raw) != t.crc32 {
            return Err(integrity(at, format!("checksum mismatch in tensor `{}`", t.name)));
        }
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        params.insert(t.name.clone(), Tensor::new(t.shape.clone(), data)?);
        expected_end = end as u64;
    }
    if expected_end as usize != payload.len() {
        return Err(integrity(payload_start + expected_end as usize, "trailing bytes after the last tensor"));
    }
    let vocab = Vocab::build(&header.vocab);
    if vocab.len() != header.vocab.len() + crate::data::vocab::SPECIALS.len() {
        return Err(integrity(PRELUDE, "vocabulary in header has duplicate entries"));
    }
    Ok(Model {
        config: header.config,
        task: header.task,
        vocab,
        classes: header.classes,
        params,
        step: header.step,
    })
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    write_atomic(path, &to_bytes(model))
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::RunConfig;

    fn model() -> Model {
        let mut cfg = RunConfig::default();
        cfg.encoder.hidden = 16;
        cfg.encoder.ffn = 32;
        cfg.encoder.num_layers = 1;
        Model::new(cfg, Task::EeSpade, Vocab::standard(), vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let m = model();
        let bytes = to_bytes(&m);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_bytes(&back), bytes);
    }

    fn offset_of(e: Error) -> u64 {
        match e {
            Error::Integrity { offset, .. } => offset,
            other => panic!("expected integrity error, got {other}"),
        }
    }

    #[test]
    fn corrupted_tensor_reports_its_offset() {
        let m = model();
        let mut bytes = to_bytes(&m);
        let last = bytes.len() - 1;
        bytes[last] ^= 0x55;
        let off = offset_of(from_bytes(&bytes).unwrap_err());
        assert!(off > PRELUDE as u64 && off <= last as u64);
    }

    #[test]
    fn corrupted_header_and_magic() {
        let m = model();
        let bytes = to_bytes(&m);
        let mut b = bytes.clone();
        b[PRELUDE + 3] ^= 1;
        assert_eq!(offset_of(from_bytes(&b).unwrap_err()), PRELUDE as u64);
        let mut b = bytes.clone();
        b[0] = b'X';
        assert_eq!(offset_of(from_bytes(&b).unwrap_err()), 0);
        assert_eq!(offset_of(from_bytes(&bytes[..bytes.len() - 2]).unwrap_err()), (bytes.len() - 2) as u64);
    }

    #[test]
    fn newer_version_is_refused() {
        let mut b = to_bytes(&model());
        b[8..12].copy_from_slice(&(VERSION + 1).to_le_bytes());
        let e = from_bytes(&b).unwrap_err();
        assert_eq!(offset_of(e), 8);
    }
}
