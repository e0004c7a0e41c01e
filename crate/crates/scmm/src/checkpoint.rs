//! Checkpoint files.
//!
//! Layout: the 8 ASCII bytes `SCMMCKPT`, the index length as u64 LE, a JSON
//! index (network description plus name, shape and byte offset of every
//! parameter), then every parameter as contiguous little-endian f64 in index
//! order. Writing is deterministic, so save -> load -> save is byte-identical.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use scmm_core::network::{NetworkConfig, ParameterStore};
use scmm_core::tensor::Tensor;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"SCMMCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Index {
    version: u32,
    network: Option<NetworkConfig>,
    parameters: Vec<IndexEntry>,
    payload_bytes: u64,
}

/// A parameter store and, when known, the network it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Option<NetworkConfig>,
    pub store: ParameterStore,
}

impl Checkpoint {
    pub fn new(network: NetworkConfig, store: ParameterStore) -> Self {
        Self {
            network: Some(network),
            store,
        }
    }

    /// The recorded network, after checking every parameter against it.
    pub fn network(&self) -> std::result::Result<&NetworkConfig, String> {
        let net = self.network.as_ref().ok_or("checkpoint carries no network description")?;
        self.store.validate(net).map_err(|e| e.to_string())?;
        Ok(net)
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut parameters = Vec::with_capacity(ckpt.store.len());
    let mut offset = 0u64;
    for (name, t) in ckpt.store.iter() {
        parameters.push(IndexEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += 8 * t.numel() as u64;
    }
    let index = Index {
        version: VERSION,
        network: ckpt.network.clone(),
        parameters,
        payload_bytes: offset,
    };
    let json = serde_json::to_vec(&index).expect("index serializes");
    let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in ckpt.store.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    if bytes.len() < 16 {
        return Err(format!("truncated header: expected 16 bytes, found {}", bytes.len()));
    }
    if bytes[..8] != MAGIC {
        return Err("bad magic, expected \"SCMMCKPT\"".into());
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let end = usize::try_from(len)
        .ok()
        .and_then(|l| l.checked_add(16))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| format!("index length {len} exceeds file size {}", bytes.len()))?;
    let index: Index = serde_json::from_slice(&bytes[16..end]).map_err(|e| format!("bad index: {e}"))?;
    if index.version != VERSION {
        return Err(format!("unsupported version {}, expected {VERSION}", index.version));
    }
    let payload = &bytes[end..];
    if payload.len() as u64 != index.payload_bytes {
        return Err(format!(
            "payload length mismatch: index declares {} bytes, found {}",
            index.payload_bytes,
            payload.len()
        ));
    }
    let mut store = ParameterStore::new();
    let mut expected = 0u64;
    for e in &index.parameters {
        if e.offset != expected {
            return Err(format!(
                "parameter `{}` at offset {}, expected {expected}",
                e.name, e.offset
            ));
        }
        let n = e
            .shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| format!("parameter `{}` shape overflows", e.name))?;
        let stop = expected + 8 * n as u64;
        if stop > index.payload_bytes {
            return Err(format!("parameter `{}` runs past the payload", e.name));
        }
        let data = payload[expected as usize..stop as usize]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(e.shape.clone(), data).map_err(|err| err.to_string())?;
        store.insert(&e.name, t).map_err(|err| err.to_string())?;
        expected = stop;
    }
    if expected != index.payload_bytes {
        return Err(format!(
            "index covers {expected} payload bytes, payload has {}",
            index.payload_bytes
        ));
    }
    Ok(Checkpoint {
        network: index.network,
        store,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(ckpt)).map_err(Error::io(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode_checkpoint(&bytes).map_err(|d| Error::format(path, d))
}

/// Loads a checkpoint and checks it against `net`; a mismatch names the parameter.
pub fn load_store_for(path: &Path, net: &NetworkConfig) -> Result<ParameterStore> {
    let ckpt = load_checkpoint(path)?;
    ckpt.store.validate(net)?;
    Ok(ckpt.store)
}
