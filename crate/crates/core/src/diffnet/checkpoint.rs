//! Parameter checkpoints.
//!
//! Layout on disk:
//!
//! ```text
//! b"LXCKPT\0\0"           8-byte magic
//! u64 LE                 header length in bytes
//! header                 UTF-8 JSON, see [`Header`]
//! f64 LE * total_len     concatenated entry values, in header order
//! ```

use super::{NetError, NetSpec, Result};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"LXCKPT\0\0";
pub const LAYOUT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryHeader {
    pub name: String,
    /// Present for network parameters, absent for free vectors such as a log-std
    /// or optimizer moments.
    pub spec: Option<NetSpec>,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub layout_version: u32,
    pub entries: Vec<EntryHeader>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub spec: Option<NetSpec>,
    pub values: Vec<f64>,
}

impl Entry {
    pub fn net(name: impl Into<String>, spec: &NetSpec, values: &[f64]) -> Self {
        Self {
            name: name.into(),
            spec: Some(spec.clone()),
            values: values.to_vec(),
        }
    }

    pub fn vector(name: impl Into<String>, values: &[f64]) -> Self {
        Self {
            name: name.into(),
            spec: None,
            values: values.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub entries: Vec<Entry>,
    pub meta: serde_json::Value,
}

impl Bundle {
    pub fn new(entries: Vec<Entry>, meta: serde_json::Value) -> Self {
        Self { entries, meta }
    }

    pub fn get(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| NetError::Checkpoint(format!("missing entry `{name}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            layout_version: LAYOUT_VERSION,
            entries: self
                .entries
                .iter()
                .map(|e| EntryHeader {
                    name: e.name.clone(),
                    spec: e.spec.clone(),
                    len: e.values.len(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        for e in &self.entries {
            if let Some(spec) = &e.spec {
                if spec.num_params() != e.values.len() {
                    return Err(NetError::Checkpoint(format!(
                        "entry `{}` has {} values but its spec needs {}",
                        e.name,
                        e.values.len(),
                        spec.num_params()
                    )));
                }
            }
        }
        let header = serde_json::to_vec(&header).map_err(|e| NetError::Checkpoint(e.to_string()))?;
        let total: usize = self.entries.iter().map(|e| e.values.len()).sum();
        let mut out = Vec::with_capacity(16 + header.len() + 8 * total);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for e in &self.entries {
            for v in &e.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| NetError::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| NetError::Checkpoint(e.to_string()))?;
        if header.layout_version != LAYOUT_VERSION {
            return Err(NetError::Checkpoint(format!(
                "unsupported layout version {}",
                header.layout_version
            )));
        }
        let mut data = &bytes[16 + hlen..];
        let total: usize = header.entries.iter().map(|e| e.len).sum();
        if data.len() != total * 8 {
            return Err(bad("payload length does not match header"));
        }
        let mut entries = Vec::with_capacity(header.entries.len());
        for eh in header.entries {
            if let Some(spec) = &eh.spec {
                if spec.num_params() != eh.len {
                    return Err(bad("entry length does not match its spec"));
                }
            }
            let (chunk, rest) = data.split_at(eh.len * 8);
            data = rest;
            let values = chunk
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push(Entry {
                name: eh.name,
                spec: eh.spec,
                values,
            });
        }
        Ok(Self {
            entries,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_bytes()?)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
