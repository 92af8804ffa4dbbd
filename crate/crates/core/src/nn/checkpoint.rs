//! Binary parameter checkpoints: an 8-byte little-endian manifest length, the
//! JSON manifest, then every blob as little-endian `f64`s in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::mlp::{MlpSpec, ParamVector};

const FORMAT: &str = "pessilab-params-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobEntry {
    pub name: String,
    pub spec: MlpSpec,
    pub len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    blobs: Vec<BlobEntry>,
    meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub name: String,
    pub spec: MlpSpec,
    pub params: ParamVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub blobs: Vec<Blob>,
}

impl Checkpoint {
    pub fn blob(&self, name: &str) -> Option<&Blob> {
        self.blobs.iter().find(|b| b.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = Manifest {
            format: FORMAT.into(),
            blobs: self
                .blobs
                .iter()
                .map(|b| BlobEntry {
                    name: b.name.clone(),
                    spec: b.spec.clone(),
                    len: b.params.len(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let n_values: usize = self.blobs.iter().map(|b| b.params.len()).sum();
        let mut out = Vec::with_capacity(8 + json.len() + 8 * n_values);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for b in &self.blobs {
            for v in b.params.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |what: &str| Error::Config(format!("corrupt checkpoint: {what}"));
        let head: [u8; 8] = bytes
            .get(..8)
            .ok_or_else(|| corrupt("truncated header"))?
            .try_into()
            .expect("8 bytes");
        let json_len = u64::from_le_bytes(head) as usize;
        let json = bytes.get(8..8 + json_len).ok_or_else(|| corrupt("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(json)?;
        if manifest.format != FORMAT {
            return Err(corrupt("unknown format tag"));
        }
        let mut rest = &bytes[8 + json_len..];
        let mut blobs = Vec::with_capacity(manifest.blobs.len());
        for entry in manifest.blobs {
            if entry.len != entry.spec.n_params() {
                return Err(corrupt("blob length disagrees with its shape"));
            }
            let nbytes = 8 * entry.len;
            if rest.len() < nbytes {
                return Err(corrupt("truncated parameters"));
            }
            let values = rest[..nbytes]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            rest = &rest[nbytes..];
            blobs.push(Blob {
                name: entry.name,
                spec: entry.spec,
                params: ParamVector::new(values),
            });
        }
        if !rest.is_empty() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self {
            meta: manifest.meta,
            blobs,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
