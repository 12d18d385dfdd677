//! Binary checkpoint: `RNMT`, u32 LE format version, u64 LE manifest length,
//! UTF-8 JSON manifest, then little-endian f64 tensor payloads.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::numerics::{ParamStore, Tensor};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RNMT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    src_vocab: Vec<String>,
    tgt_vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload section.
    offset: usize,
}

/// A model together with the vocabularies it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<S> {
    pub model: Model<S>,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
    pub meta: BTreeMap<String, String>,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn new(model: Model<S>, src_vocab: Vocab, tgt_vocab: Vocab) -> Self {
        Checkpoint {
            model,
            src_vocab,
            tgt_vocab,
            meta: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut payload = Vec::new();
        for (_, p) in self.model.params.iter() {
            tensors.push(TensorEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                offset: payload.len(),
            });
            for &v in p.value.data() {
                payload.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        let chars = |v: &Vocab| v.chars().iter().map(|c| c.to_string()).collect();
        let manifest = Manifest {
            config: self.model.config().clone(),
            src_vocab: chars(&self.src_vocab),
            tgt_vocab: chars(&self.tgt_vocab),
            tensors,
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;

        let mut out = Vec::with_capacity(16 + json.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("missing RNMT header"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let json_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json_end = 16usize
            .checked_add(json_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("manifest length exceeds file"))?;
        let manifest: Manifest =
            serde_json::from_slice(&bytes[16..json_end]).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let payload = &bytes[json_end..];

        let mut store = ParamStore::new();
        for entry in &manifest.tensors {
            let n: usize = entry.shape.iter().product();
            let end = entry
                .offset
                .checked_add(n * 8)
                .filter(|&e| e <= payload.len())
                .ok_or_else(|| Error::Checkpoint(format!("payload of {} truncated", entry.name)))?;
            let data = payload[entry.offset..end]
                .chunks_exact(8)
                .map(|b| S::of(f64::from_le_bytes(b.try_into().expect("8 bytes"))))
                .collect();
            store.add(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?)?;
        }
        let model = Model::from_params(manifest.config, store)?;

        let vocab = |entries: Vec<String>| -> Result<Vocab> {
            let chars = entries
                .iter()
                .map(|s| {
                    let mut it = s.chars();
                    match (it.next(), it.next()) {
                        (Some(c), None) => Ok(c),
                        _ => Err(Error::Checkpoint(format!("vocabulary entry {s:?} is not one character"))),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Vocab::from_chars(chars)
        };
        let src_vocab = vocab(manifest.src_vocab)?;
        let tgt_vocab = vocab(manifest.tgt_vocab)?;
        if src_vocab.len() != model.config().src_vocab || tgt_vocab.len() != model.config().tgt_vocab {
            return Err(bad("vocabulary sizes disagree with model config"));
        }
        Ok(Checkpoint {
            model,
            src_vocab,
            tgt_vocab,
            meta: manifest.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        // write-then-rename so an interrupted save never clobbers the previous file
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
