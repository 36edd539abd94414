//! Single-file checkpoint.
//!
//! ```text
//! "DACK" | u32 version = 1 | u32 meta_len | meta JSON (UTF-8)
//! | u32 array_count
//! array: u32 name_len | name | u32 ndim | u64 dims[ndim] | f64 data[∏dims]
//! ```
//!
//! Little-endian. The metadata holds the training and encoder
//! configuration, vocabulary, concept list, epoch and optimizer step; arrays
//! are `encoder.*`, `head.*`, `adam.m.*` and `adam.v.*`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::trainer::{TrainConfig, TrainState};
use crate::align::AlignmentHead;
use crate::concepts::ConceptVocabulary;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::text::{EncoderConfig, TextEncoder, Vocabulary};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DACK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    config: TrainConfig,
    encoder: EncoderConfig,
    vocab: Vec<String>,
    concepts: Vec<String>,
    epoch: usize,
    adam_step: u64,
}

fn push_store(out: &mut Vec<(String, Tensor)>, prefix: &str, store: &ParamStore) {
    for (name, t) in store.iter() {
        out.push((format!("{prefix}{name}"), t.clone()));
    }
}

impl TrainState {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Meta {
            config: self.config.clone(),
            encoder: self.encoder.config().clone(),
            vocab: self.vocab.tokens().to_vec(),
            concepts: self.concepts.concepts().to_vec(),
            epoch: self.epoch,
            adam_step: self.adam.step,
        };
        let meta = serde_json::to_vec(&meta)?;
        let mut arrays = Vec::new();
        push_store(&mut arrays, "encoder.", self.encoder.params());
        push_store(&mut arrays, "head.", self.head.params());
        push_store(&mut arrays, "adam.m.", &self.adam.m);
        push_store(&mut arrays, "adam.v.", &self.adam.v);

        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
        for (name, t) in &arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            origin,
        };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(r.error_at(0, "bad magic".into()));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(r.error_at(4, format!("unsupported version {version}")));
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta_at = r.pos;
        let meta: Meta = serde_json::from_slice(r.take(meta_len, "metadata")?)
            .map_err(|e| r.error_at(meta_at, format!("metadata: {e}")))?;
        let count = r.u32("array count")?;
        let mut encoder = ParamStore::new();
        let mut head = ParamStore::new();
        let mut m = ParamStore::new();
        let mut v = ParamStore::new();
        for _ in 0..count {
            let at = r.pos;
            let name_len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "array name")?)
                .map_err(|_| r.error_at(at + 4, "array name is not UTF-8".into()))?
                .to_owned();
            let ndim = r.u32("ndim")? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(r.u64("dimension")? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| r.error_at(at, format!("array {name} is too large")))?;
            let data: Vec<f64> = r
                .take(n, "array data")?
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data)?;
            let (store, key) = if let Some(k) = name.strip_prefix("encoder.") {
                (&mut encoder, k)
            } else if let Some(k) = name.strip_prefix("head.") {
                (&mut head, k)
            } else if let Some(k) = name.strip_prefix("adam.m.") {
                (&mut m, k)
            } else if let Some(k) = name.strip_prefix("adam.v.") {
                (&mut v, k)
            } else {
                return Err(r.error_at(at, format!("unknown array {name}")));
            };
            if store.get(key).is_some() {
                return Err(r.error_at(at, format!("duplicate array {name}")));
            }
            store.insert(key, t);
        }
        if r.pos != bytes.len() {
            return Err(r.error_at(r.pos, "trailing bytes".into()));
        }
        Ok(Self {
            adam: Adam {
                config: meta.config.adam,
                step: meta.adam_step,
                m,
                v,
            },
            config: meta.config,
            vocab: Vocabulary::from_tokens(meta.vocab)?,
            concepts: ConceptVocabulary::from_names(meta.concepts),
            encoder: TextEncoder::from_params(meta.encoder, encoder)?,
            head: AlignmentHead::from_params(head)?,
            epoch: meta.epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: usize, msg: String) -> Error {
        Error::Format {
            path: self.origin.to_owned(),
            offset: offset as u64,
            msg,
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        match self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()) {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.error_at(self.pos, format!("truncated {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}
