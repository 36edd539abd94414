//! Packed visual-feature store.
//!
//! Layout, little-endian:
//!
//! ```text
//! "DVF1" | u32 version = 1 | u32 d_v | u64 record_count
//! record: u32 id_len | id (UTF-8) | u16 h_p | u16 w_p
//!         | f32 cls[d_v] | f32 patches[h_p * w_p * d_v]
//! ```
//!
//! Values are `f32` on disk and `f64` in memory.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"DVF1";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRecord {
    pub image_id: String,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Global image vector.
    pub cls: Vec<f64>,
    /// Patch vectors, row-major over the grid, `grid_h * grid_w * d_v` values.
    pub patches: Vec<f64>,
}

impl FeatureRecord {
    pub fn num_patches(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn dim(&self) -> usize {
        self.cls.len()
    }

    pub fn patch(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.patches[i * d..(i + 1) * d]
    }

    /// Patches as an `[n_v × d_v]` matrix.
    pub fn patch_matrix(&self) -> Tensor {
        Tensor::matrix(self.num_patches(), self.dim(), self.patches.clone())
            .expect("record sizes validated on construction")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    records: Vec<FeatureRecord>,
    index: HashMap<String, usize>,
}

impl FeatureStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            records: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn from_records(dim: usize, records: Vec<FeatureRecord>) -> Result<Self> {
        let mut store = Self::new(dim);
        for r in records {
            store.push(r)?;
        }
        Ok(store)
    }

    pub fn push(&mut self, record: FeatureRecord) -> Result<()> {
        if record.cls.len() != self.dim {
            return Err(Error::Input(format!(
                "record {} has cls width {}, store d_v is {}",
                record.image_id,
                record.cls.len(),
                self.dim
            )));
        }
        if record.patches.len() != record.num_patches() * self.dim {
            return Err(Error::Input(format!(
                "record {} has {} patch values, expected {}x{}x{}",
                record.image_id,
                record.patches.len(),
                record.grid_h,
                record.grid_w,
                self.dim
            )));
        }
        if record.grid_h > u16::MAX as usize || record.grid_w > u16::MAX as usize {
            return Err(Error::Input(format!("record {} grid too large", record.image_id)));
        }
        if self.index.contains_key(&record.image_id) {
            return Err(Error::Input(format!("duplicate image_id {}", record.image_id)));
        }
        self.index.insert(record.image_id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    pub fn get(&self, image_id: &str) -> Option<&FeatureRecord> {
        self.index.get(image_id).map(|&i| &self.records[i])
    }

    pub fn position(&self, image_id: &str) -> Option<usize> {
        self.index.get(image_id).copied()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.image_id.len() as u32).to_le_bytes());
            out.extend_from_slice(r.image_id.as_bytes());
            out.extend_from_slice(&(r.grid_h as u16).to_le_bytes());
            out.extend_from_slice(&(r.grid_w as u16).to_le_bytes());
            for &v in r.cls.iter().chain(&r.patches) {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.to_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    /// Parses a store, validating the header and every declared length.
    /// `origin` names the source in error messages.
    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let mut c = Cursor {
            bytes,
            pos: 0,
            origin,
        };
        let magic = c.take(4, "magic")?;
        if magic != FEATURE_MAGIC {
            return Err(c.error_at(0, format!("bad magic {magic:?}")));
        }
        let version = c.u32("version")?;
        if version != FEATURE_VERSION {
            return Err(c.error_at(4, format!("unsupported version {version}")));
        }
        let dim = c.u32("d_v")? as usize;
        let count = c.u64("record count")?;
        let mut store = Self::new(dim);
        for _ in 0..count {
            let start = c.pos;
            let id_len = c.u32("id length")? as usize;
            let id = std::str::from_utf8(c.take(id_len, "image id")?)
                .map_err(|_| c.error_at(start + 4, "image id is not UTF-8".into()))?
                .to_owned();
            let grid_h = c.u16("h_p")? as usize;
            let grid_w = c.u16("w_p")? as usize;
            let cls = c.f32s(dim, "cls")?;
            let patches = c.f32s(grid_h * grid_w * dim, "patches")?;
            if store.index.contains_key(&id) {
                return Err(c.error_at(start, format!("duplicate image_id {id}")));
            }
            store.push(FeatureRecord {
                image_id: id,
                grid_h,
                grid_w,
                cls,
                patches,
            })?;
        }
        if c.pos != bytes.len() {
            return Err(c.error_at(c.pos, format!("{} trailing bytes", bytes.len() - c.pos)));
        }
        Ok(store)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl<'a> Cursor<'a> {
    fn error_at(&self, offset: usize, msg: String) -> Error {
        Error::Format {
            path: self.origin.to_owned(),
            offset: offset as u64,
            msg,
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.error_at(
                self.pos,
                format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            )),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| self.error_at(self.pos, format!("{what} length overflows")))?;
        let raw = self.take(len, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect())
    }
}
