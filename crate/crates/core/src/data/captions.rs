//! JSONL caption store: one `{image_id, caption, prompt?, source?}` object
//! per line.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FeatureStore;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    pub caption: String,
    /// Prompt the caption was generated from; empty for raw captions.
    #[serde(default)]
    pub prompt: String,
    /// `raw`, `synthetic` or `synthetic-world`.
    #[serde(default = "default_source")]
    pub source: String,
}

fn default_source() -> String {
    "raw".to_owned()
}

impl CaptionRecord {
    pub fn new(image_id: impl Into<String>, caption: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            caption: caption.into(),
            prompt: String::new(),
            source: default_source(),
        }
    }
}

/// Parses JSONL text; `origin` names the source in errors. Blank lines are
/// skipped, unknown keys ignored.
pub fn parse_captions(text: &str, origin: &str) -> Result<Vec<CaptionRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: CaptionRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: origin.to_owned(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_captions(path: &Path) -> Result<Vec<CaptionRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_captions(&text, &path.display().to_string())
}

pub fn captions_to_jsonl(records: &[CaptionRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_captions(records: &[CaptionRecord], path: &Path) -> Result<()> {
    let text = captions_to_jsonl(records)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Fails on the first caption whose image is not in `features`.
pub fn check_image_ids(records: &[CaptionRecord], features: &FeatureStore) -> Result<()> {
    for (i, r) in records.iter().enumerate() {
        if features.get(&r.image_id).is_none() {
            return Err(Error::Input(format!(
                "caption {} refers to unknown image_id {}",
                i + 1,
                r.image_id
            )));
        }
    }
    Ok(())
}
