pub mod data;
pub mod eval;
pub mod stats;
pub mod train;
pub mod visual;

use std::fs;
use std::path::{Path, PathBuf};

use dalign::data::{read_captions, CaptionRecord, FeatureStore, GrayImage, Mask};

use crate::args::{Command, ReplayArgs};
use crate::manifest::RunManifest;
use crate::{CliError, CliResult};

pub(crate) type Json = Option<serde_json::Value>;

pub(crate) fn json(v: impl serde::Serialize) -> CliResult<Json> {
    serde_json::to_value(v).map(Some).map_err(|e| CliError::internal(e.to_string()))
}

/// Fails with the path when an input is missing, before a manifest is
/// written for it.
pub(crate) fn require(paths: &[&Path]) -> CliResult<()> {
    for p in paths {
        if !p.exists() {
            return Err(CliError::input(format!("{}: no such file or directory", p.display())));
        }
    }
    Ok(())
}

/// Concatenates several feature stores; image ids must stay unique.
pub(crate) fn load_features(paths: &[PathBuf]) -> CliResult<FeatureStore> {
    let mut stores = paths.iter().map(|p| FeatureStore::read(p));
    let mut merged = stores
        .next()
        .ok_or_else(|| CliError::input("no feature store given"))??;
    for s in stores {
        for r in s?.records() {
            merged.push(r.clone())?;
        }
    }
    Ok(merged)
}

pub(crate) fn load_captions(paths: &[PathBuf]) -> CliResult<Vec<CaptionRecord>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(read_captions(p)?);
    }
    Ok(out)
}

/// `<dir>/<image_id>.pgm` for every record, in store order.
pub(crate) fn load_masks(dir: &Path, features: &FeatureStore) -> CliResult<Vec<Mask>> {
    features
        .records()
        .iter()
        .map(|r| Ok(GrayImage::read(&dir.join(format!("{}.pgm", r.image_id)))?))
        .collect()
}

pub(crate) fn record_index(features: &FeatureStore, image_id: Option<&str>) -> CliResult<usize> {
    match image_id {
        None if features.is_empty() => Err(CliError::input("the feature store is empty")),
        None => Ok(0),
        Some(id) => features
            .position(id)
            .ok_or_else(|| CliError::input(format!("no record with image_id {id}"))),
    }
}

/// Write to a sibling temp file, then rename over the target.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let io = |e: std::io::Error| CliError::input(format!("{}: {e}", path.display()));
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub(crate) fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(d) => fs::create_dir_all(d).map_err(|e| CliError::input(format!("{}: {e}", d.display()))),
        None => Ok(()),
    }
}

pub fn replay(args: &ReplayArgs) -> CliResult<()> {
    let m = RunManifest::load(&args.manifest)?;
    if matches!(m.command, Command::Replay(_)) {
        return Err(CliError::input("a manifest cannot record a replay"));
    }
    let changed = m.changed_inputs();
    if !changed.is_empty() {
        return Err(CliError::input(format!(
            "inputs changed since the manifest was written: {}",
            changed.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
        )));
    }
    log::info!("replaying {} from {}", m.command.name(), args.manifest.display());
    crate::run(&m.command)
}
