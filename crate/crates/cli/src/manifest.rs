//! Run manifests: the resolved command, input hashes and outputs, written
//! before any work starts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::Command;
use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    /// Hex SHA-256 of the file, or of the sorted `name\0bytes` entries of a
    /// directory.
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest(path: &Path) -> Result<String, CliError> {
    let io = |e| CliError::input(format!("{}: {e}", path.display()));
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(io)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()
            .map_err(io)?;
        entries.sort();
        for e in entries.iter().filter(|e| e.is_file()) {
            h.update(e.file_name().unwrap_or_default().as_encoded_bytes());
            h.update([0]);
            h.update(fs::read(e).map_err(io)?);
        }
    } else {
        h.update(fs::read(path).map_err(io)?);
    }
    Ok(hex(&h.finalize()))
}

impl RunManifest {
    pub fn new(command: &Command, inputs: &[&Path], outputs: &[&Path]) -> Result<Self, CliError> {
        let seed = match command {
            Command::Train(a) => Some(a.seed),
            Command::Stats(a) => Some(a.seed),
            Command::Synth(a) => Some(a.seed),
            Command::Degrade(a) => Some(a.seed),
            _ => None,
        };
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(InputDigest {
                    path: p.to_path_buf(),
                    sha256: digest(p)?,
                })
            })
            .collect::<Result<_, CliError>>()?;
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            command: command.clone(),
            seed,
            inputs,
            outputs: outputs.iter().map(|p| p.to_path_buf()).collect(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
        }
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::internal(e.to_string()))? + "\n";
        fs::write(path, text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }

    /// Inputs whose current contents differ from the recorded hash.
    pub fn changed_inputs(&self) -> Vec<PathBuf> {
        self.inputs
            .iter()
            .filter(|i| digest(&i.path).ok().as_deref() != Some(i.sha256.as_str()))
            .map(|i| i.path.clone())
            .collect()
    }
}

/// `<dir>/manifest.json` for directory outputs, `<file>.manifest.json`
/// otherwise.
pub fn manifest_path(out: &Path, out_is_dir: bool) -> PathBuf {
    if out_is_dir {
        out.join("manifest.json")
    } else {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        out.with_file_name(name)
    }
}
