//! Helpers shared by the integration suites and the acceptance runner.
#![allow(dead_code)]

pub mod calibration;
pub mod goldens;
pub mod gradcheck;
pub mod nps;

use std::path::PathBuf;

/// `crates/core/tests/fixtures/<name>`, from either crate of the workspace.
pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}
