use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use dalign::align::AlignConfig;
use dalign::concepts::ConceptParser;
use dalign::train::{fit, EpochMetrics, PreparedData, TrainConfig, TrainState};

use super::{load_captions, load_features, require, write_atomic, Json};
use crate::args::{Command, TrainArgs};
use crate::manifest::{manifest_path, RunManifest};
use crate::{CliError, CliResult};

pub const CHECKPOINT: &str = "checkpoint.dack";
pub const METRICS: &str = "metrics.jsonl";
pub const VOCAB: &str = "vocab.txt";
pub const CONCEPTS: &str = "concepts.txt";

pub fn config(a: &TrainArgs) -> TrainConfig {
    TrainConfig {
        lr: a.lr,
        batch_size: a.batch_size,
        epochs: a.epochs,
        align: AlignConfig {
            lambda: a.lambda,
            tau: a.tau,
            normalize_concepts: a.normalize_concepts,
            normalize_patches: a.normalize_patches,
            tie_head: a.tie_head,
        },
        seed: a.seed,
        clip_norm: a.clip_norm,
        cosine: a.cosine,
        width: a.width,
        layers: a.layers,
        heads: a.heads,
        max_len: a.max_len,
        vocab_min_freq: a.vocab_min_freq,
        vocab_max_size: a.vocab_max_size,
        concept_min_freq: a.concept_min_freq,
        ..Default::default()
    }
}

/// Metric lines already logged for epochs up to `epoch`; later lines belong
/// to a run that is being replaced.
fn kept_metrics(path: &Path, epoch: usize) -> CliResult<String> {
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(String::new());
    };
    let mut kept = String::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let m: EpochMetrics = serde_json::from_str(line)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        if m.epoch <= epoch {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    Ok(kept)
}

pub fn run(command: &Command, a: &TrainArgs) -> CliResult<Json> {
    let mut inputs: Vec<&Path> = a.features.iter().chain(&a.captions).map(|p| p.as_path()).collect();
    inputs.extend(a.resume.as_deref());
    require(&inputs)?;
    let out = &a.out;
    fs::create_dir_all(out).map_err(|e| CliError::input(format!("{}: {e}", out.display())))?;
    let files = [CHECKPOINT, METRICS, VOCAB, CONCEPTS].map(|f| out.join(f));
    RunManifest::new(command, &inputs, &files.iter().map(|p| p.as_path()).collect::<Vec<_>>())?
        .write(&manifest_path(out, true))?;

    let features = load_features(&a.features)?;
    let captions = load_captions(&a.captions)?;
    let parser = ConceptParser::default();
    let mut state = match &a.resume {
        Some(p) => {
            let mut s = TrainState::load(p)?;
            log::info!("resuming from {} at epoch {}", p.display(), s.epoch);
            s.config.epochs = a.epochs;
            s
        }
        None => TrainState::new(config(a), &parser, &captions, features.dim())?,
    };
    let data = PreparedData::new(&state, &parser, &features, &captions)?;
    log::info!(
        "{} captions, {} images, vocabulary {}, {} concepts, {} encoder parameters",
        captions.len(),
        features.len(),
        state.vocab.len(),
        state.concepts.len(),
        state.encoder.params().num_scalars()
    );
    write_atomic(&out.join(VOCAB), state.vocab.to_text().as_bytes())?;
    write_atomic(&out.join(CONCEPTS), state.concepts.to_text().as_bytes())?;

    let metrics_path = out.join(METRICS);
    let prior = if a.resume.is_some() { kept_metrics(&metrics_path, state.epoch)? } else { String::new() };
    write_atomic(&metrics_path, prior.as_bytes())?;

    let ckpt = out.join(CHECKPOINT);
    fit(&mut state, &data, |s, m| {
        let line = serde_json::to_string(m)?;
        let append = || -> std::io::Result<()> {
            let mut f = OpenOptions::new().append(true).open(&metrics_path)?;
            writeln!(f, "{line}")
        };
        append().map_err(|e| dalign::Error::Input(format!("{}: {e}", metrics_path.display())))?;
        write_atomic(&ckpt, &s.to_bytes()?).map_err(|e| dalign::Error::Input(e.message))?;
        println!("{line}");
        Ok(())
    })?;
    Ok(None)
}
