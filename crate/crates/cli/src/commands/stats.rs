use std::path::Path;

use dalign::concepts::{extract_concepts, ConceptParser, ConceptVocabulary};
use dalign::data::{read_captions, ClassSet};
use dalign::text::Vocabulary;
use dalign::train::{batch_concept_stats, epoch_batches};
use serde::Serialize;

use super::{ensure_parent, json, require, write_atomic, Json};
use crate::args::{Command, StatsArgs};
use crate::manifest::{manifest_path, RunManifest};
use crate::{CliError, CliResult};

#[derive(Debug, Serialize)]
pub struct CaptionStats {
    pub captions: usize,
    pub batches: usize,
    pub concept_vocabulary: usize,
    /// Concept mentions per caption over the batched captions.
    pub concepts_per_caption: f64,
    pub unique_concepts_per_batch: f64,
    /// Share of captions with no concept mention at all.
    pub captions_without_concepts: f64,
}

fn concept_list(a: &StatsArgs, parser: &ConceptParser, texts: &[&str]) -> CliResult<ConceptVocabulary> {
    match &a.concepts {
        Some(p) if p.extension().is_some_and(|e| e == "json") => {
            Ok(ConceptVocabulary::from_names(ClassSet::load(p)?.classes))
        }
        Some(p) => Ok(ConceptVocabulary::load(p)?),
        None => Ok(ConceptVocabulary::build(parser, texts.iter().copied(), a.concept_min_freq)?),
    }
}

pub fn run(command: &Command, a: &StatsArgs) -> CliResult<Json> {
    let mut inputs: Vec<&Path> = vec![&a.captions];
    inputs.extend(a.concepts.as_deref());
    require(&inputs)?;
    RunManifest::new(command, &inputs, &[&a.out])?.write(&manifest_path(&a.out, false))?;

    let records = read_captions(&a.captions)?;
    if records.is_empty() {
        return Err(CliError::input(format!("{}: no captions", a.captions.display())));
    }
    let texts: Vec<&str> = records.iter().map(|r| r.caption.as_str()).collect();
    let parser = ConceptParser::default();
    let concepts = concept_list(a, &parser, &texts)?;
    // Every word gets an id, so truncation at max_len is the only way a
    // mention can be lost, as in training with the default vocabulary.
    let vocab = Vocabulary::build(texts.iter().copied(), 1, usize::MAX)?;
    let per_caption: Vec<_> = texts
        .iter()
        .map(|t| extract_concepts(&parser, &concepts, t, &vocab.tokenize(t, a.max_len)))
        .collect();

    let batches = epoch_batches(records.len(), a.batch_size, a.seed, 1);
    if batches.is_empty() {
        return Err(CliError::input("no batch of at least 2 captions"));
    }
    let (mut total, mut unique, mut counted) = (0, 0, 0);
    for b in &batches {
        let (t, u) = batch_concept_stats(b.iter().map(|&i| per_caption[i].as_slice()));
        total += t;
        unique += u;
        counted += b.len();
    }
    let stats = CaptionStats {
        captions: records.len(),
        batches: batches.len(),
        concept_vocabulary: concepts.len(),
        concepts_per_caption: total as f64 / counted as f64,
        unique_concepts_per_batch: unique as f64 / batches.len() as f64,
        captions_without_concepts: per_caption.iter().filter(|c| c.is_empty()).count() as f64 / records.len() as f64,
    };
    log::info!(
        "{} captions: {:.3} concepts per caption, {:.2} distinct per batch",
        stats.captions,
        stats.concepts_per_caption,
        stats.unique_concepts_per_batch
    );
    let text = serde_json::to_string_pretty(&stats).map_err(|e| CliError::internal(e.to_string()))? + "\n";
    ensure_parent(&a.out)?;
    write_atomic(&a.out, text.as_bytes())?;
    json(&stats)
}
