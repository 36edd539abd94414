use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use super::{span_to_token_indices, ConceptParser};
use crate::error::{Error, Result};
use crate::text::TokenizedCaption;

/// Alphabetically ordered concept names; a concept's label is its index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConceptVocabulary {
    concepts: Vec<String>,
    labels: HashMap<String, usize>,
}

/// One in-vocabulary concept mention, ready for pooling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaptionConcept {
    pub label: usize,
    /// Token positions (the index set of the phrase) in the tokenized caption.
    pub positions: Vec<usize>,
}

impl ConceptVocabulary {
    /// All canonical heads with corpus frequency `>= min_freq`.
    pub fn build<'a>(
        parser: &ConceptParser,
        captions: impl IntoIterator<Item = &'a str>,
        min_freq: usize,
    ) -> Result<Self> {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for c in captions {
            for np in parser.noun_phrases(c) {
                *counts.entry(np.head).or_default() += 1;
            }
        }
        let names: Vec<String> = counts
            .into_iter()
            .filter(|(_, n)| *n >= min_freq)
            .map(|(c, _)| c)
            .collect();
        if names.is_empty() {
            return Err(Error::Config(format!(
                "no concept reaches min_freq {min_freq}"
            )));
        }
        Ok(Self::from_names(names))
    }

    /// Sorts and deduplicates `names` into a label space.
    pub fn from_names(mut names: Vec<String>) -> Self {
        names.sort();
        names.dedup();
        let labels = names.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        Self {
            concepts: names,
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    pub fn label(&self, concept: &str) -> Option<usize> {
        self.labels.get(concept).copied()
    }

    pub fn name(&self, label: usize) -> Option<&str> {
        self.concepts.get(label).map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        self.concepts.iter().map(|c| format!("{c}\n")).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let names: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect();
        if names.is_empty() {
            return Err(Error::Config(format!("{}: empty concept list", path.display())));
        }
        Ok(Self::from_names(names))
    }
}

/// Noun phrases of `caption` that are in `vocab` and survive tokenization.
pub fn extract_concepts(
    parser: &ConceptParser,
    vocab: &ConceptVocabulary,
    caption: &str,
    tok: &TokenizedCaption,
) -> Vec<CaptionConcept> {
    parser
        .noun_phrases(caption)
        .into_iter()
        .filter_map(|np| {
            let label = vocab.label(&np.head)?;
            let positions = span_to_token_indices(&np, tok);
            (!positions.is_empty()).then_some(CaptionConcept { label, positions })
        })
        .collect()
}
