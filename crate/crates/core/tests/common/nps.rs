//! The hand-annotated noun-phrase sentences and the word list canonicalization
//! is checked on.

use std::collections::BTreeSet;
use std::fs;

use dalign::concepts::Lexicon;
use dalign::data::{generate_synthetic_world, SyntheticWorldSpec};
use dalign::text::split_words;
use serde::Deserialize;

#[derive(Deserialize)]
pub struct Annotated {
    pub sentence: String,
    pub noun_phrases: Vec<Phrase>,
}

#[derive(Deserialize)]
pub struct Phrase {
    pub span: (usize, usize),
    pub head: String,
}

pub fn fixture() -> Vec<Annotated> {
    let text = fs::read_to_string(super::fixture("np_fixture.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Every word the tagger knows, every word of the fixture and of a
/// generated world's captions, plus `s`, `es` and `ss` variants of each.
pub fn corpus_vocabulary() -> (Vec<String>, Vec<String>) {
    let lex = Lexicon::builtin();
    let mut captions: Vec<String> = fixture().into_iter().map(|a| a.sentence).collect();
    let world = generate_synthetic_world(&SyntheticWorldSpec {
        train_images: 64,
        eval_images: 8,
        num_concepts: 16,
        ..Default::default()
    })
    .unwrap();
    captions.extend(world.train.captions.iter().map(|c| c.caption.clone()));
    let mut words: BTreeSet<String> = BTreeSet::new();
    for set in [
        &lex.determiners,
        &lex.prepositions,
        &lex.pronouns,
        &lex.conjunctions,
        &lex.verbs,
        &lex.adverbs,
        &lex.adjectives,
        &lex.nouns,
    ] {
        words.extend(set.iter().cloned());
    }
    for c in &captions {
        words.extend(split_words(c).into_iter().map(|w| w.text));
    }
    let base: Vec<String> = words.iter().cloned().collect();
    for w in base {
        for suffix in ["s", "es", "ss"] {
            words.insert(format!("{w}{suffix}"));
        }
    }
    (words.into_iter().collect(), captions)
}
