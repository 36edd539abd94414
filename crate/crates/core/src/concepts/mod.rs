//! Concept identification: POS tagging, noun-phrase chunking, head-noun
//! canonicalization and the alphabetical concept label space.

mod lexicon;
mod parser;
mod vocab;

pub use lexicon::Lexicon;
pub use parser::{span_to_token_indices, ConceptParser, NounPhrase, PosTag};
pub use vocab::{extract_concepts, CaptionConcept, ConceptVocabulary};
