//! Word-level tokenization and the causal transformer text encoder.

mod encoder;
mod vocab;

pub use encoder::{EncodedBatch, EncoderConfig, TextEncoder};
pub use vocab::{split_words, TokenizedCaption, Vocabulary, Word, BOS, EOS, PAD, UNK};
