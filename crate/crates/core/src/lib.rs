//! Dense vision-language alignment trained from synthetic captions.
//!
//! A small causal transformer text encoder is aligned to frozen,
//! precomputed visual patch features. Noun-phrase concepts pulled from each
//! caption pool the text tokens (mean over the phrase span) and the image
//! patches (temperature softmax over patch/concept similarity); a linear
//! head classifies the pooled visual concepts while a symmetric InfoNCE
//! loss aligns the global text and image vectors. The trained encoder is
//! evaluated by zero-shot open-vocabulary segmentation.
//!
//! Module map:
//! - [`tensor`]: f64 tensors with a dynamic reverse-mode tape
//! - [`text`]: word-level vocabulary, tokenizer and the text encoder
//! - [`concepts`]: rule-based POS tagging and noun-phrase chunking
//! - [`align`]: concept pooling and the alignment losses
//! - [`train`]: Adam, checkpoints and the training loop
//! - [`data`]: feature/caption/mask/class-set formats and the synthetic world
//! - [`eval`]: sliding-window prediction, mIoU, heatmaps and PCA images

pub mod align;
pub mod concepts;
pub mod data;
pub mod error;
pub mod eval;
pub mod params;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
