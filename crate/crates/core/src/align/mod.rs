//! Concept pooling in both modalities and the two-term alignment objective.
//!
//! Text concepts are the mean of the dense text features over a phrase's
//! token positions. Visual concepts soft-pool the frozen patch features with
//! weights `softmax(z_v · c_t / τ)`. A linear head classifies each visual
//! concept into the concept label space (cross-entropy against the text
//! concept's label), and a symmetric InfoNCE loss aligns global vectors.
//! The total is `L_g + λ·L_l`.

mod head;
mod objective;

pub use head::{AlignConfig, AlignmentHead, LOGIT_SCALE_INIT, LOGIT_SCALE_MAX};
pub use objective::{alignment_loss, AlignmentExample, LossParts};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Mean of the rows of `tokens` listed in `rows`; `[1 × d]`.
pub fn pool_text_concept(tape: &mut Tape, tokens: Var, rows: &[usize]) -> Result<Var> {
    if rows.is_empty() {
        return Err(Error::Contract("text concept with an empty index set".into()));
    }
    let picked = tape.select_rows(tokens, rows)?;
    tape.mean_rows(picked)
}

/// Soft-pools `patches [n_v × d]` by similarity to `concept [1 × d]`.
///
/// Returns `(weights [n_v × 1], pooled [1 × d])`. When `score_patches` is
/// given it replaces `patches` in the similarity (e.g. a row-normalized
/// copy) while the pooled output still averages `patches`.
pub fn pool_visual_concept(
    tape: &mut Tape,
    patches: Var,
    concept: Var,
    tau: f64,
    score_patches: Option<Var>,
) -> Result<(Var, Var)> {
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("pooling temperature must be > 0, got {tau}")));
    }
    let ct = tape.transpose(concept)?;
    let scores = tape.matmul(score_patches.unwrap_or(patches), ct)?;
    let weights = tape.softmax(scores, 0, tau)?;
    let wt = tape.transpose(weights)?;
    let pooled = tape.matmul(wt, patches)?;
    Ok((weights, pooled))
}

/// Symmetric InfoNCE over L2-normalized global vectors, logits scaled by the
/// one-element `scale`. Row `i` of both sides is the matched pair.
pub fn global_contrastive_loss(tape: &mut Tape, image: Var, text: Var, scale: Var) -> Result<Var> {
    let b = tape.value(image).rows();
    if b < 2 {
        return Err(Error::Contract(format!(
            "contrastive loss needs at least 2 pairs, got {b}"
        )));
    }
    if tape.value(image).shape() != tape.value(text).shape() {
        return Err(Error::Shape {
            op: "global_contrastive_loss",
            lhs: tape.value(image).shape().to_vec(),
            rhs: tape.value(text).shape().to_vec(),
        });
    }
    let vi = tape.l2_normalize(image, 1)?;
    let vt = tape.l2_normalize(text, 1)?;
    let vtt = tape.transpose(vt)?;
    let sim = tape.matmul(vi, vtt)?;
    let logits = tape.mul_scalar(sim, scale)?;
    let diag: Vec<usize> = (0..b).collect();
    let image_to_text = tape.cross_entropy(logits, &diag)?;
    let logits_t = tape.transpose(logits)?;
    let text_to_image = tape.cross_entropy(logits_t, &diag)?;
    let both = tape.add(image_to_text, text_to_image)?;
    tape.scale(both, 0.5)
}

/// Mean cross-entropy of `visual_concepts · hᵀ` against `labels`.
///
/// With no concepts the loss is an exact, gradient-free zero.
pub fn concept_loss(
    tape: &mut Tape,
    visual_concepts: &[Var],
    labels: &[usize],
    classifier: Var,
) -> Result<Var> {
    if visual_concepts.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} visual concepts but {} labels",
            visual_concepts.len(),
            labels.len()
        )));
    }
    if visual_concepts.is_empty() {
        log::debug!("degenerate batch: no concepts for the concept loss");
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let stacked = tape.concat_rows(visual_concepts)?;
    let ht = tape.transpose(classifier)?;
    let logits = tape.matmul(stacked, ht)?;
    tape.cross_entropy(logits, labels)
}

/// `L_g + λ·L_l`.
pub fn total_loss(tape: &mut Tape, global: Var, concept: Var, lambda: f64) -> Result<Var> {
    if !(lambda >= 0.0) {
        return Err(Error::Parameter(format!("lambda must be >= 0, got {lambda}")));
    }
    let weighted = tape.scale(concept, lambda)?;
    tape.add(global, weighted)
}
