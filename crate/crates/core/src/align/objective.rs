use super::{
    concept_loss, global_contrastive_loss, pool_text_concept, pool_visual_concept, total_loss,
    AlignConfig, AlignmentHead,
};
use crate::concepts::CaptionConcept;
use crate::error::{Error, Result};
use crate::params::Bound;
use crate::tensor::{Tape, Tensor, Var};
use crate::text::{TextEncoder, TokenizedCaption};

/// One caption paired with its image's frozen features.
#[derive(Clone, Copy, Debug)]
pub struct AlignmentExample<'a> {
    pub tokens: &'a TokenizedCaption,
    pub concepts: &'a [CaptionConcept],
    /// Dense patch features `[n_v × d]`.
    pub patches: &'a Tensor,
    /// Global image vector (`d` values).
    pub global: &'a [f64],
}

#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub global: Var,
    pub concept: Var,
    pub total: Var,
    pub n_concepts: usize,
}

/// Records the full objective for a batch on `tape`.
///
/// Visual features enter as constants; gradients reach the encoder through
/// the text concepts (both the pooling weights and the global loss) and the
/// head through the classifier and logit scale. `head_prompts` supplies one
/// tokenized prompt per concept label when `cfg.tie_head` is set.
#[allow(clippy::too_many_arguments)]
pub fn alignment_loss(
    tape: &mut Tape,
    encoder: &TextEncoder,
    encoder_params: &Bound,
    head: &AlignmentHead,
    head_params: &Bound,
    examples: &[AlignmentExample<'_>],
    cfg: &AlignConfig,
    head_prompts: Option<&[TokenizedCaption]>,
) -> Result<LossParts> {
    cfg.validate()?;
    let d = encoder.config().out_dim;
    let toks: Vec<&TokenizedCaption> = examples.iter().map(|e| e.tokens).collect();
    let enc = encoder.forward(tape, encoder_params, &toks)?;

    let mut globals = Vec::with_capacity(examples.len() * d);
    for e in examples {
        if e.global.len() != d {
            return Err(Error::Shape {
                op: "alignment_loss global",
                lhs: vec![d],
                rhs: vec![e.global.len()],
            });
        }
        globals.extend_from_slice(e.global);
    }
    let image_globals = tape.constant(Tensor::matrix(examples.len(), d, globals)?);
    let scale_log = head_params.var(
        head.params()
            .position(AlignmentHead::LOGIT_SCALE)
            .expect("head has a logit scale"),
    );
    let scale = tape.exp(scale_log)?;
    let global = global_contrastive_loss(tape, image_globals, enc.eos, scale)?;

    let mut classifier = head_params.var(
        head.params()
            .position(AlignmentHead::CLASSIFIER)
            .expect("head has a classifier"),
    );
    if cfg.tie_head {
        let prompts = head_prompts
            .ok_or_else(|| Error::Config("tie_head needs one prompt per concept".into()))?;
        if prompts.len() != head.num_concepts() {
            return Err(Error::Config(format!(
                "tie_head: {} prompts for {} concepts",
                prompts.len(),
                head.num_concepts()
            )));
        }
        let refs: Vec<&TokenizedCaption> = prompts.iter().collect();
        classifier = encoder.forward(tape, encoder_params, &refs)?.eos;
    }
    if cfg.normalize_concepts {
        classifier = tape.l2_normalize(classifier, 1)?;
    }

    let mut visual = Vec::new();
    let mut labels = Vec::new();
    for (i, e) in examples.iter().enumerate() {
        if e.concepts.is_empty() {
            continue;
        }
        if e.patches.cols() != d {
            return Err(Error::Shape {
                op: "alignment_loss patches",
                lhs: vec![d],
                rhs: e.patches.shape().to_vec(),
            });
        }
        let patches = tape.constant(e.patches.clone());
        let scored = if cfg.normalize_patches {
            Some(tape.l2_normalize(patches, 1)?)
        } else {
            None
        };
        for c in e.concepts {
            if c.label >= head.num_concepts() {
                continue;
            }
            let rows: Vec<usize> = c.positions.iter().map(|&p| enc.row(i, p)).collect();
            let text_concept = pool_text_concept(tape, enc.tokens, &rows)?;
            let (_, mut pooled) = pool_visual_concept(tape, patches, text_concept, cfg.tau, scored)?;
            if cfg.normalize_concepts {
                pooled = tape.l2_normalize(pooled, 1)?;
            }
            visual.push(pooled);
            labels.push(c.label);
        }
    }
    let concept = concept_loss(tape, &visual, &labels, classifier)?;
    let total = total_loss(tape, global, concept, cfg.lambda)?;
    Ok(LossParts {
        global,
        concept,
        total,
        n_concepts: labels.len(),
    })
}
