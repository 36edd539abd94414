//! Zero-shot segmentation: class prototypes from prompt templates,
//! sliding-window patch scoring, mIoU under the foreground and whole-image
//! protocols, threshold calibration, heatmaps and PCA images.

mod metrics;
mod predict;
mod visual;

pub use metrics::{
    accumulate, calibrate_threshold, default_threshold_grid, miou, whole_image_confusion,
    ConfusionMatrix, MIoUReport,
};
pub use predict::{
    apply_background, patch_logits, predict_image, resize_bilinear, window_starts, EvalConfig,
    Protocol, SegPrediction,
};
pub use visual::{heatmap, patch_similarity, pca_project, pca_rgb};

use rayon::prelude::*;

use crate::data::{check_templates, fill_template, FeatureStore, Mask, Prototypes};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};
use crate::text::{TextEncoder, Vocabulary};

/// Name given to the extra class of the whole-image protocol.
pub const BACKGROUND: &str = "background";

/// One unit-norm prototype row per class name: the mean EOS embedding of
/// every filled template, L2-normalized.
pub fn embed_classes<S: AsRef<str>, T: AsRef<str>>(
    encoder: &TextEncoder,
    vocab: &Vocabulary,
    names: &[S],
    templates: &[T],
) -> Result<Tensor> {
    check_templates(templates)?;
    if names.is_empty() {
        return Err(Error::Config("no class names".into()));
    }
    let d = encoder.config().out_dim;
    let mut rows = Vec::with_capacity(names.len());
    for name in names {
        let prompts: Vec<String> = templates
            .iter()
            .map(|t| fill_template(t.as_ref(), name.as_ref()))
            .collect();
        let refs: Vec<&str> = prompts.iter().map(String::as_str).collect();
        let eos = encoder.encode_texts(vocab, &refs)?;
        let mut mean = vec![0.0; d];
        for r in 0..eos.rows() {
            mean.iter_mut().zip(eos.row(r)).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= eos.rows() as f64);
        rows.push(mean);
    }
    normalize_rows(Tensor::from_rows(&rows)?)
}

/// Ground-truth means as prototypes, reordered to `names`.
pub fn prototypes_from_means<S: AsRef<str>>(protos: &Prototypes, names: &[S]) -> Result<Tensor> {
    let rows = names
        .iter()
        .map(|n| {
            protos
                .classes
                .iter()
                .position(|c| c == n.as_ref())
                .map(|i| protos.means[i].clone())
                .ok_or_else(|| Error::Input(format!("no prototype for class {}", n.as_ref())))
        })
        .collect::<Result<Vec<_>>>()?;
    normalize_rows(Tensor::from_rows(&rows)?)
}

fn normalize_rows(t: Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(t);
    let n = tape.l2_normalize(x, 1)?;
    Ok(tape.value(n).clone())
}

/// Predicts and scores every record that has a mask; images run in parallel
/// and their confusion matrices are summed. `masks[i]` belongs to record
/// `i` of `features`.
pub fn evaluate_store(
    features: &FeatureStore,
    masks: &[Mask],
    prototypes: &Tensor,
    class_names: &[String],
    cfg: &EvalConfig,
) -> Result<MIoUReport> {
    cfg.validate()?;
    if masks.len() != features.len() {
        return Err(Error::Input(format!(
            "{} masks for {} feature records",
            masks.len(),
            features.len()
        )));
    }
    let c = prototypes.rows();
    if class_names.len() != c {
        return Err(Error::Input(format!("{} names for {c} prototypes", class_names.len())));
    }
    let (n, names) = match cfg.protocol {
        Protocol::Foreground => (c, class_names.to_vec()),
        Protocol::WholeImage => {
            let mut n = class_names.to_vec();
            n.push(BACKGROUND.to_owned());
            (c + 1, n)
        }
    };
    let per_image: Vec<ConfusionMatrix> = features
        .records()
        .par_iter()
        .zip(masks)
        .map(|(rec, mask)| {
            let pred = predict_image(rec, prototypes, cfg, mask.width, mask.height)?;
            let pred = match cfg.threshold {
                Some(t) if cfg.protocol == Protocol::WholeImage => apply_background(&pred, t, c),
                _ => pred,
            };
            let mut cm = ConfusionMatrix::new(n);
            accumulate(&mut cm, &pred, mask, cfg.protocol)?;
            Ok(cm)
        })
        .collect::<Result<_>>()?;
    let mut total = ConfusionMatrix::new(n);
    for cm in &per_image {
        total.merge(cm);
    }
    miou(&total, &names, &[], cfg.protocol, cfg.threshold)
}

/// Raw (un-thresholded) predictions for every record, in store order.
pub fn predict_store(
    features: &FeatureStore,
    masks: &[Mask],
    prototypes: &Tensor,
    cfg: &EvalConfig,
) -> Result<Vec<SegPrediction>> {
    features
        .records()
        .par_iter()
        .zip(masks)
        .map(|(rec, mask)| predict_image(rec, prototypes, cfg, mask.width, mask.height))
        .collect()
}
