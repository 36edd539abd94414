use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::predict::{apply_background, Protocol, SegPrediction};
use crate::data::{Mask, IGNORE_INDEX};
use crate::error::{Error, Result};

/// `counts[truth * n + pred]` pixel counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Input("confusion matrix must be square".into()));
        }
        Ok(Self {
            n,
            counts: rows.concat(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.n
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n + pred]
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.n + pred] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.n, other.n, "merging confusion matrices of different size");
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MIoUReport {
    /// IoU of every class present in prediction or truth.
    pub per_class: BTreeMap<String, f64>,
    pub miou: f64,
    pub pixels_scored: u64,
    pub protocol: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl MIoUReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

/// Per-class `TP / (TP + FP + FN)` and their mean.
///
/// Classes in `ignore` contribute no pixels (their truth rows are skipped)
/// and no IoU. Classes absent from both prediction and truth are left out
/// of the mean. `names[i]` labels class `i`.
pub fn miou(
    cm: &ConfusionMatrix,
    names: &[String],
    ignore: &[usize],
    protocol: Protocol,
    threshold: Option<f64>,
) -> Result<MIoUReport> {
    let n = cm.num_classes();
    if names.len() != n {
        return Err(Error::Input(format!("{} class names for {n} classes", names.len())));
    }
    let scored_rows: Vec<usize> = (0..n).filter(|r| !ignore.contains(r)).collect();
    let pixels: u64 = scored_rows.iter().map(|&t| (0..n).map(|p| cm.get(t, p)).sum::<u64>()).sum();
    if pixels == 0 {
        return Err(Error::Input("no pixels were scored".into()));
    }
    let mut per_class = BTreeMap::new();
    let mut sum = 0.0;
    for &c in &scored_rows {
        let tp = cm.get(c, c);
        let fn_: u64 = (0..n).filter(|&p| p != c).map(|p| cm.get(c, p)).sum();
        let fp: u64 = scored_rows.iter().filter(|&&t| t != c).map(|&t| cm.get(t, c)).sum();
        let denom = tp + fp + fn_;
        if denom == 0 {
            continue;
        }
        let iou = tp as f64 / denom as f64;
        per_class.insert(names[c].clone(), iou);
        sum += iou;
    }
    let miou = sum / per_class.len() as f64;
    Ok(MIoUReport {
        per_class,
        miou,
        pixels_scored: pixels,
        protocol: protocol.name().to_owned(),
        threshold,
    })
}

/// Adds one image to `cm`.
///
/// Foreground: sentinel pixels are skipped and `cm` has `C` classes.
/// Whole-image: sentinel pixels are background, `cm` has `C + 1` classes and
/// the prediction must already carry background labels (index `C`).
pub fn accumulate(
    cm: &mut ConfusionMatrix,
    pred: &SegPrediction,
    mask: &Mask,
    protocol: Protocol,
) -> Result<()> {
    if (pred.width, pred.height) != (mask.width, mask.height) {
        return Err(Error::Input(format!(
            "prediction is {}x{} but the mask is {}x{}",
            pred.width, pred.height, mask.width, mask.height
        )));
    }
    let n = cm.num_classes();
    let classes = match protocol {
        Protocol::Foreground => n,
        Protocol::WholeImage => n - 1,
    };
    for (&t, &p) in mask.pixels.iter().zip(&pred.labels) {
        let truth = match (t == IGNORE_INDEX, protocol) {
            (true, Protocol::Foreground) => continue,
            (true, Protocol::WholeImage) => classes,
            (false, _) if (t as usize) < classes => t as usize,
            (false, _) => {
                return Err(Error::Input(format!("mask label {t} is outside the {classes} classes")))
            }
        };
        if p >= n {
            return Err(Error::Input(format!("predicted label {p} is outside {n} classes")));
        }
        cm.add(truth, p);
    }
    Ok(())
}

/// Whole-image confusion of `preds` against `masks` at `threshold`.
pub fn whole_image_confusion(
    preds: &[SegPrediction],
    masks: &[Mask],
    num_classes: usize,
    threshold: f64,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(num_classes + 1);
    for (p, m) in preds.iter().zip(masks) {
        let bg = apply_background(p, threshold, num_classes);
        accumulate(&mut cm, &bg, m, Protocol::WholeImage)?;
    }
    Ok(cm)
}

/// The grid value maximizing whole-image mIoU on `preds`/`masks`; ties go
/// to the lowest threshold. `names` has the `C` class names plus the
/// background name.
pub fn calibrate_threshold(
    preds: &[SegPrediction],
    masks: &[Mask],
    names: &[String],
    grid: &[f64],
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Config("empty threshold grid".into()));
    }
    if preds.len() != masks.len() {
        return Err(Error::Input(format!("{} predictions for {} masks", preds.len(), masks.len())));
    }
    let mut sorted: Vec<f64> = grid.iter().copied().filter(|t| !t.is_nan()).collect();
    sorted.sort_by(f64::total_cmp);
    let c = names.len() - 1;
    let mut best: Option<(f64, f64)> = None;
    for &t in &sorted {
        let cm = whole_image_confusion(preds, masks, c, t)?;
        let m = miou(&cm, names, &[], Protocol::WholeImage, Some(t))?.miou;
        if best.is_none_or(|(_, b)| m > b) {
            best = Some((t, m));
        }
    }
    best.map(|(t, _)| t).ok_or_else(|| Error::Config("threshold grid has only NaN".into()))
}

/// `−∞` followed by `steps + 1` evenly spaced cosine thresholds in `[−1, 1]`.
pub fn default_threshold_grid(steps: usize) -> Vec<f64> {
    let mut g = vec![f64::NEG_INFINITY];
    g.extend((0..=steps).map(|i| -1.0 + 2.0 * i as f64 / steps.max(1) as f64));
    g
}
