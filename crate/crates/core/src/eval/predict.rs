use serde::{Deserialize, Serialize};

use crate::data::FeatureRecord;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Background pixels (mask sentinel) are ignored.
    Foreground,
    /// Low-confidence pixels become an explicit background class.
    WholeImage,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Foreground => "foreground",
            Protocol::WholeImage => "whole-image",
        }
    }
}

/// Sliding-window settings, in patches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Resample the feature grid so its shorter side has this many patches.
    pub short_side: Option<usize>,
    pub window: usize,
    pub stride: usize,
    pub protocol: Protocol,
    /// Background threshold; required by the whole-image protocol only.
    pub threshold: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            short_side: None,
            window: 32,
            stride: 16,
            protocol: Protocol::Foreground,
            threshold: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        self.validate_windows()?;
        if self.short_side == Some(0) {
            return Err(Error::Config("short_side must be > 0".into()));
        }
        match (self.protocol, self.threshold) {
            (Protocol::WholeImage, None) => {
                Err(Error::Config("the whole-image protocol needs a threshold".into()))
            }
            (Protocol::Foreground, Some(_)) => {
                Err(Error::Config("a threshold only applies to the whole-image protocol".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Per-pixel labels and max scores at output resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct SegPrediction {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Window start offsets along one axis: stride steps, the last window
/// clamped to the edge. A window longer than the axis covers it once.
pub fn window_starts(len: usize, window: usize, stride: usize) -> Vec<usize> {
    if len <= window {
        return vec![0];
    }
    let mut starts: Vec<usize> = (0..).map(|i| i * stride).take_while(|&s| s + window < len).collect();
    starts.push(len - window);
    starts
}

/// Bilinear resampling of a `[h × w]` map, half-pixel centers
/// (`align_corners = false`), edges clamped.
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    assert_eq!(src.len(), h * w, "source size");
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
                let i0 = (s.floor() as usize).min(n_in - 1);
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let ys = axis(h, out_h);
    let xs = axis(w, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Patch features as `(grid_h, grid_w, rows)`, resampled per channel when
/// `short_side` is set.
fn feature_grid(record: &FeatureRecord, short_side: Option<usize>) -> (usize, usize, Vec<f64>) {
    let (gh, gw, d) = (record.grid_h, record.grid_w, record.dim());
    let Some(s) = short_side else {
        return (gh, gw, record.patches.clone());
    };
    let short = gh.min(gw);
    if short == s {
        return (gh, gw, record.patches.clone());
    }
    let nh = ((gh * s) as f64 / short as f64).round().max(1.0) as usize;
    let nw = ((gw * s) as f64 / short as f64).round().max(1.0) as usize;
    let mut out = vec![0.0; nh * nw * d];
    let mut channel = vec![0.0; gh * gw];
    for c in 0..d {
        for (i, v) in channel.iter_mut().enumerate() {
            *v = record.patches[i * d + c];
        }
        for (i, v) in resize_bilinear(&channel, gh, gw, nh, nw).into_iter().enumerate() {
            out[i * d + c] = v;
        }
    }
    (nh, nw, out)
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(crate::tensor::NORMALIZE_EPS);
    v.iter().map(|x| x / n).collect()
}

/// Averaged per-window cosine logits, `[C × gh × gw]` channel-major, with the
/// grid dims.
pub fn patch_logits(
    record: &FeatureRecord,
    prototypes: &Tensor,
    cfg: &EvalConfig,
) -> Result<(usize, usize, Vec<f64>)> {
    cfg.validate_windows()?;
    let c = prototypes.rows();
    if c == 0 {
        return Err(Error::Config("no classes to predict".into()));
    }
    if prototypes.cols() != record.dim() {
        return Err(Error::Shape {
            op: "predict_image",
            lhs: prototypes.shape().to_vec(),
            rhs: vec![record.dim()],
        });
    }
    let d = record.dim();
    let (gh, gw, feats) = feature_grid(record, cfg.short_side);
    let protos: Vec<Vec<f64>> = (0..c).map(|k| normalized(prototypes.row(k))).collect();
    let mut sum = vec![0.0; c * gh * gw];
    let mut count = vec![0u32; gh * gw];
    for y0 in window_starts(gh, cfg.window, cfg.stride) {
        for x0 in window_starts(gw, cfg.window, cfg.stride) {
            for y in y0..(y0 + cfg.window).min(gh) {
                for x in x0..(x0 + cfg.window).min(gw) {
                    let p = y * gw + x;
                    let z = normalized(&feats[p * d..(p + 1) * d]);
                    for (k, proto) in protos.iter().enumerate() {
                        sum[k * gh * gw + p] += z.iter().zip(proto).map(|(a, b)| a * b).sum::<f64>();
                    }
                    count[p] += 1;
                }
            }
        }
    }
    for k in 0..c {
        for (p, &n) in count.iter().enumerate() {
            sum[k * gh * gw + p] /= n as f64;
        }
    }
    Ok((gh, gw, sum))
}

impl EvalConfig {
    fn validate_windows(&self) -> Result<()> {
        if self.window == 0 || self.stride == 0 || self.stride > self.window {
            return Err(Error::Config(format!(
                "need 0 < stride <= window, got stride {} window {}",
                self.stride, self.window
            )));
        }
        Ok(())
    }
}

/// Scores every patch against the (normalized) class prototypes `[C × d]`
/// window by window, averages overlaps, upsamples the logits to
/// `out_w × out_h` and takes the per-pixel argmax (lowest class on ties).
pub fn predict_image(
    record: &FeatureRecord,
    prototypes: &Tensor,
    cfg: &EvalConfig,
    out_w: usize,
    out_h: usize,
) -> Result<SegPrediction> {
    let (gh, gw, logits) = patch_logits(record, prototypes, cfg)?;
    let c = prototypes.rows();
    let maps: Vec<Vec<f64>> = (0..c)
        .map(|k| resize_bilinear(&logits[k * gh * gw..(k + 1) * gh * gw], gh, gw, out_h, out_w))
        .collect();
    let n = out_w * out_h;
    let mut labels = vec![0; n];
    let mut scores = vec![f64::NEG_INFINITY; n];
    for (k, map) in maps.iter().enumerate() {
        for i in 0..n {
            if map[i] > scores[i] {
                scores[i] = map[i];
                labels[i] = k;
            }
        }
    }
    Ok(SegPrediction {
        width: out_w,
        height: out_h,
        labels,
        scores,
    })
}

/// Relabels pixels scoring below `threshold` as `background`.
pub fn apply_background(pred: &SegPrediction, threshold: f64, background: usize) -> SegPrediction {
    let mut out = pred.clone();
    for (l, &s) in out.labels.iter_mut().zip(&pred.scores) {
        if s < threshold {
            *l = background;
        }
    }
    out
}
