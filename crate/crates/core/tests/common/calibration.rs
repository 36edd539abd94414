//! A toy whole-image fixture with truth background, and a pixel-by-pixel
//! mIoU oracle for it.

use dalign::data::{GrayImage, IGNORE_INDEX};
use dalign::eval::{SegPrediction, BACKGROUND};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two small images with scores spread over `[-1, 1]` and some truth
/// background; `C` = 2, background label 2.
pub fn toy(seed: u64) -> (Vec<SegPrediction>, Vec<GrayImage>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut preds = Vec::new();
    let mut masks = Vec::new();
    for _ in 0..2 {
        let (w, h) = (5, 4);
        let truth: Vec<u8> = (0..w * h)
            .map(|_| match rng.random_range(0..3) {
                2 => IGNORE_INDEX,
                c => c as u8,
            })
            .collect();
        let labels: Vec<usize> = truth
            .iter()
            .map(|&t| if t != IGNORE_INDEX && rng.random_bool(0.7) { t as usize } else { rng.random_range(0..2) })
            .collect();
        // background pixels tend to score lower
        let scores: Vec<f64> = truth
            .iter()
            .map(|&t| {
                let s: f64 = rng.random_range(-1.0..1.0);
                if t == IGNORE_INDEX { s - 0.3 } else { s + 0.2 }
            })
            .collect();
        preds.push(SegPrediction { width: w, height: h, labels, scores });
        masks.push(GrayImage::new(w, h, truth).unwrap());
    }
    (preds, masks)
}

/// Whole-image mIoU counted pixel by pixel.
pub fn oracle_miou(preds: &[SegPrediction], masks: &[GrayImage], t: f64) -> f64 {
    let mut inter = [0usize; 3];
    let mut union = [0usize; 3];
    for (p, m) in preds.iter().zip(masks) {
        for i in 0..m.pixels.len() {
            let truth = if m.pixels[i] == IGNORE_INDEX { 2 } else { m.pixels[i] as usize };
            let pred = if p.scores[i] < t { 2 } else { p.labels[i] };
            for c in 0..3 {
                if truth == c && pred == c {
                    inter[c] += 1;
                }
                if truth == c || pred == c {
                    union[c] += 1;
                }
            }
        }
    }
    let present: Vec<usize> = (0..3).filter(|&c| union[c] > 0).collect();
    present.iter().map(|&c| inter[c] as f64 / union[c] as f64).sum::<f64>() / present.len() as f64
}

pub fn names3() -> Vec<String> {
    vec!["a".into(), "b".into(), BACKGROUND.into()]
}
