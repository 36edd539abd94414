use nalgebra::{DMatrix, SymmetricEigen};

use super::predict::resize_bilinear;
use crate::data::{FeatureRecord, GrayImage, RgbImage};
use crate::error::{Error, Result};

/// Min-max scales `v` to `[0, 255]`; a constant input maps to all zeros.
fn min_max_255(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| 255.0 * (x - lo) / range).collect()
}

fn to_u8(x: f64) -> u8 {
    x.round().clamp(0.0, 255.0) as u8
}

/// Cosine similarity of every patch to `query`, on the patch grid.
pub fn patch_similarity(record: &FeatureRecord, query: &[f64]) -> Result<Vec<f64>> {
    if query.len() != record.dim() {
        return Err(Error::Shape {
            op: "heatmap",
            lhs: vec![record.dim()],
            rhs: vec![query.len()],
        });
    }
    let eps = crate::tensor::NORMALIZE_EPS;
    let qn = query.iter().map(|x| x * x).sum::<f64>().sqrt().max(eps);
    Ok((0..record.num_patches())
        .map(|i| {
            let p = record.patch(i);
            let pn = p.iter().map(|x| x * x).sum::<f64>().sqrt().max(eps);
            p.iter().zip(query).map(|(a, b)| a * b).sum::<f64>() / (pn * qn)
        })
        .collect())
}

/// Patch/query cosine similarity, min-max scaled to `[0, 255]` on the grid
/// and bilinearly upsampled to `out_w × out_h`.
pub fn heatmap(record: &FeatureRecord, query: &[f64], out_w: usize, out_h: usize) -> Result<GrayImage> {
    let sim = patch_similarity(record, query)?;
    let scaled = min_max_255(&sim);
    let up = resize_bilinear(&scaled, record.grid_h, record.grid_w, out_h, out_w);
    GrayImage::new(out_w, out_h, up.into_iter().map(to_u8).collect())
}

/// Centered patch features projected on the top-`k` principal axes,
/// `n_v × k` row-major. Axes come from the covariance eigendecomposition,
/// sorted by decreasing eigenvalue, each signed so its largest-magnitude
/// entry is positive. Missing axes (`k > d`) and axes with numerically zero
/// variance project to zero.
pub fn pca_project(record: &FeatureRecord, k: usize) -> Result<Vec<f64>> {
    let n = record.num_patches();
    let d = record.dim();
    if n < 3 {
        return Err(Error::Input(format!("PCA needs at least 3 patches, got {n}")));
    }
    let x = DMatrix::from_row_slice(n, d, &record.patches);
    let mean = x.row_mean();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let mut out = vec![0.0; n * k];
    for (j, &axis) in order.iter().take(k).enumerate() {
        if !(eig.eigenvalues[axis] > 1e-12 * top) {
            continue;
        }
        let mut v = eig.eigenvectors.column(axis).into_owned();
        let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            v = -v;
        }
        let proj = &centered * v;
        for i in 0..n {
            out[i * k + j] = proj[i];
        }
    }
    Ok(out)
}

/// Top-3 principal components of the patch features as RGB, per-channel
/// min-max scaled and bilinearly upsampled.
pub fn pca_rgb(record: &FeatureRecord, out_w: usize, out_h: usize) -> Result<RgbImage> {
    let n = record.num_patches();
    let proj = pca_project(record, 3)?;
    let mut pixels = vec![0u8; 3 * out_w * out_h];
    for ch in 0..3 {
        let channel: Vec<f64> = (0..n).map(|i| proj[i * 3 + ch]).collect();
        let scaled = min_max_255(&channel);
        let up = resize_bilinear(&scaled, record.grid_h, record.grid_w, out_h, out_w);
        for (i, v) in up.into_iter().enumerate() {
            pixels[3 * i + ch] = to_u8(v);
        }
    }
    RgbImage::new(out_w, out_h, pixels)
}
