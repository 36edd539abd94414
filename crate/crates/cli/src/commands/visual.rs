use std::path::Path;

use dalign::data::FeatureStore;
use dalign::eval::{heatmap as heatmap_image, patch_similarity, pca_rgb};
use serde_json::json as value;

use super::eval::class_prototypes;
use super::{ensure_parent, json, record_index, require, write_atomic, Json};
use crate::args::{Command, HeatmapArgs, PcaArgs};
use crate::manifest::{manifest_path, RunManifest};
use crate::{CliError, CliResult};

pub fn heatmap(command: &Command, a: &HeatmapArgs) -> CliResult<Json> {
    let mut inputs: Vec<&Path> = vec![&a.features];
    inputs.extend(a.checkpoint.as_deref());
    inputs.extend(a.prototypes.as_deref());
    require(&inputs)?;
    RunManifest::new(command, &inputs, &[&a.out])?.write(&manifest_path(&a.out, false))?;

    let features = FeatureStore::read(&a.features)?;
    let rec = &features.records()[record_index(&features, a.image_id.as_deref())?];
    let query = class_prototypes(
        a.checkpoint.as_deref(),
        a.prototypes.as_deref(),
        std::slice::from_ref(&a.concept),
        std::slice::from_ref(&a.template),
    )?;
    if query.cols() != rec.dim() {
        return Err(CliError::input(format!(
            "the query is {}-dimensional but the features are {}-dimensional",
            query.cols(),
            rec.dim()
        )));
    }
    let sim = patch_similarity(rec, query.row(0))?;
    let img = heatmap_image(rec, query.row(0), a.width, a.height)?;
    ensure_parent(&a.out)?;
    write_atomic(&a.out, &img.to_bytes())?;
    let (lo, hi) = sim.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &s| (l.min(s), h.max(s)));
    json(value!({
        "out": a.out,
        "image_id": rec.image_id,
        "concept": a.concept,
        "min_similarity": lo,
        "max_similarity": hi,
    }))
}

pub fn pca(command: &Command, a: &PcaArgs) -> CliResult<Json> {
    let inputs: [&Path; 1] = [&a.features];
    require(&inputs)?;
    RunManifest::new(command, &inputs, &[&a.out])?.write(&manifest_path(&a.out, false))?;
    let features = FeatureStore::read(&a.features)?;
    let rec = &features.records()[record_index(&features, a.image_id.as_deref())?];
    let img = pca_rgb(rec, a.width, a.height)?;
    ensure_parent(&a.out)?;
    write_atomic(&a.out, &img.to_bytes())?;
    json(value!({ "out": a.out, "image_id": rec.image_id }))
}
