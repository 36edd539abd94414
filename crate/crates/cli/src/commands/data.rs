use std::fs;
use std::path::Path;

use dalign::concepts::ConceptParser;
use dalign::data::{
    captions_to_jsonl, degrade_captions, generate_synthetic_world, read_captions, SyntheticWorldSpec,
    EMPTY_CAPTION,
};
use serde_json::json as value;

use super::{ensure_parent, json, require, write_atomic, Json};
use crate::args::{Command, DegradeArgs, SynthArgs};
use crate::manifest::{manifest_path, RunManifest};
use crate::{CliError, CliResult};

pub fn spec(a: &SynthArgs) -> SyntheticWorldSpec {
    SyntheticWorldSpec {
        num_concepts: a.num_concepts,
        dim: a.dim,
        grid_h: a.grid_h,
        grid_w: a.grid_w,
        patch_px: a.patch_px,
        max_regions: a.max_regions,
        sigma: a.sigma,
        templates: a.templates.clone(),
        train_images: a.train_images,
        eval_images: a.eval_images,
        seed: a.seed,
        pair_prob: a.pair_prob,
    }
}

pub fn synth(command: &Command, a: &SynthArgs) -> CliResult<Json> {
    let spec = spec(a);
    spec.validate()?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::input(format!("{}: {e}", a.out.display())))?;
    RunManifest::new(command, &[], &[&a.out])?.write(&manifest_path(&a.out, true))?;
    let world = generate_synthetic_world(&spec)?;
    world.write(&a.out)?;
    log::info!(
        "{} train and {} eval images over {} concepts in {}",
        world.train.features.len(),
        world.eval.features.len(),
        spec.num_concepts,
        a.out.display()
    );
    json(value!({
        "out": a.out,
        "classes": world.prototypes.classes,
        "train_images": world.train.features.len(),
        "eval_images": world.eval.features.len(),
        "train_captions": world.train.captions.len(),
    }))
}

pub fn degrade(command: &Command, a: &DegradeArgs) -> CliResult<Json> {
    let inputs: [&Path; 1] = [&a.captions];
    require(&inputs)?;
    RunManifest::new(command, &inputs, &[&a.out])?.write(&manifest_path(&a.out, false))?;
    let records = read_captions(&a.captions)?;
    let out = degrade_captions(&records, &ConceptParser::default(), a.drop_prob, a.seed)?;
    let changed = records.iter().zip(&out).filter(|(r, o)| r.caption != o.caption).count();
    let emptied = out.iter().filter(|o| o.caption == EMPTY_CAPTION).count();
    ensure_parent(&a.out)?;
    write_atomic(&a.out, captions_to_jsonl(&out)?.as_bytes())?;
    log::info!("{changed} of {} captions changed, {emptied} left without a concept", out.len());
    json(value!({
        "out": a.out,
        "captions": out.len(),
        "changed": changed,
        "emptied": emptied,
    }))
}
