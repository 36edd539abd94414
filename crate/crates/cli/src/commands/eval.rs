use std::path::Path;

use dalign::data::{ClassSet, FeatureStore, Prototypes};
use dalign::eval::{
    calibrate_threshold, default_threshold_grid, embed_classes, evaluate_store, predict_store,
    prototypes_from_means, EvalConfig, Protocol, BACKGROUND,
};
use dalign::train::TrainState;
use dalign::Tensor;

use super::{ensure_parent, json, load_masks, require, write_atomic, Json};
use crate::args::{Command, EvalArgs, ProtocolArg};
use crate::manifest::{manifest_path, RunManifest};
use crate::{CliError, CliResult};

/// Class prototypes from a checkpoint's encoder or from stored means.
pub fn class_prototypes(
    checkpoint: Option<&Path>,
    means: Option<&Path>,
    classes: &[String],
    templates: &[String],
) -> CliResult<Tensor> {
    match (checkpoint, means) {
        (Some(c), _) => {
            let s = TrainState::load(c)?;
            Ok(embed_classes(&s.encoder, &s.vocab, classes, templates)?)
        }
        (None, Some(m)) => Ok(prototypes_from_means(&Prototypes::load(m)?, classes)?),
        (None, None) => Err(CliError::input("pass --checkpoint or --prototypes")),
    }
}

fn check_width(protos: &Tensor, features: &FeatureStore) -> CliResult<()> {
    if protos.cols() != features.dim() {
        return Err(CliError::input(format!(
            "prototypes are {}-dimensional but the features are {}-dimensional",
            protos.cols(),
            features.dim()
        )));
    }
    Ok(())
}

pub fn run(command: &Command, a: &EvalArgs) -> CliResult<Json> {
    let mut inputs: Vec<&Path> = vec![&a.features, &a.masks, &a.classes];
    inputs.extend(a.checkpoint.as_deref());
    inputs.extend(a.prototypes.as_deref());
    if a.calibrate {
        match (&a.val_features, &a.val_masks) {
            (Some(f), Some(m)) => inputs.extend([f.as_path(), m.as_path()]),
            _ => return Err(CliError::input("--calibrate needs --val-features and --val-masks")),
        }
    }
    require(&inputs)?;
    RunManifest::new(command, &inputs, &[&a.out])?.write(&manifest_path(&a.out, false))?;

    let set = ClassSet::load(&a.classes)?;
    let protocol = match a.protocol {
        ProtocolArg::Fg => Protocol::Foreground,
        ProtocolArg::Whole => Protocol::WholeImage,
    };
    if protocol == Protocol::Foreground && (a.calibrate || a.threshold.is_some()) {
        return Err(CliError::input("--threshold and --calibrate apply to the whole-image protocol only"));
    }
    let features = FeatureStore::read(&a.features)?;
    let masks = load_masks(&a.masks, &features)?;
    let protos = class_prototypes(a.checkpoint.as_deref(), a.prototypes.as_deref(), &set.classes, &set.templates)?;
    check_width(&protos, &features)?;
    let mut cfg = EvalConfig {
        short_side: a.short_side,
        window: a.window,
        stride: a.stride,
        protocol,
        threshold: None,
    };
    if protocol == Protocol::WholeImage {
        let threshold = if a.calibrate {
            let vf = FeatureStore::read(a.val_features.as_deref().expect("checked above"))?;
            let vm = load_masks(a.val_masks.as_deref().expect("checked above"), &vf)?;
            check_width(&protos, &vf)?;
            let preds = predict_store(&vf, &vm, &protos, &EvalConfig { threshold: None, protocol: Protocol::Foreground, ..cfg.clone() })?;
            let mut names = set.classes.clone();
            names.push(BACKGROUND.to_owned());
            let t = calibrate_threshold(&preds, &vm, &names, &default_threshold_grid(a.threshold_steps))?;
            log::info!("calibrated background threshold {t}");
            t
        } else if let Some(t) = a.threshold {
            t
        } else if let Some(t) = set.background_threshold {
            log::info!("background threshold {t} from {}", a.classes.display());
            t
        } else {
            return Err(CliError::input(
                "the whole-image protocol needs --threshold, --calibrate or a class-set background_threshold",
            ));
        };
        cfg.threshold = Some(threshold);
    }
    let report = evaluate_store(&features, &masks, &protos, &set.classes, &cfg)?;
    log::info!("{} mIoU {:.4} over {} pixels", report.protocol, report.miou, report.pixels_scored);
    ensure_parent(&a.out)?;
    write_atomic(&a.out, report.to_json()?.as_bytes())?;
    json(&report)
}
