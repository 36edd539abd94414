use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clap::CommandFactory;
use dalign::concepts::ConceptParser;
use dalign::data::{read_captions, write_captions, CaptionRecord, FeatureRecord, FeatureStore, GrayImage, RgbImage};
use dalign::train::TrainState;
use dalign_cli::manifest::{digest, RunManifest};
use dalign_cli::Cli;
use serde_json::Value;
use tempfile::TempDir;

fn dalign(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dalign"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("spawn dalign")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dalign(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    dalign(dir, args).status.code().expect("exit code")
}

fn world(dir: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["synth", "--train-images", "32", "--eval-images", "4", "--out", "w"];
    args.extend_from_slice(extra);
    ok(dir, &args);
    dir.join("w")
}

const SMALL: [&str; 12] = [
    "--features", "w/train/features.dvf", "--captions", "w/train/captions.jsonl", "--width", "16",
    "--layers", "1", "--heads", "2", "--batch-size", "16",
];

fn train(dir: &Path, out: &str, epochs: &str, extra: &[&str]) -> String {
    let mut args = vec!["train", "--out", out, "--epochs", epochs];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    ok(dir, &args)
}

#[test]
fn every_flag_documents_a_default_or_is_required() {
    let cli = Cli::command();
    for sub in cli.get_subcommands() {
        for arg in sub.get_arguments() {
            let id = arg.get_id().as_str();
            if id == "help" || id == "version" {
                continue;
            }
            let help = arg.get_help().map(|h| h.to_string()).unwrap_or_default();
            let documented = !arg.get_default_values().is_empty()
                || help.contains("[default:")
                || help.contains("(required)")
                || arg.is_required_set();
            assert!(documented, "{} --{id}", sub.get_name());
        }
    }
}

#[test]
fn missing_input_exits_2_and_names_the_path() {
    let dir = TempDir::new().unwrap();
    let out = dalign(dir.path(), &["stats", "--captions", "nowhere.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.jsonl"));
    assert_eq!(code(dir.path(), &["train", "--bogus-flag"]), 2);
}

#[test]
fn whole_image_needs_a_threshold() {
    let dir = TempDir::new().unwrap();
    world(dir.path(), &[]);
    let base = [
        "eval", "--prototypes", "w/means.json", "--features", "w/eval/features.dvf", "--masks",
        "w/eval/masks", "--classes", "w/classes.json",
    ];
    let with = |extra: &[&'static str]| -> Vec<&'static str> { [&base[..], extra].concat() };
    assert_eq!(code(dir.path(), &with(&["--protocol", "whole"])), 2);
    assert_eq!(code(dir.path(), &with(&["--protocol", "fg", "--threshold", "0.1"])), 2);
    assert_eq!(code(dir.path(), &with(&["--protocol", "whole", "--calibrate"])), 2);

    let stdout = ok(dir.path(), &with(&["--protocol", "whole", "--threshold", "-0.25"]));
    let report: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["protocol"], "whole-image");
    assert_eq!(report["threshold"], -0.25);
    let classes = ["bird", "boat", "car", "cow", "dog", "house", "sky", "tree", "background"];
    let per_class = report["per_class"].as_object().unwrap();
    assert!(!per_class.is_empty());
    assert!(per_class.keys().all(|k| classes.contains(&k.as_str())));
    let written: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(written, report);
}

#[test]
fn non_finite_features_exit_3() {
    let dir = TempDir::new().unwrap();
    let mut store = FeatureStore::new(2);
    for i in 0..4 {
        let mut patches = vec![0.5; 8];
        patches[i] = f64::NAN;
        store
            .push(FeatureRecord {
                image_id: format!("im{i}"),
                grid_h: 2,
                grid_w: 2,
                cls: vec![1.0, -1.0],
                patches,
            })
            .unwrap();
    }
    store.write(&dir.path().join("f.dvf")).unwrap();
    let caps: Vec<_> = (0..4).map(|i| CaptionRecord::new(format!("im{i}"), "a cow and a tree.")).collect();
    write_captions(&caps, &dir.path().join("c.jsonl")).unwrap();
    let args = [
        "train", "--features", "f.dvf", "--captions", "c.jsonl", "--width", "8", "--layers", "1",
        "--heads", "2", "--epochs", "1",
    ];
    assert_eq!(code(dir.path(), &args), 3);
}

#[test]
fn train_writes_run_directory() {
    let dir = TempDir::new().unwrap();
    world(dir.path(), &[]);
    let stdout = train(dir.path(), "run", "2", &[]);
    let lines: Vec<Value> = stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["epoch"], i);
        for k in ["L_g", "L_l", "L_tot", "concepts_per_caption", "unique_concepts_per_batch"] {
            assert!(l[k].as_f64().unwrap().is_finite(), "{k}");
        }
    }
    let run = dir.path().join("run");
    assert_eq!(fs::read_to_string(run.join("metrics.jsonl")).unwrap(), stdout);
    assert!(fs::read(run.join("checkpoint.dack")).unwrap().starts_with(b"DACK"));
    assert!(fs::read_to_string(run.join("vocab.txt")).unwrap().starts_with("<bos>\n<eos>\n<pad>\n<unk>\n"));
    let concepts = fs::read_to_string(run.join("concepts.txt")).unwrap();
    assert_eq!(concepts.lines().count(), 8);
    let m = RunManifest::load(&run.join("manifest.json")).unwrap();
    assert_eq!(m.command.name(), "train");
    assert_eq!(m.seed, Some(0));
    assert_eq!(m.inputs.len(), 2);
    for i in &m.inputs {
        assert_eq!(digest(&dir.path().join(&i.path)).unwrap(), i.sha256, "{}", i.path.display());
    }

    let stdout = ok(dir.path(), &[
        "eval", "--checkpoint", "run/checkpoint.dack", "--features", "w/eval/features.dvf",
        "--masks", "w/eval/masks", "--classes", "w/classes.json",
    ]);
    let report: Value = serde_json::from_str(&stdout).unwrap();
    assert!((0.0..=1.0).contains(&report["miou"].as_f64().unwrap()));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = TempDir::new().unwrap();
    world(dir.path(), &[]);
    train(dir.path(), "full", "3", &[]);
    train(dir.path(), "part", "1", &[]);
    train(dir.path(), "part", "3", &["--resume", "part/checkpoint.dack"]);
    for f in ["checkpoint.dack", "metrics.jsonl", "vocab.txt", "concepts.txt"] {
        assert_eq!(
            fs::read(dir.path().join("full").join(f)).unwrap(),
            fs::read(dir.path().join("part").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn zero_lambda_logs_concept_loss_but_keeps_the_classifier() {
    let dir = TempDir::new().unwrap();
    world(dir.path(), &[]);
    let stdout = train(dir.path(), "run", "2", &["--lambda", "0"]);
    for line in stdout.lines() {
        let m: Value = serde_json::from_str(line).unwrap();
        assert!(m["L_l"].as_f64().unwrap() > 0.0);
        assert_eq!(m["L_tot"], m["L_g"]);
    }
    let trained = TrainState::load(&dir.path().join("run/checkpoint.dack")).unwrap();
    let captions = read_captions(&dir.path().join("w/train/captions.jsonl")).unwrap();
    let fresh = TrainState::new(trained.config.clone(), &ConceptParser::default(), &captions, 16).unwrap();
    assert_eq!(trained.head.classifier(), fresh.head.classifier());
    assert_ne!(trained.head.logit_scale(), fresh.head.logit_scale());
}

#[test]
fn synth_is_seed_deterministic() {
    let dir = TempDir::new().unwrap();
    let files = ["classes.json", "means.json", "train/features.dvf", "train/captions.jsonl", "eval/masks/eval-00003.pgm"];
    let read = |out: &str| files.map(|f| fs::read(dir.path().join(out).join(f)).unwrap());
    let args = |out: &'static str, seed: &'static str| {
        ["synth", "--train-images", "16", "--eval-images", "4", "--seed", seed, "--out", out]
    };
    ok(dir.path(), &args("a", "7"));
    ok(dir.path(), &args("b", "7"));
    ok(dir.path(), &args("c", "8"));
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a")[2], read("c")[2]);
}

#[test]
fn replay_reproduces_outputs_and_refuses_changed_inputs() {
    let dir = TempDir::new().unwrap();
    world(dir.path(), &[]);
    let first = ok(dir.path(), &["degrade", "--captions", "w/train/captions.jsonl", "--seed", "3", "--out", "d.jsonl"]);
    let bytes = fs::read(dir.path().join("d.jsonl")).unwrap();
    fs::remove_file(dir.path().join("d.jsonl")).unwrap();
    let again = ok(dir.path(), &["replay", "--manifest", "d.jsonl.manifest.json"]);
    assert_eq!(first, again);
    assert_eq!(fs::read(dir.path().join("d.jsonl")).unwrap(), bytes);

    fs::write(dir.path().join("w/train/captions.jsonl"), "{\"image_id\":\"x\",\"caption\":\"a cow.\"}\n").unwrap();
    let out = dalign(dir.path(), &["replay", "--manifest", "d.jsonl.manifest.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("captions.jsonl"));
}

#[test]
fn stats_counts_concepts_per_caption() {
    let dir = TempDir::new().unwrap();
    // 2 + 3 + 1 + 3 = 9 mentions over 4 captions
    let caps: Vec<_> = [
        "a cow and a tree.",
        "a dog, a car and a boat.",
        "there is a house.",
        "we can see a cow, a bird and the sky.",
    ]
    .iter()
    .enumerate()
    .map(|(i, c)| CaptionRecord::new(format!("im{i}"), *c))
    .collect();
    write_captions(&caps, &dir.path().join("c.jsonl")).unwrap();
    let s: Value = serde_json::from_str(&ok(dir.path(), &["stats", "--captions", "c.jsonl", "--batch-size", "4"])).unwrap();
    assert_eq!(s["concepts_per_caption"], 2.25);
    assert_eq!(s["unique_concepts_per_batch"], 8.0);
    assert_eq!(s["batches"], 1);

    ok(dir.path(), &["degrade", "--captions", "c.jsonl", "--drop-prob", "1", "--out", "d.jsonl"]);
    fs::write(dir.path().join("concepts.txt"), "bird\nboat\ncar\ncow\ndog\nhouse\nsky\ntree\n").unwrap();
    let s: Value = serde_json::from_str(&ok(dir.path(), &[
        "stats", "--captions", "d.jsonl", "--concepts", "concepts.txt", "--batch-size", "4", "--out", "s.json",
    ]))
    .unwrap();
    assert_eq!(s["concepts_per_caption"], 0.0);
    assert_eq!(s["captions_without_concepts"], 1.0);
}

#[test]
fn heatmap_and_pca_write_images() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["synth", "--train-images", "4", "--eval-images", "16", "--sigma", "0", "--out", "w"]);
    // classes are alphabetical: bird boat car cow ...
    let cow = 3u8;
    let (id, mask) = (0..16)
        .map(|i| {
            let id = format!("eval-{i:05}");
            let m = GrayImage::read(&dir.path().join(format!("w/eval/masks/{id}.pgm"))).unwrap();
            (id, m)
        })
        .find(|(_, m)| m.pixels.contains(&cow) && m.pixels.iter().any(|&p| p != cow))
        .expect("an eval image with a cow next to another region");
    let h: Value = serde_json::from_str(&ok(dir.path(), &[
        "heatmap", "--prototypes", "w/means.json", "--features", "w/eval/features.dvf", "--image-id", &id,
        "--concept", "cow",
    ]))
    .unwrap();
    assert_eq!(h["image_id"], id.as_str());
    let img = GrayImage::read(&dir.path().join("heatmap.pgm")).unwrap();
    assert_eq!((img.width, img.height), (mask.width, mask.height));
    // away from region borders the map is exactly 255 on the cow and 0 elsewhere
    let (w, hgt) = (mask.width, mask.height);
    let at = |x: usize, y: usize| mask.pixels[y * w + x];
    for y in 4..hgt - 4 {
        for x in 4..w - 4 {
            let label = at(x, y);
            let interior = (y - 4..=y + 4).all(|yy| (x - 4..=x + 4).all(|xx| at(xx, yy) == label));
            if interior {
                let want = if label == cow { 255 } else { 0 };
                assert_eq!(img.pixels[y * w + x], want, "({x}, {y})");
            }
        }
    }

    ok(dir.path(), &["pca", "--features", "w/eval/features.dvf", "--width", "40", "--height", "24", "--out", "p/pca.ppm"]);
    let bytes = fs::read(dir.path().join("p/pca.ppm")).unwrap();
    assert!(bytes.starts_with(b"P6\n40 24\n255\n"));
    assert_eq!(bytes.len(), b"P6\n40 24\n255\n".len() + 40 * 24 * 3);
    let img = RgbImage::read(&dir.path().join("p/pca.ppm")).unwrap();
    assert_eq!((img.width, img.height), (40, 24));
    assert!(dir.path().join("p/pca.ppm.manifest.json").exists());

    let out = dalign(dir.path(), &["pca", "--features", "w/eval/features.dvf", "--image-id", "nope"]);
    assert_eq!(out.status.code(), Some(2));
}
