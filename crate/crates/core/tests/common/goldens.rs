//! Frozen byte fixtures for every on-disk format.
//!
//! Each golden is built from hand-picked values that are exact in binary
//! floating point, so no RNG or libm result ends up in the bytes. Setting
//! `DALIGN_BLESS_GOLDENS=1` rewrites the fixture files.

use std::fs;

use dalign::concepts::ConceptVocabulary;
use dalign::data::{FeatureRecord, FeatureStore, GrayImage, IGNORE_INDEX};
use dalign::eval::{miou, ConfusionMatrix, Protocol};
use dalign::text::{EncoderConfig, TextEncoder, Vocabulary};
use dalign::train::{Adam, AdamConfig, TrainConfig, TrainState};
use dalign::Tensor;

use super::fixture;

pub fn feature_store() -> FeatureStore {
    FeatureStore::from_records(
        2,
        vec![FeatureRecord {
            image_id: "a".into(),
            grid_h: 1,
            grid_w: 1,
            cls: vec![1.0, -2.0],
            patches: vec![0.5, 0.25],
        }],
    )
    .unwrap()
}

pub fn mask() -> GrayImage {
    let x = IGNORE_INDEX;
    GrayImage::new(4, 3, vec![0, 0, 1, 1, 0, x, 1, 2, 2, 2, x, x]).unwrap()
}

/// Foreground report of the two-class confusion `[[3, 1], [1, 3]]`.
pub fn report_json() -> String {
    let cm = ConfusionMatrix::from_rows(&[vec![3, 1], vec![1, 3]]).unwrap();
    let names = vec!["cat".to_owned(), "dog".to_owned()];
    miou(&cm, &names, &[], Protocol::Foreground, None).unwrap().to_json().unwrap()
}

fn pattern(shape: &[usize], salt: usize) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|i| ((i * 37 + salt * 11) % 97) as f64 / 64.0 - 0.75).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// A one-layer model over a five-word vocabulary with patterned weights
/// and one optimizer step's worth of moment buffers.
pub fn tiny_checkpoint() -> TrainState {
    let config = TrainConfig {
        batch_size: 2,
        epochs: 1,
        width: 4,
        layers: 1,
        heads: 2,
        max_len: 6,
        ..Default::default()
    };
    let tokens: Vec<String> =
        ["<bos>", "<eos>", "<pad>", "<unk>", ".", "a", "cow", "on", "tree"].map(String::from).to_vec();
    let enc_cfg = EncoderConfig {
        width: 4,
        layers: 1,
        heads: 2,
        max_len: 6,
        vocab_size: tokens.len(),
        out_dim: 2,
    };
    let mut encoder = TextEncoder::new(enc_cfg, 0).unwrap();
    for (k, (_, t)) in encoder.params_mut().iter_mut().enumerate() {
        *t = pattern(t.shape(), k);
    }
    let mut head = dalign::align::AlignmentHead::new(2, 2, 0);
    for (k, (_, t)) in head.params_mut().iter_mut().enumerate() {
        *t = pattern(t.shape(), 50 + k);
    }
    let mut adam = Adam::new(AdamConfig::default());
    adam.step = 1;
    for (k, (name, t)) in encoder.params().iter().enumerate().take(2) {
        adam.m.insert(&format!("encoder.{name}"), pattern(t.shape(), 90 + k));
        adam.v.insert(&format!("encoder.{name}"), Tensor::full(t.shape(), 0.125));
    }
    TrainState {
        config,
        vocab: Vocabulary::from_tokens(tokens).unwrap(),
        concepts: ConceptVocabulary::from_names(vec!["tree".into(), "cow".into()]),
        encoder,
        head,
        adam,
        epoch: 1,
    }
}

/// `(fixture file, freshly produced bytes)` for every format.
pub fn produced() -> Vec<(&'static str, Vec<u8>)> {
    vec![
        ("golden_one_record.dvf", feature_store().to_bytes()),
        ("golden_tiny.dack", tiny_checkpoint().to_bytes().unwrap()),
        ("golden_mask.pgm", mask().to_bytes()),
        ("golden_report.json", report_json().into_bytes()),
    ]
}

/// Names of the fixtures whose frozen bytes differ from what the code
/// writes now. Blesses instead when asked to.
pub fn mismatches() -> Vec<String> {
    let bless = std::env::var("DALIGN_BLESS_GOLDENS").is_ok_and(|v| v == "1");
    let mut bad = Vec::new();
    for (name, bytes) in produced() {
        let path = fixture(name);
        if bless {
            fs::write(&path, &bytes).unwrap();
            continue;
        }
        match fs::read(&path) {
            Ok(frozen) if frozen == bytes => {}
            _ => bad.push(name.to_owned()),
        }
    }
    bad
}
