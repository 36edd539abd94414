use dalign::align::{AlignConfig, AlignmentHead};
use dalign::concepts::{extract_concepts, ConceptParser, ConceptVocabulary};
use dalign::data::{generate_synthetic_world, CaptionRecord, SyntheticWorld, SyntheticWorldSpec};
use dalign::params::ParamStore;
use dalign::text::Vocabulary;
use dalign::train::{
    batch_concept_stats, clip_global_norm, epoch_batches, fit, Adam, AdamConfig, ParamGroup,
    PreparedData, TrainConfig, TrainState,
};
use dalign::{Error, Tensor};
use proptest::prelude::*;

fn small_config() -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        batch_size: 16,
        epochs: 3,
        width: 16,
        layers: 1,
        heads: 2,
        max_len: 16,
        ..Default::default()
    }
}

fn world(n: usize) -> SyntheticWorld {
    generate_synthetic_world(&SyntheticWorldSpec {
        train_images: n,
        eval_images: 4,
        ..Default::default()
    })
    .unwrap()
}

fn setup(config: TrainConfig, w: &SyntheticWorld) -> (TrainState, PreparedData) {
    let parser = ConceptParser::default();
    let state = TrainState::new(config, &parser, &w.train.captions, w.spec.dim).unwrap();
    let data = PreparedData::new(&state, &parser, &w.train.features, &w.train.captions).unwrap();
    (state, data)
}

#[test]
fn four_caption_fixture_has_nine_concepts() {
    let captions = [
        "a cow and a dog on the grass.",
        "two boats near a house.",
        "the sky above a tree and a bird.",
        "a car.",
    ];
    let parser = ConceptParser::default();
    let vocab = Vocabulary::build(captions, 1, 100).unwrap();
    let concepts = ConceptVocabulary::build(&parser, captions, 1).unwrap();
    let per: Vec<_> = captions
        .iter()
        .map(|c| extract_concepts(&parser, &concepts, c, &vocab.tokenize(c, 32)))
        .collect();
    let (total, unique) = batch_concept_stats(per.iter().map(Vec::as_slice));
    assert_eq!(total, 9);
    assert_eq!(unique, 9);
    assert_eq!(total as f64 / captions.len() as f64, 2.25);
    // a repeated caption adds mentions but no new labels
    let (t2, u2) = batch_concept_stats(per.iter().chain(&per[..1]).map(Vec::as_slice));
    assert_eq!((t2, u2), (12, 9));
}

#[test]
fn epoch_batches_partition_and_vary() {
    let a = epoch_batches(37, 8, 5, 1);
    assert_eq!(a, epoch_batches(37, 8, 5, 1));
    assert_ne!(a, epoch_batches(37, 8, 5, 2));
    assert_ne!(a, epoch_batches(37, 8, 6, 1));
    let mut seen: Vec<usize> = a.concat();
    seen.sort();
    assert_eq!(seen, (0..37).collect::<Vec<_>>());
    assert!(a.iter().all(|b| b.len() >= 2 && b.len() <= 8));
    // 33 = 4 x 8 + 1: the trailing singleton is dropped
    assert_eq!(epoch_batches(33, 8, 0, 1).concat().len(), 32);
}

#[test]
fn adam_hand_case() {
    let mut p = ParamStore::new();
    p.insert("w", Tensor::vector(vec![1.0, -2.0]));
    let mut adam = Adam::new(AdamConfig::default());
    let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
    let grads = [[0.5, -4.0], [-1.0, 2.0]];
    let mut want = [1.0, -2.0];
    let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
    for (t, g) in grads.iter().enumerate() {
        let t = t as i32 + 1;
        for i in 0..2 {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / (1.0 - f64::powi(b1, t));
            let vh = v[i] / (1.0 - f64::powi(b2, t));
            want[i] -= lr * mh / (vh.sqrt() + eps);
        }
        let gt = vec![Tensor::vector(g.to_vec())];
        adam.step(&mut [ParamGroup { prefix: "x", params: &mut p, grads: &gt }], lr).unwrap();
    }
    assert_eq!(adam.step, 2);
    for i in 0..2 {
        assert!((p.get("w").unwrap().data()[i] - want[i]).abs() < 1e-15);
    }
    // first step moves each coordinate by almost exactly lr
    assert!((want[0] - 1.0).abs() < 0.2);
}

#[test]
fn adam_refuses_non_finite_gradients() {
    let mut p = ParamStore::new();
    p.insert("w", Tensor::vector(vec![1.0]));
    let before = p.clone();
    let mut adam = Adam::new(AdamConfig::default());
    let g = vec![Tensor::vector(vec![f64::NAN])];
    let r = adam.step(&mut [ParamGroup { prefix: "x", params: &mut p, grads: &g }], 0.1);
    assert!(matches!(r, Err(Error::NonFinite(_))));
    assert_eq!(p, before);
    assert_eq!(adam.step, 0);
}

#[test]
fn clipping_rescales_to_the_bound() {
    let mut a = vec![Tensor::vector(vec![3.0, 0.0])];
    let mut b = vec![Tensor::vector(vec![0.0, 4.0])];
    let n = clip_global_norm(&mut [&mut a, &mut b], 1.0);
    assert_eq!(n, 5.0);
    assert!((a[0].data()[0] - 0.6).abs() < 1e-15);
    assert!((b[0].data()[1] - 0.8).abs() < 1e-15);
    let mut c = vec![Tensor::vector(vec![0.3])];
    clip_global_norm(&mut [&mut c], 1.0);
    assert_eq!(c[0].data(), &[0.3]);
}

#[test]
fn lambda_zero_leaves_classifier_untouched() {
    let w = world(48);
    let config = TrainConfig {
        epochs: 1,
        align: AlignConfig { lambda: 0.0, ..Default::default() },
        ..small_config()
    };
    let (mut state, data) = setup(config, &w);
    let before = state.head.params().get(AlignmentHead::CLASSIFIER).unwrap().clone();
    let enc_before = state.encoder.params().clone();
    state.train_epoch(&data).unwrap();
    assert_eq!(state.head.params().get(AlignmentHead::CLASSIFIER).unwrap(), &before);
    assert_ne!(state.encoder.params(), &enc_before);
}

#[test]
fn runs_are_bit_identical() {
    let w = world(48);
    let run = || {
        let (mut state, data) = setup(small_config(), &w);
        let log = fit(&mut state, &data, |_, _| Ok(())).unwrap();
        (state.to_bytes().unwrap(), serde_json::to_string(&log).unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn resume_matches_uninterrupted_run() {
    let w = world(48);
    let (mut full, data) = setup(small_config(), &w);
    let full_log = fit(&mut full, &data, |_, _| Ok(())).unwrap();

    let (mut first, _) = setup(TrainConfig { epochs: 1, ..small_config() }, &w);
    let first_log = fit(&mut first, &data, |_, _| Ok(())).unwrap();
    let mut resumed = TrainState::from_bytes(&first.to_bytes().unwrap(), "mem").unwrap();
    resumed.config.epochs = 3;
    let rest = fit(&mut resumed, &data, |_, _| Ok(())).unwrap();

    assert_eq!(resumed.to_bytes().unwrap(), full.to_bytes().unwrap());
    let joined: Vec<_> = first_log.into_iter().chain(rest).collect();
    assert_eq!(joined, full_log);
}

#[test]
fn total_loss_falls_on_the_synthetic_world() {
    let w = world(128);
    let config = TrainConfig { epochs: 8, ..small_config() };
    let (mut state, data) = setup(config, &w);
    let log = fit(&mut state, &data, |_, _| Ok(())).unwrap();
    let first = log.first().unwrap();
    let last = log.last().unwrap();
    assert_eq!(first.epoch, 0);
    assert_eq!(last.epoch, 8);
    assert!(last.l_tot < 0.5 * first.l_tot, "{} -> {}", first.l_tot, last.l_tot);
    for m in &log {
        let want = m.l_g + state.config.align.lambda * m.l_l;
        assert!((m.l_tot - want).abs() < 1e-9 * want.abs().max(1.0));
    }
}

#[test]
fn non_finite_features_abort_training() {
    let mut w = world(32);
    let mut records = w.train.features.records().to_vec();
    records[0].patches[0] = f64::NAN;
    records[0].cls[0] = f64::NAN;
    w.train.features = dalign::data::FeatureStore::from_records(w.spec.dim, records).unwrap();
    let (mut state, data) = setup(TrainConfig { batch_size: 32, ..small_config() }, &w);
    assert!(matches!(state.train_epoch(&data), Err(Error::NonFinite(_))));
}

#[test]
fn unknown_image_ids_and_width_mismatch_are_input_errors() {
    let w = world(16);
    let parser = ConceptParser::default();
    let state = TrainState::new(small_config(), &parser, &w.train.captions, w.spec.dim).unwrap();
    let bad = vec![CaptionRecord::new("missing", "a cow.")];
    assert!(matches!(
        PreparedData::new(&state, &parser, &w.train.features, &bad),
        Err(Error::Input(_))
    ));
    let narrow = TrainState::new(small_config(), &parser, &w.train.captions, 8).unwrap();
    assert!(matches!(
        PreparedData::new(&narrow, &parser, &w.train.features, &w.train.captions),
        Err(Error::Input(_))
    ));
    assert!(matches!(
        TrainState::new(TrainConfig { batch_size: 1, ..small_config() }, &parser, &w.train.captions, 16),
        Err(Error::Config(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn batches_cover_everything_once(n in 2usize..200, bs in 2usize..70, seed in any::<u64>(), epoch in 0usize..10) {
        let b = epoch_batches(n, bs, seed, epoch);
        let mut all = b.concat();
        all.sort();
        all.dedup();
        let dropped = if n % bs == 1 { 1 } else { 0 };
        prop_assert_eq!(all.len(), n - dropped);
        prop_assert_eq!(b.concat().len(), n - dropped);
    }
}
