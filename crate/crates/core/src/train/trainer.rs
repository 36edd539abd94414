use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{clip_global_norm, Adam, AdamConfig, ParamGroup};
use crate::align::{alignment_loss, AlignConfig, AlignmentExample, AlignmentHead};
use crate::concepts::{extract_concepts, CaptionConcept, ConceptParser, ConceptVocabulary};
use crate::data::{CaptionRecord, FeatureStore};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};
use crate::text::{EncoderConfig, TextEncoder, TokenizedCaption, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// Total epochs; a resumed run continues up to this count.
    pub epochs: usize,
    pub align: AlignConfig,
    pub seed: u64,
    /// Maximum global gradient norm.
    pub clip_norm: f64,
    /// Cosine decay of the learning rate to zero over the run.
    pub cosine: bool,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub vocab_min_freq: usize,
    pub vocab_max_size: usize,
    pub concept_min_freq: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            adam: AdamConfig::default(),
            batch_size: 64,
            epochs: 6,
            align: AlignConfig::default(),
            seed: 0,
            clip_norm: 1.0,
            cosine: false,
            width: 128,
            layers: 4,
            heads: 4,
            max_len: 32,
            vocab_min_freq: 1,
            vocab_max_size: 20_000,
            concept_min_freq: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size must be >= 2 for the contrastive loss, got {}",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("lr and clip_norm must be > 0".into()));
        }
        self.align.validate()
    }
}

/// Mean losses and concept statistics of one pass over the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
    #[serde(rename = "L_g")]
    pub l_g: f64,
    #[serde(rename = "L_l")]
    pub l_l: f64,
    #[serde(rename = "L_tot")]
    pub l_tot: f64,
    pub concepts_per_caption: f64,
    pub unique_concepts_per_batch: f64,
}

/// Everything needed to continue training: configuration, model, tokenizer
/// and concept vocabularies, optimizer state and progress. The shuffle RNG
/// of epoch `e` is derived from `(config.seed, e)`, so no generator state is
/// stored.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub concepts: ConceptVocabulary,
    pub encoder: TextEncoder,
    pub head: AlignmentHead,
    pub adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
}

/// A caption ready for the objective.
#[derive(Clone, Debug)]
pub struct PreparedCaption {
    pub tokens: TokenizedCaption,
    pub concepts: Vec<CaptionConcept>,
    /// Position of the paired image in the feature store.
    pub image: usize,
}

/// Captions tokenized and parsed against a fixed vocabulary, paired with
/// their images' features.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub captions: Vec<PreparedCaption>,
    pub patches: Vec<Tensor>,
    pub globals: Vec<Vec<f64>>,
    /// Tokenized concept names, used as classifier rows when the head is tied.
    pub concept_prompts: Vec<TokenizedCaption>,
}

impl PreparedData {
    pub fn new(
        state: &TrainState,
        parser: &ConceptParser,
        features: &FeatureStore,
        captions: &[CaptionRecord],
    ) -> Result<Self> {
        if captions.is_empty() {
            return Err(Error::Input("empty caption store".into()));
        }
        if features.dim() != state.encoder.config().out_dim {
            return Err(Error::Input(format!(
                "feature width {} does not match encoder output width {}",
                features.dim(),
                state.encoder.config().out_dim
            )));
        }
        let max_len = state.config.max_len;
        let mut prepared = Vec::with_capacity(captions.len());
        for (i, rec) in captions.iter().enumerate() {
            let image = features.position(&rec.image_id).ok_or_else(|| {
                Error::Input(format!("caption {} refers to unknown image_id {}", i + 1, rec.image_id))
            })?;
            let tokens = state.vocab.tokenize(&rec.caption, max_len);
            let concepts = extract_concepts(parser, &state.concepts, &rec.caption, &tokens);
            prepared.push(PreparedCaption {
                tokens,
                concepts,
                image,
            });
        }
        Ok(Self {
            captions: prepared,
            patches: features.records().iter().map(|r| r.patch_matrix()).collect(),
            globals: features.records().iter().map(|r| r.cls.clone()).collect(),
            concept_prompts: state
                .concepts
                .concepts()
                .iter()
                .map(|c| state.vocab.tokenize(c, max_len))
                .collect(),
        })
    }
}

/// Running sums behind [`EpochMetrics`].
#[derive(Default)]
struct Accumulator {
    batches: usize,
    captions: usize,
    concepts: usize,
    unique: usize,
    l_g: f64,
    l_l: f64,
    l_tot: f64,
}

impl Accumulator {
    fn finish(self, epoch: usize, step: u64) -> EpochMetrics {
        let b = self.batches as f64;
        EpochMetrics {
            epoch,
            step,
            l_g: self.l_g / b,
            l_l: self.l_l / b,
            l_tot: self.l_tot / b,
            concepts_per_caption: self.concepts as f64 / self.captions as f64,
            unique_concepts_per_batch: self.unique as f64 / b,
        }
    }
}

/// Seeded batch order of `n` captions for `epoch`; partial batches under 2
/// are dropped.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Concept count and distinct labels of a batch, as reported in the
/// training statistics.
pub fn batch_concept_stats<'a>(concepts: impl IntoIterator<Item = &'a [CaptionConcept]>) -> (usize, usize) {
    let mut total = 0;
    let mut unique = BTreeSet::new();
    for cs in concepts {
        total += cs.len();
        unique.extend(cs.iter().map(|c| c.label));
    }
    (total, unique.len())
}

impl TrainState {
    /// Fresh model with vocabularies built from `captions`.
    pub fn new(
        config: TrainConfig,
        parser: &ConceptParser,
        captions: &[CaptionRecord],
        visual_dim: usize,
    ) -> Result<Self> {
        config.validate()?;
        let texts: Vec<&str> = captions.iter().map(|c| c.caption.as_str()).collect();
        let vocab = Vocabulary::build(texts.iter().copied(), config.vocab_min_freq, config.vocab_max_size)?;
        let concepts = ConceptVocabulary::build(parser, texts.iter().copied(), config.concept_min_freq)?;
        let enc_cfg = EncoderConfig {
            width: config.width,
            layers: config.layers,
            heads: config.heads,
            max_len: config.max_len,
            vocab_size: vocab.len(),
            out_dim: visual_dim,
        };
        let encoder = TextEncoder::new(enc_cfg, config.seed)?;
        let head = AlignmentHead::new(concepts.len(), visual_dim, config.seed.wrapping_add(1));
        Ok(Self {
            adam: Adam::new(config.adam),
            config,
            vocab,
            concepts,
            encoder,
            head,
            epoch: 0,
        })
    }

    fn learning_rate(&self, step: u64, total_steps: u64) -> f64 {
        if !self.config.cosine || total_steps == 0 {
            return self.config.lr;
        }
        let progress = (step as f64 / total_steps as f64).min(1.0);
        self.config.lr * 0.5 * (1.0 + (PI * progress).cos())
    }

    fn examples<'a>(&self, data: &'a PreparedData, batch: &[usize]) -> Vec<AlignmentExample<'a>> {
        batch
            .iter()
            .map(|&i| {
                let c = &data.captions[i];
                AlignmentExample {
                    tokens: &c.tokens,
                    concepts: &c.concepts,
                    patches: &data.patches[c.image],
                    global: &data.globals[c.image],
                }
            })
            .collect()
    }

    fn prompts<'a>(&self, data: &'a PreparedData) -> Option<&'a [TokenizedCaption]> {
        self.config.align.tie_head.then_some(data.concept_prompts.as_slice())
    }

    /// Losses of the current model over the batches epoch `epoch` would
    /// use, without updating anything.
    pub fn evaluate(&self, data: &PreparedData, epoch: usize) -> Result<EpochMetrics> {
        let batches = epoch_batches(data.captions.len(), self.config.batch_size, self.config.seed, epoch);
        if batches.is_empty() {
            return Err(Error::Input("no batch of at least 2 captions".into()));
        }
        let mut acc = Accumulator::default();
        for batch in &batches {
            let mut tape = Tape::new();
            let eb = self.encoder.params().bind(&mut tape, false);
            let hb = self.head.params().bind(&mut tape, false);
            let ex = self.examples(data, batch);
            let parts = alignment_loss(
                &mut tape,
                &self.encoder,
                &eb,
                &self.head,
                &hb,
                &ex,
                &self.config.align,
                self.prompts(data),
            )?;
            if !tape.value(parts.total).item().is_finite() {
                return Err(Error::NonFinite(format!("loss evaluated for epoch {epoch}")));
            }
            self.accumulate(&mut acc, &tape, &parts, data, batch);
        }
        Ok(acc.finish(epoch, self.adam.step))
    }

    fn accumulate(
        &self,
        acc: &mut Accumulator,
        tape: &Tape,
        parts: &crate::align::LossParts,
        data: &PreparedData,
        batch: &[usize],
    ) {
        let (total, unique) = batch_concept_stats(batch.iter().map(|&i| data.captions[i].concepts.as_slice()));
        acc.batches += 1;
        acc.captions += batch.len();
        acc.concepts += total;
        acc.unique += unique;
        acc.l_g += tape.value(parts.global).item();
        acc.l_l += tape.value(parts.concept).item();
        acc.l_tot += tape.value(parts.total).item();
    }

    /// One epoch of shuffled minibatch Adam; advances `self.epoch`.
    pub fn train_epoch(&mut self, data: &PreparedData) -> Result<EpochMetrics> {
        let epoch = self.epoch + 1;
        let batches = epoch_batches(data.captions.len(), self.config.batch_size, self.config.seed, epoch);
        if batches.is_empty() {
            return Err(Error::Input("every batch is degenerate (fewer than 2 captions)".into()));
        }
        let total_steps = (batches.len() * self.config.epochs) as u64;
        let mut acc = Accumulator::default();
        for batch in &batches {
            let mut tape = Tape::new();
            let eb = self.encoder.params().bind(&mut tape, true);
            let hb = self.head.params().bind(&mut tape, true);
            let ex = self.examples(data, batch);
            let parts = alignment_loss(
                &mut tape,
                &self.encoder,
                &eb,
                &self.head,
                &hb,
                &ex,
                &self.config.align,
                self.prompts(data),
            )?;
            let loss = tape.value(parts.total).item();
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss at step {}", self.adam.step + 1)));
            }
            self.accumulate(&mut acc, &tape, &parts, data, batch);
            let grads = tape.backward(parts.total)?;
            let mut enc_grads = eb.gradients(self.encoder.params(), &grads);
            let mut head_grads = hb.gradients(self.head.params(), &grads);
            clip_global_norm(&mut [&mut enc_grads, &mut head_grads], self.config.clip_norm);
            let lr = self.learning_rate(self.adam.step, total_steps);
            self.adam.step(
                &mut [
                    ParamGroup {
                        prefix: "encoder",
                        params: self.encoder.params_mut(),
                        grads: &enc_grads,
                    },
                    ParamGroup {
                        prefix: "head",
                        params: self.head.params_mut(),
                        grads: &head_grads,
                    },
                ],
                lr,
            )?;
            self.head.clamp();
        }
        self.epoch = epoch;
        let m = acc.finish(epoch, self.adam.step);
        log::info!(
            "epoch {} step {}: L_g {:.4} L_l {:.4} L_tot {:.4}",
            m.epoch,
            m.step,
            m.l_g,
            m.l_l,
            m.l_tot
        );
        Ok(m)
    }
}

/// Trains from `state.epoch` up to `state.config.epochs`, calling
/// `on_epoch` after every epoch (e.g. to write a checkpoint and a metrics
/// line). A fresh state first reports an evaluation-only epoch 0.
pub fn fit(
    state: &mut TrainState,
    data: &PreparedData,
    mut on_epoch: impl FnMut(&TrainState, &EpochMetrics) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    let mut log = Vec::new();
    if state.epoch == 0 {
        let m = state.evaluate(data, 0)?;
        on_epoch(state, &m)?;
        log.push(m);
    }
    while state.epoch < state.config.epochs {
        let m = state.train_epoch(data)?;
        on_epoch(state, &m)?;
        log.push(m);
    }
    Ok(log)
}
