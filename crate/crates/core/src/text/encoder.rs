use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{TokenizedCaption, Vocabulary};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Tape, Tensor, Var, LAYER_NORM_EPS};

const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Transformer width.
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    /// Width after the output projection; matches the visual feature width.
    pub out_dim: usize,
}

impl EncoderConfig {
    /// Default desk-scale shape for a given vocabulary and output width.
    pub fn desk(vocab_size: usize, out_dim: usize) -> Self {
        Self {
            width: 128,
            layers: 4,
            heads: 4,
            max_len: 32,
            vocab_size,
            out_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.max_len < 4 {
            return Err(Error::Config(format!("max_len {} < 4", self.max_len)));
        }
        if self.vocab_size < 4 || self.out_dim == 0 {
            return Err(Error::Config("vocab_size must be >= 4 and out_dim > 0".into()));
        }
        Ok(())
    }

    /// Parameter count implied by the configuration.
    pub fn num_parameters(&self) -> usize {
        let d = self.width;
        let per_block = 2 * d + (3 * d * d + 3 * d) + (d * d + d) + 2 * d + (4 * d * d + 4 * d) + (4 * d * d + d);
        self.vocab_size * d + self.max_len * d + self.layers * per_block + 2 * d + d * self.out_dim
    }
}

/// Output of [`TextEncoder::forward`]: every real token of the batch packed
/// row-wise into `tokens`, with `segments[i] = (first_row, len)` for
/// example `i` and `eos` holding each example's EOS row.
#[derive(Clone, Debug)]
pub struct EncodedBatch {
    pub tokens: Var,
    pub segments: Vec<(usize, usize)>,
    pub eos: Var,
}

impl EncodedBatch {
    /// Packed row of position `pos` in example `example`.
    pub fn row(&self, example: usize, pos: usize) -> usize {
        self.segments[example].0 + pos
    }
}

/// CLIP-style text tower: pre-norm causal transformer blocks, final layer
/// norm, linear projection. The EOS feature is the global text vector.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoder {
    config: EncoderConfig,
    params: ParamStore,
}

impl TextEncoder {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.width;
        let mut p = ParamStore::new();
        p.insert("token_embedding", Tensor::randn(&[config.vocab_size, d], INIT_STD, &mut rng));
        p.insert("position_embedding", Tensor::randn(&[config.max_len, d], INIT_STD, &mut rng));
        for l in 0..config.layers {
            let b = |s: &str| format!("blocks.{l}.{s}");
            p.insert(b("ln1.gain"), Tensor::full(&[d], 1.0));
            p.insert(b("ln1.bias"), Tensor::zeros(&[d]));
            p.insert(b("attn.qkv.weight"), Tensor::randn(&[d, 3 * d], INIT_STD, &mut rng));
            p.insert(b("attn.qkv.bias"), Tensor::zeros(&[3 * d]));
            p.insert(b("attn.out.weight"), Tensor::randn(&[d, d], INIT_STD, &mut rng));
            p.insert(b("attn.out.bias"), Tensor::zeros(&[d]));
            p.insert(b("ln2.gain"), Tensor::full(&[d], 1.0));
            p.insert(b("ln2.bias"), Tensor::zeros(&[d]));
            p.insert(b("mlp.fc.weight"), Tensor::randn(&[d, 4 * d], INIT_STD, &mut rng));
            p.insert(b("mlp.fc.bias"), Tensor::zeros(&[4 * d]));
            p.insert(b("mlp.proj.weight"), Tensor::randn(&[4 * d, d], INIT_STD, &mut rng));
            p.insert(b("mlp.proj.bias"), Tensor::zeros(&[d]));
        }
        p.insert("ln_final.gain", Tensor::full(&[d], 1.0));
        p.insert("ln_final.bias", Tensor::zeros(&[d]));
        p.insert("projection", Tensor::randn(&[d, config.out_dim], INIT_STD, &mut rng));
        Ok(Self { config, params: p })
    }

    pub fn from_params(config: EncoderConfig, params: ParamStore) -> Result<Self> {
        let mut enc = Self::new(config, 0)?;
        if params.len() != enc.params.len() {
            return Err(Error::Input(format!(
                "expected {} encoder tensors, found {}",
                enc.params.len(),
                params.len()
            )));
        }
        enc.params.load_from(&params)?;
        Ok(enc)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Records the forward pass on `tape` using parameters already bound
    /// from [`Self::params`].
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &[&TokenizedCaption],
    ) -> Result<EncodedBatch> {
        let p = |name: &str| {
            bound.var(
                self.params
                    .position(name)
                    .unwrap_or_else(|| panic!("encoder parameter {name} missing")),
            )
        };
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        let mut segments = Vec::with_capacity(batch.len());
        for tok in batch {
            if tok.len > self.config.max_len {
                return Err(Error::Index {
                    what: "sequence length",
                    index: tok.len,
                    size: self.config.max_len,
                });
            }
            segments.push((ids.len(), tok.len));
            for (pos, &id) in tok.real_ids().iter().enumerate() {
                if id as usize >= self.config.vocab_size {
                    return Err(Error::Index {
                        what: "token id",
                        index: id as usize,
                        size: self.config.vocab_size,
                    });
                }
                ids.push(id as usize);
                positions.push(pos);
            }
        }
        if ids.is_empty() {
            return Err(Error::Contract("encode needs at least one caption".into()));
        }

        let tok = tape.select_rows(p("token_embedding"), &ids)?;
        let pos = tape.select_rows(p("position_embedding"), &positions)?;
        let mut h = tape.add(tok, pos)?;
        for l in 0..self.config.layers {
            let b = |s: &str| p(&format!("blocks.{l}.{s}"));
            let a = tape.layer_norm(h, b("ln1.gain"), b("ln1.bias"), LAYER_NORM_EPS)?;
            let qkv = tape.matmul(a, b("attn.qkv.weight"))?;
            let qkv = tape.add_row(qkv, b("attn.qkv.bias"))?;
            let att = tape.causal_attention(qkv, &segments, self.config.heads)?;
            let o = tape.matmul(att, b("attn.out.weight"))?;
            let o = tape.add_row(o, b("attn.out.bias"))?;
            h = tape.add(h, o)?;

            let m = tape.layer_norm(h, b("ln2.gain"), b("ln2.bias"), LAYER_NORM_EPS)?;
            let f = tape.matmul(m, b("mlp.fc.weight"))?;
            let f = tape.add_row(f, b("mlp.fc.bias"))?;
            let f = tape.gelu(f)?;
            let f = tape.matmul(f, b("mlp.proj.weight"))?;
            let f = tape.add_row(f, b("mlp.proj.bias"))?;
            h = tape.add(h, f)?;
        }
        let h = tape.layer_norm(h, p("ln_final.gain"), p("ln_final.bias"), LAYER_NORM_EPS)?;
        let tokens = tape.matmul(h, p("projection"))?;
        let eos_rows: Vec<usize> = segments.iter().map(|&(s, l)| s + l - 1).collect();
        let eos = tape.select_rows(tokens, &eos_rows)?;
        Ok(EncodedBatch {
            tokens,
            segments,
            eos,
        })
    }

    /// Inference forward: global vectors `[b × d]` and dense features
    /// `[b × n_t × d]` where `n_t` is the padded length. PAD rows are zero.
    pub fn encode(&self, batch: &[&TokenizedCaption]) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let enc = self.forward(&mut tape, &bound, batch)?;
        let n_t = batch.iter().map(|t| t.ids.len()).max().unwrap_or(0);
        let d = self.config.out_dim;
        let tokens = tape.value(enc.tokens);
        let mut dense = vec![0.0; batch.len() * n_t * d];
        for (i, &(start, len)) in enc.segments.iter().enumerate() {
            let src = &tokens.data()[start * d..(start + len) * d];
            dense[i * n_t * d..i * n_t * d + len * d].copy_from_slice(src);
        }
        Ok((
            tape.value(enc.eos).clone(),
            Tensor::new(vec![batch.len(), n_t, d], dense)?,
        ))
    }

    /// Global (EOS) vectors for raw texts.
    pub fn encode_texts(&self, vocab: &Vocabulary, texts: &[&str]) -> Result<Tensor> {
        let toks: Vec<TokenizedCaption> = texts
            .iter()
            .map(|t| vocab.tokenize(t, self.config.max_len))
            .collect();
        let refs: Vec<&TokenizedCaption> = toks.iter().collect();
        Ok(self.encode(&refs)?.0)
    }
}
