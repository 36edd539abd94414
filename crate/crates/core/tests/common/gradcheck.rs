//! Central finite differences against the tape's reverse pass.
//!
//! Errors are norm-wise per input tensor: `‖g_tape − g_fd‖ / max(‖g_tape‖,
//! ‖g_fd‖, 1e-8)`.

use dalign::align::{
    alignment_loss, concept_loss, global_contrastive_loss, pool_text_concept,
    pool_visual_concept, AlignConfig, AlignmentExample, AlignmentHead,
};
use dalign::concepts::CaptionConcept;
use dalign::params::ParamStore;
use dalign::text::{EncoderConfig, TextEncoder, TokenizedCaption, Vocabulary};
use dalign::{Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;

type LossFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

pub struct Case {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub loss: LossFn,
}

pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-8)
}

fn eval(case: &Case, inputs: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = (case.loss)(&mut tape, &vars).expect("forward");
    tape.value(out).item()
}

/// Worst error over the inputs of `case`.
pub fn check(case: &Case) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = (case.loss)(&mut tape, &vars).expect("forward");
    let grads = tape.backward(out).expect("backward");
    let mut worst: f64 = 0.0;
    for (k, (v, t)) in vars.iter().zip(&case.inputs).enumerate() {
        let analytic = grads
            .get(*v)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; t.numel()]);
        let mut numeric = vec![0.0; t.numel()];
        let mut inputs = case.inputs.clone();
        for i in 0..t.numel() {
            let x = t.data()[i];
            inputs[k].data_mut()[i] = x + STEP;
            let up = eval(case, &inputs);
            inputs[k].data_mut()[i] = x - STEP;
            let down = eval(case, &inputs);
            inputs[k].data_mut()[i] = x;
            numeric[i] = (up - down) / (2.0 * STEP);
        }
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    worst
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Reduces a non-scalar output to a scalar with fixed random weights.
fn project(tape: &mut Tape, out: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(out, w)?;
    tape.sum(p)
}

fn projected(
    name: &'static str,
    inputs: Vec<Tensor>,
    out_shape: &[usize],
    rng: &mut ChaCha8Rng,
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static,
) -> Case {
    let w = uniform(out_shape, rng);
    Case {
        name,
        inputs,
        loss: Box::new(move |tape, v| {
            let out = f(tape, v)?;
            project(tape, out, &w)
        }),
    }
}

/// One case per differentiable tape operation plus the pooling and loss
/// building blocks, with inputs drawn from `seed`.
pub fn op_cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let temp = r.random_range(0.3..2.0);
    let c = r.random_range(-2.0..2.0);
    let labels: Vec<usize> = (0..4).map(|_| r.random_range(0..5)).collect();
    let rows: Vec<usize> = (0..5).map(|_| r.random_range(0..4)).collect();
    let mut cases = vec![
        projected("matmul", vec![uniform(&[5, 4], r), uniform(&[4, 3], r)], &[5, 3], r, |t, v| {
            t.matmul(v[0], v[1])
        }),
        projected("add", vec![uniform(&[3, 4], r), uniform(&[3, 4], r)], &[3, 4], r, |t, v| {
            t.add(v[0], v[1])
        }),
        projected("sub", vec![uniform(&[3, 4], r), uniform(&[3, 4], r)], &[3, 4], r, |t, v| {
            t.sub(v[0], v[1])
        }),
        projected("mul", vec![uniform(&[3, 4], r), uniform(&[3, 4], r)], &[3, 4], r, |t, v| {
            t.mul(v[0], v[1])
        }),
        // x used twice: fan-out accumulation
        projected("mul_self", vec![uniform(&[2, 3], r)], &[2, 3], r, |t, v| t.mul(v[0], v[0])),
        projected("add_row", vec![uniform(&[3, 4], r), uniform(&[4], r)], &[3, 4], r, |t, v| {
            t.add_row(v[0], v[1])
        }),
        projected("scale", vec![uniform(&[3, 2], r)], &[3, 2], r, move |t, v| t.scale(v[0], c)),
        projected("mul_scalar", vec![uniform(&[3, 2], r), uniform(&[1], r)], &[3, 2], r, |t, v| {
            t.mul_scalar(v[0], v[1])
        }),
        projected("exp", vec![uniform(&[2, 3], r)], &[2, 3], r, |t, v| t.exp(v[0])),
        projected("gelu", vec![uniform(&[4, 3], r)], &[4, 3], r, |t, v| t.gelu(v[0])),
        projected("transpose", vec![uniform(&[2, 5], r)], &[5, 2], r, |t, v| t.transpose(v[0])),
        projected("softmax_rows", vec![uniform(&[3, 5], r)], &[3, 5], r, move |t, v| {
            t.softmax(v[0], 1, temp)
        }),
        projected("softmax_cols", vec![uniform(&[4, 2], r)], &[4, 2], r, move |t, v| {
            t.softmax(v[0], 0, temp)
        }),
        projected("softmax_3d", vec![uniform(&[2, 3, 2], r)], &[2, 3, 2], r, move |t, v| {
            t.softmax(v[0], 1, temp)
        }),
        projected(
            "layer_norm",
            vec![uniform(&[3, 5], r), uniform(&[5], r), uniform(&[5], r)],
            &[3, 5],
            r,
            |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5),
        ),
        projected("l2_normalize_rows", vec![uniform(&[3, 4], r)], &[3, 4], r, |t, v| {
            t.l2_normalize(v[0], 1)
        }),
        projected("l2_normalize_cols", vec![uniform(&[3, 4], r)], &[3, 4], r, |t, v| {
            t.l2_normalize(v[0], 0)
        }),
        Case {
            name: "cross_entropy",
            inputs: vec![uniform(&[4, 5], r)],
            loss: Box::new(move |t, v| t.cross_entropy(v[0], &labels)),
        },
        projected("select_rows", vec![uniform(&[4, 3], r)], &[5, 3], r, move |t, v| {
            t.select_rows(v[0], &rows)
        }),
        projected("concat_rows", vec![uniform(&[2, 3], r), uniform(&[1, 3], r)], &[3, 3], r, |t, v| {
            t.concat_rows(&[v[0], v[1]])
        }),
        projected("mean_rows", vec![uniform(&[4, 3], r)], &[1, 3], r, |t, v| t.mean_rows(v[0])),
        Case {
            name: "sum",
            inputs: vec![uniform(&[3, 3], r)],
            loss: Box::new(|t, v| {
                let e = t.exp(v[0])?;
                t.sum(e)
            }),
        },
        Case {
            name: "mean",
            inputs: vec![uniform(&[3, 3], r)],
            loss: Box::new(|t, v| {
                let e = t.mul(v[0], v[0])?;
                t.mean(e)
            }),
        },
        projected("causal_attention", vec![uniform(&[7, 12], r)], &[7, 4], r, |t, v| {
            t.causal_attention(v[0], &[(0, 3), (3, 4)], 2)
        }),
    ];
    let tau = r.random_range(0.2..1.0);
    cases.push(projected(
        "pool_visual_concept",
        vec![uniform(&[6, 3], r), uniform(&[1, 3], r)],
        &[1, 3],
        r,
        move |t, v| Ok(pool_visual_concept(t, v[0], v[1], tau, None)?.1),
    ));
    cases.push(projected("pool_text_concept", vec![uniform(&[5, 3], r)], &[1, 3], r, |t, v| {
        pool_text_concept(t, v[0], &[1, 2, 4])
    }));
    cases.push(Case {
        name: "global_contrastive_loss",
        inputs: vec![uniform(&[4, 3], r), uniform(&[4, 3], r), uniform(&[1], r)],
        loss: Box::new(|t, v| {
            let s = t.exp(v[2])?;
            global_contrastive_loss(t, v[0], v[1], s)
        }),
    });
    let concept_labels: Vec<usize> = (0..3).map(|_| r.random_range(0..4)).collect();
    cases.push(Case {
        name: "concept_loss",
        inputs: vec![uniform(&[1, 3], r), uniform(&[1, 3], r), uniform(&[1, 3], r), uniform(&[4, 3], r)],
        loss: Box::new(move |t, v| concept_loss(t, &v[..3], &concept_labels, v[3])),
    });
    cases
}

/// A tiny encoder, head and batch for the full objective.
pub struct ChainFixture {
    pub encoder: TextEncoder,
    pub head: AlignmentHead,
    pub tokens: Vec<TokenizedCaption>,
    pub concepts: Vec<Vec<CaptionConcept>>,
    pub patches: Vec<Tensor>,
    pub globals: Vec<Vec<f64>>,
    pub prompts: Vec<TokenizedCaption>,
    pub cfg: AlignConfig,
}

impl ChainFixture {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
        let captions = ["a cow on grass", "the tree and a dog", "a red cow near a tree"];
        let vocab = Vocabulary::build(captions, 1, 100).expect("vocab");
        let d = 4;
        let enc_cfg = EncoderConfig {
            width: 8,
            layers: 1,
            heads: 2,
            max_len: 8,
            vocab_size: vocab.len(),
            out_dim: d,
        };
        // Larger weights than the default init so every path carries signal.
        let mut encoder = TextEncoder::new(enc_cfg, seed).expect("encoder");
        for (_, t) in encoder.params_mut().iter_mut() {
            for x in t.data_mut() {
                *x += rng.random_range(-0.3..0.3);
            }
        }
        let mut head = AlignmentHead::new(4, d, seed + 1);
        for (_, t) in head.params_mut().iter_mut() {
            for x in t.data_mut() {
                *x += rng.random_range(-0.5..0.5);
            }
        }
        let tokens: Vec<TokenizedCaption> = captions.iter().map(|c| vocab.tokenize(c, 8)).collect();
        let concepts = vec![
            vec![
                CaptionConcept { label: 0, positions: vec![1, 2] },
                CaptionConcept { label: 2, positions: vec![4] },
            ],
            vec![
                CaptionConcept { label: 3, positions: vec![1, 2] },
                CaptionConcept { label: 1, positions: vec![4, 5] },
            ],
            vec![CaptionConcept { label: 0, positions: vec![1, 2, 3] }],
        ];
        let patches = (0..3).map(|_| uniform(&[6, d], &mut rng)).collect();
        let globals = (0..3).map(|_| uniform(&[d], &mut rng).into_data()).collect();
        let prompts = ["cow", "dog", "grass", "tree"].iter().map(|c| vocab.tokenize(c, 8)).collect();
        let cfg = AlignConfig {
            lambda: [0.5, 1.0, 2.0][(seed % 3) as usize],
            tau: rng.random_range(0.2..1.0),
            normalize_concepts: seed % 4 == 1,
            normalize_patches: seed % 4 == 2,
            tie_head: seed % 4 == 3,
        };
        Self {
            encoder,
            head,
            tokens,
            concepts,
            patches,
            globals,
            prompts,
            cfg,
        }
    }

    fn examples(&self) -> Vec<AlignmentExample<'_>> {
        (0..self.tokens.len())
            .map(|i| AlignmentExample {
                tokens: &self.tokens[i],
                concepts: &self.concepts[i],
                patches: &self.patches[i],
                global: &self.globals[i],
            })
            .collect()
    }

    fn loss_with(&self, encoder: &TextEncoder, head: &AlignmentHead) -> f64 {
        let mut tape = Tape::new();
        let eb = encoder.params().bind(&mut tape, false);
        let hb = head.params().bind(&mut tape, false);
        let parts = alignment_loss(
            &mut tape,
            encoder,
            &eb,
            head,
            &hb,
            &self.examples(),
            &self.cfg,
            Some(&self.prompts),
        )
        .expect("loss");
        tape.value(parts.total).item()
    }

    /// Analytic gradients of `L_tot` for the encoder and head stores.
    pub fn analytic(&self) -> (Vec<Tensor>, Vec<Tensor>) {
        let mut tape = Tape::new();
        let eb = self.encoder.params().bind(&mut tape, true);
        let hb = self.head.params().bind(&mut tape, true);
        let parts = alignment_loss(
            &mut tape,
            &self.encoder,
            &eb,
            &self.head,
            &hb,
            &self.examples(),
            &self.cfg,
            Some(&self.prompts),
        )
        .expect("loss");
        let g = tape.backward(parts.total).expect("backward");
        (eb.gradients(self.encoder.params(), &g), hb.gradients(self.head.params(), &g))
    }

    /// Worst error over every encoder and head tensor; `filter` limits the
    /// checked tensors by name.
    pub fn check(&self, filter: impl Fn(&str) -> bool) -> (f64, String) {
        let (enc_g, head_g) = self.analytic();
        let mut worst = (0.0, String::new());
        let mut record = |name: &str, a: &Tensor, n: &[f64]| {
            let e = rel_error(a.data(), n);
            if e > worst.0 {
                worst = (e, name.to_owned());
            }
        };
        let names: Vec<String> = self.encoder.params().names().to_vec();
        for (k, name) in names.iter().enumerate() {
            if !filter(name) {
                continue;
            }
            let n = self.numeric(name, true);
            record(name, &enc_g[k], &n);
        }
        let names: Vec<String> = self.head.params().names().to_vec();
        for (k, name) in names.iter().enumerate() {
            if !filter(name) {
                continue;
            }
            let n = self.numeric(name, false);
            record(name, &head_g[k], &n);
        }
        worst
    }

    fn numeric(&self, name: &str, in_encoder: bool) -> Vec<f64> {
        let mut enc = self.encoder.clone();
        let mut head = self.head.clone();
        let store: &mut ParamStore = if in_encoder { enc.params_mut() } else { head.params_mut() };
        let n = store.get(name).expect("param").numel();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let store: &mut ParamStore = if in_encoder { enc.params_mut() } else { head.params_mut() };
            let x = store.get(name).expect("param").data()[i];
            store.get_mut(name).expect("param").data_mut()[i] = x + STEP;
            let up = self.loss_with(&enc, &head);
            let store: &mut ParamStore = if in_encoder { enc.params_mut() } else { head.params_mut() };
            store.get_mut(name).expect("param").data_mut()[i] = x - STEP;
            let down = self.loss_with(&enc, &head);
            let store: &mut ParamStore = if in_encoder { enc.params_mut() } else { head.params_mut() };
            store.get_mut(name).expect("param").data_mut()[i] = x;
            out[i] = (up - down) / (2.0 * STEP);
        }
        out
    }
}

/// Runs every op case and the full chain for `seeds`, returning the worst
/// error and where it occurred.
pub fn suite(seeds: std::ops::Range<u64>) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for seed in seeds {
        for case in op_cases(seed) {
            let e = check(&case);
            if e > worst.0 || e.is_nan() {
                worst = (e, format!("{} (seed {seed})", case.name));
            }
        }
        let (e, name) = ChainFixture::new(seed).check(|_| true);
        if e > worst.0 || e.is_nan() {
            worst = (e, format!("L_tot wrt {name} (seed {seed})"));
        }
    }
    worst
}
