use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Initial log logit scale, `ln(1 / 0.07)`.
pub const LOGIT_SCALE_INIT: f64 = 2.659_260_036_932_778_4;
/// Upper clamp on the log logit scale, `ln 100`.
pub const LOGIT_SCALE_MAX: f64 = 4.605_170_185_988_092;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    /// Weight of the concept loss.
    pub lambda: f64,
    /// Visual pooling temperature.
    pub tau: f64,
    /// L2-normalize visual concepts and classifier rows before the logits.
    #[serde(default)]
    pub normalize_concepts: bool,
    /// L2-normalize patch rows inside the pooling similarity.
    #[serde(default)]
    pub normalize_patches: bool,
    /// Use encoded concept names as classifier rows instead of a free matrix.
    #[serde(default)]
    pub tie_head: bool,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            tau: 0.1,
            normalize_concepts: false,
            normalize_patches: false,
            tie_head: false,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Parameter(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Parameter(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Trainable parts outside the text encoder: the concept classifier
/// `[C × d]` and the log logit scale of the global loss.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentHead {
    params: ParamStore,
}

impl AlignmentHead {
    pub const CLASSIFIER: &'static str = "concept_classifier";
    pub const LOGIT_SCALE: &'static str = "logit_scale";

    pub fn new(num_concepts: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        params.insert(Self::CLASSIFIER, Tensor::randn(&[num_concepts, dim], 0.02, &mut rng));
        params.insert(Self::LOGIT_SCALE, Tensor::scalar(LOGIT_SCALE_INIT));
        Self { params }
    }

    pub fn from_params(params: ParamStore) -> Result<Self> {
        for name in [Self::CLASSIFIER, Self::LOGIT_SCALE] {
            if params.get(name).is_none() {
                return Err(Error::Input(format!("alignment head is missing {name}")));
            }
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_concepts(&self) -> usize {
        self.classifier().shape()[0]
    }

    pub fn classifier(&self) -> &Tensor {
        self.params.get(Self::CLASSIFIER).expect("checked at construction")
    }

    /// Current multiplicative logit scale, `exp(log_scale)`.
    pub fn logit_scale(&self) -> f64 {
        self.params.get(Self::LOGIT_SCALE).expect("checked at construction").item().exp()
    }

    /// Keeps the logit scale at or below 100.
    pub fn clamp(&mut self) {
        let s = self
            .params
            .get_mut(Self::LOGIT_SCALE)
            .expect("checked at construction");
        let v = &mut s.data_mut()[0];
        *v = v.min(LOGIT_SCALE_MAX);
    }
}
