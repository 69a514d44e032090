use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::vocab::VOCAB_SIZE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

/// Layer-norm epsilon shared by every norm in the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;

impl Default for ModelConfig {
    /// Sized for the benchmark: the longest manifest sequence is 20 residues.
    fn default() -> Self {
        Self {
            n_enc_layers: 2,
            n_dec_layers: 2,
            n_heads: 4,
            d_model: 32,
            d_ff: 64,
            max_len: 32,
            vocab_size: VOCAB_SIZE,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.n_heads == 0 || self.d_model == 0 || self.d_ff == 0 {
            return fail("n_heads, d_model and d_ff must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_enc_layers == 0 || self.n_dec_layers == 0 {
            return fail("need at least one encoder and one decoder layer".into());
        }
        if self.max_len < 3 {
            return fail(format!("max_len {} cannot hold a framed residue", self.max_len));
        }
        if self.vocab_size != VOCAB_SIZE {
            return fail(format!("vocab_size {} != {VOCAB_SIZE}", self.vocab_size));
        }
        Ok(())
    }
}
