use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

use super::config::ModelConfig;
use super::vocab::Chain;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Gaussian,
    Ones,
    Zeros,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

/// Parameter name prefixes for one attention block, e.g. `cdr3a.enc.0.attn`.
pub fn attention_prefix(chain: Chain, layer: usize, role: &str) -> String {
    match chain {
        Chain::Epitope => format!("epitope.dec.{layer}.{role}"),
        _ => format!("{chain}.enc.{layer}.{role}"),
    }
}

/// Canonical, ordered tensor layout for a config. Save order follows this list.
pub fn layout(config: &ModelConfig) -> Vec<TensorSpec> {
    let d = config.d_model;
    let norm = |prefix: &str| {
        [
            (format!("{prefix}.gamma"), 1, d, Init::Ones),
            (format!("{prefix}.beta"), 1, d, Init::Zeros),
        ]
    };
    let attn = |prefix: &str| ["wq", "wk", "wv", "wo"].map(|w| (format!("{prefix}.{w}"), d, d, Init::Gaussian));
    let ffn = |prefix: &str| {
        [
            (format!("{prefix}.w1"), d, config.d_ff, Init::Gaussian),
            (format!("{prefix}.w2"), config.d_ff, d, Init::Gaussian),
        ]
    };

    let mut block: Vec<(String, usize, usize, Init)> = Vec::new();
    for chain in Chain::ALL {
        block.push((format!("{chain}.embed.token"), config.vocab_size, d, Init::Gaussian));
        block.push((format!("{chain}.embed.pos"), config.max_len, d, Init::Gaussian));
    }
    for chain in Chain::TCR {
        for l in 0..config.n_enc_layers {
            block.extend(norm(&attention_prefix(chain, l, "attn_norm")));
            block.extend(attn(&attention_prefix(chain, l, "attn")));
            block.extend(norm(&attention_prefix(chain, l, "ffn_norm")));
            block.extend(ffn(&attention_prefix(chain, l, "ffn")));
        }
        block.extend(norm(&format!("{chain}.enc.final_norm")));
    }
    for l in 0..config.n_dec_layers {
        for role in ["self", "cross_cdr3a", "cross_cdr3b"] {
            block.extend(norm(&attention_prefix(Chain::Epitope, l, &format!("{role}_norm"))));
            block.extend(attn(&attention_prefix(Chain::Epitope, l, role)));
        }
        block.extend(norm(&attention_prefix(Chain::Epitope, l, "ffn_norm")));
        block.extend(ffn(&attention_prefix(Chain::Epitope, l, "ffn")));
    }
    block.extend(norm("epitope.dec.final_norm"));
    block.push(("epitope.unembed".into(), d, config.vocab_size, Init::Gaussian));
    block
        .into_iter()
        .map(|(name, rows, cols, init)| TensorSpec { name, rows, cols, init })
        .collect()
}

/// All model parameters, keyed by `pipeline.stage.layer.role` names from [`layout`].
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSet {
    pub config: ModelConfig,
    tensors: BTreeMap<String, Matrix>,
}

impl WeightSet {
    /// Builds a weight set, checking every tensor of the layout is present with the right shape.
    pub fn from_tensors(config: ModelConfig, tensors: BTreeMap<String, Matrix>) -> Result<Self> {
        config.validate()?;
        let specs = layout(&config);
        for spec in &specs {
            let m = tensors
                .get(&spec.name)
                .ok_or_else(|| Error::ShapeMismatch(format!("missing tensor {}", spec.name)))?;
            if m.shape() != (spec.rows, spec.cols) {
                return Err(Error::ShapeMismatch(format!(
                    "{} is {}x{}, config wants {}x{}",
                    spec.name,
                    m.rows(),
                    m.cols(),
                    spec.rows,
                    spec.cols
                )));
            }
        }
        if tensors.len() != specs.len() {
            let extra = tensors
                .keys()
                .find(|k| !specs.iter().any(|s| &s.name == *k))
                .cloned()
                .unwrap_or_default();
            return Err(Error::ShapeMismatch(format!("unexpected tensor {extra}")));
        }
        Ok(Self { config, tensors })
    }

    /// Seeded scaled-Gaussian initialisation (std `1/√d_model`); norms start at identity.
    pub fn init_random(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, 1.0 / (config.d_model as f64).sqrt())
            .map_err(|e| Error::Validation(e.to_string()))?;
        let mut tensors = BTreeMap::new();
        for spec in layout(config) {
            let m = match spec.init {
                Init::Gaussian => Matrix::new(
                    spec.rows,
                    spec.cols,
                    (0..spec.rows * spec.cols).map(|_| normal.sample(&mut rng)).collect(),
                )?,
                Init::Ones => Matrix::filled(spec.rows, spec.cols, 1.0),
                Init::Zeros => Matrix::zeros(spec.rows, spec.cols),
            };
            tensors.insert(spec.name, m);
        }
        Ok(Self {
            config: *config,
            tensors,
        })
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Usage(format!("no tensor named {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Matrix> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Usage(format!("no tensor named {name}")))
    }

    /// Replaces a tensor, keeping its shape.
    pub fn set(&mut self, name: &str, value: Matrix) -> Result<()> {
        let slot = self.get_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(slot.dim_err("WeightSet::set", &value));
        }
        *slot = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }
}
