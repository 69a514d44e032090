//! Constructed weights with known cross-attention, used as synthetic ground truth.
//!
//! Residual stream layout (`d_model` columns):
//!
//! ```text
//! [0, 25)                      token one-hot
//! [25, 25 + max_len)           position one-hot
//! [25 + max_len, … + 20)       copied residue identity
//! d_model − 1                  always zero
//! ```
//!
//! Every planted read uses a column pair `(+w on the hot dim, −w on the zero dim)`.
//! Layer norm shifts all dims by the same mean, so the pair cancels the shift and
//! reads `w / σ` exactly.
//!
//! Decoder row `e` (which predicts epitope residue `e`) queries the position slot
//! of its mapped TCR token in that chain's cross-attention. Values carry the
//! residue identity, and the unembedding turns a copied identity into a logit
//! boost for the same residue. Unmapped rows look at `<BOS>`, whose value is zero.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::vocab::{AMINO_ACIDS, FIRST_RESIDUE_ID, VOCAB_SIZE};
use crate::model::{
    attention_prefix, layout, Chain, Init, MhcClass, ModelConfig, TriSequenceInput, WeightSet, LAYER_NORM_EPS,
};
use crate::tensor::Matrix;

/// Pre-softmax logit of a planted query-key pair.
pub const PLANT_LOGIT: f64 = 9.0;
/// Logit added to the copied residue at the output.
pub const PLANT_BOOST: f64 = 3.5;
/// Standard deviation of the Gaussian noise added to every non-norm weight.
pub const PLANT_NOISE: f64 = 0.02;
pub const PLANTED_NEAR: f64 = 2.0;
pub const PLANTED_FAR: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlantedPair {
    pub chain: Chain,
    /// Residue index (0-based) in the TCR chain.
    pub tcr_pos: usize,
    /// Residue index (0-based) of the epitope residue that copies it.
    pub epitope_pos: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PlantedMap {
    pub pairs: Vec<PlantedPair>,
}

impl PlantedMap {
    pub fn positions(&self, chain: Chain) -> BTreeSet<usize> {
        self.pairs.iter().filter(|p| p.chain == chain).map(|p| p.tcr_pos).collect()
    }
}

pub fn planted_config() -> ModelConfig {
    ModelConfig {
        n_enc_layers: 1,
        n_dec_layers: 1,
        n_heads: 2,
        d_model: 80,
        d_ff: 8,
        max_len: 24,
        vocab_size: VOCAB_SIZE,
        seed: 0,
    }
}

/// `1/σ` of a layer-normed 0/1 vector with `hot` ones among `d` entries.
fn norm_gain(hot: usize, d: usize) -> f64 {
    let mu = hot as f64 / d as f64;
    1.0 / (mu * (1.0 - mu) + LAYER_NORM_EPS).sqrt()
}

fn validate(config: &ModelConfig, map: &PlantedMap) -> Result<()> {
    config.validate()?;
    let fail = |m: String| Err(Error::Validation(m));
    let need = VOCAB_SIZE + config.max_len + AMINO_ACIDS.len() + 1;
    if config.d_model < need {
        return fail(format!("planted layout needs d_model >= {need}, got {}", config.d_model));
    }
    if config.d_head() < config.max_len.max(AMINO_ACIDS.len()) {
        return fail(format!(
            "planted layout needs d_head >= {}, got {}",
            config.max_len.max(AMINO_ACIDS.len()),
            config.d_head()
        ));
    }
    let mut rows = BTreeSet::new();
    for p in &map.pairs {
        if p.chain == Chain::Epitope {
            return fail("planted pairs must map a TCR chain into the epitope".into());
        }
        // One slot for <BOS> before and <EOS> after the residue.
        if p.tcr_pos + 2 >= config.max_len || p.epitope_pos + 2 >= config.max_len {
            return fail(format!("planted pair {p:?} outside max_len {}", config.max_len));
        }
        if !rows.insert(p.epitope_pos) {
            return fail(format!("epitope position {} planted twice", p.epitope_pos));
        }
    }
    Ok(())
}

pub fn plant_model(config: &ModelConfig, map: &PlantedMap, seed: u64) -> Result<WeightSet> {
    validate(config, map)?;
    let cfg = ModelConfig { seed, ..*config };
    let d = cfg.d_model;
    let dh = cfg.d_head();
    let pos0 = VOCAB_SIZE;
    let copy0 = pos0 + cfg.max_len;
    let zero = d - 1;
    let two_hot = norm_gain(2, d);
    let three_hot = norm_gain(3, d);

    let mut tensors: BTreeMap<String, Matrix> = BTreeMap::new();
    for spec in layout(&cfg) {
        let m = match spec.init {
            Init::Ones => Matrix::filled(spec.rows, spec.cols, 1.0),
            _ => Matrix::zeros(spec.rows, spec.cols),
        };
        tensors.insert(spec.name, m);
    }
    let mut put = |name: &str, r: usize, c: usize, v: f64| {
        let m = tensors.get_mut(name).expect("layout tensor");
        m.set(r, c, m.get(r, c) + v);
    };
    let pair = |put: &mut dyn FnMut(&str, usize, usize, f64), name: &str, hot: usize, col: usize, w: f64| {
        put(name, hot, col, w);
        put(name, zero, col, -w);
    };

    for chain in Chain::ALL {
        for t in 0..VOCAB_SIZE {
            put(&format!("{chain}.embed.token"), t, t, 1.0);
        }
        for i in 0..cfg.max_len {
            put(&format!("{chain}.embed.pos"), i, pos0 + i, 1.0);
        }
    }

    let qk = (PLANT_LOGIT * (dh as f64).sqrt()).sqrt() / two_hot;
    let wv = 1.0 / two_hot;
    let wo = 1.0 / cfg.n_heads as f64;
    for chain in Chain::TCR {
        let prefix = attention_prefix(Chain::Epitope, 0, &format!("cross_{chain}"));
        let mut slot: Vec<usize> = vec![0; cfg.max_len];
        for p in map.pairs.iter().filter(|p| p.chain == chain) {
            slot[p.epitope_pos] = p.tcr_pos + 1;
        }
        for h in 0..cfg.n_heads {
            let base = h * dh;
            for (row, &s) in slot.iter().enumerate() {
                pair(&mut put, &format!("{prefix}.wq"), pos0 + row, base + s, qk);
            }
            for c in 0..cfg.max_len {
                pair(&mut put, &format!("{prefix}.wk"), pos0 + c, base + c, qk);
            }
            for a in 0..AMINO_ACIDS.len() {
                pair(&mut put, &format!("{prefix}.wv"), FIRST_RESIDUE_ID + a, base + a, wv);
                put(&format!("{prefix}.wo"), base + a, copy0 + a, wo);
            }
        }
    }
    let u = PLANT_BOOST / three_hot;
    for a in 0..AMINO_ACIDS.len() {
        pair(&mut put, "epitope.unembed", copy0 + a, FIRST_RESIDUE_ID + a, u);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, PLANT_NOISE).map_err(|e| Error::Validation(e.to_string()))?;
    for spec in layout(&cfg) {
        if spec.init != Init::Gaussian {
            continue;
        }
        let m = tensors.get_mut(&spec.name).expect("layout tensor");
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                let v = noise.sample(&mut rng);
                // The zero dim stays exactly zero so every (+w, −w) pair cancels the
                // norm shift. Many zero-sum columns read it, so noise here would add up.
                if spec.cols != d || c != zero {
                    m.set(r, c, m.get(r, c) + v);
                }
            }
        }
    }
    WeightSet::from_tensors(cfg, tensors)
}

/// One planted model together with data that exercises it.
#[derive(Clone, Debug)]
pub struct PlantedInstance {
    pub input: TriSequenceInput,
    pub map: PlantedMap,
    pub weights: WeightSet,
    /// Planted residues sit at [`PLANTED_NEAR`], the rest at [`PLANTED_FAR`].
    pub distances: BTreeMap<Chain, Vec<f64>>,
}

impl PlantedInstance {
    pub fn truth(&self, chain: Chain) -> Vec<bool> {
        self.distances[&chain].iter().map(|&d| d == PLANTED_NEAR).collect()
    }
}

fn random_residues(rng: &mut impl Rng, n: usize) -> Vec<char> {
    let aa: Vec<char> = AMINO_ACIDS.chars().collect();
    (0..n).map(|_| aa[rng.gen_range(0..aa.len())]).collect()
}

/// Random CDR3 loops of 10–14 residues and a 9–12 residue epitope. In each loop
/// `⌈n/4⌉` distinct residues are copied to distinct epitope positions.
pub fn planted_instance(seed: u64) -> Result<PlantedInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_91a7);
    let (na, nb) = (rng.gen_range(10..=14), rng.gen_range(10..=14));
    let mut a = random_residues(&mut rng, na);
    let mut b = random_residues(&mut rng, nb);
    // Keep a handful of residues in the epitope unplanted.
    let ma = a.len().div_ceil(4);
    let mb = b.len().div_ceil(4);
    let ne = rng.gen_range(9..=12).max(ma + mb + 1);
    let mut e = random_residues(&mut rng, ne);

    let mut epitope_slots: Vec<usize> = (0..ne).collect();
    epitope_slots.shuffle(&mut rng);
    let mut pairs = Vec::new();
    for (chain, seq, m) in [(Chain::Cdr3a, &mut a, ma), (Chain::Cdr3b, &mut b, mb)] {
        let mut positions: Vec<usize> = (0..seq.len()).collect();
        positions.shuffle(&mut rng);
        for &p in positions.iter().take(m) {
            let slot = epitope_slots.pop().expect("enough epitope slots");
            e[slot] = seq[p];
            pairs.push(PlantedPair {
                chain,
                tcr_pos: p,
                epitope_pos: slot,
            });
        }
    }
    let map = PlantedMap { pairs };
    let weights = plant_model(&planted_config(), &map, seed)?;
    let string = |v: &[char]| v.iter().collect::<String>();
    let input = TriSequenceInput::from_sequences(&string(&a), &string(&b), &string(&e), MhcClass::I)?;
    let mut distances = BTreeMap::new();
    for (chain, n) in [(Chain::Cdr3a, a.len()), (Chain::Cdr3b, b.len())] {
        let near = map.positions(chain);
        distances.insert(
            chain,
            (0..n).map(|i| if near.contains(&i) { PLANTED_NEAR } else { PLANTED_FAR }).collect(),
        );
    }
    let copied: BTreeSet<usize> = map.pairs.iter().map(|p| p.epitope_pos).collect();
    distances.insert(
        Chain::Epitope,
        (0..ne).map(|i| if copied.contains(&i) { PLANTED_NEAR } else { PLANTED_FAR }).collect(),
    );
    Ok(PlantedInstance {
        input,
        map,
        weights,
        distances,
    })
}
