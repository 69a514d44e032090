use serde::{Deserialize, Serialize};

use crate::attribution::ImportanceScores;
use crate::error::{Error, Result};
use crate::model::{sequence_score, vocab::PAD, Chain, TriSequenceInput, WeightSet};

use super::metrics::top_indices;

/// Default perturbation depth per chain: 4 for the CDR3 loops, 7 for the epitope.
pub fn default_k(chain: Chain) -> usize {
    match chain {
        Chain::Cdr3a | Chain::Cdr3b => 4,
        Chain::Epitope => 7,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    pub input: TriSequenceInput,
    /// Residue indices (0-based, within the chain) that were padded.
    pub masked: Vec<usize>,
    pub warning: Option<String>,
}

/// Replaces the `k` highest-scoring residues of `chain` with `<PAD>`.
pub fn perturb_topk(input: &TriSequenceInput, scores: &ImportanceScores, chain: Chain, k: usize) -> Result<Perturbation> {
    let s = scores.get(chain);
    let span = input.residue_span(chain);
    if s.len() != span.len() {
        return Err(Error::Shape(format!(
            "{chain}: {} scores for {} residues",
            s.len(),
            span.len()
        )));
    }
    let warning = (k > s.len()).then(|| format!("{chain}: k={k} clamped to {} residues", s.len()));
    let masked = top_indices(s, k.min(s.len()), true);
    let mut out = input.clone();
    let tokens = out.tokens_mut(chain);
    for &i in &masked {
        tokens[span.start + i] = PAD;
    }
    Ok(Perturbation {
        input: out,
        masked,
        warning,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationResult {
    pub k: usize,
    pub base_score: f64,
    /// `sequence_score` after padding the top 1, 2, …, k residues.
    pub perturbed_scores: Vec<f64>,
    pub lodds: f64,
    pub aopc: f64,
}

/// Runs the masking sweep `1..=k` once and derives both metrics from it.
pub fn perturbation_curve(
    weights: &WeightSet,
    input: &TriSequenceInput,
    scores: &ImportanceScores,
    chain: Chain,
    k: usize,
) -> Result<PerturbationResult> {
    let base = sequence_score(input, weights)?;
    let perturbed = (1..=k)
        .map(|j| sequence_score(&perturb_topk(input, scores, chain, j)?.input, weights))
        .collect::<Result<Vec<f64>>>()?;
    let lodds = perturbed.last().map_or(0.0, |p| p - base);
    let aopc = aopc_from_scores(base, &perturbed);
    Ok(PerturbationResult {
        k,
        base_score: base,
        perturbed_scores: perturbed,
        lodds,
        aopc,
    })
}

/// AOPC from a sweep: `perturbed[j]` is the score with the top `j + 1` residues padded.
/// The `k = 0` term is `p0 − p0 = 0` but still counts in the `1/(k_max + 1)` normaliser.
pub fn aopc_from_scores(base: f64, perturbed: &[f64]) -> f64 {
    let p0 = base.exp();
    perturbed.iter().map(|s| p0 - s.exp()).sum::<f64>() / (perturbed.len() + 1) as f64
}

/// `score(perturbed at k) − score(original)`; negative when the explanation is faithful.
pub fn lodds(
    weights: &WeightSet,
    input: &TriSequenceInput,
    scores: &ImportanceScores,
    chain: Chain,
    k: usize,
) -> Result<f64> {
    let perturbed = perturb_topk(input, scores, chain, k)?;
    Ok(sequence_score(&perturbed.input, weights)? - sequence_score(input, weights)?)
}

/// `(1/(k_max+1)) Σ_{k=0..k_max} [p(original) − p(perturbed at k)]` with `p = exp(score)`.
pub fn aopc(
    weights: &WeightSet,
    input: &TriSequenceInput,
    scores: &ImportanceScores,
    chain: Chain,
    k_max: usize,
) -> Result<f64> {
    Ok(perturbation_curve(weights, input, scores, chain, k_max)?.aopc)
}
