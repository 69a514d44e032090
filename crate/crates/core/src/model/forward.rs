//! Forward pass of the three-pipeline encoder-decoder, recorded on a tape.
//!
//! CDR3α and CDR3β each run through their own pre-norm encoder. The epitope
//! pipeline is a decoder: causal self-attention, then one cross-attention block
//! per TCR chain, then a feed-forward block. The explained quantity is the mean
//! log-probability of the epitope's next-token targets; the negative log-likelihood
//! reported alongside it is just its negation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{log_softmax_at, AttentionMask, Matrix, Tape, ValueId};

use super::config::LAYER_NORM_EPS;
use super::vocab::{Chain, TriSequenceInput, PAD};
use super::weights::{attention_prefix, WeightSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttentionKind {
    #[serde(rename = "self")]
    SelfAttention,
    #[serde(rename = "cross")]
    Cross,
}

/// One attention block: queries come from `query`, keys and values from `key`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SiteId {
    pub query: Chain,
    pub key: Chain,
    pub layer: usize,
    pub kind: AttentionKind,
}

impl SiteId {
    pub fn encoder(chain: Chain, layer: usize) -> Self {
        Self {
            query: chain,
            key: chain,
            layer,
            kind: AttentionKind::SelfAttention,
        }
    }

    pub fn decoder_self(layer: usize) -> Self {
        Self::encoder(Chain::Epitope, layer)
    }

    pub fn cross(key: Chain, layer: usize) -> Self {
        Self {
            query: Chain::Epitope,
            key,
            layer,
            kind: AttentionKind::Cross,
        }
    }

    /// Weight-name prefix of this block, e.g. `epitope.dec.1.cross_cdr3b`.
    pub fn prefix(&self) -> String {
        let role = match (self.kind, self.query) {
            (AttentionKind::Cross, _) => format!("cross_{}", self.key),
            (AttentionKind::SelfAttention, Chain::Epitope) => "self".to_string(),
            (AttentionKind::SelfAttention, _) => "attn".to_string(),
        };
        attention_prefix(self.query, self.layer, &role)
    }
}

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.prefix())
    }
}

/// Per-head activations and their adjoints with respect to the explained score.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadCapture {
    pub a: Matrix,
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub grad_a: Matrix,
    pub grad_q: Matrix,
    pub grad_k: Matrix,
    pub grad_v: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SiteCapture {
    pub id: SiteId,
    pub heads: Vec<HeadCapture>,
}

impl SiteCapture {
    pub fn is_square(&self) -> bool {
        self.heads.first().is_some_and(|h| h.a.rows() == h.a.cols())
    }
}

/// Final hidden states of a pipeline (encoder output, or decoder output for the epitope).
#[derive(Clone, Debug, PartialEq)]
pub struct ChainFeatures {
    pub hidden: Matrix,
    pub grad: Matrix,
}

/// Everything recorded during one forward + backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptureBundle {
    pub input: TriSequenceInput,
    /// Attention sites in forward order (encoders, then decoder layers).
    pub sites: Vec<SiteCapture>,
    pub features: BTreeMap<Chain, ChainFeatures>,
    /// Mean log-probability of the epitope targets; adjoints are taken of this.
    pub score: f64,
    /// Negative log-likelihood, `-score`.
    pub loss: f64,
    /// Log-probability of each target, `None` where the target is padding.
    pub target_log_probs: Vec<Option<f64>>,
}

impl CaptureBundle {
    pub fn site(&self, id: SiteId) -> Option<&SiteCapture> {
        self.sites.iter().find(|s| s.id == id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeTarget {
    Attention,
    Query,
    Key,
}

/// Adds `delta` to one entry of a captured matrix during the forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub site: SiteId,
    pub head: usize,
    pub target: ProbeTarget,
    pub row: usize,
    pub col: usize,
    pub delta: f64,
}

struct HeadIds {
    a: ValueId,
    q: ValueId,
    k: ValueId,
    v: ValueId,
}

struct Pass<'w> {
    weights: &'w WeightSet,
    tape: Tape,
    params: BTreeMap<String, ValueId>,
    sites: Vec<(SiteId, Vec<HeadIds>)>,
    probe: Option<Probe>,
}

struct Outputs {
    score: ValueId,
    logits: ValueId,
    features: BTreeMap<Chain, ValueId>,
    targets: Vec<Option<usize>>,
}

/// Next-token targets for the epitope decoder; padding targets are dropped.
pub fn epitope_targets(tokens: &[usize]) -> Vec<Option<usize>> {
    (0..tokens.len())
        .map(|i| tokens.get(i + 1).copied().filter(|&t| t != PAD))
        .collect()
}

pub fn validate_input(input: &TriSequenceInput, weights: &WeightSet) -> Result<()> {
    let cfg = &weights.config;
    for chain in Chain::ALL {
        let t = input.tokens(chain);
        if t.len() < 2 {
            return Err(Error::Validation(format!("{chain} has {} tokens; needs framing", t.len())));
        }
        if t.len() > cfg.max_len {
            return Err(Error::Validation(format!(
                "{chain} has {} tokens, longer than max_len {}",
                t.len(),
                cfg.max_len
            )));
        }
        if let Some(bad) = t.iter().find(|&&id| id >= cfg.vocab_size) {
            return Err(Error::Validation(format!("{chain} token id {bad} outside vocabulary")));
        }
    }
    Ok(())
}

impl<'w> Pass<'w> {
    fn new(weights: &'w WeightSet, probe: Option<Probe>) -> Self {
        Self {
            weights,
            tape: Tape::new(),
            params: BTreeMap::new(),
            sites: Vec::new(),
            probe,
        }
    }

    fn param(&mut self, name: &str) -> Result<ValueId> {
        if let Some(&id) = self.params.get(name) {
            return Ok(id);
        }
        let id = self.tape.leaf(self.weights.get(name)?.clone());
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    fn norm(&mut self, x: ValueId, prefix: &str) -> Result<ValueId> {
        let g = self.param(&format!("{prefix}.gamma"))?;
        let b = self.param(&format!("{prefix}.beta"))?;
        self.tape.layer_norm(x, g, b, LAYER_NORM_EPS)
    }

    fn linear(&mut self, x: ValueId, name: &str) -> Result<ValueId> {
        let w = self.param(name)?;
        self.tape.matmul(x, w)
    }

    fn hook(&mut self, site: SiteId, head: usize, target: ProbeTarget, v: ValueId) -> Result<ValueId> {
        match self.probe {
            Some(p) if p.site == site && p.head == head && p.target == target => {
                let (r, c) = self.tape.value(v).shape();
                if p.row >= r || p.col >= c {
                    return Err(Error::Usage(format!("probe ({}, {}) outside {r}x{c}", p.row, p.col)));
                }
                let mut delta = Matrix::zeros(r, c);
                delta.set(p.row, p.col, p.delta);
                let d = self.tape.leaf(delta);
                self.tape.add(v, d)
            }
            _ => Ok(v),
        }
    }

    fn attention(&mut self, site: SiteId, hq: ValueId, hkv: ValueId, mask: AttentionMask) -> Result<ValueId> {
        let prefix = site.prefix();
        let cfg = self.weights.config;
        let dh = cfg.d_head();
        let qf = self.linear(hq, &format!("{prefix}.wq"))?;
        let kf = self.linear(hkv, &format!("{prefix}.wk"))?;
        let vf = self.linear(hkv, &format!("{prefix}.wv"))?;
        let mut heads = Vec::with_capacity(cfg.n_heads);
        let mut outs = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let q = self.tape.slice_cols(qf, h * dh, dh)?;
            let q = self.hook(site, h, ProbeTarget::Query, q)?;
            let k = self.tape.slice_cols(kf, h * dh, dh)?;
            let k = self.hook(site, h, ProbeTarget::Key, k)?;
            let v = self.tape.slice_cols(vf, h * dh, dh)?;
            let logits = self.tape.matmul_nt(q, k)?;
            let logits = self.tape.scale(logits, 1.0 / (dh as f64).sqrt());
            let a = self.tape.softmax_rows(logits, Some(mask.clone()))?;
            let a = self.hook(site, h, ProbeTarget::Attention, a)?;
            outs.push(self.tape.matmul(a, v)?);
            heads.push(HeadIds { a, q, k, v });
        }
        self.sites.push((site, heads));
        let o = self.tape.concat_cols(&outs)?;
        self.linear(o, &format!("{prefix}.wo"))
    }

    fn residual_attention(
        &mut self,
        site: SiteId,
        norm_prefix: &str,
        x: ValueId,
        kv: Option<ValueId>,
        mask: AttentionMask,
    ) -> Result<ValueId> {
        let h = self.norm(x, norm_prefix)?;
        let out = self.attention(site, h, kv.unwrap_or(h), mask)?;
        self.tape.add(x, out)
    }

    fn residual_ffn(&mut self, x: ValueId, prefix: &str) -> Result<ValueId> {
        let h = self.norm(x, &format!("{prefix}_norm"))?;
        let h = self.linear(h, &format!("{prefix}.w1"))?;
        let h = self.tape.relu(h);
        let h = self.linear(h, &format!("{prefix}.w2"))?;
        self.tape.add(x, h)
    }

    fn embed(&mut self, chain: Chain, tokens: &[usize]) -> Result<ValueId> {
        let tok = self.param(&format!("{chain}.embed.token"))?;
        let pos = self.param(&format!("{chain}.embed.pos"))?;
        let t = self.tape.gather(tok, tokens)?;
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let p = self.tape.gather(pos, &positions)?;
        self.tape.add(t, p)
    }

    fn encoder(&mut self, chain: Chain, tokens: &[usize]) -> Result<ValueId> {
        let mut x = self.embed(chain, tokens)?;
        let mask = AttentionMask::keys(tokens.iter().map(|&t| t != PAD).collect());
        for l in 0..self.weights.config.n_enc_layers {
            let site = SiteId::encoder(chain, l);
            x = self.residual_attention(site, &attention_prefix(chain, l, "attn_norm"), x, None, mask.clone())?;
            x = self.residual_ffn(x, &attention_prefix(chain, l, "ffn"))?;
        }
        self.norm(x, &format!("{chain}.enc.final_norm"))
    }

    fn run(&mut self, input: &TriSequenceInput) -> Result<Outputs> {
        validate_input(input, self.weights)?;
        let enc_a = self.encoder(Chain::Cdr3a, &input.cdr3a)?;
        let enc_b = self.encoder(Chain::Cdr3b, &input.cdr3b)?;

        let tokens = &input.epitope;
        let mut x = self.embed(Chain::Epitope, tokens)?;
        let self_mask = AttentionMask::causal(tokens.iter().map(|&t| t != PAD).collect());
        let mask_a = AttentionMask::keys(input.cdr3a.iter().map(|&t| t != PAD).collect());
        let mask_b = AttentionMask::keys(input.cdr3b.iter().map(|&t| t != PAD).collect());
        for l in 0..self.weights.config.n_dec_layers {
            let pre = |role: &str| attention_prefix(Chain::Epitope, l, role);
            x = self.residual_attention(SiteId::decoder_self(l), &pre("self_norm"), x, None, self_mask.clone())?;
            x = self.residual_attention(
                SiteId::cross(Chain::Cdr3a, l),
                &pre("cross_cdr3a_norm"),
                x,
                Some(enc_a),
                mask_a.clone(),
            )?;
            x = self.residual_attention(
                SiteId::cross(Chain::Cdr3b, l),
                &pre("cross_cdr3b_norm"),
                x,
                Some(enc_b),
                mask_b.clone(),
            )?;
            x = self.residual_ffn(x, &pre("ffn"))?;
        }
        let hidden = self.norm(x, "epitope.dec.final_norm")?;
        let logits = self.linear(hidden, "epitope.unembed")?;
        let targets = epitope_targets(tokens);
        let score = self.tape.mean_log_likelihood(logits, &targets)?;
        let features = BTreeMap::from([(Chain::Cdr3a, enc_a), (Chain::Cdr3b, enc_b), (Chain::Epitope, hidden)]);
        Ok(Outputs {
            score,
            logits,
            features,
            targets,
        })
    }
}

/// Runs forward and backward and collects every attention site with its adjoints.
pub fn forward_with_capture(input: &TriSequenceInput, weights: &WeightSet) -> Result<CaptureBundle> {
    let mut pass = Pass::new(weights, None);
    let out = pass.run(input)?;
    let tape = &pass.tape;
    let adj = tape.backward(out.score, 1.0)?;
    let score = tape.value(out.score).get(0, 0);

    let sites = pass
        .sites
        .iter()
        .map(|(id, heads)| SiteCapture {
            id: *id,
            heads: heads
                .iter()
                .map(|h| HeadCapture {
                    a: tape.value(h.a).clone(),
                    q: tape.value(h.q).clone(),
                    k: tape.value(h.k).clone(),
                    v: tape.value(h.v).clone(),
                    grad_a: adj.get(h.a).clone(),
                    grad_q: adj.get(h.q).clone(),
                    grad_k: adj.get(h.k).clone(),
                    grad_v: adj.get(h.v).clone(),
                })
                .collect(),
        })
        .collect();
    let features = out
        .features
        .iter()
        .map(|(&c, &id)| {
            (
                c,
                ChainFeatures {
                    hidden: tape.value(id).clone(),
                    grad: adj.get(id).clone(),
                },
            )
        })
        .collect();
    let logits = tape.value(out.logits);
    let target_log_probs = out
        .targets
        .iter()
        .enumerate()
        .map(|(r, t)| t.map(|t| log_softmax_at(logits.row(r), t)))
        .collect();

    Ok(CaptureBundle {
        input: input.clone(),
        sites,
        features,
        score,
        loss: -score,
        target_log_probs,
    })
}

/// Mean log-probability of the epitope targets; higher means a more confident model.
pub fn sequence_score(input: &TriSequenceInput, weights: &WeightSet) -> Result<f64> {
    let mut pass = Pass::new(weights, None);
    let out = pass.run(input)?;
    Ok(pass.tape.value(out.score).get(0, 0))
}

/// Score of a forward pass with one captured entry nudged by `probe.delta`.
pub fn probed_score(input: &TriSequenceInput, weights: &WeightSet, probe: &Probe) -> Result<f64> {
    let mut pass = Pass::new(weights, Some(*probe));
    let out = pass.run(input)?;
    let hit = pass
        .sites
        .iter()
        .any(|(id, heads)| *id == probe.site && probe.head < heads.len());
    if !hit {
        return Err(Error::Usage(format!("probe site {} head {} not in model", probe.site, probe.head)));
    }
    Ok(pass.tape.value(out.score).get(0, 0))
}

/// Score and its gradient with respect to every weight tensor.
pub fn score_gradients(input: &TriSequenceInput, weights: &WeightSet) -> Result<(f64, BTreeMap<String, Matrix>)> {
    let mut pass = Pass::new(weights, None);
    let out = pass.run(input)?;
    let adj = pass.tape.backward(out.score, 1.0)?;
    let grads = pass
        .params
        .iter()
        .map(|(name, &id)| (name.clone(), adj.get(id).clone()))
        .collect();
    Ok((pass.tape.value(out.score).get(0, 0), grads))
}

/// The raw tape of one forward pass.
pub fn record_tape(input: &TriSequenceInput, weights: &WeightSet) -> Result<Tape> {
    let mut pass = Pass::new(weights, None);
    pass.run(input)?;
    Ok(pass.tape)
}
