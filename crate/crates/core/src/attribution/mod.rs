//! Token importance from a [`CaptureBundle`]: QCAI and three attention/gradient baselines.

mod baselines;
mod qcai;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CaptureBundle, Chain, TriSequenceInput};

pub use baselines::{gradcam_explain, gradcam_map, raw_attention_explain, raw_attention_scores, rollout, rollout_explain};
pub use qcai::{
    aggregate_layers, attention_importance_map, gradient_weighted_attention, key_combined, key_from_attention,
    key_intrinsic, qcai_explain, qcai_explain_with, query_combined, query_from_attention, query_from_attention_with,
    query_intrinsic, site_scores, Aggregation, AttentionSiteScore, ProjectionMode, QueryProjection, SiteContribution,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Qcai,
    Gradcam,
    Rollout,
    #[serde(rename = "rawattn")]
    RawAttn,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Qcai, Method::Gradcam, Method::Rollout, Method::RawAttn];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Qcai => "qcai",
            Method::Gradcam => "gradcam",
            Method::Rollout => "rollout",
            Method::RawAttn => "rawattn",
        }
    }

    pub fn explain(self, bundle: &CaptureBundle) -> Result<ImportanceScores> {
        match self {
            Method::Qcai => qcai_explain(bundle),
            Method::Gradcam => gradcam_explain(bundle),
            Method::Rollout => rollout_explain(bundle),
            Method::RawAttn => raw_attention_explain(bundle),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| {
                let valid: Vec<_> = Method::ALL.iter().map(|m| m.as_str()).collect();
                Error::Usage(format!("unknown method {s:?}; valid methods: {}", valid.join(", ")))
            })
    }
}

/// Per-residue scores for each chain, special-token positions removed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceScores {
    pub method: Method,
    pub chains: BTreeMap<Chain, Vec<f64>>,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

impl ImportanceScores {
    /// Cuts token-level vectors down to the residue span of each chain.
    pub fn from_token_scores(
        method: Method,
        input: &TriSequenceInput,
        tokens: BTreeMap<Chain, Vec<f64>>,
        diagnostics: Vec<String>,
    ) -> Result<Self> {
        let mut chains = BTreeMap::new();
        for chain in Chain::ALL {
            let v = tokens
                .get(&chain)
                .ok_or_else(|| Error::Usage(format!("{method}: no scores reach chain {chain}")))?;
            let n = input.tokens(chain).len();
            if v.len() != n {
                return Err(Error::Shape(format!("{method}: {chain} has {} scores for {n} tokens", v.len())));
            }
            chains.insert(chain, v[input.residue_span(chain)].to_vec());
        }
        Ok(Self {
            method,
            chains,
            diagnostics,
        })
    }

    pub fn get(&self, chain: Chain) -> &[f64] {
        self.chains.get(&chain).map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainScores {
    #[serde(serialize_with = "crate::json::ser_sig17_vec")]
    pub cdr3a: Vec<f64>,
    #[serde(serialize_with = "crate::json::ser_sig17_vec")]
    pub cdr3b: Vec<f64>,
    #[serde(serialize_with = "crate::json::ser_sig17_vec")]
    pub epitope: Vec<f64>,
}

/// On-disk form of one explanation: `{pdb_id, method, chains, diagnostics}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceDocument {
    pub pdb_id: String,
    pub method: Method,
    pub chains: ChainScores,
    pub diagnostics: Vec<String>,
}

impl ImportanceDocument {
    pub fn new(pdb_id: &str, scores: &ImportanceScores) -> Self {
        Self {
            pdb_id: pdb_id.to_string(),
            method: scores.method,
            chains: ChainScores {
                cdr3a: scores.get(Chain::Cdr3a).to_vec(),
                cdr3b: scores.get(Chain::Cdr3b).to_vec(),
                epitope: scores.get(Chain::Epitope).to_vec(),
            },
            diagnostics: scores.diagnostics.clone(),
        }
    }

    pub fn scores(&self) -> ImportanceScores {
        ImportanceScores {
            method: self.method,
            chains: BTreeMap::from([
                (Chain::Cdr3a, self.chains.cdr3a.clone()),
                (Chain::Cdr3b, self.chains.cdr3b.clone()),
                (Chain::Epitope, self.chains.epitope.clone()),
            ]),
            diagnostics: self.diagnostics.clone(),
        }
    }
}

/// Element-wise maximum; the conservative combination used throughout QCAI.
pub(crate) fn elementwise_max(a: &[f64], b: &[f64], what: &str) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{what}: lengths {} and {} differ", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x.max(*y)).collect())
}
