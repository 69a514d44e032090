use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const SEP: TokenId = 4;

pub const SPECIAL_TOKENS: [&str; 5] = ["<PAD>", "<BOS>", "<EOS>", "<UNK>", "<SEP>"];
pub const AMINO_ACIDS: &str = "ACDEFGHIKLMNPQRSTVWY";
pub const VOCAB_SIZE: usize = SPECIAL_TOKENS.len() + 20;

/// First id used by an amino acid; `<PAD>` is always id 0.
pub const FIRST_RESIDUE_ID: TokenId = SPECIAL_TOKENS.len();

pub fn residue_id(aa: char) -> Option<TokenId> {
    AMINO_ACIDS.find(aa.to_ascii_uppercase()).map(|i| i + FIRST_RESIDUE_ID)
}

pub fn residue_letter(id: TokenId) -> Option<char> {
    id.checked_sub(FIRST_RESIDUE_ID)
        .and_then(|i| AMINO_ACIDS.as_bytes().get(i))
        .map(|&b| b as char)
}

pub fn is_residue(id: TokenId) -> bool {
    (FIRST_RESIDUE_ID..VOCAB_SIZE).contains(&id)
}

pub fn token_name(id: TokenId) -> String {
    match SPECIAL_TOKENS.get(id) {
        Some(s) => (*s).to_string(),
        None => residue_letter(id).map_or_else(|| format!("<{id}?>"), |c| c.to_string()),
    }
}

/// `<BOS>` + residue ids + `<EOS>`. Letters outside the 20-letter alphabet become `<UNK>`.
pub fn tokenize(seq: &str) -> Result<Vec<TokenId>> {
    if seq.is_empty() {
        return Err(Error::Validation("cannot tokenize an empty sequence".into()));
    }
    let mut ids = Vec::with_capacity(seq.len() + 2);
    ids.push(BOS);
    ids.extend(seq.chars().map(|c| residue_id(c).unwrap_or(UNK)));
    ids.push(EOS);
    Ok(ids)
}

/// The three sequence pipelines of the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Chain {
    Cdr3a,
    Cdr3b,
    Epitope,
}

impl Chain {
    pub const ALL: [Chain; 3] = [Chain::Cdr3a, Chain::Cdr3b, Chain::Epitope];
    pub const TCR: [Chain; 2] = [Chain::Cdr3a, Chain::Cdr3b];

    pub fn as_str(self) -> &'static str {
        match self {
            Chain::Cdr3a => "cdr3a",
            Chain::Cdr3b => "cdr3b",
            Chain::Epitope => "epitope",
        }
    }
}

impl fmt::Display for Chain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Chain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cdr3a" | "alpha" => Ok(Chain::Cdr3a),
            "cdr3b" | "beta" => Ok(Chain::Cdr3b),
            "epitope" | "peptide" => Ok(Chain::Epitope),
            other => Err(Error::Validation(format!("unknown chain {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MhcClass {
    #[serde(rename = "MHCI")]
    I,
    #[serde(rename = "MHCII")]
    II,
}

impl FromStr for MhcClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "MHCI" | "I" | "MHC-I" => Ok(MhcClass::I),
            "MHCII" | "II" | "MHC-II" => Ok(MhcClass::II),
            other => Err(Error::Validation(format!("unknown MHC class {other:?}"))),
        }
    }
}

impl fmt::Display for MhcClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MhcClass::I => "MHCI",
            MhcClass::II => "MHCII",
        })
    }
}

/// Tokenised CDR3α, CDR3β and epitope, each framed by `<BOS>`/`<EOS>`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriSequenceInput {
    pub cdr3a: Vec<TokenId>,
    pub cdr3b: Vec<TokenId>,
    pub epitope: Vec<TokenId>,
    pub mhc_class: MhcClass,
}

impl TriSequenceInput {
    pub fn from_sequences(cdr3a: &str, cdr3b: &str, epitope: &str, mhc_class: MhcClass) -> Result<Self> {
        Ok(Self {
            cdr3a: tokenize(cdr3a)?,
            cdr3b: tokenize(cdr3b)?,
            epitope: tokenize(epitope)?,
            mhc_class,
        })
    }

    pub fn tokens(&self, chain: Chain) -> &[TokenId] {
        match chain {
            Chain::Cdr3a => &self.cdr3a,
            Chain::Cdr3b => &self.cdr3b,
            Chain::Epitope => &self.epitope,
        }
    }

    pub fn tokens_mut(&mut self, chain: Chain) -> &mut Vec<TokenId> {
        match chain {
            Chain::Cdr3a => &mut self.cdr3a,
            Chain::Cdr3b => &mut self.cdr3b,
            Chain::Epitope => &mut self.epitope,
        }
    }

    /// Token positions holding residues: everything between `<BOS>` and the final `<EOS>`.
    ///
    /// Residues replaced by `<PAD>` keep their slot; trailing padding after `<EOS>` is excluded.
    pub fn residue_span(&self, chain: Chain) -> std::ops::Range<usize> {
        let t = self.tokens(chain);
        let end = t.iter().rposition(|&id| id == EOS).unwrap_or(t.len());
        let start = usize::from(t.first() == Some(&BOS));
        start..end.max(start)
    }

    pub fn residue_count(&self, chain: Chain) -> usize {
        self.residue_span(chain).len()
    }
}
