use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::pdb::{Residue, Structure};

/// Inclusive residue-index range of a located subsequence within one chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionLocation {
    pub chain: char,
    pub start: usize,
    pub end: usize,
}

impl RegionLocation {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn residues<'s>(&self, structure: &'s Structure) -> Result<&'s [Residue]> {
        let chain = structure
            .chain(self.chain)
            .ok_or_else(|| Error::Data(format!("chain {:?} not in {}", self.chain, structure.pdb_id)))?;
        chain
            .residues
            .get(self.start..=self.end)
            .ok_or_else(|| Error::Data(format!("region {self:?} outside chain {:?}", self.chain)))
    }
}

/// Start offsets of every (possibly overlapping) occurrence of `query` in `seq`.
pub fn find_all(seq: &str, query: &str) -> Vec<usize> {
    let (s, q) = (seq.as_bytes(), query.as_bytes());
    if q.is_empty() || q.len() > s.len() {
        return Vec::new();
    }
    s.windows(q.len())
        .enumerate()
        .filter(|(_, w)| *w == q)
        .map(|(i, _)| i)
        .collect()
}

/// Finds the unique occurrence of `query` among `(chain id, one-letter sequence)` pairs.
pub fn locate_in_sequences<'a>(
    chains: impl IntoIterator<Item = (char, &'a str)>,
    query: &str,
) -> Result<RegionLocation> {
    if query.is_empty() {
        return Err(Error::Validation("empty region query".into()));
    }
    let hits: Vec<RegionLocation> = chains
        .into_iter()
        .flat_map(|(id, seq)| {
            find_all(seq, query).into_iter().map(move |start| RegionLocation {
                chain: id,
                start,
                end: start + query.len() - 1,
            })
        })
        .collect();
    match hits.as_slice() {
        [] => Err(Error::RegionNotFound { query: query.to_string() }),
        [one] => Ok(*one),
        many => Err(Error::AmbiguousRegion {
            query: query.to_string(),
            count: many.len(),
        }),
    }
}

pub fn locate_region(structure: &Structure, query: &str) -> Result<RegionLocation> {
    let seqs: Vec<(char, String)> = structure.chains.iter().map(|c| (c.id, c.sequence())).collect();
    locate_in_sequences(seqs.iter().map(|(id, s)| (*id, s.as_str())), query)
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// For each residue of `a`, the smallest distance from any of its atoms to any atom of `b`.
pub fn min_distances(a: &[Residue], b: &[Residue]) -> Result<Vec<f64>> {
    let empty = |r: &Residue| Error::Data(format!("residue {}{} has no atoms", r.name, r.seq));
    if let Some(r) = a.iter().chain(b).find(|r| r.atoms.is_empty()) {
        return Err(empty(r));
    }
    if b.is_empty() {
        return Err(Error::Data("partner region has no residues".into()));
    }
    Ok(a.iter()
        .map(|ra| {
            ra.atoms
                .iter()
                .flat_map(|x| b.iter().flat_map(|rb| &rb.atoms).map(move |y| dist(x.pos, y.pos)))
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}
