//! Fixed-column PDB reader: ATOM records, modified-residue HETATMs, first model only.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub name: String,
    pub pos: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residue {
    pub name: String,
    pub seq: i32,
    pub icode: char,
    /// Read from a HETATM record (a modified amino acid).
    pub hetero: bool,
    pub atoms: Vec<Atom>,
}

impl Residue {
    pub fn one_letter(&self) -> char {
        one_letter(&self.name).unwrap_or('X')
    }

    pub fn label(&self, chain: char) -> String {
        let icode = if self.icode == ' ' { String::new() } else { self.icode.to_string() };
        format!("{}{}{icode}:{chain}", self.name, self.seq)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdbChain {
    pub id: char,
    pub residues: Vec<Residue>,
}

impl PdbChain {
    pub fn sequence(&self) -> String {
        self.residues.iter().map(Residue::one_letter).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Structure {
    pub pdb_id: String,
    /// Chains in order of first appearance.
    pub chains: Vec<PdbChain>,
}

impl Structure {
    pub fn chain(&self, id: char) -> Option<&PdbChain> {
        self.chains.iter().find(|c| c.id == id)
    }

    pub fn atom_count(&self) -> usize {
        self.chains.iter().flat_map(|c| &c.residues).map(|r| r.atoms.len()).sum()
    }
}

/// Standard residues plus common modified residues mapped to their parent amino acid.
pub fn one_letter(resname: &str) -> Option<char> {
    Some(match resname.trim() {
        "ALA" => 'A',
        "ARG" => 'R',
        "ASN" => 'N',
        "ASP" => 'D',
        "CYS" => 'C',
        "GLN" => 'Q',
        "GLU" => 'E',
        "GLY" => 'G',
        "HIS" => 'H',
        "ILE" => 'I',
        "LEU" => 'L',
        "LYS" => 'K',
        "MET" => 'M',
        "PHE" => 'F',
        "PRO" => 'P',
        "SER" => 'S',
        "THR" => 'T',
        "TRP" => 'W',
        "TYR" => 'Y',
        "VAL" => 'V',
        // Modified residues.
        "MSE" => 'M',
        "SEP" => 'S',
        "TPO" => 'T',
        "PTR" => 'Y',
        "CIR" => 'R',
        "HYP" => 'P',
        "MLY" => 'K',
        "M3L" => 'K',
        "CSO" => 'C',
        "CME" => 'C',
        "CSD" => 'C',
        "KCX" => 'K',
        "NLE" => 'L',
        "ABA" => 'A',
        "AIB" => 'A',
        "DAL" => 'A',
        _ => return None,
    })
}

fn field(line: &str, from: usize, to: usize) -> &str {
    line.get(from..to.min(line.len())).unwrap_or("")
}

fn coord(line: &str, lineno: usize, from: usize, axis: &str) -> Result<f64> {
    let raw = field(line, from, from + 8).trim();
    let v: f64 = raw.parse().map_err(|_| Error::PdbParse {
        line: lineno,
        message: format!("bad {axis} coordinate {raw:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::PdbParse {
            line: lineno,
            message: format!("non-finite {axis} coordinate"),
        });
    }
    Ok(v)
}

type ResidueKey = (i32, char);

pub fn parse_pdb(pdb_id: &str, text: &str) -> Result<Structure> {
    let mut order: Vec<char> = Vec::new();
    let mut chains: BTreeMap<char, BTreeMap<ResidueKey, Residue>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.starts_with("ENDMDL") {
            break;
        }
        let hetero = line.starts_with("HETATM");
        if !(line.starts_with("ATOM  ") || line.starts_with("ATOM\t") || hetero) {
            continue;
        }
        if !line.is_ascii() {
            return Err(Error::PdbParse {
                line: lineno,
                message: "non-ASCII coordinate record".into(),
            });
        }
        if line.len() < 54 {
            return Err(Error::PdbParse {
                line: lineno,
                message: format!("coordinate record has {} columns, need 54", line.len()),
            });
        }
        let resname = field(line, 17, 20).trim().to_string();
        if hetero && one_letter(&resname).is_none() {
            continue;
        }
        let altloc = field(line, 16, 17).chars().next().unwrap_or(' ');
        if altloc != ' ' && altloc != 'A' {
            continue;
        }
        let raw_seq = field(line, 22, 26).trim();
        let seq: i32 = raw_seq.parse().map_err(|_| Error::PdbParse {
            line: lineno,
            message: format!("bad residue number {raw_seq:?}"),
        })?;
        let pos = [
            coord(line, lineno, 30, "x")?,
            coord(line, lineno, 38, "y")?,
            coord(line, lineno, 46, "z")?,
        ];
        let chain = field(line, 21, 22).chars().next().unwrap_or(' ');
        let icode = field(line, 26, 27).chars().next().unwrap_or(' ');
        if !chains.contains_key(&chain) {
            order.push(chain);
        }
        let residue = chains
            .entry(chain)
            .or_default()
            .entry((seq, icode))
            .or_insert_with(|| Residue {
                name: resname.clone(),
                seq,
                icode,
                hetero,
                atoms: Vec::new(),
            });
        residue.atoms.push(Atom {
            name: field(line, 12, 16).trim().to_string(),
            pos,
        });
    }
    let chains = order
        .into_iter()
        .map(|id| PdbChain {
            id,
            residues: chains.remove(&id).unwrap_or_default().into_values().collect(),
        })
        .collect();
    Ok(Structure {
        pdb_id: pdb_id.to_string(),
        chains,
    })
}
