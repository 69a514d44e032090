use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::DEFAULT_THRESHOLDS;
use crate::model::{Chain, MhcClass, TriSequenceInput};

use super::pdb::{parse_pdb, Structure};
use super::region::{locate_region, min_distances, RegionLocation};

/// Residues an epitope chain may carry beyond the peptide before it is treated
/// as fused to (overlapping) an MHC chain.
pub const EPITOPE_CHAIN_SLACK: usize = 10;

/// One manifest row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TcrSample {
    pub pdb: String,
    pub mhc_class: MhcClass,
    pub peptide: String,
    pub cdr3a: String,
    pub cdr3b: String,
}

impl TcrSample {
    pub fn sequence(&self, chain: Chain) -> &str {
        match chain {
            Chain::Cdr3a => &self.cdr3a,
            Chain::Cdr3b => &self.cdr3b,
            Chain::Epitope => &self.peptide,
        }
    }

    pub fn to_input(&self) -> Result<TriSequenceInput> {
        TriSequenceInput::from_sequences(&self.cdr3a, &self.cdr3b, &self.peptide, self.mhc_class)
    }
}

pub fn parse_manifest(reader: impl Read) -> Result<Vec<TcrSample>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let expected = ["pdb", "mhc_class", "peptide", "cdr3a", "cdr3b"];
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Validation(format!(
            "manifest header must be {}, found {}",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<TcrSample>().enumerate() {
        let row = row.map_err(|e| Error::Validation(format!("manifest row {}: {e}", i + 2)))?;
        for chain in Chain::ALL {
            let seq = row.sequence(chain);
            if seq.is_empty() || !seq.chars().all(|c| crate::model::vocab::residue_id(c).is_some()) {
                return Err(Error::Validation(format!(
                    "manifest row {} ({}): {chain} sequence {seq:?} is not a residue string",
                    i + 2,
                    row.pdb
                )));
            }
        }
        out.push(row);
    }
    Ok(out)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<TcrSample>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(file)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSet {
    pub cdr3a: RegionLocation,
    pub cdr3b: RegionLocation,
    pub epitope: RegionLocation,
}

/// Per-residue minimum atomic distance (Å) to the partner region.
///
/// CDR3 residues are measured against the epitope; epitope residues against the
/// union of both CDR3 loops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceAnnotation {
    #[serde(serialize_with = "crate::json::ser_fixed6_vec")]
    pub cdr3a: Vec<f64>,
    #[serde(serialize_with = "crate::json::ser_fixed6_vec")]
    pub cdr3b: Vec<f64>,
    #[serde(serialize_with = "crate::json::ser_fixed6_vec")]
    pub epitope: Vec<f64>,
}

impl DistanceAnnotation {
    pub fn get(&self, chain: Chain) -> &[f64] {
        match chain {
            Chain::Cdr3a => &self.cdr3a,
            Chain::Cdr3b => &self.cdr3b,
            Chain::Epitope => &self.epitope,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    #[serde(flatten)]
    pub sample: TcrSample,
    pub regions: RegionSet,
    pub distances: DistanceAnnotation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub pdb: String,
    pub reason: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MhcCounts {
    #[serde(rename = "MHCI")]
    pub class_i: usize,
    #[serde(rename = "MHCII")]
    pub class_ii: usize,
}

/// Mean number of residues per record within `threshold` Å of the partner region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BindingRegionMean {
    #[serde(serialize_with = "crate::json::ser_fixed6")]
    pub threshold: f64,
    #[serde(serialize_with = "crate::json::ser_fixed6")]
    pub cdr3a: f64,
    #[serde(serialize_with = "crate::json::ser_fixed6")]
    pub cdr3b: f64,
    #[serde(serialize_with = "crate::json::ser_fixed6")]
    pub epitope: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub manifest_rows: usize,
    pub records: usize,
    /// Record PDB ids in manifest order.
    pub record_ids: Vec<String>,
    pub mhc_counts: MhcCounts,
    pub exclusions: Vec<Exclusion>,
    pub binding_region_means: Vec<BindingRegionMean>,
}

/// Looks for `ID.pdb`, `id.pdb`, `pdbid.ent` or `ID.ent` in `dir`.
pub fn find_structure_file(dir: &Path, pdb: &str) -> Option<PathBuf> {
    let lower = pdb.to_ascii_lowercase();
    let upper = pdb.to_ascii_uppercase();
    [
        format!("{upper}.pdb"),
        format!("{lower}.pdb"),
        format!("pdb{lower}.ent"),
        format!("{upper}.ent"),
    ]
    .into_iter()
    .map(|n| dir.join(n))
    .find(|p| p.is_file())
}

/// Locates the three regions and computes their distance vectors.
pub fn annotate(sample: &TcrSample, structure: &Structure) -> Result<BenchmarkRecord> {
    let regions = RegionSet {
        cdr3a: locate_region(structure, &sample.cdr3a)?,
        cdr3b: locate_region(structure, &sample.cdr3b)?,
        epitope: locate_region(structure, &sample.peptide)?,
    };
    let e_chain = regions.epitope.chain;
    if e_chain == regions.cdr3a.chain || e_chain == regions.cdr3b.chain {
        return Err(Error::Data(format!("epitope chain {e_chain} is also a TCR chain")));
    }
    let e_len = structure.chain(e_chain).map_or(0, |c| c.residues.len());
    if e_len > sample.peptide.len() + EPITOPE_CHAIN_SLACK {
        return Err(Error::Data(format!(
            "epitope chain {e_chain} has {e_len} residues for a {}-residue peptide; it overlaps an MHC chain",
            sample.peptide.len()
        )));
    }
    let a = regions.cdr3a.residues(structure)?;
    let b = regions.cdr3b.residues(structure)?;
    let e = regions.epitope.residues(structure)?;
    let tcr: Vec<_> = a.iter().chain(b).cloned().collect();
    Ok(BenchmarkRecord {
        sample: sample.clone(),
        regions,
        distances: DistanceAnnotation {
            cdr3a: min_distances(a, e)?,
            cdr3b: min_distances(b, e)?,
            epitope: min_distances(e, &tcr)?,
        },
    })
}

/// Processes one manifest row; the error string is the exclusion reason.
pub fn process_sample(sample: &TcrSample, structures: &Path) -> std::result::Result<BenchmarkRecord, String> {
    let path = find_structure_file(structures, &sample.pdb)
        .ok_or_else(|| format!("no structure file for {} in {}", sample.pdb, structures.display()))?;
    let text = fs::read_to_string(&path).map_err(|e| format!("unreadable structure {}: {e}", path.display()))?;
    let structure = parse_pdb(&sample.pdb, &text).map_err(|e| e.to_string())?;
    annotate(sample, &structure).map_err(|e| e.to_string())
}

/// Folds per-sample outcomes, in manifest order, into records and a report.
pub fn assemble(
    samples: &[TcrSample],
    outcomes: Vec<std::result::Result<BenchmarkRecord, String>>,
) -> (Vec<BenchmarkRecord>, BenchReport) {
    let mut records = Vec::new();
    let mut report = BenchReport {
        manifest_rows: samples.len(),
        ..BenchReport::default()
    };
    for (sample, outcome) in samples.iter().zip(outcomes) {
        match outcome {
            Ok(r) => {
                match r.sample.mhc_class {
                    MhcClass::I => report.mhc_counts.class_i += 1,
                    MhcClass::II => report.mhc_counts.class_ii += 1,
                }
                records.push(r);
            }
            Err(reason) => report.exclusions.push(Exclusion {
                pdb: sample.pdb.clone(),
                reason,
            }),
        }
    }
    report.records = records.len();
    report.record_ids = records.iter().map(|r| r.sample.pdb.clone()).collect();
    if !records.is_empty() {
        let n = records.len() as f64;
        report.binding_region_means = DEFAULT_THRESHOLDS
            .iter()
            .map(|&t| {
                let mean = |c: Chain| {
                    records
                        .iter()
                        .map(|r| r.distances.get(c).iter().filter(|&&d| d <= t).count() as f64)
                        .sum::<f64>()
                        / n
                };
                BindingRegionMean {
                    threshold: t,
                    cdr3a: mean(Chain::Cdr3a),
                    cdr3b: mean(Chain::Cdr3b),
                    epitope: mean(Chain::Epitope),
                }
            })
            .collect();
    }
    (records, report)
}

pub fn build_benchmark(samples: &[TcrSample], structures: &Path) -> (Vec<BenchmarkRecord>, BenchReport) {
    let outcomes = samples.iter().map(|s| process_sample(s, structures)).collect();
    assemble(samples, outcomes)
}
