//! Structural ground truth: parse complexes, find the CDR3 loops and the
//! peptide, and annotate every residue with its closest-atom distance.

mod build;
mod pdb;
mod region;

pub use build::{
    annotate, assemble, build_benchmark, find_structure_file, parse_manifest, process_sample, read_manifest,
    BenchReport, BenchmarkRecord, BindingRegionMean, DistanceAnnotation, Exclusion, MhcCounts, RegionSet, TcrSample,
    EPITOPE_CHAIN_SLACK,
};
pub use pdb::{one_letter, parse_pdb, Atom, PdbChain, Residue, Structure};
pub use region::{find_all, locate_in_sequences, locate_region, min_distances, RegionLocation};
