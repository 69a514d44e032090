//! Cross-attention attribution (QCAI) for encoder-decoder transformers over
//! TCR and epitope sequences, the structural TCR-XAI ground truth, and the
//! metrics used to score explanations against it.
//!
//! Module map:
//! - [`tensor`]: matrices, the recording tape and exact adjoints.
//! - [`model`]: the three-pipeline transformer and its capture bundle.
//! - [`attribution`]: QCAI plus GradCAM, rollout and raw-attention baselines.
//! - [`bench`]: PDB parsing, CDR3 location and residue distance annotation.
//! - [`eval`]: smoothing, ROC/AUC, hit rate, perturbation metrics, planted models.

pub mod attribution;
pub mod bench;
pub mod error;
pub mod eval;
pub mod json;
pub mod model;
pub mod tensor;

pub use error::{Error, Result};
