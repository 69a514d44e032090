//! The three-pipeline encoder-decoder over CDR3α, CDR3β and epitope sequences.

mod config;
mod forward;
mod gradcheck;
mod io;
pub mod vocab;
mod weights;

pub use config::{ModelConfig, LAYER_NORM_EPS};
pub use forward::{
    epitope_targets, forward_with_capture, probed_score, record_tape, score_gradients, sequence_score,
    validate_input, AttentionKind, CaptureBundle, ChainFeatures, HeadCapture, Probe, ProbeTarget, SiteCapture,
    SiteId,
};
pub use gradcheck::{check_capture_gradients, relative_error, GradCheckEntry, GradCheckReport};
pub use io::{decode_weights, encode_weights, load_weights, save_weights};
pub use vocab::{tokenize, Chain, MhcClass, TokenId, TriSequenceInput};
pub use weights::{attention_prefix, layout, Init, TensorSpec, WeightSet};
