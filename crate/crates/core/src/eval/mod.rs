//! Benchmark metrics, perturbation tests and the planted-attention model.

mod metrics;
mod perturb;
mod planted;
mod report;

pub use metrics::{brhr, distance_labels, roc_auc, smooth_scores, top_count, top_indices, RocResult};
pub use perturb::{aopc, aopc_from_scores, default_k, lodds, perturb_topk, perturbation_curve, Perturbation, PerturbationResult};
pub use planted::{
    plant_model, planted_config, planted_instance, PlantedInstance, PlantedMap, PlantedPair, PLANTED_FAR,
    PLANTED_NEAR, PLANT_BOOST, PLANT_LOGIT, PLANT_NOISE,
};

/// Contact thresholds (Å) swept by the benchmark.
pub const DEFAULT_THRESHOLDS: [f64; 4] = [3.4, 4.0, 5.0, 6.0];

pub use report::{
    auc_name, build_report, evaluate_benchmark, evaluate_sample, hit_name, metric_slug, AucStat, ChainSummary,
    EvalConfig, EvalReport, MethodRun, MetricTable, SampleEval, Skip, Stat, Summary, HIT_FRACTIONS,
};
