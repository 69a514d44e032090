//! Benchmark evaluation: per-sample metrics, pooled AUC, CSV tables and summary JSON.
//!
//! Metric names double as table keys:
//!
//! | name       | meaning                                         |
//! |------------|-------------------------------------------------|
//! | `AUC@3.4`  | ROC AUC against labels `d ≤ 3.4 Å`               |
//! | `HR.25`    | BRHR at `t = 0.25`                              |
//! | `LOdds`    | log-odds after padding the top `k` residues     |
//! | `AOPC`     | area over the perturbation curve up to `k`      |

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attribution::{ImportanceScores, Method};
use crate::bench::BenchmarkRecord;
use crate::error::{Error, Result};
use crate::json::{ser_sig17_opt, sig17, to_pretty};
use crate::model::{Chain, WeightSet};

use super::metrics::{brhr, distance_labels, roc_auc, smooth_scores};
use super::perturb::{default_k, perturbation_curve};
use super::DEFAULT_THRESHOLDS;

pub const HIT_FRACTIONS: [f64; 4] = [0.25, 0.30, 0.40, 0.50];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    pub hit_fractions: Vec<f64>,
    /// Perturbation depth per chain.
    pub k: BTreeMap<Chain, usize>,
    /// Apply the three-residue smoothing kernel before AUC and BRHR.
    pub smooth: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            hit_fractions: HIT_FRACTIONS.to_vec(),
            k: Chain::ALL.iter().map(|&c| (c, default_k(c))).collect(),
            smooth: true,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() || self.thresholds.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::Validation(format!("thresholds must be positive: {:?}", self.thresholds)));
        }
        if self.hit_fractions.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
            return Err(Error::Validation(format!("hit fractions must lie in (0, 1]: {:?}", self.hit_fractions)));
        }
        Ok(())
    }

    pub fn metric_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.thresholds.iter().map(|&t| auc_name(t)).collect();
        names.extend(self.hit_fractions.iter().map(|&t| hit_name(t)));
        names.push("LOdds".into());
        names.push("AOPC".into());
        names
    }
}

pub fn auc_name(threshold: f64) -> String {
    format!("AUC@{threshold}")
}

/// `0.25 → HR.25`, following the usual table header.
pub fn hit_name(t: f64) -> String {
    format!("HR.{:02}", (t * 100.0).round() as u32)
}

/// File-system friendly form: `AUC@3.4 → auc_3.4`, `HR.25 → hr_25`.
pub fn metric_slug(name: &str) -> String {
    if let Some(t) = name.strip_prefix("AUC@") {
        format!("auc_{t}")
    } else if let Some(t) = name.strip_prefix("HR.") {
        format!("hr_{t}")
    } else {
        name.to_ascii_lowercase()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skip {
    pub pdb: String,
    pub method: Method,
    pub chain: Chain,
    pub metric: String,
    pub reason: String,
}

/// Metrics of one (sample, method) pair. Missing entries are listed in `skipped`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleEval {
    pub values: BTreeMap<(Chain, String), f64>,
    pub skipped: Vec<(Chain, String, String)>,
}

fn check_lengths(record: &BenchmarkRecord, scores: &ImportanceScores) -> Result<()> {
    for chain in Chain::ALL {
        let (s, d) = (scores.get(chain).len(), record.distances.get(chain).len());
        if s != d {
            return Err(Error::Shape(format!(
                "{} {}: {s} scores for {d} annotated residues",
                record.sample.pdb, chain
            )));
        }
    }
    Ok(())
}

fn scored(v: &[f64], smooth: bool) -> Vec<f64> {
    if smooth {
        smooth_scores(v)
    } else {
        v.to_vec()
    }
}

pub fn evaluate_sample(
    record: &BenchmarkRecord,
    scores: &ImportanceScores,
    weights: &WeightSet,
    cfg: &EvalConfig,
) -> Result<SampleEval> {
    check_lengths(record, scores)?;
    let input = record.sample.to_input()?;
    let mut out = SampleEval::default();
    for chain in Chain::ALL {
        let d = record.distances.get(chain);
        let s = scored(scores.get(chain), cfg.smooth);
        for &t in &cfg.thresholds {
            match roc_auc(&s, &distance_labels(d, t)) {
                Ok(r) => {
                    out.values.insert((chain, auc_name(t)), r.auc);
                }
                Err(Error::DegenerateLabels) => out.skipped.push((chain, auc_name(t), "degenerate labels".into())),
                Err(e) => return Err(e),
            }
        }
        for &t in &cfg.hit_fractions {
            out.values.insert((chain, hit_name(t)), brhr(&s, d, t)?);
        }
        let k = cfg.k.get(&chain).copied().unwrap_or_else(|| default_k(chain));
        let p = perturbation_curve(weights, &input, scores, chain, k)?;
        out.values.insert((chain, "LOdds".into()), p.lodds);
        out.values.insert((chain, "AOPC".into()), p.aopc);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    #[serde(serialize_with = "ser_sig17_opt")]
    pub mean: Option<f64>,
    /// Sample standard deviation (`n − 1`); 0 for a single value.
    #[serde(serialize_with = "ser_sig17_opt")]
    pub std: Option<f64>,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: None, std: None, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean: Some(mean),
            std: Some(var.sqrt()),
            n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucStat {
    /// AUC over all residues of the chain pooled across samples; the headline value.
    #[serde(serialize_with = "ser_sig17_opt")]
    pub pooled: Option<f64>,
    pub per_sample: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    /// Keyed by threshold, e.g. `"3.4"`.
    pub auc: BTreeMap<String, AucStat>,
    /// Keyed by `HR.25` style names.
    pub brhr: BTreeMap<String, Stat>,
    #[serde(rename = "LOdds")]
    pub lodds: Stat,
    #[serde(rename = "AOPC")]
    pub aopc: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: EvalConfig,
    pub samples: usize,
    pub methods: BTreeMap<Method, BTreeMap<Chain, ChainSummary>>,
    pub skipped: Vec<Skip>,
}

/// One `pdb,value` table.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricTable {
    pub method: Method,
    pub chain: Chain,
    pub metric: String,
    pub rows: Vec<(String, f64)>,
}

impl MetricTable {
    pub fn file_name(&self) -> String {
        format!("{}_{}_{}.csv", self.method, self.chain, metric_slug(&self.metric))
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["pdb", "value"])?;
        for (pdb, v) in &self.rows {
            w.write_record([pdb.as_str(), &sig17(*v)])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub tables: Vec<MetricTable>,
    pub summary: Summary,
}

/// All scores and per-sample results of one method, aligned with the records.
#[derive(Clone, Debug)]
pub struct MethodRun {
    pub method: Method,
    pub scores: Vec<ImportanceScores>,
    pub evals: Vec<SampleEval>,
}

fn pooled_auc(records: &[BenchmarkRecord], scores: &[ImportanceScores], chain: Chain, t: f64, smooth: bool) -> Option<f64> {
    let mut s = Vec::new();
    let mut labels = Vec::new();
    for (r, sc) in records.iter().zip(scores) {
        s.extend(scored(sc.get(chain), smooth));
        labels.extend(distance_labels(r.distances.get(chain), t));
    }
    roc_auc(&s, &labels).ok().map(|r| r.auc)
}

/// Assembles tables and the summary. Rows follow record order.
pub fn build_report(records: &[BenchmarkRecord], runs: &[MethodRun], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let mut tables = Vec::new();
    let mut methods = BTreeMap::new();
    let mut skipped = Vec::new();
    for run in runs {
        if run.scores.len() != records.len() || run.evals.len() != records.len() {
            return Err(Error::Shape(format!(
                "{}: {} score sets and {} results for {} records",
                run.method,
                run.scores.len(),
                run.evals.len(),
                records.len()
            )));
        }
        for (r, e) in records.iter().zip(&run.evals) {
            for (chain, metric, reason) in &e.skipped {
                skipped.push(Skip {
                    pdb: r.sample.pdb.clone(),
                    method: run.method,
                    chain: *chain,
                    metric: metric.clone(),
                    reason: reason.clone(),
                });
            }
        }
        let mut chains = BTreeMap::new();
        for chain in Chain::ALL {
            let mut column = |metric: &str| -> Vec<f64> {
                let rows: Vec<(String, f64)> = records
                    .iter()
                    .zip(&run.evals)
                    .filter_map(|(r, e)| {
                        e.values
                            .get(&(chain, metric.to_string()))
                            .map(|&v| (r.sample.pdb.clone(), v))
                    })
                    .collect();
                let values = rows.iter().map(|(_, v)| *v).collect();
                tables.push(MetricTable {
                    method: run.method,
                    chain,
                    metric: metric.to_string(),
                    rows,
                });
                values
            };
            let mut auc = BTreeMap::new();
            for &t in &cfg.thresholds {
                let values = column(&auc_name(t));
                auc.insert(
                    format!("{t}"),
                    AucStat {
                        pooled: pooled_auc(records, &run.scores, chain, t, cfg.smooth),
                        per_sample: Stat::of(&values),
                    },
                );
            }
            let mut hits = BTreeMap::new();
            for &t in &cfg.hit_fractions {
                hits.insert(hit_name(t), Stat::of(&column(&hit_name(t))));
            }
            let lodds = Stat::of(&column("LOdds"));
            let aopc = Stat::of(&column("AOPC"));
            chains.insert(
                chain,
                ChainSummary {
                    auc,
                    brhr: hits,
                    lodds,
                    aopc,
                },
            );
        }
        methods.insert(run.method, chains);
    }
    Ok(EvalReport {
        tables,
        summary: Summary {
            config: cfg.clone(),
            samples: records.len(),
            methods,
            skipped,
        },
    })
}

/// Sequential convenience wrapper over [`evaluate_sample`] and [`build_report`].
pub fn evaluate_benchmark(
    records: &[BenchmarkRecord],
    scores: &[(Method, Vec<ImportanceScores>)],
    weights: &WeightSet,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    let runs = scores
        .iter()
        .map(|(method, s)| {
            let evals = records
                .iter()
                .zip(s)
                .map(|(r, sc)| evaluate_sample(r, sc, weights, cfg))
                .collect::<Result<Vec<_>>>()?;
            Ok(MethodRun {
                method: *method,
                scores: s.clone(),
                evals,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    build_report(records, &runs, cfg)
}

impl EvalReport {
    /// Writes every table as CSV plus `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for t in &self.tables {
            let path = dir.join(t.file_name());
            fs::write(&path, t.to_csv()?).map_err(|e| Error::io(&path, e))?;
        }
        let path = dir.join("summary.json");
        fs::write(&path, to_pretty(&self.summary)?).map_err(|e| Error::io(&path, e))
    }
}
