mod common;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use common::{fixtures, p, pipeline, snapshot, xattr};
use xattr_core::attribution::{ImportanceDocument, ImportanceScores, Method};
use xattr_core::bench::{BenchReport, BenchmarkRecord, DistanceAnnotation, RegionLocation, RegionSet, TcrSample};
use xattr_core::json::to_pretty;
use xattr_core::model::{Chain, MhcClass};

fn keys(v: &Value) -> Vec<&str> {
    v.as_object().unwrap().keys().map(String::as_str).collect()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn count_score_files(dir: &Path) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name() != "run.json")
        .count()
}

#[test]
fn fixture_pipeline_runs_and_is_repeatable() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(pipeline(a.path(), &[]), vec![0, 0, 0]);
    assert_eq!(fs::read_dir(a.path().join("bench/records")).unwrap().count(), 5);
    assert_eq!(count_score_files(&a.path().join("scores")), 20);
    assert_eq!(pipeline(b.path(), &[]), vec![0, 0, 0]);
    assert_eq!(snapshot(a.path()), snapshot(b.path()));
}

#[test]
fn single_method_writes_one_file_per_record() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixtures();
    let bench = dir.path().join("bench");
    let o = xattr(
        &["build-bench", "--manifest", p(&f.join("manifest.csv")), "--structures", p(&f.join("structures")), "--out", p(&bench)],
        &[],
    );
    assert_eq!(o.status.code(), Some(0));
    let scores = dir.path().join("scores");
    let o = xattr(&["explain", "--bench", p(&bench), "--seed", "1", "--methods", "qcai", "--out", p(&scores)], &[]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(count_score_files(&scores), 5);
    let doc = json(&scores.join("1OGA_qcai.json"));
    assert_eq!(keys(&doc), vec!["chains", "diagnostics", "method", "pdb_id"]);
}

#[test]
fn usage_and_empty_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixtures();
    let missing = dir.path().join("nope");
    let out = dir.path().join("out");
    let o = xattr(
        &["build-bench", "--manifest", p(&f.join("manifest.csv")), "--structures", p(&missing), "--out", p(&out)],
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists(), "nothing is written before validation");

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "pdb,mhc_class,peptide,cdr3a,cdr3b\n").unwrap();
    let o = xattr(&["build-bench", "--manifest", p(&empty), "--structures", p(&f.join("structures")), "--out", p(&out)], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(out.join("report.json").is_file());

    let bench = dir.path().join("bench");
    xattr(
        &["build-bench", "--manifest", p(&f.join("manifest.csv")), "--structures", p(&f.join("structures")), "--out", p(&bench)],
        &[],
    );
    let o = xattr(&["explain", "--bench", p(&bench), "--seed", "1", "--methods", "qcai,lime", "--out", p(&out)], &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("qcai, gradcam, rollout, rawattn"), "{err}");

    let o = xattr(&["explain", "--bench", p(&bench), "--out", p(&out)], &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = xattr(&["evaluate", "--bench", p(&bench), "--scores", p(&missing), "--out", p(&out)], &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = xattr(&["explain", "--bench", p(&bench), "--seed", "1", "--out", p(&out)], &[("XATTR_WORKERS", "zero")]);
    assert_eq!(o.status.code(), Some(2));
}

/// Writes a benchmark of synthetic records plus one score document per record.
fn synthetic(root: &Path, n: usize, len: usize, score: impl Fn(&mut ChaCha8Rng, f64) -> f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let aa = b"ACDEFGHIKLMNPQRSTVWY";
    let bench = root.join("bench");
    let scores = root.join("scores");
    fs::create_dir_all(bench.join("records")).unwrap();
    fs::create_dir_all(&scores).unwrap();
    let mut ids = Vec::new();
    for i in 0..n {
        let mut seq = || -> String { (0..len).map(|_| aa[rng.gen_range(0..20)] as char).collect() };
        let sample = TcrSample {
            pdb: format!("S{i:03}"),
            mhc_class: MhcClass::I,
            peptide: seq(),
            cdr3a: seq(),
            cdr3b: seq(),
        };
        let region = |chain| RegionLocation { chain, start: 0, end: len - 1 };
        let mut dist = || -> Vec<f64> { (0..len).map(|_| (rng.gen_range(2.0..12.0f64) * 1e6).round() / 1e6).collect() };
        let distances = DistanceAnnotation { cdr3a: dist(), cdr3b: dist(), epitope: dist() };
        let record = BenchmarkRecord {
            sample,
            regions: RegionSet { cdr3a: region('D'), cdr3b: region('E'), epitope: region('C') },
            distances,
        };
        let chains = Chain::ALL
            .iter()
            .map(|&c| (c, record.distances.get(c).iter().map(|&d| score(&mut rng, d)).collect()))
            .collect();
        let s = ImportanceScores { method: Method::Qcai, chains, diagnostics: vec![] };
        let doc = ImportanceDocument::new(&record.sample.pdb, &s);
        fs::write(scores.join(format!("{}_qcai.json", record.sample.pdb)), to_pretty(&doc).unwrap()).unwrap();
        fs::write(bench.join(format!("records/{}.json", record.sample.pdb)), to_pretty(&record).unwrap()).unwrap();
        ids.push(record.sample.pdb.clone());
    }
    let report = BenchReport { manifest_rows: n, records: n, record_ids: ids, ..BenchReport::default() };
    fs::write(bench.join("report.json"), to_pretty(&report).unwrap()).unwrap();
}

fn evaluate(root: &Path, extra: &[&str]) -> Value {
    let mut args = vec![
        "evaluate",
        "--bench",
        p(&root.join("bench")),
        "--scores",
        root.join("scores").to_str().unwrap(),
        "--methods",
        "qcai",
        "--seed",
        "3",
        "--out",
        root.join("eval").to_str().unwrap(),
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let o = xattr(&refs, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    json(&root.join("eval/summary.json"))
}

#[test]
fn perfectly_aligned_scores_are_perfect() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path(), 6, 12, |_, d| 1.0 / (1.0 + d));
    let s = evaluate(dir.path(), &["--no-smooth"]);
    for chain in ["cdr3a", "cdr3b", "epitope"] {
        let c = &s["methods"]["qcai"][chain];
        for t in ["3.4", "4", "5", "6"] {
            if !c["auc"][t]["pooled"].is_null() {
                assert_eq!(c["auc"][t]["pooled"].as_f64(), Some(1.0), "{chain} {t}");
            }
        }
        for hr in ["HR.25", "HR.30", "HR.40", "HR.50"] {
            assert_eq!(c["brhr"][hr]["mean"].as_f64(), Some(1.0), "{chain} {hr}");
        }
    }
}

#[test]
fn random_scores_pool_to_chance_and_schema_is_fixed() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path(), 50, 20, |rng, _| rng.gen::<f64>());
    let s = evaluate(dir.path(), &["--no-smooth"]);
    assert_eq!(keys(&s), vec!["config", "methods", "samples", "skipped"]);
    assert_eq!(keys(&s["config"]), vec!["hit_fractions", "k", "smooth", "thresholds"]);
    assert_eq!(s["samples"].as_u64(), Some(50));
    let m = &s["methods"]["qcai"];
    assert_eq!(keys(m), vec!["cdr3a", "cdr3b", "epitope"]);
    for chain in ["cdr3a", "cdr3b", "epitope"] {
        let c = &m[chain];
        assert_eq!(keys(c), vec!["AOPC", "LOdds", "auc", "brhr"]);
        assert_eq!(keys(&c["auc"]), vec!["3.4", "4", "5", "6"]);
        assert_eq!(keys(&c["brhr"]), vec!["HR.25", "HR.30", "HR.40", "HR.50"]);
        for t in ["3.4", "4", "5", "6"] {
            assert_eq!(keys(&c["auc"][t]), vec!["per_sample", "pooled"]);
            assert_eq!(keys(&c["auc"][t]["per_sample"]), vec!["mean", "n", "std"]);
            eprintln!("{chain} {t}: pooled AUC {}", c["auc"][t]["pooled"]);
        }
        // One statistic per chain: 1000 independent scores, roughly 30% positive at 5 Å.
        let auc = c["auc"]["5"]["pooled"].as_f64().unwrap();
        assert!((0.45..=0.55).contains(&auc), "{chain}: pooled AUC {auc}");
        assert_eq!(keys(&c["LOdds"]), vec!["mean", "n", "std"]);
    }
    let table = fs::read_to_string(dir.path().join("eval/qcai_cdr3b_hr_25.csv")).unwrap();
    assert!(table.starts_with("pdb,value\nS000,"));
    assert_eq!(table.lines().count(), 51);
}
