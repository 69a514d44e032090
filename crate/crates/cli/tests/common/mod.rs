#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

pub fn xattr(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_xattr"));
    cmd.args(args).env_remove("XATTR_WORKERS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("xattr binary runs")
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// build-bench, explain (all methods, seed 7) and evaluate into `root`.
pub fn pipeline(root: &Path, env: &[(&str, &str)]) -> Vec<i32> {
    let f = fixtures();
    let (bench, scores, eval) = (root.join("bench"), root.join("scores"), root.join("eval"));
    let runs = [
        xattr(
            &["build-bench", "--manifest", p(&f.join("manifest.csv")), "--structures", p(&f.join("structures")), "--out", p(&bench)],
            env,
        ),
        xattr(
            &["explain", "--bench", p(&bench), "--seed", "7", "--methods", "qcai,gradcam,rollout,rawattn", "--out", p(&scores)],
            env,
        ),
        xattr(&["evaluate", "--bench", p(&bench), "--scores", p(&scores), "--out", p(&eval)], env),
    ];
    runs.iter().map(|o| o.status.code().unwrap_or(-1)).collect()
}

/// Relative path → bytes for every file below `root`.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}
