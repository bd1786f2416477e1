//! Helpers shared by the CLI test targets.
#![allow(dead_code)]

pub mod mock;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_dirwrap");

/// The binary with a clean environment for the seed variable.
pub fn dirwrap(dir: &Path) -> Command {
    let mut c = Command::new(BIN);
    c.current_dir(dir).env_remove("DW_SEED").env_remove("RUST_LOG");
    c
}

pub fn run(dir: &Path, args: &[&str]) -> Output {
    let out = dirwrap(dir).args(args).output().expect("spawn dirwrap");
    assert!(
        out.status.success(),
        "dirwrap {args:?} failed ({:?})\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub const METHODS: [&str; 3] = ["baseline-entropy", "sampled-entropy", "var-ratios"];

/// Knobs that shrink the pipeline for quick tests.
#[derive(Debug, Clone, Copy)]
pub struct Size {
    pub examples: usize,
    pub dim: usize,
    pub bb_epochs: usize,
    pub wrap_epochs: usize,
}

pub const SMALL: Size = Size {
    examples: 300,
    dim: 6,
    bb_epochs: 8,
    wrap_epochs: 4,
};

/// Runs synth, black-box training and prediction, wrapper training, all
/// three scores, their rejection curves and the report inside `dir`. A
/// `size` of `None` keeps every command default.
/// Returns the concatenated stdout of every step.
pub fn pipeline(dir: &Path, seed: u64, size: Option<Size>) -> String {
    let seed = seed.to_string();
    let mut log = String::new();
    let mut step = |args: Vec<String>| {
        let mut full = vec!["--seed".to_string(), seed.clone()];
        full.extend(args);
        let refs: Vec<&str> = full.iter().map(String::as_str).collect();
        log.push_str(&stdout(&run(dir, &refs)));
    };
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();

    let mut synth = s(&["synth"]);
    let mut bb = s(&["bb-train", "--data", "data/source_train.jsonl", "--validation", "data/source_validation.jsonl"]);
    let mut wrap = s(&["wrap-train", "--data", "data/target_train.jsonl", "--preds", "preds_target_train.jsonl"]);
    if let Some(z) = size {
        let n = z.examples.to_string();
        synth.extend(s(&["--n-source", &n, "--n-target", &n, "--dim", &z.dim.to_string()]));
        bb.extend(s(&["--epochs", &z.bb_epochs.to_string()]));
        wrap.extend(s(&["--epochs", &z.wrap_epochs.to_string()]));
    }
    step(synth);
    step(bb);
    for split in ["source_test", "target_train", "target_test"] {
        step(s(&[
            "bb-predict",
            "--model",
            "blackbox.json",
            "--data",
            &format!("data/{split}.jsonl"),
            "--out",
            &format!("preds_{split}.jsonl"),
        ]));
    }
    step(wrap);
    let mut report = s(&["report", "--out", "report"]);
    for m in METHODS {
        step(s(&[
            "score",
            "--data",
            "data/target_test.jsonl",
            "--preds",
            "preds_target_test.jsonl",
            "--method",
            m,
            "--wrapper",
            "wrapper.json",
            "--out",
            &format!("scores_{m}.csv"),
        ]));
        step(s(&["reject", "--scores", &format!("scores_{m}.csv"), "--out", &format!("curve_{m}.csv")]));
        report.extend(s(&["--curve", &format!("{m}=curve_{m}.csv")]));
    }
    step(report);
    log
}

/// Every file below `dir`, relative path and contents, sorted by path.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Accuracy printed by `bb-predict` for one split.
pub fn printed_accuracy(log: &str, split: &str) -> f64 {
    let prefix = format!("accuracy on data/{split}.jsonl: ");
    log.lines()
        .find_map(|l| l.strip_prefix(&prefix))
        .unwrap_or_else(|| panic!("no accuracy line for {split}"))
        .trim()
        .parse()
        .unwrap()
}
