//! Shared helpers for tests that drive the binary.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pseudorel"))
}

/// Runs the binary with logging silenced and returns its output.
pub fn run(args: &[&str], cwd: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

pub fn run_ok(args: &[&str], cwd: &Path) -> Output {
    let out = run(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// A configuration small enough that the whole chain runs in seconds.
pub fn small_config() -> serde_json::Value {
    json!({
        "experiment": {
            "synth": { "n_docs": 300, "n_train": 24, "n_dev": 8, "n_test": 10 },
            "test_depth": 50
        },
        "train": { "steps": 300, "eval_every": 50 },
        "encoder": { "buckets": 4096 }
    })
}

/// Every file written by [`pipeline`], in the order produced.
pub const PIPELINE_FILES: &[&str] = &[
    "synth.json",
    "data/corpus.jsonl",
    "data/train.jsonl",
    "data/dev.jsonl",
    "data/test.jsonl",
    "data/qrels.tsv",
    "index.json",
    "bm25.trec",
    "rerank.trec",
    "split_train.jsonl",
    "split_dev.jsonl",
    "dev_qrels.tsv",
    "dev.json",
    "triplets.tsv",
    "train_qrels.tsv",
    "model.bin",
    "trace.json",
    "dense.trec",
    "eval.json",
    "topics.json",
    "gold.jsonl",
    "rewrites.jsonl",
    "bleu.json",
    "cdr.tsv",
];

/// Runs every subcommand once inside `dir` and returns the captured
/// standard output of each, labeled by subcommand.
pub fn pipeline(dir: &Path, seed: u64) -> Vec<(String, Vec<u8>)> {
    std::fs::write(dir.join("config.json"), small_config().to_string()).unwrap();
    let seed = seed.to_string();
    let common = ["--config", "config.json", "--seed", seed.as_str()];
    let mut outputs = Vec::new();
    let mut step = |name: &str, args: &[&str]| {
        let mut full: Vec<&str> = vec![name];
        full.extend_from_slice(args);
        full.extend_from_slice(&common);
        outputs.push((name.to_string(), run_ok(&full, dir).stdout));
    };

    step(
        "synth-e2e",
        &["--out", "synth.json", "--data-out", "data", "--strategy", "simans"],
    );
    step("index", &["--corpus", "data/corpus.jsonl", "--out", "index.json"]);
    step(
        "search",
        &[
            "--index",
            "index.json",
            "--queries",
            "data/test.jsonl",
            "--out",
            "bm25.trec",
        ],
    );
    step(
        "rerank",
        &[
            "--corpus",
            "data/corpus.jsonl",
            "--queries",
            "data/test.jsonl",
            "--run",
            "bm25.trec",
            "--out",
            "rerank.trec",
            "--scorer",
            "lexical",
        ],
    );
    step(
        "split",
        &[
            "--queries",
            "data/train.jsonl",
            "--dev-count",
            "6",
            "--train-out",
            "split_train.jsonl",
            "--dev-out",
            "split_dev.jsonl",
        ],
    );
    step(
        "label",
        &[
            "--corpus",
            "data/corpus.jsonl",
            "--index",
            "index.json",
            "--queries",
            "split_dev.jsonl",
            "--k",
            "10",
            "--out",
            "dev_qrels.tsv",
        ],
    );
    step(
        "dev-set",
        &[
            "--corpus",
            "data/corpus.jsonl",
            "--queries",
            "split_dev.jsonl",
            "--qrels",
            "dev_qrels.tsv",
            "--out",
            "dev.json",
        ],
    );
    step(
        "triplets",
        &[
            "--corpus",
            "data/corpus.jsonl",
            "--index",
            "index.json",
            "--queries",
            "split_train.jsonl",
            "--out",
            "triplets.tsv",
            "--qrels-out",
            "train_qrels.tsv",
        ],
    );
    step(
        "train",
        &[
            "--corpus",
            "data/corpus.jsonl",
            "--triplets",
            "triplets.tsv",
            "--dev",
            "dev.json",
            "--out",
            "model.bin",
            "--report",
            "trace.json",
        ],
    );
    step(
        "dense-search",
        &[
            "--corpus",
            "data/corpus.jsonl",
            "--checkpoint",
            "model.bin",
            "--queries",
            "data/test.jsonl",
            "--out",
            "dense.trec",
        ],
    );
    step(
        "eval",
        &["--run", "dense.trec", "--qrels", "data/qrels.tsv", "--out", "eval.json"],
    );

    write_topics(dir);
    step(
        "rewrite",
        &[
            "--topics",
            "topics.json",
            "--out",
            "rewrites.jsonl",
            "--rewriter",
            "pronoun-sub",
            "--reference",
            "gold.jsonl",
            "--report",
            "bleu.json",
        ],
    );
    step(
        "cdr-triplets",
        &[
            "--corpus",
            "data/corpus.jsonl",
            "--index",
            "index.json",
            "--topics",
            "topics.json",
            "--out",
            "cdr.tsv",
            "--rewriter",
            "pronoun-sub",
            "--strategy",
            "global",
        ],
    );
    outputs
}

/// Two conversations built from the synthetic test queries; the gold
/// rewrite of every turn is the query itself.
fn write_topics(dir: &Path) {
    let text = std::fs::read_to_string(dir.join("data/test.jsonl")).unwrap();
    let queries: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let mut topics = Vec::new();
    let mut gold = String::new();
    for (t, chunk) in queries.chunks(3).take(2).enumerate() {
        let turns: Vec<_> = chunk
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let raw = if i == 0 {
                    q["text"].as_str().unwrap().to_string()
                } else {
                    format!("what about it {}", q["text"].as_str().unwrap())
                };
                gold.push_str(&json!({"_id": format!("c{t}_{}", i + 1), "text": q["text"]}).to_string());
                gold.push('\n');
                json!({"turn_id": i + 1, "raw": raw})
            })
            .collect();
        topics.push(json!({"topic_id": format!("c{t}"), "turns": turns}));
    }
    std::fs::write(dir.join("topics.json"), serde_json::to_string(&topics).unwrap()).unwrap();
    std::fs::write(dir.join("gold.jsonl"), gold).unwrap();
}

pub fn path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
