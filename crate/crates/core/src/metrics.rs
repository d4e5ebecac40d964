//! NDCG@k, Recall@k and run evaluation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::Qrels;
use crate::error::{Error, Result};
use crate::ranking::ScoredRanking;

/// Exponential-gain NDCG: `Σ_{i≤k} (2^grade − 1) / log2(i + 1)`, normalized
/// by the ideal ordering of all judged documents. Zero when no judged
/// document has a positive grade.
pub fn ndcg_at_k(ranking: &ScoredRanking, grades: &BTreeMap<String, u32>, k: usize) -> f64 {
    let gain = |g: u32| libm::exp2(f64::from(g)) - 1.0;
    let discount = |rank: usize| libm::log2(rank as f64 + 1.0);
    let dcg: f64 = ranking
        .doc_ids()
        .take(k)
        .enumerate()
        .map(|(i, id)| gain(grades.get(id).copied().unwrap_or(0)) / discount(i + 1))
        .sum();
    let mut ideal: Vec<u32> = grades.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) / discount(i + 1))
        .sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Fraction of relevant (grade > 0) documents found in the top `k`; `None`
/// when the query has no relevant document.
pub fn recall_at_k(ranking: &ScoredRanking, grades: &BTreeMap<String, u32>, k: usize) -> Option<f64> {
    let relevant = grades.values().filter(|&&g| g > 0).count();
    if relevant == 0 {
        return None;
    }
    let found = ranking
        .doc_ids()
        .take(k)
        .filter(|id| grades.get(*id).is_some_and(|&g| g > 0))
        .count();
    Some(found as f64 / relevant as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ndcg,
    Recall,
}

impl Metric {
    pub fn key(self, k: usize) -> String {
        match self {
            Metric::Ndcg => format!("ndcg@{k}"),
            Metric::Recall => format!("recall@{k}"),
        }
    }
}

impl core::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ndcg" => Ok(Metric::Ndcg),
            "recall" => Ok(Metric::Recall),
            other => Err(Error::InvalidArgument(format!("unknown metric `{other}`"))),
        }
    }
}

/// Rankings for a set of queries under one run tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub tag: String,
    pub rankings: Vec<ScoredRanking>,
}

impl RunFile {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            rankings: Vec::new(),
        }
    }

    pub fn get(&self, query_id: &str) -> Option<&ScoredRanking> {
        self.rankings.iter().find(|r| r.query_id == query_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `query_id -> metric@k -> value`.
    pub per_query: BTreeMap<String, BTreeMap<String, f64>>,
    /// `metric@k -> mean` over the queries that define the metric.
    pub means: BTreeMap<String, f64>,
    /// `metric@k -> number of queries averaged`.
    pub counts: BTreeMap<String, usize>,
    pub skipped_queries: Vec<String>,
    pub strict: bool,
    /// Free-form provenance (seeds, strategy, k, m, ...).
    pub fingerprint: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn mean(&self, key: &str) -> Option<f64> {
        self.means.get(key).copied()
    }

    /// Aligned `metric  mean  queries` table.
    pub fn to_text(&self) -> String {
        let width = self.means.keys().map(String::len).max().unwrap_or(6).max(6);
        let mut s = format!("{:<width$}  {:>8}  {:>7}\n", "metric", "mean", "queries");
        for (key, mean) in &self.means {
            s.push_str(&format!("{key:<width$}  {mean:>8.4}  {:>7}\n", self.counts[key]));
        }
        s
    }
}

/// Evaluates every query of `run` against `qrels`.
///
/// By default queries without judgments are skipped with a warning, as are
/// queries whose recall is undefined. In strict mode both count as 0 and
/// judged queries missing from the run are scored as empty rankings.
pub fn evaluate_run(run: &RunFile, qrels: &Qrels, metrics: &[Metric], ks: &[usize], strict: bool) -> EvalReport {
    let mut per_query: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut skipped = Vec::new();
    let empty = BTreeMap::new();

    let mut rankings: Vec<ScoredRanking> = run.rankings.clone();
    if strict {
        for q in qrels.query_ids() {
            if run.get(q).is_none() {
                rankings.push(ScoredRanking {
                    query_id: q.into(),
                    entries: Vec::new(),
                });
            }
        }
    }

    for ranking in &rankings {
        let grades = match qrels.for_query(&ranking.query_id) {
            Some(g) => g,
            None if strict => &empty,
            None => {
                warn!("query `{}` has no judgments; skipped", ranking.query_id);
                skipped.push(ranking.query_id.clone());
                continue;
            }
        };
        let row = per_query.entry(ranking.query_id.clone()).or_default();
        for &metric in metrics {
            for &k in ks {
                let value = match metric {
                    Metric::Ndcg => Some(ndcg_at_k(ranking, grades, k)),
                    Metric::Recall => recall_at_k(ranking, grades, k).or(strict.then_some(0.0)),
                };
                if let Some(v) = value {
                    row.insert(metric.key(k), v);
                }
            }
        }
    }

    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for &metric in metrics {
        for &k in ks {
            sums.insert(metric.key(k), (0.0, 0));
        }
    }
    for row in per_query.values() {
        for (key, v) in row {
            let e = sums.get_mut(key).expect("key registered above");
            e.0 += v;
            e.1 += 1;
        }
    }
    let means = sums
        .iter()
        .map(|(k, &(s, n))| (k.clone(), if n == 0 { 0.0 } else { s / n as f64 }))
        .collect();
    let counts = sums.into_iter().map(|(k, (_, n))| (k, n)).collect();
    EvalReport {
        per_query,
        means,
        counts,
        skipped_queries: skipped,
        strict,
        fingerprint: BTreeMap::new(),
    }
}
