//! Re-ranking scorers.
//!
//! A [`CrossScorer`] assigns a relevance value to each `(query, document)`
//! pair of a first-stage ranking. Remote cross-encoders report a pair of
//! logits, turned into a probability by [`rsv_from_logits`] on this side of
//! the wire.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::DocumentStore;
use crate::error::{Error, Result};
use crate::ranking::{ScoredDoc, ScoredRanking};
use crate::text::TokenizerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorerLogits {
    pub z_true: f64,
    pub z_false: f64,
}

// Largest double below 1 and smallest positive normal.
const RSV_MAX: f64 = 1.0 - f64::EPSILON / 2.0;
const RSV_MIN: f64 = f64::MIN_POSITIVE;

/// `e^{z_true} / (e^{z_true} + e^{z_false})`, evaluated after subtracting the
/// larger logit. The result is clamped into the open interval `(0, 1)`.
pub fn rsv_from_logits(l: ScorerLogits) -> Result<f64> {
    if !l.z_true.is_finite() || !l.z_false.is_finite() {
        return Err(Error::NonFinite("scorer logits"));
    }
    let m = l.z_true.max(l.z_false);
    let t = libm::exp(l.z_true - m);
    let f = libm::exp(l.z_false - m);
    Ok((t / (t + f)).clamp(RSV_MIN, RSV_MAX))
}

/// `|tokens(q) ∩ tokens(d)| / (|tokens(q)| + 1)` over distinct tokens.
pub fn lexical_cross_score(query: &str, doc: &str, tokenizer: &TokenizerConfig) -> f64 {
    let q: BTreeSet<String> = tokenizer.tokenize(query).into_iter().collect();
    let d: BTreeSet<String> = tokenizer.tokenize(doc).into_iter().collect();
    let overlap = q.intersection(&d).count();
    overlap as f64 / (q.len() as f64 + 1.0)
}

/// One first-stage entry handed to a scorer.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub doc_id: &'a str,
    pub text: &'a str,
    pub first_stage_score: f64,
}

pub trait CrossScorer {
    /// One score per candidate, in candidate order.
    fn score(&self, query: &str, candidates: &[Candidate<'_>]) -> Result<Vec<f64>>;
}

impl<T: CrossScorer + ?Sized> CrossScorer for &T {
    fn score(&self, query: &str, candidates: &[Candidate<'_>]) -> Result<Vec<f64>> {
        (**self).score(query, candidates)
    }
}

/// Keeps the first-stage (BM25) scores.
#[derive(Debug, Clone, Copy, Default)]
pub struct FirstStagePassthrough;

impl CrossScorer for FirstStagePassthrough {
    fn score(&self, _query: &str, candidates: &[Candidate<'_>]) -> Result<Vec<f64>> {
        Ok(candidates.iter().map(|c| c.first_stage_score).collect())
    }
}

#[derive(Debug, Clone, Default)]
pub struct LexicalCrossScorer {
    pub tokenizer: TokenizerConfig,
}

impl CrossScorer for LexicalCrossScorer {
    fn score(&self, query: &str, candidates: &[Candidate<'_>]) -> Result<Vec<f64>> {
        Ok(candidates
            .iter()
            .map(|c| lexical_cross_score(query, c.text, &self.tokenizer))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    #[serde(rename = "bm25")]
    Bm25Passthrough,
    #[default]
    #[serde(rename = "lexical")]
    LexicalCross,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteScorerConfig {
    pub base_url: String,
    pub timeout_ms: u64,
    pub batch_size: usize,
    pub retries: u32,
}

impl Default for RemoteScorerConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8080".into(),
            timeout_ms: 30_000,
            batch_size: 32,
            retries: 2,
        }
    }
}

impl RemoteScorerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("remote batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Re-scores the top `depth` entries of `ranking` and re-sorts them; entries
/// below `depth` are dropped.
pub fn rerank(
    ranking: &ScoredRanking,
    query_text: &str,
    scorer: &dyn CrossScorer,
    depth: usize,
    store: &DocumentStore,
) -> Result<ScoredRanking> {
    if depth == 0 {
        return Err(Error::InvalidArgument("rerank depth must be >= 1".into()));
    }
    let head = &ranking.entries[..depth.min(ranking.len())];
    let texts = head
        .iter()
        .map(|e| store.require(&e.doc_id).map(|d| d.full_text()))
        .collect::<Result<Vec<_>>>()?;
    let candidates: Vec<Candidate<'_>> = head
        .iter()
        .zip(&texts)
        .map(|(e, t)| Candidate {
            doc_id: &e.doc_id,
            text: t,
            first_stage_score: e.score,
        })
        .collect();
    let scores = scorer.score(query_text, &candidates)?;
    if scores.len() != candidates.len() {
        return Err(Error::Protocol(alloc::format!(
            "scorer returned {} scores for {} candidates",
            scores.len(),
            candidates.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("re-ranking scores"));
    }
    let entries = head
        .iter()
        .zip(scores)
        .map(|(e, score)| ScoredDoc {
            doc_id: e.doc_id.clone(),
            score,
        })
        .collect();
    Ok(ScoredRanking::from_unsorted(ranking.query_id.clone(), entries))
}
