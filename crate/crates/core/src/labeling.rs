//! Pseudo-relevance labeling.
//!
//! For each query the BM25 top `retrieval_depth` is re-ranked by a cross
//! scorer and the top `k` documents become pseudo-positives. Each positive is
//! paired with `m` pseudo-negatives drawn by one of three strategies:
//!
//! * global random: uniform over every non-positive document;
//! * BM25 hard: the highest BM25-ranked non-positives;
//! * SimANS: sampled from the dense retriever's top `simans_pool`
//!   non-positives with `p_i ∝ exp(-a (s_i - s⁺ - b)²)`, where `s⁺` is the
//!   dense score of a randomly drawn positive.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bm25::{Bm25Params, InvertedIndex};
use crate::corpus::{DocumentStore, Qrels, Query};
use crate::dense::DenseIndex;
use crate::error::{Error, Result};
use crate::ranking::{rank_order, ScoredDoc, ScoredRanking};
use crate::scoring::{rerank, CrossScorer};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NegativeStrategy {
    #[serde(rename = "global")]
    GlobalRandom,
    #[serde(rename = "bm25")]
    Bm25Hard,
    #[default]
    #[serde(rename = "simans")]
    SimAns,
}

impl NegativeStrategy {
    pub const ALL: [NegativeStrategy; 3] = [Self::GlobalRandom, Self::Bm25Hard, Self::SimAns];

    pub fn name(self) -> &'static str {
        match self {
            Self::GlobalRandom => "global",
            Self::Bm25Hard => "bm25",
            Self::SimAns => "simans",
        }
    }
}

impl core::str::FromStr for NegativeStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" | "global-random" => Ok(Self::GlobalRandom),
            "bm25" | "bm25-hard" => Ok(Self::Bm25Hard),
            "simans" => Ok(Self::SimAns),
            other => Err(Error::InvalidArgument(format!("unknown negative strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelingConfig {
    /// Re-ranked documents taken as positive.
    pub k: usize,
    /// Negatives sampled per positive.
    pub m: usize,
    /// BM25 depth that is re-ranked; also bounds BM25 hard negatives.
    pub retrieval_depth: usize,
    pub strategy: NegativeStrategy,
    pub simans_a: f64,
    pub simans_b: f64,
    pub simans_pool: usize,
    pub seed: u64,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        Self {
            k: 2,
            m: 15,
            retrieval_depth: 100,
            strategy: NegativeStrategy::SimAns,
            simans_a: 0.5,
            simans_b: 0.0,
            simans_pool: 100,
            seed: 0,
        }
    }
}

impl LabelingConfig {
    fn with_km(k: usize, m: usize) -> Self {
        Self {
            k,
            m,
            ..Self::default()
        }
    }

    pub fn fiqa() -> Self {
        Self::with_km(1, 10)
    }

    pub fn bioasq() -> Self {
        Self::with_km(2, 15)
    }

    pub fn robust04() -> Self {
        Self::with_km(15, 67)
    }

    pub fn cast19() -> Self {
        Self::with_km(5, 100)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.k == 0 || self.m == 0 || self.retrieval_depth == 0 {
            return bad(format!(
                "k, m and retrieval_depth must be >= 1 (k={}, m={}, depth={})",
                self.k, self.m, self.retrieval_depth
            ));
        }
        if self.simans_pool < self.m {
            return bad(format!("simans_pool {} < m {}", self.simans_pool, self.m));
        }
        if !(self.simans_a >= 0.0 && self.simans_a.is_finite()) || !self.simans_b.is_finite() {
            return bad(format!("invalid SimANS a={} b={}", self.simans_a, self.simans_b));
        }
        Ok(())
    }
}

/// Ordered pseudo-positive lists per query.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoQrels {
    lists: BTreeMap<String, Vec<String>>,
}

impl PseudoQrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, positives: Vec<String>) -> Result<()> {
        let mut seen = BTreeSet::new();
        if let Some(dup) = positives.iter().find(|d| !seen.insert(d.as_str())) {
            return Err(Error::DuplicateId(dup.clone()));
        }
        let query_id = query_id.into();
        if self.lists.contains_key(&query_id) {
            return Err(Error::DuplicateId(query_id));
        }
        self.lists.insert(query_id, positives);
        Ok(())
    }

    pub fn get(&self, query_id: &str) -> &[String] {
        self.lists.get(query_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.lists.iter().map(|(q, d)| (q.as_str(), d.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    /// Every positive with grade 1.
    pub fn to_qrels(&self) -> Qrels {
        let mut q = Qrels::new();
        for (query, docs) in &self.lists {
            for d in docs {
                // Lists are duplicate-free, so insertion cannot fail.
                let _ = q.insert(query, d, 1);
            }
        }
        q
    }

    /// Rebuilds lists from judgments with grade > 0, ordered by doc id.
    pub fn from_qrels(qrels: &Qrels) -> Self {
        let mut lists: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for e in qrels.entries().filter(|e| e.grade > 0) {
            lists.entry(e.query_id.into()).or_default().push(e.doc_id.into());
        }
        Self { lists }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub query: String,
    pub positive: String,
    pub negative: String,
}

/// Replaces each tab, carriage return and newline with a single space.
pub fn sanitize_field(s: &str) -> String {
    s.chars()
        .map(|c| if matches!(c, '\t' | '\n' | '\r') { ' ' } else { c })
        .collect()
}

impl Triplet {
    pub fn new(query: &str, positive: &str, negative: &str) -> Self {
        Self {
            query: sanitize_field(query),
            positive: sanitize_field(positive),
            negative: sanitize_field(negative),
        }
    }

    /// `query<TAB>positive<TAB>negative`, without the trailing newline.
    pub fn to_line(&self) -> String {
        format!("{}\t{}\t{}", self.query, self.positive, self.negative)
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let mut parts = line.split('\t');
        match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(q), Some(p), Some(n), None) => Ok(Self {
                query: q.into(),
                positive: p.into(),
                negative: n.into(),
            }),
            _ => Err(Error::Protocol(format!(
                "triplet line must have exactly 3 tab-separated fields: `{line}`"
            ))),
        }
    }
}

/// First `min(k, |reranked|)` doc ids in rank order.
pub fn select_positives(reranked: &ScoredRanking, k: usize) -> Vec<String> {
    reranked.doc_ids().take(k).map(String::from).collect()
}

/// `m` distinct documents drawn uniformly without replacement from
/// `store ∖ positives`.
pub fn sample_negatives_global<R: Rng + ?Sized>(
    store: &DocumentStore,
    positives: &[String],
    m: usize,
    rng: &mut R,
) -> Result<Vec<String>> {
    let excluded: BTreeSet<&str> = positives.iter().map(String::as_str).collect();
    let pool: Vec<&str> = store
        .iter()
        .map(|d| d.id.as_str())
        .filter(|id| !excluded.contains(id))
        .collect();
    if pool.len() < m {
        return Err(Error::InsufficientCandidates {
            query_id: String::new(),
            needed: m,
            available: pool.len(),
        });
    }
    Ok(rand::seq::index::sample(rng, pool.len(), m)
        .into_iter()
        .map(|i| String::from(pool[i]))
        .collect())
}

/// Top `m` of the BM25 ranking once positives are removed, in rank order.
pub fn sample_negatives_bm25(bm25_ranking: &ScoredRanking, positives: &[String], m: usize) -> Result<Vec<String>> {
    let excluded: BTreeSet<&str> = positives.iter().map(String::as_str).collect();
    let out: Vec<String> = bm25_ranking
        .doc_ids()
        .filter(|id| !excluded.contains(id))
        .take(m)
        .map(String::from)
        .collect();
    if out.len() < m {
        return Err(Error::InsufficientCandidates {
            query_id: bm25_ranking.query_id.clone(),
            needed: m,
            available: out.len(),
        });
    }
    Ok(out)
}

/// Normalized SimANS sampling probabilities,
/// `p_i ∝ exp(-a (s_i - pos_score - b)²)`.
pub fn simans_distribution(scores: &[f64], pos_score: f64, a: f64, b: f64) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Empty("SimANS candidate scores"));
    }
    if a.is_nan() || a < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "SimANS density a must be >= 0, got {a}"
        )));
    }
    if !pos_score.is_finite() || !a.is_finite() || !b.is_finite() || scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("SimANS inputs"));
    }
    let exponents: Vec<f64> = scores
        .iter()
        .map(|&s| {
            let d = s - pos_score - b;
            -a * d * d
        })
        .collect();
    let max = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = exponents.iter().map(|&e| libm::exp(e - max)).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(weights)
}

/// Draws one positive uniformly as the anchor score, restricts the
/// candidates to the `simans_pool` highest dense scores and samples `m`
/// distinct negatives, re-normalizing the distribution after every draw.
pub fn sample_negatives_simans<R: Rng + ?Sized>(
    candidates: &[ScoredDoc],
    positives: &[ScoredDoc],
    cfg: &LabelingConfig,
    rng: &mut R,
) -> Result<Vec<String>> {
    if positives.is_empty() {
        return Err(Error::Empty("SimANS positives"));
    }
    let pos_ids: BTreeSet<&str> = positives.iter().map(|p| p.doc_id.as_str()).collect();
    if let Some(c) = candidates.iter().find(|c| pos_ids.contains(c.doc_id.as_str())) {
        return Err(Error::InvalidArgument(format!(
            "SimANS candidate `{}` is also a positive",
            c.doc_id
        )));
    }
    let anchor = positives[rng.gen_range(0..positives.len())].score;

    let mut pool: Vec<&ScoredDoc> = candidates.iter().collect();
    pool.sort_by(|x, y| rank_order(x.score, &x.doc_id, y.score, &y.doc_id));
    pool.truncate(cfg.simans_pool);
    if pool.len() < cfg.m {
        return Err(Error::InsufficientCandidates {
            query_id: String::new(),
            needed: cfg.m,
            available: pool.len(),
        });
    }

    let mut picked = Vec::with_capacity(cfg.m);
    let mut scores: Vec<f64> = pool.iter().map(|c| c.score).collect();
    for _ in 0..cfg.m {
        let probs = simans_distribution(&scores, anchor, cfg.simans_a, cfg.simans_b)?;
        let i = draw_index(&probs, rng);
        picked.push(pool.remove(i).doc_id.clone());
        scores.remove(i);
    }
    Ok(picked)
}

/// Inverse-CDF draw. Falls back to the last index with non-zero
/// probability when rounding leaves the cumulative sum short of `u`.
fn draw_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Positives of one query and, for each positive, its sampled negatives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryLabels {
    pub query_id: String,
    /// Text written into the triplet query field.
    pub query_text: String,
    pub positives: Vec<String>,
    pub negatives: Vec<Vec<String>>,
}

impl QueryLabels {
    pub fn triplet_count(&self) -> usize {
        self.negatives.iter().map(Vec::len).sum()
    }
}

/// Expands labels into `(query, positive text, negative text)` triplets,
/// positive-major. Pairs whose texts coincide are skipped.
pub fn build_triplets(store: &DocumentStore, labels: &[QueryLabels]) -> Result<Vec<Triplet>> {
    let mut out = Vec::new();
    for ql in labels {
        if ql.positives.is_empty() {
            warn!("query `{}` has no positives; no triplets emitted", ql.query_id);
            continue;
        }
        for (pos, negs) in ql.positives.iter().zip(&ql.negatives) {
            let pos_text = store.require(pos)?.full_text();
            for neg in negs {
                let neg_text = store.require(neg)?.full_text();
                let t = Triplet::new(&ql.query_text, &pos_text, &neg_text);
                if t.positive == t.negative {
                    warn!(
                        "query `{}`: `{pos}` and `{neg}` have identical text; pair skipped",
                        ql.query_id
                    );
                    continue;
                }
                out.push(t);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DevQuery {
    pub query_id: String,
    pub query_text: String,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
}

/// Per-query candidate pools for model selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DevSet {
    pub n_pos: usize,
    pub n_neg: usize,
    pub queries: Vec<DevQuery>,
}

impl DevSet {
    pub const DEFAULT_POSITIVES: usize = 10;
    pub const DEFAULT_NEGATIVES: usize = 90;
}

/// Up to `n_pos` top pseudo-positives plus `n_neg` uniformly sampled
/// non-positives per dev query. Queries without positives are skipped.
pub fn build_dev_set(
    dev_queries: &[Query],
    pseudo_qrels: &PseudoQrels,
    store: &DocumentStore,
    n_pos: usize,
    n_neg: usize,
    seed: u64,
) -> Result<DevSet> {
    let mut queries = Vec::with_capacity(dev_queries.len());
    for q in dev_queries {
        let positives: Vec<String> = pseudo_qrels.get(&q.id).iter().take(n_pos).cloned().collect();
        if positives.is_empty() {
            warn!("dev query `{}` has no pseudo-positives; skipped", q.id);
            continue;
        }
        for p in &positives {
            store.require(p)?;
        }
        let mut rng = rng_for(seed, &q.id, 0);
        let negatives =
            sample_negatives_global(store, &positives, n_neg, &mut rng).map_err(|e| with_query(e, &q.id))?;
        queries.push(DevQuery {
            query_id: q.id.clone(),
            query_text: q.text.clone(),
            positives,
            negatives,
        });
    }
    Ok(DevSet { n_pos, n_neg, queries })
}

fn with_query(e: Error, query_id: &str) -> Error {
    match e {
        Error::InsufficientCandidates { needed, available, .. } => Error::InsufficientCandidates {
            query_id: query_id.into(),
            needed,
            available,
        },
        other => other,
    }
}

/// The labeling pipeline for one corpus.
pub struct Labeler<'a> {
    pub store: &'a DocumentStore,
    pub index: &'a InvertedIndex,
    pub bm25: Bm25Params,
    pub scorer: &'a dyn CrossScorer,
    /// Dense retriever snapshot; required by the SimANS strategy.
    pub dense: Option<&'a DenseIndex<'a>>,
    pub config: LabelingConfig,
}

impl<'a> Labeler<'a> {
    pub fn new(
        store: &'a DocumentStore,
        index: &'a InvertedIndex,
        bm25: Bm25Params,
        scorer: &'a dyn CrossScorer,
        dense: Option<&'a DenseIndex<'a>>,
        config: LabelingConfig,
    ) -> Result<Self> {
        config.validate()?;
        bm25.validate()?;
        if config.strategy == NegativeStrategy::SimAns && dense.is_none() {
            return Err(Error::InvalidArgument("SimANS sampling needs a dense retriever".into()));
        }
        if index.doc_count() != store.len() {
            return Err(Error::DimensionMismatch {
                left: index.doc_count(),
                right: store.len(),
            });
        }
        Ok(Self {
            store,
            index,
            bm25,
            scorer,
            dense,
            config,
        })
    }

    /// BM25 top-depth list and the re-ranked positives drawn from it.
    pub fn positives(&self, query: &Query) -> Result<(ScoredRanking, Vec<String>)> {
        let first = self.index.search(&self.bm25, query, self.config.retrieval_depth);
        if first.is_empty() {
            return Ok((first, Vec::new()));
        }
        let reranked = rerank(
            &first,
            &query.text,
            self.scorer,
            self.config.retrieval_depth,
            self.store,
        )?;
        let positives = select_positives(&reranked, self.config.k);
        Ok((first, positives))
    }

    /// `None` when the query yields no positives or too few negatives;
    /// both cases are logged.
    pub fn label(&self, query: &Query) -> Result<Option<QueryLabels>> {
        let (first, positives) = self.positives(query)?;
        if positives.is_empty() {
            warn!("query `{}`: empty re-ranked list, skipped", query.id);
            return Ok(None);
        }
        match self.negatives(query, &first, &positives) {
            Ok(negatives) => Ok(Some(QueryLabels {
                query_id: query.id.clone(),
                query_text: query.text.clone(),
                positives,
                negatives,
            })),
            Err(e @ Error::InsufficientCandidates { .. }) => {
                warn!("{}; skipped", with_query(e, &query.id));
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    pub fn negatives(
        &self,
        query: &Query,
        bm25_ranking: &ScoredRanking,
        positives: &[String],
    ) -> Result<Vec<Vec<String>>> {
        let cfg = &self.config;
        match cfg.strategy {
            NegativeStrategy::GlobalRandom => (0..positives.len())
                .map(|i| {
                    let mut rng = rng_for(cfg.seed, &query.id, i as u64);
                    sample_negatives_global(self.store, positives, cfg.m, &mut rng)
                })
                .collect(),
            NegativeStrategy::Bm25Hard => {
                let negs = sample_negatives_bm25(bm25_ranking, positives, cfg.m)?;
                Ok(alloc::vec![negs; positives.len()])
            }
            NegativeStrategy::SimAns => {
                let dense = self.dense.expect("checked in Labeler::new");
                let qv = dense.encode_query(&query.text);
                let pos_set: BTreeSet<&str> = positives.iter().map(String::as_str).collect();
                let candidates: Vec<ScoredDoc> = dense
                    .search_vector(&query.id, &qv, cfg.simans_pool + positives.len())?
                    .entries
                    .into_iter()
                    .filter(|e| !pos_set.contains(e.doc_id.as_str()))
                    .collect();
                let scored_pos = positives
                    .iter()
                    .map(|p| {
                        let ordinal = self.store.ordinal(p).ok_or_else(|| Error::UnknownDocument(p.clone()))?;
                        Ok(ScoredDoc {
                            doc_id: p.clone(),
                            score: dense.score(&qv, ordinal)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                (0..positives.len())
                    .map(|i| {
                        let mut rng = rng_for(cfg.seed, &query.id, i as u64);
                        sample_negatives_simans(&candidates, &scored_pos, cfg, &mut rng)
                    })
                    .collect()
            }
        }
    }

    /// Labels every query in order, dropping skipped ones.
    pub fn label_all(&self, queries: &[Query]) -> Result<Vec<QueryLabels>> {
        let mut out = Vec::with_capacity(queries.len());
        for q in queries {
            if let Some(l) = self.label(q)? {
                out.push(l);
            }
        }
        Ok(out)
    }

    /// Positives only, for queries that do not need negatives (dev queries).
    pub fn pseudo_qrels(&self, queries: &[Query]) -> Result<PseudoQrels> {
        let mut qrels = PseudoQrels::new();
        for q in queries {
            let (_, positives) = self.positives(q)?;
            if positives.is_empty() {
                warn!("query `{}`: empty re-ranked list, skipped", q.id);
                continue;
            }
            qrels.insert(q.id.clone(), positives)?;
        }
        Ok(qrels)
    }
}

pub fn labels_to_pseudo_qrels(labels: &[QueryLabels]) -> Result<PseudoQrels> {
    let mut qrels = PseudoQrels::new();
    for l in labels {
        qrels.insert(l.query_id.clone(), l.positives.clone())?;
    }
    Ok(qrels)
}
