//! Inverted index and BM25 retrieval.
//!
//! `IDF(w) = ln(1 + (N - df + 0.5) / (df + 0.5))`, which is never negative,
//! and a document scores
//! `Σ_{w ∈ q∩d} IDF(w) · tf / (k1 · (1 - b + b · l_d / l_avg) + tf)`.
//! Query terms are deduplicated before scoring.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{DocumentStore, Query};
use crate::error::{Error, Result};
use crate::ranking::{ScoredDoc, ScoredRanking};
use crate::text::TokenizerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self> {
        let p = Self { k1, b };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k1 >= 0.0 && self.k1.is_finite()) {
            return Err(Error::InvalidArgument(alloc::format!(
                "k1 must be >= 0, got {}",
                self.k1
            )));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidArgument(alloc::format!(
                "b must be in [0,1], got {}",
                self.b
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// On-disk shape of the index; document statistics are recomputed on load.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexRepr {
    tokenizer: TokenizerConfig,
    doc_ids: Vec<String>,
    doc_len: Vec<u32>,
    postings: BTreeMap<String, Vec<Posting>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IndexRepr", into = "IndexRepr")]
pub struct InvertedIndex {
    tokenizer: TokenizerConfig,
    doc_ids: Vec<String>,
    doc_len: Vec<u32>,
    avg_len: f64,
    postings: BTreeMap<String, Vec<Posting>>,
}

impl From<InvertedIndex> for IndexRepr {
    fn from(ix: InvertedIndex) -> Self {
        Self {
            tokenizer: ix.tokenizer,
            doc_ids: ix.doc_ids,
            doc_len: ix.doc_len,
            postings: ix.postings,
        }
    }
}

impl TryFrom<IndexRepr> for InvertedIndex {
    type Error = Error;

    fn try_from(r: IndexRepr) -> Result<Self> {
        let n = r.doc_ids.len();
        if r.doc_len.len() != n {
            return Err(Error::DimensionMismatch {
                left: n,
                right: r.doc_len.len(),
            });
        }
        let mut tf_sums = vec![0u64; n];
        for (term, list) in &r.postings {
            let mut prev: Option<u32> = None;
            for p in list {
                if p.doc as usize >= n || p.tf == 0 || prev.is_some_and(|q| q >= p.doc) {
                    return Err(Error::InvalidArgument(alloc::format!(
                        "corrupt posting list for term `{term}`"
                    )));
                }
                prev = Some(p.doc);
                tf_sums[p.doc as usize] += u64::from(p.tf);
            }
        }
        if tf_sums.iter().zip(&r.doc_len).any(|(&s, &l)| s != u64::from(l)) {
            return Err(Error::InvalidArgument(
                "posting frequencies disagree with document lengths".into(),
            ));
        }
        Ok(Self {
            avg_len: mean_len(&r.doc_len),
            tokenizer: r.tokenizer,
            doc_ids: r.doc_ids,
            doc_len: r.doc_len,
            postings: r.postings,
        })
    }
}

fn mean_len(lens: &[u32]) -> f64 {
    if lens.is_empty() {
        0.0
    } else {
        lens.iter().map(|&l| f64::from(l)).sum::<f64>() / lens.len() as f64
    }
}

impl InvertedIndex {
    pub fn build(store: &DocumentStore, tokenizer: &TokenizerConfig) -> Self {
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_ids = Vec::with_capacity(store.len());
        let mut doc_len = Vec::with_capacity(store.len());
        for (ordinal, doc) in store.iter().enumerate() {
            let tokens = tokenizer.tokenize(&doc.full_text());
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens.iter() {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: ordinal as u32,
                    tf: count,
                });
            }
            doc_ids.push(doc.id.clone());
            doc_len.push(tokens.len() as u32);
        }
        Self {
            avg_len: mean_len(&doc_len),
            tokenizer: tokenizer.clone(),
            doc_ids,
            doc_len,
            postings,
        }
    }

    pub fn tokenizer(&self) -> &TokenizerConfig {
        &self.tokenizer
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_id(&self, ordinal: usize) -> &str {
        &self.doc_ids[ordinal]
    }

    pub fn doc_len(&self, ordinal: usize) -> u32 {
        self.doc_len[ordinal]
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.df(term) as f64;
        libm::log(1.0 + (n - df + 0.5) / (df + 0.5))
    }

    fn term_weight(&self, params: &Bm25Params, idf: f64, tf: u32, ordinal: usize) -> f64 {
        let tf = f64::from(tf);
        let norm = 1.0 - params.b + params.b * f64::from(self.doc_len[ordinal]) / self.avg_len;
        idf * tf / (params.k1 * norm + tf)
    }

    /// Query terms in first-occurrence order, duplicates dropped.
    fn unique_terms(query: &[String]) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        query.iter().map(String::as_str).filter(|t| seen.insert(*t)).collect()
    }

    pub fn bm25_score(&self, params: &Bm25Params, query: &[String], ordinal: usize) -> f64 {
        let mut score = 0.0;
        for term in Self::unique_terms(query) {
            let list = self.postings(term);
            if let Ok(pos) = list.binary_search_by_key(&(ordinal as u32), |p| p.doc) {
                score += self.term_weight(params, self.idf(term), list[pos].tf, ordinal);
            }
        }
        score
    }

    /// Term-at-a-time accumulation over posting lists. Documents scoring
    /// zero are omitted.
    pub fn search_tokens(&self, params: &Bm25Params, query_id: &str, query: &[String], top_n: usize) -> ScoredRanking {
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        for term in Self::unique_terms(query) {
            let idf = self.idf(term);
            for p in self.postings(term) {
                *acc.entry(p.doc).or_insert(0.0) += self.term_weight(params, idf, p.tf, p.doc as usize);
            }
        }
        let entries = acc
            .into_iter()
            .filter(|&(_, s)| s > 0.0)
            .map(|(d, score)| ScoredDoc {
                doc_id: self.doc_ids[d as usize].clone(),
                score,
            })
            .collect();
        let mut ranking = ScoredRanking::from_unsorted(query_id, entries);
        ranking.truncate(top_n);
        ranking
    }

    pub fn search(&self, params: &Bm25Params, query: &Query, top_n: usize) -> ScoredRanking {
        let tokens = self.tokenizer.tokenize(&query.text);
        self.search_tokens(params, &query.id, &tokens, top_n)
    }
}
