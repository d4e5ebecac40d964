use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

/// A ranked list for one query: score descending, ties by ascending doc id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRanking {
    pub query_id: String,
    pub entries: Vec<ScoredDoc>,
}

pub(crate) fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

impl ScoredRanking {
    /// Sorts into canonical order. Callers guarantee unique doc ids.
    pub fn from_unsorted(query_id: impl Into<String>, mut entries: Vec<ScoredDoc>) -> Self {
        entries.sort_by(|a, b| rank_order(a.score, &a.doc_id, b.score, &b.doc_id));
        Self {
            query_id: query_id.into(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    pub fn truncate(&mut self, n: usize) {
        self.entries.truncate(n);
    }
}
