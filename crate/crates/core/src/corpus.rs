//! Documents, queries, relevance judgments and query splitting.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            text: text.into(),
        }
    }

    /// Title and body joined by a single space; the body alone when the
    /// title is empty. This is the text every scorer and encoder sees.
    pub fn full_text(&self) -> String {
        if self.title.is_empty() {
            self.text.clone()
        } else {
            let mut s = String::with_capacity(self.title.len() + 1 + self.text.len());
            s.push_str(&self.title);
            s.push(' ');
            s.push_str(&self.text);
            s
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// Insertion-ordered document collection with unique, non-empty ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DocumentStore {
    docs: Vec<Document>,
    by_id: BTreeMap<String, usize>,
}

impl DocumentStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_documents(docs: impl IntoIterator<Item = Document>) -> Result<Self> {
        let mut store = Self::new();
        for d in docs {
            store.push(d)?;
        }
        Ok(store)
    }

    pub fn push(&mut self, doc: Document) -> Result<usize> {
        if doc.id.is_empty() {
            return Err(Error::InvalidArgument("document id must be non-empty".into()));
        }
        if self.by_id.contains_key(&doc.id) {
            return Err(Error::DuplicateId(doc.id));
        }
        let ordinal = self.docs.len();
        self.by_id.insert(doc.id.clone(), ordinal);
        self.docs.push(doc);
        Ok(ordinal)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }

    pub fn require(&self, id: &str) -> Result<&Document> {
        self.get(id).ok_or_else(|| Error::UnknownDocument(id.into()))
    }

    pub fn ordinal(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn by_ordinal(&self, ordinal: usize) -> &Document {
        &self.docs[ordinal]
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Document> {
        self.docs.iter()
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }
}

impl<'a> IntoIterator for &'a DocumentStore {
    type Item = &'a Document;
    type IntoIter = core::slice::Iter<'a, Document>;
    fn into_iter(self) -> Self::IntoIter {
        self.docs.iter()
    }
}

pub fn ensure_unique_queries(queries: &[Query]) -> Result<()> {
    let mut seen = BTreeMap::new();
    for q in queries {
        if seen.insert(q.id.as_str(), ()).is_some() {
            return Err(Error::DuplicateId(q.id.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QrelEntry<'a> {
    pub query_id: &'a str,
    pub doc_id: &'a str,
    pub grade: u32,
}

/// Graded judgments, `query_id -> doc_id -> grade`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rejects a repeated `(query_id, doc_id)` pair.
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) -> Result<()> {
        let per_query = self.judgments.entry(query_id.into()).or_default();
        if per_query.contains_key(doc_id) {
            return Err(Error::DuplicateId(alloc::format!("{query_id}/{doc_id}")));
        }
        per_query.insert(doc_id.into(), grade);
        Ok(())
    }

    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entries sorted by `(query_id, doc_id)`.
    pub fn entries(&self) -> impl Iterator<Item = QrelEntry<'_>> {
        self.judgments.iter().flat_map(|(q, docs)| {
            docs.iter().map(move |(d, &g)| QrelEntry {
                query_id: q,
                doc_id: d,
                grade: g,
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySplit {
    pub train: Vec<Query>,
    pub dev: Vec<Query>,
    pub seed: u64,
}

/// Moves `dev_count` queries, chosen by a seeded shuffle, into the dev split.
/// Both halves keep the input order.
pub fn split_queries(queries: &[Query], dev_count: usize, seed: u64) -> Result<QuerySplit> {
    if dev_count > queries.len() {
        return Err(Error::InvalidArgument(alloc::format!(
            "dev_count {dev_count} exceeds {} queries",
            queries.len()
        )));
    }
    let mut order: Vec<usize> = (0..queries.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_dev = alloc::vec![false; queries.len()];
    for &i in &order[..dev_count] {
        is_dev[i] = true;
    }
    let (dev, train): (Vec<_>, Vec<_>) = queries.iter().zip(&is_dev).partition(|(_, &dev)| dev);
    Ok(QuerySplit {
        train: train.into_iter().map(|(q, _)| q.clone()).collect(),
        dev: dev.into_iter().map(|(q, _)| q.clone()).collect(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn queries(n: usize) -> Vec<Query> {
        (0..n)
            .map(|i| Query::new(format!("q{i}"), format!("text {i}")))
            .collect()
    }

    #[test]
    fn store_rejects_duplicates_and_empty_ids() {
        let mut s = DocumentStore::new();
        s.push(Document::new("a", "", "x")).unwrap();
        assert_eq!(s.push(Document::new("a", "", "y")), Err(Error::DuplicateId("a".into())));
        assert!(s.push(Document::new("", "", "y")).is_err());
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn full_text_prepends_title() {
        assert_eq!(Document::new("a", "T", "body").full_text(), "T body");
        assert_eq!(Document::new("a", "", "body").full_text(), "body");
    }

    #[test]
    fn split_counts_match_fiqa_table() {
        let qs = queries(6000);
        let split = split_queries(&qs, 40, 13).unwrap();
        assert_eq!(split.train.len(), 5960);
        assert_eq!(split.dev.len(), 40);
    }

    #[test]
    fn split_zero_dev_is_identity() {
        let qs = queries(10);
        let split = split_queries(&qs, 0, 1).unwrap();
        assert!(split.dev.is_empty());
        assert_eq!(split.train, qs);
    }

    #[test]
    fn split_rejects_out_of_range() {
        assert!(split_queries(&queries(3), 4, 0).is_err());
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let qs = queries(50);
        let a = split_queries(&qs, 7, 99).unwrap();
        let b = split_queries(&qs, 7, 99).unwrap();
        assert_eq!(a, b);
        let mut ids: Vec<_> = a.train.iter().chain(&a.dev).map(|q| q.id.clone()).collect();
        ids.sort();
        let mut expected: Vec<_> = qs.iter().map(|q| q.id.clone()).collect();
        expected.sort();
        assert_eq!(ids, expected);
        assert_ne!(a.dev, split_queries(&qs, 7, 100).unwrap().dev);
    }

    #[test]
    fn qrels_reject_duplicate_pairs() {
        let mut q = Qrels::new();
        q.insert("q", "d", 1).unwrap();
        assert!(q.insert("q", "d", 2).is_err());
        q.insert("q", "e", 0).unwrap();
        assert_eq!(q.len(), 2);
        let e: Vec<_> = q.entries().map(|e| (e.doc_id, e.grade)).collect();
        assert_eq!(e, vec![("d", 1), ("e", 0)]);
    }
}
