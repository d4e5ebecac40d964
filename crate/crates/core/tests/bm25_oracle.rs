use std::collections::BTreeSet;

use proptest::prelude::*;
use pseudorel_core::{Bm25Params, Document, DocumentStore, InvertedIndex, Query, TokenizerConfig};

/// Straight-line BM25 over token lists: no index, no shared code.
fn brute_force(docs: &[Vec<String>], query: &[String], k1: f64, b: f64) -> Vec<(usize, f64)> {
    let n = docs.len() as f64;
    let avg = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let terms: BTreeSet<&String> = query.iter().collect();
    let mut out = Vec::new();
    for (i, d) in docs.iter().enumerate() {
        let mut s = 0.0;
        for t in &terms {
            let tf = d.iter().filter(|w| w == t).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let df = docs.iter().filter(|d| d.contains(t)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            s += idf * tf / (tf + k1 * (1.0 - b + b * d.len() as f64 / avg));
        }
        if s > 0.0 {
            out.push((i, s));
        }
    }
    out.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(format!("d{:02}", a.0).cmp(&format!("d{:02}", b.0)))
    });
    out
}

fn corpus() -> impl Strategy<Value = (Vec<Vec<String>>, Vec<String>)> {
    let word = (0u8..8).prop_map(|i| format!("t{i}"));
    (
        proptest::collection::vec(proptest::collection::vec(word.clone(), 0..12), 1..=20),
        proptest::collection::vec(word, 1..5),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn search_matches_brute_force((docs, query) in corpus(), k1 in 0.0f64..3.0, b in 0.0f64..=1.0) {
        let store = DocumentStore::from_documents(
            docs.iter().enumerate().map(|(i, d)| Document::new(format!("d{i:02}"), "", d.join(" "))),
        ).unwrap();
        let index = InvertedIndex::build(&store, &TokenizerConfig::default());
        let params = Bm25Params::new(k1, b).unwrap();
        let got = index.search(&params, &Query::new("q", query.join(" ")), 100);
        let expected = brute_force(&docs, &query, k1, b);
        prop_assert_eq!(got.entries.len(), expected.len());
        for (e, (i, s)) in got.entries.iter().zip(&expected) {
            prop_assert!((e.score - s).abs() <= 1e-9);
            // Order may differ only inside exact-score ties resolved by id.
            if (e.score - s).abs() > 0.0 {
                continue;
            }
            prop_assert_eq!(&e.doc_id, &format!("d{i:02}"));
        }
    }

    #[test]
    fn extra_occurrence_never_lowers_score(tf in 1usize..6, other in 0usize..6) {
        let mk = |n: usize| {
            let mut words = vec!["x"; n];
            words.extend(std::iter::repeat_n("y", other));
            words.join(" ")
        };
        // Same length: swap a filler for the query term.
        let store = DocumentStore::from_documents([
            Document::new("a", "", format!("{} z", mk(tf))),
            Document::new("b", "", mk(tf + 1)),
            Document::new("c", "", "y z w"),
        ]).unwrap();
        let index = InvertedIndex::build(&store, &TokenizerConfig::default());
        let q = vec![String::from("x")];
        let p = Bm25Params::default();
        prop_assert!(index.bm25_score(&p, &q, 1) > index.bm25_score(&p, &q, 0));
    }
}
