//! Pseudo-relevance labeling for dense retrieval domain adaptation.
//!
//! The pipeline retrieves with BM25, re-ranks the top list with a cross
//! scorer, keeps the top `k` as pseudo-positives and mines `m` negatives per
//! positive (global random, BM25 hard, or SimANS). The resulting triplets
//! fine-tune a hashed dual encoder with a RankNet loss. A conversational
//! layer rewrites context-dependent queries before labeling.
//!
//! This crate is `no_std` and only needs `alloc`; file formats, remote
//! services and the command-line front end live in the `pseudorel` crate.

#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bm25;
pub mod conversation;
pub mod corpus;
pub mod dense;
pub mod error;
pub mod labeling;
pub mod metrics;
pub mod ranking;
pub mod scoring;
pub mod seed;
pub mod synth;
pub mod text;

pub use bm25::{Bm25Params, InvertedIndex};
pub use corpus::{split_queries, Document, DocumentStore, Qrels, Query, QuerySplit};
pub use dense::{DenseIndex, DualEncoder, EncoderConfig, Similarity, TrainConfig};
pub use error::{Error, Result};
pub use labeling::{DevSet, LabelingConfig, NegativeStrategy, PseudoQrels, QueryLabels, Triplet};
pub use ranking::{ScoredDoc, ScoredRanking};
pub use scoring::{CrossScorer, ScorerKind, ScorerLogits};
pub use text::TokenizerConfig;
