//! Seeded synthetic retrieval benchmark.
//!
//! Every query carries a rare topic token shared with exactly its relevant
//! documents, plus a few facet words. Each query also gets distractor
//! documents containing all of its facets but not its topic token, so
//! term overlap alone cannot separate relevant from distracting documents.
//! The remaining documents are background noise drawn from the same facet
//! and filler vocabularies.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, DocumentStore, Qrels, Query};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_docs: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub min_relevant: usize,
    pub max_relevant: usize,
    pub distractors_per_query: usize,
    pub facet_vocab: usize,
    pub facets_per_query: usize,
    pub filler_vocab: usize,
    pub filler_per_doc: usize,
    pub filler_per_query: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_docs: 2000,
            n_train: 200,
            n_dev: 50,
            n_test: 50,
            min_relevant: 2,
            max_relevant: 4,
            distractors_per_query: 2,
            facet_vocab: 80,
            facets_per_query: 3,
            filler_vocab: 400,
            filler_per_doc: 16,
            filler_per_query: 1,
        }
    }
}

impl SynthConfig {
    pub fn n_queries(&self) -> usize {
        self.n_train + self.n_dev + self.n_test
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub store: DocumentStore,
    pub train: Vec<Query>,
    pub dev: Vec<Query>,
    pub test: Vec<Query>,
    /// True judgments for every query (grade 1).
    pub qrels: Qrels,
}

struct Vocab {
    facets: Vec<String>,
    fillers: Vec<String>,
    // Zipf-like cumulative weights over fillers.
    filler_cdf: Vec<f64>,
}

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ne", "ru", "sa", "to", "vi", "be", "da", "fu", "go", "hi", "ju", "pe", "zo",
];

fn word(prefix: &str, i: usize) -> String {
    let mut w = String::from(prefix);
    let mut x = i;
    loop {
        w.push_str(SYLLABLES[x % SYLLABLES.len()]);
        x /= SYLLABLES.len();
        if x == 0 {
            break;
        }
    }
    w
}

impl Vocab {
    fn new(cfg: &SynthConfig) -> Self {
        let mut filler_cdf = Vec::with_capacity(cfg.filler_vocab);
        let mut acc = 0.0;
        for r in 0..cfg.filler_vocab {
            acc += 1.0 / (r as f64 + 1.0);
            filler_cdf.push(acc);
        }
        Self {
            facets: (0..cfg.facet_vocab).map(|i| word("f", i)).collect(),
            fillers: (0..cfg.filler_vocab).map(|i| word("w", i)).collect(),
            filler_cdf,
        }
    }

    fn filler<R: Rng>(&self, rng: &mut R) -> &str {
        let total = *self.filler_cdf.last().expect("non-empty filler vocabulary");
        let u = rng.gen::<f64>() * total;
        let i = self.filler_cdf.partition_point(|&c| c <= u).min(self.fillers.len() - 1);
        &self.fillers[i]
    }
}

fn topic_token(i: usize) -> String {
    format!("topic{}", word("x", i))
}

pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<SynthDataset> {
    if cfg.facets_per_query > cfg.facet_vocab
        || cfg.min_relevant == 0
        || cfg.min_relevant > cfg.max_relevant
        || cfg.filler_vocab == 0
    {
        return Err(Error::InvalidArgument("inconsistent synthetic configuration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = Vocab::new(cfg);
    let nq = cfg.n_queries();

    // (text, relevant query index)
    let mut docs: Vec<(String, Option<usize>)> = Vec::with_capacity(cfg.n_docs);
    let mut queries = Vec::with_capacity(nq);
    let fill = |rng: &mut ChaCha8Rng, words: &mut Vec<String>, n: usize| {
        for _ in 0..n {
            words.push(vocab.filler(rng).into());
        }
    };

    for qi in 0..nq {
        let topic = topic_token(qi);
        let facets: Vec<&String> = vocab.facets.choose_multiple(&mut rng, cfg.facets_per_query).collect();

        let mut qwords: Vec<String> = facets.iter().map(|f| (*f).clone()).collect();
        qwords.push(topic.clone());
        fill(&mut rng, &mut qwords, cfg.filler_per_query);
        qwords.shuffle(&mut rng);
        queries.push(qwords.join(" "));

        let n_rel = rng.gen_range(cfg.min_relevant..=cfg.max_relevant);
        for _ in 0..n_rel {
            let mut w: Vec<String> = facets.iter().map(|f| (*f).clone()).collect();
            for _ in 0..rng.gen_range(1..=2) {
                w.push(topic.clone());
            }
            fill(&mut rng, &mut w, cfg.filler_per_doc);
            w.shuffle(&mut rng);
            docs.push((w.join(" "), Some(qi)));
        }
        for _ in 0..cfg.distractors_per_query {
            let mut w: Vec<String> = facets.iter().map(|f| (*f).clone()).collect();
            w.push(vocab.facets[rng.gen_range(0..vocab.facets.len())].clone());
            fill(&mut rng, &mut w, cfg.filler_per_doc + 1);
            w.shuffle(&mut rng);
            docs.push((w.join(" "), None));
        }
    }
    if docs.len() > cfg.n_docs {
        return Err(Error::InvalidArgument(format!(
            "relevant and distractor documents ({}) exceed n_docs {}",
            docs.len(),
            cfg.n_docs
        )));
    }
    while docs.len() < cfg.n_docs {
        let n_facets = rng.gen_range(2..=4).min(vocab.facets.len());
        let mut w: Vec<String> = vocab.facets.choose_multiple(&mut rng, n_facets).cloned().collect();
        let n = cfg.filler_per_doc + rng.gen_range(0..=2);
        fill(&mut rng, &mut w, n);
        w.shuffle(&mut rng);
        docs.push((w.join(" "), None));
    }
    docs.shuffle(&mut rng);

    let mut store = DocumentStore::new();
    let mut qrels = Qrels::new();
    for (i, (text, rel)) in docs.into_iter().enumerate() {
        let id = format!("doc{i:05}");
        if let Some(qi) = rel {
            qrels.insert(&format!("q{qi:04}"), &id, 1)?;
        }
        store.push(Document::new(id, "", text))?;
    }
    let mut all: Vec<Query> = queries
        .into_iter()
        .enumerate()
        .map(|(i, t)| Query::new(format!("q{i:04}"), t))
        .collect();
    let test = all.split_off(cfg.n_train + cfg.n_dev);
    let dev = all.split_off(cfg.n_train);
    Ok(SynthDataset {
        store,
        train: all,
        dev,
        test,
        qrels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_topic_exclusivity() {
        let cfg = SynthConfig::default();
        let ds = generate(&cfg, 3).unwrap();
        assert_eq!(ds.store.len(), 2000);
        assert_eq!((ds.train.len(), ds.dev.len(), ds.test.len()), (200, 50, 50));
        let tk = crate::text::TokenizerConfig::default();
        for q in ds.train.iter().chain(&ds.dev).chain(&ds.test) {
            let topic = tk
                .tokenize(&q.text)
                .into_iter()
                .find(|t| t.starts_with("topic"))
                .unwrap();
            let judged = ds.qrels.for_query(&q.id).unwrap();
            assert!((cfg.min_relevant..=cfg.max_relevant).contains(&judged.len()));
            for d in ds.store.iter() {
                let has = tk.tokenize(&d.text).contains(&topic);
                assert_eq!(has, judged.contains_key(&d.id), "{} / {}", q.id, d.id);
            }
        }
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig::default();
        assert_eq!(generate(&cfg, 9).unwrap(), generate(&cfg, 9).unwrap());
        assert_ne!(generate(&cfg, 9).unwrap().store, generate(&cfg, 10).unwrap().store);
    }
}
