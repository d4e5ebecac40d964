//! BLEU with clipped n-gram precisions and a brevity penalty.
//!
//! Sentence level: when an order `n ≥ 2` has no matching n-gram its
//! precision becomes `1 / (total + 1)`; a zero unigram precision is not
//! smoothed. Corpus level sums clipped counts and lengths over all pairs
//! before combining.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::TokenizerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BleuConfig {
    pub max_n: usize,
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self { max_n: 4 }
    }
}

impl BleuConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_n == 0 {
            return Err(Error::InvalidArgument("BLEU max_n must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Counts {
    matches: Vec<u64>,
    totals: Vec<u64>,
    hyp_len: u64,
    ref_len: u64,
}

fn ngrams(tokens: &[String], n: usize) -> BTreeMap<&[String], u64> {
    let mut m = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn counts(hyp: &str, reference: &str, max_n: usize) -> Counts {
    let tk = TokenizerConfig::default();
    let h = tk.tokenize(hyp);
    let r = tk.tokenize(reference);
    let mut matches = vec![0; max_n];
    let mut totals = vec![0; max_n];
    for n in 1..=max_n {
        let hn = ngrams(&h, n);
        let rn = ngrams(&r, n);
        for (gram, &c) in &hn {
            matches[n - 1] += c.min(rn.get(gram).copied().unwrap_or(0));
            totals[n - 1] += c;
        }
    }
    Counts {
        matches,
        totals,
        hyp_len: h.len() as u64,
        ref_len: r.len() as u64,
    }
}

fn combine(c: &Counts) -> f64 {
    if c.hyp_len == 0 || c.matches[0] == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for (n, (&m, &t)) in c.matches.iter().zip(&c.totals).enumerate() {
        let p = if m == 0 && n >= 1 {
            1.0 / (t as f64 + 1.0)
        } else {
            m as f64 / t as f64
        };
        log_sum += libm::log(p);
    }
    let geo = libm::exp(log_sum / c.matches.len() as f64);
    let bp = libm::exp(1.0 - c.ref_len as f64 / c.hyp_len as f64).min(1.0);
    (geo * bp).clamp(0.0, 1.0)
}

/// Sentence BLEU of `hypothesis` against one `reference`, in `[0, 1]`.
pub fn bleu(hypothesis: &str, reference: &str, cfg: &BleuConfig) -> f64 {
    combine(&counts(hypothesis, reference, cfg.max_n.max(1)))
}

/// Corpus BLEU over `(hypothesis, reference)` pairs.
pub fn corpus_bleu<H: AsRef<str>, R: AsRef<str>>(pairs: &[(H, R)], cfg: &BleuConfig) -> f64 {
    let max_n = cfg.max_n.max(1);
    let mut acc = Counts {
        matches: vec![0; max_n],
        totals: vec![0; max_n],
        hyp_len: 0,
        ref_len: 0,
    };
    for (h, r) in pairs {
        let c = counts(h.as_ref(), r.as_ref(), max_n);
        for n in 0..max_n {
            acc.matches[n] += c.matches[n];
            acc.totals[n] += c.totals[n];
        }
        acc.hyp_len += c.hyp_len;
        acc.ref_len += c.ref_len;
    }
    combine(&acc)
}
