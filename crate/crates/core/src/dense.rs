//! Hashed bag-of-words dual encoder trained with a pairwise RankNet loss.
//!
//! A text is tokenized, truncated to [`MAX_SEQ_LEN`] tokens, each token is
//! hashed into one of `buckets` rows of an embedding table, and the rows are
//! mean-pooled. Queries and documents use separate tables unless the model
//! is tied.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::hash::Hasher;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use siphasher::sip::SipHasher13;

use crate::corpus::{DocumentStore, Query};
use crate::error::{Error, Result};
use crate::labeling::{DevSet, Triplet};
use crate::metrics::ndcg_at_k;
use crate::ranking::{ScoredDoc, ScoredRanking};
use crate::text::TokenizerConfig;

pub const MAX_SEQ_LEN: usize = 350;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    #[default]
    Dot,
    Cosine,
}

/// One embedding table, `buckets × dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    dim: usize,
    buckets: usize,
    hash_seed: u64,
    table: Vec<f64>,
}

impl EncoderParams {
    pub const DEFAULT_DIM: usize = 64;
    pub const DEFAULT_BUCKETS: usize = 1 << 16;

    /// Entries uniform in `[-0.5/dim, 0.5/dim]`.
    pub fn new_random(dim: usize, buckets: usize, hash_seed: u64, init_seed: u64) -> Result<Self> {
        check_shape(dim, buckets)?;
        let half = 0.5 / dim as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let table = (0..dim * buckets).map(|_| rng.gen_range(-half..=half)).collect();
        Ok(Self {
            dim,
            buckets,
            hash_seed,
            table,
        })
    }

    pub fn from_table(dim: usize, buckets: usize, hash_seed: u64, table: Vec<f64>) -> Result<Self> {
        check_shape(dim, buckets)?;
        if table.len() != dim * buckets {
            return Err(Error::DimensionMismatch {
                left: dim * buckets,
                right: table.len(),
            });
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding table"));
        }
        Ok(Self {
            dim,
            buckets,
            hash_seed,
            table,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn hash_seed(&self) -> u64 {
        self.hash_seed
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut [f64] {
        &mut self.table
    }

    pub fn bucket(&self, token: &str) -> usize {
        let mut h = SipHasher13::new_with_keys(self.hash_seed, 0);
        h.write(token.as_bytes());
        (h.finish() % self.buckets as u64) as usize
    }

    pub fn row(&self, bucket: usize) -> &[f64] {
        &self.table[bucket * self.dim..(bucket + 1) * self.dim]
    }

    pub fn row_mut(&mut self, bucket: usize) -> &mut [f64] {
        &mut self.table[bucket * self.dim..(bucket + 1) * self.dim]
    }

    pub fn scale(&mut self, c: f64) {
        self.table.iter_mut().for_each(|v| *v *= c);
    }

    fn token_buckets(&self, tokenizer: &TokenizerConfig, text: &str) -> Vec<usize> {
        let mut tokens = tokenizer.tokenize(text);
        tokens.truncate(MAX_SEQ_LEN);
        tokens.iter().map(|t| self.bucket(t)).collect()
    }

    fn mean_rows(&self, buckets: &[usize]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        if buckets.is_empty() {
            return v;
        }
        for &b in buckets {
            for (acc, x) in v.iter_mut().zip(self.row(b)) {
                *acc += x;
            }
        }
        let n = buckets.len() as f64;
        v.iter_mut().for_each(|x| *x /= n);
        v
    }
}

fn check_shape(dim: usize, buckets: usize) -> Result<()> {
    if dim == 0 || buckets == 0 {
        return Err(Error::InvalidArgument(format!(
            "encoder dim and buckets must be positive (dim={dim}, buckets={buckets})"
        )));
    }
    Ok(())
}

/// Mean of the hashed token rows; the zero vector for token-less text.
pub fn encode(params: &EncoderParams, tokenizer: &TokenizerConfig, text: &str) -> Vec<f64> {
    params.mean_rows(&params.token_buckets(tokenizer, text))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoder {
    pub query: EncoderParams,
    /// `None` when documents share the query table.
    pub doc: Option<EncoderParams>,
    pub similarity: Similarity,
}

impl DualEncoder {
    pub fn new(query: EncoderParams, doc: Option<EncoderParams>, similarity: Similarity) -> Result<Self> {
        if let Some(d) = &doc {
            if d.dim != query.dim {
                return Err(Error::DimensionMismatch {
                    left: query.dim,
                    right: d.dim,
                });
            }
        }
        Ok(Self { query, doc, similarity })
    }

    /// Seeded model; untied tables use different initialization streams.
    pub fn random(cfg: &EncoderConfig) -> Result<Self> {
        let query = EncoderParams::new_random(cfg.dim, cfg.buckets, cfg.hash_seed, cfg.init_seed)?;
        let doc = if cfg.tied {
            None
        } else {
            Some(EncoderParams::new_random(
                cfg.dim,
                cfg.buckets,
                cfg.hash_seed,
                cfg.init_seed ^ 0x9e37_79b9_7f4a_7c15,
            )?)
        };
        Self::new(query, doc, cfg.similarity)
    }

    pub fn is_tied(&self) -> bool {
        self.doc.is_none()
    }

    pub fn dim(&self) -> usize {
        self.query.dim
    }

    pub fn doc_encoder(&self) -> &EncoderParams {
        self.doc.as_ref().unwrap_or(&self.query)
    }

    pub fn encode_query(&self, tokenizer: &TokenizerConfig, text: &str) -> Vec<f64> {
        encode(&self.query, tokenizer, text)
    }

    pub fn encode_doc(&self, tokenizer: &TokenizerConfig, text: &str) -> Vec<f64> {
        encode(self.doc_encoder(), tokenizer, text)
    }

    pub fn scale(&mut self, c: f64) {
        self.query.scale(c);
        if let Some(d) = &mut self.doc {
            d.scale(c);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub dim: usize,
    pub buckets: usize,
    pub hash_seed: u64,
    pub init_seed: u64,
    pub tied: bool,
    pub similarity: Similarity,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: EncoderParams::DEFAULT_DIM,
            buckets: EncoderParams::DEFAULT_BUCKETS,
            hash_seed: 0,
            init_seed: 0,
            tied: true,
            similarity: Similarity::Dot,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Dot product or cosine; cosine involving a zero vector is 0.
pub fn rsv_dense(similarity: Similarity, q: &[f64], d: &[f64]) -> Result<f64> {
    if q.len() != d.len() {
        return Err(Error::DimensionMismatch {
            left: q.len(),
            right: d.len(),
        });
    }
    Ok(match similarity {
        Similarity::Dot => dot(q, d),
        Similarity::Cosine => {
            let (nq, nd) = (norm(q), norm(d));
            if nq == 0.0 || nd == 0.0 {
                0.0
            } else {
                dot(q, d) / (nq * nd)
            }
        }
    })
}

/// `ln(1 + exp(-sigma (s_pos - s_neg)))`.
pub fn ranknet_loss(s_pos: f64, s_neg: f64, sigma: f64) -> f64 {
    softplus(-sigma * (s_pos - s_neg))
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `lr0 · ½ (1 + cos(π · step / steps))`.
pub fn cosine_lr(lr0: f64, step: usize, steps: usize) -> f64 {
    if steps == 0 {
        return lr0;
    }
    lr0 * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * step as f64 / steps as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// RankNet scale.
    pub sigma: f64,
    pub eval_every: usize,
    /// Cutoff of the dev NDCG used for model selection.
    pub eval_k: usize,
    pub freeze_doc_encoder: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 8,
            steps: 6000,
            sigma: 1.0,
            eval_every: 100,
            eval_k: 10,
            freeze_doc_encoder: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Transformer fine-tuning schedule: batch 8, lr 2e-6, 10k steps.
    pub fn transformer_preset() -> Self {
        Self {
            learning_rate: 2e-6,
            steps: 10_000,
            ..Self::default()
        }
    }

    /// Conversational fine-tuning: 2000 steps, dev every 500, NDCG@3, frozen
    /// passage encoder.
    pub fn conversational_preset() -> Self {
        Self {
            steps: 2000,
            eval_every: 500,
            eval_k: 3,
            freeze_doc_encoder: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "invalid learning rate {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.eval_k == 0 {
            return Err(Error::InvalidArgument(
                "batch_size, eval_every and eval_k must be >= 1".into(),
            ));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be > 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Sparse per-row gradient. With a tied model every row lands in `query`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradient {
    pub query: BTreeMap<usize, Vec<f64>>,
    pub doc: BTreeMap<usize, Vec<f64>>,
}

#[derive(Debug, Clone)]
struct PreparedTriplet {
    query: Vec<usize>,
    pos: Vec<usize>,
    neg: Vec<usize>,
}

fn prepare(model: &DualEncoder, tokenizer: &TokenizerConfig, t: &Triplet) -> PreparedTriplet {
    let doc = model.doc_encoder();
    PreparedTriplet {
        query: model.query.token_buckets(tokenizer, &t.query),
        pos: doc.token_buckets(tokenizer, &t.positive),
        neg: doc.token_buckets(tokenizer, &t.negative),
    }
}

/// `(∂s/∂q, ∂s/∂d)` of the similarity at `(q, d)`.
fn similarity_grad(similarity: Similarity, q: &[f64], d: &[f64]) -> (Vec<f64>, Vec<f64>) {
    match similarity {
        Similarity::Dot => (d.to_vec(), q.to_vec()),
        Similarity::Cosine => {
            let (nq, nd) = (norm(q), norm(d));
            if nq == 0.0 || nd == 0.0 {
                return (vec![0.0; q.len()], vec![0.0; d.len()]);
            }
            let s = dot(q, d) / (nq * nd);
            let gq = q
                .iter()
                .zip(d)
                .map(|(qi, di)| di / (nq * nd) - s * qi / (nq * nq))
                .collect();
            let gd = q
                .iter()
                .zip(d)
                .map(|(qi, di)| qi / (nq * nd) - s * di / (nd * nd))
                .collect();
            (gq, gd)
        }
    }
}

fn scatter(target: &mut BTreeMap<usize, Vec<f64>>, buckets: &[usize], grad: &[f64]) {
    if buckets.is_empty() {
        return;
    }
    let n = buckets.len() as f64;
    for &b in buckets {
        let row = target.entry(b).or_insert_with(|| vec![0.0; grad.len()]);
        for (r, g) in row.iter_mut().zip(grad) {
            *r += g / n;
        }
    }
}

fn loss_and_gradient(model: &DualEncoder, batch: &[PreparedTriplet], sigma: f64) -> (f64, Gradient) {
    let mut grad = Gradient::default();
    let mut total = 0.0;
    let inv_b = 1.0 / batch.len() as f64;
    let doc_params = model.doc_encoder();
    for t in batch {
        let q = model.query.mean_rows(&t.query);
        let p = doc_params.mean_rows(&t.pos);
        let n = doc_params.mean_rows(&t.neg);
        // Equal lengths by construction.
        let sp = rsv_dense(model.similarity, &q, &p).unwrap_or(0.0);
        let sn = rsv_dense(model.similarity, &q, &n).unwrap_or(0.0);
        total += ranknet_loss(sp, sn, sigma);

        // dL/ds_pos = -sigma · sigmoid(-sigma · margin); dL/ds_neg is its negation.
        let g = -sigma * sigmoid(-sigma * (sp - sn)) * inv_b;
        let (dq_p, dp) = similarity_grad(model.similarity, &q, &p);
        let (dq_n, dn) = similarity_grad(model.similarity, &q, &n);
        let gq: Vec<f64> = dq_p.iter().zip(&dq_n).map(|(a, b)| g * (a - b)).collect();
        let gp: Vec<f64> = dp.iter().map(|x| g * x).collect();
        let gn: Vec<f64> = dn.iter().map(|x| -g * x).collect();

        scatter(&mut grad.query, &t.query, &gq);
        let doc_target = if model.is_tied() {
            &mut grad.query
        } else {
            &mut grad.doc
        };
        scatter(doc_target, &t.pos, &gp);
        scatter(doc_target, &t.neg, &gn);
    }
    (total * inv_b, grad)
}

/// Mean RankNet loss of the batch under the current model.
pub fn batch_loss(model: &DualEncoder, tokenizer: &TokenizerConfig, batch: &[Triplet], sigma: f64) -> f64 {
    let prepared: Vec<_> = batch.iter().map(|t| prepare(model, tokenizer, t)).collect();
    loss_and_gradient(model, &prepared, sigma).0
}

/// Analytic gradient of [`batch_loss`] with respect to every touched row.
pub fn batch_gradient(
    model: &DualEncoder,
    tokenizer: &TokenizerConfig,
    batch: &[Triplet],
    sigma: f64,
) -> (f64, Gradient) {
    let prepared: Vec<_> = batch.iter().map(|t| prepare(model, tokenizer, t)).collect();
    loss_and_gradient(model, &prepared, sigma)
}

fn apply(model: &mut DualEncoder, grad: &Gradient, lr: f64, freeze_doc: bool) {
    if lr == 0.0 {
        return;
    }
    for (&b, g) in &grad.query {
        for (w, gi) in model.query.row_mut(b).iter_mut().zip(g) {
            *w -= lr * gi;
        }
    }
    if freeze_doc {
        return;
    }
    if let Some(doc) = &mut model.doc {
        for (&b, g) in &grad.doc {
            for (w, gi) in doc.row_mut(b).iter_mut().zip(g) {
                *w -= lr * gi;
            }
        }
    }
}

fn check_freeze(model: &DualEncoder, cfg: &TrainConfig) -> Result<()> {
    if cfg.freeze_doc_encoder && model.is_tied() {
        return Err(Error::InvalidArgument(
            "freeze_doc_encoder needs separate query and document tables".into(),
        ));
    }
    Ok(())
}

fn step_prepared(model: &mut DualEncoder, batch: &[PreparedTriplet], cfg: &TrainConfig, step: usize) -> f64 {
    let (loss, grad) = loss_and_gradient(model, batch, cfg.sigma);
    apply(
        model,
        &grad,
        cosine_lr(cfg.learning_rate, step, cfg.steps),
        cfg.freeze_doc_encoder,
    );
    loss
}

/// One SGD update on the mean batch loss with the cosine-decayed rate for
/// `step`. Returns the pre-update loss.
pub fn train_step(
    model: &mut DualEncoder,
    tokenizer: &TokenizerConfig,
    batch: &[Triplet],
    cfg: &TrainConfig,
    step: usize,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    cfg.validate()?;
    check_freeze(model, cfg)?;
    let prepared: Vec<_> = batch.iter().map(|t| prepare(model, tokenizer, t)).collect();
    Ok(step_prepared(model, &prepared, cfg, step))
}

/// Mean NDCG@k over dev queries, ranking each query's positives and sampled
/// negatives by dense score. An empty dev set scores 0.
pub fn evaluate_dev(
    model: &DualEncoder,
    tokenizer: &TokenizerConfig,
    dev: &DevSet,
    store: &DocumentStore,
    k: usize,
) -> Result<f64> {
    if dev.queries.is_empty() {
        return Ok(0.0);
    }
    let mut cache: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut total = 0.0;
    for dq in &dev.queries {
        let qv = model.encode_query(tokenizer, &dq.query_text);
        let mut entries = Vec::with_capacity(dq.positives.len() + dq.negatives.len());
        for id in dq.positives.iter().chain(&dq.negatives) {
            if !cache.contains_key(id.as_str()) {
                let text = store.require(id)?.full_text();
                cache.insert(id.as_str(), model.encode_doc(tokenizer, &text));
            }
            entries.push(ScoredDoc {
                doc_id: id.clone(),
                score: rsv_dense(model.similarity, &qv, &cache[id.as_str()])?,
            });
        }
        let ranking = ScoredRanking::from_unsorted(dq.query_id.clone(), entries);
        let grades: BTreeMap<String, u32> = dq.positives.iter().map(|p| (p.clone(), 1)).collect();
        total += ndcg_at_k(&ranking, &grades, k);
    }
    Ok(total / dev.queries.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: DualEncoder,
    pub step: usize,
    pub dev_ndcg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub best: Checkpoint,
    /// Pre-update mean batch loss of every step.
    pub losses: Vec<f64>,
    /// `(step, dev NDCG@k)` for every evaluation, starting at step 0.
    pub evals: Vec<(usize, f64)>,
}

/// Runs `cfg.steps` SGD steps over seeded, per-epoch shuffled batches and
/// keeps the checkpoint with the highest dev NDCG@k (earliest on ties).
pub fn train(
    mut model: DualEncoder,
    tokenizer: &TokenizerConfig,
    triplets: &[Triplet],
    dev: &DevSet,
    store: &DocumentStore,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    check_freeze(&model, cfg)?;
    if triplets.is_empty() {
        return Err(Error::Empty("training triplets"));
    }
    let prepared: Vec<_> = triplets.iter().map(|t| prepare(&model, tokenizer, t)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;

    let initial = evaluate_dev(&model, tokenizer, dev, store, cfg.eval_k)?;
    let mut evals = vec![(0, initial)];
    let mut best = Checkpoint {
        model: model.clone(),
        step: 0,
        dev_ndcg: initial,
    };
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for step in 0..cfg.steps {
        batch.clear();
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(prepared[order[cursor]].clone());
            cursor += 1;
        }
        losses.push(step_prepared(&mut model, &batch, cfg, step));

        let done = step + 1;
        if done % cfg.eval_every == 0 || done == cfg.steps {
            let score = evaluate_dev(&model, tokenizer, dev, store, cfg.eval_k)?;
            evals.push((done, score));
            if score > best.dev_ndcg {
                best = Checkpoint {
                    model: model.clone(),
                    step: done,
                    dev_ndcg: score,
                };
            }
        }
    }
    Ok(TrainReport { best, losses, evals })
}

/// Pre-encoded documents of a store under a fixed model.
pub struct DenseIndex<'m> {
    model: &'m DualEncoder,
    tokenizer: TokenizerConfig,
    doc_ids: Vec<String>,
    vectors: Vec<f64>,
}

impl<'m> DenseIndex<'m> {
    pub fn build(model: &'m DualEncoder, tokenizer: &TokenizerConfig, store: &DocumentStore) -> Self {
        let dim = model.dim();
        let mut vectors = Vec::with_capacity(dim * store.len());
        for d in store {
            vectors.extend(model.encode_doc(tokenizer, &d.full_text()));
        }
        Self {
            model,
            tokenizer: tokenizer.clone(),
            doc_ids: store.iter().map(|d| d.id.clone()).collect(),
            vectors,
        }
    }

    pub fn model(&self) -> &DualEncoder {
        self.model
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn encode_query(&self, text: &str) -> Vec<f64> {
        self.model.encode_query(&self.tokenizer, text)
    }

    pub fn doc_vector(&self, ordinal: usize) -> &[f64] {
        let dim = self.model.dim();
        &self.vectors[ordinal * dim..(ordinal + 1) * dim]
    }

    pub fn score(&self, query_vec: &[f64], ordinal: usize) -> Result<f64> {
        rsv_dense(self.model.similarity, query_vec, self.doc_vector(ordinal))
    }

    /// Exhaustive scoring of every document.
    pub fn search_vector(&self, query_id: &str, query_vec: &[f64], top_n: usize) -> Result<ScoredRanking> {
        let entries = (0..self.len())
            .map(|i| {
                Ok(ScoredDoc {
                    doc_id: self.doc_ids[i].clone(),
                    score: self.score(query_vec, i)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut ranking = ScoredRanking::from_unsorted(query_id, entries);
        ranking.truncate(top_n);
        Ok(ranking)
    }

    pub fn search(&self, query: &Query, top_n: usize) -> Result<ScoredRanking> {
        self.search_vector(&query.id, &self.encode_query(&query.text), top_n)
    }
}

pub fn dense_search(
    model: &DualEncoder,
    tokenizer: &TokenizerConfig,
    store: &DocumentStore,
    query: &Query,
    top_n: usize,
) -> Result<ScoredRanking> {
    DenseIndex::build(model, tokenizer, store).search(query, top_n)
}
