//! Seeded synthetic end-to-end run: zero-shot baselines, pseudo-labeling
//! with each negative strategy, training, and test evaluation.

use std::time::Instant;

use log::info;
use pseudorel_core::dense::train;
use pseudorel_core::labeling::{build_dev_set, build_triplets, Labeler};
use pseudorel_core::metrics::{evaluate_run, Metric, RunFile};
use pseudorel_core::synth::{generate, SynthDataset};
use pseudorel_core::{
    CrossScorer, DenseIndex, DualEncoder, InvertedIndex, LabelingConfig, NegativeStrategy, Qrels, ScoredRanking,
};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::Result;

pub const REPORT_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub strategy: NegativeStrategy,
    pub labeled_queries: usize,
    pub triplets: usize,
    pub best_step: usize,
    pub best_dev_ndcg: f64,
    pub test_ndcg: f64,
    pub test_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub seed: u64,
    pub config_fingerprint: String,
    pub docs: usize,
    pub train_queries: usize,
    pub dev_queries: usize,
    pub test_queries: usize,
    pub k: usize,
    pub bm25_test_ndcg: f64,
    pub untrained_test_ndcg: f64,
    pub strategies: Vec<StrategyResult>,
}

impl SynthReport {
    pub fn result(&self, strategy: NegativeStrategy) -> Option<&StrategyResult> {
        self.strategies.iter().find(|r| r.strategy == strategy)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "seed {}  config {}  docs {}  queries {}/{}/{}\n",
            self.seed, self.config_fingerprint, self.docs, self.train_queries, self.dev_queries, self.test_queries
        );
        s.push_str(&format!(
            "{:<10}  {:>9}  {:>9}  {:>8}  {:>6}  {:>8}\n",
            "model",
            format!("ndcg@{}", self.k),
            "recall",
            "triplets",
            "step",
            "dev"
        ));
        s.push_str(&format!("{:<10}  {:>9.4}\n", "bm25", self.bm25_test_ndcg));
        s.push_str(&format!("{:<10}  {:>9.4}\n", "untrained", self.untrained_test_ndcg));
        for r in &self.strategies {
            s.push_str(&format!(
                "{:<10}  {:>9.4}  {:>9.4}  {:>8}  {:>6}  {:>8.4}\n",
                r.strategy.name(),
                r.test_ndcg,
                r.test_recall,
                r.triplets,
                r.best_step,
                r.best_dev_ndcg
            ));
        }
        s
    }
}

fn run_metrics(rankings: Vec<ScoredRanking>, qrels: &Qrels, recall_k: usize) -> (f64, f64) {
    let mut run = RunFile::new("synth");
    run.rankings = rankings;
    let report = evaluate_run(
        &run,
        qrels,
        &[Metric::Ndcg, Metric::Recall],
        &[REPORT_K, recall_k],
        false,
    );
    (
        report.mean(&Metric::Ndcg.key(REPORT_K)).unwrap_or(0.0),
        report.mean(&Metric::Recall.key(recall_k)).unwrap_or(0.0),
    )
}

fn dense_test(model: &DualEncoder, data: &SynthDataset, cfg: &PipelineConfig) -> Result<(f64, f64)> {
    let index = DenseIndex::build(model, &cfg.tokenizer, &data.store);
    let depth = cfg.experiment.test_depth;
    let rankings = data
        .test
        .iter()
        .map(|q| index.search(q, depth))
        .collect::<pseudorel_core::Result<Vec<_>>>()?;
    Ok(run_metrics(rankings, &data.qrels, depth))
}

/// Runs the whole experiment for one seed. `cfg.labeling.strategy` is
/// ignored in favour of `cfg.experiment.strategies`.
pub fn run_synth(cfg: &PipelineConfig, seed: u64, scorer: &dyn CrossScorer) -> Result<SynthReport> {
    let started = Instant::now();
    let data = generate(&cfg.experiment.synth, seed)?;
    let index = InvertedIndex::build(&data.store, &cfg.tokenizer);

    let depth = cfg.experiment.test_depth;
    let bm25_runs = data.test.iter().map(|q| index.search(&cfg.bm25, q, depth)).collect();
    let (bm25_ndcg, _) = run_metrics(bm25_runs, &data.qrels, depth);

    let mut enc = cfg.encoder.clone();
    enc.init_seed = seed;
    let initial = DualEncoder::random(&enc)?;
    let (untrained_ndcg, _) = dense_test(&initial, &data, cfg)?;
    info!("seed {seed}: bm25 {bm25_ndcg:.4}, untrained {untrained_ndcg:.4}");

    let initial_index = DenseIndex::build(&initial, &cfg.tokenizer, &data.store);

    // Dev positives are the top n_pos re-ranked documents.
    let dev_labeling = LabelingConfig {
        k: cfg.dev.n_pos,
        strategy: NegativeStrategy::GlobalRandom,
        seed,
        ..cfg.labeling.clone()
    };
    let dev_labeler = Labeler::new(&data.store, &index, cfg.bm25, scorer, None, dev_labeling)?;
    let dev_qrels = dev_labeler.pseudo_qrels(&data.dev)?;
    let dev = build_dev_set(&data.dev, &dev_qrels, &data.store, cfg.dev.n_pos, cfg.dev.n_neg, seed)?;

    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = seed;
    let mut strategies = Vec::new();
    for &strategy in &cfg.experiment.strategies {
        let labeling = LabelingConfig {
            strategy,
            seed,
            ..cfg.labeling.clone()
        };
        let labeler = Labeler::new(&data.store, &index, cfg.bm25, scorer, Some(&initial_index), labeling)?;
        let labels = labeler.label_all(&data.train)?;
        let triplets = build_triplets(&data.store, &labels)?;
        let report = train(
            initial.clone(),
            &cfg.tokenizer,
            &triplets,
            &dev,
            &data.store,
            &train_cfg,
        )?;
        let (test_ndcg, test_recall) = dense_test(&report.best.model, &data, cfg)?;
        info!(
            "seed {seed}: {} -> test ndcg@{REPORT_K} {test_ndcg:.4} (best step {}, dev {:.4})",
            strategy.name(),
            report.best.step,
            report.best.dev_ndcg
        );
        strategies.push(StrategyResult {
            strategy,
            labeled_queries: labels.len(),
            triplets: triplets.len(),
            best_step: report.best.step,
            best_dev_ndcg: report.best.dev_ndcg,
            test_ndcg,
            test_recall,
        });
    }
    info!("seed {seed}: finished in {:.1}s", started.elapsed().as_secs_f64());
    Ok(SynthReport {
        seed,
        config_fingerprint: cfg.fingerprint(),
        docs: data.store.len(),
        train_queries: data.train.len(),
        dev_queries: data.dev.len(),
        test_queries: data.test.len(),
        k: REPORT_K,
        bm25_test_ndcg: bm25_ndcg,
        untrained_test_ndcg: untrained_ndcg,
        strategies,
    })
}
