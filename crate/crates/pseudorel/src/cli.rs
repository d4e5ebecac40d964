//! Command-line entry point: argument parsing and subcommand dispatch.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use pseudorel_core::conversation::{
    build_cdr_labels, corpus_bleu, rewrite, CopyRewriter, PronounSubRewriter, QueryRewriter, RewriterKind,
};
use pseudorel_core::dense::train;
use pseudorel_core::labeling::{build_dev_set, build_triplets, labels_to_pseudo_qrels, Labeler, PseudoQrels};
use pseudorel_core::metrics::{evaluate_run, RunFile};
use pseudorel_core::scoring::{rerank, FirstStagePassthrough, LexicalCrossScorer};
use pseudorel_core::synth::generate;
use pseudorel_core::{
    split_queries, CrossScorer, DenseIndex, DocumentStore, DualEncoder, InvertedIndex, NegativeStrategy, Query,
    ScorerKind,
};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::experiment::{run_synth, SynthReport};
use crate::io::{self, CheckpointFile};
use crate::remote::{RemoteRewriter, RemoteScorer};

#[derive(Debug, Parser)]
#[command(
    name = "pseudorel",
    version,
    about = "Pseudo-relevance labeling and dense retriever training"
)]
pub struct Cli {
    /// JSON pipeline configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Sets every seed (labeling, training, encoder init).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Negative sampling: global, bm25 or simans.
    #[arg(long, global = true, value_parser = parse_strategy)]
    pub strategy: Option<NegativeStrategy>,
    /// Re-ranker for pseudo labels: bm25, lexical or remote.
    #[arg(long, global = true, value_parser = parse_scorer)]
    pub scorer: Option<ScorerKind>,
    /// Base URL of the scoring / rewriting service.
    #[arg(long, global = true)]
    pub remote_url: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_strategy(s: &str) -> std::result::Result<NegativeStrategy, String> {
    s.parse().map_err(|e: pseudorel_core::Error| e.to_string())
}

fn parse_scorer(s: &str) -> std::result::Result<ScorerKind, String> {
    match s {
        "bm25" => Ok(ScorerKind::Bm25Passthrough),
        "lexical" => Ok(ScorerKind::LexicalCross),
        "remote" => Ok(ScorerKind::Remote),
        other => Err(format!("unknown scorer `{other}` (expected bm25, lexical or remote)")),
    }
}

fn parse_rewriter(s: &str) -> std::result::Result<RewriterKind, String> {
    s.parse().map_err(|e: pseudorel_core::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Corpus JSONL (`_id`, `title`, `text`).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Prebuilt index; built from the corpus when absent.
    #[arg(long)]
    pub index: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a BM25 index.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// BM25 retrieval into a TREC run.
    Search {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Re-score the top of a run with the configured cross-scorer.
    Rerank {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Pseudo-relevance labels (top-k re-ranked documents) as qrels.
    Label {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of positives; defaults to `labeling.k`.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Pseudo-labeled training triplets.
    Triplets {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Encoder scoring SimANS candidates; untrained when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also write the positives as qrels.
        #[arg(long)]
        qrels_out: Option<PathBuf>,
    },
    /// Dev set of pseudo positives and random negatives per query.
    DevSet {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Pseudo qrels of the dev queries.
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split queries into train and dev.
    Split {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        dev_count: Option<usize>,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        dev_out: PathBuf,
    },
    /// Train the dual encoder on triplets with dev-based model selection.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        triplets: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Start from this checkpoint instead of a fresh encoder.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Loss and dev-score trace as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Exhaustive dense retrieval into a TREC run.
    DenseSearch {
        #[arg(long)]
        corpus: PathBuf,
        /// Encoder to use; untrained when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Evaluate a run against qrels.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        /// JSON report; the text table always goes to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        strict: bool,
    },
    /// Rewrite conversational turns into standalone queries (JSONL).
    Rewrite {
        #[arg(long)]
        topics: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_rewriter)]
        rewriter: Option<RewriterKind>,
        /// Gold rewrites (queries JSONL keyed `{topic}_{turn}`) for BLEU.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// BLEU report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Conversational triplets whose query field is the raw turn history.
    CdrTriplets {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        topics: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_rewriter)]
        rewriter: Option<RewriterKind>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Synthetic end-to-end experiment comparing negative strategies.
    SynthE2e {
        /// JSON report; the text table goes to standard output.
        #[arg(long)]
        out: PathBuf,
        /// Number of consecutive seeds starting at `--seed` (default 0).
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Also write the first seed's corpus, query splits and qrels here.
        #[arg(long)]
        data_out: Option<PathBuf>,
    },
}

impl Cli {
    /// Loads the configuration and applies flag overrides.
    pub fn resolve_config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.set_seed(seed);
        }
        if let Some(s) = self.strategy {
            cfg.labeling.strategy = s;
            cfg.experiment.strategies = vec![s];
        }
        if let Some(s) = self.scorer {
            cfg.scorer = s;
        }
        if let Some(url) = &self.remote_url {
            cfg.remote.base_url = url.clone();
        }
        if let Command::Rewrite { rewriter: Some(r), .. } | Command::CdrTriplets { rewriter: Some(r), .. } =
            &self.command
        {
            cfg.rewriter = *r;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn build_scorer(cfg: &PipelineConfig) -> Box<dyn CrossScorer> {
    match cfg.scorer {
        ScorerKind::Bm25Passthrough => Box::new(FirstStagePassthrough),
        ScorerKind::LexicalCross => Box::new(LexicalCrossScorer {
            tokenizer: cfg.tokenizer.clone(),
        }),
        ScorerKind::Remote => Box::new(RemoteScorer {
            config: cfg.remote.clone(),
        }),
    }
}

fn load_index(args: &CorpusArgs, store: &DocumentStore, cfg: &PipelineConfig) -> Result<InvertedIndex> {
    match &args.index {
        Some(p) => {
            let index = io::read_index(p, Some(&cfg.tokenizer))?;
            if index.doc_count() != store.len() {
                return Err(CliError::file(
                    p,
                    format!(
                        "index covers {} documents, corpus has {}",
                        index.doc_count(),
                        store.len()
                    ),
                ));
            }
            Ok(index)
        }
        None => Ok(InvertedIndex::build(store, &cfg.tokenizer)),
    }
}

fn load_model(checkpoint: Option<&Path>, cfg: &PipelineConfig) -> Result<DualEncoder> {
    match checkpoint {
        Some(p) => Ok(io::read_checkpoint(p)?.model),
        None => Ok(DualEncoder::random(&cfg.encoder)?),
    }
}

fn query_map(queries: &[Query]) -> BTreeMap<&str, &str> {
    queries.iter().map(|q| (q.id.as_str(), q.text.as_str())).collect()
}

fn print_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| CliError::file("<stdout>", e))
}

#[derive(Serialize)]
struct TrainTrace {
    best_step: usize,
    best_dev_ndcg: f64,
    evals: Vec<(usize, f64)>,
    losses: Vec<f64>,
}

#[derive(Serialize)]
struct BleuReport {
    rewriter: RewriterKind,
    max_n: usize,
    pairs: usize,
    corpus_bleu: f64,
    mean_sentence_bleu: f64,
}

#[derive(Serialize)]
struct SynthSummary {
    config_fingerprint: String,
    runs: Vec<SynthReport>,
}

fn write_synth_data(dir: &Path, cfg: &PipelineConfig, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::file(dir, e))?;
    let data = generate(&cfg.experiment.synth, seed)?;
    io::write_corpus(&dir.join("corpus.jsonl"), &data.store)?;
    io::write_queries(&dir.join("train.jsonl"), &data.train)?;
    io::write_queries(&dir.join("dev.jsonl"), &data.dev)?;
    io::write_queries(&dir.join("test.jsonl"), &data.test)?;
    io::write_qrels(&dir.join("qrels.tsv"), &data.qrels)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.resolve_config()?;
    info!("config fingerprint {}", cfg.fingerprint());
    match &cli.command {
        Command::Index { corpus, out } => {
            let store = io::read_corpus(corpus)?;
            let index = InvertedIndex::build(&store, &cfg.tokenizer);
            io::write_index(out, &index)?;
            info!("indexed {} documents, {} terms", store.len(), index.terms().count());
        }
        Command::Search {
            index,
            queries,
            out,
            depth,
        } => {
            let index = io::read_index(index, Some(&cfg.tokenizer))?;
            let queries = io::read_queries(queries)?;
            let depth = depth.unwrap_or(cfg.eval.run_depth);
            let mut run = RunFile::new("bm25");
            run.rankings = queries.iter().map(|q| index.search(&cfg.bm25, q, depth)).collect();
            io::write_run(out, &run)?;
        }
        Command::Rerank {
            corpus,
            queries,
            run,
            out,
            depth,
        } => {
            let store = io::read_corpus(corpus)?;
            let queries = io::read_queries(queries)?;
            let texts = query_map(&queries);
            let input = io::read_run(run)?;
            let scorer = build_scorer(&cfg);
            let depth = depth.unwrap_or(cfg.labeling.retrieval_depth);
            let mut output = RunFile::new("rerank");
            for r in &input.rankings {
                let text = texts
                    .get(r.query_id.as_str())
                    .ok_or_else(|| CliError::file(run, format!("query `{}` not in the query file", r.query_id)))?;
                output.rankings.push(rerank(r, text, scorer.as_ref(), depth, &store)?);
            }
            io::write_run(out, &output)?;
        }
        Command::Label {
            corpus,
            queries,
            out,
            k,
        } => {
            let store = io::read_corpus(&corpus.corpus)?;
            let index = load_index(corpus, &store, &cfg)?;
            let queries = io::read_queries(queries)?;
            let scorer = build_scorer(&cfg);
            let mut labeling = cfg.labeling.clone();
            labeling.k = k.unwrap_or(labeling.k);
            labeling.strategy = NegativeStrategy::GlobalRandom;
            let labeler = Labeler::new(&store, &index, cfg.bm25, scorer.as_ref(), None, labeling)?;
            let qrels = labeler.pseudo_qrels(&queries)?;
            io::write_qrels(out, &qrels.to_qrels())?;
            info!("labeled {} of {} queries", qrels.len(), queries.len());
        }
        Command::Triplets {
            corpus,
            queries,
            out,
            checkpoint,
            qrels_out,
        } => {
            let store = io::read_corpus(&corpus.corpus)?;
            let index = load_index(corpus, &store, &cfg)?;
            let queries = io::read_queries(queries)?;
            let scorer = build_scorer(&cfg);
            let model = load_model(checkpoint.as_deref(), &cfg)?;
            let dense = DenseIndex::build(&model, &cfg.tokenizer, &store);
            let labeler = Labeler::new(
                &store,
                &index,
                cfg.bm25,
                scorer.as_ref(),
                Some(&dense),
                cfg.labeling.clone(),
            )?;
            let labels = labeler.label_all(&queries)?;
            let triplets = build_triplets(&store, &labels)?;
            io::write_triplets(out, &triplets)?;
            if let Some(p) = qrels_out {
                io::write_qrels(p, &labels_to_pseudo_qrels(&labels)?.to_qrels())?;
            }
            info!(
                "{} triplets from {} of {} queries ({})",
                triplets.len(),
                labels.len(),
                queries.len(),
                cfg.labeling.strategy.name()
            );
        }
        Command::DevSet {
            corpus,
            queries,
            qrels,
            out,
        } => {
            let store = io::read_corpus(corpus)?;
            let queries = io::read_queries(queries)?;
            let pseudo = PseudoQrels::from_qrels(&io::read_qrels(qrels)?);
            let dev = build_dev_set(
                &queries,
                &pseudo,
                &store,
                cfg.dev.n_pos,
                cfg.dev.n_neg,
                cfg.labeling.seed,
            )?;
            io::write_json(out, &dev)?;
            info!("dev set with {} queries", dev.queries.len());
        }
        Command::Split {
            queries,
            dev_count,
            train_out,
            dev_out,
        } => {
            let queries = io::read_queries(queries)?;
            let split = split_queries(&queries, dev_count.unwrap_or(cfg.dev.dev_count), cfg.labeling.seed)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            io::write_queries(train_out, &split.train)?;
            io::write_queries(dev_out, &split.dev)?;
        }
        Command::Train {
            corpus,
            triplets,
            dev,
            out,
            init,
            report,
        } => {
            let store = io::read_corpus(corpus)?;
            let triplets = io::read_triplets(triplets)?;
            let dev = io::read_dev_set(dev)?;
            let model = load_model(init.as_deref(), &cfg)?;
            let trace = train(model, &cfg.tokenizer, &triplets, &dev, &store, &cfg.train)?;
            info!(
                "best dev ndcg@{} {:.4} at step {}",
                cfg.train.eval_k, trace.best.dev_ndcg, trace.best.step
            );
            io::write_checkpoint(
                out,
                &CheckpointFile {
                    model: trace.best.model,
                    step: trace.best.step as u64,
                    dev_ndcg: trace.best.dev_ndcg,
                },
            )?;
            if let Some(p) = report {
                io::write_json(
                    p,
                    &TrainTrace {
                        best_step: trace.best.step,
                        best_dev_ndcg: trace.best.dev_ndcg,
                        evals: trace.evals,
                        losses: trace.losses,
                    },
                )?;
            }
        }
        Command::DenseSearch {
            corpus,
            checkpoint,
            queries,
            out,
            depth,
        } => {
            let store = io::read_corpus(corpus)?;
            let model = load_model(checkpoint.as_deref(), &cfg)?;
            let queries = io::read_queries(queries)?;
            let dense = DenseIndex::build(&model, &cfg.tokenizer, &store);
            let depth = depth.unwrap_or(cfg.eval.run_depth);
            let mut run = RunFile::new("dense");
            run.rankings = queries
                .iter()
                .map(|q| dense.search(q, depth))
                .collect::<pseudorel_core::Result<_>>()?;
            io::write_run(out, &run)?;
        }
        Command::Eval {
            run,
            qrels,
            out,
            strict,
        } => {
            let run_file = io::read_run(run)?;
            let qrels = io::read_qrels(qrels)?;
            let mut report = evaluate_run(
                &run_file,
                &qrels,
                &cfg.eval.metrics,
                &cfg.eval.ks,
                *strict || cfg.eval.strict,
            );
            report.fingerprint.insert("config".into(), cfg.fingerprint());
            report.fingerprint.insert("run_tag".into(), run_file.tag.clone());
            print_stdout(&report.to_text())?;
            if let Some(p) = out {
                io::write_json(p, &report)?;
            }
        }
        Command::Rewrite {
            topics,
            out,
            reference,
            report,
            ..
        } => {
            let topics = io::read_topics(topics)?;
            let remote = RemoteRewriter::from_scorer_config(&cfg.remote);
            let mut rewritten = Vec::new();
            for t in &topics {
                for (i, turn) in t.turns.iter().enumerate() {
                    let text = rewrite(cfg.rewriter, &turn.raw, &t.history(i), Some(&remote))?;
                    rewritten.push(Query::new(t.turn_query_id(turn), text));
                }
            }
            io::write_queries(out, &rewritten)?;
            if let Some(reference) = reference {
                let gold = io::read_queries(reference)?;
                let gold = query_map(&gold);
                let pairs: Vec<(&str, &str)> = rewritten
                    .iter()
                    .filter_map(|q| gold.get(q.id.as_str()).map(|g| (q.text.as_str(), *g)))
                    .collect();
                let sentence: f64 = pairs
                    .iter()
                    .map(|(h, r)| pseudorel_core::conversation::bleu(h, r, &cfg.bleu))
                    .sum::<f64>()
                    / pairs.len().max(1) as f64;
                let rep = BleuReport {
                    rewriter: cfg.rewriter,
                    max_n: cfg.bleu.max_n,
                    pairs: pairs.len(),
                    corpus_bleu: corpus_bleu(&pairs, &cfg.bleu),
                    mean_sentence_bleu: sentence,
                };
                print_stdout(&format!(
                    "pairs {}  corpus BLEU {:.4}  mean sentence BLEU {:.4}\n",
                    rep.pairs, rep.corpus_bleu, rep.mean_sentence_bleu
                ))?;
                if let Some(p) = report {
                    io::write_json(p, &rep)?;
                }
            }
        }
        Command::CdrTriplets {
            corpus,
            topics,
            out,
            checkpoint,
            ..
        } => {
            let store = io::read_corpus(&corpus.corpus)?;
            let index = load_index(corpus, &store, &cfg)?;
            let topics = io::read_topics(topics)?;
            let scorer = build_scorer(&cfg);
            let model = load_model(checkpoint.as_deref(), &cfg)?;
            let dense = DenseIndex::build(&model, &cfg.tokenizer, &store);
            let labeler = Labeler::new(
                &store,
                &index,
                cfg.bm25,
                scorer.as_ref(),
                Some(&dense),
                cfg.labeling.clone(),
            )?;
            let remote = RemoteRewriter::from_scorer_config(&cfg.remote);
            let rewriter: &dyn QueryRewriter = match cfg.rewriter {
                RewriterKind::Copy => &CopyRewriter,
                RewriterKind::PronounSub => &PronounSubRewriter,
                RewriterKind::Remote => &remote,
            };
            let labels = build_cdr_labels(&topics, rewriter, &labeler)?;
            let triplets = build_triplets(&store, &labels)?;
            io::write_triplets(out, &triplets)?;
            info!("{} triplets from {} turns", triplets.len(), labels.len());
        }
        Command::SynthE2e { out, seeds, data_out } => {
            if *seeds == 0 {
                return Err(CliError::Usage("--seeds must be at least 1".into()));
            }
            let scorer = build_scorer(&cfg);
            let first = cli.seed.unwrap_or(0);
            if let Some(dir) = data_out {
                write_synth_data(dir, &cfg, first)?;
            }
            let mut runs = Vec::new();
            let mut text = String::new();
            for seed in first..first + seeds {
                let report = run_synth(&cfg, seed, scorer.as_ref())?;
                text.push_str(&report.to_text());
                runs.push(report);
            }
            io::write_json(
                out,
                &SynthSummary {
                    config_fingerprint: cfg.fingerprint(),
                    runs,
                },
            )?;
            print_stdout(&text)?;
        }
    }
    Ok(())
}
