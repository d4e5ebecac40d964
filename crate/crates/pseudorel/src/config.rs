//! Single JSON configuration for every stage, with a stable fingerprint.

use std::path::Path;

use pseudorel_core::conversation::{BleuConfig, RewriterKind};
use pseudorel_core::metrics::Metric;
use pseudorel_core::scoring::RemoteScorerConfig;
use pseudorel_core::synth::SynthConfig;
use pseudorel_core::{Bm25Params, EncoderConfig, LabelingConfig, ScorerKind, TokenizerConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub metrics: Vec<Metric>,
    pub ks: Vec<usize>,
    /// Count unjudged and missing queries as zero instead of skipping them.
    pub strict: bool,
    /// Depth of the rankings written by `search` and `dense-search`.
    pub run_depth: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            metrics: vec![Metric::Ndcg, Metric::Recall],
            ks: vec![10, 100],
            strict: false,
            run_depth: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DevConfig {
    pub n_pos: usize,
    pub n_neg: usize,
    /// Default size of the dev half produced by `split`.
    pub dev_count: usize,
}

impl Default for DevConfig {
    fn default() -> Self {
        Self {
            n_pos: 10,
            n_neg: 90,
            dev_count: 0,
        }
    }
}

/// Settings of the synthetic end-to-end experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    /// Strategies to train; each starts from the same untrained encoder.
    pub strategies: Vec<pseudorel_core::NegativeStrategy>,
    /// Depth of the dense test rankings.
    pub test_depth: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            strategies: pseudorel_core::NegativeStrategy::ALL.to_vec(),
            test_depth: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub tokenizer: TokenizerConfig,
    pub bm25: Bm25Params,
    pub scorer: ScorerKind,
    pub remote: RemoteScorerConfig,
    pub labeling: LabelingConfig,
    pub dev: DevConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub rewriter: RewriterKind,
    pub bleu: BleuConfig,
    pub experiment: ExperimentConfig,
}

impl PipelineConfig {
    /// Unknown keys and malformed values are usage errors.
    pub fn load(path: &Path) -> Result<Self> {
        io::read_json(path).map_err(|e| match e {
            CliError::File { path, message } => CliError::Usage(format!("config {}: {message}", path.display())),
            other => other,
        })
    }

    /// Sets every seed in the configuration to `seed`.
    pub fn set_seed(&mut self, seed: u64) {
        self.labeling.seed = seed;
        self.train.seed = seed;
        self.encoder.init_seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |e: pseudorel_core::Error| CliError::Usage(e.to_string());
        self.bm25.validate().map_err(usage)?;
        self.labeling.validate().map_err(usage)?;
        self.train.validate().map_err(usage)?;
        if self.train.freeze_doc_encoder && self.encoder.tied {
            return Err(CliError::Usage(
                "train.freeze_doc_encoder needs encoder.tied = false".into(),
            ));
        }
        if self.scorer == ScorerKind::Remote || self.rewriter == RewriterKind::Remote {
            self.remote.validate().map_err(usage)?;
        }
        if self.eval.ks.contains(&0) || self.eval.run_depth == 0 {
            return Err(CliError::Usage("evaluation cutoffs must be positive".into()));
        }
        Ok(())
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
