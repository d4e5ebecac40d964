//! HTTP clients for the external `/score` and `/rewrite` services.

use std::time::Duration;

use log::{debug, warn};
use pseudorel_core::conversation::QueryRewriter;
use pseudorel_core::scoring::{rsv_from_logits, Candidate, CrossScorer, RemoteScorerConfig, ScorerLogits};
use pseudorel_core::Error;
use serde::{Deserialize, Serialize};

#[derive(Serialize)]
struct Pair<'a> {
    query: &'a str,
    doc: &'a str,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    pairs: &'a [Pair<'a>],
}

#[derive(Deserialize)]
struct WireLogits {
    z_true: f64,
    z_false: f64,
}

#[derive(Deserialize)]
struct ScoreResponse {
    logits: Vec<WireLogits>,
}

#[derive(Serialize)]
struct RewriteRequest<'a> {
    current: &'a str,
    history: &'a [String],
}

#[derive(Deserialize)]
struct RewriteResponse {
    rewritten: String,
}

fn agent(timeout_ms: u64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(timeout_ms)))
        .build()
        .into()
}

fn endpoint(base: &str, path: &str) -> String {
    format!("{}/{path}", base.trim_end_matches('/'))
}

enum Failure {
    /// Worth retrying: connection problems, timeouts, 5xx.
    Transport(String),
    Protocol(String),
}

fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
    agent: &ureq::Agent,
    url: &str,
    body: &Req,
) -> Result<Resp, Failure> {
    let mut resp = match agent.post(url).send_json(body) {
        Ok(r) => r,
        Err(ureq::Error::StatusCode(code)) if code < 500 => {
            return Err(Failure::Protocol(format!("HTTP {code} from {url}")))
        }
        Err(e) => return Err(Failure::Transport(e.to_string())),
    };
    resp.body_mut()
        .read_json::<Resp>()
        .map_err(|e| Failure::Protocol(format!("malformed response from {url}: {e}")))
}

fn with_retries<T>(retries: u32, mut f: impl FnMut() -> Result<T, Failure>) -> Result<T, Failure> {
    let mut attempt = 0;
    loop {
        match f() {
            Err(Failure::Transport(msg)) if attempt < retries => {
                attempt += 1;
                warn!("remote request failed ({msg}); retry {attempt}/{retries}");
                std::thread::sleep(Duration::from_millis(50 * u64::from(attempt)));
            }
            other => return other,
        }
    }
}

/// Scores `(query, doc)` pairs in chunks of at most `cfg.batch_size`,
/// preserving order. An empty input issues no request.
pub fn remote_score_batch(cfg: &RemoteScorerConfig, pairs: &[(&str, &str)]) -> Result<Vec<ScorerLogits>, Error> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let agent = agent(cfg.timeout_ms);
    let url = endpoint(&cfg.base_url, "score");
    let mut out = Vec::with_capacity(pairs.len());
    for (chunk_idx, chunk) in pairs.chunks(cfg.batch_size).enumerate() {
        let wire: Vec<Pair<'_>> = chunk.iter().map(|&(query, doc)| Pair { query, doc }).collect();
        debug!("POST {url} chunk {chunk_idx} ({} pairs)", wire.len());
        let resp: ScoreResponse = with_retries(cfg.retries, || post(&agent, &url, &ScoreRequest { pairs: &wire }))
            .map_err(|f| match f {
                Failure::Transport(message) => Error::Remote {
                    chunk: Some(chunk_idx),
                    message,
                },
                Failure::Protocol(m) => Error::Protocol(format!("chunk {chunk_idx}: {m}")),
            })?;
        if resp.logits.len() != chunk.len() {
            return Err(Error::Protocol(format!(
                "chunk {chunk_idx}: sent {} pairs, received {} logits",
                chunk.len(),
                resp.logits.len()
            )));
        }
        out.extend(resp.logits.into_iter().map(|l| ScorerLogits {
            z_true: l.z_true,
            z_false: l.z_false,
        }));
    }
    Ok(out)
}

/// Cross-scorer backed by the remote `/score` endpoint; ranks by the
/// probability RSV of the returned logits.
#[derive(Debug, Clone)]
pub struct RemoteScorer {
    pub config: RemoteScorerConfig,
}

impl CrossScorer for RemoteScorer {
    fn score(&self, query: &str, candidates: &[Candidate<'_>]) -> Result<Vec<f64>, Error> {
        let pairs: Vec<(&str, &str)> = candidates.iter().map(|c| (query, c.text)).collect();
        remote_score_batch(&self.config, &pairs)?
            .into_iter()
            .map(rsv_from_logits)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct RemoteRewriter {
    pub base_url: String,
    pub timeout_ms: u64,
    pub retries: u32,
}

impl RemoteRewriter {
    pub fn from_scorer_config(cfg: &RemoteScorerConfig) -> Self {
        Self {
            base_url: cfg.base_url.clone(),
            timeout_ms: cfg.timeout_ms,
            retries: cfg.retries,
        }
    }
}

impl QueryRewriter for RemoteRewriter {
    fn rewrite(&self, current: &str, history: &[String]) -> Result<String, Error> {
        if self.base_url.is_empty() {
            return Err(Error::InvalidArgument("remote rewriter needs a base URL".into()));
        }
        let agent = agent(self.timeout_ms);
        let url = endpoint(&self.base_url, "rewrite");
        let resp: RewriteResponse = with_retries(self.retries, || {
            post(&agent, &url, &RewriteRequest { current, history })
        })
        .map_err(|f| match f {
            Failure::Transport(message) => Error::Remote { chunk: None, message },
            Failure::Protocol(m) => Error::Protocol(m),
        })?;
        Ok(resp.rewritten)
    }
}
