use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use pseudorel::remote::{remote_score_batch, RemoteRewriter, RemoteScorer};
use pseudorel::CliError;
use pseudorel_core::conversation::QueryRewriter;
use pseudorel_core::scoring::{rerank, rsv_from_logits, RemoteScorerConfig};
use pseudorel_core::{Document, DocumentStore, Error, ScoredDoc, ScoredRanking};
use serde_json::{json, Value};

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    Stub,
    Malformed,
    DropOne,
    ServerError,
}

/// Minimal HTTP/1.1 server speaking the published stub protocol.
struct StubServer {
    url: String,
    /// `(path, number of pairs)` for every request received.
    requests: Arc<Mutex<Vec<(String, usize)>>>,
}

fn stub_z_true(query: &str, doc: &str) -> f64 {
    let q: Vec<String> = query.to_lowercase().split_whitespace().map(String::from).collect();
    let d: BTreeSet<String> = doc.to_lowercase().split_whitespace().map(String::from).collect();
    let qs: BTreeSet<&String> = q.iter().collect();
    let overlap = qs.iter().filter(|t| d.contains(**t)).count();
    4.0 * overlap as f64 / (q.len() as f64 + 1.0)
}

fn handle(mut stream: TcpStream, mode: Mode, log: &Mutex<Vec<(String, usize)>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
        return;
    }
    let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
    let mut length = 0;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).unwrap();
        if h == "\r\n" || h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    let req: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);

    let (status, payload) = match (mode, path.as_str()) {
        (Mode::ServerError, _) => ("500 Internal Server Error", "{\"error\":\"boom\"}".to_string()),
        (Mode::Malformed, _) => ("200 OK", "{\"nope\":".to_string()),
        (_, "/score") => {
            let pairs = req["pairs"].as_array().cloned().unwrap_or_default();
            log.lock().unwrap().push((path.clone(), pairs.len()));
            let mut logits: Vec<Value> = pairs
                .iter()
                .map(|p| {
                    let z = stub_z_true(p["query"].as_str().unwrap(), p["doc"].as_str().unwrap());
                    json!({"z_true": z, "z_false": 0.0})
                })
                .collect();
            if mode == Mode::DropOne {
                logits.pop();
            }
            ("200 OK", json!({ "logits": logits }).to_string())
        }
        (_, "/rewrite") => {
            log.lock().unwrap().push((path.clone(), 0));
            let current = req["current"].as_str().unwrap();
            let history = req["history"].as_array().unwrap();
            let rewritten = match history.last() {
                Some(h) => format!("{} {current}", h.as_str().unwrap()),
                None => current.to_string(),
            };
            ("200 OK", json!({ "rewritten": rewritten }).to_string())
        }
        _ => ("404 Not Found", "{}".to_string()),
    };
    let _ = write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
}

impl StubServer {
    fn start(mode: Mode) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&requests);
        thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                handle(stream, mode, &log);
            }
        });
        Self { url, requests }
    }

    fn config(&self, batch_size: usize) -> RemoteScorerConfig {
        RemoteScorerConfig {
            base_url: self.url.clone(),
            timeout_ms: 5_000,
            batch_size,
            retries: 0,
        }
    }

    fn requests(&self) -> Vec<(String, usize)> {
        self.requests.lock().unwrap().clone()
    }
}

#[test]
fn stub_pair_matches_published_formula() {
    let server = StubServer::start(Mode::Stub);
    let logits = remote_score_batch(&server.config(8), &[("a b", "a b c")]).unwrap();
    assert_eq!(logits.len(), 1);
    // tests/oracles/frozen_values.py in the core crate.
    assert!((logits[0].z_true - 2.666_666_666_666_666_5).abs() < 1e-12);
    assert!((rsv_from_logits(logits[0]).unwrap() - 0.935_030_830_871_335_9).abs() < 1e-9);
}

#[test]
fn empty_input_issues_no_request() {
    let server = StubServer::start(Mode::Stub);
    assert!(remote_score_batch(&server.config(2), &[]).unwrap().is_empty());
    assert!(server.requests().is_empty());
}

#[test]
fn pairs_are_chunked_and_order_is_preserved() {
    let server = StubServer::start(Mode::Stub);
    let pairs = [("a", "a"), ("a b", "b"), ("x y z", "x y z"), ("q", "r"), ("m n", "m")];
    let logits = remote_score_batch(&server.config(2), &pairs).unwrap();
    let sizes: Vec<usize> = server.requests().iter().map(|r| r.1).collect();
    assert_eq!(sizes, [2, 2, 1]);
    for ((q, d), l) in pairs.iter().zip(&logits) {
        assert!((l.z_true - stub_z_true(q, d)).abs() < 1e-12);
    }
    // Idempotent.
    assert_eq!(remote_score_batch(&server.config(2), &pairs).unwrap(), logits);
}

#[test]
fn unreachable_service_reports_failed_chunk() {
    // Bind then drop to get a port nobody listens on.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = RemoteScorerConfig {
        base_url: format!("http://127.0.0.1:{port}"),
        timeout_ms: 2_000,
        batch_size: 4,
        retries: 1,
    };
    let err = remote_score_batch(&cfg, &[("a", "b")]).unwrap_err();
    assert!(matches!(err, Error::Remote { chunk: Some(0), .. }), "{err:?}");
    assert_eq!(CliError::from(err).exit_code(), 3);
}

#[test]
fn server_errors_are_remote_errors() {
    let server = StubServer::start(Mode::ServerError);
    let err = remote_score_batch(&server.config(4), &[("a", "b")]).unwrap_err();
    assert!(matches!(err, Error::Remote { chunk: Some(0), .. }), "{err:?}");
}

#[test]
fn malformed_and_short_responses_are_protocol_errors() {
    let server = StubServer::start(Mode::Malformed);
    let err = remote_score_batch(&server.config(4), &[("a", "b")]).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err:?}");

    let server = StubServer::start(Mode::DropOne);
    let err = remote_score_batch(&server.config(4), &[("a", "b"), ("c", "d")]).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err:?}");
    assert_eq!(CliError::from(err).exit_code(), 3);
}

#[test]
fn remote_scorer_reranks_by_stub_rsv() {
    let server = StubServer::start(Mode::Stub);
    let store = DocumentStore::from_documents([
        Document::new("d1", "", "a"),
        Document::new("d2", "", "a b c"),
        Document::new("d3", "", "zzz"),
    ])
    .unwrap();
    let first = ScoredRanking {
        query_id: "q".into(),
        entries: ["d3", "d1", "d2"]
            .iter()
            .enumerate()
            .map(|(i, d)| ScoredDoc {
                doc_id: (*d).into(),
                score: 10.0 - i as f64,
            })
            .collect(),
    };
    let scorer = RemoteScorer {
        config: server.config(2),
    };
    let out = rerank(&first, "a b", &scorer, 100, &store).unwrap();
    assert_eq!(out.doc_ids().collect::<Vec<_>>(), ["d2", "d1", "d3"]);
}

#[test]
fn remote_rewriter_follows_stub_rule() {
    let server = StubServer::start(Mode::Stub);
    let rw = RemoteRewriter {
        base_url: server.url.clone(),
        timeout_ms: 5_000,
        retries: 0,
    };
    assert_eq!(rw.rewrite("c", &["h1".into(), "h2".into()]).unwrap(), "h2 c");
    assert_eq!(rw.rewrite("c", &[]).unwrap(), "c");
}

fn bin() -> std::process::Command {
    std::process::Command::new(env!("CARGO_BIN_EXE_pseudorel"))
}

#[test]
fn cli_rerank_with_remote_scorer() {
    let server = StubServer::start(Mode::Stub);
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    std::fs::write(
        p("c.jsonl"),
        "{\"_id\":\"d1\",\"text\":\"a\"}\n{\"_id\":\"d2\",\"text\":\"a b c\"}\n{\"_id\":\"d3\",\"text\":\"b\"}\n",
    )
    .unwrap();
    std::fs::write(p("q.jsonl"), "{\"_id\":\"q\",\"text\":\"a b\"}\n").unwrap();
    std::fs::write(p("run.trec"), "q Q0 d1 1 3 bm25\nq Q0 d3 2 2 bm25\nq Q0 d2 3 1 bm25\n").unwrap();
    let status = bin()
        .args(["rerank", "--scorer", "remote", "--remote-url", &server.url, "--corpus"])
        .arg(p("c.jsonl"))
        .arg("--queries")
        .arg(p("q.jsonl"))
        .arg("--run")
        .arg(p("run.trec"))
        .arg("--out")
        .arg(p("out.trec"))
        .status()
        .unwrap();
    assert!(status.success());
    let out = std::fs::read_to_string(p("out.trec")).unwrap();
    let order: Vec<&str> = out.lines().map(|l| l.split(' ').nth(2).unwrap()).collect();
    assert_eq!(order, ["d2", "d1", "d3"]);

    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let status = bin()
        .args([
            "rerank",
            "--scorer",
            "remote",
            "--remote-url",
            &format!("http://127.0.0.1:{port}"),
            "--corpus",
        ])
        .arg(p("c.jsonl"))
        .arg("--queries")
        .arg(p("q.jsonl"))
        .arg("--run")
        .arg(p("run.trec"))
        .arg("--out")
        .arg(p("out2.trec"))
        .stderr(std::process::Stdio::null())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}
