//! File formats: JSONL corpora and queries, TSV qrels and triplets, TREC
//! runs, JSON topics, dev sets and indexes, and binary checkpoints.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use pseudorel_core::conversation::ConversationTopic;
use pseudorel_core::dense::EncoderParams;
use pseudorel_core::metrics::RunFile;
use pseudorel_core::{
    DevSet, Document, DocumentStore, DualEncoder, InvertedIndex, Qrels, Query, ScoredDoc, ScoredRanking, Similarity,
    TokenizerConfig, Triplet,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::file(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::file(path, e))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> Result<()> {
    w.flush().map_err(|e| CliError::file(path, e))
}

/// Non-empty lines with their 1-based line numbers. Invalid UTF-8 is an
/// error naming the line; a trailing `\r` is dropped.
fn lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, raw) in open(path)?.split(b'\n').enumerate() {
        let mut raw = raw.map_err(|e| CliError::file(path, e))?;
        if raw.last() == Some(&b'\r') {
            raw.pop();
        }
        let line = String::from_utf8(raw).map_err(|_| CliError::line(path, i + 1, "invalid UTF-8"))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

fn read_utf8(path: &Path) -> Result<String> {
    let mut bytes = Vec::new();
    open(path)?
        .read_to_end(&mut bytes)
        .map_err(|e| CliError::file(path, e))?;
    String::from_utf8(bytes).map_err(|_| CliError::file(path, "invalid UTF-8"))
}

#[derive(Serialize, Deserialize)]
struct DocRecord {
    #[serde(rename = "_id")]
    id: String,
    #[serde(default)]
    title: String,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct QueryRecord {
    #[serde(rename = "_id")]
    id: String,
    text: String,
}

/// BEIR-style `{"_id", "title", "text"}` lines; other fields are ignored.
pub fn read_corpus(path: &Path) -> Result<DocumentStore> {
    let mut store = DocumentStore::new();
    for (n, line) in lines(path)? {
        let r: DocRecord = serde_json::from_str(&line).map_err(|e| CliError::line(path, n, e))?;
        store
            .push(Document::new(r.id, r.title, r.text))
            .map_err(|e| CliError::line(path, n, e))?;
    }
    Ok(store)
}

pub fn write_corpus(path: &Path, store: &DocumentStore) -> Result<()> {
    let mut w = create(path)?;
    for d in store {
        let rec = DocRecord {
            id: d.id.clone(),
            title: d.title.clone(),
            text: d.text.clone(),
        };
        let line = serde_json::to_string(&rec).map_err(|e| CliError::file(path, e))?;
        writeln!(w, "{line}").map_err(|e| CliError::file(path, e))?;
    }
    finish(path, w)
}

pub fn read_queries(path: &Path) -> Result<Vec<Query>> {
    let mut out: Vec<Query> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (n, line) in lines(path)? {
        let r: QueryRecord = serde_json::from_str(&line).map_err(|e| CliError::line(path, n, e))?;
        if r.id.is_empty() {
            return Err(CliError::line(path, n, "empty query id"));
        }
        if !seen.insert(r.id.clone()) {
            return Err(CliError::line(path, n, format!("duplicate id `{}`", r.id)));
        }
        out.push(Query::new(r.id, r.text));
    }
    Ok(out)
}

pub fn write_queries(path: &Path, queries: &[Query]) -> Result<()> {
    let mut w = create(path)?;
    for q in queries {
        let rec = QueryRecord {
            id: q.id.clone(),
            text: q.text.clone(),
        };
        let line = serde_json::to_string(&rec).map_err(|e| CliError::file(path, e))?;
        writeln!(w, "{line}").map_err(|e| CliError::file(path, e))?;
    }
    finish(path, w)
}

/// `qid<TAB>docid<TAB>grade`. A BEIR header line (`query-id ...`) is skipped.
pub fn read_qrels(path: &Path) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (n, line) in lines(path)? {
        let fields: Vec<&str> = line.split('\t').collect();
        if n == 1 && fields.first() == Some(&"query-id") {
            continue;
        }
        let [q, d, g] = fields[..] else {
            return Err(CliError::line(
                path,
                n,
                format!("expected 3 tab-separated fields, got {}", fields.len()),
            ));
        };
        let grade: u32 = g
            .trim()
            .parse()
            .map_err(|_| CliError::line(path, n, format!("grade `{g}` is not a non-negative integer")))?;
        qrels.insert(q, d, grade).map_err(|e| CliError::line(path, n, e))?;
    }
    Ok(qrels)
}

pub fn write_qrels(path: &Path, qrels: &Qrels) -> Result<()> {
    let mut w = create(path)?;
    for e in qrels.entries() {
        writeln!(w, "{}\t{}\t{}", e.query_id, e.doc_id, e.grade).map_err(|e| CliError::file(path, e))?;
    }
    finish(path, w)
}

/// TREC `qid Q0 docid rank score tag`; queries keep first-appearance order.
pub fn read_run(path: &Path) -> Result<RunFile> {
    let mut run = RunFile::new("");
    let mut order: Vec<String> = Vec::new();
    let mut by_query: std::collections::BTreeMap<String, Vec<ScoredDoc>> = Default::default();
    for (n, line) in lines(path)? {
        let f: Vec<&str> = line.split_whitespace().collect();
        let [q, _, d, _, score, tag] = f[..] else {
            return Err(CliError::line(path, n, format!("expected 6 fields, got {}", f.len())));
        };
        let score: f64 = score
            .parse()
            .map_err(|_| CliError::line(path, n, format!("bad score `{score}`")))?;
        if run.tag.is_empty() {
            run.tag = tag.into();
        }
        if !by_query.contains_key(q) {
            order.push(q.into());
        }
        by_query.entry(q.into()).or_default().push(ScoredDoc {
            doc_id: d.into(),
            score,
        });
    }
    for q in order {
        let entries = by_query.remove(&q).unwrap_or_default();
        run.rankings.push(ScoredRanking::from_unsorted(q, entries));
    }
    Ok(run)
}

pub fn write_run(path: &Path, run: &RunFile) -> Result<()> {
    let mut w = create(path)?;
    let tag = if run.tag.is_empty() { "pseudorel" } else { &run.tag };
    for r in &run.rankings {
        for (i, e) in r.entries.iter().enumerate() {
            writeln!(w, "{} Q0 {} {} {} {tag}", r.query_id, e.doc_id, i + 1, e.score)
                .map_err(|e| CliError::file(path, e))?;
        }
    }
    finish(path, w)
}

pub fn read_triplets(path: &Path) -> Result<Vec<Triplet>> {
    lines(path)?
        .into_iter()
        .map(|(n, l)| Triplet::parse_line(&l).map_err(|e| CliError::line(path, n, e)))
        .collect()
}

pub fn write_triplets(path: &Path, triplets: &[Triplet]) -> Result<()> {
    let mut w = create(path)?;
    for t in triplets {
        writeln!(w, "{}", t.to_line()).map_err(|e| CliError::file(path, e))?;
    }
    finish(path, w)
}

/// A JSON array of topics or one topic per line.
pub fn read_topics(path: &Path) -> Result<Vec<ConversationTopic>> {
    let text = read_utf8(path)?;
    let topics: Vec<ConversationTopic> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).map_err(|e| CliError::file(path, e))?
    } else {
        let mut v = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            v.push(serde_json::from_str(line).map_err(|e| CliError::line(path, i + 1, e))?);
        }
        v
    };
    for t in &topics {
        t.validate().map_err(|e| CliError::file(path, e))?;
    }
    Ok(topics)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::file(path, e))?;
    writeln!(w).map_err(|e| CliError::file(path, e))?;
    finish(path, w)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_utf8(path)?).map_err(|e| CliError::file(path, e))
}

pub fn read_dev_set(path: &Path) -> Result<DevSet> {
    read_json(path)
}

pub const INDEX_FORMAT: &str = "pseudorel-bm25-index";
pub const INDEX_VERSION: u32 = 1;

/// First 16 hex digits of SHA-256 over the tokenizer's canonical form.
pub fn tokenizer_hash(tokenizer: &TokenizerConfig) -> String {
    let digest = Sha256::digest(tokenizer.canonical().as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexFile {
    format: String,
    version: u32,
    tokenizer_hash: String,
    index: InvertedIndex,
}

pub fn write_index(path: &Path, index: &InvertedIndex) -> Result<()> {
    let file = IndexFile {
        format: INDEX_FORMAT.into(),
        version: INDEX_VERSION,
        tokenizer_hash: tokenizer_hash(index.tokenizer()),
        index: index.clone(),
    };
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, &file).map_err(|e| CliError::file(path, e))?;
    finish(path, w)
}

/// Loads an index, checking the header and, when given, that it was built
/// with `expected` tokenization.
pub fn read_index(path: &Path, expected: Option<&TokenizerConfig>) -> Result<InvertedIndex> {
    let file: IndexFile = read_json(path)?;
    if file.format != INDEX_FORMAT || file.version != INDEX_VERSION {
        return Err(CliError::file(
            path,
            format!("unsupported index format `{}` version {}", file.format, file.version),
        ));
    }
    if file.tokenizer_hash != tokenizer_hash(file.index.tokenizer()) {
        return Err(CliError::file(
            path,
            "tokenizer hash does not match the stored tokenizer",
        ));
    }
    if let Some(t) = expected {
        if tokenizer_hash(t) != file.tokenizer_hash {
            return Err(CliError::file(
                path,
                format!(
                    "index was built with tokenizer {} but the configuration uses {}",
                    file.tokenizer_hash,
                    tokenizer_hash(t)
                ),
            ));
        }
    }
    Ok(file.index)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"PSRLDE\0\0";
const CHECKPOINT_VERSION: u32 = 1;

/// Trained model plus selection metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointFile {
    pub model: DualEncoder,
    pub step: u64,
    pub dev_ndcg: f64,
}

fn put_table(buf: &mut Vec<u8>, p: &EncoderParams) {
    buf.extend((p.dim() as u64).to_le_bytes());
    buf.extend((p.buckets() as u64).to_le_bytes());
    buf.extend(p.hash_seed().to_le_bytes());
    for x in p.table() {
        buf.extend(x.to_bits().to_le_bytes());
    }
}

/// Little-endian layout: magic, version, similarity, tied flag, step,
/// dev score, then each table as `dim, buckets, hash_seed, f64 * dim * buckets`.
pub fn encode_checkpoint(c: &CheckpointFile) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend(CHECKPOINT_MAGIC);
    buf.extend(CHECKPOINT_VERSION.to_le_bytes());
    buf.push(match c.model.similarity {
        Similarity::Dot => 0,
        Similarity::Cosine => 1,
    });
    buf.push(u8::from(c.model.is_tied()));
    buf.extend(c.step.to_le_bytes());
    buf.extend(c.dev_ndcg.to_bits().to_le_bytes());
    put_table(&mut buf, &c.model.query);
    if let Some(d) = &c.model.doc {
        put_table(&mut buf, d);
    }
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn table(&mut self) -> std::result::Result<EncoderParams, String> {
        let short = || String::from("truncated checkpoint");
        let dim = usize::try_from(self.u64().ok_or_else(short)?).map_err(|e| e.to_string())?;
        let buckets = usize::try_from(self.u64().ok_or_else(short)?).map_err(|e| e.to_string())?;
        let hash_seed = self.u64().ok_or_else(short)?;
        let n = dim.checked_mul(buckets).ok_or("table size overflow")?;
        let raw = self
            .take(n.checked_mul(8).ok_or("table size overflow")?)
            .ok_or_else(short)?;
        let table = raw
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect();
        EncoderParams::from_table(dim, buckets, hash_seed, table).map_err(|e| e.to_string())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<CheckpointFile, String> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8) != Some(&CHECKPOINT_MAGIC[..]) {
        return Err("not a pseudorel checkpoint".into());
    }
    let version = u32::from_le_bytes(c.take(4).ok_or("truncated checkpoint")?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let head = c.take(2).ok_or("truncated checkpoint")?;
    let similarity = match head[0] {
        0 => Similarity::Dot,
        1 => Similarity::Cosine,
        other => return Err(format!("unknown similarity tag {other}")),
    };
    let tied = match head[1] {
        0 => false,
        1 => true,
        other => return Err(format!("bad tied flag {other}")),
    };
    let step = c.u64().ok_or("truncated checkpoint")?;
    let dev_ndcg = f64::from_bits(c.u64().ok_or("truncated checkpoint")?);
    let query = c.table()?;
    let doc = if tied { None } else { Some(c.table()?) };
    if c.pos != bytes.len() {
        return Err("trailing bytes after checkpoint".into());
    }
    let model = DualEncoder::new(query, doc, similarity).map_err(|e| e.to_string())?;
    Ok(CheckpointFile { model, step, dev_ndcg })
}

pub fn write_checkpoint(path: &Path, c: &CheckpointFile) -> Result<()> {
    std::fs::write(path, encode_checkpoint(c)).map_err(|e| CliError::file(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<CheckpointFile> {
    let bytes = std::fs::read(path).map_err(|e| CliError::file(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| CliError::file(path, e))
}
