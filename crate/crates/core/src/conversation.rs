//! Conversational queries: rewriter input and history-concatenated query
//! formats, rule-based rewriters and conversational triplet labeling.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::Query;
use crate::error::{Error, Result};
use crate::labeling::{Labeler, QueryLabels};

pub mod bleu;

pub use bleu::{bleu, corpus_bleu, BleuConfig};

pub const REWRITER_SEPARATOR: &str = "</s>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Turn {
    pub turn_id: u32,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConversationTopic {
    pub topic_id: String,
    pub turns: Vec<Turn>,
}

impl ConversationTopic {
    /// Turn ids must start at 1 and strictly increase.
    pub fn validate(&self) -> Result<()> {
        let mut expected_min = 1;
        for (i, t) in self.turns.iter().enumerate() {
            if (i == 0 && t.turn_id != 1) || t.turn_id < expected_min {
                return Err(Error::InvalidArgument(format!(
                    "topic `{}`: turn ids must start at 1 and strictly increase (got {} at position {i})",
                    self.topic_id, t.turn_id
                )));
            }
            expected_min = t.turn_id + 1;
        }
        Ok(())
    }

    /// Raw queries before turn position `i`, oldest first.
    pub fn history(&self, i: usize) -> Vec<String> {
        self.turns[..i].iter().map(|t| t.raw.clone()).collect()
    }

    pub fn turn_query_id(&self, turn: &Turn) -> String {
        format!("{}_{}", self.topic_id, turn.turn_id)
    }
}

/// `</s> cur </s> his₋₁ </s> his₋₂ ...`: current query first, then history
/// from most recent to oldest. `history` is given oldest first.
pub fn concat_rewriter_input<S: AsRef<str>>(current: &str, history: &[S]) -> String {
    let mut out = format!("{REWRITER_SEPARATOR} {current}");
    for h in history.iter().rev() {
        out.push(' ');
        out.push_str(REWRITER_SEPARATOR);
        out.push(' ');
        out.push_str(h.as_ref());
    }
    out
}

/// `hisQ₁| hisQ₂| ...| curQ`, chronological, joined by `"| "`.
pub fn concat_cdr_query<S: AsRef<str>>(history: &[S], current: &str) -> String {
    let mut out = String::new();
    for h in history {
        out.push_str(h.as_ref());
        out.push_str("| ");
    }
    out.push_str(current);
    out
}

pub trait QueryRewriter {
    /// `history` is oldest first and is never modified.
    fn rewrite(&self, current: &str, history: &[String]) -> Result<String>;
}

impl<T: QueryRewriter + ?Sized> QueryRewriter for &T {
    fn rewrite(&self, current: &str, history: &[String]) -> Result<String> {
        (**self).rewrite(current, history)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RewriterKind {
    #[default]
    #[serde(rename = "copy")]
    Copy,
    #[serde(rename = "pronoun-sub")]
    PronounSub,
    #[serde(rename = "remote")]
    Remote,
}

impl core::str::FromStr for RewriterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(Self::Copy),
            "pronoun-sub" | "pronoun" => Ok(Self::PronounSub),
            "remote" => Ok(Self::Remote),
            other => Err(Error::InvalidArgument(format!("unknown rewriter `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CopyRewriter;

impl QueryRewriter for CopyRewriter {
    fn rewrite(&self, current: &str, _history: &[String]) -> Result<String> {
        Ok(current.into())
    }
}

const PRONOUNS: [&str; 10] = ["it", "its", "they", "them", "their", "he", "him", "his", "she", "her"];

const DETERMINERS: [&str; 3] = ["the", "a", "an"];

const STOPWORDS: [&str; 48] = [
    "a", "about", "an", "and", "are", "as", "at", "be", "by", "can", "did", "do", "does", "for", "from", "how", "i",
    "in", "is", "it", "me", "more", "my", "of", "on", "or", "tell", "that", "the", "their", "them", "there", "they",
    "this", "to", "was", "were", "what", "when", "where", "which", "who", "why", "will", "with", "you", "your", "its",
];

fn is_pronoun(word: &str) -> bool {
    let lower = word.to_lowercase();
    PRONOUNS.contains(&lower.as_str())
}

/// Replaces third-person pronouns with the latest antecedent found in the
/// history.
///
/// The antecedent is the longest run of capitalized words in the most recent
/// history turn that has one (a lone capitalized first word does not count;
/// ties go to the later run), with a directly preceding article included.
/// Without any such run, the last two non-stopword words of the latest turn
/// are used.
#[derive(Debug, Clone, Copy, Default)]
pub struct PronounSubRewriter;

impl QueryRewriter for PronounSubRewriter {
    fn rewrite(&self, current: &str, history: &[String]) -> Result<String> {
        let Some(antecedent) = antecedent(history) else {
            return Ok(current.into());
        };
        let mut out = String::with_capacity(current.len() + antecedent.len());
        let mut word = String::new();
        let flush = |word: &mut String, out: &mut String| {
            if is_pronoun(word) {
                out.push_str(&antecedent);
            } else {
                out.push_str(word);
            }
            word.clear();
        };
        for c in current.chars() {
            if c.is_alphanumeric() {
                word.push(c);
            } else {
                flush(&mut word, &mut out);
                out.push(c);
            }
        }
        flush(&mut word, &mut out);
        Ok(out)
    }
}

fn strip_word(w: &str) -> &str {
    w.trim_matches(|c: char| !c.is_alphanumeric())
}

fn is_capitalized(w: &str) -> bool {
    w.chars().next().is_some_and(char::is_uppercase) && w != "I" && !is_pronoun(w)
}

fn capitalized_antecedent(turn: &str) -> Option<String> {
    let words: Vec<&str> = turn
        .split_whitespace()
        .map(strip_word)
        .filter(|w| !w.is_empty())
        .collect();
    let mut best: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < words.len() {
        if !is_capitalized(words[i]) {
            i += 1;
            continue;
        }
        let start = i;
        while i < words.len() && is_capitalized(words[i]) {
            i += 1;
        }
        let len = i - start;
        if start == 0 && len == 1 {
            continue;
        }
        if best.is_none_or(|(_, l)| len >= l) {
            best = Some((start, len));
        }
    }
    let (mut start, len) = best?;
    let end = start + len;
    if start > 0 && DETERMINERS.contains(&words[start - 1].to_lowercase().as_str()) {
        start -= 1;
    }
    Some(words[start..end].join(" "))
}

fn trailing_phrase(turn: &str) -> Option<String> {
    let stop: BTreeSet<&str> = STOPWORDS.iter().copied().collect();
    let mut picked: Vec<&str> = turn
        .split_whitespace()
        .map(strip_word)
        .filter(|w| !w.is_empty() && !stop.contains(w.to_lowercase().as_str()) && !is_pronoun(w))
        .rev()
        .take(2)
        .collect();
    if picked.is_empty() {
        return None;
    }
    picked.reverse();
    Some(picked.join(" "))
}

/// Antecedent phrase used by [`PronounSubRewriter`].
pub fn antecedent(history: &[String]) -> Option<String> {
    history
        .iter()
        .rev()
        .find_map(|t| capitalized_antecedent(t))
        .or_else(|| history.last().and_then(|t| trailing_phrase(t)))
}

/// Dispatches the rule-based rewriters; `Remote` uses `remote`.
pub fn rewrite(
    kind: RewriterKind,
    current: &str,
    history: &[String],
    remote: Option<&dyn QueryRewriter>,
) -> Result<String> {
    match kind {
        RewriterKind::Copy => CopyRewriter.rewrite(current, history),
        RewriterKind::PronounSub => PronounSubRewriter.rewrite(current, history),
        RewriterKind::Remote => remote
            .ok_or_else(|| Error::InvalidArgument("remote rewriter not configured".into()))?
            .rewrite(current, history),
    }
}

/// Rewrites each turn, labels the rewritten query, and sets the triplet query
/// field to the raw history concatenation. Topics are processed in
/// `topic_id` order, turns in order; skipped turns are dropped.
pub fn build_cdr_labels(
    topics: &[ConversationTopic],
    rewriter: &dyn QueryRewriter,
    labeler: &Labeler<'_>,
) -> Result<Vec<QueryLabels>> {
    let mut sorted: Vec<&ConversationTopic> = topics.iter().collect();
    sorted.sort_by(|a, b| a.topic_id.cmp(&b.topic_id));
    let mut out = Vec::new();
    for topic in sorted {
        topic.validate()?;
        for (i, turn) in topic.turns.iter().enumerate() {
            let history = topic.history(i);
            let rewritten = rewriter.rewrite(&turn.raw, &history)?;
            let query = Query::new(topic.turn_query_id(turn), rewritten);
            if let Some(mut labels) = labeler.label(&query)? {
                labels.query_text = concat_cdr_query(&history, &turn.raw);
                out.push(labels);
            }
        }
    }
    Ok(out)
}
