//! Tokenization shared by the lexical index, the lexical cross-scorer, the
//! hashed encoder and BLEU.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Tokens are maximal runs of Unicode alphanumeric characters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    /// Matched after lowercasing (when enabled).
    pub stopwords: Option<BTreeSet<String>>,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            lowercase: true,
            stopwords: None,
        }
    }
}

impl TokenizerConfig {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for run in text.split(|c: char| !c.is_alphanumeric()) {
            if run.is_empty() {
                continue;
            }
            let token = if self.lowercase {
                run.to_lowercase()
            } else {
                String::from(run)
            };
            if let Some(stop) = &self.stopwords {
                if stop.contains(&token) {
                    continue;
                }
            }
            out.push(token);
        }
        out
    }

    /// Canonical textual form, stable across runs. Used to key index and
    /// checkpoint files to the tokenizer that produced them.
    pub fn canonical(&self) -> String {
        let mut s = String::from(if self.lowercase { "lowercase=1;" } else { "lowercase=0;" });
        s.push_str("split=alnum;stop=");
        if let Some(stop) = &self.stopwords {
            for (i, w) in stop.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                s.push_str(w);
            }
        }
        s
    }
}
