//! Tokenization, vocabulary fitting and TF-IDF vectors.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cve::CVE_PATTERN;

static URL_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(?:https?://|www\.)\S*").unwrap());
static MENTION_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"@[A-Za-z0-9_]+").unwrap());
static CVE_TOKEN_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(CVE_PATTERN).unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerOptions {
    pub strip_urls: bool,
    /// Keep the handle text of `@mentions` (the `@` itself is always dropped).
    pub keep_mention_text: bool,
}

impl Default for TokenizerOptions {
    fn default() -> Self {
        Self { strip_urls: true, keep_mention_text: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDoc {
    pub doc_id: String,
    pub tokens: Vec<String>,
}

impl TokenizedDoc {
    pub fn new(doc_id: impl Into<String>, tokens: Vec<String>) -> Self {
        Self { doc_id: doc_id.into(), tokens }
    }

    pub fn from_strs(doc_id: impl Into<String>, tokens: &[&str]) -> Self {
        Self::new(doc_id, tokens.iter().map(|s| s.to_string()).collect())
    }
}

fn is_term_char(c: char) -> bool {
    c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-'
}

/// Lowercased terms over the alphabet `[a-z0-9-]`.
///
/// URLs are removed (when enabled), `@` never survives, runs of other characters
/// separate tokens, edge hyphens are trimmed and hyphen-only tokens dropped. A CVE
/// identifier glued to other text by hyphens is split out as its own token.
pub fn tokenize_text(text: &str, options: &TokenizerOptions) -> Vec<String> {
    let lowered = text.to_lowercase();
    let mut cleaned = if options.strip_urls {
        URL_RE.replace_all(&lowered, " ").into_owned()
    } else {
        lowered
    };
    if !options.keep_mention_text {
        cleaned = MENTION_RE.replace_all(&cleaned, " ").into_owned();
    }

    let mut tokens = Vec::new();
    for raw in cleaned.split(|c: char| !is_term_char(c)) {
        let mut rest = raw;
        while let Some(m) = CVE_TOKEN_RE.find(rest) {
            push_trimmed(&mut tokens, &rest[..m.start()]);
            tokens.push(m.as_str().to_string());
            rest = &rest[m.end()..];
        }
        push_trimmed(&mut tokens, rest);
    }
    tokens
}

fn push_trimmed(tokens: &mut Vec<String>, piece: &str) {
    let t = piece.trim_matches('-');
    if !t.is_empty() {
        tokens.push(t.to_string());
    }
}

pub fn tokenize(doc_id: impl Into<String>, text: &str, options: &TokenizerOptions) -> TokenizedDoc {
    TokenizedDoc::new(doc_id, tokenize_text(text, options))
}

#[derive(Debug, Error)]
pub enum VocabularyError {
    #[error("min_df must be at least 1")]
    ZeroMinDf,
    #[error("vocabulary file: {0}")]
    Io(#[from] io::Error),
    #[error("vocabulary file line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Term ↔ index bijection with document frequencies. Indices follow lexicographic
/// term order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    doc_freq: Vec<usize>,
    n_docs: usize,
    min_df: usize,
}

impl Vocabulary {
    fn from_sorted(entries: BTreeMap<String, usize>, n_docs: usize, min_df: usize) -> Self {
        let mut terms = Vec::with_capacity(entries.len());
        let mut doc_freq = Vec::with_capacity(entries.len());
        for (t, df) in entries {
            terms.push(t);
            doc_freq.push(df);
        }
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { terms, index, doc_freq, n_docs, min_df }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn min_df(&self) -> usize {
        self.min_df
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, index: usize) -> Option<&str> {
        self.terms.get(index).map(String::as_str)
    }

    pub fn doc_freq(&self, term: &str) -> Option<usize> {
        self.index_of(term).map(|i| self.doc_freq[i])
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn idf_at(&self, index: usize) -> f64 {
        idf(self.n_docs, self.doc_freq[index])
    }

    /// `n_docs=<N>` header followed by `term<TAB>doc_freq` lines.
    pub fn to_text(&self) -> String {
        let mut out = format!("n_docs={}\n", self.n_docs);
        for (t, df) in self.terms.iter().zip(&self.doc_freq) {
            let _ = writeln!(out, "{t}\t{df}");
        }
        out
    }

    /// Parses the text form. `min_df` is not stored, so the loaded value is the
    /// smallest frequency present (1 for an empty vocabulary).
    pub fn from_text(text: &str) -> Result<Self, VocabularyError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(VocabularyError::Parse { line: 1, reason: "missing header".into() })?;
        let n_docs = header
            .strip_prefix("n_docs=")
            .and_then(|v| v.trim().parse::<usize>().ok())
            .ok_or(VocabularyError::Parse { line: 1, reason: format!("bad header {header:?}") })?;
        let mut entries = BTreeMap::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let bad = |reason: &str| VocabularyError::Parse { line: i + 1, reason: reason.to_string() };
            let (term, df) = line.split_once('\t').ok_or_else(|| bad("expected term<TAB>doc_freq"))?;
            let df: usize = df.trim().parse().map_err(|_| bad("doc_freq is not an integer"))?;
            if df == 0 || df > n_docs {
                return Err(bad("doc_freq out of range"));
            }
            if entries.insert(term.to_string(), df).is_some() {
                return Err(bad("duplicate term"));
            }
        }
        let min_df = entries.values().copied().min().unwrap_or(1);
        Ok(Self::from_sorted(entries, n_docs, min_df))
    }

    pub fn save(&self, path: &Path) -> Result<(), VocabularyError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, VocabularyError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Smoothed inverse document frequency: `ln((1 + n_docs) / (1 + doc_freq)) + 1`.
pub fn idf(n_docs: usize, doc_freq: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + doc_freq as f64)).ln() + 1.0
}

pub fn fit_vocabulary(docs: &[TokenizedDoc], min_df: usize) -> Result<Vocabulary, VocabularyError> {
    if min_df == 0 {
        return Err(VocabularyError::ZeroMinDf);
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in docs {
        let unique: HashSet<&str> = doc.tokens.iter().map(String::as_str).collect();
        for t in unique {
            *df.entry(t.to_string()).or_default() += 1;
        }
    }
    df.retain(|_, c| *c >= min_df);
    Ok(Vocabulary::from_sorted(df, docs.len(), min_df))
}

/// L2-normalized sparse TF-IDF vector. `entries` are sorted by index and every weight
/// is positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermWeightVector {
    pub doc_id: String,
    pub dim: usize,
    pub entries: Vec<(usize, f64)>,
}

impl TermWeightVector {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |(i, _)| *i)
            .map_or(0.0, |pos| self.entries[pos].1)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &(i, w) in &self.entries {
            v[i] = w;
        }
        v
    }
}

pub fn tfidf_vectorize(doc: &TokenizedDoc, vocab: &Vocabulary) -> TermWeightVector {
    let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
    for t in &doc.tokens {
        if let Some(i) = vocab.index_of(t) {
            *counts.entry(i).or_default() += 1;
        }
    }
    let mut entries: Vec<(usize, f64)> =
        counts.into_iter().map(|(i, tf)| (i, f64::from(tf) * vocab.idf_at(i))).collect();
    let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        for e in &mut entries {
            e.1 /= norm;
        }
    }
    TermWeightVector { doc_id: doc.doc_id.clone(), dim: vocab.len(), entries }
}
