//! Labelled benchmark preparation and binary classification metrics.

use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Tweet;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("unknown raw label {label:?} at record {record}")]
    UnknownLabel { record: usize, label: String },
    #[error("{predicted} predictions for {labels} labels")]
    LengthMismatch { predicted: usize, labels: usize },
    #[error("nothing to score")]
    Empty,
    #[error("mask selects no items")]
    EmptyMask,
    #[error("benchmark file: {0}")]
    Csv(#[from] csv::Error),
    #[error("benchmark file has no column {0:?}")]
    MissingColumn(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawLabel {
    Threat,
    Business,
    Unknown,
    Irrelevant,
}

impl RawLabel {
    /// Threat, business and unknown all collapse to the cyber-relevant class.
    pub fn is_relevant(self) -> bool {
        self != RawLabel::Irrelevant
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Threat => "threat",
            Self::Business => "business",
            Self::Unknown => "unknown",
            Self::Irrelevant => "irrelevant",
        }
    }
}

impl FromStr for RawLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "threat" => Ok(Self::Threat),
            "business" => Ok(Self::Business),
            "unknown" => Ok(Self::Unknown),
            "irrelevant" => Ok(Self::Irrelevant),
            other => Err(other.to_string()),
        }
    }
}

/// A row as published: free text plus the raw label string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawBenchmarkRecord {
    pub text: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelledTweet {
    pub text: String,
    pub raw_label: RawLabel,
    pub label: bool,
}

impl From<&LabelledTweet> for RawBenchmarkRecord {
    fn from(t: &LabelledTweet) -> Self {
        Self { text: t.text.clone(), label: t.raw_label.as_str().to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatchMode {
    #[default]
    CaseInsensitive,
    CaseSensitive,
}

pub const BENCHMARK_KEYWORD: &str = "vulnerability";

/// Keeps records mentioning the keyword and collapses their labels to relevant /
/// irrelevant. Every record's label is validated, including dropped ones.
pub fn prepare_benchmark(records: &[RawBenchmarkRecord], mode: MatchMode) -> Result<Vec<LabelledTweet>, EvalError> {
    let mut out = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let raw_label: RawLabel = r
            .label
            .parse()
            .map_err(|label| EvalError::UnknownLabel { record: i + 1, label })?;
        let keep = match mode {
            MatchMode::CaseInsensitive => r.text.to_lowercase().contains(BENCHMARK_KEYWORD),
            MatchMode::CaseSensitive => r.text.contains(BENCHMARK_KEYWORD),
        };
        if keep {
            out.push(LabelledTweet { text: r.text.clone(), raw_label, label: raw_label.is_relevant() });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct BenchmarkColumns {
    pub delimiter: u8,
    pub text: String,
    pub label: String,
    pub has_headers: bool,
}

impl Default for BenchmarkColumns {
    fn default() -> Self {
        Self { delimiter: b',', text: "text".into(), label: "label".into(), has_headers: true }
    }
}

pub fn read_benchmark<R: Read>(reader: R, columns: &BenchmarkColumns) -> Result<Vec<RawBenchmarkRecord>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(columns.delimiter)
        .has_headers(columns.has_headers)
        .flexible(true)
        .from_reader(reader);
    let (ti, li) = if columns.has_headers {
        let headers = rdr.headers()?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim().eq_ignore_ascii_case(name))
                .ok_or_else(|| EvalError::MissingColumn(name.to_string()))
        };
        (find(&columns.text)?, find(&columns.label)?)
    } else {
        let idx = |name: &str| name.parse::<usize>().map_err(|_| EvalError::MissingColumn(name.to_string()));
        (idx(&columns.text)?, idx(&columns.label)?)
    };
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let get = |i: usize, name: &str| row.get(i).map(str::to_string).ok_or_else(|| EvalError::MissingColumn(name.to_string()));
        out.push(RawBenchmarkRecord { text: get(ti, &columns.text)?, label: get(li, &columns.label)? });
    }
    Ok(out)
}

pub fn load_benchmark(path: &Path, columns: &BenchmarkColumns) -> Result<Vec<RawBenchmarkRecord>, EvalError> {
    let file = std::fs::File::open(path).map_err(csv::Error::from)?;
    read_benchmark(file, columns)
}

/// Confusion counts with percent-scaled derived metrics. Ratios with a zero
/// denominator are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub subset: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn pct(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

impl EvalMetrics {
    pub fn from_counts(subset: impl Into<String>, tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        Self {
            subset: subset.into(),
            tp,
            fp,
            fn_,
            tn,
            accuracy: pct(tp + tn, tp + fp + fn_ + tn),
            precision: pct(tp, tp + fp),
            recall: pct(tp, tp + fn_),
            f1: pct(2 * tp, 2 * tp + fp + fn_),
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn check_lengths(predicted: &[bool], labels: &[bool]) -> Result<(), EvalError> {
    if predicted.len() != labels.len() {
        return Err(EvalError::LengthMismatch { predicted: predicted.len(), labels: labels.len() });
    }
    Ok(())
}

fn confusion<'a>(pairs: impl Iterator<Item = (&'a bool, &'a bool)>) -> [usize; 4] {
    let mut c = [0usize; 4];
    for (&p, &l) in pairs {
        let slot = match (p, l) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        c[slot] += 1;
    }
    c
}

pub fn score_predictions(predicted: &[bool], labels: &[bool]) -> Result<EvalMetrics, EvalError> {
    check_lengths(predicted, labels)?;
    if predicted.is_empty() {
        return Err(EvalError::Empty);
    }
    let [tp, fp, fn_, tn] = confusion(predicted.iter().zip(labels));
    Ok(EvalMetrics::from_counts("all", tp, fp, fn_, tn))
}

pub fn subset_metrics(
    predicted: &[bool],
    labels: &[bool],
    mask: &[bool],
    subset: &str,
) -> Result<EvalMetrics, EvalError> {
    check_lengths(predicted, labels)?;
    check_lengths(mask, labels)?;
    if !mask.iter().any(|&m| m) {
        return Err(EvalError::EmptyMask);
    }
    let [tp, fp, fn_, tn] = confusion(predicted.iter().zip(labels).zip(mask).filter(|(_, m)| **m).map(|(pl, _)| pl));
    Ok(EvalMetrics::from_counts(subset, tp, fp, fn_, tn))
}

/// Shape of a prepared benchmark: how much survived the keyword filter and how
/// the retained items split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub records: usize,
    pub retained: usize,
    pub positive_pct: Option<f64>,
    pub has_cve_pct: Option<f64>,
}

pub fn summarize_benchmark(records: usize, prepared: &[LabelledTweet]) -> BenchmarkSummary {
    let positives = prepared.iter().filter(|t| t.label).count();
    let with_cve = cve_mask(prepared).iter().filter(|&&m| m).count();
    BenchmarkSummary {
        records,
        retained: prepared.len(),
        positive_pct: pct(positives, prepared.len()),
        has_cve_pct: pct(with_cve, prepared.len()),
    }
}

/// True where the text mentions at least one CVE identifier.
pub fn cve_mask(prepared: &[LabelledTweet]) -> Vec<bool> {
    prepared.iter().map(|t| crate::cve::mentions_cve(&t.text)).collect()
}

/// Wraps benchmark texts as tweets so the relevance methods can run over them.
/// Ids are `bench-<position>`; timestamps are the Unix epoch.
pub fn benchmark_tweets(prepared: &[LabelledTweet]) -> Vec<Tweet> {
    prepared
        .iter()
        .enumerate()
        .map(|(i, t)| Tweet::new(format!("bench-{i}"), DateTime::<Utc>::UNIX_EPOCH, t.text.clone()))
        .collect()
}

/// Metrics over everything, then the has-CVE and no-CVE subsets (skipped when empty).
pub fn metrics_suite(predicted: &[bool], prepared: &[LabelledTweet]) -> Result<Vec<EvalMetrics>, EvalError> {
    let labels: Vec<bool> = prepared.iter().map(|t| t.label).collect();
    let mut out = vec![score_predictions(predicted, &labels)?];
    let mask = cve_mask(prepared);
    let inverse: Vec<bool> = mask.iter().map(|m| !m).collect();
    for (m, name) in [(&mask, "has-CVE"), (&inverse, "no-CVE")] {
        match subset_metrics(predicted, &labels, m, name) {
            Ok(metrics) => out.push(metrics),
            Err(EvalError::EmptyMask) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
