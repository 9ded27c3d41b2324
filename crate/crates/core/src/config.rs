//! Pipeline configuration.
//!
//! The file format is flat `key = value` text with `#` comments. Values resolve with
//! the precedence command-line flag > environment (`VULNWATCH_<KEY>`) > file > default;
//! callers apply the layers in reverse order through [`PipelineConfig::set`].

use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cve::CountMode;
use crate::ingest::Strictness;
use crate::relevance::{Method, DEFAULT_HYPOTHESIS};

pub const ENV_PREFIX: &str = "VULNWATCH_";

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("config line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("cannot read config {path}: {reason}")]
    Read { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Markdown,
    /// Machine-readable JSON.
    Json,
    /// One CSV file per table.
    Csv,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(Self::Markdown),
            "json" | "machine-readable" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopicK {
    Fixed(usize),
    /// Elbow selection over `topic_scan`.
    Auto,
}

impl FromStr for TopicK {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(Self::Auto);
        }
        match s.parse::<usize>() {
            Ok(k) if k > 0 => Ok(Self::Fixed(k)),
            _ => Err("expected a positive integer or `auto`".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub keyword: String,
    pub method: Method,
    pub hypothesis: String,
    pub threshold: f64,
    pub relevance_k: usize,
    pub relevance_min_df: usize,
    pub topic_k: TopicK,
    pub topic_scan: (usize, usize),
    pub seed: u64,
    pub scorer_url: Option<String>,
    pub scorer_in_flight: usize,
    pub scorer_retries: u32,
    pub scorer_failure_budget: usize,
    /// Pre-computed verdicts (line-delimited) used instead of a live scorer.
    pub verdicts: Option<PathBuf>,
    pub nvd_url: Option<String>,
    pub nvd_cache: Option<PathBuf>,
    pub cvss_ttl_days: i64,
    pub count_mode: CountMode,
    pub window_start: Option<DateTime<Utc>>,
    pub window_end: Option<DateTime<Utc>>,
    pub strictness: Strictness,
    pub format: OutputFormat,
    pub top_cves: usize,
    pub top_phrases: usize,
    pub phrase_ngram: (usize, usize),
    pub embedding_dim: usize,
    pub embedding_window: usize,
    pub embedding_epochs: usize,
    pub negative_samples: usize,
    pub learning_rate: f64,
    pub min_count: usize,
    pub unique: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            keyword: "vulnerability".into(),
            method: Method::Zeroshot,
            hypothesis: DEFAULT_HYPOTHESIS.into(),
            threshold: 0.5,
            relevance_k: 2,
            relevance_min_df: 1,
            topic_k: TopicK::Fixed(10),
            topic_scan: (2, 15),
            seed: 0,
            scorer_url: None,
            scorer_in_flight: 4,
            scorer_retries: 3,
            scorer_failure_budget: 50,
            verdicts: None,
            nvd_url: None,
            nvd_cache: None,
            cvss_ttl_days: 7,
            count_mode: CountMode::PerTweet,
            window_start: None,
            window_end: None,
            strictness: Strictness::SkipAndCount,
            format: OutputFormat::Markdown,
            top_cves: 5,
            top_phrases: 20,
            phrase_ngram: (1, 3),
            embedding_dim: 100,
            embedding_window: 5,
            embedding_epochs: 5,
            negative_samples: 5,
            learning_rate: 0.025,
            min_count: 5,
            unique: false,
        }
    }
}

pub const KEYS: &[&str] = &[
    "keyword",
    "method",
    "hypothesis",
    "threshold",
    "relevance_k",
    "relevance_min_df",
    "topic_k",
    "topic_scan",
    "seed",
    "scorer_url",
    "scorer_in_flight",
    "scorer_retries",
    "scorer_failure_budget",
    "verdicts",
    "nvd_url",
    "nvd_cache",
    "cvss_ttl_days",
    "count_mode",
    "window_start",
    "window_end",
    "strictness",
    "format",
    "top_cves",
    "top_phrases",
    "phrase_ngram",
    "embedding_dim",
    "embedding_window",
    "embedding_epochs",
    "negative_samples",
    "learning_rate",
    "min_count",
    "unique",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::InvalidValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn positive(key: &str, value: &str) -> Result<usize, ConfigError> {
    match parse::<usize>(key, value)? {
        0 => Err(ConfigError::InvalidValue { key: key.into(), value: value.into(), reason: "must be positive".into() }),
        v => Ok(v),
    }
}

/// `lo-hi` or a single value.
fn range(key: &str, value: &str) -> Result<(usize, usize), ConfigError> {
    let (lo, hi) = value.split_once('-').unwrap_or((value, value));
    let (lo, hi) = (positive(key, lo.trim())?, positive(key, hi.trim())?);
    if lo > hi {
        return Err(ConfigError::InvalidValue { key: key.into(), value: value.into(), reason: "range is descending".into() });
    }
    Ok((lo, hi))
}

fn optional(value: &str) -> Option<String> {
    let v = value.trim();
    (!v.is_empty() && v != "none").then(|| v.to_string())
}

fn url(key: &str, value: &str) -> Result<Option<String>, ConfigError> {
    let Some(v) = optional(value) else { return Ok(None) };
    if v == "mock" || v.starts_with("http://") || v.starts_with("https://") {
        Ok(Some(v))
    } else {
        Err(ConfigError::InvalidValue { key: key.into(), value: value.into(), reason: "expected an http(s) URL".into() })
    }
}

fn timestamp(key: &str, value: &str) -> Result<Option<DateTime<Utc>>, ConfigError> {
    optional(value)
        .map(|v| {
            DateTime::parse_from_rfc3339(&v).map(|t| t.with_timezone(&Utc)).map_err(|e| ConfigError::InvalidValue {
                key: key.into(),
                value: value.into(),
                reason: e.to_string(),
            })
        })
        .transpose()
}

impl PipelineConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "keyword" => {
                if v.is_empty() {
                    return Err(ConfigError::InvalidValue { key: key.into(), value: v.into(), reason: "must be non-empty".into() });
                }
                self.keyword = v.into();
            }
            "method" => self.method = parse(key, v)?,
            "hypothesis" => {
                if v.is_empty() {
                    return Err(ConfigError::InvalidValue { key: key.into(), value: v.into(), reason: "must be non-empty".into() });
                }
                self.hypothesis = v.into();
            }
            "threshold" => {
                let t: f64 = parse(key, v)?;
                if !(t > 0.0 && t < 1.0) {
                    return Err(ConfigError::InvalidValue { key: key.into(), value: v.into(), reason: "must lie in (0, 1)".into() });
                }
                self.threshold = t;
            }
            "relevance_k" => self.relevance_k = positive(key, v)?,
            "relevance_min_df" => self.relevance_min_df = positive(key, v)?,
            "topic_k" => self.topic_k = parse(key, v)?,
            "topic_scan" => self.topic_scan = range(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "scorer_url" => self.scorer_url = url(key, v)?,
            "scorer_in_flight" => self.scorer_in_flight = positive(key, v)?,
            "scorer_retries" => self.scorer_retries = parse(key, v)?,
            "scorer_failure_budget" => self.scorer_failure_budget = parse(key, v)?,
            "verdicts" => self.verdicts = optional(v).map(PathBuf::from),
            "nvd_url" => self.nvd_url = url(key, v)?,
            "nvd_cache" => self.nvd_cache = optional(v).map(PathBuf::from),
            "cvss_ttl_days" => self.cvss_ttl_days = parse(key, v)?,
            "count_mode" => self.count_mode = parse(key, v)?,
            "window_start" => self.window_start = timestamp(key, v)?,
            "window_end" => self.window_end = timestamp(key, v)?,
            "strictness" => self.strictness = parse(key, v)?,
            "format" => self.format = parse(key, v)?,
            "top_cves" => self.top_cves = parse(key, v)?,
            "top_phrases" => self.top_phrases = parse(key, v)?,
            "phrase_ngram" => {
                let r = range(key, v)?;
                if r.1 > 3 {
                    return Err(ConfigError::InvalidValue { key: key.into(), value: v.into(), reason: "n-grams above 3 are not supported".into() });
                }
                self.phrase_ngram = r;
            }
            "embedding_dim" => {
                let d = positive(key, v)?;
                if d < 2 {
                    return Err(ConfigError::InvalidValue { key: key.into(), value: v.into(), reason: "must be at least 2".into() });
                }
                self.embedding_dim = d;
            }
            "embedding_window" => self.embedding_window = positive(key, v)?,
            "embedding_epochs" => self.embedding_epochs = positive(key, v)?,
            "negative_samples" => self.negative_samples = positive(key, v)?,
            "learning_rate" => {
                let lr: f64 = parse(key, v)?;
                if !(lr > 0.0 && lr.is_finite()) {
                    return Err(ConfigError::InvalidValue { key: key.into(), value: v.into(), reason: "must be positive".into() });
                }
                self.learning_rate = lr;
            }
            "min_count" => self.min_count = positive(key, v)?,
            "unique" => self.unique = parse(key, v)?,
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.to_path_buf(), reason: e.to_string() })?;
        self.apply_text(&text)
    }

    /// Applies `VULNWATCH_<KEY>` variables for known keys; anything else (tokens, API
    /// keys) is ignored.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut pairs: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| {
                let key = k.as_ref().strip_prefix(ENV_PREFIX)?.to_ascii_lowercase();
                KEYS.contains(&key.as_str()).then(|| (key, v.as_ref().to_string()))
            })
            .collect();
        pairs.sort();
        for (k, v) in pairs {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Defaults, then the optional file, then the environment.
    pub fn load(file: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        if let Some(p) = file {
            cfg.apply_file(p)?;
        }
        cfg.apply_env(std::env::vars())?;
        Ok(cfg)
    }
}
