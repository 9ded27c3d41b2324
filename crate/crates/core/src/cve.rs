//! CVE identifiers: extraction, per-CVE tweet counts, CVSS v3 enrichment and the
//! count/score correlation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::LazyLock;

use chrono::{DateTime, Duration, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{format_timestamp, Tweet};

/// ASCII-only, case-insensitive CVE pattern.
pub const CVE_PATTERN: &str = r"(?i-u:cve)-[0-9]{4}-[0-9]{4,}";

static CVE_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(CVE_PATTERN).unwrap());
static CANONICAL_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^CVE-[0-9]{4}-[0-9]{4,}$").unwrap());

/// Environment variable holding the optional NVD API key.
pub const NVD_KEY_ENV: &str = "VULNWATCH_NVD_KEY";
pub const DEFAULT_NVD_URL: &str = "https://services.nvd.nist.gov/rest/json/cves/2.0";

/// Canonical uppercase identifier `CVE-YYYY-NNNN...`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CveId(String);

#[derive(Debug, Error, PartialEq)]
#[error("not a canonical CVE identifier: {0:?}")]
pub struct InvalidCveId(pub String);

impl CveId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for CveId {
    type Err = InvalidCveId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if CANONICAL_RE.is_match(s) {
            Ok(Self(s.to_string()))
        } else {
            Err(InvalidCveId(s.to_string()))
        }
    }
}

impl TryFrom<String> for CveId {
    type Error = InvalidCveId;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<CveId> for String {
    fn from(id: CveId) -> Self {
        id.0
    }
}

impl fmt::Display for CveId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Every occurrence, canonicalized, in text order (duplicates kept).
pub fn extract_cve_occurrences(text: &str) -> Vec<CveId> {
    CVE_RE.find_iter(text).map(|m| CveId(m.as_str().to_ascii_uppercase())).collect()
}

/// Distinct identifiers in order of first occurrence.
pub fn extract_cves(text: &str) -> Vec<CveId> {
    let mut seen = HashSet::new();
    extract_cve_occurrences(text).into_iter().filter(|id| seen.insert(id.clone())).collect()
}

pub fn mentions_cve(text: &str) -> bool {
    CVE_RE.is_match(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CveMention {
    pub cve_id: CveId,
    pub tweet_id: String,
    pub created_at: DateTime<Utc>,
}

pub fn mentions(tweets: &[Tweet]) -> Vec<CveMention> {
    tweets
        .iter()
        .flat_map(|t| {
            extract_cves(&t.text).into_iter().map(|cve_id| CveMention {
                cve_id,
                tweet_id: t.id.clone(),
                created_at: t.created_at,
            })
        })
        .collect()
}

/// Inclusive time window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeWindow {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl TimeWindow {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self, CveError> {
        if start > end {
            return Err(CveError::InvalidWindow);
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, t: &DateTime<Utc>) -> bool {
        self.start <= *t && *t <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountMode {
    /// A tweet counts at most once per CVE.
    #[default]
    PerTweet,
    /// Every in-text occurrence counts.
    PerOccurrence,
}

impl FromStr for CountMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-tweet" => Ok(Self::PerTweet),
            "per-occurrence" => Ok(Self::PerOccurrence),
            other => Err(format!("unknown count mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CveCountRow {
    pub cve_id: CveId,
    pub tweet_count: usize,
    pub cvss3: Option<f64>,
}

/// Per-CVE counts over tweets inside `window` (all tweets when `None`), sorted by count
/// descending then identifier ascending.
pub fn count_mentions(tweets: &[Tweet], window: Option<TimeWindow>, mode: CountMode) -> Vec<CveCountRow> {
    let mut counts: HashMap<CveId, usize> = HashMap::new();
    for t in tweets.iter().filter(|t| window.is_none_or(|w| w.contains(&t.created_at))) {
        let ids = match mode {
            CountMode::PerTweet => extract_cves(&t.text),
            CountMode::PerOccurrence => extract_cve_occurrences(&t.text),
        };
        for id in ids {
            *counts.entry(id).or_default() += 1;
        }
    }
    let mut rows: Vec<CveCountRow> = counts
        .into_iter()
        .map(|(cve_id, tweet_count)| CveCountRow { cve_id, tweet_count, cvss3: None })
        .collect();
    rows.sort_by(|a, b| b.tweet_count.cmp(&a.tweet_count).then_with(|| a.cve_id.cmp(&b.cve_id)));
    rows
}

#[derive(Debug, Error)]
pub enum CveError {
    #[error("window start is after its end")]
    InvalidWindow,
    #[error(transparent)]
    InvalidId(#[from] InvalidCveId),
    #[error("CVSS lookup for {0} failed: remote unreachable and no cached entry")]
    Unavailable(CveId),
    #[error("CVSS cache {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("CVSS cache {path} line {line}: {reason}")]
    CacheFormat { path: PathBuf, line: usize, reason: String },
}

/// Outcome of a CVSS lookup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvssStatus {
    Scored,
    /// Known to the source but without a CVSS v3 base score.
    Unscored,
    /// The source has no record of the identifier.
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CveRecord {
    pub cve_id: CveId,
    pub cvss3: Option<f64>,
    pub status: CvssStatus,
}

impl CveRecord {
    pub fn scored(cve_id: CveId, score: f64) -> Self {
        Self { cve_id, cvss3: Some(score), status: CvssStatus::Scored }
    }

    pub fn unscored(cve_id: CveId) -> Self {
        Self { cve_id, cvss3: None, status: CvssStatus::Unscored }
    }

    pub fn unknown(cve_id: CveId) -> Self {
        Self { cve_id, cvss3: None, status: CvssStatus::Unknown }
    }
}

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("unexpected status {0}")]
    Status(u16),
    #[error("unparseable response: {0}")]
    Parse(String),
}

/// A remote CVSS provider.
pub trait CvssSource {
    fn lookup(&self, id: &CveId) -> Result<CveRecord, SourceError>;
}

/// NVD CVE API client: `GET <base>?cveId=<id>`, optional `apiKey` header.
pub struct NvdClient {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl NvdClient {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(std::time::Duration::from_secs(30)))
            .build()
            .new_agent();
        Self { base_url: base_url.into(), api_key, agent }
    }

    pub fn from_env(base_url: impl Into<String>) -> Self {
        Self::new(base_url, std::env::var(NVD_KEY_ENV).ok().filter(|k| !k.is_empty()))
    }
}

impl CvssSource for NvdClient {
    fn lookup(&self, id: &CveId) -> Result<CveRecord, SourceError> {
        let mut req = self.agent.get(&self.base_url).query("cveId", id.as_str());
        if let Some(key) = &self.api_key {
            req = req.header("apiKey", key);
        }
        let mut resp = req.call().map_err(|e| SourceError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 404 {
            return Ok(CveRecord::unknown(id.clone()));
        }
        if status != 200 {
            return Err(SourceError::Status(status));
        }
        let body = resp.body_mut().read_to_string().map_err(|e| SourceError::Transport(e.to_string()))?;
        parse_nvd_response(id, &body)
    }
}

#[derive(Deserialize)]
struct NvdResponse {
    #[serde(default)]
    vulnerabilities: Vec<NvdVulnerability>,
}

#[derive(Deserialize)]
struct NvdVulnerability {
    cve: NvdCve,
}

#[derive(Deserialize)]
struct NvdCve {
    id: String,
    #[serde(default)]
    metrics: Option<NvdMetrics>,
}

#[derive(Deserialize)]
struct NvdMetrics {
    #[serde(rename = "cvssMetricV31", default)]
    v31: Vec<NvdCvssMetric>,
    #[serde(rename = "cvssMetricV30", default)]
    v30: Vec<NvdCvssMetric>,
}

#[derive(Deserialize)]
struct NvdCvssMetric {
    #[serde(rename = "type", default)]
    kind: Option<String>,
    #[serde(rename = "cvssData")]
    data: NvdCvssData,
}

#[derive(Deserialize)]
struct NvdCvssData {
    #[serde(rename = "baseScore")]
    base_score: f64,
}

/// Extracts the CVSS v3.x base score from an NVD CVE API response. v3.1 is preferred
/// over v3.0, and the NVD's own ("Primary") metric over secondary sources.
pub fn parse_nvd_response(id: &CveId, body: &str) -> Result<CveRecord, SourceError> {
    let resp: NvdResponse = serde_json::from_str(body).map_err(|e| SourceError::Parse(e.to_string()))?;
    let Some(vuln) = resp.vulnerabilities.into_iter().find(|v| v.cve.id.eq_ignore_ascii_case(id.as_str())) else {
        return Ok(CveRecord::unknown(id.clone()));
    };
    let Some(metrics) = vuln.cve.metrics else {
        return Ok(CveRecord::unscored(id.clone()));
    };
    let pick = |list: &[NvdCvssMetric]| {
        list.iter()
            .find(|m| m.kind.as_deref() == Some("Primary"))
            .or(list.first())
            .map(|m| m.data.base_score)
    };
    match pick(&metrics.v31).or_else(|| pick(&metrics.v30)) {
        Some(score) if (0.0..=10.0).contains(&score) => Ok(CveRecord::scored(id.clone(), score)),
        Some(score) => Err(SourceError::Parse(format!("base score {score} outside [0, 10]"))),
        None => Ok(CveRecord::unscored(id.clone())),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub cvss3: Option<f64>,
    pub fetched_at: DateTime<Utc>,
}

/// Append-only CVSS cache, one `cve_id<TAB>score-or-NA<TAB>fetched_at` line per
/// lookup. Later lines supersede earlier ones.
#[derive(Debug)]
pub struct CvssCache {
    path: PathBuf,
    entries: BTreeMap<CveId, CacheEntry>,
}

impl CvssCache {
    pub fn open(path: &Path) -> Result<Self, CveError> {
        let mut entries = BTreeMap::new();
        match std::fs::read_to_string(path) {
            Ok(text) => {
                for (i, line) in text.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let (id, entry) = parse_cache_line(line).map_err(|reason| CveError::CacheFormat {
                        path: path.to_path_buf(),
                        line: i + 1,
                        reason,
                    })?;
                    entries.insert(id, entry);
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(source) => return Err(CveError::Cache { path: path.to_path_buf(), source }),
        }
        Ok(Self { path: path.to_path_buf(), entries })
    }

    pub fn get(&self, id: &CveId) -> Option<&CacheEntry> {
        self.entries.get(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, id: &CveId, entry: CacheEntry) -> Result<(), CveError> {
        let line = cache_line(id, &entry);
        let io_err = |source| CveError::Cache { path: self.path.clone(), source };
        let mut f: File = OpenOptions::new().create(true).append(true).open(&self.path).map_err(io_err)?;
        f.write_all(line.as_bytes()).map_err(io_err)?;
        self.entries.insert(id.clone(), entry);
        Ok(())
    }
}

fn cache_line(id: &CveId, e: &CacheEntry) -> String {
    let score = e.cvss3.map_or_else(|| "NA".to_string(), |s| s.to_string());
    format!("{id}\t{score}\t{}\n", format_timestamp(&e.fetched_at))
}

fn parse_cache_line(line: &str) -> Result<(CveId, CacheEntry), String> {
    let mut parts = line.split('\t');
    let (Some(id), Some(score), Some(at), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err("expected three tab-separated fields".into());
    };
    let id: CveId = id.parse().map_err(|e: InvalidCveId| e.to_string())?;
    let cvss3 = match score {
        "NA" => None,
        s => {
            let v: f64 = s.parse().map_err(|_| format!("bad score {s:?}"))?;
            if !(0.0..=10.0).contains(&v) {
                return Err(format!("score {v} outside [0, 10]"));
            }
            Some(v)
        }
    };
    let fetched_at = DateTime::parse_from_rfc3339(at).map_err(|e| e.to_string())?.with_timezone(&Utc);
    Ok((id, CacheEntry { cvss3, fetched_at }))
}

/// Cache-first CVSS lookup with write-through from the remote source.
pub struct CvssResolver {
    cache: Option<CvssCache>,
    remote: Option<Box<dyn CvssSource>>,
    ttl: Duration,
}

impl CvssResolver {
    pub fn new(cache: Option<CvssCache>, remote: Option<Box<dyn CvssSource>>) -> Self {
        Self { cache, remote, ttl: Duration::days(7) }
    }

    pub fn with_ttl(mut self, ttl: Duration) -> Self {
        self.ttl = ttl;
        self
    }

    pub fn cache(&self) -> Option<&CvssCache> {
        self.cache.as_ref()
    }

    pub fn fetch_cvss(&mut self, id: &str) -> Result<CveRecord, CveError> {
        self.fetch_cvss_at(id, Utc::now())
    }

    /// Fresh cache entries win; stale or missing entries go to the remote, falling back
    /// to a stale entry when the remote fails. Unknown identifiers are not cached.
    pub fn fetch_cvss_at(&mut self, id: &str, now: DateTime<Utc>) -> Result<CveRecord, CveError> {
        let id: CveId = id.parse()?;
        let cached = self.cache.as_ref().and_then(|c| c.get(&id)).cloned();
        let from_cache = |e: &CacheEntry| match e.cvss3 {
            Some(s) => CveRecord::scored(id.clone(), s),
            None => CveRecord::unscored(id.clone()),
        };
        if let Some(e) = &cached {
            if now - e.fetched_at <= self.ttl {
                return Ok(from_cache(e));
            }
        }
        let remote = self.remote.as_ref().map(|r| r.lookup(&id));
        match (remote, cached) {
            (Some(Ok(rec)), _) => {
                if rec.status != CvssStatus::Unknown {
                    if let Some(cache) = self.cache.as_mut() {
                        cache.insert(&id, CacheEntry { cvss3: rec.cvss3, fetched_at: now })?;
                    }
                }
                Ok(rec)
            }
            (_, Some(e)) => Ok(from_cache(&e)),
            _ => Err(CveError::Unavailable(id)),
        }
    }

    /// Fills `cvss3` on each row; rows whose lookup fails stay unscored and their ids
    /// are returned.
    pub fn enrich(&mut self, rows: &mut [CveCountRow]) -> Vec<(CveId, String)> {
        let mut failures = Vec::new();
        for row in rows.iter_mut() {
            match self.fetch_cvss(row.cve_id.as_str()) {
                Ok(rec) => row.cvss3 = rec.cvss3,
                Err(e) => failures.push((row.cve_id.clone(), e.to_string())),
            }
        }
        failures
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CorrelationError {
    #[error("need at least 2 rows with scores, got {0}")]
    TooFewRows(usize),
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("input lengths differ")]
    LengthMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub used: usize,
    pub excluded: usize,
}

/// Sample Pearson correlation, two-pass (mean-centred) form.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, CorrelationError> {
    if xs.len() != ys.len() {
        return Err(CorrelationError::LengthMismatch);
    }
    let n = xs.len();
    if n < 2 {
        return Err(CorrelationError::TooFewRows(n));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(CorrelationError::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(CorrelationError::ZeroVariance("y"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Correlation of tweet counts with CVSS scores over rows that have a score.
pub fn cvss_correlation(rows: &[CveCountRow]) -> Result<Correlation, CorrelationError> {
    let (counts, scores): (Vec<f64>, Vec<f64>) =
        rows.iter().filter_map(|r| r.cvss3.map(|s| (r.tweet_count as f64, s))).unzip();
    if counts.len() < 2 {
        return Err(CorrelationError::TooFewRows(counts.len()));
    }
    let r = pearson(&counts, &scores).map_err(|e| match e {
        CorrelationError::ZeroVariance("x") => CorrelationError::ZeroVariance("tweet_count"),
        CorrelationError::ZeroVariance(_) => CorrelationError::ZeroVariance("cvss3"),
        other => other,
    })?;
    Ok(Correlation { r, used: counts.len(), excluded: rows.len() - counts.len() })
}
