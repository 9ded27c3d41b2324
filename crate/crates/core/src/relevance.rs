//! Cyber-relevance classification.
//!
//! Two routes are provided. [`cluster_relevance`] clusters TF-IDF vectors with k-means
//! and marks every cluster holding at least one CVE-bearing tweet as relevant.
//! [`zero_shot_classify`] asks an external entailment model how likely the hypothesis
//! "This text is related to cyber security" is given each tweet.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cve::mentions_cve;
use crate::ingest::Tweet;
use crate::kmeans::{kmeans_fit, ClusterModel, KMeansError, KMeansParams};
use crate::retry::Backoff;
use crate::text::{fit_vocabulary, tfidf_vectorize, tokenize, TokenizerOptions, VocabularyError};

pub const DEFAULT_HYPOTHESIS: &str = "This text is related to cyber security";

/// Environment variable with an optional bearer token for the remote scorer.
pub const SCORER_TOKEN_ENV: &str = "VULNWATCH_SCORER_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Kmeans,
    Zeroshot,
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kmeans" => Ok(Self::Kmeans),
            "zeroshot" => Ok(Self::Zeroshot),
            other => Err(format!("unknown method {other:?} (expected kmeans or zeroshot)")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Kmeans => "kmeans",
            Self::Zeroshot => "zeroshot",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceVerdict {
    pub tweet_id: String,
    pub method: Method,
    pub relevant: bool,
    /// `None` when the scorer failed for this tweet.
    pub score: Option<f64>,
    pub cluster_id: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisConfig {
    pub template: String,
    pub threshold: f64,
}

impl Default for HypothesisConfig {
    fn default() -> Self {
        Self { template: DEFAULT_HYPOTHESIS.to_string(), threshold: 0.5 }
    }
}

impl HypothesisConfig {
    pub fn validate(&self) -> Result<(), RelevanceError> {
        if self.template.trim().is_empty() {
            return Err(RelevanceError::InvalidConfig("hypothesis template is empty".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(RelevanceError::InvalidConfig(format!(
                "threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ScorerError {
    /// Worth retrying: transport failures and non-200 statuses.
    #[error("scorer request failed: {0}")]
    Retriable(String),
    #[error("scorer response invalid: {0}")]
    Invalid(String),
}

/// Probability that `hypothesis` is entailed by `premise`.
pub trait EntailmentScorer: Send + Sync {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<f64, ScorerError>;

    fn score_batch(&self, premises: &[&str], hypothesis: &str) -> Result<Vec<f64>, ScorerError> {
        premises.iter().map(|p| self.score(p, hypothesis)).collect()
    }
}

/// Keyword-driven stand-in for an NLI model: 0.9 when the lowercased premise contains
/// a security keyword, 0.1 otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockScorer;

pub const MOCK_KEYWORDS: [&str; 6] = ["vulnerability", "cve", "exploit", "patch", "malware", "security"];

impl EntailmentScorer for MockScorer {
    fn score(&self, premise: &str, _hypothesis: &str) -> Result<f64, ScorerError> {
        let p = premise.to_lowercase();
        Ok(if MOCK_KEYWORDS.iter().any(|k| p.contains(k)) { 0.9 } else { 0.1 })
    }
}

pub fn mock_scorer() -> MockScorer {
    MockScorer
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    premise: &'a str,
    hypothesis: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    entailment: f64,
}

#[derive(Serialize)]
struct BatchRequest<'a> {
    premises: &'a [&'a str],
    hypothesis: &'a str,
}

#[derive(Deserialize)]
struct BatchResponse {
    entailments: Vec<f64>,
}

pub fn score_request_body(premise: &str, hypothesis: &str) -> String {
    serde_json::to_string(&ScoreRequest { premise, hypothesis }).expect("serializable")
}

pub fn batch_request_body(premises: &[&str], hypothesis: &str) -> String {
    serde_json::to_string(&BatchRequest { premises, hypothesis }).expect("serializable")
}

/// Client for the remote scoring service (`POST /score`, `POST /score_batch`).
pub struct HttpScorer {
    base_url: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpScorer {
    pub fn new(base_url: impl Into<String>, token: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .new_agent();
        let base_url = base_url.into().trim_end_matches('/').to_string();
        Self { base_url, token, agent }
    }

    pub fn from_env(base_url: impl Into<String>) -> Self {
        Self::new(base_url, std::env::var(SCORER_TOKEN_ENV).ok().filter(|t| !t.is_empty()))
    }

    fn post(&self, path: &str, body: String) -> Result<String, ScorerError> {
        let mut req = self.agent.post(&format!("{}{path}", self.base_url)).content_type("application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send(body).map_err(|e| ScorerError::Retriable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(ScorerError::Retriable(format!("status {status}")));
        }
        resp.body_mut().read_to_string().map_err(|e| ScorerError::Retriable(e.to_string()))
    }
}

impl EntailmentScorer for HttpScorer {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<f64, ScorerError> {
        let body = self.post("/score", score_request_body(premise, hypothesis))?;
        let r: ScoreResponse = serde_json::from_str(&body).map_err(|e| ScorerError::Invalid(e.to_string()))?;
        Ok(r.entailment)
    }

    fn score_batch(&self, premises: &[&str], hypothesis: &str) -> Result<Vec<f64>, ScorerError> {
        let body = self.post("/score_batch", batch_request_body(premises, hypothesis))?;
        let r: BatchResponse = serde_json::from_str(&body).map_err(|e| ScorerError::Invalid(e.to_string()))?;
        if r.entailments.len() != premises.len() {
            return Err(ScorerError::Invalid(format!(
                "{} entailments for {} premises",
                r.entailments.len(),
                premises.len()
            )));
        }
        Ok(r.entailments)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FailPolicy {
    /// Retries per tweet after the first failed attempt.
    pub retries: u32,
    pub backoff: Backoff,
    /// Tweets allowed to end without a score before the whole run aborts.
    pub failure_budget: usize,
    /// Concurrent scorer calls.
    pub max_in_flight: usize,
}

impl Default for FailPolicy {
    fn default() -> Self {
        Self { retries: 3, backoff: Backoff::default(), failure_budget: 50, max_in_flight: 4 }
    }
}

#[derive(Debug, Error)]
pub enum RelevanceError {
    #[error("invalid hypothesis config: {0}")]
    InvalidConfig(String),
    #[error("scorer returned {value} for tweet {tweet_id}; entailment must lie in [0, 1]")]
    ScoreOutOfRange { tweet_id: String, value: f64 },
    #[error("scorer unreachable: {failed} tweets failed, budget is {budget} (last error: {last})")]
    ScorerUnreachable { failed: usize, budget: usize, last: String },
    #[error("cannot cluster an empty corpus")]
    EmptyCorpus,
    #[error("corpus of {n} tweets is smaller than k = {k}")]
    CorpusSmallerThanK { n: usize, k: usize },
    #[error(transparent)]
    KMeans(#[from] KMeansError),
    #[error(transparent)]
    Vocabulary(#[from] VocabularyError),
    #[error("verdicts and tweets are not aligned at position {position}")]
    Misaligned { position: usize },
    #[error("verdict file line {line}: {reason}")]
    VerdictFormat { line: usize, reason: String },
    #[error("verdict file: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotOutcome {
    pub verdicts: Vec<RelevanceVerdict>,
    /// Tweets that exhausted their retries.
    pub failed: usize,
}

fn score_with_retries(
    scorer: &dyn EntailmentScorer,
    premise: &str,
    hypothesis: &str,
    policy: &FailPolicy,
) -> Result<f64, ScorerError> {
    let mut attempt = 0;
    loop {
        match scorer.score(premise, hypothesis) {
            Ok(v) => return Ok(v),
            Err(ScorerError::Retriable(_)) if attempt < policy.retries => {
                policy.backoff.sleep(attempt);
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

enum Slot {
    Scored(f64),
    Failed,
}

/// Scores every tweet against the hypothesis. Up to `policy.max_in_flight` requests
/// run at once; verdicts come back in input order.
pub fn zero_shot_classify(
    tweets: &[Tweet],
    scorer: &dyn EntailmentScorer,
    config: &HypothesisConfig,
    policy: &FailPolicy,
) -> Result<ZeroShotOutcome, RelevanceError> {
    config.validate()?;
    let n = tweets.len();
    let slots: Mutex<Vec<Option<Slot>>> = Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let failed = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let fatal: Mutex<Option<RelevanceError>> = Mutex::new(None);
    let last_err: Mutex<String> = Mutex::new(String::new());

    let worker = || {
        while !abort.load(Ordering::SeqCst) {
            let i = next.fetch_add(1, Ordering::SeqCst);
            if i >= n {
                break;
            }
            let tweet = &tweets[i];
            let slot = match score_with_retries(scorer, &tweet.text, &config.template, policy) {
                Ok(v) if (0.0..=1.0).contains(&v) => Slot::Scored(v),
                Ok(v) => {
                    abort.store(true, Ordering::SeqCst);
                    fatal.lock().unwrap().get_or_insert(RelevanceError::ScoreOutOfRange {
                        tweet_id: tweet.id.clone(),
                        value: v,
                    });
                    break;
                }
                Err(e) => {
                    *last_err.lock().unwrap() = e.to_string();
                    if failed.fetch_add(1, Ordering::SeqCst) + 1 > policy.failure_budget {
                        abort.store(true, Ordering::SeqCst);
                        break;
                    }
                    Slot::Failed
                }
            };
            slots.lock().unwrap()[i] = Some(slot);
        }
    };

    let workers = policy.max_in_flight.clamp(1, n.max(1));
    if workers == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(worker);
            }
        });
    }

    if let Some(e) = fatal.into_inner().unwrap() {
        return Err(e);
    }
    let failed = failed.into_inner();
    if failed > policy.failure_budget {
        return Err(RelevanceError::ScorerUnreachable {
            failed,
            budget: policy.failure_budget,
            last: last_err.into_inner().unwrap(),
        });
    }
    let verdicts = tweets
        .iter()
        .zip(slots.into_inner().unwrap())
        .map(|(t, slot)| {
            let score = match slot.expect("every slot filled when not aborted") {
                Slot::Scored(v) => Some(v),
                Slot::Failed => None,
            };
            RelevanceVerdict {
                tweet_id: t.id.clone(),
                method: Method::Zeroshot,
                relevant: score.is_some_and(|s| s >= config.threshold),
                score,
                cluster_id: None,
            }
        })
        .collect();
    Ok(ZeroShotOutcome { verdicts, failed })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ClusterRelevanceOptions {
    pub tokenizer: TokenizerOptions,
    pub min_df: usize,
    pub kmeans: KMeansParams,
}

impl ClusterRelevanceOptions {
    pub fn new() -> Self {
        Self { min_df: 1, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRelevance {
    pub verdicts: Vec<RelevanceVerdict>,
    pub model: ClusterModel,
    /// Per cluster: whether it holds a CVE-bearing tweet.
    pub relevant_clusters: Vec<bool>,
}

/// TF-IDF + k-means, labelling a cluster relevant iff one of its tweets names a CVE.
pub fn cluster_relevance(
    tweets: &[Tweet],
    k: usize,
    seed: u64,
    options: &ClusterRelevanceOptions,
) -> Result<ClusterRelevance, RelevanceError> {
    if tweets.is_empty() {
        return Err(RelevanceError::EmptyCorpus);
    }
    if tweets.len() < k {
        return Err(RelevanceError::CorpusSmallerThanK { n: tweets.len(), k });
    }
    let docs: Vec<_> = tweets.iter().map(|t| tokenize(t.id.clone(), &t.text, &options.tokenizer)).collect();
    let vocab = fit_vocabulary(&docs, options.min_df.max(1))?;
    let vectors: Vec<_> = docs.iter().map(|d| tfidf_vectorize(d, &vocab)).collect();
    let model = kmeans_fit(&vectors, k, seed, &options.kmeans)?;

    let mut relevant_clusters = vec![false; k];
    for (t, &c) in tweets.iter().zip(&model.assignments) {
        if mentions_cve(&t.text) {
            relevant_clusters[c] = true;
        }
    }
    let verdicts = tweets
        .iter()
        .zip(&model.assignments)
        .map(|(t, &c)| {
            let relevant = relevant_clusters[c];
            RelevanceVerdict {
                tweet_id: t.id.clone(),
                method: Method::Kmeans,
                relevant,
                score: Some(if relevant { 1.0 } else { 0.0 }),
                cluster_id: Some(c),
            }
        })
        .collect();
    Ok(ClusterRelevance { verdicts, model, relevant_clusters })
}

/// Relevant tweets and the retained fraction. Verdicts are matched to tweets by id.
pub fn filter_relevant(verdicts: &[RelevanceVerdict], tweets: &[Tweet]) -> Result<(Vec<Tweet>, f64), RelevanceError> {
    if verdicts.len() != tweets.len() {
        return Err(RelevanceError::Misaligned { position: verdicts.len().min(tweets.len()) });
    }
    let by_id: HashMap<&str, bool> = verdicts.iter().map(|v| (v.tweet_id.as_str(), v.relevant)).collect();
    let mut kept = Vec::new();
    for (position, t) in tweets.iter().enumerate() {
        match by_id.get(t.id.as_str()) {
            Some(true) => kept.push(t.clone()),
            Some(false) => {}
            None => return Err(RelevanceError::Misaligned { position }),
        }
    }
    let fraction = if tweets.is_empty() { 0.0 } else { kept.len() as f64 / tweets.len() as f64 };
    Ok((kept, fraction))
}

pub fn write_verdicts<W: Write>(mut w: W, verdicts: &[RelevanceVerdict]) -> io::Result<()> {
    for v in verdicts {
        serde_json::to_writer(&mut w, v)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_verdicts<R: BufRead>(r: R) -> Result<Vec<RelevanceVerdict>, RelevanceError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: RelevanceVerdict = serde_json::from_str(&line)
            .map_err(|e| RelevanceError::VerdictFormat { line: i + 1, reason: e.to_string() })?;
        if v.score.is_some_and(|s| !(0.0..=1.0).contains(&s)) {
            return Err(RelevanceError::VerdictFormat { line: i + 1, reason: "score outside [0, 1]".into() });
        }
        out.push(v);
    }
    Ok(out)
}
