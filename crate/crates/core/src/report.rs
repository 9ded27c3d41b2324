//! Pipeline orchestration and analyst report rendering.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, OutputFormat, PipelineConfig, TopicK};
use crate::cve::{count_mentions, cvss_correlation, Correlation, CveCountRow, CveError, CvssResolver, TimeWindow};
use crate::ingest::{compute_stats, keyword_filter, read_corpus, CorpusStats, DateRange, IngestError, ReadOptions, Tweet};
use crate::kmeans::KMeansError;
use crate::relevance::{
    cluster_relevance, filter_relevant, read_verdicts, zero_shot_classify, ClusterRelevanceOptions,
    EntailmentScorer, FailPolicy, HypothesisConfig, Method, RelevanceError, RelevanceVerdict,
};
use crate::stopwords::{is_stopword, STOPWORDS_VERSION};
use crate::text::{tokenize, tokenize_text, TokenizerOptions};
use crate::topics::{mine_topics, train_word2vec, EmbeddingHyperparams, TopicCluster, TopicError, TopicOptions, TopicSelection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Ingest,
    Relevance,
    Cves,
    Topics,
    Phrases,
    Render,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Relevance => "relevance",
            Stage::Cves => "cves",
            Stage::Topics => "topics",
            Stage::Phrases => "phrases",
            Stage::Render => "render",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Relevance(#[from] RelevanceError),
    #[error(transparent)]
    Cve(#[from] CveError),
    #[error(transparent)]
    Topic(#[from] TopicError),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Broad failure classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureClass {
    Usage,
    Data,
    External,
}

impl StageError {
    pub fn class(&self) -> FailureClass {
        match self {
            StageError::Config(_) | StageError::Invalid(_) => FailureClass::Usage,
            StageError::Relevance(RelevanceError::ScorerUnreachable { .. } | RelevanceError::ScoreOutOfRange { .. })
            | StageError::Cve(CveError::Unavailable(_)) => FailureClass::External,
            StageError::Relevance(RelevanceError::InvalidConfig(_)) => FailureClass::Usage,
            _ => FailureClass::Data,
        }
    }
}

#[derive(Debug, Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: StageError,
}

impl PipelineError {
    pub fn new(stage: Stage, source: impl Into<StageError>) -> Self {
        Self { stage, source: source.into() }
    }

    pub fn class(&self) -> FailureClass {
        self.source.class()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseCount {
    pub phrase: String,
    pub count: usize,
}

/// Most frequent contiguous token n-grams with `lo <= n <= hi`. N-grams made only of
/// stopwords are skipped; ties are ordered lexicographically.
pub fn top_phrases(
    tweets: &[Tweet],
    n: usize,
    ngram_range: (usize, usize),
    tokenizer: &TokenizerOptions,
) -> Result<Vec<PhraseCount>, StageError> {
    let (lo, hi) = ngram_range;
    if !(1 <= lo && lo <= hi && hi <= 3) {
        return Err(StageError::Invalid(format!("n-gram range ({lo}, {hi}) must satisfy 1 <= lo <= hi <= 3")));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for t in tweets {
        let toks = tokenize_text(&t.text, tokenizer);
        for size in lo..=hi {
            for w in toks.windows(size) {
                if w.iter().all(|x| is_stopword(x)) {
                    continue;
                }
                *counts.entry(w.join(" ")).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<PhraseCount> = counts.into_iter().map(|(phrase, count)| PhraseCount { phrase, count }).collect();
    ranked.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.phrase.cmp(&b.phrase)));
    ranked.truncate(n);
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub records_read: usize,
    pub malformed: usize,
    pub duplicates_dropped: usize,
    pub keyword_matches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retention {
    pub method: Method,
    pub total: usize,
    pub retained: usize,
    pub fraction: f64,
    pub scorer_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub stopwords_version: u32,
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub period: Option<DateRange>,
    pub ingest: IngestSummary,
    pub corpus_stats: CorpusStats,
    pub retention: Retention,
    pub distinct_cves: usize,
    pub top_cves: Vec<CveCountRow>,
    pub correlation: Option<Correlation>,
    pub topic_k: Option<usize>,
    pub topic_sse_curve: Option<Vec<(usize, f64)>>,
    pub topics: Vec<TopicCluster>,
    pub top_phrases: Vec<PhraseCount>,
    pub warnings: Vec<String>,
    pub provenance: Provenance,
}

/// External services a run may use.
#[derive(Default)]
pub struct Services<'a> {
    pub scorer: Option<&'a dyn EntailmentScorer>,
    pub cvss: Option<&'a mut CvssResolver>,
    pub fail_policy: Option<FailPolicy>,
}

/// Verdicts for `corpus` under the configured method, plus the count of tweets the
/// scorer could not score.
pub fn relevance_verdicts(
    config: &PipelineConfig,
    corpus: &[Tweet],
    services: &Services<'_>,
) -> Result<(Vec<RelevanceVerdict>, usize), StageError> {
    match config.method {
        Method::Kmeans => {
            let opts = ClusterRelevanceOptions { min_df: config.relevance_min_df, ..ClusterRelevanceOptions::new() };
            Ok((cluster_relevance(corpus, config.relevance_k, config.seed, &opts)?.verdicts, 0))
        }
        Method::Zeroshot => {
            if let Some(path) = &config.verdicts {
                let file = fs::File::open(path)?;
                let all = read_verdicts(io::BufReader::new(file))?;
                let by_id: HashMap<&str, &RelevanceVerdict> = all.iter().map(|v| (v.tweet_id.as_str(), v)).collect();
                let verdicts = corpus
                    .iter()
                    .enumerate()
                    .map(|(position, t)| {
                        by_id.get(t.id.as_str()).map(|v| (*v).clone()).ok_or(RelevanceError::Misaligned { position })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                return Ok((verdicts, 0));
            }
            let scorer = services
                .scorer
                .ok_or_else(|| StageError::Invalid("zero-shot filtering needs scorer_url or a verdicts file".into()))?;
            let hypothesis = HypothesisConfig { template: config.hypothesis.clone(), threshold: config.threshold };
            let policy = services.fail_policy.unwrap_or(FailPolicy {
                retries: config.scorer_retries,
                failure_budget: config.scorer_failure_budget,
                max_in_flight: config.scorer_in_flight,
                ..FailPolicy::default()
            });
            let out = zero_shot_classify(corpus, scorer, &hypothesis, &policy)?;
            Ok((out.verdicts, out.failed))
        }
    }
}

/// CVE counting window from `window_start` / `window_end`; an open side is unbounded.
pub fn time_window(config: &PipelineConfig) -> Result<Option<TimeWindow>, CveError> {
    match (config.window_start, config.window_end) {
        (None, None) => Ok(None),
        (s, e) => TimeWindow::new(s.unwrap_or(DateTime::<Utc>::MIN_UTC), e.unwrap_or(DateTime::<Utc>::MAX_UTC)).map(Some),
    }
}

pub fn embedding_hyperparams(config: &PipelineConfig) -> EmbeddingHyperparams {
    EmbeddingHyperparams {
        dim: config.embedding_dim,
        window: config.embedding_window,
        negative_samples: config.negative_samples,
        epochs: config.embedding_epochs,
        learning_rate: config.learning_rate,
        min_count: config.min_count,
        seed: config.seed,
    }
}

/// Topic options for a run; the collection keyword is never used as a topic keyword
/// since every tweet contains it.
pub fn topic_options(config: &PipelineConfig) -> TopicOptions {
    let selection = match config.topic_k {
        TopicK::Fixed(k) => TopicSelection::Fixed(k),
        TopicK::Auto => TopicSelection::Auto((config.topic_scan.0..=config.topic_scan.1).collect()),
    };
    TopicOptions {
        selection,
        seed: config.seed,
        unique: config.unique,
        excluded_keywords: vec![config.keyword.to_lowercase()],
        ..TopicOptions::default()
    }
}

pub fn is_insufficient_data(e: &TopicError) -> bool {
    matches!(
        e,
        TopicError::EmptyVocabulary(_)
            | TopicError::TooFewTweets { .. }
            | TopicError::KMeans(KMeansError::TooFewDistinct { .. } | KMeansError::TooFewCurvePoints(_) | KMeansError::Empty)
    )
}

/// Runs ingest, keyword filter, relevance filtering, CVE mining, topic mining and
/// phrase counting over the archive at `corpus`.
pub fn build_report(config: &PipelineConfig, corpus: &Path, services: Services<'_>) -> Result<Report, PipelineError> {
    let mut services = services;
    let mut warnings = Vec::new();
    let read_opts = ReadOptions { strictness: config.strictness, ..ReadOptions::default() };
    let read = read_corpus(corpus, read_opts).map_err(|e| PipelineError::new(Stage::Ingest, e))?;
    if read.malformed > 0 {
        warnings.push(format!("{} malformed archive records skipped", read.malformed));
    }
    if read.duplicates_dropped > 0 {
        warnings.push(format!("{} duplicate tweet ids dropped", read.duplicates_dropped));
    }
    let collected = keyword_filter(&read.tweets, &config.keyword);
    let stats = compute_stats(&collected);
    let ingest = IngestSummary {
        records_read: read.tweets.len() + read.malformed + read.duplicates_dropped,
        malformed: read.malformed,
        duplicates_dropped: read.duplicates_dropped,
        keyword_matches: collected.len(),
    };
    let provenance = Provenance {
        tool_version: crate::VERSION.to_string(),
        stopwords_version: STOPWORDS_VERSION,
        config: config.clone(),
    };

    let mut report = Report {
        period: stats.date_range.clone(),
        ingest,
        corpus_stats: stats,
        retention: Retention { method: config.method, total: 0, retained: 0, fraction: 0.0, scorer_failures: 0 },
        distinct_cves: 0,
        top_cves: Vec::new(),
        correlation: None,
        topic_k: None,
        topic_sse_curve: None,
        topics: Vec::new(),
        top_phrases: Vec::new(),
        warnings,
        provenance,
    };
    if collected.is_empty() {
        report.warnings.push(format!("no tweets containing {:?}; report is empty", config.keyword));
        return Ok(report);
    }

    // Relevance
    let (verdicts, failures) =
        relevance_verdicts(config, &collected, &services).map_err(|e| PipelineError::new(Stage::Relevance, e))?;
    let (relevant, fraction) =
        filter_relevant(&verdicts, &collected).map_err(|e| PipelineError::new(Stage::Relevance, e))?;
    report.retention = Retention {
        method: config.method,
        total: collected.len(),
        retained: relevant.len(),
        fraction,
        scorer_failures: failures,
    };
    if failures > 0 {
        report.warnings.push(format!("{failures} tweets could not be scored and were dropped"));
    }

    // CVEs
    let window = time_window(config).map_err(|e| PipelineError::new(Stage::Cves, e))?;
    let mut rows = count_mentions(&relevant, window, config.count_mode);
    report.distinct_cves = rows.len();
    if let Some(resolver) = services.cvss.as_deref_mut() {
        let failed = resolver.enrich(&mut rows);
        if !failed.is_empty() {
            report.warnings.push(format!("CVSS lookup failed for {} CVEs (first: {})", failed.len(), failed[0].0));
        }
        match cvss_correlation(&rows) {
            Ok(c) => report.correlation = Some(c),
            Err(e) => report.warnings.push(format!("no count/CVSS correlation: {e}")),
        }
    } else if !rows.is_empty() {
        report.warnings.push("no CVSS source configured; scores and correlation omitted".into());
    }
    rows.truncate(config.top_cves);
    report.top_cves = rows;

    // Topics
    let topic_docs: Vec<_> = relevant.iter().map(|t| tokenize(t.id.clone(), &t.text, &TokenizerOptions::default())).collect();
    let topics = train_word2vec(&topic_docs, &embedding_hyperparams(config))
        .and_then(|model| mine_topics(&relevant, &model, &topic_options(config)));
    match topics {
        Ok(t) => {
            report.topic_k = Some(t.k);
            report.topic_sse_curve = t.sse_curve;
            report.topics = t.clusters;
        }
        Err(e) if is_insufficient_data(&e) => report.warnings.push(format!("topic analysis skipped: {e}")),
        Err(e) => return Err(PipelineError::new(Stage::Topics, e)),
    }

    // Phrases over the whole keyword corpus
    report.top_phrases = top_phrases(&collected, config.top_phrases, config.phrase_ngram, &TokenizerOptions::default())
        .map_err(|e| PipelineError::new(Stage::Phrases, e))?;
    Ok(report)
}

/// Rendered output: a single document or one named file per table.
#[derive(Debug, Clone, PartialEq)]
pub enum Rendered {
    Document(String),
    Files(Vec<(String, String)>),
}

impl Rendered {
    /// Documents go to `dest` as a file; file sets go into `dest` as a directory.
    pub fn write_to(&self, dest: &Path) -> io::Result<Vec<PathBuf>> {
        match self {
            Rendered::Document(text) => {
                fs::write(dest, text)?;
                Ok(vec![dest.to_path_buf()])
            }
            Rendered::Files(files) => {
                fs::create_dir_all(dest)?;
                files
                    .iter()
                    .map(|(name, body)| {
                        let p = dest.join(name);
                        fs::write(&p, body).map(|_| p)
                    })
                    .collect()
            }
        }
    }
}

pub fn render(report: &Report, format: OutputFormat) -> Rendered {
    match format {
        OutputFormat::Json => Rendered::Document(to_json(report)),
        OutputFormat::Markdown => Rendered::Document(to_markdown(report)),
        OutputFormat::Csv => Rendered::Files(to_csv(report)),
    }
}

pub fn to_json(report: &Report) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serialization is infallible");
    s.push('\n');
    s
}

pub fn parse_report(text: &str) -> Result<Report, serde_json::Error> {
    serde_json::from_str(text)
}

fn fmt_score(s: Option<f64>) -> String {
    s.map_or_else(|| "N/A".into(), |v| format!("{v:.1}"))
}

fn md_escape(s: &str) -> String {
    s.replace('|', "\\|")
}

fn to_markdown(r: &Report) -> String {
    let mut out = String::new();
    let cfg = &r.provenance.config;
    let _ = writeln!(out, "# Vulnerability chatter report\n");
    match &r.period {
        Some(p) => {
            let _ = writeln!(out, "Period: {} to {}\n", crate::ingest::format_timestamp(&p.start), crate::ingest::format_timestamp(&p.end));
        }
        None => out.push_str("Period: no tweets\n\n"),
    }

    let s = &r.corpus_stats;
    out.push_str("## Corpus characteristics\n\n| Statistic | Value |\n|---|---|\n");
    let _ = writeln!(out, "| Number of Tweets | {} |", s.tweet_count);
    let _ = writeln!(out, "| Avg. Tweets per Day | {:.0} |", s.avg_tweets_per_day);
    let _ = writeln!(out, "| Avg. Words per Tweet | {:.0} |", s.avg_words_per_tweet);
    let _ = writeln!(out, "| % English Tweets | {:.0}% |", s.pct_english);
    let _ = writeln!(out, "| % Tweets with URL | {:.0}% |", s.pct_with_url);
    out.push('\n');

    let ret = &r.retention;
    out.push_str("## Relevance filtering\n\n");
    let _ = writeln!(
        out,
        "Method `{}` retained {} of {} tweets ({:.2}%); {} filtered out.\n",
        ret.method,
        ret.retained,
        ret.total,
        100.0 * ret.fraction,
        ret.total - ret.retained
    );

    out.push_str("## Most mentioned CVEs\n\n| CVE ID | CVSS3 | Tweet Count |\n|---|---|---|\n");
    for row in &r.top_cves {
        let _ = writeln!(out, "| {} | {} | {} |", row.cve_id, fmt_score(row.cvss3), row.tweet_count);
    }
    match &r.correlation {
        Some(c) => {
            let _ = writeln!(
                out,
                "\nCorrelation of tweet count with CVSS3: r = {:.2} over {} CVEs ({} without a score excluded).\n",
                c.r, c.used, c.excluded
            );
        }
        None => out.push_str("\nCorrelation of tweet count with CVSS3: not available.\n\n"),
    }

    out.push_str("## Topics\n\n| ID | Total Tweets | Keywords |\n|---|---|---|\n");
    for t in &r.topics {
        let _ = writeln!(out, "| {} | {} | {} |", t.id, t.tweet_count, md_escape(&t.keywords.join(", ")));
    }
    out.push('\n');

    out.push_str("## Most common phrases\n\n| Phrase | Count |\n|---|---|\n");
    for p in &r.top_phrases {
        let _ = writeln!(out, "| {} | {} |", md_escape(&p.phrase), p.count);
    }
    out.push('\n');

    if !r.warnings.is_empty() {
        out.push_str("## Warnings\n\n");
        for w in &r.warnings {
            let _ = writeln!(out, "- {w}");
        }
        out.push('\n');
    }

    let _ = writeln!(
        out,
        "---\nvulnwatch {} · seed {} · method {} · keyword \"{}\" · stopwords v{}",
        r.provenance.tool_version, cfg.seed, cfg.method, cfg.keyword, r.provenance.stopwords_version
    );
    out
}

fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
}

fn to_csv(r: &Report) -> Vec<(String, String)> {
    let s = &r.corpus_stats;
    let stats = csv_table(
        &["statistic", "value"],
        [
            vec!["tweet_count".into(), s.tweet_count.to_string()],
            vec!["avg_tweets_per_day".into(), s.avg_tweets_per_day.to_string()],
            vec!["avg_words_per_tweet".into(), s.avg_words_per_tweet.to_string()],
            vec!["pct_english".into(), s.pct_english.to_string()],
            vec!["pct_with_url".into(), s.pct_with_url.to_string()],
        ],
    );
    let ret = &r.retention;
    let retention = csv_table(
        &["method", "total", "retained", "fraction", "scorer_failures"],
        [vec![
            ret.method.to_string(),
            ret.total.to_string(),
            ret.retained.to_string(),
            ret.fraction.to_string(),
            ret.scorer_failures.to_string(),
        ]],
    );
    let cves = csv_table(
        &["cve_id", "tweet_count", "cvss3"],
        r.top_cves.iter().map(|c| {
            vec![c.cve_id.to_string(), c.tweet_count.to_string(), c.cvss3.map_or_else(|| "NA".into(), |v| v.to_string())]
        }),
    );
    let topics = csv_table(
        &["id", "tweet_count", "keywords"],
        r.topics.iter().map(|t| vec![t.id.to_string(), t.tweet_count.to_string(), t.keywords.join(";")]),
    );
    let phrases = csv_table(&["phrase", "count"], r.top_phrases.iter().map(|p| vec![p.phrase.clone(), p.count.to_string()]));
    vec![
        ("corpus_stats.csv".into(), stats),
        ("retention.csv".into(), retention),
        ("top_cves.csv".into(), cves),
        ("topics.csv".into(), topics),
        ("top_phrases.csv".into(), phrases),
    ]
}

/// Tweet ids appearing in more than one verdict, for diagnostics.
pub fn duplicate_verdict_ids(verdicts: &[RelevanceVerdict]) -> Vec<String> {
    let mut seen = HashSet::new();
    verdicts.iter().filter(|v| !seen.insert(v.tweet_id.as_str())).map(|v| v.tweet_id.clone()).collect()
}
