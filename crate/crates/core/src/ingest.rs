//! Tweet archives: reading, writing, keyword filtering, corpus statistics and live
//! stream collection.
//!
//! Archives are UTF-8, one JSON object per line:
//!
//! ```text
//! {"id":"1","created_at":"2020-02-19T10:00:00Z","text":"...","lang":"en","urls":[],"author_id":null}
//! ```

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, SecondsFormat, Timelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retry::Backoff;

/// Environment variable holding the bearer token for the live stream.
pub const STREAM_TOKEN_ENV: &str = "VULNWATCH_STREAM_TOKEN";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed record at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("duplicate tweet id {id:?} at line {line}")]
    DuplicateId { line: usize, id: String },
}

/// A single ingested post.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tweet {
    pub id: String,
    #[serde(with = "rfc3339_seconds")]
    pub created_at: DateTime<Utc>,
    pub text: String,
    pub lang: String,
    pub urls: Vec<String>,
    #[serde(default)]
    pub author_id: Option<String>,
}

impl Tweet {
    pub fn new(id: impl Into<String>, created_at: DateTime<Utc>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            created_at: truncate_to_second(created_at),
            text: text.into(),
            lang: "und".to_string(),
            urls: Vec::new(),
            author_id: None,
        }
    }

    pub fn with_lang(mut self, lang: impl Into<String>) -> Self {
        self.lang = lang.into();
        self
    }

    pub fn with_urls<I, S>(mut self, urls: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.urls = urls.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_author(mut self, author: impl Into<String>) -> Self {
        self.author_id = Some(author.into());
        self
    }

    /// Checks the record-level invariants.
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.text.trim().is_empty() {
            return Err("empty text".into());
        }
        if self.lang.is_empty() {
            return Err("empty lang".into());
        }
        Ok(())
    }

    /// Whitespace-delimited word count of the raw text.
    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

fn truncate_to_second(t: DateTime<Utc>) -> DateTime<Utc> {
    t.with_nanosecond(0).unwrap_or(t)
}

mod rfc3339_seconds {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Secs, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        let parsed = DateTime::parse_from_rfc3339(&raw).map_err(de::Error::custom)?;
        Ok(super::truncate_to_second(parsed.with_timezone(&Utc)))
    }
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strictness {
    /// The first malformed line aborts the read.
    Strict,
    /// Malformed lines are skipped and counted.
    #[default]
    SkipAndCount,
}

impl std::str::FromStr for Strictness {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(Self::Strict),
            "skip-and-count" | "skip" => Ok(Self::SkipAndCount),
            other => Err(format!("unknown strictness {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DuplicatePolicy {
    #[default]
    KeepFirst,
    Reject,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReadOptions {
    pub strictness: Strictness,
    pub duplicates: DuplicatePolicy,
}

impl ReadOptions {
    pub fn strict() -> Self {
        Self { strictness: Strictness::Strict, ..Self::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReadOutcome {
    pub tweets: Vec<Tweet>,
    pub malformed: usize,
    pub duplicates_dropped: usize,
}

pub fn read_corpus(path: &Path, options: ReadOptions) -> Result<ReadOutcome, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    read_corpus_from(BufReader::new(file), options).map_err(|e| match e {
        IngestError::Io { source, .. } => IngestError::Io { path: path.to_path_buf(), source },
        other => other,
    })
}

/// Reads an archive from any buffered source. Blank lines are ignored.
pub fn read_corpus_from<R: BufRead>(reader: R, options: ReadOptions) -> Result<ReadOutcome, IngestError> {
    let mut out = ReadOutcome::default();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| IngestError::Io { path: PathBuf::new(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Tweet>(&line)
            .map_err(|e| e.to_string())
            .and_then(|t| t.validate().map(|_| t));
        let tweet = match parsed {
            Ok(t) => t,
            Err(reason) => match options.strictness {
                Strictness::Strict => return Err(IngestError::Malformed { line: line_no, reason }),
                Strictness::SkipAndCount => {
                    out.malformed += 1;
                    continue;
                }
            },
        };
        if !seen.insert(tweet.id.clone()) {
            match options.duplicates {
                DuplicatePolicy::KeepFirst => {
                    out.duplicates_dropped += 1;
                    continue;
                }
                DuplicatePolicy::Reject => {
                    return Err(IngestError::DuplicateId { line: line_no, id: tweet.id })
                }
            }
        }
        out.tweets.push(tweet);
    }
    Ok(out)
}

/// Serializes one tweet as a single archive line, newline included.
pub fn archive_line(tweet: &Tweet) -> String {
    let mut line = serde_json::to_string(tweet).expect("tweet serialization is infallible");
    line.push('\n');
    line
}

pub fn write_corpus_to<W: Write>(writer: W, tweets: &[Tweet]) -> io::Result<()> {
    let mut w = BufWriter::new(writer);
    for t in tweets {
        w.write_all(archive_line(t).as_bytes())?;
    }
    w.flush()
}

pub fn write_corpus(path: &Path, tweets: &[Tweet]) -> io::Result<()> {
    write_corpus_to(File::create(path)?, tweets)
}

/// Append-only archive writer. Each record goes out in a single `write_all` followed by
/// a flush, so a crash never leaves a partially written line from this writer.
pub struct ArchiveSink {
    file: File,
}

impl ArchiveSink {
    pub fn open(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file })
    }

    pub fn append(&mut self, tweet: &Tweet) -> io::Result<()> {
        self.file.write_all(archive_line(tweet).as_bytes())?;
        self.file.flush()
    }
}

/// Tweets whose text contains `keyword`, compared case-insensitively.
pub fn keyword_filter(tweets: &[Tweet], keyword: &str) -> Vec<Tweet> {
    let needle = keyword.to_lowercase();
    tweets.iter().filter(|t| contains_keyword(&t.text, &needle)).cloned().collect()
}

/// `needle` must already be lowercase.
pub fn contains_keyword(text: &str, needle: &str) -> bool {
    text.to_lowercase().contains(needle)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DateRange {
    #[serde(with = "rfc3339_seconds")]
    pub start: DateTime<Utc>,
    #[serde(with = "rfc3339_seconds")]
    pub end: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub tweet_count: usize,
    pub avg_tweets_per_day: f64,
    pub avg_words_per_tweet: f64,
    pub pct_english: f64,
    pub pct_with_url: f64,
    pub date_range: Option<DateRange>,
}

impl CorpusStats {
    pub fn empty() -> Self {
        Self {
            tweet_count: 0,
            avg_tweets_per_day: 0.0,
            avg_words_per_tweet: 0.0,
            pct_english: 0.0,
            pct_with_url: 0.0,
            date_range: None,
        }
    }

    /// Number of UTC calendar days spanned by the date range, inclusive.
    pub fn days_spanned(&self) -> i64 {
        self.date_range.as_ref().map_or(0, |r| calendar_days(r.start.date_naive(), r.end.date_naive()))
    }
}

fn calendar_days(start: NaiveDate, end: NaiveDate) -> i64 {
    (end - start).num_days() + 1
}

pub fn compute_stats(tweets: &[Tweet]) -> CorpusStats {
    let n = tweets.len();
    if n == 0 {
        return CorpusStats::empty();
    }
    // Integer accumulators keep the result independent of input order.
    let mut words: u64 = 0;
    let mut english = 0usize;
    let mut with_url = 0usize;
    let mut start = tweets[0].created_at;
    let mut end = start;
    for t in tweets {
        words += t.word_count() as u64;
        english += usize::from(t.lang == "en");
        with_url += usize::from(!t.urls.is_empty());
        start = start.min(t.created_at);
        end = end.max(t.created_at);
    }
    let days = calendar_days(start.date_naive(), end.date_naive());
    let nf = n as f64;
    CorpusStats {
        tweet_count: n,
        avg_tweets_per_day: nf / days as f64,
        avg_words_per_tweet: words as f64 / nf,
        pct_english: 100.0 * english as f64 / nf,
        pct_with_url: 100.0 * with_url as f64 / nf,
        date_range: Some(DateRange { start, end }),
    }
}

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("stream authentication failed: {0}")]
    Auth(String),
    #[error("stream interrupted: {0}")]
    Interrupted(String),
    #[error("missing stream credentials: set {STREAM_TOKEN_ENV}")]
    MissingToken,
    #[error("cannot write archive {path}: {source}")]
    Sink {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("stream kept failing after {0} reconnect attempts")]
    RetriesExhausted(u32),
}

/// A live source of posts. Implementations deliver already-normalized tweets.
pub trait StreamSource {
    /// (Re)establishes the connection.
    fn connect(&mut self, token: &str, keyword: &str) -> Result<(), StreamError>;

    /// Next post, or `None` when the stream has ended.
    fn next_post(&mut self) -> Result<Option<Tweet>, StreamError>;
}

#[derive(Debug, Clone, Copy)]
pub struct CollectOptions {
    /// Consecutive failed reconnects tolerated before giving up.
    pub max_reconnects: u32,
    pub backoff: Backoff,
    /// Stop after this many appended records.
    pub limit: Option<usize>,
}

impl Default for CollectOptions {
    fn default() -> Self {
        Self { max_reconnects: 5, backoff: Backoff::default(), limit: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CollectSummary {
    pub appended: usize,
    pub non_matching: usize,
    pub invalid: usize,
    pub duplicates: usize,
    pub reconnects: usize,
}

pub fn stream_token_from_env() -> Result<String, StreamError> {
    match std::env::var(STREAM_TOKEN_ENV) {
        Ok(t) if !t.trim().is_empty() => Ok(t),
        _ => Err(StreamError::MissingToken),
    }
}

/// Pulls posts from `source`, appending every valid, keyword-matching, not yet seen
/// post to `sink`. Interruptions trigger a reconnect with backoff; the id set carried
/// across reconnects drops replayed posts.
pub fn stream_collect<S: StreamSource + ?Sized>(
    source: &mut S,
    token: &str,
    keyword: &str,
    sink: &Path,
    options: &CollectOptions,
) -> Result<CollectSummary, StreamError> {
    let mut out = ArchiveSink::open(sink).map_err(|source| StreamError::Sink { path: sink.to_path_buf(), source })?;
    let needle = keyword.to_lowercase();
    let mut seen = HashSet::new();
    let mut summary = CollectSummary::default();
    let mut failures = 0u32;

    source.connect(token, keyword)?;
    loop {
        if options.limit.is_some_and(|l| summary.appended >= l) {
            break;
        }
        match source.next_post() {
            Ok(Some(tweet)) => {
                failures = 0;
                if tweet.validate().is_err() {
                    summary.invalid += 1;
                } else if !contains_keyword(&tweet.text, &needle) {
                    summary.non_matching += 1;
                } else if !seen.insert(tweet.id.clone()) {
                    summary.duplicates += 1;
                } else {
                    out.append(&tweet)
                        .map_err(|source| StreamError::Sink { path: sink.to_path_buf(), source })?;
                    summary.appended += 1;
                }
            }
            Ok(None) => break,
            Err(StreamError::Interrupted(_)) => loop {
                if failures >= options.max_reconnects {
                    return Err(StreamError::RetriesExhausted(failures));
                }
                options.backoff.sleep(failures);
                failures += 1;
                summary.reconnects += 1;
                match source.connect(token, keyword) {
                    Ok(()) => break,
                    Err(StreamError::Interrupted(_)) => continue,
                    Err(e) => return Err(e),
                }
            },
            Err(e) => return Err(e),
        }
    }
    Ok(summary)
}

/// Line-delimited JSON stream over HTTP in the filtered-stream shape:
/// `{"data": {"id", "text", "created_at", "lang", "author_id", "entities": {"urls": [...]}}}`.
pub struct HttpLineStream {
    endpoint: String,
    agent: ureq::Agent,
    lines: Option<Box<dyn BufRead + Send>>,
}

impl HttpLineStream {
    pub fn new(endpoint: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().new_agent();
        Self { endpoint: endpoint.into(), agent, lines: None }
    }
}

#[derive(Deserialize)]
struct StreamEnvelope {
    data: StreamPost,
}

#[derive(Deserialize)]
struct StreamPost {
    id: String,
    text: String,
    created_at: String,
    #[serde(default)]
    lang: Option<String>,
    #[serde(default)]
    author_id: Option<String>,
    #[serde(default)]
    entities: Option<StreamEntities>,
}

#[derive(Deserialize)]
struct StreamEntities {
    #[serde(default)]
    urls: Vec<StreamUrl>,
}

#[derive(Deserialize)]
struct StreamUrl {
    #[serde(default)]
    expanded_url: Option<String>,
    #[serde(default)]
    url: Option<String>,
}

/// Normalizes one filtered-stream JSON line into a tweet.
pub fn parse_stream_line(line: &str) -> Result<Tweet, String> {
    let env: StreamEnvelope = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let p = env.data;
    let created = DateTime::parse_from_rfc3339(&p.created_at).map_err(|e| e.to_string())?;
    let urls = p
        .entities
        .map(|e| e.urls.into_iter().filter_map(|u| u.expanded_url.or(u.url)).collect())
        .unwrap_or_default();
    Ok(Tweet {
        id: p.id,
        created_at: truncate_to_second(created.with_timezone(&Utc)),
        text: p.text,
        lang: p.lang.unwrap_or_else(|| "und".into()),
        urls,
        author_id: p.author_id,
    })
}

impl StreamSource for HttpLineStream {
    fn connect(&mut self, token: &str, _keyword: &str) -> Result<(), StreamError> {
        let resp = self
            .agent
            .get(&self.endpoint)
            .header("Authorization", &format!("Bearer {token}"))
            .call()
            .map_err(|e| StreamError::Interrupted(e.to_string()))?;
        match resp.status().as_u16() {
            200 => {
                let reader = resp.into_body().into_reader();
                self.lines = Some(Box::new(BufReader::new(reader)));
                Ok(())
            }
            401 | 403 => Err(StreamError::Auth(format!("status {}", resp.status()))),
            s => Err(StreamError::Interrupted(format!("status {s}"))),
        }
    }

    fn next_post(&mut self) -> Result<Option<Tweet>, StreamError> {
        let Some(lines) = self.lines.as_mut() else {
            return Err(StreamError::Interrupted("not connected".into()));
        };
        loop {
            let mut buf = String::new();
            let n = lines.read_line(&mut buf).map_err(|e| StreamError::Interrupted(e.to_string()))?;
            if n == 0 {
                return Ok(None);
            }
            let line = buf.trim();
            // keep-alive newlines
            if line.is_empty() {
                continue;
            }
            match parse_stream_line(line) {
                Ok(t) => return Ok(Some(t)),
                // Non-post control messages are skipped.
                Err(_) => continue,
            }
        }
    }
}
