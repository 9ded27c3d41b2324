//! Unsupervised cyber-relevance filtering and vulnerability mining for tweet corpora.
//!
//! The crate is organised as a pipeline:
//!
//! * [`ingest`] reads line-delimited tweet archives, filters by keyword, collects from
//!   a live stream and summarises corpora.
//! * [`text`] tokenizes tweets and builds TF-IDF vectors.
//! * [`kmeans`] is a seeded, deterministic k-means with SSE curves and elbow selection.
//! * [`relevance`] labels tweets as cyber-relevant either through the CVE-bearing
//!   cluster heuristic or a zero-shot entailment scorer.
//! * [`cve`] extracts CVE identifiers, counts mentions, looks up CVSS scores and
//!   correlates the two.
//! * [`topics`] trains skip-gram embeddings and clusters tweets into topics.
//! * [`eval`] prepares the labelled benchmark and computes confusion-matrix metrics.
//! * [`report`] wires everything together and renders analyst reports.

pub mod config;
pub mod cve;
pub mod eval;
pub mod ingest;
pub mod kmeans;
pub mod relevance;
pub mod report;
pub mod retry;
pub mod stopwords;
pub mod text;
pub mod topics;

pub use config::{ConfigError, OutputFormat, PipelineConfig, TopicK};
pub use cve::{
    count_mentions, cvss_correlation, extract_cves, CountMode, CveCountRow, CveId, CveRecord,
    CvssResolver, TimeWindow,
};
pub use eval::{prepare_benchmark, score_predictions, subset_metrics, EvalMetrics, LabelledTweet};
pub use ingest::{compute_stats, keyword_filter, read_corpus, CorpusStats, Strictness, Tweet};
pub use kmeans::{elbow_select, kmeans_fit, sse_curve, ClusterModel, KMeansParams};
pub use relevance::{
    cluster_relevance, filter_relevant, zero_shot_classify, EntailmentScorer, HypothesisConfig,
    MockScorer, RelevanceVerdict,
};
pub use report::{build_report, render, top_phrases, Report};
pub use text::{fit_vocabulary, tfidf_vectorize, tokenize, TermWeightVector, TokenizedDoc, Vocabulary};
pub use topics::{embed_tweet, mine_topics, train_word2vec, EmbeddingHyperparams, EmbeddingModel, TopicCluster};

/// Version string recorded in report provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
