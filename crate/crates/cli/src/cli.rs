use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "vulnwatch", version, about = "Cyber-relevance filtering and mining for vulnerability tweets")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice in the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// markdown, json (machine-readable) or csv.
    #[arg(long, global = true)]
    pub format: Option<String>,
    /// Override any config key, e.g. `--set threshold=0.7`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize archives, or collect from a live stream, into one archive.
    Ingest(IngestArgs),
    /// Corpus characteristics of the keyword-matching tweets.
    Stats(StatsArgs),
    /// Classify tweets as cyber-relevant and write verdicts.
    Filter(FilterArgs),
    /// Most mentioned CVEs, with CVSS3 scores when a source is configured.
    Cves(CvesArgs),
    /// Word-embedding topic clusters.
    Topics(TopicsArgs),
    /// Score a relevance method against a labelled benchmark.
    Evaluate(EvaluateArgs),
    /// Full pipeline report.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Archives to merge (ignored with --stream).
    pub inputs: Vec<PathBuf>,
    /// Destination archive.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Filtered-stream endpoint; the bearer token comes from VULNWATCH_STREAM_TOKEN.
    #[arg(long)]
    pub stream: Option<String>,
    /// Stop streaming after this many appended tweets.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Keep tweets that lack the keyword.
    #[arg(long)]
    pub all: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    pub corpus: PathBuf,
    /// Summarize every tweet, not only keyword matches.
    #[arg(long)]
    pub all: bool,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    pub corpus: PathBuf,
    /// kmeans or zeroshot.
    #[arg(long)]
    pub method: Option<String>,
    /// Where to write verdicts (JSON lines).
    #[arg(long)]
    pub verdicts_out: Option<PathBuf>,
    /// Where to write the relevant tweets as an archive.
    #[arg(long)]
    pub relevant_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CvesArgs {
    pub corpus: PathBuf,
    /// Verdicts from `filter`; only relevant tweets are counted.
    #[arg(long)]
    pub verdicts: Option<PathBuf>,
    /// Rows to show.
    #[arg(long)]
    pub top: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TopicsArgs {
    pub corpus: PathBuf,
    /// Number of topics, or `auto` for elbow selection.
    #[arg(long)]
    pub k: Option<String>,
    /// Reuse a saved embedding model instead of training.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Save the trained embedding model.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    /// Cluster the vocabulary's word vectors instead of tweets (needs a fixed k).
    #[arg(long)]
    pub words: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Delimited file with text and label columns.
    pub benchmark: PathBuf,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long, default_value = "text")]
    pub text_column: String,
    #[arg(long, default_value = "label")]
    pub label_column: String,
    #[arg(long, default_value = ",")]
    pub delimiter: char,
    /// Match "vulnerability" case-sensitively when preparing the benchmark.
    #[arg(long)]
    pub case_sensitive: bool,
    /// Only prepare and summarize the benchmark.
    #[arg(long)]
    pub prepare_only: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub corpus: PathBuf,
    /// Output file (directory for csv). Defaults to stdout for markdown and json.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}
