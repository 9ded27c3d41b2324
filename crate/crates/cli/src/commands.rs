use std::collections::HashSet;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use anyhow::{anyhow, Context};
use serde::Serialize;
use vulnwatch_core::cve::{CvssCache, CvssSource, NvdClient};
use vulnwatch_core::eval::{benchmark_tweets, load_benchmark, metrics_suite, summarize_benchmark, BenchmarkColumns, BenchmarkSummary, MatchMode};
use vulnwatch_core::ingest::{
    read_corpus, stream_collect, stream_token_from_env, write_corpus, CollectOptions, HttpLineStream, IngestError,
    ReadOptions, StreamError,
};
use vulnwatch_core::relevance::{write_verdicts, HttpScorer, Method, RelevanceVerdict};
use vulnwatch_core::report::{
    embedding_hyperparams, relevance_verdicts, time_window, topic_options, Rendered, Retention, Services, StageError,
};
use vulnwatch_core::topics::{cluster_words, TopicAnalysis, TopicError};
use vulnwatch_core::{
    build_report, compute_stats, count_mentions, cvss_correlation, filter_relevant, keyword_filter, mine_topics, render,
    train_word2vec, CveCountRow, CvssResolver, EmbeddingModel, EntailmentScorer, EvalMetrics, MockScorer,
    KMeansParams, OutputFormat, PipelineConfig, TopicK, Tweet,
};

use crate::cli::{Cli, Command, CvesArgs, EvaluateArgs, FilterArgs, IngestArgs, ReportArgs, StatsArgs, TopicsArgs};
use crate::failure::{data, external, usage, CliResult, Failure};
use crate::output::{emit, Table};

pub fn run(cli: Cli) -> CliResult {
    let mut config = PipelineConfig::load(cli.global.config.as_deref()).map_err(usage)?;
    for kv in &cli.global.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| usage(anyhow!("--set expects KEY=VALUE, got {kv:?}")))?;
        config.set(k.trim(), v).map_err(usage)?;
    }
    if let Some(seed) = cli.global.seed {
        config.seed = seed;
    }
    if let Some(f) = &cli.global.format {
        config.set("format", f).map_err(usage)?;
    }
    match cli.command {
        Command::Ingest(a) => ingest(&config, a),
        Command::Stats(a) => stats(&config, a),
        Command::Filter(a) => filter(config, a),
        Command::Cves(a) => cves(config, a),
        Command::Topics(a) => topics(config, a),
        Command::Evaluate(a) => evaluate(config, a),
        Command::Report(a) => report(&config, a),
    }
}

fn set(config: &mut PipelineConfig, key: &str, value: Option<&str>) -> Result<(), Failure> {
    match value {
        Some(v) => config.set(key, v).map_err(usage),
        None => Ok(()),
    }
}

fn io_failure(e: io::Error) -> Failure {
    data(anyhow::Error::new(e).context("writing output"))
}

fn stage_failure(e: StageError) -> Failure {
    Failure { class: e.class(), error: e.into() }
}

fn read_tweets(config: &PipelineConfig, path: &Path, all: bool) -> CliResult<Vec<Tweet>> {
    let opts = ReadOptions { strictness: config.strictness, ..ReadOptions::default() };
    let outcome = read_corpus(path, opts).map_err(|e| match e {
        IngestError::Io { .. } => usage(e),
        other => data(other),
    })?;
    if outcome.malformed > 0 {
        eprintln!("warning: skipped {} malformed records in {}", outcome.malformed, path.display());
    }
    if all {
        Ok(outcome.tweets)
    } else {
        Ok(keyword_filter(&outcome.tweets, &config.keyword))
    }
}

fn scorer(config: &PipelineConfig) -> Option<Box<dyn EntailmentScorer>> {
    config.scorer_url.as_deref().map(|url| -> Box<dyn EntailmentScorer> {
        if url == "mock" {
            Box::new(MockScorer)
        } else {
            Box::new(HttpScorer::from_env(url))
        }
    })
}

fn cvss_resolver(config: &PipelineConfig) -> CliResult<Option<CvssResolver>> {
    if config.nvd_url.is_none() && config.nvd_cache.is_none() {
        return Ok(None);
    }
    let cache = config.nvd_cache.as_deref().map(CvssCache::open).transpose().map_err(data)?;
    let remote = config.nvd_url.as_deref().map(|u| Box::new(NvdClient::from_env(u)) as Box<dyn CvssSource>);
    Ok(Some(CvssResolver::new(cache, remote).with_ttl(chrono::Duration::days(config.cvss_ttl_days))))
}

fn verdicts_for(config: &PipelineConfig, tweets: &[Tweet]) -> CliResult<(Vec<RelevanceVerdict>, usize)> {
    let scorer = scorer(config);
    let services = Services { scorer: scorer.as_deref(), ..Services::default() };
    relevance_verdicts(config, tweets, &services).map_err(stage_failure)
}

fn ingest(config: &PipelineConfig, args: IngestArgs) -> CliResult {
    if let Some(endpoint) = &args.stream {
        let token = stream_token_from_env().map_err(usage)?;
        let mut source = HttpLineStream::new(endpoint.clone());
        let opts = CollectOptions { limit: args.limit, ..CollectOptions::default() };
        let summary = stream_collect(&mut source, &token, &config.keyword, &args.output, &opts).map_err(|e| match e {
            StreamError::Sink { .. } => data(e),
            StreamError::MissingToken => usage(e),
            other => external(other),
        })?;
        eprintln!(
            "appended {} tweets ({} non-matching, {} invalid, {} duplicates, {} reconnects)",
            summary.appended, summary.non_matching, summary.invalid, summary.duplicates, summary.reconnects
        );
        return Ok(());
    }
    if args.inputs.is_empty() {
        return Err(usage(anyhow!("ingest needs input archives or --stream")));
    }
    let mut seen = HashSet::new();
    let mut merged = Vec::new();
    let mut dropped = 0;
    for path in &args.inputs {
        for t in read_tweets(config, path, true)? {
            if seen.insert(t.id.clone()) {
                merged.push(t);
            } else {
                dropped += 1;
            }
        }
    }
    let kept = if args.all { merged } else { keyword_filter(&merged, &config.keyword) };
    write_corpus(&args.output, &kept).map_err(io_failure)?;
    eprintln!("wrote {} tweets to {} ({} duplicate ids dropped)", kept.len(), args.output.display(), dropped);
    Ok(())
}

fn stats(config: &PipelineConfig, args: StatsArgs) -> CliResult {
    let tweets = read_tweets(config, &args.corpus, args.all)?;
    let s = compute_stats(&tweets);
    let mut table = Table::new(&["Statistic", "Value"]);
    table.row(vec!["Number of Tweets".into(), s.tweet_count.to_string()]);
    table.row(vec!["Avg. Tweets per Day".into(), format!("{:.2}", s.avg_tweets_per_day)]);
    table.row(vec!["Avg. Words per Tweet".into(), format!("{:.2}", s.avg_words_per_tweet)]);
    table.row(vec!["% English Tweets".into(), format!("{:.2}", s.pct_english)]);
    table.row(vec!["% Tweets with URL".into(), format!("{:.2}", s.pct_with_url)]);
    if let Some(r) = &s.date_range {
        table.row(vec!["First Tweet".into(), vulnwatch_core::ingest::format_timestamp(&r.start)]);
        table.row(vec!["Last Tweet".into(), vulnwatch_core::ingest::format_timestamp(&r.end)]);
    }
    emit(config.format, &s, &table, &[]).map_err(io_failure)
}

fn filter(mut config: PipelineConfig, args: FilterArgs) -> CliResult {
    set(&mut config, "method", args.method.as_deref())?;
    let tweets = read_tweets(&config, &args.corpus, false)?;
    let (verdicts, failures) = verdicts_for(&config, &tweets)?;
    let (relevant, fraction) = filter_relevant(&verdicts, &tweets).map_err(data)?;
    if let Some(path) = &args.verdicts_out {
        let file = fs::File::create(path).map_err(io_failure)?;
        write_verdicts(io::BufWriter::new(file), &verdicts).map_err(io_failure)?;
    }
    if let Some(path) = &args.relevant_out {
        write_corpus(path, &relevant).map_err(io_failure)?;
    }
    let retention =
        Retention { method: config.method, total: tweets.len(), retained: relevant.len(), fraction, scorer_failures: failures };
    let mut table = Table::new(&["Method", "Total", "Retained", "Fraction", "Scorer failures"]);
    table.row(vec![
        retention.method.to_string(),
        retention.total.to_string(),
        retention.retained.to_string(),
        format!("{:.4}", retention.fraction),
        retention.scorer_failures.to_string(),
    ]);
    emit(config.format, &retention, &table, &[]).map_err(io_failure)
}

#[derive(Serialize)]
struct CveTable {
    distinct_cves: usize,
    rows: Vec<CveCountRow>,
    correlation: Option<vulnwatch_core::cve::Correlation>,
}

fn cves(mut config: PipelineConfig, args: CvesArgs) -> CliResult {
    if let Some(n) = args.top {
        config.top_cves = n;
    }
    let mut tweets = read_tweets(&config, &args.corpus, false)?;
    if let Some(path) = args.verdicts {
        config.method = Method::Zeroshot;
        config.verdicts = Some(path);
        let (verdicts, _) = verdicts_for(&config, &tweets)?;
        tweets = filter_relevant(&verdicts, &tweets).map_err(data)?.0;
    }
    let window = time_window(&config).map_err(usage)?;
    let mut rows = count_mentions(&tweets, window, config.count_mode);
    let mut notes = Vec::new();
    let mut correlation = None;
    if let Some(mut resolver) = cvss_resolver(&config)? {
        for (id, reason) in resolver.enrich(&mut rows) {
            notes.push(format!("warning: no CVSS score for {id}: {reason}"));
        }
        match cvss_correlation(&rows) {
            Ok(c) => {
                notes.push(format!("Correlation of tweet count with CVSS3: r = {:.4} over {} CVEs ({} excluded)", c.r, c.used, c.excluded));
                correlation = Some(c);
            }
            Err(e) => notes.push(format!("no correlation: {e}")),
        }
    }
    let distinct = rows.len();
    rows.truncate(config.top_cves);
    let mut table = Table::new(&["CVE ID", "CVSS3", "Tweet Count"]);
    for r in &rows {
        table.row(vec![r.cve_id.to_string(), r.cvss3.map_or_else(|| "N/A".into(), |s| format!("{s:.1}")), r.tweet_count.to_string()]);
    }
    notes.insert(0, format!("{distinct} distinct CVEs mentioned"));
    let value = CveTable { distinct_cves: distinct, rows, correlation };
    emit(config.format, &value, &table, &notes).map_err(io_failure)
}

fn topic_failure(e: TopicError) -> Failure {
    match e {
        TopicError::InvalidHyperparams(_) => usage(e),
        TopicError::Io(_) => usage(e),
        other => data(other),
    }
}

fn topics(mut config: PipelineConfig, args: TopicsArgs) -> CliResult {
    set(&mut config, "topic_k", args.k.as_deref())?;
    let tweets = read_tweets(&config, &args.corpus, false)?;
    let model = match &args.model {
        Some(path) => EmbeddingModel::load(path).map_err(topic_failure)?,
        None => {
            let docs: Vec<_> = tweets
                .iter()
                .map(|t| vulnwatch_core::tokenize(t.id.clone(), &t.text, &Default::default()))
                .collect();
            train_word2vec(&docs, &embedding_hyperparams(&config)).map_err(topic_failure)?
        }
    };
    if let Some(path) = &args.model_out {
        model.save(path).map_err(topic_failure)?;
    }
    if args.words {
        return word_topics(&config, &model);
    }
    let analysis: TopicAnalysis = mine_topics(&tweets, &model, &topic_options(&config)).map_err(topic_failure)?;
    let mut table = Table::new(&["ID", "Total Tweets", "Keywords"]);
    for c in &analysis.clusters {
        table.row(vec![c.id.to_string(), c.tweet_count.to_string(), c.keywords.join(", ")]);
    }
    let mut notes = vec![format!(
        "k = {}; {} tweets clustered, {} without in-vocabulary words",
        analysis.k, analysis.clustered, analysis.dropped
    )];
    if let Some(curve) = &analysis.sse_curve {
        let pts: Vec<String> = curve.iter().map(|(k, s)| format!("{k}:{s:.4}")).collect();
        notes.push(format!("SSE by k: {}", pts.join(" ")));
    }
    emit(config.format, &analysis, &table, &notes).map_err(io_failure)
}

#[derive(Serialize)]
struct WordCluster {
    id: usize,
    size: usize,
    terms: Vec<String>,
}

fn word_topics(config: &PipelineConfig, model: &EmbeddingModel) -> CliResult {
    let TopicK::Fixed(k) = config.topic_k else {
        return Err(usage(anyhow!("--words needs a fixed k")));
    };
    let clusters: Vec<WordCluster> = cluster_words(model, k, config.seed, &KMeansParams::default())
        .map_err(topic_failure)?
        .into_iter()
        .enumerate()
        .map(|(id, terms)| WordCluster { id, size: terms.len(), terms })
        .collect();
    let mut table = Table::new(&["ID", "Terms", "Top Terms"]);
    for c in &clusters {
        let top: Vec<&str> = c.terms.iter().take(5).map(String::as_str).collect();
        table.row(vec![c.id.to_string(), c.size.to_string(), top.join(", ")]);
    }
    emit(config.format, &clusters, &table, &[]).map_err(io_failure)
}

#[derive(Serialize)]
struct Evaluation {
    benchmark: BenchmarkSummary,
    method: Option<Method>,
    metrics: Vec<EvalMetrics>,
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".into(), |x| format!("{x:.2}"))
}

fn evaluate(mut config: PipelineConfig, args: EvaluateArgs) -> CliResult {
    set(&mut config, "method", args.method.as_deref())?;
    if !args.delimiter.is_ascii() {
        return Err(usage(anyhow!("delimiter must be a single ASCII character")));
    }
    let columns = BenchmarkColumns {
        delimiter: args.delimiter as u8,
        text: args.text_column,
        label: args.label_column,
        has_headers: true,
    };
    let records = load_benchmark(&args.benchmark, &columns)
        .with_context(|| format!("loading {}", args.benchmark.display()))
        .map_err(data)?;
    let mode = if args.case_sensitive { MatchMode::CaseSensitive } else { MatchMode::CaseInsensitive };
    let prepared = vulnwatch_core::prepare_benchmark(&records, mode).map_err(data)?;
    let summary = summarize_benchmark(records.len(), &prepared);
    let mut notes = vec![format!(
        "{} of {} records retained; {}% cyber-relevant; {}% mention a CVE",
        summary.retained,
        summary.records,
        fmt_pct(summary.positive_pct),
        fmt_pct(summary.has_cve_pct)
    )];
    let mut table = Table::new(&["Subset", "TP", "FP", "FN", "TN", "Acc.", "Precision", "Recall", "F1"]);
    if args.prepare_only || prepared.is_empty() {
        let value = Evaluation { benchmark: summary, method: None, metrics: Vec::new() };
        return emit(config.format, &value, &table, &notes).map_err(io_failure);
    }
    let tweets = benchmark_tweets(&prepared);
    let (verdicts, failures) = verdicts_for(&config, &tweets)?;
    if failures > 0 {
        notes.push(format!("warning: {failures} items could not be scored and count as not relevant"));
    }
    let predicted: Vec<bool> = verdicts.iter().map(|v| v.relevant).collect();
    let metrics = metrics_suite(&predicted, &prepared).map_err(data)?;
    for m in &metrics {
        table.row(vec![
            m.subset.clone(),
            m.tp.to_string(),
            m.fp.to_string(),
            m.fn_.to_string(),
            m.tn.to_string(),
            fmt_pct(m.accuracy),
            fmt_pct(m.precision),
            fmt_pct(m.recall),
            fmt_pct(m.f1),
        ]);
    }
    let value = Evaluation { benchmark: summary, method: Some(config.method), metrics };
    emit(config.format, &value, &table, &notes).map_err(io_failure)
}

fn report(config: &PipelineConfig, args: ReportArgs) -> CliResult {
    if config.format == OutputFormat::Csv && args.output.is_none() {
        return Err(usage(anyhow!("csv output needs --output <directory>")));
    }
    if !args.corpus.is_file() {
        return Err(usage(anyhow!("cannot read corpus {}", args.corpus.display())));
    }
    let scorer = scorer(config);
    let mut resolver = cvss_resolver(config)?;
    let services = Services { scorer: scorer.as_deref(), cvss: resolver.as_mut(), ..Services::default() };
    let report = build_report(config, &args.corpus, services)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let rendered = render(&report, config.format);
    match (&args.output, &rendered) {
        (Some(dest), _) => {
            rendered.write_to(dest).map_err(io_failure)?;
        }
        (None, Rendered::Document(text)) => {
            io::stdout().lock().write_all(text.as_bytes()).map_err(io_failure)?;
        }
        (None, Rendered::Files(_)) => unreachable!("csv without --output rejected above"),
    }
    Ok(())
}

