//! Skip-gram word embeddings with negative sampling, and tweet topic clusters built on
//! mean-of-word-vector tweet embeddings.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Tweet;
use crate::kmeans::{count_distinct, elbow_select, kmeans_fit, sse_curve, KMeansError, KMeansParams};
use crate::stopwords::is_stopword;
use crate::text::{tokenize, TokenizedDoc, TokenizerOptions};

const MIN_LEARNING_RATE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingHyperparams {
    pub dim: usize,
    pub window: usize,
    pub negative_samples: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub min_count: usize,
    pub seed: u64,
}

impl Default for EmbeddingHyperparams {
    fn default() -> Self {
        Self { dim: 100, window: 5, negative_samples: 5, epochs: 5, learning_rate: 0.025, min_count: 5, seed: 0 }
    }
}

impl EmbeddingHyperparams {
    pub fn validate(&self) -> Result<(), TopicError> {
        let bad = |m: &str| Err(TopicError::InvalidHyperparams(m.to_string()));
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        if self.window == 0 || self.negative_samples == 0 || self.epochs == 0 || self.min_count == 0 {
            return bad("window, negative_samples, epochs and min_count must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TopicError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("no term reaches min_count = {0}")]
    EmptyVocabulary(usize),
    #[error("embedding diverged (non-finite weights) in epoch {0}")]
    Diverged(usize),
    #[error("only {embeddable} embeddable tweets for k = {k}")]
    TooFewTweets { embeddable: usize, k: usize },
    #[error(transparent)]
    KMeans(#[from] KMeansError),
    #[error("model file: {0}")]
    Io(#[from] io::Error),
    #[error("model file line {line}: {reason}")]
    Format { line: usize, reason: String },
}

/// Trained embeddings. Rows of `input` are the word vectors; `output` holds the context
/// vectors used only during training.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<u64>,
    input: Vec<f64>,
    output: Vec<f64>,
    pub hyperparams: EmbeddingHyperparams,
}

impl EmbeddingModel {
    pub fn dim(&self) -> usize {
        self.hyperparams.dim
    }

    pub fn vocab_len(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn count(&self, term: &str) -> Option<u64> {
        self.index_of(term).map(|i| self.counts[i])
    }

    pub fn vector(&self, term: &str) -> Option<&[f64]> {
        self.index_of(term).map(|i| self.input_row(i))
    }

    pub fn input_row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.input[i * d..(i + 1) * d]
    }

    pub fn output_row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.output[i * d..(i + 1) * d]
    }

    pub fn is_finite(&self) -> bool {
        self.input.iter().chain(&self.output).all(|x| x.is_finite())
    }

    /// `dim=<d> vocab=<n>` header, then `term v_1 ... v_d` per term (input vectors).
    pub fn to_text(&self) -> String {
        let mut out = format!("dim={} vocab={}\n", self.dim(), self.vocab_len());
        for (i, t) in self.terms.iter().enumerate() {
            out.push_str(t);
            for x in self.input_row(i) {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        }
        out
    }

    /// Loads the text form. Context vectors and counts are not stored and come back as
    /// zeros; hyperparameters other than `dim` take their defaults.
    pub fn from_text(text: &str) -> Result<Self, TopicError> {
        let mut lines = text.lines().enumerate();
        let bad = |line: usize, reason: &str| TopicError::Format { line, reason: reason.to_string() };
        let (_, header) = lines.next().ok_or_else(|| bad(1, "missing header"))?;
        let (dim, n) = parse_model_header(header).ok_or_else(|| bad(1, "expected `dim=<int> vocab=<int>`"))?;
        let mut terms = Vec::with_capacity(n);
        let mut input = Vec::with_capacity(n * dim);
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let term = parts.next().filter(|t| !t.is_empty()).ok_or_else(|| bad(i + 1, "missing term"))?;
            let before = input.len();
            for p in parts {
                input.push(p.parse::<f64>().map_err(|_| bad(i + 1, "bad float"))?);
            }
            if input.len() - before != dim {
                return Err(bad(i + 1, "wrong number of components"));
            }
            terms.push(term.to_string());
        }
        if terms.len() != n {
            return Err(bad(1, "vocab count does not match body"));
        }
        let index: HashMap<String, usize> = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != terms.len() {
            return Err(bad(1, "duplicate term"));
        }
        Ok(Self {
            counts: vec![0; n],
            output: vec![0.0; n * dim],
            terms,
            index,
            input,
            hyperparams: EmbeddingHyperparams { dim, ..EmbeddingHyperparams::default() },
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TopicError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TopicError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn parse_model_header(h: &str) -> Option<(usize, usize)> {
    let mut it = h.split_whitespace();
    let dim = it.next()?.strip_prefix("dim=")?.parse().ok()?;
    let n = it.next()?.strip_prefix("vocab=")?.parse().ok()?;
    if it.next().is_some() || dim < 1 {
        return None;
    }
    Some((dim, n))
}

pub fn cosine_similarity(model: &EmbeddingModel, a: &str, b: &str) -> Option<f64> {
    let (x, y) = (model.vector(a)?, model.vector(b)?);
    let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nx == 0.0 || ny == 0.0 {
        return None;
    }
    Some(dot / (nx * ny))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Negative log-likelihood of one skip-gram pair with its negative samples:
/// `-ln σ(u_ctx·v) - Σ ln σ(-u_neg·v)` where `v` is the center word's input vector.
pub fn pair_loss(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> f64 {
    let mut loss = -sigmoid(dot(context, center)).ln();
    for n in negatives {
        loss -= sigmoid(-dot(n, center)).ln();
    }
    loss
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairGradients {
    pub center: Vec<f64>,
    pub context: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// Analytic gradients of [`pair_loss`].
pub fn pair_gradients(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> PairGradients {
    let g = sigmoid(dot(context, center)) - 1.0;
    let mut d_center: Vec<f64> = context.iter().map(|u| g * u).collect();
    let d_context: Vec<f64> = center.iter().map(|v| g * v).collect();
    let mut d_neg = Vec::with_capacity(negatives.len());
    for n in negatives {
        let s = sigmoid(dot(n, center));
        for (dc, u) in d_center.iter_mut().zip(n.iter()) {
            *dc += s * u;
        }
        d_neg.push(center.iter().map(|v| s * v).collect());
    }
    PairGradients { center: d_center, context: d_context, negatives: d_neg }
}

/// One SGD step on a pair, in place. Context and negative rows are updated as they are
/// visited; the center row receives the accumulated gradient at the end.
fn sgd_pair(model: &mut EmbeddingModel, center: usize, context: usize, negatives: &[usize], lr: f64, scratch: &mut [f64]) {
    let d = model.dim();
    scratch.iter_mut().for_each(|x| *x = 0.0);
    let v = center * d..(center + 1) * d;
    let targets = std::iter::once((context, 1.0)).chain(negatives.iter().map(|&n| (n, 0.0)));
    for (t, label) in targets {
        let u = t * d..(t + 1) * d;
        let s = sigmoid(dot(&model.output[u.clone()], &model.input[v.clone()]));
        let g = s - label;
        for (k, acc) in scratch.iter_mut().enumerate().take(d) {
            *acc += g * model.output[u.start + k];
            model.output[u.start + k] -= lr * g * model.input[v.start + k];
        }
    }
    for (x, acc) in model.input[v].iter_mut().zip(scratch.iter()) {
        *x -= lr * acc;
    }
}

fn build_vocab(docs: &[TokenizedDoc], min_count: usize) -> (Vec<String>, Vec<u64>) {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for d in docs {
        for t in &d.tokens {
            *counts.entry(t).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count as u64)
        .map(|(t, c)| (t.to_string(), c))
        .unzip()
}

/// Trains skip-gram with negative sampling. Single-threaded, so a fixed seed gives a
/// bit-identical model.
pub fn train_word2vec(docs: &[TokenizedDoc], hp: &EmbeddingHyperparams) -> Result<EmbeddingModel, TopicError> {
    hp.validate()?;
    let (terms, counts) = build_vocab(docs, hp.min_count);
    if terms.is_empty() {
        return Err(TopicError::EmptyVocabulary(hp.min_count));
    }
    let index: HashMap<String, usize> = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    let dim = hp.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let half = 0.5 / dim as f64;
    let input = (0..terms.len() * dim).map(|_| rng.random_range(-half..half)).collect();
    let mut model = EmbeddingModel {
        output: vec![0.0; terms.len() * dim],
        input,
        counts,
        index,
        terms,
        hyperparams: hp.clone(),
    };

    let sentences: Vec<Vec<usize>> = docs
        .iter()
        .map(|d| d.tokens.iter().filter_map(|t| model.index.get(t).copied()).collect())
        .collect();
    let noise = WeightedIndex::new(model.counts.iter().map(|&c| (c as f64).powf(0.75)))
        .expect("vocabulary is non-empty with positive counts");

    let total_tokens: usize = sentences.iter().map(Vec::len).sum();
    let total_steps = (hp.epochs * total_tokens).max(1) as f64;
    let mut step = 0usize;
    let mut scratch = vec![0.0; dim];
    let mut negatives = Vec::with_capacity(hp.negative_samples);

    for epoch in 0..hp.epochs {
        for sent in &sentences {
            for (pos, &center) in sent.iter().enumerate() {
                let progress = step as f64 / total_steps;
                let lr = (hp.learning_rate - (hp.learning_rate - MIN_LEARNING_RATE) * progress).max(MIN_LEARNING_RATE);
                step += 1;
                let lo = pos.saturating_sub(hp.window);
                let hi = (pos + hp.window).min(sent.len() - 1);
                for (ctx_pos, &context) in sent.iter().enumerate().take(hi + 1).skip(lo) {
                    if ctx_pos == pos {
                        continue;
                    }
                    negatives.clear();
                    for _ in 0..hp.negative_samples {
                        let n = noise.sample(&mut rng);
                        if n != context {
                            negatives.push(n);
                        }
                    }
                    sgd_pair(&mut model, center, context, &negatives, lr, &mut scratch);
                }
            }
        }
        if !model.is_finite() {
            return Err(TopicError::Diverged(epoch + 1));
        }
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TweetEmbedding {
    pub vector: Vec<f64>,
    /// No token of the document is in the vocabulary; `vector` is all zeros.
    pub all_oov: bool,
}

pub fn embed_tweet(model: &EmbeddingModel, doc: &TokenizedDoc) -> TweetEmbedding {
    let d = model.dim();
    let mut v = vec![0.0; d];
    let mut n = 0usize;
    for t in &doc.tokens {
        if let Some(i) = model.index_of(t) {
            for (a, x) in v.iter_mut().zip(model.input_row(i)) {
                *a += x;
            }
            n += 1;
        }
    }
    if n == 0 {
        return TweetEmbedding { vector: v, all_oov: true };
    }
    let inv = n as f64;
    v.iter_mut().for_each(|x| *x /= inv);
    TweetEmbedding { vector: v, all_oov: false }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicCluster {
    pub id: usize,
    pub tweet_count: usize,
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicSelection {
    Fixed(usize),
    /// Elbow over the given ascending, consecutive k values.
    Auto(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct TopicOptions {
    pub selection: TopicSelection,
    pub seed: u64,
    pub kmeans: KMeansParams,
    pub tokenizer: TokenizerOptions,
    /// Deduplicate tweets by exact text before clustering.
    pub unique: bool,
    /// Extra terms never used as keywords (besides stopwords).
    pub excluded_keywords: Vec<String>,
    pub keywords_per_topic: usize,
}

impl Default for TopicOptions {
    fn default() -> Self {
        Self {
            selection: TopicSelection::Fixed(10),
            seed: 0,
            kmeans: KMeansParams::default(),
            tokenizer: TokenizerOptions::default(),
            unique: false,
            excluded_keywords: Vec::new(),
            keywords_per_topic: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicAnalysis {
    pub k: usize,
    pub clusters: Vec<TopicCluster>,
    pub sse_curve: Option<Vec<(usize, f64)>>,
    /// Tweets with no in-vocabulary token.
    pub dropped: usize,
    pub clustered: usize,
    /// Tweet ids per cluster, aligned with `clusters`.
    #[serde(skip)]
    pub members: Vec<Vec<String>>,
}

/// Most frequent non-excluded tokens across `docs`, ties broken lexicographically.
pub fn top_keywords<'a>(
    docs: impl IntoIterator<Item = &'a TokenizedDoc>,
    n: usize,
    excluded: &HashSet<&str>,
) -> Vec<String> {
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for d in docs {
        for t in &d.tokens {
            if !is_stopword(t) && !excluded.contains(t.as_str()) {
                *freq.entry(t).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.into_iter().take(n).map(|(t, _)| t.to_string()).collect()
}

/// Embeds tweets, clusters the embeddable ones and labels clusters with keywords.
pub fn mine_topics(tweets: &[Tweet], model: &EmbeddingModel, options: &TopicOptions) -> Result<TopicAnalysis, TopicError> {
    let mut seen = HashSet::new();
    let docs: Vec<TokenizedDoc> = tweets
        .iter()
        .filter(|t| !options.unique || seen.insert(t.text.as_str()))
        .map(|t| tokenize(t.id.clone(), &t.text, &options.tokenizer))
        .collect();

    let mut kept_docs = Vec::new();
    let mut vectors = Vec::new();
    for d in &docs {
        let e = embed_tweet(model, d);
        if !e.all_oov {
            kept_docs.push(d);
            vectors.push(e.vector);
        }
    }
    let dropped = docs.len() - kept_docs.len();

    let (k, curve) = match &options.selection {
        TopicSelection::Fixed(k) => (*k, None),
        TopicSelection::Auto(scan) => {
            let distinct = count_distinct(&vectors);
            let feasible: Vec<usize> = scan.iter().copied().filter(|&k| k >= 1 && k <= distinct).collect();
            let curve = sse_curve(&vectors, &feasible, options.seed, &options.kmeans)?;
            (elbow_select(&curve)?, Some(curve))
        }
    };
    if vectors.len() < k {
        return Err(TopicError::TooFewTweets { embeddable: vectors.len(), k });
    }
    let fit = kmeans_fit(&vectors, k, options.seed, &options.kmeans)?;

    let excluded: HashSet<&str> = options.excluded_keywords.iter().map(String::as_str).collect();
    let mut clusters = Vec::with_capacity(k);
    let mut members = Vec::with_capacity(k);
    for (id, idx) in fit.members().into_iter().enumerate() {
        let keywords = top_keywords(idx.iter().map(|&i| kept_docs[i]), options.keywords_per_topic, &excluded);
        members.push(idx.iter().map(|&i| kept_docs[i].doc_id.clone()).collect());
        clusters.push(TopicCluster { id, tweet_count: idx.len(), keywords });
    }
    Ok(TopicAnalysis { k, clusters, sse_curve: curve, dropped, clustered: vectors.len(), members })
}

/// Word-level clustering of the embedding vocabulary: each cluster lists its terms by
/// descending corpus count.
pub fn cluster_words(model: &EmbeddingModel, k: usize, seed: u64, params: &KMeansParams) -> Result<Vec<Vec<String>>, TopicError> {
    let vectors: Vec<Vec<f64>> = (0..model.vocab_len()).map(|i| model.input_row(i).to_vec()).collect();
    let fit = kmeans_fit(&vectors, k, seed, params)?;
    Ok(fit
        .members()
        .into_iter()
        .map(|idx| {
            let mut terms: Vec<usize> = idx;
            terms.sort_by(|&a, &b| model.counts[b].cmp(&model.counts[a]).then_with(|| model.terms[a].cmp(&model.terms[b])));
            terms.into_iter().map(|i| model.terms[i].clone()).collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, toks: &[&str]) -> TokenizedDoc {
        TokenizedDoc::from_strs(id, toks)
    }

    fn small_hp(seed: u64) -> EmbeddingHyperparams {
        EmbeddingHyperparams { dim: 10, min_count: 1, epochs: 3, seed, ..Default::default() }
    }

    #[test]
    fn self_similarity_is_one() {
        let docs = [doc("1", &["cve", "patch", "now"]), doc("2", &["cve", "patch"])];
        let m = train_word2vec(&docs, &small_hp(1)).unwrap();
        for t in m.terms() {
            assert!((cosine_similarity(&m, t, t).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_vocabulary_is_error() {
        let docs = [doc("1", &["a"])];
        let hp = EmbeddingHyperparams { min_count: 2, ..small_hp(0) };
        assert!(matches!(train_word2vec(&docs, &hp), Err(TopicError::EmptyVocabulary(2))));
        let hp = EmbeddingHyperparams { dim: 1, ..small_hp(0) };
        assert!(matches!(train_word2vec(&docs, &hp), Err(TopicError::InvalidHyperparams(_))));
    }

    #[test]
    fn deterministic_for_seed() {
        let docs = [doc("1", &["a", "b", "c", "a"]), doc("2", &["b", "c", "d"])];
        let a = train_word2vec(&docs, &small_hp(9)).unwrap();
        let b = train_word2vec(&docs, &small_hp(9)).unwrap();
        assert_eq!(a, b);
        let c = train_word2vec(&docs, &small_hp(10)).unwrap();
        assert_ne!(a.input, c.input);
    }

    #[test]
    fn sgd_step_follows_gradient() {
        let docs = [doc("1", &["a", "b", "c", "d"])];
        let mut m = train_word2vec(&docs, &small_hp(3)).unwrap();
        let before = m.clone();
        let lr = 0.05;
        let (c, o, negs) = (0, 1, [2usize, 3]);
        let neg_rows: Vec<&[f64]> = negs.iter().map(|&n| before.output_row(n)).collect();
        let g = pair_gradients(before.input_row(c), before.output_row(o), &neg_rows);
        let mut scratch = vec![0.0; m.dim()];
        sgd_pair(&mut m, c, o, &negs, lr, &mut scratch);
        for k in 0..m.dim() {
            assert!((m.input_row(c)[k] - (before.input_row(c)[k] - lr * g.center[k])).abs() < 1e-15);
            assert!((m.output_row(o)[k] - (before.output_row(o)[k] - lr * g.context[k])).abs() < 1e-15);
            for (j, &n) in negs.iter().enumerate() {
                assert!((m.output_row(n)[k] - (before.output_row(n)[k] - lr * g.negatives[j][k])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn embed_tweet_cases() {
        let docs = [doc("1", &["a", "b"])];
        let m = train_word2vec(&docs, &small_hp(2)).unwrap();
        let va = m.vector("a").unwrap().to_vec();
        assert_eq!(embed_tweet(&m, &doc("x", &["a"])).vector, va);
        assert_eq!(embed_tweet(&m, &doc("x", &["a", "a"])).vector, va);
        let e = embed_tweet(&m, &doc("x", &["zz"]));
        assert!(e.all_oov && e.vector.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn model_text_round_trip() {
        let docs = [doc("1", &["a", "b"])];
        let m = train_word2vec(&docs, &small_hp(2)).unwrap();
        let text = m.to_text();
        assert!(text.starts_with("dim=10 vocab=2\na "));
        let back = EmbeddingModel::from_text(&text).unwrap();
        assert_eq!(back.terms(), m.terms());
        for t in m.terms() {
            assert_eq!(back.vector(t), m.vector(t));
        }
        assert!(EmbeddingModel::from_text("dim=2 vocab=1\na 1.0\n").is_err());
        assert!(EmbeddingModel::from_text("dim=2 vocab=2\na 1 2\n").is_err());
    }

    #[test]
    fn keywords_skip_stopwords_and_tie_break() {
        let docs = [doc("1", &["the", "patch", "microsoft", "smbv3"]), doc("2", &["patch", "the", "bug"])];
        let kw = top_keywords(&docs, 3, &HashSet::new());
        assert_eq!(kw, ["patch", "bug", "microsoft"]);
        let ex: HashSet<&str> = ["patch"].into_iter().collect();
        assert_eq!(top_keywords(&docs, 3, &ex), ["bug", "microsoft", "smbv3"]);
    }
}
