use std::collections::HashSet;

use chrono::{DateTime, TimeZone, Utc};
use proptest::prelude::*;
use proptest::sample::subsequence;

use vulnwatch_core::cve::pearson;
use vulnwatch_core::ingest::{read_corpus_from, write_corpus_to, ReadOptions};
use vulnwatch_core::kmeans::recompute_sse;
use vulnwatch_core::relevance::{read_verdicts, write_verdicts, Method, ScorerError};
use vulnwatch_core::text::{idf, TokenizerOptions};
use vulnwatch_core::{
    compute_stats, elbow_select, extract_cves, filter_relevant, fit_vocabulary, keyword_filter, kmeans_fit,
    score_predictions, subset_metrics, tfidf_vectorize, top_phrases, zero_shot_classify, CveId, EntailmentScorer,
    HypothesisConfig, KMeansParams, RelevanceVerdict, TokenizedDoc, Tweet,
};

fn timestamp() -> impl Strategy<Value = DateTime<Utc>> {
    // 2015 through 2025, second resolution.
    (1_420_070_400i64..1_767_225_600).prop_map(|s| Utc.timestamp_opt(s, 0).unwrap())
}

fn tweet_text() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-zA-Z ]{1,40}",
        "\\PC{1,60}",
        Just("Vulnerability in CVE-2020-0601".to_string()),
        Just("new vulnerability\nsecond line \"quoted\"".to_string()),
    ]
    .prop_filter("non-blank", |t| !t.trim().is_empty())
}

fn tweets(max: usize) -> impl Strategy<Value = Vec<Tweet>> {
    prop::collection::vec(
        (
            timestamp(),
            tweet_text(),
            prop_oneof![Just("en"), Just("es"), Just("und")],
            prop::collection::vec("https://[a-z]{1,8}\\.org/[a-z0-9]{0,6}", 0..3),
            prop::option::of("[0-9]{1,6}"),
        ),
        0..max,
    )
    .prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (at, text, lang, urls, author))| {
                let t = Tweet::new(format!("t{i}"), at, text).with_lang(lang).with_urls(urls);
                match author {
                    Some(a) => t.with_author(a),
                    None => t,
                }
            })
            .collect()
    })
}

/// Deterministic pseudo-score from the text, spread over [0, 1].
struct HashScorer;

impl EntailmentScorer for HashScorer {
    fn score(&self, premise: &str, _hypothesis: &str) -> Result<f64, ScorerError> {
        let h = premise.bytes().fold(2166136261u32, |h, b| (h ^ b as u32).wrapping_mul(16777619));
        Ok((h % 1001) as f64 / 1000.0)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn archive_round_trip(ts in tweets(20)) {
        let mut buf = Vec::new();
        write_corpus_to(&mut buf, &ts).unwrap();
        let back = read_corpus_from(buf.as_slice(), ReadOptions::strict()).unwrap();
        prop_assert_eq!(back.tweets, ts);
        prop_assert_eq!(back.malformed, 0);
    }

    #[test]
    fn keyword_filter_is_exact_subset(ts in tweets(30), kw in prop_oneof![Just("vulnerability"), Just("CVE"), Just("a")]) {
        let kept = keyword_filter(&ts, kw);
        let needle = kw.to_lowercase();
        let kept_ids: HashSet<_> = kept.iter().map(|t| t.id.clone()).collect();
        for t in &ts {
            prop_assert_eq!(kept_ids.contains(&t.id), t.text.to_lowercase().contains(&needle));
        }
        // order preserved
        let order: Vec<_> = ts.iter().filter(|t| kept_ids.contains(&t.id)).map(|t| &t.id).collect();
        prop_assert_eq!(order, kept.iter().map(|t| &t.id).collect::<Vec<_>>());
    }

    #[test]
    fn stats_ignore_order(ts in tweets(30), seed in any::<u64>()) {
        let mut shuffled = ts.clone();
        let n = shuffled.len();
        if n > 1 {
            for i in 0..n {
                let j = (seed.wrapping_mul(i as u64 + 7) % n as u64) as usize;
                shuffled.swap(i, j);
            }
        }
        let (a, b) = (compute_stats(&ts), compute_stats(&shuffled));
        prop_assert_eq!(&a, &b);
        prop_assert!((0.0..=100.0).contains(&a.pct_english) && (0.0..=100.0).contains(&a.pct_with_url));
        prop_assert_eq!(a.date_range.is_none(), ts.is_empty());
    }

    #[test]
    fn tfidf_vectors_are_unit_or_empty(
        docs in prop::collection::vec(prop::collection::vec("[a-e]{1,2}", 0..12), 1..25),
        min_df in 1usize..4,
    ) {
        let docs: Vec<TokenizedDoc> =
            docs.into_iter().enumerate().map(|(i, toks)| TokenizedDoc::new(format!("d{i}"), toks)).collect();
        let vocab = fit_vocabulary(&docs, min_df).unwrap();
        for d in &docs {
            let v = tfidf_vectorize(d, &vocab);
            if v.is_empty() {
                prop_assert!(d.tokens.iter().all(|t| vocab.index_of(t).is_none()));
            } else {
                prop_assert!((v.norm() - 1.0).abs() < 1e-12);
                prop_assert!(v.entries.windows(2).all(|w| w[0].0 < w[1].0));
            }
        }
    }

    #[test]
    fn idf_falls_as_document_frequency_rises(n in 1usize..10_000, df in 1usize..10_000) {
        prop_assume!(df < n);
        prop_assert!(idf(n, df) > idf(n, df + 1));
        prop_assert!(idf(n, n) >= 1.0);
    }

    #[test]
    fn kmeans_invariants(
        pts in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 2..40),
        k in 1usize..6,
        seed in any::<u64>(),
    ) {
        let distinct: HashSet<Vec<u64>> = pts.iter().map(|p| p.iter().map(|x| x.to_bits()).collect()).collect();
        prop_assume!(k <= distinct.len());
        let m = kmeans_fit(&pts, k, seed, &KMeansParams::default()).unwrap();
        prop_assert!(m.assignments.iter().all(|&a| a < k));
        prop_assert!(m.sse_history.windows(2).all(|w| w[1] <= w[0]));
        let again = recompute_sse(&pts, &m);
        prop_assert!((again - m.sse).abs() <= 1e-6 * m.sse.max(1e-9));
        // every point sits with its nearest centroid, ties to the lowest index
        for (p, &a) in pts.iter().zip(&m.assignments) {
            let d: Vec<f64> = m.centroids.iter().map(|c| c.iter().zip(p).map(|(x, y)| (x - y) * (x - y)).sum()).collect();
            let best = d.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(d.iter().position(|&x| x == best).unwrap(), a);
        }
        prop_assert_eq!(&kmeans_fit(&pts, k, seed, &KMeansParams::default()).unwrap(), &m);
    }

    #[test]
    fn elbow_picks_the_largest_second_difference(drops in prop::collection::vec(0.0f64..100.0, 2..10)) {
        let mut sse = 1000.0;
        let mut curve = vec![(1usize, sse)];
        for (i, d) in drops.iter().enumerate() {
            sse -= d;
            curve.push((i + 2, sse));
        }
        let k = elbow_select(&curve).unwrap();
        let second = |i: usize| (curve[i - 1].1 - curve[i].1) - (curve[i].1 - curve[i + 1].1);
        let best = (1..curve.len() - 1).map(second).fold(f64::NEG_INFINITY, f64::max);
        let first = (1..curve.len() - 1).find(|&i| second(i) == best).unwrap();
        prop_assert_eq!(k, curve[first].0);
    }

    #[test]
    fn higher_threshold_never_adds_tweets(ts in tweets(25), lo in 0.05f64..0.95, hi in 0.05f64..0.95) {
        prop_assume!(lo <= hi);
        let run = |threshold: f64| {
            let cfg = HypothesisConfig { threshold, ..HypothesisConfig::default() };
            zero_shot_classify(&ts, &HashScorer, &cfg, &Default::default()).unwrap().verdicts
        };
        let (a, b) = (run(lo), run(hi));
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(&x.tweet_id, &y.tweet_id);
            prop_assert!(!y.relevant || x.relevant);
            prop_assert_eq!(x.relevant, x.score.unwrap() >= lo);
        }
    }

    #[test]
    fn filter_partitions_the_corpus(ts in tweets(30), flags in prop::collection::vec(any::<bool>(), 30)) {
        let verdicts: Vec<RelevanceVerdict> = ts
            .iter()
            .zip(&flags)
            .map(|(t, &f)| RelevanceVerdict { tweet_id: t.id.clone(), method: Method::Zeroshot, relevant: f, score: None, cluster_id: None })
            .collect();
        let (kept, fraction) = filter_relevant(&verdicts, &ts).unwrap();
        let expected = flags.iter().take(ts.len()).filter(|f| **f).count();
        prop_assert_eq!(kept.len(), expected);
        if !ts.is_empty() {
            prop_assert_eq!(fraction, expected as f64 / ts.len() as f64);
        }
        let mut buf = Vec::new();
        write_verdicts(&mut buf, &verdicts).unwrap();
        prop_assert_eq!(read_verdicts(buf.as_slice()).unwrap(), verdicts);
    }

    #[test]
    fn extracted_ids_are_canonical(text in "\\PC{0,40}(cve|CVE|CvE)-[0-9]{4}-[0-9]{4,7}\\PC{0,40}") {
        let ids = extract_cves(&text);
        prop_assert!(!ids.is_empty());
        for id in ids {
            let s = id.to_string();
            prop_assert!(s.starts_with("CVE-"));
            prop_assert_eq!(s.parse::<CveId>().unwrap(), id);
        }
    }

    #[test]
    fn pearson_is_symmetric_and_affine_invariant(
        pairs in prop::collection::vec((0.0f64..100.0, 0.0f64..10.0), 3..40),
        scale in 0.1f64..10.0,
        shift in -100.0f64..100.0,
    ) {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let r = pearson(&xs, &ys);
        prop_assume!(r.is_ok());
        let r = r.unwrap();
        prop_assert_eq!(pearson(&ys, &xs).unwrap(), r);
        let moved: Vec<f64> = xs.iter().map(|x| scale * x + shift).collect();
        prop_assert!((pearson(&moved, &ys).unwrap() - r).abs() < 1e-9);
        let flipped: Vec<f64> = xs.iter().map(|x| -x).collect();
        prop_assert!((pearson(&flipped, &ys).unwrap() + r).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&r));
    }

    #[test]
    fn metrics_survive_joint_shuffles(rows in prop::collection::vec((any::<bool>(), any::<bool>(), any::<bool>()), 1..100), seed in any::<u64>()) {
        let p: Vec<bool> = rows.iter().map(|r| r.0).collect();
        let l: Vec<bool> = rows.iter().map(|r| r.1).collect();
        let mask: Vec<bool> = rows.iter().map(|r| r.2).collect();
        let full = score_predictions(&p, &l).unwrap();
        prop_assert_eq!(full.total(), rows.len());

        let mut idx: Vec<usize> = (0..rows.len()).collect();
        idx.sort_by_key(|&i| (i as u64).wrapping_mul(seed | 1).rotate_left(17));
        let sp: Vec<bool> = idx.iter().map(|&i| p[i]).collect();
        let sl: Vec<bool> = idx.iter().map(|&i| l[i]).collect();
        prop_assert_eq!(score_predictions(&sp, &sl).unwrap(), full.clone());

        let inverse: Vec<bool> = mask.iter().map(|m| !m).collect();
        if mask.iter().any(|&m| m) && inverse.iter().any(|&m| m) {
            let a = subset_metrics(&p, &l, &mask, "a").unwrap();
            let b = subset_metrics(&p, &l, &inverse, "b").unwrap();
            prop_assert_eq!((a.tp + b.tp, a.fp + b.fp, a.fn_ + b.fn_, a.tn + b.tn), (full.tp, full.fp, full.fn_, full.tn));
        }
        let all = vec![true; rows.len()];
        let whole = subset_metrics(&p, &l, &all, "all").unwrap();
        prop_assert_eq!(whole, full);
    }

    #[test]
    fn phrases_are_ranked(ts in tweets(20), n in 1usize..30, lo in 1usize..=3, extra in 0usize..=2) {
        let hi = (lo + extra).min(3);
        let ranked = top_phrases(&ts, n, (lo, hi), &TokenizerOptions::default()).unwrap();
        prop_assert!(ranked.len() <= n);
        for w in ranked.windows(2) {
            prop_assert!(w[0].count > w[1].count || (w[0].count == w[1].count && w[0].phrase < w[1].phrase));
        }
        for p in &ranked {
            let len = p.phrase.split(' ').count();
            prop_assert!((lo..=hi).contains(&len));
        }
    }

    #[test]
    fn filtering_a_subsequence_commutes(ts in tweets(20).prop_flat_map(|v| { let n = v.len(); subsequence(v, 0..=n) })) {
        let once = keyword_filter(&ts, "a");
        prop_assert_eq!(keyword_filter(&once, "a"), once);
    }
}
