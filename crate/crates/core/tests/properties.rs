use std::collections::BTreeMap;

use clirdistill_core::corpus::{window_document, Document, LanguageTag, Qrels};
use clirdistill_core::eval::{judged_at_k, maxp_aggregate, ndcg_at_k, recall_at_k, rerank, RunFile};
use clirdistill_core::kmeans::kmeans;
use clirdistill_core::lexicon::{psq_expand_document, translate_tokens, BilingualLexicon, MtNoise, WeightedBag};
use clirdistill_core::sparse::build_sparse_index;
use clirdistill_core::stats::paired_t_test;
use proptest::prelude::*;

fn doc(n: usize) -> Document {
    Document {
        id: "d".into(),
        tokens: (0..n).map(|i| format!("t{i}")).collect(),
        language: LanguageTag::new("src").unwrap(),
    }
}

/// (run rows, qrels rows) over a handful of queries and documents.
fn tiny_fixture() -> impl Strategy<Value = (Vec<(usize, Vec<(usize, f64)>)>, Vec<(usize, usize, u32)>)> {
    let ranking = proptest::collection::btree_map(0usize..15, -5.0f64..5.0, 0..12)
        .prop_map(|m| m.into_iter().collect::<Vec<_>>());
    let runs = proptest::collection::btree_map(0usize..4, ranking, 1..4)
        .prop_map(|m| m.into_iter().collect::<Vec<_>>());
    let judgments = proptest::collection::btree_map((0usize..5, 0usize..15), 0u32..4, 0..20)
        .prop_map(|m| m.into_iter().map(|((q, d), g)| (q, d, g)).collect::<Vec<_>>());
    (runs, judgments)
}

fn build(rows: &[(usize, Vec<(usize, f64)>)], judged: &[(usize, usize, u32)]) -> (RunFile, Qrels) {
    let mut run = RunFile::new("p");
    for (q, hits) in rows {
        run.insert_scores(&format!("q{q}"), hits.iter().map(|(d, s)| (format!("d{d}"), *s)).collect())
            .unwrap();
    }
    let mut qrels = Qrels::new();
    for (q, d, g) in judged {
        qrels.insert(&format!("q{q}"), &format!("d{d}"), *g);
    }
    (run, qrels)
}

proptest! {
    #[test]
    fn windows_cover_every_token(len in 1usize..600, size in 1usize..200, frac in 0.01f64..1.0) {
        let stride = ((size as f64 * frac).ceil() as usize).clamp(1, size);
        let ps = window_document(&doc(len), size, stride).unwrap();
        let mut covered = vec![false; len];
        for (i, p) in ps.iter().enumerate() {
            prop_assert!(p.tokens.len() <= size);
            prop_assert_eq!(p.offset % stride, 0);
            if i > 0 {
                prop_assert!(p.offset + p.tokens.len() > ps[i - 1].offset + ps[i - 1].tokens.len());
            }
            for c in &mut covered[p.offset..p.offset + p.tokens.len()] {
                *c = true;
            }
        }
        prop_assert!(covered.iter().all(|&c| c));
    }

    #[test]
    fn psq_preserves_mass_for_covered_terms(tokens in proptest::collection::vec(0usize..4, 0..30)) {
        let lex = BilingualLexicon::from_triples(
            [("s0", "a", 0.5), ("s0", "b", 0.5), ("s1", "a", 1.0), ("s2", "c", 0.9), ("s2", "d", 0.1), ("s3", "e", 1.0)],
            1e-9,
            false,
        ).unwrap();
        let toks: Vec<String> = tokens.iter().map(|i| format!("s{i}")).collect();
        let bag = psq_expand_document(&toks, &lex, 0.01, 5);
        prop_assert!((bag.total_mass() - toks.len() as f64).abs() < 1e-9);
    }

    #[test]
    fn translation_never_grows_and_is_deterministic(n in 0usize..50, seed in any::<u64>(), drop in 0.0f64..1.0) {
        let lex = BilingualLexicon::identity(["t0", "t1", "t2"]);
        let toks = doc(n).tokens;
        let noise = MtNoise::new(drop, 0.0).unwrap();
        let a = translate_tokens(&toks, &lex, noise, seed);
        prop_assert!(a.len() <= n);
        prop_assert_eq!(a, translate_tokens(&toks, &lex, noise, seed));
    }

    #[test]
    fn bm25_ranking_is_sorted_and_positive(docs in proptest::collection::vec(proptest::collection::vec(0usize..8, 1..20), 1..15),
                                           query in proptest::collection::vec(0usize..10, 1..4)) {
        let bags = docs.iter().enumerate().map(|(i, d)| {
            let toks: Vec<String> = d.iter().map(|t| format!("w{t}")).collect();
            (format!("p{i:02}"), WeightedBag::from_tokens(&toks))
        });
        let idx = build_sparse_index(bags).unwrap();
        let q: Vec<String> = query.iter().map(|t| format!("w{t}")).collect();
        let hits = idx.search(&q, 100);
        for w in hits.windows(2) {
            prop_assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
        }
        prop_assert!(hits.iter().all(|h| h.1 > 0.0));
    }

    #[test]
    fn metrics_are_bounded((rows, judged) in tiny_fixture()) {
        let (run, qrels) = build(&rows, &judged);
        for rep in [ndcg_at_k(&run, &qrels, 5).unwrap(), recall_at_k(&run, &qrels, 5).unwrap(), judged_at_k(&run, &qrels, 5).unwrap()] {
            prop_assert!((0.0..=1.0).contains(&rep.mean));
            prop_assert!(rep.per_query.values().all(|v| (0.0..=1.0 + 1e-12).contains(v)));
        }
    }

    #[test]
    fn ndcg_ignores_affine_score_changes((rows, judged) in tiny_fixture(), a in 0.1f64..10.0, b in -10.0f64..10.0) {
        let (run, qrels) = build(&rows, &judged);
        // build from the already-ranked lists so ties keep their order
        let mut moved = RunFile::new("p");
        for (q, r) in run.iter() {
            moved.insert_ranked(q, r.iter().map(|(d, s)| (d.clone(), a * s + b)).collect()).unwrap();
        }
        let x = ndcg_at_k(&run, &qrels, 10).unwrap();
        let y = ndcg_at_k(&moved, &qrels, 10).unwrap();
        prop_assert_eq!(x.per_query, y.per_query);
    }

    #[test]
    fn ideal_run_scores_one(judged in proptest::collection::btree_map(0usize..20, 0u32..4, 1..20)) {
        let mut qrels = Qrels::new();
        for (d, g) in &judged {
            qrels.insert("q", &format!("d{d}"), *g);
        }
        let mut run = RunFile::new("ideal");
        run.insert_scores("q", judged.iter().map(|(d, g)| (format!("d{d}"), f64::from(*g))).collect()).unwrap();
        let v = ndcg_at_k(&run, &qrels, 20).unwrap().mean;
        if judged.values().any(|&g| g > 0) {
            prop_assert!((v - 1.0).abs() < 1e-12);
        } else {
            prop_assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn maxp_ignores_passage_order(scores in proptest::collection::vec((0usize..5, 0usize..4, -3.0f64..3.0), 1..20), seed in any::<u64>()) {
        let mut uniq = BTreeMap::new();
        for (d, o, s) in scores {
            uniq.insert(format!("d{d}#{o}"), s);
        }
        let doc_of: BTreeMap<String, String> = uniq.keys().map(|p| (p.clone(), p.split('#').next().unwrap().to_string())).collect();
        let mut items: Vec<(&str, f64)> = uniq.iter().map(|(p, s)| (p.as_str(), *s)).collect();
        let forward = maxp_aggregate(items.iter().copied(), &doc_of).unwrap();
        let r = seed as usize % items.len().max(1);
        items.rotate_left(r);
        items.reverse();
        prop_assert_eq!(forward, maxp_aggregate(items.iter().copied(), &doc_of).unwrap());
    }

    #[test]
    fn rerank_keeps_scores_non_increasing((rows, judged) in tiny_fixture(), depth in 1usize..8) {
        let (run, qrels) = build(&rows, &judged);
        let out = rerank(&run, depth, |q, d| Ok(f64::from(qrels.grade(q, d).unwrap_or(0)) * 10.0)).unwrap();
        for (q, r) in out.iter() {
            prop_assert_eq!(r.len(), run.ranking(q).unwrap().len());
            prop_assert!(r.windows(2).all(|w| w[0].1 >= w[1].1));
        }
        let before = ndcg_at_k(&run, &qrels, 20).unwrap();
        let after = ndcg_at_k(&out, &qrels, 20).unwrap();
        if depth >= 20 {
            for (q, v) in &after.per_query {
                prop_assert!(*v >= before.per_query[q] - 1e-12);
            }
        }
    }

    #[test]
    fn t_test_is_antisymmetric(a in proptest::collection::vec(-1.0f64..1.0, 2..30), shift in -0.5f64..0.5) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x + shift + 0.01 * (i % 3) as f64).collect();
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        prop_assert!((ab.t + ba.t).abs() < 1e-9 * ab.t.abs().max(1.0));
        prop_assert!((ab.p - ba.p).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab.p));
    }

    #[test]
    fn kmeans_inertia_is_monotone(points in proptest::collection::vec(-5.0f64..5.0, 6..120), k in 1usize..5, seed in any::<u64>()) {
        let n = points.len() / 2;
        let pts = &points[..n * 2];
        let km = kmeans(pts, 2, k.min(n), 15, seed).unwrap();
        for w in km.inertia.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
        }
    }
}
