//! Acceptance suite. Runs every criterion, prints one line each, and exits
//! nonzero if any of them fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clirdistill::config::{Model, SelectorKind};
use clirdistill::{checkpoint, index_store, Pipeline, PipelineConfig, Stage};
use clirdistill_core::encoder::{score_and_grad, LossConfig, Vocab};
use clirdistill_core::eval::{judged_at_k, ndcg_at_k, recall_at_k, RunFile};
use clirdistill_core::index::{ann_search, EncodedCollection};
use clirdistill_core::lexicon::psq_expand_document;
use clirdistill_core::sparse::build_sparse_index;
use clirdistill_core::stats::paired_t_test;
use clirdistill_core::encoder::encode;
use clirdistill_core::{BilingualLexicon, EncoderParams, Qrels, Role, WeightedBag};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

/// Default-config pipeline runs shared between criteria.
struct Workspace {
    root: tempfile::TempDir,
    seeds: BTreeMap<u64, PathBuf>,
}

impl Workspace {
    fn seed_dir(&self, seed: u64) -> Result<&Path, String> {
        self.seeds
            .get(&seed)
            .map(PathBuf::as_path)
            .ok_or_else(|| format!("the seed-{seed} default run did not complete"))
    }

    fn seed0(&self) -> Result<Pipeline, String> {
        let dir = self.seed_dir(0)?;
        Ok(Pipeline::new(default_config(0)).with_output(dir))
    }
}

fn default_config(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.seed = seed;
    cfg
}

fn run_pipeline(cfg: PipelineConfig, out: &Path, through: Stage) -> Result<Pipeline, String> {
    let p = Pipeline::new(cfg).with_output(out);
    p.run(through).map_err(|err| format!("{err:#}"))?;
    Ok(p)
}

fn summary_value(dir: &Path, run: &str, metric: &str) -> Result<f64, String> {
    let text = fs::read_to_string(dir.join("evaluate/summary.tsv")).map_err(e)?;
    text.lines()
        .skip(1)
        .map(|l| l.split('\t').collect::<Vec<_>>())
        .find(|c| c[0] == run && c[1] == metric)
        .ok_or_else(|| format!("{run} {metric} missing from summary"))?[3]
        .parse()
        .map_err(e)
}

// ---------------------------------------------------------------------------
// 1. gradients

/// Reference forward pass straight from the raw parameter blocks.
fn reference_rows(p: &EncoderParams, tokens: &[String], marker: &[f64]) -> Vec<Vec<f64>> {
    let (d, dp) = (p.dim, p.out_dim);
    let t = &p.tensors;
    tokens
        .iter()
        .map(|tok| {
            let r = p.vocab.row(tok);
            let x: Vec<f64> = (0..d).map(|a| t.embeddings[r * d + a] + marker[a]).collect();
            let y: Vec<f64> = (0..dp).map(|k| (0..d).map(|a| x[a] * t.projection[a * dp + k]).sum()).collect();
            let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            y.iter().map(|v| v / n).collect()
        })
        .collect()
}

fn reference_loss(p: &EncoderParams, query: &[String], passages: &[Vec<String>], teacher: &[f64]) -> f64 {
    let q = reference_rows(p, query, &p.tensors.query_marker);
    let logits: Vec<f64> = passages
        .iter()
        .map(|ps| {
            let rows = reference_rows(p, ps, &p.tensors.passage_marker);
            q.iter()
                .map(|qi| {
                    rows.iter()
                        .map(|pj| qi.iter().zip(pj).map(|(a, b)| a * b).sum::<f64>())
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .sum()
        })
        .collect();
    let softmax = |x: &[f64]| {
        let z: f64 = x.iter().map(|v| v.exp()).sum();
        x.iter().map(|v| v.exp() / z).collect::<Vec<_>>()
    };
    let (s, t) = (softmax(&logits), softmax(teacher));
    s.iter().zip(&t).map(|(a, b)| a * (a / b).ln()).sum()
}

fn criterion_1() -> Outcome {
    const EPS: f64 = 1e-5;
    let start = Instant::now();
    let terms: Vec<String> = (0..7).map(|i| format!("t{i}")).collect();
    let mut worst: f64 = 0.0;
    for fixture in 0..20u64 {
        let mut rng = StdRng::seed_from_u64(1000 + fixture);
        let mut params = EncoderParams::init(Vocab::new(terms.iter()), 8, 4, fixture).map_err(e)?;
        for block in params.tensors.blocks_mut() {
            for v in block.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        // one draw past the vocabulary exercises the unknown-token row
        let mut pick = |n: usize| -> Vec<String> { (0..n).map(|_| format!("t{}", rng.gen_range(0..8))).collect() };
        let query = pick(3);
        let passages: Vec<Vec<String>> = (0..3).map(|_| pick(5)).collect();
        let teacher: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();

        let views: Vec<&[String]> = passages.iter().map(Vec::as_slice).collect();
        let (loss, grads) =
            score_and_grad(&params, &query, &views, &teacher, &LossConfig::default()).map_err(e)?;
        let reference = reference_loss(&params, &query, &passages, &teacher);
        ensure!((loss - reference).abs() < 1e-10, "fixture {fixture}: loss {loss} vs reference {reference}");

        for block in 0..4 {
            for i in 0..params.tensors.blocks()[block].len() {
                let mut plus = params.clone();
                plus.tensors.blocks_mut()[block][i] += EPS;
                let mut minus = params.clone();
                minus.tensors.blocks_mut()[block][i] -= EPS;
                let numeric = (reference_loss(&plus, &query, &passages, &teacher)
                    - reference_loss(&minus, &query, &passages, &teacher))
                    / (2.0 * EPS);
                let analytic = grads.blocks()[block][i];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
    }
    let elapsed = start.elapsed();
    ensure!(worst < 1e-4, "max relative error {worst:.3e}");
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("20 fixtures, max relative error {worst:.3e}, {:.2}s", elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------------------
// 2. distilled student against the translate-train baseline

fn criterion_2(ws: &mut Workspace) -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut deltas = Vec::new();
    let mut passages = 0;
    for seed in 0..3u64 {
        let dir = ws.root.path().join(format!("seed{seed}"));
        let p = run_pipeline(default_config(seed), &dir, Stage::Evaluate)?;
        passages = p.evaluation_passages().map_err(e)?.len();
        ws.seeds.insert(seed, dir.clone());
        let a = summary_value(&dir, "distill", "ndcg@20")?;
        let b = summary_value(&dir, "translate_train", "ndcg@20")?;
        lines.push(format!("seed {seed}: distill {a:.4} translate_train {b:.4}"));
        deltas.push(a - b);
    }
    let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
    let elapsed = start.elapsed();
    let detail = format!(
        "{passages} passages; {}; mean delta {mean:+.4}; {:.1}s",
        lines.join("; "),
        elapsed.as_secs_f64()
    );
    ensure!(mean > 0.0, "{detail}");
    ensure!(elapsed < Duration::from_secs(600), "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 3. scorer language

fn teach_outputs(root: &Path, name: &str, cfg: PipelineConfig) -> Result<(Vec<u8>, Vec<u8>), String> {
    let p = run_pipeline(cfg, &root.join(name), Stage::Teach)?;
    let scores = fs::read(p.teacher_scores_path()).map_err(e)?;
    let candidates = fs::read(p.candidates_path()).map_err(e)?;
    Ok((scores, candidates))
}

fn criterion_3(ws: &Workspace) -> Outcome {
    let root = ws.root.path().join("scorer");
    let configure = |clean: bool, target_side: bool| {
        let mut cfg = default_config(0);
        if clean {
            cfg.translation.identity_lexicon = true;
            cfg.translation.p_drop = 0.0;
            cfg.translation.p_confuse = 0.0;
        }
        cfg.teacher.term_loss_penalty = 1.0;
        if target_side {
            cfg.languages.scorer[1] = cfg.languages.target.clone();
        }
        cfg
    };
    let sha = |b: &[u8]| clirdistill::digest::sha256_hex(b);

    let (ee, ee_c) = teach_outputs(&root, "clean-ee", configure(true, false))?;
    let (el, el_c) = teach_outputs(&root, "clean-el", configure(true, true))?;
    ensure!(sha(&ee) == sha(&el), "clean scorer files differ: {} vs {}", sha(&ee), sha(&el));
    ensure!(ee_c == el_c, "clean candidate files differ");

    let (nee, _) = teach_outputs(&root, "noisy-ee", configure(false, false))?;
    let (nel, _) = teach_outputs(&root, "noisy-el", configure(false, true))?;
    ensure!(sha(&nee) != sha(&nel), "noisy scorer files are identical");
    Ok(format!(
        "clean sha {} for both scorers; noisy {} vs {}",
        &sha(&ee)[..12],
        &sha(&nee)[..12],
        &sha(&nel)[..12]
    ))
}

// ---------------------------------------------------------------------------
// 4. selector swap

fn subtree(dir: &Path, sub: &str) -> BTreeMap<String, Vec<u8>> {
    common::snapshot(&dir.join(sub))
}

fn criterion_4(ws: &Workspace) -> Outcome {
    let base = ws.seed0()?;
    let ckpt = ws.root.path().join("selector-student.ckpt");
    fs::copy(base.checkpoint_path(Model::Distill), &ckpt).map_err(e)?;

    let dir = ws.root.path().join("selector-student");
    let mut cfg = default_config(0);
    cfg.selector.kind = SelectorKind::Student;
    cfg.selector.checkpoint = Some(ckpt);
    let swapped = run_pipeline(cfg, &dir, Stage::Evaluate)?;

    for sub in ["corpus", "translate"] {
        let diff = common::differing(&subtree(base.output(), sub), &subtree(&dir, sub));
        ensure!(diff.is_empty(), "{sub} outputs changed: {diff:?}");
    }
    let a = fs::read(base.candidates_path()).map_err(e)?;
    let b = fs::read(swapped.candidates_path()).map_err(e)?;
    ensure!(a != b, "candidate files are identical");

    let mut parts = Vec::new();
    for (label, d) in [("bm25", base.output()), ("student", dir.as_path())] {
        let r = summary_value(d, "distill", "recall@1000")?;
        let t = summary_value(d, "translate_train", "recall@1000")?;
        parts.push(format!("{label} selector R@1000 distill {r:.4} translate_train {t:.4}"));
    }
    Ok(parts.join("; "))
}

// ---------------------------------------------------------------------------
// 5. approximate search fidelity

fn criterion_5(ws: &Workspace) -> Outcome {
    let p = ws.seed0()?;
    let start = Instant::now();
    let params = checkpoint::load(&p.checkpoint_path(Model::Distill)).map_err(e)?;
    let index = index_store::load(&p.index_dir(Model::Distill)).map_err(e)?;
    ensure!(
        index.num_centroids() == 64 && index.nbits == 1,
        "index has {} centroids at {} bits",
        index.num_centroids(),
        index.nbits
    );
    let passages = p.evaluation_passages().map_err(e)?;
    let queries = p.evaluation_queries().map_err(e)?;
    let exact = EncodedCollection::new(&params, &passages).map_err(e)?;

    let truth: Vec<BTreeSet<String>> = queries
        .iter()
        .map(|q| {
            let v = encode(&params, &q.tokens, Role::Query)?;
            Ok(exact.search(&v, 20)?.into_iter().map(|(id, _)| id).collect())
        })
        .collect::<Result<_, clirdistill_core::Error>>()
        .map_err(e)?;

    let mut recalls = Vec::new();
    for nprobe in [1, 2, 4, 8, 16, 64] {
        let mut total = 0.0;
        for (q, want) in queries.iter().zip(&truth) {
            let got = ann_search(&index, &params, &q.tokens, 20, nprobe).map_err(e)?;
            let hit = got.iter().filter(|(id, _)| want.contains(id)).count();
            total += hit as f64 / want.len().max(1) as f64;
        }
        recalls.push((nprobe, total / queries.len() as f64));
    }
    let elapsed = start.elapsed();
    let detail = recalls
        .iter()
        .map(|(n, r)| format!("nprobe {n}: {r:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    let at8 = recalls[3].1;
    ensure!(at8 >= 0.9, "recall@20 at nprobe 8 is {at8:.4}; {detail}");
    ensure!(
        recalls.windows(2).all(|w| w[1].1 >= w[0].1),
        "recall decreases with nprobe; {detail}"
    );
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("{detail}; {:.2}s", elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------------------
// 6. metrics against brute force

fn permutations(items: &[u32]) -> Vec<Vec<u32>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

fn brute_dcg(grades: &[u32], k: usize) -> f64 {
    grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| f64::from(g) * std::f64::consts::LN_2 / ((i + 2) as f64).ln())
        .sum()
}

struct Fixture {
    run: RunFile,
    qrels: Qrels,
    judged: BTreeMap<String, BTreeMap<String, u32>>,
    ranked: BTreeMap<String, Vec<String>>,
}

fn metric_fixture(rng: &mut StdRng) -> Fixture {
    let docs: Vec<String> = (0..8).map(|i| format!("d{i}")).collect();
    let mut run = RunFile::new("fixture");
    let mut qrels = Qrels::new();
    let mut judged = BTreeMap::new();
    let mut ranked = BTreeMap::new();
    for q in 0..rng.gen_range(1..5) {
        let qid = format!("q{q}");
        let mut j = BTreeMap::new();
        for d in &docs {
            if rng.gen_bool(0.4) {
                let g = rng.gen_range(0..4);
                qrels.insert(&qid, d, g);
                j.insert(d.clone(), g);
            }
        }
        let mut order = docs.clone();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        order.truncate(rng.gen_range(0..=order.len()));
        let ranking: Vec<(String, f64)> =
            order.iter().enumerate().map(|(i, d)| (d.clone(), 100.0 - i as f64)).collect();
        run.insert_ranked(&qid, ranking).unwrap();
        judged.insert(qid.clone(), j);
        ranked.insert(qid, order);
    }
    Fixture {
        run,
        qrels,
        judged,
        ranked,
    }
}

fn check_fixture(f: &Fixture, k: usize) -> Result<(), String> {
    let nd = ndcg_at_k(&f.run, &f.qrels, k).map_err(e)?;
    let rc = recall_at_k(&f.run, &f.qrels, k).map_err(e)?;
    let jd = judged_at_k(&f.run, &f.qrels, k).map_err(e)?;
    for (qid, order) in &f.ranked {
        let j = &f.judged[qid];
        let grades: Vec<u32> = order.iter().map(|d| j.get(d).copied().unwrap_or(0)).collect();
        let pool: Vec<u32> = j.values().copied().collect();
        let ideal = permutations(&pool).iter().map(|p| brute_dcg(p, k)).fold(0.0, f64::max);
        let want_ndcg = if ideal > 0.0 { brute_dcg(&grades, k) / ideal } else { 0.0 };
        let got = nd.per_query[qid];
        ensure!((got - want_ndcg).abs() < 1e-9, "{qid} ndcg@{k}: {got} vs {want_ndcg}");

        let relevant: BTreeSet<&String> = j.iter().filter(|(_, g)| **g > 0).map(|(d, _)| d).collect();
        if relevant.is_empty() {
            ensure!(!rc.per_query.contains_key(qid), "{qid} recall should be excluded");
        } else {
            let found = order.iter().take(k).filter(|d| relevant.contains(d)).count();
            let want = found as f64 / relevant.len() as f64;
            let got = rc.per_query[qid];
            ensure!((got - want).abs() < 1e-9, "{qid} recall@{k}: {got} vs {want}");
        }

        let top: Vec<&String> = order.iter().take(k).collect();
        let want = if top.is_empty() {
            0.0
        } else {
            top.iter().filter(|d| j.contains_key(**d)).count() as f64 / top.len() as f64
        };
        let got = jd.per_query[qid];
        ensure!((got - want).abs() < 1e-9, "{qid} judged@{k}: {got} vs {want}");
    }
    Ok(())
}

fn criterion_6() -> Outcome {
    let mut rng = StdRng::seed_from_u64(6);
    for n in 0..100 {
        let f = metric_fixture(&mut rng);
        let k = rng.gen_range(1..10);
        check_fixture(&f, k).map_err(|m| format!("fixture {n}: {m}"))?;
    }

    let mut run = RunFile::new("example");
    run.insert_ranked("q", vec![("a".into(), 2.0), ("b".into(), 1.0)]).map_err(e)?;
    let mut qrels = Qrels::new();
    qrels.insert("q", "b", 1);
    let ndcg = ndcg_at_k(&run, &qrels, 20).map_err(e)?.mean;
    ensure!((ndcg - 0.63093).abs() < 5e-5, "worked nDCG {ndcg}");
    let t = paired_t_test(&[0.1, 0.2, 0.3], &[0.0; 3]).map_err(e)?;
    ensure!((t.t - 3.4641).abs() < 5e-5 && (t.p - 0.0742).abs() < 5e-5, "worked t-test {t:?}");
    Ok(format!(
        "100 fixtures agree to 1e-9; nDCG {ndcg:.5}; t {:.4} df {} p {:.4}",
        t.t, t.df, t.p
    ))
}

// ---------------------------------------------------------------------------
// 7. identity lexicon PSQ

fn criterion_7(ws: &Workspace) -> Outcome {
    let p = ws.seed0()?;
    let passages = p.evaluation_passages().map_err(e)?;
    let queries = p.evaluation_queries().map_err(e)?;
    let vocab: BTreeSet<&String> = passages.iter().flat_map(|x| &x.tokens).chain(queries.iter().flat_map(|q| &q.tokens)).collect();
    let identity = BilingualLexicon::identity(vocab.iter().map(|s| s.as_str()));

    let langs = &p.config().languages;
    ensure!(langs.query != langs.document, "fixture must translate");
    let psq = clirdistill::pipeline::psq_index(&passages, &identity, langs).map_err(e)?;
    let direct = build_sparse_index(passages.iter().map(|x| (x.id.clone(), WeightedBag::from_tokens(&x.tokens))))
        .map_err(e)?;

    // the expansion itself must reproduce raw term counts
    for x in passages.iter().take(50) {
        let bag = psq_expand_document(&x.tokens, &identity, 0.01, 5);
        ensure!(bag == WeightedBag::from_tokens(&x.tokens), "passage {} expands differently", x.id);
    }
    for q in &queries {
        let a = psq.search(&q.tokens, 1000);
        let b = direct.search(&q.tokens, 1000);
        ensure!(a == b, "query {} ranks differently", q.id);
    }
    Ok(format!("{} queries over {} passages, identical rankings", queries.len(), passages.len()))
}

// ---------------------------------------------------------------------------
// 8. student as a share of the reranking pipeline

fn criterion_8(ws: &Workspace) -> Outcome {
    let p = ws.seed0()?;
    let text = fs::read_to_string(p.compare_report_path()).map_err(e)?;
    let header: Vec<&str> = text.lines().next().unwrap_or_default().split('\t').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).ok_or(format!("no {name} column"));
    let (ca, cb, cm, cp) = (col("run_a")?, col("run_b")?, col("metric")?, col("percent")?);
    let row = text
        .lines()
        .map(|l| l.split('\t').collect::<Vec<_>>())
        .find(|c| c.len() == header.len() && c[ca] == "distill" && c[cb] == "rerank" && c[cm] == "ndcg@20")
        .ok_or("no distill vs rerank nDCG@20 row")?;
    let percent: f64 = row[cp].parse().map_err(e)?;
    let student = summary_value(p.output(), "distill", "ndcg@20")?;
    let rerank = summary_value(p.output(), "rerank", "ndcg@20")?;
    Ok(format!(
        "student nDCG@20 {student:.4} is {percent:.2}% of rerank {rerank:.4}"
    ))
}

// ---------------------------------------------------------------------------
// 9. determinism

fn criterion_9(ws: &Workspace) -> Outcome {
    let first = ws.seed_dir(0)?;
    let second = ws.root.path().join("seed0-again");
    run_pipeline(default_config(0), &second, Stage::Evaluate)?;
    let a = common::snapshot(first);
    let b = common::snapshot(&second);
    let diff = common::differing(&a, &b);
    ensure!(diff.is_empty(), "{} files differ: {diff:?}", diff.len());
    Ok(format!("{} files byte-identical", a.len()))
}

// ---------------------------------------------------------------------------

fn run(n: usize, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(panic) => Err(panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    };
    match &outcome {
        Ok(detail) => println!("criterion {n}: PASS - {detail}"),
        Err(detail) => println!("criterion {n}: FAIL - {detail}"),
    }
    outcome.is_ok()
}

fn main() {
    let mut ws = Workspace {
        root: tempfile::tempdir().expect("temporary directory"),
        seeds: BTreeMap::new(),
    };
    let results = [
        run(1, criterion_1),
        run(2, || criterion_2(&mut ws)),
        run(3, || criterion_3(&ws)),
        run(4, || criterion_4(&ws)),
        run(5, || criterion_5(&ws)),
        run(6, criterion_6),
        run(7, || criterion_7(&ws)),
        run(8, || criterion_8(&ws)),
        run(9, || criterion_9(&ws)),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
