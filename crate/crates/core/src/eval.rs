//! Document-level evaluation of ranked runs.
//!
//! Metrics are computed per query and micro-averaged. The evaluated query
//! set is the set of queries present in the run, so a query that was
//! searched but returned nothing still counts (with an empty ranking).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::corpus::Qrels;
use crate::error::{Error, Result};

pub const NDCG_DEPTH: usize = 20;
pub const RECALL_DEPTH: usize = 1000;
pub const JUDGED_DEPTH: usize = 20;
pub const RERANK_DEPTH: usize = 200;

/// Descending score, ties broken by ascending id.
pub fn sort_by_score_then_id(hits: &mut [(String, f64)]) {
    hits.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

/// Ranked results for a set of queries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFile {
    pub tag: String,
    rankings: BTreeMap<String, Vec<(String, f64)>>,
}

impl RunFile {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            rankings: BTreeMap::new(),
        }
    }

    /// Adds a ranking that is already in rank order.
    ///
    /// Fails if a document repeats, a score is NaN, or scores increase.
    pub fn insert_ranked(&mut self, query_id: &str, ranking: Vec<(String, f64)>) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (i, (doc, score)) in ranking.iter().enumerate() {
            if score.is_nan() {
                return Err(Error::NonFinite { stage: "run scores" });
            }
            if !seen.insert(doc.as_str()) {
                return Err(Error::DuplicateId {
                    kind: "run document",
                    id: format!("{query_id}/{doc}"),
                });
            }
            if i > 0 && ranking[i - 1].1 < *score {
                return Err(Error::InvalidConfig(format!(
                    "run scores for query {query_id} increase at rank {}",
                    i + 1
                )));
            }
        }
        if self.rankings.contains_key(query_id) {
            return Err(Error::DuplicateId {
                kind: "run query",
                id: query_id.into(),
            });
        }
        self.rankings.insert(query_id.into(), ranking);
        Ok(())
    }

    /// Adds a ranking from unordered scores, sorting by score then id.
    pub fn insert_scores(&mut self, query_id: &str, mut scores: Vec<(String, f64)>) -> Result<()> {
        sort_by_score_then_id(&mut scores);
        self.insert_ranked(query_id, scores)
    }

    /// Adds an empty ranking for a query the run does not mention yet, so
    /// that it is evaluated (and scores 0) rather than silently dropped.
    pub fn ensure_query(&mut self, query_id: &str) {
        self.rankings.entry(query_id.into()).or_default();
    }

    pub fn ranking(&self, query_id: &str) -> Option<&[(String, f64)]> {
        self.rankings.get(query_id).map(Vec::as_slice)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.rankings.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[(String, f64)])> {
        self.rankings.iter().map(|(q, r)| (q.as_str(), r.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.rankings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rankings.is_empty()
    }

    /// Keeps only the first `k` documents of every ranking.
    pub fn truncate(&mut self, k: usize) {
        for r in self.rankings.values_mut() {
            r.truncate(k);
        }
    }
}

/// Document score as the maximum over its scored passages.
pub fn maxp_aggregate<'a, I>(passage_scores: I, doc_of: &BTreeMap<String, String>) -> Result<BTreeMap<String, f64>>
where
    I: IntoIterator<Item = (&'a str, f64)>,
{
    let mut docs: BTreeMap<String, f64> = BTreeMap::new();
    for (pid, score) in passage_scores {
        let doc = doc_of.get(pid).ok_or_else(|| Error::UnknownId {
            kind: "passage",
            id: pid.into(),
        })?;
        docs.entry(doc.clone())
            .and_modify(|s| *s = s.max(score))
            .or_insert(score);
    }
    Ok(docs)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
    /// Queries in the run that have no judgments at all.
    pub flagged: Vec<String>,
    /// Queries left out of the mean.
    pub excluded: Vec<String>,
}

impl MetricReport {
    fn finish(per_query: BTreeMap<String, f64>, flagged: Vec<String>, excluded: Vec<String>) -> Self {
        let mean = if per_query.is_empty() {
            0.0
        } else {
            per_query.values().sum::<f64>() / per_query.len() as f64
        };
        Self {
            per_query,
            mean,
            flagged,
            excluded,
        }
    }
}

fn check_depth(k: usize) -> Result<()> {
    if k == 0 {
        Err(Error::InvalidConfig("metric cutoff must be at least 1".into()))
    } else {
        Ok(())
    }
}

fn discount(rank0: usize) -> f64 {
    1.0 / libm::log2(rank0 as f64 + 2.0)
}

/// Normalized discounted cumulative gain with linear gain.
pub fn ndcg_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<MetricReport> {
    check_depth(k)?;
    let mut per_query = BTreeMap::new();
    let mut flagged = Vec::new();
    for (qid, ranking) in run.iter() {
        if !qrels.contains_query(qid) {
            flagged.push(qid.into());
        }
        let dcg: f64 = ranking
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, (doc, _))| f64::from(qrels.grade(qid, doc).unwrap_or(0)) * discount(i))
            .sum();
        let mut ideal: Vec<u32> = qrels.relevant(qid).map(|(_, g)| g).collect();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg: f64 = ideal
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &g)| f64::from(g) * discount(i))
            .sum();
        per_query.insert(qid.into(), if idcg > 0.0 { dcg / idcg } else { 0.0 });
    }
    Ok(MetricReport::finish(per_query, flagged, Vec::new()))
}

/// Fraction of relevant documents retrieved in the top `k`.
pub fn recall_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<MetricReport> {
    check_depth(k)?;
    let mut per_query = BTreeMap::new();
    let mut flagged = Vec::new();
    let mut excluded = Vec::new();
    for (qid, ranking) in run.iter() {
        if !qrels.contains_query(qid) {
            flagged.push(qid.into());
        }
        let relevant = qrels.relevant(qid).count();
        if relevant == 0 {
            excluded.push(qid.into());
            continue;
        }
        let found = ranking
            .iter()
            .take(k)
            .filter(|(doc, _)| qrels.grade(qid, doc).is_some_and(|g| g > 0))
            .count();
        per_query.insert(qid.into(), found as f64 / relevant as f64);
    }
    Ok(MetricReport::finish(per_query, flagged, excluded))
}

/// Fraction of the top `k` that carries any judgment, grade 0 included.
///
/// A ranking shorter than `k` is divided by its own length; an empty
/// ranking scores 0.
pub fn judged_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<MetricReport> {
    check_depth(k)?;
    let mut per_query = BTreeMap::new();
    let mut flagged = Vec::new();
    for (qid, ranking) in run.iter() {
        if !qrels.contains_query(qid) {
            flagged.push(qid.into());
        }
        let depth = k.min(ranking.len());
        let judged = ranking
            .iter()
            .take(depth)
            .filter(|(doc, _)| qrels.grade(qid, doc).is_some())
            .count();
        per_query.insert(qid.into(), if depth == 0 { 0.0 } else { judged as f64 / depth as f64 });
    }
    Ok(MetricReport::finish(per_query, flagged, Vec::new()))
}

/// Rescores the top `depth` documents of every query with `scorer`.
///
/// The head is re-sorted by the new score (stable, so ties keep their
/// first-stage order). The tail keeps its order and is shifted down when
/// needed so that no tail score exceeds the lowest head score.
pub fn rerank<F>(first_stage: &RunFile, depth: usize, mut scorer: F) -> Result<RunFile>
where
    F: FnMut(&str, &str) -> core::result::Result<f64, String>,
{
    if depth == 0 {
        return Err(Error::InvalidConfig("rerank depth must be at least 1".into()));
    }
    let mut out = RunFile::new(first_stage.tag.clone());
    for (qid, ranking) in first_stage.iter() {
        let cut = depth.min(ranking.len());
        let mut head = Vec::with_capacity(cut);
        for (doc, _) in &ranking[..cut] {
            let s = scorer(qid, doc).map_err(|message| Error::Scorer {
                query_id: qid.into(),
                message,
            })?;
            if !s.is_finite() {
                return Err(Error::Scorer {
                    query_id: qid.into(),
                    message: format!("non-finite score {s} for {doc}"),
                });
            }
            head.push((doc.clone(), s));
        }
        head.sort_by(|a, b| b.1.total_cmp(&a.1));
        let tail = &ranking[cut..];
        if let (Some(&(_, low)), Some((_, first))) = (head.last(), tail.first()) {
            let shift = (low - first).min(0.0);
            // the clamp absorbs rounding in `first + (low - first)`
            head.extend(tail.iter().map(|(d, s)| (d.clone(), (s + shift).min(low))));
        } else {
            head.extend(tail.iter().cloned());
        }
        out.insert_ranked(qid, head)?;
    }
    Ok(out)
}
