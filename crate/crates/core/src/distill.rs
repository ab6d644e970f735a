//! Distillation across languages: language routing, candidate selection,
//! teacher scoring, per-epoch candidate sampling, and the two training
//! loops (KL distillation and the Translate-Train cross-entropy baseline).
//!
//! Each stage reads text in its own language pair. Everything the training
//! loops consume is computed ahead of time, so they only look it up.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::corpus::{LanguageTag, Passage, Qrels, Query};
use crate::encoder::{
    backprop_logits, cross_entropy_from_logits, kl_from_logits, EncoderParams, LossConfig,
    ParamTensors,
};
use crate::error::{Error, Result};
use crate::eval::sort_by_score_then_id;
use crate::lexicon::{translate_tokens, BilingualLexicon, MtNoise};
use crate::optim::{AdamW, AdamWConfig};
use crate::rng;
use crate::sparse::SparseIndex;

/// Which language each pipeline stage reads.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LanguageConfig {
    /// Language of the original training queries and passages.
    pub training: LanguageTag,
    /// Student query language.
    pub query: LanguageTag,
    /// Student document language.
    pub document: LanguageTag,
    /// (query, passage) languages given to the passage selector.
    pub selector: (LanguageTag, LanguageTag),
    /// (query, passage) languages given to the teacher.
    pub scorer: (LanguageTag, LanguageTag),
    #[cfg_attr(feature = "serde", serde(default = "default_candidate_k"))]
    pub candidate_k: usize,
}

fn default_candidate_k() -> usize {
    50
}

impl LanguageConfig {
    /// English-style monolingual training with a CLIR student: selector and
    /// scorer read the training language, the student reads (training, target).
    pub fn translate_distill(training: LanguageTag, target: LanguageTag) -> Self {
        Self {
            query: training.clone(),
            document: target,
            selector: (training.clone(), training.clone()),
            scorer: (training.clone(), training.clone()),
            training,
            candidate_k: default_candidate_k(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let allowed = [&self.training, &self.query, &self.document];
        for tag in [
            &self.selector.0,
            &self.selector.1,
            &self.scorer.0,
            &self.scorer.1,
        ] {
            if !allowed.contains(&tag) {
                return Err(Error::InvalidConfig(format!(
                    "language `{tag}` is none of training/query/document"
                )));
            }
        }
        let foreign: BTreeSet<&LanguageTag> =
            allowed.into_iter().filter(|t| **t != self.training).collect();
        if foreign.len() > 1 {
            return Err(Error::InvalidConfig(
                "a single lexicon supports only one language besides the training language".into(),
            ));
        }
        if self.candidate_k < 2 {
            return Err(Error::InvalidConfig(format!(
                "candidate_k must be at least 2, got {}",
                self.candidate_k
            )));
        }
        Ok(())
    }
}

/// Produces the text of a query or passage in a requested language. Text in
/// the training language is returned as is; anything else is a seeded
/// one-best translation keyed by the record id.
#[derive(Debug, Clone)]
pub struct Translator<'a> {
    pub training: &'a LanguageTag,
    pub lexicon: &'a BilingualLexicon,
    pub noise: MtNoise,
    pub seed: u64,
}

impl Translator<'_> {
    pub fn tokens(&self, id: &str, tokens: &[String], lang: &LanguageTag) -> Vec<String> {
        if lang == self.training {
            return tokens.to_vec();
        }
        let seed = rng::derive_seed(self.seed, &[lang.as_str().as_bytes(), id.as_bytes()]);
        translate_tokens(tokens, self.lexicon, self.noise, seed)
    }

    pub fn query(&self, q: &Query, lang: &LanguageTag) -> Query {
        Query {
            id: q.id.clone(),
            tokens: self.tokens(&q.id, &q.tokens, lang),
            language: lang.clone(),
        }
    }

    pub fn passage(&self, p: &Passage, lang: &LanguageTag) -> Passage {
        Passage {
            tokens: self.tokens(&p.id, &p.tokens, lang),
            language: lang.clone(),
            ..p.clone()
        }
    }
}

/// Scores every passage of a fixed collection for a query.
pub trait PassageSelector {
    fn passage_ids(&self) -> &[String];
    /// One score per passage, aligned with [`passage_ids`](Self::passage_ids).
    fn score_all(&self, query: &[String]) -> core::result::Result<Vec<f64>, String>;
}

impl PassageSelector for SparseIndex {
    fn passage_ids(&self) -> &[String] {
        SparseIndex::passage_ids(self)
    }

    fn score_all(&self, query: &[String]) -> core::result::Result<Vec<f64>, String> {
        Ok(SparseIndex::score_all(self, query))
    }
}

/// Ordered candidate passages per query.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CandidateSet {
    by_query: BTreeMap<String, Vec<String>>,
}

impl CandidateSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets a query's list; rejects duplicate passages.
    pub fn insert(&mut self, query_id: &str, passages: Vec<String>) -> Result<()> {
        let mut seen = BTreeSet::new();
        for p in &passages {
            if !seen.insert(p.as_str()) {
                return Err(Error::DuplicateId {
                    kind: "candidate passage",
                    id: format!("{query_id}/{p}"),
                });
            }
        }
        if self.by_query.insert(query_id.to_string(), passages).is_some() {
            return Err(Error::DuplicateId {
                kind: "candidate query",
                id: query_id.to_string(),
            });
        }
        Ok(())
    }

    pub fn get(&self, query_id: &str) -> Option<&[String]> {
        self.by_query.get(query_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.by_query.iter().map(|(q, ps)| (q.as_str(), ps.as_slice()))
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.by_query.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.by_query.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_query.is_empty()
    }
}

/// Top `k` passages for one query: every selected score is at least every
/// unselected score, ties broken by passage id ascending.
pub fn select_for_query<S: PassageSelector + ?Sized>(
    selector: &S,
    query: &Query,
    k: usize,
) -> Result<Vec<String>> {
    let scores = selector.score_all(&query.tokens).map_err(|message| Error::Selector {
        query_id: query.id.clone(),
        message,
    })?;
    let ids = selector.passage_ids();
    if scores.len() != ids.len() {
        return Err(Error::Selector {
            query_id: query.id.clone(),
            message: format!("{} scores for {} passages", scores.len(), ids.len()),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Selector {
            query_id: query.id.clone(),
            message: "NaN score".into(),
        });
    }
    let mut ranked: Vec<(String, f64)> = ids.iter().cloned().zip(scores).collect();
    sort_by_score_then_id(&mut ranked);
    ranked.truncate(k);
    Ok(ranked.into_iter().map(|(id, _)| id).collect())
}

/// Runs the selector for every query (already in the selector's query language).
pub fn select_candidates<'q, S, I>(selector: &S, queries: I, k: usize) -> Result<CandidateSet>
where
    S: PassageSelector + ?Sized,
    I: IntoIterator<Item = &'q Query>,
{
    let mut set = CandidateSet::new();
    for q in queries {
        let chosen = select_for_query(selector, q, k)?;
        set.insert(&q.id, chosen)?;
    }
    Ok(set)
}

/// Cached teacher scores s(q, p).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TeacherScores {
    scores: BTreeMap<(String, String), f64>,
}

impl TeacherScores {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: &str, passage_id: &str, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::NonFinite { stage: "teacher score" });
        }
        let key = (query_id.to_string(), passage_id.to_string());
        if self.scores.insert(key, score).is_some() {
            return Err(Error::DuplicateId {
                kind: "teacher score pair",
                id: format!("({query_id}, {passage_id})"),
            });
        }
        Ok(())
    }

    pub fn get(&self, query_id: &str, passage_id: &str) -> Option<f64> {
        // BTreeMap<(String, String)> cannot be queried by (&str, &str) directly
        self.scores
            .get(&(query_id.to_string(), passage_id.to_string()))
            .copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.scores
            .iter()
            .map(|((q, p), &s)| (q.as_str(), p.as_str(), s))
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Fails on the first candidate pair without a score.
    pub fn check_covers(&self, candidates: &CandidateSet) -> Result<()> {
        for (q, ps) in candidates.iter() {
            for p in ps {
                if self.get(q, p).is_none() {
                    return Err(Error::MissingTeacherScore {
                        query_id: q.to_string(),
                        passage_id: p.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct OracleTeacherConfig {
    pub scale: f64,
    /// Penalty per unit fraction of query terms missing from the passage.
    pub term_loss_penalty: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for OracleTeacherConfig {
    fn default() -> Self {
        Self {
            scale: 1.0,
            term_loss_penalty: 1.0,
            noise_sd: 0.0,
            seed: 0,
        }
    }
}

/// Judgment-backed teacher: `scale * grade - λ * lost + noise`, where `lost`
/// is the fraction of query terms with no translation present in the
/// passage text the teacher reads.
#[derive(Debug, Clone)]
pub struct OracleTeacher<'a> {
    pub qrels: &'a Qrels,
    pub lexicon: &'a BilingualLexicon,
    pub training: &'a LanguageTag,
    pub cfg: OracleTeacherConfig,
}

impl<'a> OracleTeacher<'a> {
    pub fn new(
        qrels: &'a Qrels,
        lexicon: &'a BilingualLexicon,
        training: &'a LanguageTag,
        cfg: OracleTeacherConfig,
    ) -> Result<Self> {
        if !(cfg.scale > 0.0) || !(cfg.term_loss_penalty >= 0.0) || !(cfg.noise_sd >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "teacher needs scale > 0 and non-negative penalty/noise, got {cfg:?}"
            )));
        }
        Ok(Self {
            qrels,
            lexicon,
            training,
            cfg,
        })
    }

    /// Fraction of query tokens none of whose renderings in the passage
    /// language occur in the passage.
    pub fn lost_fraction(&self, query: &Query, passage: &[String], passage_lang: &LanguageTag) -> f64 {
        let present: BTreeSet<&str> = passage.iter().map(String::as_str).collect();
        let forward = query.language == *self.training && *passage_lang != *self.training;
        let backward = query.language != *self.training && *passage_lang == *self.training;
        let lost = query
            .tokens
            .iter()
            .filter(|t| {
                let t = t.as_str();
                let found = if forward {
                    match self.lexicon.translations(t) {
                        Some(row) => row.iter().any(|(e, _)| present.contains(e.as_str())),
                        None => present.contains(t),
                    }
                } else if backward {
                    let mut sources = self
                        .lexicon
                        .triples()
                        .filter(|(_, e, _)| *e == t)
                        .map(|(s, _, _)| s)
                        .peekable();
                    if sources.peek().is_none() {
                        present.contains(t)
                    } else {
                        sources.any(|s| present.contains(s))
                    }
                } else {
                    present.contains(t)
                };
                !found
            })
            .count();
        lost as f64 / query.tokens.len().max(1) as f64
    }

    pub fn score(&self, query: &Query, passage: &Passage) -> f64 {
        let grade = self.qrels.grade(&query.id, &passage.doc_id).unwrap_or(0);
        let lost = self.lost_fraction(query, &passage.tokens, &passage.language);
        let mut s = self.cfg.scale * f64::from(grade) - self.cfg.term_loss_penalty * lost;
        if self.cfg.noise_sd > 0.0 {
            let mut r = rng::rng_for(
                self.cfg.seed,
                &[b"teacher", query.id.as_bytes(), passage.id.as_bytes()],
            );
            s += self.cfg.noise_sd * rng::standard_normal(&mut r);
        }
        s
    }
}

/// Scores every candidate pair. `queries` and `passages` must already be
/// in the scorer's languages.
pub fn oracle_teacher(
    teacher: &OracleTeacher<'_>,
    candidates: &CandidateSet,
    queries: &BTreeMap<String, Query>,
    passages: &BTreeMap<String, Passage>,
) -> Result<TeacherScores> {
    let mut out = TeacherScores::new();
    for (qid, ps) in candidates.iter() {
        let q = lookup(queries, "query", qid)?;
        for pid in ps {
            let p = lookup(passages, "passage", pid)?;
            out.insert(qid, pid, teacher.score(q, p))?;
        }
    }
    Ok(out)
}

fn lookup<'m, T>(map: &'m BTreeMap<String, T>, kind: &'static str, id: &str) -> Result<&'m T> {
    map.get(id).ok_or_else(|| Error::UnknownId {
        kind,
        id: id.to_string(),
    })
}

/// Uniform sample without replacement of `min(m, |candidates|)` items, in
/// random order, determined by `(seed, epoch, query_id)`.
pub fn sample_for_query<'c>(
    candidates: &'c [String],
    m: usize,
    epoch: usize,
    seed: u64,
    query_id: &str,
) -> Vec<&'c String> {
    let mut r = rng::rng_for(
        seed,
        &[b"sample", &(epoch as u64).to_le_bytes(), query_id.as_bytes()],
    );
    let n = m.min(candidates.len());
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut r, candidates.len(), n).into_vec();
    picked.shuffle(&mut r);
    picked.into_iter().map(|i| &candidates[i]).collect()
}

pub fn sample_batch(
    candidates: &CandidateSet,
    m: usize,
    epoch: usize,
    seed: u64,
) -> BTreeMap<String, Vec<String>> {
    candidates
        .iter()
        .map(|(q, ps)| {
            let picked = sample_for_query(ps, m, epoch, seed, q).into_iter().cloned().collect();
            (q.to_string(), picked)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub batch_queries: usize,
    pub passages_per_query: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_queries: 64,
            passages_per_query: 6,
            epochs: 20,
            seed: 0,
            optimizer: AdamWConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        if self.batch_queries == 0 || self.passages_per_query < 2 {
            return Err(Error::InvalidConfig(
                "batch_queries >= 1 and passages_per_query >= 2 required".into(),
            ));
        }
        let positive = [
            o.learning_rate,
            o.beta1,
            o.beta2,
            o.eps,
            self.loss.student_temperature,
            self.loss.teacher_temperature,
        ];
        if positive.iter().any(|&x| !(x > 0.0)) || !(o.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(
                "rates and temperatures must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub batches: usize,
    /// Queries without a usable training example this epoch.
    pub skipped_queries: usize,
    pub max_update_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    pub fn first_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.mean_loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }
}

/// One training example: passages for a query and what to fit them to.
struct Example<'a> {
    query: &'a Query,
    passages: Vec<&'a [String]>,
    target: Target,
}

enum Target {
    Teacher(Vec<f64>),
    Positive(usize),
}

/// Shared epoch/batch/optimizer loop. `example` builds the example for a
/// query in an epoch, or `None` to skip it.
fn run_training<'a, F>(
    mut params: EncoderParams,
    query_ids: Vec<&'a str>,
    cfg: &TrainConfig,
    mut example: F,
) -> Result<(EncoderParams, TrainingLog)>
where
    F: FnMut(&'a str, usize) -> Result<Option<Example<'a>>>,
{
    cfg.validate()?;
    let mut opt = AdamW::new(cfg.optimizer, &params.tensors);
    let mut grads = ParamTensors::zeros_like(&params.tensors);
    let mut log = TrainingLog::default();
    for epoch in 0..cfg.epochs {
        let mut order = query_ids.clone();
        let mut r = rng::rng_for(cfg.seed, &[b"epoch-order", &(epoch as u64).to_le_bytes()]);
        order.shuffle(&mut r);

        let mut loss_sum = 0.0;
        let mut counted = 0usize;
        let mut batches = 0usize;
        let mut skipped = 0usize;
        let mut max_update: f64 = 0.0;
        for (b, batch) in order.chunks(cfg.batch_queries).enumerate() {
            let mut examples = Vec::with_capacity(batch.len());
            for &qid in batch {
                match example(qid, epoch)? {
                    Some(ex) => examples.push(ex),
                    None => skipped += 1,
                }
            }
            if examples.is_empty() {
                continue;
            }
            grads.fill_zero();
            let weight = 1.0 / examples.len() as f64;
            let mut batch_loss = 0.0;
            // sequential, in batch order, so the reduction is reproducible
            for ex in &examples {
                let loss = backprop_logits(
                    &params,
                    &ex.query.tokens,
                    &ex.passages,
                    &mut grads,
                    weight,
                    |z| match &ex.target {
                        Target::Teacher(t) => kl_from_logits(z, t, &cfg.loss),
                        Target::Positive(i) => {
                            cross_entropy_from_logits(z, *i, cfg.loss.student_temperature)
                        }
                    },
                )
                .map_err(|e| Error::Diverged {
                    epoch,
                    batch: b,
                    detail: format!("query {}: {e}", ex.query.id),
                })?;
                batch_loss += loss;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    detail: format!("batch loss {batch_loss} over {} queries", examples.len()),
                });
            }
            loss_sum += batch_loss;
            counted += examples.len();
            batches += 1;
            max_update = max_update.max(opt.step(&mut params.tensors, &grads));
        }
        log.epochs.push(EpochLog {
            epoch,
            mean_loss: if counted == 0 { 0.0 } else { loss_sum / counted as f64 },
            batches,
            skipped_queries: skipped,
            max_update_norm: max_update,
        });
    }
    Ok((params, log))
}

/// Candidates whose text survived translation with at least one token.
fn non_empty(ids: &[String], passages: &BTreeMap<String, Passage>) -> Vec<String> {
    ids.iter()
        .filter(|p| !passages[p.as_str()].tokens.is_empty())
        .cloned()
        .collect()
}

fn check_passages(candidates: &CandidateSet, passages: &BTreeMap<String, Passage>) -> Result<()> {
    for (_, ps) in candidates.iter() {
        for p in ps {
            lookup(passages, "passage", p)?;
        }
    }
    Ok(())
}

/// KL distillation of teacher scores into the student.
///
/// `queries` and `passages` are the student-language views; only queries
/// that have candidates are trained on.
pub fn train_student(
    params_init: EncoderParams,
    queries: &BTreeMap<String, Query>,
    passages: &BTreeMap<String, Passage>,
    candidates: &CandidateSet,
    teacher: &TeacherScores,
    cfg: &TrainConfig,
) -> Result<(EncoderParams, TrainingLog)> {
    teacher.check_covers(candidates)?;
    check_passages(candidates, passages)?;
    let mut query_ids = Vec::new();
    let mut usable: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for (qid, ps) in candidates.iter() {
        lookup(queries, "query", qid)?;
        query_ids.push(qid);
        usable.insert(qid, non_empty(ps, passages));
    }
    run_training(params_init, query_ids, cfg, |qid, epoch| {
        if queries[qid].tokens.is_empty() {
            return Ok(None);
        }
        let picked = sample_for_query(&usable[qid], cfg.passages_per_query, epoch, cfg.seed, qid);
        if picked.len() < 2 {
            return Ok(None);
        }
        let mut texts = Vec::with_capacity(picked.len());
        let mut scores = Vec::with_capacity(picked.len());
        for pid in picked {
            texts.push(passages[pid.as_str()].tokens.as_slice());
            scores.push(teacher.get(qid, pid).expect("coverage checked above"));
        }
        Ok(Some(Example {
            query: &queries[qid],
            passages: texts,
            target: Target::Teacher(scores),
        }))
    })
}

/// Cross-entropy baseline: one judged-relevant passage against `m - 1`
/// negatives sampled from the candidates that are not relevant.
pub fn train_translate_train(
    params_init: EncoderParams,
    queries: &BTreeMap<String, Query>,
    passages: &BTreeMap<String, Passage>,
    candidates: &CandidateSet,
    qrels: &Qrels,
    cfg: &TrainConfig,
) -> Result<(EncoderParams, TrainingLog)> {
    check_passages(candidates, passages)?;
    let mut by_doc: BTreeMap<&str, Vec<&String>> = BTreeMap::new();
    for (pid, p) in passages {
        by_doc.entry(p.doc_id.as_str()).or_default().push(pid);
    }
    let mut positives: BTreeMap<&str, Vec<&String>> = BTreeMap::new();
    let mut negatives: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    let mut query_ids = Vec::new();
    for (qid, ps) in candidates.iter() {
        lookup(queries, "query", qid)?;
        query_ids.push(qid);
        let pos: Vec<&String> = qrels
            .relevant(qid)
            .flat_map(|(d, _)| by_doc.get(d).into_iter().flatten().copied())
            .filter(|p| !passages[p.as_str()].tokens.is_empty())
            .collect();
        let neg = non_empty(ps, passages)
            .into_iter()
            .filter(|p| {
                let doc = passages[p.as_str()].doc_id.as_str();
                !qrels.grade(qid, doc).is_some_and(|g| g > 0)
            })
            .collect();
        positives.insert(qid, pos);
        negatives.insert(qid, neg);
    }
    let m = cfg.passages_per_query;
    run_training(params_init, query_ids, cfg, |qid, epoch| {
        let pos = &positives[qid];
        let neg = &negatives[qid];
        if pos.is_empty() || neg.is_empty() || queries[qid].tokens.is_empty() {
            return Ok(None);
        }
        let mut r = rng::rng_for(
            cfg.seed,
            &[b"positive", &(epoch as u64).to_le_bytes(), qid.as_bytes()],
        );
        let positive = pos.choose(&mut r).expect("non-empty");
        let mut texts = Vec::with_capacity(m);
        texts.push(passages[positive.as_str()].tokens.as_slice());
        for pid in sample_for_query(neg, m - 1, epoch, cfg.seed, qid) {
            texts.push(passages[pid.as_str()].tokens.as_slice());
        }
        Ok(Some(Example {
            query: &queries[qid],
            passages: texts,
            target: Target::Positive(0),
        }))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{student_logits, Vocab};
    use crate::lexicon::WeightedBag;
    use crate::sparse::build_sparse_index;

    fn tag(s: &str) -> LanguageTag {
        LanguageTag::new(s).unwrap()
    }

    fn query(id: &str, toks: &[&str]) -> Query {
        Query {
            id: id.into(),
            tokens: toks.iter().map(|t| t.to_string()).collect(),
            language: tag("src"),
        }
    }

    fn passage(id: &str, doc: &str, toks: &[&str]) -> Passage {
        Passage {
            id: id.into(),
            doc_id: doc.into(),
            offset: 0,
            tokens: toks.iter().map(|t| t.to_string()).collect(),
            language: tag("src"),
        }
    }

    #[test]
    fn language_config_validation() {
        let mut cfg = LanguageConfig::translate_distill(tag("src"), tag("tgt"));
        assert!(cfg.validate().is_ok());
        cfg.scorer.1 = tag("xx");
        assert!(cfg.validate().is_err());
        let mut cfg = LanguageConfig::translate_distill(tag("src"), tag("tgt"));
        cfg.candidate_k = 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn whole_collection_in_score_order() {
        let idx = build_sparse_index(alloc::vec![
            ("p1", WeightedBag::from_tokens(&["a"])),
            ("p2", WeightedBag::from_tokens(&["a", "a", "b"])),
            ("p3", WeightedBag::from_tokens(&["c"])),
        ])
        .unwrap();
        let q = query("q", &["a", "b"]);
        let got = select_for_query(&idx, &q, 3).unwrap();
        assert_eq!(got, ["p2", "p1", "p3"]);
    }

    #[test]
    fn empty_query_selects_id_prefix() {
        let idx = build_sparse_index(
            ["p3", "p1", "p2", "p0"].map(|id| (id, WeightedBag::from_tokens(&["a"]))),
        )
        .unwrap();
        let q = Query {
            tokens: alloc::vec![],
            ..query("q", &["x"])
        };
        assert_eq!(select_for_query(&idx, &q, 2).unwrap(), ["p0", "p1"]);
    }

    struct Failing;
    impl PassageSelector for Failing {
        fn passage_ids(&self) -> &[String] {
            &[]
        }
        fn score_all(&self, _: &[String]) -> core::result::Result<Vec<f64>, String> {
            Err("boom".into())
        }
    }

    #[test]
    fn selector_failure_names_query() {
        let err = select_candidates(&Failing, [&query("q7", &["a"])], 3).unwrap_err();
        assert!(matches!(err, Error::Selector { ref query_id, .. } if query_id == "q7"));
    }

    #[test]
    fn oracle_teacher_formula() {
        let mut qrels = Qrels::new();
        qrels.insert("q", "d", 2);
        let lex = BilingualLexicon::identity(["a", "b"]);
        let t_lang = tag("src");
        let q = query("q", &["a", "b"]);
        let p = passage("d#0", "d", &["a", "b"]);
        let t = OracleTeacher::new(&qrels, &lex, &t_lang, OracleTeacherConfig {
            term_loss_penalty: 0.0,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(t.score(&q, &p), 2.0);
        let t = OracleTeacher::new(&qrels, &lex, &t_lang, OracleTeacherConfig {
            scale: 1.5,
            term_loss_penalty: 1.0,
            ..Default::default()
        })
        .unwrap();
        let lost_all = passage("d#0", "d", &["z"]);
        assert_eq!(t.score(&q, &lost_all), 1.5 * 2.0 - 1.0);
        let half = passage("d#0", "d", &["a"]);
        assert_eq!(t.score(&q, &half), 3.0 - 0.5);
        // unjudged doc uses grade 0
        assert_eq!(t.score(&q, &passage("e#0", "e", &["a", "b"])), 0.0);
    }

    #[test]
    fn identity_lexicon_teacher_ignores_translation() {
        let mut qrels = Qrels::new();
        qrels.insert("q", "d", 1);
        let lex = BilingualLexicon::identity(["a", "b", "c"]);
        let (src, tgt) = (tag("src"), tag("tgt"));
        let tr = Translator {
            training: &src,
            lexicon: &lex,
            noise: MtNoise::NONE,
            seed: 5,
        };
        let teacher = OracleTeacher::new(&qrels, &lex, &src, OracleTeacherConfig::default()).unwrap();
        let q = query("q", &["a", "c"]);
        let p = passage("d#0", "d", &["a", "b"]);
        let translated = tr.passage(&p, &tgt);
        assert_eq!(teacher.score(&q, &p), teacher.score(&q, &translated));
    }

    #[test]
    fn cross_language_lost_uses_lexicon_image() {
        let qrels = Qrels::new();
        let lex = BilingualLexicon::from_triples(
            [("x", "a", 0.6), ("x", "b", 0.4), ("y", "c", 1.0)],
            1e-9,
            false,
        )
        .unwrap();
        let (src, tgt) = (tag("src"), tag("tgt"));
        let teacher = OracleTeacher::new(&qrels, &lex, &src, OracleTeacherConfig::default()).unwrap();
        let q = query("q", &["x", "y"]);
        assert_eq!(teacher.lost_fraction(&q, &["b".to_string()], &tgt), 0.5);
        let q_tgt = Query {
            tokens: alloc::vec!["b".into(), "c".into()],
            language: tgt.clone(),
            ..q.clone()
        };
        assert_eq!(teacher.lost_fraction(&q_tgt, &["x".to_string()], &src), 0.5);
    }

    #[test]
    fn sampling_is_deterministic_and_complete() {
        let cands: Vec<String> = (0..6).map(|i| alloc::format!("p{i}")).collect();
        let a = sample_for_query(&cands, 6, 0, 1, "q");
        let b = sample_for_query(&cands, 6, 0, 1, "q");
        assert_eq!(a, b);
        let mut sorted: Vec<_> = a.iter().map(|s| s.as_str()).collect();
        sorted.sort();
        assert_eq!(sorted, ["p0", "p1", "p2", "p3", "p4", "p5"]);
        let differs = (1..10).any(|e| sample_for_query(&cands, 3, e, 1, "q") != sample_for_query(&cands, 3, 0, 1, "q"));
        assert!(differs);
    }

    #[test]
    fn sampling_frequencies_match_binomial() {
        let cands: Vec<String> = (0..50).map(|i| alloc::format!("p{i:02}")).collect();
        let epochs = 10_000;
        let mut counts = BTreeMap::new();
        for e in 0..epochs {
            for p in sample_for_query(&cands, 6, e, 42, "q") {
                *counts.entry(p.clone()).or_insert(0usize) += 1;
            }
        }
        let p = 6.0 / 50.0;
        let sigma = (p * (1.0 - p) / epochs as f64).sqrt();
        for c in &cands {
            let freq = counts.get(c).copied().unwrap_or(0) as f64 / epochs as f64;
            assert!((freq - p).abs() <= 3.0 * sigma, "{c}: {freq}");
        }
    }

    #[test]
    fn teacher_scores_reject_duplicates_and_nan() {
        let mut t = TeacherScores::new();
        t.insert("q", "p", 1.0).unwrap();
        assert!(t.insert("q", "p", 2.0).is_err());
        assert!(t.insert("q", "r", f64::NAN).is_err());
        let mut c = CandidateSet::new();
        c.insert("q", alloc::vec!["p".into(), "x".into()]).unwrap();
        assert!(matches!(
            t.check_covers(&c),
            Err(Error::MissingTeacherScore { ref passage_id, .. }) if passage_id == "x"
        ));
    }

    fn fixture() -> (BTreeMap<String, Query>, BTreeMap<String, Passage>, CandidateSet, Qrels) {
        let mut queries = BTreeMap::new();
        let mut passages = BTreeMap::new();
        let mut cands = CandidateSet::new();
        let mut qrels = Qrels::new();
        let words = ["a", "b", "c", "d", "e", "f", "g", "h"];
        for p in 0..8 {
            let toks = [words[p], words[(p + 1) % 8], words[(p + 3) % 8]];
            passages.insert(alloc::format!("d{p}#0"), passage(&alloc::format!("d{p}#0"), &alloc::format!("d{p}"), &toks));
        }
        for q in 0..6 {
            let id = alloc::format!("q{q}");
            queries.insert(id.clone(), query(&id, &[words[q], words[(q + 2) % 8]]));
            cands
                .insert(&id, passages.keys().cloned().collect())
                .unwrap();
            qrels.insert(&id, &alloc::format!("d{q}"), 2);
            qrels.insert(&id, &alloc::format!("d{}", (q + 1) % 8), 1);
        }
        (queries, passages, cands, qrels)
    }

    fn init() -> EncoderParams {
        EncoderParams::init(Vocab::new(["a", "b", "c", "d", "e", "f", "g", "h"]), 8, 4, 3).unwrap()
    }

    #[test]
    fn self_teacher_leaves_params_unchanged() {
        let (queries, passages, cands, _) = fixture();
        let params = init();
        let mut teacher = TeacherScores::new();
        for (qid, ps) in cands.iter() {
            let texts: Vec<&[String]> = ps.iter().map(|p| passages[p].tokens.as_slice()).collect();
            let z = student_logits(&params, &queries[qid].tokens, &texts).unwrap();
            for (p, s) in ps.iter().zip(z) {
                teacher.insert(qid, p, s).unwrap();
            }
        }
        let cfg = TrainConfig {
            batch_queries: 2,
            epochs: 3,
            optimizer: AdamWConfig {
                weight_decay: 0.0,
                ..AdamWConfig::default()
            },
            ..TrainConfig::default()
        };
        let (trained, log) = train_student(params.clone(), &queries, &passages, &cands, &teacher, &cfg).unwrap();
        for e in &log.epochs {
            assert!(e.mean_loss.abs() < 1e-12);
            assert!(e.max_update_norm < 1e-6, "{}", e.max_update_norm);
        }
        let mut diff = trained.tensors.clone();
        diff.add_scaled(&params.tensors, -1.0);
        assert!(diff.norm() < 1e-5);
    }

    #[test]
    fn distillation_reduces_loss_and_is_reproducible() {
        let (queries, passages, cands, qrels) = fixture();
        let lex = BilingualLexicon::identity(["a"]);
        let src = tag("src");
        let teacher = OracleTeacher::new(&qrels, &lex, &src, OracleTeacherConfig {
            scale: 2.0,
            ..Default::default()
        })
        .unwrap();
        let scores = oracle_teacher(&teacher, &cands, &queries, &passages).unwrap();
        let cfg = TrainConfig {
            batch_queries: 3,
            epochs: 30,
            passages_per_query: 8,
            optimizer: AdamWConfig {
                learning_rate: 0.05,
                ..AdamWConfig::default()
            },
            ..TrainConfig::default()
        };
        let (_, log) = train_student(init(), &queries, &passages, &cands, &scores, &cfg).unwrap();
        assert!(log.final_loss().unwrap() < log.first_loss().unwrap());
        let (_, again) = train_student(init(), &queries, &passages, &cands, &scores, &cfg).unwrap();
        assert_eq!(log, again);
    }

    #[test]
    fn translate_train_runs_and_skips_queries_without_positives() {
        let (queries, passages, cands, mut qrels) = fixture();
        qrels.retain_queries(|q| q != "q0");
        let cfg = TrainConfig {
            batch_queries: 4,
            epochs: 15,
            optimizer: AdamWConfig {
                learning_rate: 0.05,
                ..AdamWConfig::default()
            },
            ..TrainConfig::default()
        };
        let (_, log) = train_translate_train(init(), &queries, &passages, &cands, &qrels, &cfg).unwrap();
        assert!(log.epochs.iter().all(|e| e.skipped_queries == 1));
        assert!(log.final_loss().unwrap() < log.first_loss().unwrap());
        let (_, again) = train_translate_train(init(), &queries, &passages, &cands, &qrels, &cfg).unwrap();
        assert_eq!(log, again);
    }

    #[test]
    fn missing_teacher_pair_is_hard_error() {
        let (queries, passages, cands, _) = fixture();
        let err = train_student(init(), &queries, &passages, &cands, &TeacherScores::new(), &TrainConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::MissingTeacherScore { .. }));
    }
}
