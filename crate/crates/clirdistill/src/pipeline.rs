//! Staged, resumable pipeline.
//!
//! Stages run in a fixed order and communicate only through files under the
//! output directory:
//!
//! | stage | writes |
//! |---|---|
//! | corpus | `corpus/{documents,queries.train,queries.eval}.tsv`, `corpus/qrels.txt`, `corpus/lexicon.tsv` |
//! | translate | `translate/{passages,queries}.<lang>.tsv`, `translate/eval_{passages,queries}.tsv` |
//! | select | `select/candidates.tsv` |
//! | teach | `teach/teacher_scores.tsv` |
//! | train | `train/<model>.ckpt`, `train/<model>.log.tsv` |
//! | index | `index/<model>/` |
//! | search | `search/<model>.run`, `search/psq.run` |
//! | rerank | `rerank/rerank.run` |
//! | evaluate | `evaluate/{metrics,summary,compare}.tsv` |
//!
//! `manifest.json` records, per stage, a fingerprint of its configuration
//! and input checksums plus the checksum of every output. A stage is skipped
//! when its fingerprint is unchanged and its outputs are intact; once any
//! stage runs, every later stage runs too.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clirdistill_core::corpus::{window_document, Document, TextRecord};
use clirdistill_core::distill::{
    oracle_teacher, select_for_query, train_student, train_translate_train, CandidateSet, OracleTeacher,
    PassageSelector, TeacherScores, Translator,
};
use clirdistill_core::encoder::{encode, Vocab};
use clirdistill_core::eval::{maxp_aggregate, rerank, RunFile};
use clirdistill_core::index::{build_index, EncodedCollection, ExactSelector, PlaidIndex};
use clirdistill_core::lexicon::{psq_expand_document, PSQ_MAX_ALTERNATIVES, PSQ_MIN_PROB};
use clirdistill_core::sparse::{build_sparse_index, SparseIndex};
use clirdistill_core::synth::generate_synthetic_corpus;
use clirdistill_core::{BilingualLexicon, EncoderParams, LanguageTag, Passage, Qrels, Query, Role, WeightedBag};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::compare::{compare_runs, metric_reports, write_report};
use crate::config::{CorpusSource, Model, PipelineConfig, SelectorKind, TeacherKind};
use crate::digest::{sha256_file, sha256_hex};
use crate::error::{Error, Result};
use crate::{checkpoint, formats, index_store};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Corpus,
    Translate,
    Select,
    Teach,
    Train,
    Index,
    Search,
    Rerank,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Corpus,
        Stage::Translate,
        Stage::Select,
        Stage::Teach,
        Stage::Train,
        Stage::Index,
        Stage::Search,
        Stage::Rerank,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Corpus => "corpus",
            Stage::Translate => "translate",
            Stage::Select => "select",
            Stage::Teach => "teach",
            Stage::Train => "train",
            Stage::Index => "index",
            Stage::Search => "search",
            Stage::Rerank => "rerank",
            Stage::Evaluate => "evaluate",
        }
    }

    /// Stages whose outputs this one reads.
    fn upstream(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            Corpus => &[],
            Translate => &[Corpus],
            Select => &[Corpus, Translate],
            Teach => &[Corpus, Translate, Select],
            Train => &[Corpus, Translate, Select, Teach],
            Index => &[Translate, Train],
            Search => &[Corpus, Translate, Train, Index],
            Rerank => &[Corpus, Translate, Search],
            Evaluate => &[Corpus, Search, Rerank],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.replace('-', "_");
        let s = if s == "gen_corpus" { "corpus" } else { s.as_str() };
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageReport {
    pub stage: Stage,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub fingerprint: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub stages: BTreeMap<String, StageRecord>,
}

pub const MANIFEST: &str = "manifest.json";

impl Manifest {
    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| Error::invalid(&path, e.to_string()))
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(Error::io(&path))
    }
}

/// Relative artifact path with `/` separators, as stored in the manifest.
fn rel(path: &Path, root: &Path) -> String {
    let r = path.strip_prefix(root).unwrap_or(path);
    r.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(Error::io(dir))? {
        let path = entry.map_err(Error::io(dir))?.path();
        if path.is_dir() {
            out.extend(files_under(&path)?);
        } else {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub struct Pipeline {
    cfg: PipelineConfig,
    out: PathBuf,
    jobs: Option<usize>,
}

/// Paths of the text artifacts.
struct Layout {
    root: PathBuf,
}

impl Layout {
    fn p(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
    fn documents(&self) -> PathBuf {
        self.p("corpus/documents.tsv")
    }
    fn train_queries(&self) -> PathBuf {
        self.p("corpus/queries.train.tsv")
    }
    fn eval_queries_source(&self) -> PathBuf {
        self.p("corpus/queries.eval.tsv")
    }
    fn qrels(&self) -> PathBuf {
        self.p("corpus/qrels.txt")
    }
    fn lexicon(&self) -> PathBuf {
        self.p("corpus/lexicon.tsv")
    }
    fn passages(&self, lang: &str) -> PathBuf {
        self.p(&format!("translate/passages.{lang}.tsv"))
    }
    fn queries(&self, lang: &str) -> PathBuf {
        self.p(&format!("translate/queries.{lang}.tsv"))
    }
    fn eval_passages(&self) -> PathBuf {
        self.p("translate/eval_passages.tsv")
    }
    fn eval_queries(&self) -> PathBuf {
        self.p("translate/eval_queries.tsv")
    }
    fn candidates(&self) -> PathBuf {
        self.p("select/candidates.tsv")
    }
    fn teacher_scores(&self) -> PathBuf {
        self.p("teach/teacher_scores.tsv")
    }
    fn checkpoint(&self, m: Model) -> PathBuf {
        self.p(&format!("train/{}.ckpt", m.name()))
    }
    fn training_log(&self, m: Model) -> PathBuf {
        self.p(&format!("train/{}.log.tsv", m.name()))
    }
    fn index(&self, m: Model) -> PathBuf {
        self.p(&format!("index/{}", m.name()))
    }
    fn run(&self, name: &str) -> PathBuf {
        match name {
            "rerank" => self.p("rerank/rerank.run"),
            _ => self.p(&format!("search/{name}.run")),
        }
    }
}

fn by_id<T, F: Fn(&T) -> &str>(items: Vec<T>, id: F) -> BTreeMap<String, T> {
    items.into_iter().map(|x| (id(&x).to_string(), x)).collect()
}

impl Pipeline {
    /// Artifacts go to the config's output directory.
    pub fn new(cfg: PipelineConfig) -> Self {
        let out = cfg.output_dir();
        Self { cfg, out, jobs: None }
    }

    pub fn with_output(mut self, out: impl Into<PathBuf>) -> Self {
        self.out = out.into();
        self
    }

    /// Caps worker threads; `None` uses one per core. Output does not
    /// depend on this.
    pub fn with_jobs(mut self, jobs: Option<usize>) -> Self {
        self.jobs = jobs;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn output(&self) -> &Path {
        &self.out
    }

    fn layout(&self) -> Layout {
        Layout { root: self.out.clone() }
    }

    fn in_pool<T: Send>(&self, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs.unwrap_or(0))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(f)
    }

    /// Hash of the experiment definition. The output location is not part
    /// of it, so the same experiment written elsewhere hashes the same.
    pub fn config_hash(&self) -> String {
        let mut c = self.cfg.clone();
        c.output = PathBuf::new();
        sha256_hex(c.to_toml().as_bytes())
    }

    /// Runs every stage up to and including `through`, skipping stages that
    /// are up to date.
    pub fn run(&self, through: Stage) -> Result<Vec<StageReport>> {
        self.in_pool(|| {
            fs::create_dir_all(&self.out).map_err(Error::io(&self.out))?;
            let mut manifest = Manifest::load(&self.out)?.unwrap_or_default();
            manifest.config_sha256 = self.config_hash();
            let mut dirty = false;
            let mut reports = Vec::new();
            for stage in Stage::ALL.into_iter().filter(|s| *s <= through) {
                let (fingerprint, inputs) = self.fingerprint(stage, &manifest)?;
                let fresh = !dirty
                    && manifest
                        .stages
                        .get(stage.name())
                        .is_some_and(|r| r.fingerprint == fingerprint && self.outputs_intact(stage, r));
                if fresh {
                    reports.push(StageReport {
                        stage,
                        outcome: Outcome::Skipped,
                    });
                    continue;
                }
                let record = self.execute(stage, fingerprint, inputs)?;
                manifest.stages.insert(stage.name().to_string(), record);
                manifest.save(&self.out)?;
                dirty = true;
                reports.push(StageReport {
                    stage,
                    outcome: Outcome::Ran,
                });
            }
            manifest.save(&self.out)?;
            Ok(reports)
        })
    }

    /// Runs one stage unconditionally. Its upstream stages must have run.
    pub fn run_stage(&self, stage: Stage) -> Result<()> {
        self.in_pool(|| {
            let mut manifest = Manifest::load(&self.out)?.unwrap_or_default();
            manifest.config_sha256 = self.config_hash();
            let (fingerprint, inputs) = self.fingerprint(stage, &manifest)?;
            let record = self.execute(stage, fingerprint, inputs)?;
            manifest.stages.insert(stage.name().to_string(), record);
            manifest.save(&self.out)
        })
    }

    fn execute(&self, stage: Stage, fingerprint: String, inputs: BTreeMap<String, String>) -> Result<StageRecord> {
        let dir = self.out.join(stage.name());
        let wrap = |e: Error| Error::Stage {
            stage: stage.name(),
            path: dir.clone(),
            cause: Box::new(e),
        };
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(Error::io(&dir)).map_err(wrap)?;
        }
        fs::create_dir_all(&dir).map_err(Error::io(&dir)).map_err(wrap)?;
        self.stage_body(stage).map_err(wrap)?;
        let mut outputs = BTreeMap::new();
        for f in files_under(&dir).map_err(wrap)? {
            outputs.insert(rel(&f, &self.out), sha256_file(&f).map_err(wrap)?);
        }
        Ok(StageRecord {
            fingerprint,
            inputs,
            outputs,
        })
    }

    /// Every recorded output still exists with its checksum, and the stage
    /// directory holds nothing else.
    fn outputs_intact(&self, stage: Stage, record: &StageRecord) -> bool {
        let Ok(present) = files_under(&self.out.join(stage.name())) else {
            return false;
        };
        let present: BTreeSet<String> = present.iter().map(|f| rel(f, &self.out)).collect();
        present.len() == record.outputs.len()
            && record
                .outputs
                .iter()
                .all(|(p, sha)| present.contains(p) && sha256_file(&self.out.join(p)).is_ok_and(|s| s == *sha))
    }

    /// Configuration a stage depends on.
    fn stage_config(&self, stage: Stage) -> serde_json::Value {
        let c = &self.cfg;
        let seed = c.seed;
        match stage {
            Stage::Corpus => json!({
                "seed": seed,
                "corpus": c.corpus,
                "training": c.languages.training,
                "target": c.languages.target,
                "identity_lexicon": c.translation.identity_lexicon,
            }),
            Stage::Translate => json!({"seed": seed, "languages": c.languages, "translation": c.translation}),
            Stage::Select => json!({"languages": c.languages, "selector": c.selector}),
            Stage::Teach => json!({"seed": seed, "languages": c.languages, "teacher": c.teacher}),
            Stage::Train => json!({"seed": seed, "languages": c.languages, "student": c.student, "train": c.train}),
            Stage::Index => json!({"seed": seed, "index": c.index, "models": c.train.models}),
            Stage::Search => json!({"index": c.index, "eval": c.eval, "languages": c.languages, "models": c.train.models}),
            Stage::Rerank => json!({"seed": seed, "teacher": c.teacher, "eval": c.eval, "languages": c.languages}),
            Stage::Evaluate => json!({"eval": c.eval, "models": c.train.models}),
        }
    }

    /// Files outside the output directory a stage reads.
    fn external_inputs(&self, stage: Stage) -> Vec<PathBuf> {
        let c = &self.cfg;
        match stage {
            Stage::Corpus if c.corpus.source == CorpusSource::Files => {
                let f = c.corpus.files.as_ref().expect("validated");
                [&f.queries, &f.documents, &f.qrels, &f.lexicon].map(|p| c.resolve(p)).to_vec()
            }
            Stage::Select if c.selector.kind == SelectorKind::Student => {
                vec![c.resolve(c.selector.checkpoint.as_ref().expect("validated"))]
            }
            Stage::Teach if c.teacher.kind == TeacherKind::File => {
                vec![c.resolve(c.teacher.path.as_ref().expect("validated"))]
            }
            _ => Vec::new(),
        }
    }

    fn fingerprint(&self, stage: Stage, manifest: &Manifest) -> Result<(String, BTreeMap<String, String>)> {
        let mut inputs = BTreeMap::new();
        for up in stage.upstream() {
            let record = manifest.stages.get(up.name()).ok_or_else(|| Error::Stage {
                stage: stage.name(),
                path: self.out.join(up.name()),
                cause: Box::new(Error::Config(format!("stage `{up}` has not been run"))),
            })?;
            inputs.extend(record.outputs.clone());
        }
        // external files are keyed by position so their location does not matter
        for (i, p) in self.external_inputs(stage).iter().enumerate() {
            inputs.insert(format!("external:{i}"), sha256_file(p)?);
        }
        let key = json!({
            "stage": stage.name(),
            "config": self.stage_config(stage),
            "inputs": inputs,
        });
        Ok((sha256_hex(key.to_string().as_bytes()), inputs))
    }

    fn stage_body(&self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Corpus => self.corpus(),
            Stage::Translate => self.translate(),
            Stage::Select => self.select(),
            Stage::Teach => self.teach(),
            Stage::Train => self.train(),
            Stage::Index => self.index(),
            Stage::Search => self.search(),
            Stage::Rerank => self.rerank(),
            Stage::Evaluate => self.evaluate(),
        }
    }

    fn corpus(&self) -> Result<()> {
        let c = &self.cfg;
        let l = self.layout();
        let training = c.training_language()?;
        let (queries, documents, qrels, mut lexicon) = match c.corpus.source {
            CorpusSource::Synthetic => {
                let s = generate_synthetic_corpus(&c.corpus.synthetic, c.stage_seed("corpus"))?;
                (s.queries, s.documents, s.qrels, s.lexicon)
            }
            CorpusSource::Files => {
                let f = c.corpus.files.as_ref().expect("validated");
                (
                    formats::read_collection::<Query>(&c.resolve(&f.queries), &training)?,
                    formats::read_collection::<Document>(&c.resolve(&f.documents), &training)?,
                    formats::read_qrels(&c.resolve(&f.qrels))?,
                    formats::read_lexicon(&c.resolve(&f.lexicon))?,
                )
            }
        };
        if c.translation.identity_lexicon {
            let terms: BTreeSet<&str> = documents
                .iter()
                .flat_map(|d| &d.tokens)
                .chain(queries.iter().flat_map(|q| &q.tokens))
                .map(String::as_str)
                .collect();
            lexicon = BilingualLexicon::identity(terms);
        }
        let held = c.corpus.held_out_queries;
        if held >= queries.len() {
            return Err(Error::Config(format!(
                "held_out_queries = {held} leaves no training queries out of {}",
                queries.len()
            )));
        }
        let split = queries.len() - held;
        formats::write_collection(&l.documents(), &documents)?;
        formats::write_collection(&l.train_queries(), &queries[..split])?;
        formats::write_collection(&l.eval_queries_source(), &queries[split..])?;
        formats::write_qrels(&l.qrels(), &qrels)?;
        formats::write_lexicon(&l.lexicon(), &lexicon)
    }

    fn translate(&self) -> Result<()> {
        let c = &self.cfg;
        let l = self.layout();
        let training = c.training_language()?;
        let lexicon = formats::read_lexicon(&l.lexicon())?;
        let documents: Vec<Document> = formats::read_collection(&l.documents(), &training)?;
        let queries: Vec<Query> = formats::read_collection(&l.train_queries(), &training)?;
        let eval_queries: Vec<Query> = formats::read_collection(&l.eval_queries_source(), &training)?;
        let (window, stride) = (c.translation.window, c.translation.stride);

        let mut passages = Vec::new();
        for d in &documents {
            passages.extend(window_document(d, window, stride)?);
        }
        let train_mt = Translator {
            training: &training,
            lexicon: &lexicon,
            noise: c.train_noise()?,
            seed: c.stage_seed("translate"),
        };
        for code in c.languages_used() {
            let lang = LanguageTag::new(code.as_str())?;
            let ps: Vec<Passage> = passages.par_iter().map(|p| train_mt.passage(p, &lang)).collect();
            formats::write_passages(&l.passages(&code), &ps)?;
            let qs: Vec<Query> = queries.iter().map(|q| train_mt.query(q, &lang)).collect();
            write_queries(&l.queries(&code), &qs)?;
        }

        // the evaluation collection is translated as whole documents, then windowed
        let eval_mt = Translator {
            noise: c.eval_noise()?,
            seed: c.stage_seed("translate-eval"),
            ..train_mt
        };
        let doc_lang = LanguageTag::new(c.languages.document.as_str())?;
        let query_lang = LanguageTag::new(c.languages.query.as_str())?;
        let translated: Vec<Vec<Passage>> = documents
            .par_iter()
            .map(|d| {
                let t = Document {
                    id: d.id.clone(),
                    tokens: eval_mt.tokens(&d.id, &d.tokens, &doc_lang),
                    language: doc_lang.clone(),
                };
                window_document(&t, window, stride)
            })
            .collect::<std::result::Result<_, _>>()?;
        formats::write_passages(&l.eval_passages(), &translated.concat())?;
        let qs: Vec<Query> = eval_queries.iter().map(|q| eval_mt.query(q, &query_lang)).collect();
        write_queries(&l.eval_queries(), &qs)
    }

    fn select(&self) -> Result<()> {
        let c = &self.cfg;
        let l = self.layout();
        let (ql, pl) = (&c.languages.selector[0], &c.languages.selector[1]);
        let queries = formats::read_translated_queries(&l.queries(ql), &LanguageTag::new(ql.as_str())?)?;
        let passages = formats::read_passages(&l.passages(pl), &LanguageTag::new(pl.as_str())?)?;
        let k = c.languages.candidate_k;
        let candidates = match c.selector.kind {
            SelectorKind::Bm25 => {
                let index = bm25_index(&passages)?;
                select_all(&index, &queries, k)?
            }
            SelectorKind::Student => {
                let params = checkpoint::load(&c.resolve(c.selector.checkpoint.as_ref().expect("validated")))?;
                let collection = EncodedCollection::new(&params, passages.iter())?;
                let selector = ExactSelector {
                    params: &params,
                    collection: &collection,
                };
                select_all(&selector, &queries, k)?
            }
        };
        formats::write_candidates(&l.candidates(), &candidates)
    }

    fn teach(&self) -> Result<()> {
        let c = &self.cfg;
        let l = self.layout();
        let candidates = formats::read_candidates(&l.candidates())?;
        let scores = match c.teacher.kind {
            TeacherKind::File => {
                let path = c.resolve(c.teacher.path.as_ref().expect("validated"));
                let s = formats::read_teacher_scores(&path)?;
                s.check_covers(&candidates)?;
                s
            }
            TeacherKind::Oracle => {
                let training = c.training_language()?;
                let lexicon = formats::read_lexicon(&l.lexicon())?;
                let qrels = formats::read_qrels(&l.qrels())?;
                let (ql, pl) = (&c.languages.scorer[0], &c.languages.scorer[1]);
                let queries = by_id(
                    formats::read_translated_queries(&l.queries(ql), &LanguageTag::new(ql.as_str())?)?,
                    |q| &q.id,
                );
                let passages = by_id(
                    formats::read_passages(&l.passages(pl), &LanguageTag::new(pl.as_str())?)?,
                    |p| &p.id,
                );
                let teacher = OracleTeacher::new(&qrels, &lexicon, &training, c.teacher_config(c.stage_seed("teach")))?;
                // score each query's candidates in parallel, then merge in query order
                let per_query: Vec<TeacherScores> = candidates
                    .iter()
                    .collect::<Vec<_>>()
                    .par_iter()
                    .map(|(q, ps)| {
                        let mut one = CandidateSet::new();
                        one.insert(q, ps.to_vec())?;
                        oracle_teacher(&teacher, &one, &queries, &passages)
                    })
                    .collect::<std::result::Result<_, _>>()?;
                let mut all = TeacherScores::new();
                for s in per_query {
                    for (q, p, v) in s.iter() {
                        all.insert(q, p, v)?;
                    }
                }
                all
            }
        };
        formats::write_teacher_scores(&l.teacher_scores(), &scores)
    }

    fn train(&self) -> Result<()> {
        let c = &self.cfg;
        let l = self.layout();
        let lexicon = formats::read_lexicon(&l.lexicon())?;
        let (ql, dl) = (&c.languages.query, &c.languages.document);
        let queries = by_id(
            formats::read_translated_queries(&l.queries(ql), &LanguageTag::new(ql.as_str())?)?,
            |q| &q.id,
        );
        let passages = by_id(
            formats::read_passages(&l.passages(dl), &LanguageTag::new(dl.as_str())?)?,
            |p| &p.id,
        );
        let candidates = formats::read_candidates(&l.candidates())?;
        let s = &c.student;
        let init = EncoderParams::warm_start(
            Vocab::from_lexicon(&lexicon),
            &lexicon,
            s.dim,
            s.out_dim,
            s.alignment,
            c.stage_seed("student-init"),
        )?;
        let tc = c.train_config(c.stage_seed("train"));
        for &model in &c.train.models {
            let (params, log) = match model {
                Model::Distill => {
                    let teacher = formats::read_teacher_scores(&l.teacher_scores())?;
                    train_student(init.clone(), &queries, &passages, &candidates, &teacher, &tc)?
                }
                Model::TranslateTrain => {
                    let qrels = formats::read_qrels(&l.qrels())?;
                    train_translate_train(init.clone(), &queries, &passages, &candidates, &qrels, &tc)?
                }
            };
            checkpoint::save(&l.checkpoint(model), &params)?;
            formats::write_training_log(&l.training_log(model), &log)?;
        }
        Ok(())
    }

    fn eval_passages(&self) -> Result<Vec<Passage>> {
        let lang = LanguageTag::new(self.cfg.languages.document.as_str())?;
        formats::read_passages(&self.layout().eval_passages(), &lang)
    }

    fn eval_query_set(&self) -> Result<Vec<Query>> {
        let lang = LanguageTag::new(self.cfg.languages.query.as_str())?;
        formats::read_translated_queries(&self.layout().eval_queries(), &lang)
    }

    fn index(&self) -> Result<()> {
        let c = &self.cfg;
        let l = self.layout();
        let passages = self.eval_passages()?;
        let icfg = c.index_config(c.stage_seed("index"));
        for &model in &c.train.models {
            let params = checkpoint::load(&l.checkpoint(model))?;
            let index = build_index(&params, passages.iter(), &icfg)?;
            index_store::save(&l.index(model), &index)?;
        }
        Ok(())
    }

    fn search(&self) -> Result<()> {
        let c = &self.cfg;
        let l = self.layout();
        let passages = self.eval_passages()?;
        let queries = self.eval_query_set()?;
        let doc_of: BTreeMap<String, String> = passages.iter().map(|p| (p.id.clone(), p.doc_id.clone())).collect();
        let depth = c.eval.recall_depth;
        for &model in &c.train.models {
            let params = checkpoint::load(&l.checkpoint(model))?;
            let index = index_store::load(&l.index(model))?;
            let run = dense_run(model.name(), &params, &index, &queries, &doc_of, depth, c.index.nprobe)?;
            formats::write_run(&l.run(model.name()), &run)?;
        }
        let lexicon = formats::read_lexicon(&l.lexicon())?;
        let psq = psq_index(&passages, &lexicon, &c.languages)?;
        let run = sparse_run("psq", &psq, &queries, &doc_of, depth)?;
        formats::write_run(&l.run("psq"), &run)
    }

    fn rerank(&self) -> Result<()> {
        let c = &self.cfg;
        let l = self.layout();
        let training = c.training_language()?;
        let lexicon = formats::read_lexicon(&l.lexicon())?;
        let qrels = formats::read_qrels(&l.qrels())?;
        let queries = by_id(self.eval_query_set()?, |q| &q.id);
        let mut by_doc: BTreeMap<String, Vec<Passage>> = BTreeMap::new();
        for p in self.eval_passages()? {
            by_doc.entry(p.doc_id.clone()).or_default().push(p);
        }
        let teacher = OracleTeacher::new(&qrels, &lexicon, &training, c.teacher_config(c.stage_seed("teach")))?;
        let first = formats::read_run(&l.run("psq"))?;
        let mut out = rerank(&first, c.eval.rerank_depth, |qid, doc| {
            let q = queries.get(qid).ok_or_else(|| format!("unknown query {qid}"))?;
            let ps = by_doc.get(doc).ok_or_else(|| format!("unknown document {doc}"))?;
            Ok(ps.iter().map(|p| teacher.score(q, p)).fold(f64::NEG_INFINITY, f64::max))
        })?;
        out.tag = "rerank".into();
        formats::write_run(&l.run("rerank"), &out)
    }

    /// Names of the runs the evaluate stage reports on.
    pub fn run_names(&self) -> Vec<&'static str> {
        let mut names: Vec<&'static str> = self.cfg.train.models.iter().map(|m| m.name()).collect();
        names.extend(["psq", "rerank"]);
        names
    }

    /// Reads a run the search or rerank stage wrote, with every evaluation
    /// query present even if its ranking is empty.
    pub fn load_run(&self, name: &str) -> Result<RunFile> {
        let mut run = formats::read_run(&self.layout().run(name))?;
        run.tag = name.to_string();
        for q in self.eval_query_set()? {
            run.ensure_query(&q.id);
        }
        Ok(run)
    }

    fn evaluate(&self) -> Result<()> {
        let c = &self.cfg;
        let l = self.layout();
        let qrels = formats::read_qrels(&l.qrels())?;
        let mut runs = BTreeMap::new();
        for name in self.run_names() {
            runs.insert(name, self.load_run(name)?);
        }

        let mut metrics = String::from("run\tmetric\tquery\tvalue\n");
        let mut summary = String::from("run\tmetric\tqueries\tmean\n");
        for name in self.run_names() {
            for (metric, report) in metric_reports(&runs[name], &qrels, &c.eval)? {
                for (q, v) in &report.per_query {
                    metrics.push_str(&format!("{name}\t{metric}\t{q}\t{v}\n"));
                }
                summary.push_str(&format!("{name}\t{metric}\t{}\t{}\n", report.per_query.len(), report.mean));
            }
        }
        write_text(&self.out.join("evaluate/metrics.tsv"), &metrics)?;
        write_text(&self.out.join("evaluate/summary.tsv"), &summary)?;

        let mut pairs: Vec<(&str, &str)> = Vec::new();
        let models: Vec<&str> = c.train.models.iter().map(|m| m.name()).collect();
        if models.contains(&"distill") && models.contains(&"translate_train") {
            pairs.push(("distill", "translate_train"));
        }
        for m in &models {
            pairs.push((m, "rerank"));
            pairs.push((m, "psq"));
        }
        let comparisons = pairs
            .iter()
            .map(|(a, b)| compare_runs(&runs[a], &runs[b], &qrels, &c.eval))
            .collect::<Result<Vec<_>>>()?;
        write_report(&self.out.join("evaluate/compare.tsv"), &comparisons)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    formats::write_with(path, |w| w.write_all(text.as_bytes()))
}

fn write_queries(path: &Path, queries: &[Query]) -> Result<()> {
    formats::write_with(path, |w| {
        for q in queries {
            writeln!(w, "{}\t{}", q.id(), q.tokens().join(" "))?;
        }
        Ok(())
    })
}

fn bm25_index(passages: &[Passage]) -> Result<SparseIndex> {
    Ok(build_sparse_index(
        passages.iter().map(|p| (p.id.clone(), WeightedBag::from_tokens(&p.tokens))),
    )?)
}

/// Candidates for every query with text, computed in parallel and merged in
/// query order.
fn select_all<S: PassageSelector + Sync + ?Sized>(selector: &S, queries: &[Query], k: usize) -> Result<CandidateSet> {
    let lists: Vec<Option<Vec<String>>> = queries
        .par_iter()
        .map(|q| {
            if q.tokens.is_empty() {
                return Ok(None);
            }
            select_for_query(selector, q, k).map(Some)
        })
        .collect::<std::result::Result<_, _>>()?;
    let mut set = CandidateSet::new();
    for (q, list) in queries.iter().zip(lists) {
        if let Some(list) = list {
            set.insert(&q.id, list)?;
        }
    }
    Ok(set)
}

/// PSQ index over passages in the student document language, weighted in
/// the query language.
pub fn psq_index(
    passages: &[Passage],
    lexicon: &BilingualLexicon,
    langs: &crate::config::LanguageSection,
) -> Result<SparseIndex> {
    let table = if langs.query == langs.document {
        None
    } else if langs.document == langs.target {
        Some(lexicon.invert())
    } else {
        Some(lexicon.clone())
    };
    let bags: Vec<(String, WeightedBag)> = passages
        .par_iter()
        .map(|p| {
            let bag = match &table {
                Some(t) => psq_expand_document(&p.tokens, t, PSQ_MIN_PROB, PSQ_MAX_ALTERNATIVES),
                None => WeightedBag::from_tokens(&p.tokens),
            };
            (p.id.clone(), bag)
        })
        .collect();
    Ok(build_sparse_index(bags)?)
}

fn to_docs(tag: &str, per_query: Vec<(String, Vec<(String, f64)>)>, doc_of: &BTreeMap<String, String>, depth: usize) -> Result<RunFile> {
    let mut run = RunFile::new(tag);
    for (qid, hits) in per_query {
        let docs = maxp_aggregate(hits.iter().map(|(p, s)| (p.as_str(), *s)), doc_of)?;
        run.insert_scores(&qid, docs.into_iter().collect())?;
    }
    run.truncate(depth);
    Ok(run)
}

/// Document run from PLAID search: top `depth` passages per query, MaxP.
pub fn dense_run(
    tag: &str,
    params: &EncoderParams,
    index: &PlaidIndex,
    queries: &[Query],
    doc_of: &BTreeMap<String, String>,
    depth: usize,
    nprobe: usize,
) -> Result<RunFile> {
    let per_query: Vec<(String, Vec<(String, f64)>)> = queries
        .par_iter()
        .map(|q| {
            if q.tokens.is_empty() {
                return Ok((q.id.clone(), Vec::new()));
            }
            let v = encode(params, &q.tokens, Role::Query)?;
            Ok((q.id.clone(), index.search(&v, depth, nprobe)?))
        })
        .collect::<Result<_>>()?;
    to_docs(tag, per_query, doc_of, depth)
}

pub fn sparse_run(
    tag: &str,
    index: &SparseIndex,
    queries: &[Query],
    doc_of: &BTreeMap<String, String>,
    depth: usize,
) -> Result<RunFile> {
    let per_query: Vec<(String, Vec<(String, f64)>)> = queries
        .par_iter()
        .map(|q| (q.id.clone(), index.search(&q.tokens, depth)))
        .collect();
    to_docs(tag, per_query, doc_of, depth)
}

/// Per-stage outcome line for the CLI.
pub fn describe(reports: &[StageReport]) -> String {
    reports
        .iter()
        .map(|r| {
            let what = match r.outcome {
                Outcome::Ran => "ran",
                Outcome::Skipped => "up to date",
            };
            format!("{:<10} {what}\n", r.stage.name())
        })
        .collect()
}

/// Loaders for downstream analysis of a finished output directory.
impl Pipeline {
    pub fn qrels(&self) -> Result<Qrels> {
        formats::read_qrels(&self.layout().qrels())
    }

    pub fn lexicon(&self) -> Result<BilingualLexicon> {
        formats::read_lexicon(&self.layout().lexicon())
    }

    pub fn evaluation_passages(&self) -> Result<Vec<Passage>> {
        self.eval_passages()
    }

    pub fn evaluation_queries(&self) -> Result<Vec<Query>> {
        self.eval_query_set()
    }

    pub fn checkpoint_path(&self, model: Model) -> PathBuf {
        self.layout().checkpoint(model)
    }

    pub fn index_dir(&self, model: Model) -> PathBuf {
        self.layout().index(model)
    }

    pub fn candidates_path(&self) -> PathBuf {
        self.layout().candidates()
    }

    pub fn teacher_scores_path(&self) -> PathBuf {
        self.layout().teacher_scores()
    }

    pub fn compare_report_path(&self) -> PathBuf {
        self.out.join("evaluate/compare.tsv")
    }

    pub fn summary_path(&self) -> PathBuf {
        self.out.join("evaluate/summary.tsv")
    }
}
