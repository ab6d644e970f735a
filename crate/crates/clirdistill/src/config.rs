//! Pipeline configuration, read from TOML.
//!
//! Every section and field is optional; omitted values take the defaults
//! below. Unknown keys are rejected so a typo cannot silently fall back to
//! a default.
//!
//! ```toml
//! seed = 0                 # every stage seed is derived from this
//! output = "artifacts"     # relative to the config file
//!
//! [corpus]
//! source = "synthetic"     # or "files"
//! held_out_queries = 50    # the last N queries are evaluation queries
//! [corpus.synthetic]       # generator settings, see `SynthConfig`
//! n_documents = 1650
//! [corpus.files]           # used when source = "files"
//! queries = "queries.tsv"
//! documents = "documents.tsv"
//! qrels = "qrels.txt"
//! lexicon = "lexicon.tsv"
//!
//! [languages]
//! training = "src"         # language of the original text
//! target = "tgt"           # the other language
//! query = "src"            # student query language
//! document = "tgt"         # student document language
//! selector = ["src", "src"]
//! scorer = ["src", "src"]
//! candidate_k = 50
//!
//! [translation]
//! p_drop = 0.1             # training-time synthetic MT noise
//! p_confuse = 0.05
//! eval_p_drop = 0.0        # noise applied to the evaluation collection
//! eval_p_confuse = 0.0
//! identity_lexicon = false # replace the lexicon with t -> t
//! window = 180
//! stride = 90
//!
//! [selector]
//! kind = "bm25"            # or "student", with `checkpoint = "path"`
//!
//! [teacher]
//! kind = "oracle"          # or "file", with `path = "scores.tsv"`
//! scale = 1.0
//! term_loss_penalty = 1.0
//! noise_sd = 0.0
//!
//! [student]
//! dim = 32
//! out_dim = 16
//! alignment = 0.5          # warm-start strength, 0 = random init
//!
//! [train]
//! models = ["distill", "translate_train"]
//! epochs = 20
//! batch_queries = 64
//! passages_per_query = 6
//! [train.optimizer]
//! learning_rate = 0.01
//! [train.loss]
//! direction = "student_teacher"
//!
//! [index]
//! centroids = 64
//! nbits = 1
//! nprobe = 8
//!
//! [eval]
//! ndcg_depth = 20
//! recall_depth = 1000
//! judged_depth = 20
//! rerank_depth = 200
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use clirdistill_core::distill::{LanguageConfig, OracleTeacherConfig, TrainConfig};
use clirdistill_core::encoder::LossConfig;
use clirdistill_core::eval::{JUDGED_DEPTH, NDCG_DEPTH, RECALL_DEPTH, RERANK_DEPTH};
use clirdistill_core::index::IndexConfig;
use clirdistill_core::optim::AdamWConfig;
use clirdistill_core::rng::derive_seed;
use clirdistill_core::synth::SynthConfig;
use clirdistill_core::{LanguageTag, MtNoise};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output: PathBuf,
    pub corpus: CorpusSection,
    pub languages: LanguageSection,
    pub translation: TranslationSection,
    pub selector: SelectorSection,
    pub teacher: TeacherSection,
    pub student: StudentSection,
    pub train: TrainSection,
    pub index: IndexSection,
    pub eval: EvalSection,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output: PathBuf::from("artifacts"),
            corpus: CorpusSection::default(),
            languages: LanguageSection::default(),
            translation: TranslationSection::default(),
            selector: SelectorSection::default(),
            teacher: TeacherSection::default(),
            student: StudentSection::default(),
            train: TrainSection::default(),
            index: IndexSection::default(),
            eval: EvalSection::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource {
    Synthetic,
    Files,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusFiles {
    pub queries: PathBuf,
    pub documents: PathBuf,
    pub qrels: PathBuf,
    pub lexicon: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub source: CorpusSource,
    pub held_out_queries: usize,
    pub synthetic: SynthConfig,
    pub files: Option<CorpusFiles>,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            source: CorpusSource::Synthetic,
            held_out_queries: 50,
            synthetic: SynthConfig::default(),
            files: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LanguageSection {
    pub training: String,
    pub target: String,
    pub query: String,
    pub document: String,
    pub selector: [String; 2],
    pub scorer: [String; 2],
    pub candidate_k: usize,
}

impl Default for LanguageSection {
    fn default() -> Self {
        let s = || "src".to_string();
        Self {
            training: s(),
            target: "tgt".into(),
            query: s(),
            document: "tgt".into(),
            selector: [s(), s()],
            scorer: [s(), s()],
            candidate_k: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslationSection {
    pub p_drop: f64,
    pub p_confuse: f64,
    pub eval_p_drop: f64,
    pub eval_p_confuse: f64,
    pub identity_lexicon: bool,
    pub window: usize,
    pub stride: usize,
}

impl Default for TranslationSection {
    fn default() -> Self {
        Self {
            p_drop: 0.1,
            p_confuse: 0.05,
            eval_p_drop: 0.0,
            eval_p_confuse: 0.0,
            identity_lexicon: false,
            window: 180,
            stride: 90,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKind {
    Bm25,
    Student,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorSection {
    pub kind: SelectorKind,
    pub checkpoint: Option<PathBuf>,
}

impl Default for SelectorSection {
    fn default() -> Self {
        Self {
            kind: SelectorKind::Bm25,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherKind {
    Oracle,
    File,
}

/// The oracle settings are also used by the reranking baseline, even when
/// training scores come from a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherSection {
    pub kind: TeacherKind,
    pub path: Option<PathBuf>,
    pub scale: f64,
    pub term_loss_penalty: f64,
    pub noise_sd: f64,
}

impl Default for TeacherSection {
    fn default() -> Self {
        let o = OracleTeacherConfig::default();
        Self {
            kind: TeacherKind::Oracle,
            path: None,
            scale: o.scale,
            term_loss_penalty: o.term_loss_penalty,
            noise_sd: o.noise_sd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentSection {
    pub dim: usize,
    pub out_dim: usize,
    pub alignment: f64,
}

impl Default for StudentSection {
    fn default() -> Self {
        Self {
            dim: 32,
            out_dim: 16,
            alignment: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Distill,
    TranslateTrain,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Distill => "distill",
            Model::TranslateTrain => "translate_train",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub models: Vec<Model>,
    pub epochs: usize,
    pub batch_queries: usize,
    pub passages_per_query: usize,
    pub optimizer: AdamWConfig,
    pub loss: LossConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            models: vec![Model::Distill, Model::TranslateTrain],
            epochs: t.epochs,
            batch_queries: t.batch_queries,
            passages_per_query: t.passages_per_query,
            optimizer: t.optimizer,
            loss: t.loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexSection {
    pub centroids: usize,
    pub nbits: u32,
    pub iterations: usize,
    pub training_sample: usize,
    pub nprobe: usize,
}

impl Default for IndexSection {
    fn default() -> Self {
        let c = IndexConfig::default();
        Self {
            centroids: c.centroids,
            nbits: c.nbits,
            iterations: c.iterations,
            training_sample: c.training_sample,
            nprobe: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ndcg_depth: usize,
    pub recall_depth: usize,
    pub judged_depth: usize,
    pub rerank_depth: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            ndcg_depth: NDCG_DEPTH,
            recall_depth: RECALL_DEPTH,
            judged_depth: JUDGED_DEPTH,
            rerank_depth: RERANK_DEPTH,
        }
    }
}

fn tag(code: &str) -> Result<LanguageTag> {
    LanguageTag::new(code).map_err(|e| Error::Config(format!("language `{code}`: {e}")))
}

impl PipelineConfig {
    /// Reads a config file; relative paths inside it resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if cfg.base_dir.as_os_str().is_empty() {
            cfg.base_dir = PathBuf::from(".");
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable as TOML")
    }

    /// Seed of one stage, independent of every other stage's.
    pub fn stage_seed(&self, label: &str) -> u64 {
        derive_seed(self.seed, &[label.as_bytes()])
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        self.language_config()?
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        let l = &self.languages;
        if l.training == l.target {
            return fail("languages.training and languages.target must differ".into());
        }
        for code in [&l.query, &l.document, &l.selector[0], &l.selector[1], &l.scorer[0], &l.scorer[1]] {
            if *code != l.training && *code != l.target {
                return fail(format!("language `{code}` is neither `{}` nor `{}`", l.training, l.target));
            }
        }
        match self.corpus.source {
            CorpusSource::Synthetic => {
                let s = &self.corpus.synthetic;
                s.validate().map_err(|e| Error::Config(e.to_string()))?;
                if s.source_language != l.training || s.target_language != l.target {
                    return fail(format!(
                        "synthetic languages ({}, {}) differ from languages.training/target ({}, {})",
                        s.source_language, s.target_language, l.training, l.target
                    ));
                }
                if self.corpus.held_out_queries >= s.n_queries {
                    return fail("held_out_queries must leave at least one training query".into());
                }
            }
            CorpusSource::Files => {
                if self.corpus.files.is_none() {
                    return fail("corpus.source = \"files\" needs a [corpus.files] section".into());
                }
            }
        }
        if self.corpus.held_out_queries == 0 {
            return fail("held_out_queries must be at least 1".into());
        }
        self.train_noise()?;
        self.eval_noise()?;
        let t = &self.translation;
        if t.window == 0 || t.stride == 0 || t.stride > t.window {
            return fail(format!("need 0 < stride <= window, got window {} stride {}", t.window, t.stride));
        }
        if self.selector.kind == SelectorKind::Student && self.selector.checkpoint.is_none() {
            return fail("selector.kind = \"student\" needs selector.checkpoint".into());
        }
        if self.teacher.kind == TeacherKind::File && self.teacher.path.is_none() {
            return fail("teacher.kind = \"file\" needs teacher.path".into());
        }
        let s = &self.student;
        if s.dim == 0 || s.out_dim == 0 || !(0.0..=1.0).contains(&s.alignment) {
            return fail("student needs positive dims and alignment in [0, 1]".into());
        }
        if self.train.models.is_empty() {
            return fail("train.models must name at least one model".into());
        }
        let mut models = self.train.models.clone();
        models.sort();
        models.dedup();
        if models.len() != self.train.models.len() {
            return fail("train.models lists a model twice".into());
        }
        self.train_config(0).validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.train.passages_per_query > l.candidate_k {
            return fail("train.passages_per_query exceeds languages.candidate_k".into());
        }
        let i = &self.index;
        if !matches!(i.nbits, 1 | 2 | 4) || i.centroids == 0 || i.iterations == 0 || i.nprobe == 0 {
            return fail("index needs nbits in {1, 2, 4} and positive centroids/iterations/nprobe".into());
        }
        if i.nprobe > i.centroids {
            return fail("index.nprobe exceeds index.centroids".into());
        }
        let e = &self.eval;
        if [e.ndcg_depth, e.recall_depth, e.judged_depth, e.rerank_depth].contains(&0) {
            return fail("eval depths must be positive".into());
        }
        Ok(())
    }

    pub fn training_language(&self) -> Result<LanguageTag> {
        tag(&self.languages.training)
    }

    pub fn target_language(&self) -> Result<LanguageTag> {
        tag(&self.languages.target)
    }

    pub fn language_config(&self) -> Result<LanguageConfig> {
        let l = &self.languages;
        Ok(LanguageConfig {
            training: tag(&l.training)?,
            query: tag(&l.query)?,
            document: tag(&l.document)?,
            selector: (tag(&l.selector[0])?, tag(&l.selector[1])?),
            scorer: (tag(&l.scorer[0])?, tag(&l.scorer[1])?),
            candidate_k: l.candidate_k,
        })
    }

    pub fn train_noise(&self) -> Result<MtNoise> {
        MtNoise::new(self.translation.p_drop, self.translation.p_confuse).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn eval_noise(&self) -> Result<MtNoise> {
        MtNoise::new(self.translation.eval_p_drop, self.translation.eval_p_confuse)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_queries: t.batch_queries,
            passages_per_query: t.passages_per_query,
            epochs: t.epochs,
            seed,
            optimizer: t.optimizer,
            loss: t.loss,
        }
    }

    pub fn teacher_config(&self, seed: u64) -> OracleTeacherConfig {
        OracleTeacherConfig {
            scale: self.teacher.scale,
            term_loss_penalty: self.teacher.term_loss_penalty,
            noise_sd: self.teacher.noise_sd,
            seed,
        }
    }

    pub fn index_config(&self, seed: u64) -> IndexConfig {
        IndexConfig {
            centroids: self.index.centroids,
            nbits: self.index.nbits,
            iterations: self.index.iterations,
            training_sample: self.index.training_sample,
            seed,
        }
    }

    /// Every language some stage reads, in sorted order.
    pub fn languages_used(&self) -> Vec<String> {
        let l = &self.languages;
        let mut v = vec![
            l.training.clone(),
            l.query.clone(),
            l.document.clone(),
            l.selector[0].clone(),
            l.selector[1].clone(),
            l.scorer[0].clone(),
            l.scorer[1].clone(),
        ];
        v.sort();
        v.dedup();
        v
    }
}
