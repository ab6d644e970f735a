//! Seeded generator for topical bilingual corpora with graded judgments.
//!
//! Source terms are `s0000..`, target terms `t0000..`. Documents mix a
//! background distribution with one topic's Zipf-shaped distribution. Each
//! query draws distinct terms uniformly from a small pool of its topic's
//! terms; its relevant documents are taken from the
//! same topic and receive copies of the query terms in proportion to their
//! grade, so lexical evidence tracks the judgments.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Document, LanguageTag, Qrels, Query};
use crate::error::{Error, Result};
use crate::lexicon::BilingualLexicon;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub n_topics: usize,
    pub n_documents: usize,
    pub n_queries: usize,
    pub relevant_per_query: usize,
    /// Other-topic documents judged with grade 0, per query.
    pub judged_nonrelevant_per_query: usize,
    pub doc_len_min: usize,
    pub doc_len_max: usize,
    pub query_len_min: usize,
    pub query_len_max: usize,
    /// Size of each topic's pool of query terms.
    pub query_terms_per_topic: usize,
    /// Fraction of non-injected document tokens drawn from the topic.
    pub topic_share: f64,
    /// Fraction of the vocabulary reserved for background terms.
    pub background_share: f64,
    /// Upper bound on translations per source term (at least one).
    pub max_translations: usize,
    pub source_language: String,
    pub target_language: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            vocab_size: 4000,
            n_topics: 25,
            n_documents: 1650,
            n_queries: 250,
            relevant_per_query: 6,
            judged_nonrelevant_per_query: 10,
            doc_len_min: 40,
            doc_len_max: 220,
            query_len_min: 3,
            query_len_max: 6,
            query_terms_per_topic: 12,
            topic_share: 0.5,
            background_share: 0.2,
            max_translations: 3,
            source_language: "src".into(),
            target_language: "tgt".into(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.vocab_size < 50 {
            return fail(format!("vocab_size {} < 50", self.vocab_size));
        }
        if self.n_topics == 0 || self.n_documents == 0 || self.n_queries == 0 {
            return fail("topics, documents and queries must be positive".into());
        }
        if self.relevant_per_query == 0 {
            return fail("relevant_per_query must be at least 1".into());
        }
        if self.relevant_per_query > self.n_documents {
            return fail(format!(
                "{} relevant documents requested but only {} documents",
                self.relevant_per_query, self.n_documents
            ));
        }
        let smallest_pool = self.n_documents / self.n_topics;
        if self.relevant_per_query > smallest_pool {
            return fail(format!(
                "{} relevant documents requested but the smallest topic has {smallest_pool}",
                self.relevant_per_query
            ));
        }
        if self.doc_len_min == 0 || self.doc_len_min > self.doc_len_max {
            return fail("need 0 < doc_len_min <= doc_len_max".into());
        }
        if self.query_len_min == 0 || self.query_len_min > self.query_len_max {
            return fail("need 0 < query_len_min <= query_len_max".into());
        }
        if !(0.0..=1.0).contains(&self.topic_share) || !(0.0..1.0).contains(&self.background_share)
        {
            return fail("topic_share in [0,1], background_share in [0,1)".into());
        }
        if self.max_translations == 0 || self.max_translations > self.vocab_size {
            return fail("max_translations must be in 1..=vocab_size".into());
        }
        let topical = self.vocab_size - self.background_terms();
        if self.query_terms_per_topic < self.query_len_max {
            return fail(format!(
                "query pools of {} terms cannot supply queries of {} distinct terms",
                self.query_terms_per_topic, self.query_len_max
            ));
        }
        if topical / self.n_topics < self.query_terms_per_topic {
            return fail(format!(
                "{} topical terms cannot supply {} topics with query pools of {}",
                topical, self.n_topics, self.query_terms_per_topic
            ));
        }
        LanguageTag::new(self.source_language.clone())?;
        LanguageTag::new(self.target_language.clone())?;
        Ok(())
    }

    fn background_terms(&self) -> usize {
        ((self.vocab_size as f64) * self.background_share) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub queries: Vec<Query>,
    pub documents: Vec<Document>,
    pub qrels: Qrels,
    /// Source to target translation table.
    pub lexicon: BilingualLexicon,
}

pub fn source_term(i: usize) -> String {
    format!("s{i:04}")
}

pub fn target_term(i: usize) -> String {
    format!("t{i:04}")
}

/// Discrete distribution sampled by inverse CDF.
struct Categorical {
    items: Vec<usize>,
    cdf: Vec<f64>,
}

impl Categorical {
    /// Zipf-like weights over `items` in a shuffled rank order.
    fn zipf(mut items: Vec<usize>, exponent: f64, rng: &mut ChaCha8Rng) -> Self {
        items.shuffle(rng);
        let mut acc = 0.0;
        let cdf = (0..items.len())
            .map(|r| {
                acc += 1.0 / libm::pow(r as f64 + 1.0, exponent);
                acc
            })
            .collect();
        Self { items, cdf }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let u = rng.gen::<f64>() * self.cdf[self.cdf.len() - 1];
        let i = self.cdf.partition_point(|&c| c <= u).min(self.items.len() - 1);
        self.items[i]
    }
}

/// Generates a corpus as a pure function of `(config, seed)`.
pub fn generate_synthetic_corpus(config: &SynthConfig, seed: u64) -> Result<SyntheticCorpus> {
    config.validate()?;
    let src_lang = LanguageTag::new(config.source_language.clone())?;
    let v = config.vocab_size;

    let lexicon = generate_lexicon(config, seed)?;

    let mut rng = rng::rng_for(seed, &[b"synth", b"topics"]);
    let n_bg = config.background_terms();
    let background = Categorical::zipf((0..n_bg.max(1)).collect(), 1.0, &mut rng);
    let topical: Vec<usize> = (n_bg..v).collect();
    let per_topic = topical.len() / config.n_topics;
    let topic_terms: Vec<&[usize]> = (0..config.n_topics)
        .map(|t| &topical[t * per_topic..(t + 1) * per_topic])
        .collect();
    let topics: Vec<Categorical> = topic_terms
        .iter()
        .map(|terms| Categorical::zipf(terms.to_vec(), 0.8, &mut rng))
        .collect();

    let mut rng = rng::rng_for(seed, &[b"synth", b"documents"]);
    let mut doc_terms: Vec<Vec<usize>> = Vec::with_capacity(config.n_documents);
    let mut pools: Vec<Vec<usize>> = alloc::vec![Vec::new(); config.n_topics];
    for d in 0..config.n_documents {
        let topic = d % config.n_topics;
        pools[topic].push(d);
        let len = rng.gen_range(config.doc_len_min..=config.doc_len_max);
        let terms = (0..len)
            .map(|_| {
                if n_bg == 0 || rng.gen::<f64>() < config.topic_share {
                    topics[topic].sample(&mut rng)
                } else {
                    background.sample(&mut rng)
                }
            })
            .collect();
        doc_terms.push(terms);
    }

    let mut rng = rng::rng_for(seed, &[b"synth", b"queries"]);
    let mut qrels = Qrels::new();
    let mut queries = Vec::with_capacity(config.n_queries);
    for q in 0..config.n_queries {
        let qid = format!("q{q:04}");
        let topic = q % config.n_topics;
        let len = rng.gen_range(config.query_len_min..=config.query_len_max);
        // the pool sits at random Zipf ranks, so most query terms are rarer
        // than the topic's head terms and their presence is informative
        let pool = &topic_terms[topic][..config.query_terms_per_topic];
        let terms: Vec<usize> = pool.choose_multiple(&mut rng, len).copied().collect();

        let relevant: Vec<usize> = pools[topic]
            .choose_multiple(&mut rng, config.relevant_per_query)
            .copied()
            .collect();
        for &d in &relevant {
            let grade: u32 = rng.gen_range(1..=3);
            qrels.insert(&qid, &doc_id(d), grade);
            let doc = &mut doc_terms[d];
            for &t in &terms {
                // higher grades carry more of the query's vocabulary
                if rng.gen::<f64>() < 0.25 + 0.25 * f64::from(grade) {
                    for _ in 0..grade {
                        let pos = rng.gen_range(0..doc.len());
                        doc[pos] = t;
                    }
                }
            }
        }

        if config.n_topics > 1 {
            for _ in 0..config.judged_nonrelevant_per_query {
                let other = (topic + rng.gen_range(1..config.n_topics)) % config.n_topics;
                let d = *pools[other].choose(&mut rng).expect("topic pools are non-empty");
                if qrels.grade(&qid, &doc_id(d)).is_none() {
                    qrels.insert(&qid, &doc_id(d), 0);
                }
            }
        }

        queries.push(Query {
            id: qid,
            tokens: terms.into_iter().map(source_term).collect(),
            language: src_lang.clone(),
        });
    }

    let documents = doc_terms
        .into_iter()
        .enumerate()
        .map(|(d, terms)| Document {
            id: doc_id(d),
            tokens: terms.into_iter().map(source_term).collect(),
            language: src_lang.clone(),
        })
        .collect();

    Ok(SyntheticCorpus {
        queries,
        documents,
        qrels,
        lexicon,
    })
}

fn doc_id(d: usize) -> String {
    format!("d{d:05}")
}

fn generate_lexicon(config: &SynthConfig, seed: u64) -> Result<BilingualLexicon> {
    let v = config.vocab_size;
    let mut rng = rng::rng_for(seed, &[b"synth", b"lexicon"]);
    let mut primary: Vec<usize> = (0..v).collect();
    primary.shuffle(&mut rng);
    let mut triples = Vec::with_capacity(v * config.max_translations);
    for (s, &p) in primary.iter().enumerate() {
        let n = rng.gen_range(1..=config.max_translations);
        let mut targets = alloc::vec![p];
        while targets.len() < n {
            let t = rng.gen_range(0..v);
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        // the primary translation dominates; alternatives split the rest
        let mut weights: Vec<f64> = targets
            .iter()
            .enumerate()
            .map(|(i, _)| if i == 0 { 2.0 + rng.gen::<f64>() } else { 0.1 + rng.gen::<f64>() })
            .collect();
        let total: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= total;
        }
        for (t, w) in targets.into_iter().zip(weights) {
            triples.push((source_term(s), target_term(t), w));
        }
    }
    BilingualLexicon::from_triples(triples, 1e-9, true)
}
