//! Translation tables: one-best synthetic machine translation with an explicit
//! noise channel, and probabilistic (PSQ) expansion of documents into
//! weighted bags of terms in the other language.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// Tolerance for per-source normalization of an in-memory lexicon.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Per-source-term distribution over target terms.
///
/// Each entry list is sorted by probability descending, then target
/// ascending, so the first element is the one-best translation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BilingualLexicon {
    entries: BTreeMap<String, Vec<(String, f64)>>,
    // every distinct target, sorted; used by the confusion channel
    targets: Vec<String>,
}

impl BilingualLexicon {
    /// Builds a lexicon from `(source, target, probability)` triples.
    ///
    /// Each source's probabilities must sum to one within `tolerance`. When
    /// `renormalize` is set, rows further than [`NORMALIZATION_TOL`] from one
    /// are rescaled. Rows already within it are kept bit for bit, so writing
    /// and re-reading a lexicon is lossless.
    pub fn from_triples<I, S, T>(triples: I, tolerance: f64, renormalize: bool) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T, f64)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut entries: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
        for (s, t, p) in triples {
            let (s, t) = (s.into(), t.into());
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidLexicon(format!(
                    "P({t}|{s}) = {p} outside (0, 1]"
                )));
            }
            let row = entries.entry(s.clone()).or_default();
            if row.iter().any(|(existing, _)| *existing == t) {
                return Err(Error::InvalidLexicon(format!(
                    "duplicate target `{t}` for source `{s}`"
                )));
            }
            row.push((t, p));
        }
        for (s, row) in entries.iter_mut() {
            let total: f64 = row.iter().map(|(_, p)| p).sum();
            if (total - 1.0).abs() > tolerance {
                return Err(Error::InvalidLexicon(format!(
                    "probabilities for `{s}` sum to {total}"
                )));
            }
            if renormalize && (total - 1.0).abs() > NORMALIZATION_TOL {
                for (_, p) in row.iter_mut() {
                    *p /= total;
                }
            }
            row.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        }
        Ok(Self::from_sorted(entries))
    }

    fn from_sorted(entries: BTreeMap<String, Vec<(String, f64)>>) -> Self {
        let mut targets: Vec<String> = entries
            .values()
            .flat_map(|row| row.iter().map(|(t, _)| t.clone()))
            .collect();
        targets.sort();
        targets.dedup();
        Self { entries, targets }
    }

    /// Maps every term to itself with probability one.
    pub fn identity<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let entries = terms
            .into_iter()
            .map(|t| {
                let t = t.into();
                (t.clone(), alloc::vec![(t, 1.0)])
            })
            .collect();
        Self::from_sorted(entries)
    }

    pub fn translations(&self, source: &str) -> Option<&[(String, f64)]> {
        self.entries.get(source).map(Vec::as_slice)
    }

    /// Highest-probability target; ties go to the lexicographically smaller target.
    pub fn best(&self, source: &str) -> Option<&str> {
        self.entries.get(source).map(|row| row[0].0.as_str())
    }

    pub fn contains(&self, source: &str) -> bool {
        self.entries.contains_key(source)
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn targets(&self) -> &[String] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All `(source, target, probability)` triples in source order.
    pub fn triples(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.entries
            .iter()
            .flat_map(|(s, row)| row.iter().map(move |(t, p)| (s.as_str(), t.as_str(), *p)))
    }

    /// Reverse table P(source | target), assuming a uniform prior over sources.
    pub fn invert(&self) -> Self {
        let mut mass: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
        for (s, t, p) in self.triples() {
            mass.entry(t.to_string()).or_default().push((s.to_string(), p));
        }
        for row in mass.values_mut() {
            let total: f64 = row.iter().map(|(_, p)| p).sum();
            for (_, p) in row.iter_mut() {
                *p /= total;
            }
            row.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        }
        Self::from_sorted(mass)
    }
}

/// Bag of terms with strictly positive finite weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightedBag {
    weights: BTreeMap<String, f64>,
}

impl WeightedBag {
    pub fn new() -> Self {
        Self::default()
    }

    /// Raw term frequencies.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Self {
        let mut bag = Self::new();
        for t in tokens {
            *bag.weights.entry(t.as_ref().to_string()).or_insert(0.0) += 1.0;
        }
        bag
    }

    /// Adds weight to a term. Rejects non-positive or non-finite increments.
    pub fn add(&mut self, term: &str, weight: f64) -> Result<()> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::InvalidWeight {
                term: term.to_string(),
                weight,
            });
        }
        *self.weights.entry(term.to_string()).or_insert(0.0) += weight;
        Ok(())
    }

    pub fn get(&self, term: &str) -> Option<f64> {
        self.weights.get(term).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.weights.iter().map(|(t, &w)| (t.as_str(), w))
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.values().sum()
    }
}

/// Error channel of the synthetic translator.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MtNoise {
    /// Probability a token is dropped.
    pub p_drop: f64,
    /// Probability a kept token is replaced by a uniformly random lexicon target.
    pub p_confuse: f64,
}

impl MtNoise {
    pub const NONE: MtNoise = MtNoise {
        p_drop: 0.0,
        p_confuse: 0.0,
    };

    pub fn new(p_drop: f64, p_confuse: f64) -> Result<Self> {
        let noise = Self { p_drop, p_confuse };
        noise.validate()?;
        Ok(noise)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if ok(self.p_drop) && ok(self.p_confuse) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "MT noise probabilities must be in [0, 1], got {self:?}"
            )))
        }
    }
}

impl Default for MtNoise {
    fn default() -> Self {
        Self::NONE
    }
}

/// One-best translation of a token sequence.
///
/// Each token is dropped with probability `p_drop`, otherwise replaced by a
/// random lexicon target with probability `p_confuse`, otherwise mapped to
/// its most probable target. Terms missing from the lexicon pass through
/// unchanged (they can still be dropped).
pub fn translate_tokens<S: AsRef<str>>(
    tokens: &[S],
    lex: &BilingualLexicon,
    noise: MtNoise,
    seed: u64,
) -> Vec<String> {
    let mut rng = rng::rng_for(seed, &[b"translate"]);
    let mut out = Vec::with_capacity(tokens.len());
    for tok in tokens {
        let tok = tok.as_ref();
        if noise.p_drop > 0.0 && rng.gen::<f64>() < noise.p_drop {
            continue;
        }
        let Some(best) = lex.best(tok) else {
            out.push(tok.to_string());
            continue;
        };
        if noise.p_confuse > 0.0 && rng.gen::<f64>() < noise.p_confuse {
            let i = rng.gen_range(0..lex.targets.len());
            out.push(lex.targets[i].clone());
        } else {
            out.push(best.to_string());
        }
    }
    out
}

/// Expands a document into a weighted bag in the lexicon's target language.
///
/// For each distinct term with frequency `tf`, every retained translation
/// `e` gains `tf * P(e|t)`. Retained translations are the `max_alternatives`
/// most probable ones with `P(e|t) >= min_prob`. Terms missing from the
/// lexicon keep their own frequency.
pub fn psq_expand_document<S: AsRef<str>>(
    tokens: &[S],
    lex: &BilingualLexicon,
    min_prob: f64,
    max_alternatives: usize,
) -> WeightedBag {
    let tf = WeightedBag::from_tokens(tokens);
    let mut bag = WeightedBag::new();
    for (term, count) in tf.iter() {
        match lex.translations(term) {
            Some(row) => {
                for (target, p) in row
                    .iter()
                    .filter(|(_, p)| *p >= min_prob)
                    .take(max_alternatives.max(1))
                {
                    *bag.weights.entry(target.clone()).or_insert(0.0) += count * p;
                }
            }
            None => {
                *bag.weights.entry(term.to_string()).or_insert(0.0) += count;
            }
        }
    }
    bag
}

/// Default PSQ pruning.
pub const PSQ_MIN_PROB: f64 = 0.01;
pub const PSQ_MAX_ALTERNATIVES: usize = 5;
