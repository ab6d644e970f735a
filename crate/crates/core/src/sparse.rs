//! BM25 over weighted bags, so plain term counts and PSQ expansions share one
//! index type.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::eval::sort_by_score_then_id;
use crate::lexicon::WeightedBag;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseIndex {
    /// Sorted; a passage's position here is its internal number.
    passage_ids: Vec<String>,
    /// term -> (passage number, weight), ascending by passage number.
    postings: BTreeMap<String, Vec<(u32, f64)>>,
    doc_lengths: Vec<f64>,
    avg_doc_length: f64,
    params: Bm25Params,
}

/// Builds an index from `passage_id -> bag`.
pub fn build_sparse_index<I, S>(bags: I) -> Result<SparseIndex>
where
    I: IntoIterator<Item = (S, WeightedBag)>,
    S: Into<String>,
{
    let mut items: Vec<(String, WeightedBag)> =
        bags.into_iter().map(|(id, b)| (id.into(), b)).collect();
    if items.is_empty() {
        return Err(Error::Empty("sparse index input"));
    }
    items.sort_by(|a, b| a.0.cmp(&b.0));
    for pair in items.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(Error::DuplicateId {
                kind: "passage",
                id: pair[0].0.clone(),
            });
        }
    }
    let mut postings: BTreeMap<String, Vec<(u32, f64)>> = BTreeMap::new();
    let mut doc_lengths = Vec::with_capacity(items.len());
    let mut passage_ids = Vec::with_capacity(items.len());
    for (n, (id, bag)) in items.into_iter().enumerate() {
        for (term, w) in bag.iter() {
            postings.entry(term.into()).or_default().push((n as u32, w));
        }
        doc_lengths.push(bag.total_mass());
        passage_ids.push(id);
    }
    let avg_doc_length = doc_lengths.iter().sum::<f64>() / doc_lengths.len() as f64;
    Ok(SparseIndex {
        passage_ids,
        postings,
        doc_lengths,
        avg_doc_length,
        params: Bm25Params::default(),
    })
}

impl SparseIndex {
    pub fn with_params(mut self, params: Bm25Params) -> Self {
        self.params = params;
        self
    }

    pub fn len(&self) -> usize {
        self.passage_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passage_ids.is_empty()
    }

    pub fn passage_ids(&self) -> &[String] {
        &self.passage_ids
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, passage_id: &str) -> Option<f64> {
        let n = self.passage_ids.binary_search_by(|p| p.as_str().cmp(passage_id)).ok()?;
        Some(self.doc_lengths[n])
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.df(term) as f64;
        libm::log(1.0 + (n - df + 0.5) / (df + 0.5))
    }

    /// BM25 score of every passage, in [`passage_ids`](Self::passage_ids) order.
    pub fn score_all<S: AsRef<str>>(&self, query: &[S]) -> Vec<f64> {
        let Bm25Params { k1, b } = self.params;
        let mut scores = alloc::vec![0.0; self.len()];
        for term in query {
            let term = term.as_ref();
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(term);
            for &(n, w) in list {
                let norm = 1.0 - b + b * self.doc_lengths[n as usize] / self.avg_doc_length;
                scores[n as usize] += idf * (w * (k1 + 1.0)) / (w + k1 * norm);
            }
        }
        scores
    }

    /// Top-`k` passages with positive score, ties by passage id ascending.
    pub fn search<S: AsRef<str>>(&self, query: &[S], k: usize) -> Vec<(String, f64)> {
        let scores = self.score_all(query);
        let mut hits: Vec<(String, f64)> = scores
            .into_iter()
            .enumerate()
            .filter(|&(_, s)| s > 0.0)
            .map(|(n, s)| (self.passage_ids[n].clone(), s))
            .collect();
        sort_by_score_then_id(&mut hits);
        hits.truncate(k);
        hits
    }
}

/// Free-function form of [`SparseIndex::search`].
pub fn bm25_search<S: AsRef<str>>(index: &SparseIndex, query: &[S], k: usize) -> Vec<(String, f64)> {
    index.search(query, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn bag(pairs: &[(&str, f64)]) -> WeightedBag {
        let mut b = WeightedBag::new();
        for &(t, w) in pairs {
            b.add(t, w).unwrap();
        }
        b
    }

    #[test]
    fn statistics() {
        let idx = build_sparse_index(vec![
            ("p1", bag(&[("a", 1.0)])),
            ("p2", bag(&[("a", 1.0), ("b", 2.0)])),
        ])
        .unwrap();
        assert_eq!(idx.df("a"), 2);
        assert_eq!(idx.df("b"), 1);
        assert!((idx.avg_doc_length() - 2.0).abs() < 1e-12);
        assert!((idx.idf("a") - 1.2f64.ln()).abs() < 1e-12);
        assert!((idx.idf("a") - 0.18232).abs() < 1e-5);
    }

    #[test]
    fn single_passage_average() {
        let idx = build_sparse_index(vec![("p", bag(&[("a", 1.5), ("b", 2.0)]))]).unwrap();
        assert!((idx.avg_doc_length() - 3.5).abs() < 1e-12);
    }

    #[test]
    fn only_matching_passage_returned() {
        let idx = build_sparse_index(vec![
            ("d1", WeightedBag::from_tokens(&["a", "b"])),
            ("d2", WeightedBag::from_tokens(&["a"])),
        ])
        .unwrap();
        let hits = idx.search(&["b"], 10);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0, "d1");
        assert!(idx.search::<&str>(&[], 10).is_empty());
    }

    #[test]
    fn bm25_formula_by_hand() {
        let idx = build_sparse_index(vec![
            ("d1", WeightedBag::from_tokens(&["a", "b"])),
            ("d2", WeightedBag::from_tokens(&["a"])),
        ])
        .unwrap();
        let (k1, b) = (0.9, 0.4);
        let idf_b = (1.0f64 + (2.0 - 1.0 + 0.5) / 1.5).ln();
        let norm = 1.0 - b + b * 2.0 / 1.5;
        let expected = idf_b * (1.0 * (k1 + 1.0)) / (1.0 + k1 * norm);
        assert!((idx.search(&["b"], 1)[0].1 - expected).abs() < 1e-12);
    }

    #[test]
    fn ties_break_by_id() {
        let idx = build_sparse_index(vec![
            ("z", WeightedBag::from_tokens(&["a"])),
            ("m", WeightedBag::from_tokens(&["a"])),
            ("q", WeightedBag::from_tokens(&["c"])),
        ])
        .unwrap();
        let ids: Vec<String> = idx.search(&["a"], 5).into_iter().map(|h| h.0).collect();
        assert_eq!(ids, vec!["m".to_string(), "z".to_string()]);
    }

    #[test]
    fn build_errors() {
        assert!(build_sparse_index(Vec::<(String, WeightedBag)>::new()).is_err());
        assert!(build_sparse_index(vec![
            ("p", WeightedBag::from_tokens(&["a"])),
            ("p", WeightedBag::from_tokens(&["b"])),
        ])
        .is_err());
    }
}
