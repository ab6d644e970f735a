//! Queries, documents, passage windows and relevance judgments.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Identifier of a language. Comparison is exact string equality.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "String", into = "String"))]
pub struct LanguageTag(String);

impl LanguageTag {
    pub fn new(code: impl Into<String>) -> Result<Self> {
        let code = code.into();
        if code.is_empty() {
            return Err(Error::Empty("language tag"));
        }
        Ok(Self(code))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for LanguageTag {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Self::new(s)
    }
}

impl From<LanguageTag> for String {
    fn from(t: LanguageTag) -> String {
        t.0
    }
}

impl fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Anything with an id and a token sequence in one language.
pub trait TextRecord: Sized {
    fn from_parts(id: String, tokens: Vec<String>, language: LanguageTag) -> Result<Self>;
    fn id(&self) -> &str;
    fn tokens(&self) -> &[String];
    fn language(&self) -> &LanguageTag;
}

macro_rules! text_record {
    ($name:ident, $kind:literal) => {
        #[derive(Debug, Clone, PartialEq, Eq)]
        pub struct $name {
            pub id: String,
            pub tokens: Vec<String>,
            pub language: LanguageTag,
        }

        impl TextRecord for $name {
            fn from_parts(id: String, tokens: Vec<String>, language: LanguageTag) -> Result<Self> {
                if id.is_empty() {
                    return Err(Error::Empty(concat!($kind, " id")));
                }
                if tokens.is_empty() {
                    return Err(Error::Empty(concat!($kind, " tokens")));
                }
                Ok(Self {
                    id,
                    tokens,
                    language,
                })
            }
            fn id(&self) -> &str {
                &self.id
            }
            fn tokens(&self) -> &[String] {
                &self.tokens
            }
            fn language(&self) -> &LanguageTag {
                &self.language
            }
        }
    };
}

text_record!(Query, "query");
text_record!(Document, "document");

/// A contiguous window of a document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Passage {
    pub id: String,
    pub doc_id: String,
    pub offset: usize,
    pub tokens: Vec<String>,
    pub language: LanguageTag,
}

/// Passage ids are `doc_id#offset`; decoding splits at the last `#`, so any
/// doc id round-trips.
pub fn passage_id(doc_id: &str, offset: usize) -> String {
    format!("{doc_id}#{offset}")
}

pub fn parse_passage_id(id: &str) -> Option<(&str, usize)> {
    let (doc, off) = id.rsplit_once('#')?;
    let offset = off.parse().ok()?;
    // reject non-canonical offsets such as "007" so the mapping stays bijective
    if passage_id(doc, offset) != id {
        return None;
    }
    Some((doc, offset))
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Splits a document into overlapping windows.
///
/// Windows start at multiples of `stride`; a window whose span lies inside
/// the previously emitted one is skipped, so the tail of a document is not
/// emitted twice.
pub fn window_document(doc: &Document, size: usize, stride: usize) -> Result<Vec<Passage>> {
    if size == 0 || stride == 0 || stride > size {
        return Err(Error::InvalidConfig(format!(
            "window size {size} / stride {stride}: need 0 < stride <= size"
        )));
    }
    let len = doc.tokens.len();
    let mut out = Vec::new();
    let mut prev_end = 0usize;
    let mut offset = 0usize;
    while offset < len {
        let end = (offset + size).min(len);
        if out.is_empty() || end > prev_end {
            out.push(Passage {
                id: passage_id(&doc.id, offset),
                doc_id: doc.id.clone(),
                offset,
                tokens: doc.tokens[offset..end].to_vec(),
                language: doc.language.clone(),
            });
            prev_end = end;
        }
        offset += stride;
    }
    Ok(out)
}

/// Verifies ids are unique across a record set.
pub fn check_unique_ids<'a, I>(kind: &'static str, ids: I) -> Result<()>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::DuplicateId {
                kind,
                id: id.to_string(),
            });
        }
    }
    Ok(())
}

/// Graded relevance judgments. A missing pair is unjudged, which is not the
/// same as a judged grade of zero.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    by_query: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a judgment, returning the previous grade if the pair was already judged.
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) -> Option<u32> {
        self.by_query
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade)
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> Option<u32> {
        self.by_query.get(query_id)?.get(doc_id).copied()
    }

    pub fn judgments(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.by_query.get(query_id)
    }

    pub fn contains_query(&self, query_id: &str) -> bool {
        self.by_query.contains_key(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.by_query.keys().map(String::as_str)
    }

    /// Docs with grade > 0 for the query.
    pub fn relevant(&self, query_id: &str) -> impl Iterator<Item = (&str, u32)> {
        self.by_query
            .get(query_id)
            .into_iter()
            .flat_map(|m| m.iter())
            .filter(|(_, &g)| g > 0)
            .map(|(d, &g)| (d.as_str(), g))
    }

    /// All (query, doc, grade) triples in query then doc order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.by_query.iter().flat_map(|(q, docs)| {
            docs.iter()
                .map(move |(d, &g)| (q.as_str(), d.as_str(), g))
        })
    }

    pub fn len(&self) -> usize {
        self.by_query.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Keeps only the queries accepted by `keep`.
    pub fn retain_queries(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.by_query.retain(|q, _| keep(q));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn doc(len: usize) -> Document {
        Document {
            id: "d".into(),
            tokens: (0..len).map(|i| format!("t{i}")).collect(),
            language: LanguageTag::new("src").unwrap(),
        }
    }

    fn offsets(len: usize, size: usize, stride: usize) -> Vec<usize> {
        window_document(&doc(len), size, stride)
            .unwrap()
            .iter()
            .map(|p| p.offset)
            .collect()
    }

    #[test]
    fn short_document_is_one_window() {
        let ps = window_document(&doc(100), 180, 90).unwrap();
        assert_eq!(ps.len(), 1);
        assert_eq!(ps[0].tokens.len(), 100);
    }

    #[test]
    fn contained_tail_window_is_suppressed() {
        assert_eq!(offsets(200, 180, 90), vec![0, 90]);
        assert_eq!(offsets(271, 180, 90), vec![0, 90, 180]);
        assert_eq!(offsets(270, 180, 90), vec![0, 90]);
    }

    #[test]
    fn empty_document_has_no_passages() {
        let mut d = doc(1);
        d.tokens.clear();
        assert!(window_document(&d, 180, 90).unwrap().is_empty());
    }

    #[test]
    fn bad_window_parameters() {
        assert!(window_document(&doc(5), 0, 0).is_err());
        assert!(window_document(&doc(5), 4, 5).is_err());
        assert!(window_document(&doc(5), 4, 0).is_err());
    }

    #[test]
    fn passage_ids_round_trip() {
        assert_eq!(parse_passage_id("a#b#12"), Some(("a#b", 12)));
        assert_eq!(parse_passage_id(&passage_id("x", 0)), Some(("x", 0)));
        assert_eq!(parse_passage_id("x#07"), None);
        assert_eq!(parse_passage_id("x"), None);
    }

    #[test]
    fn tokenizer_lowercases_and_splits_punctuation() {
        assert_eq!(tokenize("Hello, World!  it's"), vec!["hello", "world", "it", "s"]);
        assert!(tokenize("  ...  ").is_empty());
    }

    #[test]
    fn records_reject_empty() {
        let tag = LanguageTag::new("src").unwrap();
        assert!(Query::from_parts("q".into(), vec![], tag.clone()).is_err());
        assert!(Query::from_parts("".into(), vec!["a".into()], tag).is_err());
        assert!(LanguageTag::new("").is_err());
    }

    #[test]
    fn unjudged_differs_from_grade_zero() {
        let mut q = Qrels::new();
        q.insert("q1", "d1", 0);
        assert_eq!(q.grade("q1", "d1"), Some(0));
        assert_eq!(q.grade("q1", "d2"), None);
        assert_eq!(q.relevant("q1").count(), 0);
    }

    #[test]
    fn duplicate_ids_detected() {
        assert!(check_unique_ids("query", ["a", "b"]).is_ok());
        assert!(matches!(
            check_unique_ids("query", ["a", "b", "a"]),
            Err(Error::DuplicateId { .. })
        ));
    }
}
