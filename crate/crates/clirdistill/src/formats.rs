//! Text artifact formats.
//!
//! | artifact | line format |
//! |---|---|
//! | queries, documents | `id<TAB>text` |
//! | passages | `doc_id#offset<TAB>text` (text may be empty) |
//! | qrels | `query_id 0 doc_id grade` |
//! | lexicon | `source<TAB>target<TAB>probability` |
//! | teacher scores | `query_id<TAB>passage_id<TAB>score` |
//! | candidates | `query_id<TAB>passage_id<TAB>rank` |
//! | runs | `query_id Q0 doc_id rank score tag` |
//!
//! Reals are written in the shortest form that parses back to the same
//! `f64`, so writing then reading is lossless.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use clirdistill_core::corpus::{check_unique_ids, parse_passage_id, tokenize, TextRecord};
use clirdistill_core::distill::{CandidateSet, TeacherScores, TrainingLog};
use clirdistill_core::eval::RunFile;
use clirdistill_core::{BilingualLexicon, LanguageTag, Passage, Qrels, Query};

use crate::error::{Error, Result};

/// Lexicon rows must sum to one within this before renormalization.
pub const LEXICON_TOLERANCE: f64 = 1e-6;

/// Calls `f` with the 1-based number and content of every non-blank line.
fn for_each_line(path: &Path, mut f: impl FnMut(usize, &str) -> Result<()>) -> Result<()> {
    let file = File::open(path).map_err(Error::io(path))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        f(i + 1, line)?;
    }
    Ok(())
}

/// Writes `body` to `path`, creating parent directories.
pub fn write_with(path: &Path, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(Error::io(parent))?;
    }
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(Error::io(path))
}

fn parse_real(path: &Path, line: usize, field: &str, what: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| Error::parse(path, line, format!("{what} `{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(path, line, format!("{what} `{field}` is not finite")));
    }
    Ok(v)
}

fn split_id_text<'l>(path: &Path, line_no: usize, line: &'l str) -> Result<(&'l str, &'l str)> {
    let (id, text) = line
        .split_once('\t')
        .ok_or_else(|| Error::parse(path, line_no, "expected `id<TAB>text`"))?;
    if id.is_empty() {
        return Err(Error::parse(path, line_no, "empty id"));
    }
    Ok((id, text))
}

/// Reads queries or documents, tokenizing the text.
pub fn read_collection<R: TextRecord>(path: &Path, language: &LanguageTag) -> Result<Vec<R>> {
    let mut out = Vec::new();
    for_each_line(path, |n, line| {
        let (id, text) = split_id_text(path, n, line)?;
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::parse(path, n, format!("record `{id}` has empty text")));
        }
        let record = R::from_parts(id.to_string(), tokens, language.clone())
            .map_err(|e| Error::parse(path, n, e.to_string()))?;
        out.push(record);
        Ok(())
    })?;
    check_unique_ids("record", out.iter().map(R::id)).map_err(|e| Error::invalid(path, e.to_string()))?;
    Ok(out)
}

/// Reads machine-translated queries. Translation may drop every token, so
/// unlike [`read_collection`] empty text is allowed.
pub fn read_translated_queries(path: &Path, language: &LanguageTag) -> Result<Vec<Query>> {
    let mut out = Vec::new();
    for_each_line(path, |n, line| {
        let (id, text) = split_id_text(path, n, line)?;
        out.push(Query {
            id: id.to_string(),
            tokens: tokenize(text),
            language: language.clone(),
        });
        Ok(())
    })?;
    check_unique_ids("query", out.iter().map(|q| q.id.as_str())).map_err(|e| Error::invalid(path, e.to_string()))?;
    Ok(out)
}

pub fn write_collection<R: TextRecord>(path: &Path, records: &[R]) -> Result<()> {
    write_with(path, |w| {
        for r in records {
            writeln!(w, "{}\t{}", r.id(), r.tokens().join(" "))?;
        }
        Ok(())
    })
}

/// Reads passages; doc id and offset come from the passage id.
pub fn read_passages(path: &Path, language: &LanguageTag) -> Result<Vec<Passage>> {
    let mut out = Vec::new();
    for_each_line(path, |n, line| {
        let (id, text) = split_id_text(path, n, line)?;
        let (doc, offset) = parse_passage_id(id)
            .ok_or_else(|| Error::parse(path, n, format!("passage id `{id}` is not `doc#offset`")))?;
        out.push(Passage {
            id: id.to_string(),
            doc_id: doc.to_string(),
            offset,
            tokens: tokenize(text),
            language: language.clone(),
        });
        Ok(())
    })?;
    check_unique_ids("passage", out.iter().map(|p| p.id.as_str()))
        .map_err(|e| Error::invalid(path, e.to_string()))?;
    Ok(out)
}

pub fn write_passages(path: &Path, passages: &[Passage]) -> Result<()> {
    write_with(path, |w| {
        for p in passages {
            writeln!(w, "{}\t{}", p.id, p.tokens.join(" "))?;
        }
        Ok(())
    })
}

pub fn read_qrels(path: &Path) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for_each_line(path, |n, line| {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [qid, _, doc, grade] = fields[..] else {
            return Err(Error::parse(path, n, "expected `query_id 0 doc_id grade`"));
        };
        let grade: u32 = grade
            .parse()
            .map_err(|_| Error::parse(path, n, format!("grade `{grade}` is not a non-negative integer")))?;
        if qrels.insert(qid, doc, grade).is_some() {
            return Err(Error::parse(path, n, format!("duplicate judgment ({qid}, {doc})")));
        }
        Ok(())
    })?;
    Ok(qrels)
}

pub fn write_qrels(path: &Path, qrels: &Qrels) -> Result<()> {
    write_with(path, |w| {
        for (q, d, g) in qrels.iter() {
            writeln!(w, "{q} 0 {d} {g}")?;
        }
        Ok(())
    })
}

/// Reads a lexicon, checking each row sums to one within
/// [`LEXICON_TOLERANCE`] and renormalizing it exactly.
pub fn read_lexicon(path: &Path) -> Result<BilingualLexicon> {
    let mut triples = Vec::new();
    for_each_line(path, |n, line| {
        let fields: Vec<&str> = line.split('\t').collect();
        let [s, t, p] = fields[..] else {
            return Err(Error::parse(path, n, "expected `source<TAB>target<TAB>probability`"));
        };
        triples.push((s.to_string(), t.to_string(), parse_real(path, n, p, "probability")?));
        Ok(())
    })?;
    BilingualLexicon::from_triples(triples, LEXICON_TOLERANCE, true).map_err(|e| Error::invalid(path, e.to_string()))
}

pub fn write_lexicon(path: &Path, lexicon: &BilingualLexicon) -> Result<()> {
    write_with(path, |w| {
        for (s, t, p) in lexicon.triples() {
            writeln!(w, "{s}\t{t}\t{p}")?;
        }
        Ok(())
    })
}

pub fn read_teacher_scores(path: &Path) -> Result<TeacherScores> {
    let mut scores = TeacherScores::new();
    for_each_line(path, |n, line| {
        let fields: Vec<&str> = line.split('\t').collect();
        let [q, p, s] = fields[..] else {
            return Err(Error::parse(path, n, "expected `query_id<TAB>passage_id<TAB>score`"));
        };
        let s = parse_real(path, n, s, "score")?;
        scores.insert(q, p, s).map_err(|e| Error::parse(path, n, e.to_string()))
    })?;
    Ok(scores)
}

pub fn write_teacher_scores(path: &Path, scores: &TeacherScores) -> Result<()> {
    write_with(path, |w| {
        for (q, p, s) in scores.iter() {
            writeln!(w, "{q}\t{p}\t{s}")?;
        }
        Ok(())
    })
}

pub fn read_candidates(path: &Path) -> Result<CandidateSet> {
    let mut lists: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
    for_each_line(path, |n, line| {
        let fields: Vec<&str> = line.split('\t').collect();
        let [q, p, r] = fields[..] else {
            return Err(Error::parse(path, n, "expected `query_id<TAB>passage_id<TAB>rank`"));
        };
        let rank: usize = r
            .parse()
            .map_err(|_| Error::parse(path, n, format!("rank `{r}` is not a positive integer")))?;
        let list = lists.entry(q.to_string()).or_default();
        if rank != list.len() + 1 {
            return Err(Error::parse(path, n, format!("rank {rank} for {q} should be {}", list.len() + 1)));
        }
        list.push((rank, p.to_string()));
        Ok(())
    })?;
    let mut set = CandidateSet::new();
    for (q, list) in lists {
        set.insert(&q, list.into_iter().map(|(_, p)| p).collect())
            .map_err(|e| Error::invalid(path, e.to_string()))?;
    }
    Ok(set)
}

pub fn write_candidates(path: &Path, candidates: &CandidateSet) -> Result<()> {
    write_with(path, |w| {
        for (q, ps) in candidates.iter() {
            for (i, p) in ps.iter().enumerate() {
                writeln!(w, "{q}\t{p}\t{}", i + 1)?;
            }
        }
        Ok(())
    })
}

pub fn read_run(path: &Path) -> Result<RunFile> {
    let mut tag: Option<String> = None;
    let mut lists: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    for_each_line(path, |n, line| {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [q, _, d, r, s, t] = fields[..] else {
            return Err(Error::parse(path, n, "expected `query_id Q0 doc_id rank score tag`"));
        };
        let rank: usize = r
            .parse()
            .map_err(|_| Error::parse(path, n, format!("rank `{r}` is not a positive integer")))?;
        let list = lists.entry(q.to_string()).or_default();
        if rank != list.len() + 1 {
            return Err(Error::parse(path, n, format!("rank {rank} for {q} should be {}", list.len() + 1)));
        }
        list.push((d.to_string(), parse_real(path, n, s, "score")?));
        tag.get_or_insert_with(|| t.to_string());
        Ok(())
    })?;
    let mut run = RunFile::new(tag.unwrap_or_default());
    for (q, list) in lists {
        run.insert_ranked(&q, list).map_err(|e| Error::invalid(path, e.to_string()))?;
    }
    Ok(run)
}

pub fn write_run(path: &Path, run: &RunFile) -> Result<()> {
    let tag = if run.tag.is_empty() { "run" } else { run.tag.as_str() };
    write_with(path, |w| {
        for (q, ranking) in run.iter() {
            for (i, (d, s)) in ranking.iter().enumerate() {
                writeln!(w, "{q} Q0 {d} {} {s} {tag}", i + 1)?;
            }
        }
        Ok(())
    })
}

pub fn write_training_log(path: &Path, log: &TrainingLog) -> Result<()> {
    write_with(path, |w| {
        writeln!(w, "epoch\tmean_loss\tbatches\tskipped_queries\tmax_update_norm")?;
        for e in &log.epochs {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                e.epoch, e.mean_loss, e.batches, e.skipped_queries, e.max_update_norm
            )?;
        }
        Ok(())
    })
}

pub fn read_training_log(path: &Path) -> Result<TrainingLog> {
    let mut log = TrainingLog::default();
    let mut header = true;
    for_each_line(path, |n, line| {
        if std::mem::take(&mut header) {
            return Ok(());
        }
        let f: Vec<&str> = line.split('\t').collect();
        let [epoch, loss, batches, skipped, update] = f[..] else {
            return Err(Error::parse(path, n, "expected 5 tab-separated fields"));
        };
        let int = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::parse(path, n, format!("`{s}` is not an integer")))
        };
        log.epochs.push(clirdistill_core::distill::EpochLog {
            epoch: int(epoch)?,
            mean_loss: parse_real(path, n, loss, "loss")?,
            batches: int(batches)?,
            skipped_queries: int(skipped)?,
            max_update_norm: parse_real(path, n, update, "update norm")?,
        });
        Ok(())
    })?;
    Ok(log)
}
