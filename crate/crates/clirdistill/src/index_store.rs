//! On-disk layout of a [`PlaidIndex`].
//!
//! An index is a directory holding `manifest.txt` and one flat file per
//! array. The manifest records the shape and a SHA-256 of every file; a
//! load fails unless every file is present with the recorded size and hash. Token-to-passage
//! links and the inverted lists are derived data and are rebuilt on load.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use clirdistill_core::index::PlaidIndex;

use crate::binio::{Reader, Writer};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};

const FORMAT: &str = "clirdistill-index 1";
const MANIFEST: &str = "manifest.txt";

fn f64_file(xs: &[f64]) -> Vec<u8> {
    let mut w = Writer::default();
    w.f64s(xs);
    w.buf
}

fn u32_file(xs: &[u32]) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32s(xs);
    w.buf
}

pub fn save(dir: &Path, index: &PlaidIndex) -> Result<()> {
    index.validate()?;
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut ids = String::new();
    for id in &index.passage_ids {
        if id.contains(['\n', '\r']) {
            return Err(Error::invalid(dir, format!("passage id {id:?} contains a line break")));
        }
        ids.push_str(id);
        ids.push('\n');
    }
    let offsets: Vec<u32> = index.passage_offsets.iter().flat_map(|&(s, e)| [s, e]).collect();
    let files: [(&str, Vec<u8>); 8] = [
        ("centroids.f64", f64_file(&index.centroids)),
        ("passage_ids.txt", ids.into_bytes()),
        ("passage_offsets.u32", u32_file(&offsets)),
        ("token_centroid.u32", u32_file(&index.token_centroid)),
        ("codes.u8", index.codes.clone()),
        ("bucket_values.f64", f64_file(&index.bucket_values)),
        ("bucket_cutoffs.f64", f64_file(&index.bucket_cutoffs)),
        ("vectors.f64", f64_file(&index.vectors)),
    ];
    let mut manifest = format!(
        "{FORMAT}\ndim {}\nnbits {}\ncentroids {}\npassages {}\ntokens {}\n",
        index.dim,
        index.nbits,
        index.num_centroids(),
        index.passage_ids.len(),
        index.num_tokens()
    );
    for (name, bytes) in &files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(Error::io(&path))?;
        manifest.push_str(&format!("file {name} {}\n", sha256_hex(bytes)));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(Error::io(&path))
}

struct Manifest {
    fields: BTreeMap<String, usize>,
    files: BTreeMap<String, String>,
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l) != Some(FORMAT) {
        return Err(Error::parse(&path, 1, format!("expected header `{FORMAT}`")));
    }
    let mut m = Manifest {
        fields: BTreeMap::new(),
        files: BTreeMap::new(),
    };
    for (i, line) in lines {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts[..] {
            ["file", name, digest] => {
                m.files.insert(name.to_string(), digest.to_string());
            }
            [key, value] => {
                let v = value
                    .parse()
                    .map_err(|_| Error::parse(&path, i + 1, format!("`{value}` is not an integer")))?;
                m.fields.insert(key.to_string(), v);
            }
            [] => {}
            _ => return Err(Error::parse(&path, i + 1, "expected `key value` or `file name sha256`")),
        }
    }
    Ok(m)
}

impl Manifest {
    fn field(&self, dir: &Path, key: &str) -> Result<usize> {
        self.fields
            .get(key)
            .copied()
            .ok_or_else(|| Error::invalid(dir.join(MANIFEST), format!("missing `{key}`")))
    }

    /// Reads a listed file and checks its digest.
    fn read(&self, dir: &Path, name: &str) -> Result<Vec<u8>> {
        let expected = self
            .files
            .get(name)
            .ok_or_else(|| Error::invalid(dir.join(MANIFEST), format!("no entry for {name}")))?;
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(Error::io(&path))?;
        if sha256_hex(&bytes) != *expected {
            return Err(Error::invalid(&path, "checksum does not match the manifest"));
        }
        Ok(bytes)
    }
}

fn exact_f64s(bytes: &[u8], n: usize, path: &Path) -> Result<Vec<f64>> {
    let mut r = Reader::new(bytes, path);
    let v = r.f64s(n)?;
    r.finish()?;
    Ok(v)
}

fn exact_u32s(bytes: &[u8], n: usize, path: &Path) -> Result<Vec<u32>> {
    let mut r = Reader::new(bytes, path);
    let v = r.u32s(n)?;
    r.finish()?;
    Ok(v)
}

pub fn load(dir: &Path) -> Result<PlaidIndex> {
    let m = read_manifest(dir)?;
    let d = m.field(dir, "dim")?;
    let nbits = u32::try_from(m.field(dir, "nbits")?).map_err(|_| Error::invalid(dir, "nbits out of range"))?;
    let k = m.field(dir, "centroids")?;
    let n = m.field(dir, "passages")?;
    let t = m.field(dir, "tokens")?;
    if !matches!(nbits, 1 | 2 | 4) {
        return Err(Error::invalid(dir.join(MANIFEST), format!("nbits {nbits}")));
    }
    let nb = 1usize << nbits;
    let overflow = || Error::invalid(dir.join(MANIFEST), "shape overflows");
    let td = t.checked_mul(d).ok_or_else(overflow)?;

    let ids_text = String::from_utf8(m.read(dir, "passage_ids.txt")?)
        .map_err(|_| Error::invalid(dir.join("passage_ids.txt"), "not UTF-8"))?;
    let passage_ids: Vec<String> = ids_text.lines().map(str::to_string).collect();
    if passage_ids.len() != n {
        return Err(Error::invalid(
            dir.join("passage_ids.txt"),
            format!("{} ids, manifest says {n}", passage_ids.len()),
        ));
    }
    let file = |name: &str| dir.join(name);
    let flat = exact_u32s(&m.read(dir, "passage_offsets.u32")?, 2 * n, &file("passage_offsets.u32"))?;
    let passage_offsets: Vec<(u32, u32)> = flat.chunks_exact(2).map(|c| (c[0], c[1])).collect();
    let token_centroid = exact_u32s(&m.read(dir, "token_centroid.u32")?, t, &file("token_centroid.u32"))?;
    let codes = m.read(dir, "codes.u8")?;
    if codes.len() != td {
        return Err(Error::invalid(file("codes.u8"), format!("{} codes, expected {td}", codes.len())));
    }

    let mut token_passage = vec![0u32; t];
    for (p, &(s, e)) in passage_offsets.iter().enumerate() {
        if s > e || e as usize > t {
            return Err(Error::invalid(file("passage_offsets.u32"), format!("bad range for passage {p}")));
        }
        token_passage[s as usize..e as usize].fill(p as u32);
    }
    let mut inverted = vec![Vec::new(); k];
    for (tok, &c) in token_centroid.iter().enumerate() {
        let list = inverted
            .get_mut(c as usize)
            .ok_or_else(|| Error::invalid(file("token_centroid.u32"), format!("centroid {c} out of range")))?;
        list.push(tok as u32);
    }

    let index = PlaidIndex {
        dim: d,
        nbits,
        centroids: exact_f64s(&m.read(dir, "centroids.f64")?, k.checked_mul(d).ok_or_else(overflow)?, &file("centroids.f64"))?,
        passage_ids,
        passage_offsets,
        token_passage,
        token_centroid,
        codes,
        bucket_values: exact_f64s(&m.read(dir, "bucket_values.f64")?, d * nb, &file("bucket_values.f64"))?,
        bucket_cutoffs: exact_f64s(
            &m.read(dir, "bucket_cutoffs.f64")?,
            d * (nb / 2 - 1),
            &file("bucket_cutoffs.f64"),
        )?,
        inverted,
        vectors: exact_f64s(&m.read(dir, "vectors.f64")?, td, &file("vectors.f64"))?,
    };
    index.validate().map_err(|e| Error::invalid(dir, e.to_string()))?;
    Ok(index)
}
