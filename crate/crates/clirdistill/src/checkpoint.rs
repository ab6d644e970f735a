//! Binary encoder checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "CLDCKPT1"
//! u32 dim, u32 out_dim, u32 term count
//! terms: u32 byte length + UTF-8, in vocabulary order
//! f64 embeddings (rows × dim), projection (dim × out_dim),
//!     query marker (dim), passage marker (dim)
//! ```
//!
//! Reals are stored as raw bit patterns, so a save/load cycle is bit-exact.

use std::fs;
use std::path::Path;

use clirdistill_core::encoder::{ParamTensors, Vocab};
use clirdistill_core::EncoderParams;

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CLDCKPT1";

pub fn to_bytes(params: &EncoderParams, path: &Path) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(MAGIC);
    w.len(params.dim, path)?;
    w.len(params.out_dim, path)?;
    let terms = params.vocab.terms();
    w.len(terms.len(), path)?;
    for t in terms {
        w.str(t, path)?;
    }
    for block in params.tensors.blocks() {
        w.f64s(block);
    }
    Ok(w.buf)
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<EncoderParams> {
    let mut r = Reader::new(bytes, path);
    r.expect_magic(MAGIC)?;
    let dim = r.len()?;
    let out_dim = r.len()?;
    let n_terms = r.len()?;
    let mut terms = Vec::with_capacity(n_terms.min(bytes.len()));
    for _ in 0..n_terms {
        terms.push(r.str()?);
    }
    let vocab = Vocab::new(terms.iter().cloned());
    if vocab.terms() != terms.as_slice() {
        return Err(Error::invalid(path, "vocabulary is not sorted and unique"));
    }
    let rows = vocab.rows();
    let overflow = || Error::invalid(path, "tensor shape overflows");
    let tensors = ParamTensors {
        embeddings: r.f64s(rows.checked_mul(dim).ok_or_else(overflow)?)?,
        projection: r.f64s(dim.checked_mul(out_dim).ok_or_else(overflow)?)?,
        query_marker: r.f64s(dim)?,
        passage_marker: r.f64s(dim)?,
    };
    r.finish()?;
    Ok(EncoderParams::from_parts(vocab, dim, out_dim, tensors)?)
}

pub fn save(path: &Path, params: &EncoderParams) -> Result<()> {
    let bytes = to_bytes(params, path)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(Error::io(parent))?;
    }
    fs::write(path, bytes).map_err(Error::io(path))
}

pub fn load(path: &Path) -> Result<EncoderParams> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    from_bytes(&bytes, path).map_err(|e| match e {
        Error::Model(m) => Error::invalid(path, m.to_string()),
        other => other,
    })
}
