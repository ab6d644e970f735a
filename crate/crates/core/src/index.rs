//! Centroid-routed late-interaction index with low-bit residual codes.
//!
//! Every passage token vector is assigned to its nearest centroid and its
//! residual is quantized per dimension. With one bit the code is the sign
//! of the residual (`r >= 0` is bit 1). With more bits, the sign picks a
//! half and the remaining bits pick a magnitude bucket bounded by
//! quantiles of that half. A bucket decodes to the mean residual of the
//! collection values that fell into it.
//!
//! Search probes the `nprobe` centroids closest to each query row, scores
//! the passages owning tokens there with MaxSim over decoded vectors, and
//! rescores the best `4k` with the stored full-precision vectors.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::corpus::Passage;
use crate::distill::PassageSelector;
use crate::encoder::{dot, encode, maxsim_score, EncoderParams, MultiVector, Role};
use crate::error::{Error, Result};
use crate::eval::sort_by_score_then_id;
use crate::kmeans::{kmeans, nearest};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct IndexConfig {
    pub centroids: usize,
    pub nbits: u32,
    pub iterations: usize,
    /// At most this many token vectors are used to fit the centroids.
    pub training_sample: usize,
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            centroids: 64,
            nbits: 1,
            iterations: 10,
            training_sample: 32_768,
            seed: 0,
        }
    }
}

/// Passage collection encoded at full precision.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedCollection {
    pub ids: Vec<String>,
    /// `None` for passages with no tokens.
    pub vectors: Vec<Option<MultiVector>>,
}

impl EncodedCollection {
    /// Encodes passages in id order.
    pub fn new<'p, I>(params: &EncoderParams, passages: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'p Passage>,
    {
        let mut items: Vec<&Passage> = passages.into_iter().collect();
        items.sort_by(|a, b| a.id.cmp(&b.id));
        let mut ids = Vec::with_capacity(items.len());
        let mut vectors = Vec::with_capacity(items.len());
        for p in items {
            if ids.last() == Some(&p.id) {
                return Err(Error::DuplicateId {
                    kind: "passage",
                    id: p.id.clone(),
                });
            }
            ids.push(p.id.clone());
            vectors.push(if p.tokens.is_empty() {
                None
            } else {
                Some(encode(params, &p.tokens, Role::Passage)?)
            });
        }
        Ok(Self { ids, vectors })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn scores(&self, q: &MultiVector) -> Result<Vec<f64>> {
        self.vectors
            .iter()
            .map(|v| match v {
                Some(v) => maxsim_score(q, v),
                None => Ok(f64::NEG_INFINITY),
            })
            .collect()
    }

    pub fn search(&self, q: &MultiVector, k: usize) -> Result<Vec<(String, f64)>> {
        let mut hits: Vec<(String, f64)> = self
            .ids
            .iter()
            .zip(self.scores(q)?)
            .filter(|(_, s)| s.is_finite())
            .map(|(id, s)| (id.clone(), s))
            .collect();
        sort_by_score_then_id(&mut hits);
        hits.truncate(k);
        Ok(hits)
    }
}

/// Exact MaxSim selector over an encoded collection.
pub struct ExactSelector<'a> {
    pub params: &'a EncoderParams,
    pub collection: &'a EncodedCollection,
}

impl PassageSelector for ExactSelector<'_> {
    fn passage_ids(&self) -> &[String] {
        &self.collection.ids
    }

    fn score_all(&self, query: &[String]) -> core::result::Result<Vec<f64>, String> {
        let q = encode(self.params, query, Role::Query).map_err(|e| format!("{e}"))?;
        self.collection.scores(&q).map_err(|e| format!("{e}"))
    }
}

/// Brute-force MaxSim over every passage.
pub fn exact_search<'p, I>(
    params: &EncoderParams,
    passages: I,
    query_tokens: &[String],
    k: usize,
) -> Result<Vec<(String, f64)>>
where
    I: IntoIterator<Item = &'p Passage>,
{
    let collection = EncodedCollection::new(params, passages)?;
    let q = encode(params, query_tokens, Role::Query)?;
    collection.search(&q, k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaidIndex {
    pub dim: usize,
    pub nbits: u32,
    /// K × dim
    pub centroids: Vec<f64>,
    /// Sorted passage ids.
    pub passage_ids: Vec<String>,
    /// Token range of each passage in the token arrays.
    pub passage_offsets: Vec<(u32, u32)>,
    /// Owning passage of each token.
    pub token_passage: Vec<u32>,
    pub token_centroid: Vec<u32>,
    /// One bucket index per (token, dimension), row-major.
    pub codes: Vec<u8>,
    /// dim × 2^nbits decoded residual values.
    pub bucket_values: Vec<f64>,
    /// dim × (2^(nbits-1) - 1) magnitude cutoffs, empty when nbits = 1.
    pub bucket_cutoffs: Vec<f64>,
    /// Token positions per centroid, ascending.
    pub inverted: Vec<Vec<u32>>,
    /// Full-precision token vectors, tokens × dim.
    pub vectors: Vec<f64>,
}

fn buckets(nbits: u32) -> usize {
    1usize << nbits
}

fn check_nbits(nbits: u32) -> Result<()> {
    if matches!(nbits, 1 | 2 | 4) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("nbits must be 1, 2 or 4, got {nbits}")))
    }
}

/// Bucket of a residual value given the magnitude cutoffs of one dimension.
fn bucket_of(r: f64, cutoffs: &[f64], half: usize) -> usize {
    let mag = r.abs();
    let level = cutoffs.iter().take_while(|&&c| mag >= c).count();
    if r >= 0.0 {
        half + level
    } else {
        half - 1 - level
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

pub fn build_index<'p, I>(params: &EncoderParams, passages: I, cfg: &IndexConfig) -> Result<PlaidIndex>
where
    I: IntoIterator<Item = &'p Passage>,
{
    check_nbits(cfg.nbits)?;
    let collection = EncodedCollection::new(params, passages)?;
    if collection.is_empty() {
        return Err(Error::Empty("index passages"));
    }
    let dim = params.out_dim;
    let mut vectors = Vec::new();
    let mut token_passage = Vec::new();
    let mut passage_offsets = Vec::with_capacity(collection.len());
    for (n, v) in collection.vectors.iter().enumerate() {
        let start = token_passage.len() as u32;
        if let Some(v) = v {
            vectors.extend_from_slice(v.as_slice());
            token_passage.extend(core::iter::repeat(n as u32).take(v.len()));
        }
        passage_offsets.push((start, token_passage.len() as u32));
    }
    let n_tokens = token_passage.len();
    if n_tokens == 0 {
        return Err(Error::Empty("index token vectors"));
    }
    if cfg.centroids == 0 || cfg.centroids > n_tokens {
        return Err(Error::InvalidConfig(format!(
            "{} centroids for {n_tokens} token vectors",
            cfg.centroids
        )));
    }

    let sample = if n_tokens > cfg.training_sample.max(cfg.centroids) {
        let mut r = rng::rng_for(cfg.seed, &[b"index-sample"]);
        let mut picked = rand::seq::index::sample(&mut r, n_tokens, cfg.training_sample.max(cfg.centroids)).into_vec();
        picked.sort_unstable();
        picked
            .into_iter()
            .flat_map(|i| vectors[i * dim..(i + 1) * dim].iter().copied())
            .collect()
    } else {
        vectors.clone()
    };
    let centroids = kmeans(&sample, dim, cfg.centroids, cfg.iterations, cfg.seed)?.centroids;

    let mut token_centroid = Vec::with_capacity(n_tokens);
    let mut residuals = Vec::with_capacity(n_tokens * dim);
    for t in 0..n_tokens {
        let v = &vectors[t * dim..(t + 1) * dim];
        let (c, _) = nearest(v, &centroids, dim);
        token_centroid.push(c as u32);
        residuals.extend(v.iter().zip(&centroids[c * dim..(c + 1) * dim]).map(|(x, y)| x - y));
    }

    let nb = buckets(cfg.nbits);
    let half = nb / 2;
    let mut bucket_cutoffs = Vec::with_capacity(dim * (half - 1));
    for d in 0..dim {
        if half == 1 {
            continue;
        }
        let mut mags: Vec<f64> = (0..n_tokens).map(|t| residuals[t * dim + d].abs()).collect();
        mags.sort_by(f64::total_cmp);
        // the same magnitude cutoffs serve both signs
        for level in 1..half {
            bucket_cutoffs.push(quantile(&mags, level as f64 / half as f64));
        }
    }
    let cut_stride = half - 1;
    let mut codes = Vec::with_capacity(n_tokens * dim);
    let mut sums = alloc::vec![0.0; dim * nb];
    let mut counts = alloc::vec![0usize; dim * nb];
    for t in 0..n_tokens {
        for d in 0..dim {
            let r = residuals[t * dim + d];
            let b = bucket_of(r, &bucket_cutoffs[d * cut_stride..(d + 1) * cut_stride], half);
            codes.push(b as u8);
            sums[d * nb + b] += r;
            counts[d * nb + b] += 1;
        }
    }
    let bucket_values = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();

    let mut inverted = alloc::vec![Vec::new(); cfg.centroids];
    for (t, &c) in token_centroid.iter().enumerate() {
        inverted[c as usize].push(t as u32);
    }

    Ok(PlaidIndex {
        dim,
        nbits: cfg.nbits,
        centroids,
        passage_ids: collection.ids,
        passage_offsets,
        token_passage,
        token_centroid,
        codes,
        bucket_values,
        bucket_cutoffs,
        inverted,
        vectors,
    })
}

impl PlaidIndex {
    pub fn num_centroids(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn num_tokens(&self) -> usize {
        self.token_passage.len()
    }

    /// Checks the structural invariants, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        check_nbits(self.nbits)?;
        let (k, d, t) = (self.num_centroids(), self.dim, self.num_tokens());
        let nb = buckets(self.nbits);
        let bad = |what: &str| Err(Error::InvalidConfig(format!("corrupt index: {what}")));
        if d == 0 || k == 0 || self.centroids.len() != k * d {
            return bad("centroid shape");
        }
        if self.token_centroid.len() != t || self.codes.len() != t * d || self.vectors.len() != t * d {
            return bad("token array lengths");
        }
        if self.bucket_values.len() != d * nb || self.bucket_cutoffs.len() != d * (nb / 2 - 1) {
            return bad("bucket tables");
        }
        if self.passage_offsets.len() != self.passage_ids.len() || self.inverted.len() != k {
            return bad("passage or inverted tables");
        }
        let mut expected = 0u32;
        for (n, &(s, e)) in self.passage_offsets.iter().enumerate() {
            if s != expected || e < s || self.token_passage[s as usize..e as usize].iter().any(|&p| p as usize != n) {
                return bad("passage offsets");
            }
            expected = e;
        }
        if expected as usize != t {
            return bad("passage offsets do not cover all tokens");
        }
        if self.codes.iter().any(|&c| c as usize >= nb) {
            return bad("code out of range");
        }
        let listed: usize = self.inverted.iter().map(Vec::len).sum();
        if listed != t {
            return bad("inverted lists do not partition tokens");
        }
        for (c, list) in self.inverted.iter().enumerate() {
            if list.iter().any(|&tok| self.token_centroid.get(tok as usize) != Some(&(c as u32))) {
                return bad("inverted list disagrees with assignments");
            }
        }
        Ok(())
    }

    /// Decoded, renormalized vector of a token. With `use_buckets == false`
    /// the residual is dropped and only the centroid is used.
    pub fn reconstruct(&self, token: usize, use_buckets: bool) -> Vec<f64> {
        let d = self.dim;
        let mut v = alloc::vec![0.0; d];
        if use_buckets {
            self.reconstruct_into(token, &mut v);
        } else {
            let c = self.token_centroid[token] as usize;
            v.copy_from_slice(&self.centroids[c * d..(c + 1) * d]);
            let norm = libm::sqrt(dot(&v, &v));
            if norm > 0.0 {
                for x in v.iter_mut() {
                    *x /= norm;
                }
            }
        }
        v
    }

    /// Mean L2 distance between stored vectors and their reconstructions.
    pub fn reconstruction_error(&self, use_buckets: bool) -> f64 {
        let d = self.dim;
        let total: f64 = (0..self.num_tokens())
            .map(|t| {
                let v = &self.vectors[t * d..(t + 1) * d];
                let r = self.reconstruct(t, use_buckets);
                libm::sqrt(v.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            })
            .sum();
        total / self.num_tokens() as f64
    }

    fn passage_tokens(&self, n: usize) -> core::ops::Range<usize> {
        let (s, e) = self.passage_offsets[n];
        s as usize..e as usize
    }

    /// Passages owning a token in any of the probed centroid lists.
    pub fn probe(&self, query: &MultiVector, nprobe: usize) -> Vec<u32> {
        let k = self.num_centroids();
        let nprobe = nprobe.clamp(1, k);
        let mut owners = BTreeSet::new();
        for q in query.rows() {
            let mut sims: Vec<(f64, usize)> = self
                .centroids
                .chunks_exact(self.dim)
                .enumerate()
                .map(|(c, cent)| (dot(q, cent), c))
                .collect();
            sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(_, c) in &sims[..nprobe] {
                owners.extend(self.inverted[c].iter().map(|&t| self.token_passage[t as usize]));
            }
        }
        owners.into_iter().collect()
    }

    fn reconstruct_into(&self, token: usize, out: &mut [f64]) {
        let d = self.dim;
        let nb = buckets(self.nbits);
        let c = self.token_centroid[token] as usize;
        for (dim, x) in out.iter_mut().enumerate() {
            let b = self.codes[token * d + dim] as usize;
            *x = self.centroids[c * d + dim] + self.bucket_values[dim * nb + b];
        }
        let norm = libm::sqrt(dot(out, out));
        if norm > 0.0 {
            for x in out.iter_mut() {
                *x /= norm;
            }
        }
    }

    /// MaxSim of the query against a passage, on decoded or stored vectors.
    fn passage_maxsim(&self, query: &MultiVector, n: usize, decoded: bool, buf: &mut Vec<f64>) -> f64 {
        let d = self.dim;
        let range = self.passage_tokens(n);
        let rows: &[f64] = if decoded {
            buf.clear();
            buf.resize(range.len() * d, 0.0);
            for (i, t) in range.enumerate() {
                self.reconstruct_into(t, &mut buf[i * d..(i + 1) * d]);
            }
            buf
        } else {
            &self.vectors[range.start * d..range.end * d]
        };
        query
            .rows()
            .map(|q| rows.chunks_exact(d).map(|p| dot(q, p)).fold(f64::NEG_INFINITY, f64::max))
            .sum()
    }

    pub fn search(&self, query: &MultiVector, k: usize, nprobe: usize) -> Result<Vec<(String, f64)>> {
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: query.dim(),
            });
        }
        let mut buf = Vec::new();
        let mut approx: Vec<(String, f64)> = self
            .probe(query, nprobe)
            .into_iter()
            .map(|n| {
                let n = n as usize;
                let s = self.passage_maxsim(query, n, true, &mut buf);
                (self.passage_ids[n].clone(), s)
            })
            .collect();
        sort_by_score_then_id(&mut approx);
        approx.truncate(4 * k);
        let mut exact: Vec<(String, f64)> = approx
            .into_iter()
            .map(|(id, _)| {
                let n = self
                    .passage_ids
                    .binary_search(&id)
                    .expect("ids come from this index");
                let s = self.passage_maxsim(query, n, false, &mut buf);
                (id, s)
            })
            .collect();
        sort_by_score_then_id(&mut exact);
        exact.truncate(k);
        Ok(exact)
    }
}

/// Encodes the query and searches the index.
pub fn ann_search(
    index: &PlaidIndex,
    params: &EncoderParams,
    query_tokens: &[String],
    k: usize,
    nprobe: usize,
) -> Result<Vec<(String, f64)>> {
    let q = encode(params, query_tokens, Role::Query)?;
    index.search(&q, k, nprobe)
}
