//! The student dual-encoder.
//!
//! A token's vector is `normalize((embedding[token] + marker[role]) · W)`,
//! one row per token. Query/passage relevance is MaxSim: each query row
//! takes its best dot product over passage rows, and those maxima are summed.
//!
//! Everything here is differentiated by hand. MaxSim is treated as
//! piecewise linear with the argmax fixed (ties go to the lowest passage
//! row), which makes the subgradient deterministic.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::lexicon::BilingualLexicon;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Query,
    Passage,
}

/// Sorted term list plus a trailing out-of-vocabulary row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    terms: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocab {
    pub fn new<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut terms: Vec<String> = terms.into_iter().map(Into::into).collect();
        terms.sort();
        terms.dedup();
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { terms, index }
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// Number of embedding rows, including the OOV row.
    pub fn rows(&self) -> usize {
        self.terms.len() + 1
    }

    pub fn oov_row(&self) -> usize {
        self.terms.len()
    }

    pub fn row(&self, term: &str) -> usize {
        self.index.get(term).copied().unwrap_or(self.terms.len())
    }

    /// Every source and target term of a lexicon.
    pub fn from_lexicon(lexicon: &BilingualLexicon) -> Self {
        Self::new(lexicon.sources().chain(lexicon.targets().iter().map(String::as_str)))
    }
}

/// Learnable tensors, row-major. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensors {
    /// rows × dim
    pub embeddings: Vec<f64>,
    /// dim × out_dim
    pub projection: Vec<f64>,
    pub query_marker: Vec<f64>,
    pub passage_marker: Vec<f64>,
}

impl ParamTensors {
    pub fn zeros(rows: usize, dim: usize, out_dim: usize) -> Self {
        Self {
            embeddings: alloc::vec![0.0; rows * dim],
            projection: alloc::vec![0.0; dim * out_dim],
            query_marker: alloc::vec![0.0; dim],
            passage_marker: alloc::vec![0.0; dim],
        }
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self {
            embeddings: alloc::vec![0.0; other.embeddings.len()],
            projection: alloc::vec![0.0; other.projection.len()],
            query_marker: alloc::vec![0.0; other.query_marker.len()],
            passage_marker: alloc::vec![0.0; other.passage_marker.len()],
        }
    }

    pub fn blocks(&self) -> [&[f64]; 4] {
        [
            &self.embeddings,
            &self.projection,
            &self.query_marker,
            &self.passage_marker,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 4] {
        [
            &mut self.embeddings,
            &mut self.projection,
            &mut self.query_marker,
            &mut self.passage_marker,
        ]
    }

    pub fn fill_zero(&mut self) {
        for block in self.blocks_mut() {
            block.fill(0.0);
        }
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(
            self.blocks()
                .iter()
                .flat_map(|b| b.iter())
                .map(|x| x * x)
                .sum::<f64>(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub vocab: Vocab,
    pub dim: usize,
    pub out_dim: usize,
    pub tensors: ParamTensors,
}

impl EncoderParams {
    /// Random initialization: entries are N(0, 1/dim).
    pub fn init(vocab: Vocab, dim: usize, out_dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 || out_dim == 0 {
            return Err(Error::InvalidConfig("encoder dims must be positive".into()));
        }
        let mut r = rng::rng_for(seed, &[b"encoder-init"]);
        let scale = 1.0 / libm::sqrt(dim as f64);
        let mut tensors = ParamTensors::zeros(vocab.rows(), dim, out_dim);
        for block in tensors.blocks_mut() {
            for x in block.iter_mut() {
                *x = scale * rng::standard_normal(&mut r);
            }
        }
        Ok(Self {
            vocab,
            dim,
            out_dim,
            tensors,
        })
    }

    /// Stand-in for a pretrained bilingual encoder.
    ///
    /// Starts from [`init`](Self::init), then moves each lexicon target's
    /// embedding a fraction `alignment` of the way towards the
    /// translation-weighted mean of its sources' embeddings. Role markers
    /// start at zero. `alignment = 0` keeps the random target rows and
    /// `alignment = 1` makes every one-to-one translation pair identical.
    pub fn warm_start(
        vocab: Vocab,
        lexicon: &BilingualLexicon,
        dim: usize,
        out_dim: usize,
        alignment: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&alignment) {
            return Err(Error::InvalidConfig(format!(
                "alignment must be in [0, 1], got {alignment}"
            )));
        }
        let mut params = Self::init(vocab, dim, out_dim, seed)?;
        params.tensors.query_marker.fill(0.0);
        params.tensors.passage_marker.fill(0.0);
        let random = params.tensors.embeddings.clone();
        let inverse = lexicon.invert();
        let mut mean = alloc::vec![0.0; dim];
        for target in lexicon.targets() {
            let row = params.vocab.row(target);
            let Some(sources) = inverse.translations(target) else {
                continue;
            };
            if row == params.vocab.oov_row() {
                continue;
            }
            mean.fill(0.0);
            for (source, p) in sources {
                let s = params.vocab.row(source);
                for (m, x) in mean.iter_mut().zip(&random[s * dim..(s + 1) * dim]) {
                    *m += p * x;
                }
            }
            for (e, m) in params.tensors.embeddings[row * dim..(row + 1) * dim]
                .iter_mut()
                .zip(&mean)
            {
                *e = alignment * m + (1.0 - alignment) * *e;
            }
        }
        Ok(params)
    }

    /// Assembles parameters from stored tensors, checking every shape.
    pub fn from_parts(vocab: Vocab, dim: usize, out_dim: usize, tensors: ParamTensors) -> Result<Self> {
        let check = |expected: usize, found: usize| {
            if expected == found {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { expected, found })
            }
        };
        check(vocab.rows() * dim, tensors.embeddings.len())?;
        check(dim * out_dim, tensors.projection.len())?;
        check(dim, tensors.query_marker.len())?;
        check(dim, tensors.passage_marker.len())?;
        if !tensors.is_finite() {
            return Err(Error::NonFinite { stage: "parameter load" });
        }
        Ok(Self {
            vocab,
            dim,
            out_dim,
            tensors,
        })
    }

    fn marker(&self, role: Role) -> &[f64] {
        match role {
            Role::Query => &self.tensors.query_marker,
            Role::Passage => &self.tensors.passage_marker,
        }
    }

    fn embedding(&self, row: usize) -> &[f64] {
        &self.tensors.embeddings[row * self.dim..(row + 1) * self.dim]
    }
}

/// Per-token unit vectors, row-major `n × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiVector {
    data: Vec<f64>,
    dim: usize,
}

impl MultiVector {
    /// Wraps row-major data; rows are taken as given (no renormalization).
    pub fn from_rows(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || data.is_empty() {
            return Err(Error::Empty("multi-vector"));
        }
        if data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: data.len() % dim,
            });
        }
        Ok(Self { data, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Forward pass for one token, kept for back-propagation.
struct TokenCache {
    row: usize,
    /// embedding + marker
    input: Vec<f64>,
    norm: f64,
}

fn encode_cached(
    params: &EncoderParams,
    tokens: &[impl AsRef<str>],
    role: Role,
) -> Result<(MultiVector, Vec<TokenCache>)> {
    if tokens.is_empty() {
        return Err(Error::Empty("token list"));
    }
    let (d, dp) = (params.dim, params.out_dim);
    let marker = params.marker(role);
    let w = &params.tensors.projection;
    let mut data = alloc::vec![0.0; tokens.len() * dp];
    let mut cache = Vec::with_capacity(tokens.len());
    for (i, tok) in tokens.iter().enumerate() {
        let row = params.vocab.row(tok.as_ref());
        let input: Vec<f64> = params
            .embedding(row)
            .iter()
            .zip(marker)
            .map(|(e, m)| e + m)
            .collect();
        let out = &mut data[i * dp..(i + 1) * dp];
        for (a, &xa) in input.iter().enumerate() {
            let w_row = &w[a * dp..(a + 1) * dp];
            for (o, &wab) in out.iter_mut().zip(w_row) {
                *o += xa * wab;
            }
        }
        let norm = libm::sqrt(dot(out, out));
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::NonFinite { stage: "encode" });
        }
        for o in out.iter_mut() {
            *o /= norm;
        }
        debug_assert_eq!(input.len(), d);
        cache.push(TokenCache { row, input, norm });
    }
    Ok((MultiVector { data, dim: dp }, cache))
}

/// Encodes a token sequence into unit-norm rows.
pub fn encode(params: &EncoderParams, tokens: &[impl AsRef<str>], role: Role) -> Result<MultiVector> {
    encode_cached(params, tokens, role).map(|(mv, _)| mv)
}

/// Index of the best passage row for a query row; ties go to the lowest index.
fn best_row(q: &[f64], p: &MultiVector) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, row) in p.rows().enumerate() {
        let s = dot(q, row);
        if s > best.1 {
            best = (j, s);
        }
    }
    best
}

/// Σ over query rows of the max dot product with any passage row.
pub fn maxsim_score(q: &MultiVector, p: &MultiVector) -> Result<f64> {
    if q.dim != p.dim {
        return Err(Error::DimensionMismatch {
            expected: q.dim,
            found: p.dim,
        });
    }
    Ok(q.rows().map(|qi| best_row(qi, p).1).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum KlDirection {
    /// KL(student ‖ teacher), the default.
    #[default]
    StudentTeacher,
    /// KL(teacher ‖ student), the usual distillation direction.
    TeacherStudent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct LossConfig {
    pub student_temperature: f64,
    pub teacher_temperature: f64,
    pub direction: KlDirection,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            student_temperature: 1.0,
            teacher_temperature: 1.0,
            direction: KlDirection::StudentTeacher,
        }
    }
}

/// Log-softmax of `x / temperature`.
pub fn log_softmax(x: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = x.iter().map(|v| v / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(scaled.iter().map(|v| libm::exp(v - max)).sum::<f64>());
    scaled.iter().map(|v| v - lse).collect()
}

/// KL divergence between softmaxed student logits and teacher scores, and
/// its derivative with respect to the student logits.
pub fn kl_from_logits(logits: &[f64], teacher: &[f64], cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    if logits.len() != teacher.len() {
        return Err(Error::LengthMismatch {
            left: logits.len(),
            right: teacher.len(),
        });
    }
    let tau = cfg.student_temperature;
    let log_s = log_softmax(logits, tau);
    let log_t = log_softmax(teacher, cfg.teacher_temperature);
    if log_s.iter().chain(&log_t).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { stage: "softmax" });
    }
    let p_s: Vec<f64> = log_s.iter().map(|&l| libm::exp(l)).collect();
    let (loss, grad) = match cfg.direction {
        KlDirection::StudentTeacher => {
            let a: Vec<f64> = log_s.iter().zip(&log_t).map(|(s, t)| s - t).collect();
            let loss: f64 = p_s.iter().zip(&a).map(|(p, a)| p * a).sum();
            let grad = p_s.iter().zip(&a).map(|(p, ak)| p * (ak - loss) / tau).collect();
            (loss, grad)
        }
        KlDirection::TeacherStudent => {
            let p_t: Vec<f64> = log_t.iter().map(|&l| libm::exp(l)).collect();
            let loss: f64 = p_t
                .iter()
                .zip(log_t.iter().zip(&log_s))
                .map(|(p, (t, s))| p * (t - s))
                .sum();
            let grad = p_s.iter().zip(&p_t).map(|(s, t)| (s - t) / tau).collect();
            (loss, grad)
        }
    };
    if !loss.is_finite() {
        return Err(Error::NonFinite { stage: "loss" });
    }
    Ok((loss, grad))
}

/// Cross-entropy of softmaxed logits against one positive, with its logit gradient.
pub fn cross_entropy_from_logits(logits: &[f64], positive: usize, temperature: f64) -> Result<(f64, Vec<f64>)> {
    if positive >= logits.len() {
        return Err(Error::InvalidConfig(format!(
            "positive index {positive} out of range for {} logits",
            logits.len()
        )));
    }
    let log_s = log_softmax(logits, temperature);
    let loss = -log_s[positive];
    if !loss.is_finite() {
        return Err(Error::NonFinite { stage: "loss" });
    }
    let grad = log_s
        .iter()
        .enumerate()
        .map(|(k, &l)| (libm::exp(l) - if k == positive { 1.0 } else { 0.0 }) / temperature)
        .collect();
    Ok((loss, grad))
}

/// Encodes the pair set, applies `loss_fn` to the MaxSim logits, and
/// accumulates `weight * dLoss/dParams` into `grads`. Returns the loss.
pub fn backprop_logits<S, F>(
    params: &EncoderParams,
    query: &[S],
    passages: &[&[S]],
    grads: &mut ParamTensors,
    weight: f64,
    loss_fn: F,
) -> Result<f64>
where
    S: AsRef<str>,
    F: FnOnce(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (q, q_cache) = encode_cached(params, query, Role::Query)?;
    let mut encoded = Vec::with_capacity(passages.len());
    for p in passages {
        encoded.push(encode_cached(params, p, Role::Passage)?);
    }
    // argmax per (candidate, query row)
    let mut argmax: Vec<Vec<usize>> = Vec::with_capacity(encoded.len());
    let mut logits = Vec::with_capacity(encoded.len());
    for (p, _) in &encoded {
        let mut best = Vec::with_capacity(q.len());
        let mut z = 0.0;
        for qi in q.rows() {
            let (j, s) = best_row(qi, p);
            best.push(j);
            z += s;
        }
        if !z.is_finite() {
            return Err(Error::NonFinite { stage: "maxsim" });
        }
        argmax.push(best);
        logits.push(z);
    }

    let (loss, dz) = loss_fn(&logits)?;

    let dp = params.out_dim;
    let mut dq = alloc::vec![0.0; q.len() * dp];
    for (c, (p, p_cache)) in encoded.iter().enumerate() {
        let g = dz[c] * weight;
        if g == 0.0 {
            continue;
        }
        let mut dpass = alloc::vec![0.0; p.len() * dp];
        for (i, &j) in argmax[c].iter().enumerate() {
            let qi = q.row(i);
            let pj = p.row(j);
            for k in 0..dp {
                dq[i * dp + k] += g * pj[k];
                dpass[j * dp + k] += g * qi[k];
            }
        }
        backprop_rows(params, p, p_cache, &dpass, Role::Passage, grads);
    }
    backprop_rows(params, &q, &q_cache, &dq, Role::Query, grads);
    if !grads.is_finite() {
        return Err(Error::NonFinite { stage: "gradient" });
    }
    Ok(loss)
}

/// Pushes gradients on normalized output rows back to the parameters.
fn backprop_rows(
    params: &EncoderParams,
    out: &MultiVector,
    cache: &[TokenCache],
    d_out: &[f64],
    role: Role,
    grads: &mut ParamTensors,
) {
    let (d, dp) = (params.dim, params.out_dim);
    let w = &params.tensors.projection;
    let mut du = alloc::vec![0.0; dp];
    let mut dx = alloc::vec![0.0; d];
    for (i, tc) in cache.iter().enumerate() {
        let gy = &d_out[i * dp..(i + 1) * dp];
        if gy.iter().all(|&v| v == 0.0) {
            continue;
        }
        let y = out.row(i);
        let proj = dot(y, gy);
        for k in 0..dp {
            du[k] = (gy[k] - y[k] * proj) / tc.norm;
        }
        for a in 0..d {
            let w_row = &w[a * dp..(a + 1) * dp];
            let g_row = &mut grads.projection[a * dp..(a + 1) * dp];
            let xa = tc.input[a];
            let mut acc = 0.0;
            for k in 0..dp {
                g_row[k] += xa * du[k];
                acc += w_row[k] * du[k];
            }
            dx[a] = acc;
        }
        let emb = &mut grads.embeddings[tc.row * d..(tc.row + 1) * d];
        for (e, g) in emb.iter_mut().zip(&dx) {
            *e += g;
        }
        let marker = match role {
            Role::Query => &mut grads.query_marker,
            Role::Passage => &mut grads.passage_marker,
        };
        for (m, g) in marker.iter_mut().zip(&dx) {
            *m += g;
        }
    }
}

/// Distillation loss for one query over its sampled candidates, with the
/// gradient for every parameter block.
pub fn score_and_grad<S: AsRef<str>>(
    params: &EncoderParams,
    query: &[S],
    passages: &[&[S]],
    teacher_scores: &[f64],
    cfg: &LossConfig,
) -> Result<(f64, ParamTensors)> {
    if passages.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "distillation needs at least 2 candidates, got {}",
            passages.len()
        )));
    }
    if passages.len() != teacher_scores.len() {
        return Err(Error::LengthMismatch {
            left: passages.len(),
            right: teacher_scores.len(),
        });
    }
    let mut grads = ParamTensors::zeros_like(&params.tensors);
    let loss = backprop_logits(params, query, passages, &mut grads, 1.0, |z| {
        kl_from_logits(z, teacher_scores, cfg)
    })?;
    Ok((loss, grads))
}

/// Student MaxSim logits for a query over candidate passages.
pub fn student_logits<S: AsRef<str>>(params: &EncoderParams, query: &[S], passages: &[&[S]]) -> Result<Vec<f64>> {
    let q = encode(params, query, Role::Query)?;
    passages
        .iter()
        .map(|p| maxsim_score(&q, &encode(params, p, Role::Passage)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mv(rows: &[&[f64]]) -> MultiVector {
        MultiVector::from_rows(rows.iter().flat_map(|r| r.iter().copied()).collect(), rows[0].len())
            .unwrap()
    }

    fn small_params(seed: u64) -> EncoderParams {
        EncoderParams::init(Vocab::new(["a", "b", "c", "d", "e"]), 8, 4, seed).unwrap()
    }

    #[test]
    fn warm_start_aligns_translation_pairs() {
        let lex = BilingualLexicon::from_triples([("a", "x", 1.0), ("b", "y", 0.5), ("b", "z", 0.5)], 1e-9, false)
            .unwrap();
        let vocab = Vocab::from_lexicon(&lex);
        assert_eq!(vocab.terms(), ["a", "b", "x", "y", "z"]);
        let p = EncoderParams::warm_start(vocab, &lex, 8, 4, 1.0, 3).unwrap();
        assert_eq!(p.embedding(p.vocab.row("a")), p.embedding(p.vocab.row("x")));
        assert_eq!(p.embedding(p.vocab.row("b")), p.embedding(p.vocab.row("y")));
        assert!(p.tensors.query_marker.iter().all(|&m| m == 0.0));
        let q = encode(&p, &["a"], Role::Query).unwrap();
        let d = encode(&p, &["x"], Role::Passage).unwrap();
        assert!((maxsim_score(&q, &d).unwrap() - 1.0).abs() < 1e-12);

        let cold = EncoderParams::warm_start(Vocab::from_lexicon(&lex), &lex, 8, 4, 0.0, 3).unwrap();
        let init = EncoderParams::init(Vocab::from_lexicon(&lex), 8, 4, 3).unwrap();
        assert_eq!(cold.tensors.embeddings, init.tensors.embeddings);
        assert!(EncoderParams::warm_start(Vocab::from_lexicon(&lex), &lex, 8, 4, 1.5, 3).is_err());
    }

    #[test]
    fn maxsim_examples() {
        let q = mv(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(maxsim_score(&q, &mv(&[&[1.0, 0.0]])).unwrap(), 1.0);
        assert_eq!(maxsim_score(&q, &mv(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap(), 2.0);
        let q = mv(&[&[0.6, 0.8]]);
        let s = maxsim_score(&q, &mv(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert!((s - 0.8).abs() < 1e-15);
        assert!(maxsim_score(&q, &mv(&[&[1.0, 0.0, 0.0]])).is_err());
    }

    #[test]
    fn encoded_rows_are_unit_norm() {
        let p = small_params(1);
        let out = encode(&p, &["a", "zzz", "c", "a"], Role::Passage).unwrap();
        assert_eq!(out.len(), 4);
        for r in out.rows() {
            assert!((dot(r, r).sqrt() - 1.0).abs() < 1e-6);
        }
        assert!(encode(&p, &[] as &[&str], Role::Query).is_err());
    }

    #[test]
    fn roles_differ_and_encoding_is_pure() {
        let p = small_params(2);
        let q = encode(&p, &["a", "b"], Role::Query).unwrap();
        let d = encode(&p, &["a", "b"], Role::Passage).unwrap();
        assert_ne!(q, d);
        assert_eq!(q, encode(&p, &["a", "b"], Role::Query).unwrap());
    }

    #[test]
    fn oov_tokens_share_a_row() {
        let p = small_params(3);
        assert_eq!(
            encode(&p, &["nope"], Role::Query).unwrap(),
            encode(&p, &["other"], Role::Query).unwrap()
        );
    }

    #[test]
    fn kl_hand_value() {
        let teacher = [3.0f64.ln(), 0.0];
        let (loss, _) = kl_from_logits(&[0.0, 0.0], &teacher, &LossConfig::default()).unwrap();
        let expected = 0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.143841).abs() < 1e-6);
    }

    #[test]
    fn kl_identity_has_zero_loss_and_gradient() {
        let p = small_params(4);
        let query = ["a", "b"];
        let cands: [&[&str]; 3] = [&["a", "c"], &["d"], &["e", "b", "a"]];
        let z = student_logits(&p, &query, &cands).unwrap();
        for direction in [KlDirection::StudentTeacher, KlDirection::TeacherStudent] {
            let cfg = LossConfig {
                direction,
                ..LossConfig::default()
            };
            let (loss, g) = score_and_grad(&p, &query, &cands, &z, &cfg).unwrap();
            assert!(loss.abs() < 1e-12);
            assert!(g.norm() <= 1e-8, "{}", g.norm());
        }
    }

    #[test]
    fn kl_directions_by_hand() {
        let cfg = LossConfig {
            direction: KlDirection::TeacherStudent,
            ..LossConfig::default()
        };
        let (loss, grad) = kl_from_logits(&[0.0, 0.0], &[3.0f64.ln(), 0.0], &cfg).unwrap();
        let expected = 0.75 * (0.75f64 / 0.5).ln() + 0.25 * (0.25f64 / 0.5).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((grad[0] + 0.25).abs() < 1e-12 && (grad[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_uniform() {
        let (loss, grad) = cross_entropy_from_logits(&[0.3; 6], 2, 1.0).unwrap();
        assert!((loss - 6f64.ln()).abs() < 1e-12);
        assert!((loss - 1.7918).abs() < 1e-4);
        assert!((grad.iter().sum::<f64>()).abs() < 1e-12);
        let (loss, _) = cross_entropy_from_logits(&[50.0, 0.0, 0.0], 0, 1.0).unwrap();
        assert!(loss < 1e-20);
    }

    #[test]
    fn needs_two_candidates() {
        let p = small_params(5);
        let one: [&[&str]; 1] = [&["a"]];
        assert!(score_and_grad(&p, &["a"], &one, &[1.0], &LossConfig::default()).is_err());
        let two: [&[&str]; 2] = [&["a"], &["b"]];
        assert!(score_and_grad(&p, &["a"], &two, &[1.0], &LossConfig::default()).is_err());
    }

    #[test]
    fn from_parts_checks_shapes() {
        let p = small_params(6);
        let mut t = p.tensors.clone();
        t.projection.pop();
        assert!(EncoderParams::from_parts(p.vocab.clone(), 8, 4, t).is_err());
        assert!(EncoderParams::from_parts(p.vocab.clone(), 8, 4, p.tensors.clone()).is_ok());
    }
}
