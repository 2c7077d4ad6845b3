//! Log-linear IBM Model 2 ("FA"): a diagonal-tension alignment prior, a
//! fixed NULL probability and a multinomial translation table, trained with
//! EM.
//!
//! For source length `I`, target length `J` and target position `j`, source
//! position `i >= 1` receives prior mass
//! `(1 - p0) * exp(lambda * h(i, j)) / Z` with `h(i, j) = -|i/I - j/J|`,
//! and the NULL word (position 0) receives `p0`. The normalizer is summed
//! exactly.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ParallelCorpus, SentencePair, Vocab};
use crate::error::{Error, Result};
use crate::eval::{AlignmentLinks, AlignmentModel};
use crate::serialize;

pub const LAMBDA_MIN: f64 = 0.1;
pub const LAMBDA_MAX: f64 = 20.0;
pub const LAMBDA_STEPS: usize = 8;
pub const LAMBDA_STEP_SIZE: f64 = 0.5;
pub const DEFAULT_P0: f64 = 0.08;
pub const DEFAULT_LAMBDA: f64 = 4.0;
pub const DEFAULT_ITERATIONS: usize = 5;
pub const SMOOTHING_FLOOR: f64 = 1e-9;

pub const MODEL_KIND: &str = "dwalign-fa";

/// Distance feature `-|i/I - j/J|` for source position `i >= 1`.
#[inline]
pub fn diagonal_feature(i: usize, j: usize, src_len: usize, tgt_len: usize) -> f64 {
    -((i as f64 / src_len as f64) - (j as f64 / tgt_len as f64)).abs()
}

fn check_positions(i: usize, j: usize, src_len: usize, tgt_len: usize) -> Result<()> {
    if src_len == 0 || tgt_len == 0 || i > src_len || j == 0 || j > tgt_len {
        return Err(Error::OutOfRange(format!("i={i}, j={j} for I={src_len}, J={tgt_len}")));
    }
    Ok(())
}

/// Prior probability of aligning target position `j` (1-based) to source
/// position `i` (0 = NULL).
pub fn alignment_prior(i: usize, j: usize, src_len: usize, tgt_len: usize, lambda: f64, p0: f64) -> Result<f64> {
    check_positions(i, j, src_len, tgt_len)?;
    let mut row = vec![0.0; src_len + 1];
    prior_row(j, src_len, tgt_len, lambda, p0, &mut row);
    Ok(row[i])
}

/// Fills `out[0..=I]` with the prior over source positions for target
/// position `j` (1-based).
pub fn prior_row(j: usize, src_len: usize, tgt_len: usize, lambda: f64, p0: f64, out: &mut [f64]) {
    debug_assert_eq!(out.len(), src_len + 1);
    out[0] = p0;
    let mut z = 0.0;
    for (i, slot) in out.iter_mut().enumerate().skip(1) {
        *slot = (lambda * diagonal_feature(i, j, src_len, tgt_len)).exp();
        z += *slot;
    }
    let scale = (1.0 - p0) / z;
    for slot in &mut out[1..] {
        *slot *= scale;
    }
}

/// Expected value of the diagonal feature under the non-null prior for
/// target position `j`.
pub fn expected_feature(j: usize, src_len: usize, tgt_len: usize, lambda: f64) -> f64 {
    let mut z = 0.0;
    let mut acc = 0.0;
    for i in 1..=src_len {
        let h = diagonal_feature(i, j, src_len, tgt_len);
        let w = (lambda * h).exp();
        z += w;
        acc += w * h;
    }
    acc / z
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaParams {
    pub lambda: f64,
    pub p0: f64,
    /// Row per source id (NULL included), column per target id.
    pub ttable: Array2<f64>,
}

impl FaParams {
    /// Uniform translation rows.
    pub fn uniform(src_vocab: usize, tgt_vocab: usize, lambda: f64, p0: f64) -> Self {
        FaParams {
            lambda,
            p0,
            ttable: Array2::from_elem((src_vocab, tgt_vocab), 1.0 / tgt_vocab as f64),
        }
    }

    #[inline]
    pub fn t(&self, f: u32, e: u32) -> f64 {
        self.ttable[[e as usize, f as usize]]
    }

    pub fn row(&self, e: u32) -> ArrayView1<'_, f64> {
        self.ttable.row(e as usize)
    }

    fn check(&self) -> Result<()> {
        if !(self.p0 >= 0.0 && self.p0 <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "p0 must lie in [0, 1], got {}",
                self.p0
            )));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Alignment posteriors for one sentence pair: row `r` is target position
/// `r + 1`, column `i` is source position `i` (0 = NULL).
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorTable {
    pub gamma: Array2<f64>,
}

impl PosteriorTable {
    pub fn tgt_len(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn src_len(&self) -> usize {
        self.gamma.ncols() - 1
    }
}

/// Fills `scores[i] = prior(i | j) * t(f_j | e_i)` for target row `r`
/// and returns their sum.
fn joint_row(pair: &SentencePair, r: usize, params: &FaParams, null_id: u32, scores: &mut [f64]) -> f64 {
    let (src_len, tgt_len) = (pair.src_len(), pair.tgt_len());
    prior_row(r + 1, src_len, tgt_len, params.lambda, params.p0, scores);
    let f = pair.tgt[r];
    scores[0] *= params.t(f, null_id);
    for (slot, &e) in scores[1..].iter_mut().zip(&pair.src) {
        *slot *= params.t(f, e);
    }
    scores.iter().sum()
}

/// Marginal log-likelihood `sum_j log sum_i prior(i|j) t(f_j|e_i)`; the
/// length term is omitted.
pub fn sentence_loglik(pair: &SentencePair, params: &FaParams, null_id: u32) -> f64 {
    let mut scores = vec![0.0; pair.src_len() + 1];
    (0..pair.tgt_len())
        .map(|r| joint_row(pair, r, params, null_id, &mut scores).ln())
        .sum()
}

pub fn e_step(pair: &SentencePair, params: &FaParams, null_id: u32) -> PosteriorTable {
    let mut gamma = Array2::zeros((pair.tgt_len(), pair.src_len() + 1));
    let mut scores = vec![0.0; pair.src_len() + 1];
    for r in 0..pair.tgt_len() {
        let z = joint_row(pair, r, params, null_id, &mut scores);
        for (g, s) in gamma.row_mut(r).iter_mut().zip(&scores) {
            *g = s / z;
        }
    }
    PosteriorTable { gamma }
}

/// Sufficient statistics for the diagonal-tension update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LambdaStats {
    /// Posterior-weighted diagonal feature over non-null links.
    pub empirical: f64,
    /// Non-null posterior mass per target position, keyed by `(I, J)`.
    pub mass: BTreeMap<(usize, usize), Vec<f64>>,
    pub tokens: f64,
}

impl LambdaStats {
    pub fn observe(&mut self, gamma: &PosteriorTable) {
        let (src_len, tgt_len) = (gamma.src_len(), gamma.tgt_len());
        let mass = self
            .mass
            .entry((src_len, tgt_len))
            .or_insert_with(|| vec![0.0; tgt_len]);
        for (r, row) in gamma.gamma.outer_iter().enumerate() {
            let mut non_null = 0.0;
            for i in 1..=src_len {
                self.empirical += row[i] * diagonal_feature(i, r + 1, src_len, tgt_len);
                non_null += row[i];
            }
            mass[r] += non_null;
        }
        self.tokens += tgt_len as f64;
    }

    pub fn merge(&mut self, other: &LambdaStats) {
        self.empirical += other.empirical;
        self.tokens += other.tokens;
        for (key, m) in &other.mass {
            let mine = self.mass.entry(*key).or_insert_with(|| vec![0.0; m.len()]);
            for (a, b) in mine.iter_mut().zip(m) {
                *a += b;
            }
        }
    }

    /// Derivative of the expected log-prior with respect to lambda, divided
    /// by the number of target tokens.
    pub fn gradient(&self, lambda: f64) -> f64 {
        if self.tokens == 0.0 {
            return 0.0;
        }
        let mut model = 0.0;
        for (&(src_len, tgt_len), mass) in &self.mass {
            for (r, m) in mass.iter().enumerate() {
                if *m != 0.0 {
                    model += m * expected_feature(r + 1, src_len, tgt_len, lambda);
                }
            }
        }
        (self.empirical - model) / self.tokens
    }

    /// Fixed number of clamped gradient-ascent steps from `lambda`.
    pub fn optimize(&self, mut lambda: f64) -> f64 {
        for _ in 0..LAMBDA_STEPS {
            lambda = (lambda + LAMBDA_STEP_SIZE * self.gradient(lambda)).clamp(LAMBDA_MIN, LAMBDA_MAX);
        }
        lambda
    }
}

/// Expected counts accumulated over a corpus sweep.
#[derive(Clone, Debug)]
pub struct ExpectedCounts {
    pub ttable: Array2<f64>,
    pub lambda: LambdaStats,
    pub loglik: f64,
}

impl ExpectedCounts {
    pub fn zeros(src_vocab: usize, tgt_vocab: usize) -> Self {
        ExpectedCounts {
            ttable: Array2::zeros((src_vocab, tgt_vocab)),
            lambda: LambdaStats::default(),
            loglik: 0.0,
        }
    }

    /// Runs the E-step on one pair and adds its counts.
    pub fn add_pair(&mut self, pair: &SentencePair, params: &FaParams, null_id: u32) {
        let mut scores = vec![0.0; pair.src_len() + 1];
        let mut gamma = Array2::zeros((pair.tgt_len(), pair.src_len() + 1));
        for r in 0..pair.tgt_len() {
            let z = joint_row(pair, r, params, null_id, &mut scores);
            self.loglik += z.ln();
            let f = pair.tgt[r] as usize;
            for (i, s) in scores.iter().enumerate() {
                let g = s / z;
                gamma[[r, i]] = g;
                let e = if i == 0 { null_id } else { pair.src[i - 1] };
                self.ttable[[e as usize, f]] += g;
            }
        }
        self.lambda.observe(&PosteriorTable { gamma });
    }

    pub fn merge(&mut self, other: &ExpectedCounts) {
        self.ttable += &other.ttable;
        self.lambda.merge(&other.lambda);
        self.loglik += other.loglik;
    }
}

/// Re-estimates the translation table from expected counts (additive
/// `floor` on every cell before normalizing) and, when `optimize_lambda` is
/// set, takes the diagonal-tension gradient steps. Rows with zero total
/// count keep their previous values.
pub fn m_step(counts: &ExpectedCounts, params: &FaParams, floor: f64, optimize_lambda: bool) -> FaParams {
    let mut next = params.clone();
    let width = counts.ttable.ncols() as f64;
    for (mut row, crow) in next.ttable.outer_iter_mut().zip(counts.ttable.outer_iter()) {
        let total: f64 = crow.sum();
        if total <= 0.0 {
            continue;
        }
        let denom = total + width * floor;
        for (t, c) in row.iter_mut().zip(crow) {
            *t = (c + floor) / denom;
        }
    }
    if optimize_lambda {
        next.lambda = counts.lambda.optimize(params.lambda);
    }
    next
}

#[derive(Clone, Debug, PartialEq)]
pub struct FaConfig {
    pub iterations: usize,
    pub p0: f64,
    pub lambda_init: f64,
    pub optimize_lambda: bool,
    pub floor: f64,
    pub threads: usize,
}

impl Default for FaConfig {
    fn default() -> Self {
        FaConfig {
            iterations: DEFAULT_ITERATIONS,
            p0: DEFAULT_P0,
            lambda_init: DEFAULT_LAMBDA,
            optimize_lambda: true,
            floor: SMOOTHING_FLOOR,
            threads: 1,
        }
    }
}

impl FaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p0 > 0.0 && self.p0 < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "p0 must lie in (0, 1), got {}",
                self.p0
            )));
        }
        if !(LAMBDA_MIN..=LAMBDA_MAX).contains(&self.lambda_init) {
            return Err(Error::InvalidArgument(format!(
                "lambda must lie in [{LAMBDA_MIN}, {LAMBDA_MAX}], got {}",
                self.lambda_init
            )));
        }
        if !(self.floor >= 0.0 && self.floor.is_finite()) {
            return Err(Error::InvalidArgument("smoothing floor must be >= 0".into()));
        }
        if self.threads == 0 {
            return Err(Error::InvalidArgument("threads must be >= 1".into()));
        }
        Ok(())
    }
}

/// Corpus log-likelihood before each iteration's M-step, followed by the
/// log-likelihood of the returned parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FaTrainReport {
    pub logliks: Vec<f64>,
}

/// One E-step sweep. With more than one thread the corpus is split into
/// contiguous chunks whose counts are merged in chunk order.
pub fn collect_counts(corpus: &ParallelCorpus, params: &FaParams, threads: usize) -> ExpectedCounts {
    let null_id = corpus.src_vocab().null_id().expect("source vocab has NULL");
    let (nv_e, nv_f) = (corpus.src_vocab().len(), corpus.tgt_vocab().len());
    let sweep = |chunk: &[SentencePair]| {
        let mut counts = ExpectedCounts::zeros(nv_e, nv_f);
        for pair in chunk {
            counts.add_pair(pair, params, null_id);
        }
        counts
    };
    if threads <= 1 || corpus.len() < 2 {
        return sweep(corpus.pairs());
    }
    let chunk = corpus.len().div_ceil(threads);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool");
    let parts: Vec<ExpectedCounts> = pool.install(|| corpus.pairs().par_chunks(chunk).map(sweep).collect());
    let mut parts = parts.into_iter();
    let mut total = parts.next().expect("at least one chunk");
    for p in parts {
        total.merge(&p);
    }
    total
}

pub fn train_fa(corpus: &ParallelCorpus, config: &FaConfig) -> Result<(FaParams, FaTrainReport)> {
    train_fa_with(corpus, config, |_, _| {})
}

/// EM training; `observer(n, loglik)` receives the corpus log-likelihood
/// after `n` iterations, from 0 (the initial parameters) to
/// `config.iterations`.
pub fn train_fa_with(
    corpus: &ParallelCorpus,
    config: &FaConfig,
    mut observer: impl FnMut(usize, f64),
) -> Result<(FaParams, FaTrainReport)> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty corpus".into()));
    }
    let mut params = FaParams::uniform(
        corpus.src_vocab().len(),
        corpus.tgt_vocab().len(),
        config.lambda_init,
        config.p0,
    );
    let mut report = FaTrainReport::default();
    for it in 0..config.iterations {
        let counts = collect_counts(corpus, &params, config.threads);
        observer(it, counts.loglik);
        report.logliks.push(counts.loglik);
        params = m_step(&counts, &params, config.floor, config.optimize_lambda);
    }
    let final_ll = corpus_loglik(corpus, &params);
    observer(config.iterations, final_ll);
    report.logliks.push(final_ll);
    Ok((params, report))
}

pub fn corpus_loglik(corpus: &ParallelCorpus, params: &FaParams) -> f64 {
    let null_id = corpus.src_vocab().null_id().expect("source vocab has NULL");
    corpus.pairs().iter().map(|p| sentence_loglik(p, params, null_id)).sum()
}

/// Per-target-position argmax of `prior(i|j) * trans(r, i)`, where `r` is
/// the 0-based target row and `i` the source position (0 = NULL). Ties go
/// to the smallest `i`; NULL winners emit no link.
pub fn viterbi_decode(
    pair: &SentencePair,
    lambda: f64,
    p0: f64,
    mut trans: impl FnMut(usize, usize) -> f64,
) -> AlignmentLinks {
    let (src_len, tgt_len) = (pair.src_len(), pair.tgt_len());
    let mut prior = vec![0.0; src_len + 1];
    let mut links = AlignmentLinks::default();
    for r in 0..tgt_len {
        prior_row(r + 1, src_len, tgt_len, lambda, p0, &mut prior);
        let mut best = 0;
        let mut best_score = prior[0] * trans(r, 0);
        for (i, p) in prior.iter().enumerate().skip(1) {
            let score = p * trans(r, i);
            if score > best_score {
                best = i;
                best_score = score;
            }
        }
        if best > 0 {
            links.insert(best - 1, r);
        }
    }
    links
}

pub fn viterbi_align(pair: &SentencePair, params: &FaParams, null_id: u32) -> AlignmentLinks {
    viterbi_decode(pair, params.lambda, params.p0, |r, i| {
        let e = if i == 0 { null_id } else { pair.src[i - 1] };
        params.t(pair.tgt[r], e)
    })
}

/// A trained FA model with the vocabularies it was trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaModel {
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
    pub params: FaParams,
}

impl FaModel {
    pub fn train(corpus: &ParallelCorpus, config: &FaConfig) -> Result<(FaModel, FaTrainReport)> {
        let (params, report) = train_fa(corpus, config)?;
        Ok((FaModel::new(corpus, params), report))
    }

    pub fn new(corpus: &ParallelCorpus, params: FaParams) -> FaModel {
        FaModel {
            src_vocab: corpus.src_vocab().clone(),
            tgt_vocab: corpus.tgt_vocab().clone(),
            params,
        }
    }

    pub fn null_id(&self) -> u32 {
        self.src_vocab.null_id().expect("source vocab has NULL")
    }

    pub fn e_step(&self, pair: &SentencePair) -> PosteriorTable {
        e_step(pair, &self.params, self.null_id())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        serialize::to_bytes(MODEL_KIND, self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<FaModel> {
        let model: FaModel = serialize::from_bytes(MODEL_KIND, bytes)?;
        let (rows, cols) = model.params.ttable.dim();
        if rows != model.src_vocab.len() || cols != model.tgt_vocab.len() || model.src_vocab.null_id().is_none() {
            return Err(Error::Model("translation table does not match vocabularies".into()));
        }
        model.params.check().map_err(|e| Error::Model(e.to_string()))?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        serialize::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<FaModel> {
        FaModel::from_bytes(&serialize::read_file(path)?)
    }
}

impl AlignmentModel for FaModel {
    fn sentence_loglik(&self, pair: &SentencePair) -> f64 {
        sentence_loglik(pair, &self.params, self.null_id())
    }

    fn viterbi(&self, pair: &SentencePair) -> AlignmentLinks {
        viterbi_align(pair, &self.params, self.null_id())
    }
}
