//! Log-bilinear translation model over word embeddings.
//!
//! A target word `f` is predicted from source position `i` through a
//! context query
//!
//! ```text
//! q_i = b_r + sum_{s=-k..k, 1 <= i+s <= I} T_s^T r_{e_{i+s}}
//! ```
//!
//! with energy `E(f, e_i) = -q_i . r_f - b_f`. Probabilities are class
//! factorized, `p(f | e_i) = p(c_f | e_i) p(f | c_f, e_i)`: the class factor
//! is a softmax over all classes using its own query (class transforms and
//! bias) against class embeddings, and the word factor is a softmax over the
//! members of `c_f` only. The NULL word uses a context-free softmax over a
//! separate weight vector.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Array3, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ClassPartition;
use crate::corpus::SentencePair;
use crate::error::{Error, Result};
use crate::fa_align::PosteriorTable;
use crate::WordId;

pub const INIT_RANGE: f64 = 0.08;
pub const INIT_TRANSFORM_SCALE: f64 = 0.1;
pub const DEFAULT_ETA: f64 = 0.05;
pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DwaParams {
    /// Context half-width.
    pub k: usize,
    /// Embedding dimension.
    pub d: usize,
    pub r_src: Array2<f64>,
    pub r_tgt: Array2<f64>,
    /// Word-prediction transforms, index `s + k` for offset `s`.
    pub t_word: Array3<f64>,
    pub b_r: Array1<f64>,
    pub b_f: Array1<f64>,
    pub r_class: Array2<f64>,
    /// Class-prediction transforms, index `s + k`.
    pub t_class: Array3<f64>,
    pub b_rc: Array1<f64>,
    pub b_c: Array1<f64>,
    pub w_null: Array1<f64>,
}

impl DwaParams {
    pub fn zeros(src_vocab: usize, tgt_vocab: usize, classes: usize, d: usize, k: usize) -> DwaParams {
        let window = 2 * k + 1;
        DwaParams {
            k,
            d,
            r_src: Array2::zeros((src_vocab, d)),
            r_tgt: Array2::zeros((tgt_vocab, d)),
            t_word: Array3::zeros((window, d, d)),
            b_r: Array1::zeros(d),
            b_f: Array1::zeros(tgt_vocab),
            r_class: Array2::zeros((classes, d)),
            t_class: Array3::zeros((window, d, d)),
            b_rc: Array1::zeros(d),
            b_c: Array1::zeros(classes),
            w_null: Array1::zeros(tgt_vocab),
        }
    }

    /// Embeddings uniform in `[-0.08, 0.08]`, transforms `0.1 * I`, biases
    /// and NULL weights zero.
    pub fn init<R: Rng>(
        src_vocab: usize,
        tgt_vocab: usize,
        classes: usize,
        d: usize,
        k: usize,
        rng: &mut R,
    ) -> DwaParams {
        let mut p = DwaParams::zeros(src_vocab, tgt_vocab, classes, d, k);
        for m in [&mut p.r_src, &mut p.r_tgt, &mut p.r_class] {
            m.mapv_inplace(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE));
        }
        for t in [&mut p.t_word, &mut p.t_class] {
            for mut slice in t.outer_iter_mut() {
                slice.diag_mut().fill(INIT_TRANSFORM_SCALE);
            }
        }
        p
    }

    pub fn zeros_like(&self) -> DwaParams {
        DwaParams::zeros(self.src_vocab(), self.tgt_vocab(), self.num_classes(), self.d, self.k)
    }

    pub fn src_vocab(&self) -> usize {
        self.r_src.nrows()
    }

    pub fn tgt_vocab(&self) -> usize {
        self.r_tgt.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.r_class.nrows()
    }

    /// Word-prediction transform for context offset `s`.
    pub fn transform(&self, s: isize) -> ndarray::ArrayView2<'_, f64> {
        self.t_word.index_axis(Axis(0), (s + self.k as isize) as usize)
    }

    /// Named parameter blocks as flat slices.
    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        fn s<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        vec![
            ("r_src", s(&self.r_src)),
            ("r_tgt", s(&self.r_tgt)),
            ("t_word", s(&self.t_word)),
            ("b_r", s(&self.b_r)),
            ("b_f", s(&self.b_f)),
            ("r_class", s(&self.r_class)),
            ("t_class", s(&self.t_class)),
            ("b_rc", s(&self.b_rc)),
            ("b_c", s(&self.b_c)),
            ("w_null", s(&self.w_null)),
        ]
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        fn s<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        vec![
            ("r_src", s(&mut self.r_src)),
            ("r_tgt", s(&mut self.r_tgt)),
            ("t_word", s(&mut self.t_word)),
            ("b_r", s(&mut self.b_r)),
            ("b_f", s(&mut self.b_f)),
            ("r_class", s(&mut self.r_class)),
            ("t_class", s(&mut self.t_class)),
            ("b_rc", s(&mut self.b_rc)),
            ("b_c", s(&mut self.b_c)),
            ("w_null", s(&mut self.w_null)),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    /// Name of the first block holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.blocks()
            .into_iter()
            .find(|(_, b)| b.iter().any(|x| !x.is_finite()))
            .map(|(name, _)| name)
    }

    /// Checks shapes against vocab sizes, class count, `d` and `k`.
    pub fn check_shapes(&self) -> Result<()> {
        let (d, w) = (self.d, 2 * self.k + 1);
        let ok = self.r_src.ncols() == d
            && self.r_tgt.ncols() == d
            && self.r_class.ncols() == d
            && self.t_word.dim() == (w, d, d)
            && self.t_class.dim() == (w, d, d)
            && self.b_r.len() == d
            && self.b_rc.len() == d
            && self.b_f.len() == self.tgt_vocab()
            && self.w_null.len() == self.tgt_vocab()
            && self.b_c.len() == self.num_classes();
        if ok {
            Ok(())
        } else {
            Err(Error::Model("inconsistent parameter shapes".into()))
        }
    }

    fn query(&self, transforms: &Array3<f64>, bias: &Array1<f64>, src: &[WordId], i: usize) -> Array1<f64> {
        let mut q = bias.clone();
        let k = self.k as isize;
        for s in -k..=k {
            let pos = i as isize + s;
            if pos < 1 || pos > src.len() as isize {
                continue;
            }
            let r_e = self.r_src.row(src[pos as usize - 1] as usize);
            let t = transforms.index_axis(Axis(0), (s + k) as usize);
            q += &r_e.dot(&t);
        }
        q
    }

    /// Word-prediction query for source position `i` (1-based).
    pub fn word_query(&self, src: &[WordId], i: usize) -> Array1<f64> {
        self.query(&self.t_word, &self.b_r, src, i)
    }

    /// Class-prediction query for source position `i` (1-based).
    pub fn class_query(&self, src: &[WordId], i: usize) -> Array1<f64> {
        self.query(&self.t_class, &self.b_rc, src, i)
    }
}

fn check_source_position(i: usize, src: &[WordId]) -> Result<()> {
    if i == 0 {
        return Err(Error::OutOfRange("energy is undefined for the NULL position".into()));
    }
    if i > src.len() {
        return Err(Error::OutOfRange(format!("source position {i} beyond I={}", src.len())));
    }
    Ok(())
}

/// Energy of target word `f` given source position `i` (1-based).
pub fn energy(f: WordId, i: usize, src: &[WordId], params: &DwaParams) -> Result<f64> {
    check_source_position(i, src)?;
    let q = params.word_query(src, i);
    Ok(-q.dot(&params.r_tgt.row(f as usize)) - params.b_f[f as usize])
}

/// Energy of class `c` given source position `i` (1-based).
pub fn class_energy(c: usize, i: usize, src: &[WordId], params: &DwaParams) -> Result<f64> {
    check_source_position(i, src)?;
    let q = params.class_query(src, i);
    Ok(-q.dot(&params.r_class.row(c)) - params.b_c[c])
}

/// In-place log-softmax with max subtraction.
pub fn log_softmax_in_place(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    for s in scores.iter_mut() {
        *s -= lse;
    }
}

fn class_log_probs(qc: ArrayView1<f64>, params: &DwaParams) -> Vec<f64> {
    let mut scores: Vec<f64> = params
        .r_class
        .outer_iter()
        .zip(&params.b_c)
        .map(|(r, b)| qc.dot(&r) + b)
        .collect();
    log_softmax_in_place(&mut scores);
    scores
}

fn member_log_probs(q: ArrayView1<f64>, members: &[WordId], params: &DwaParams) -> Vec<f64> {
    let mut scores: Vec<f64> = members
        .iter()
        .map(|&m| q.dot(&params.r_tgt.row(m as usize)) + params.b_f[m as usize])
        .collect();
    log_softmax_in_place(&mut scores);
    scores
}

pub fn null_log_probs(params: &DwaParams) -> Vec<f64> {
    let mut lp = params.w_null.to_vec();
    log_softmax_in_place(&mut lp);
    lp
}

/// NULL-word translation probability: a context-free softmax over `w_null`.
pub fn null_prob(f: WordId, params: &DwaParams) -> f64 {
    null_log_probs(params)[f as usize].exp()
}

pub fn log_translation_prob(
    f: WordId,
    i: usize,
    src: &[WordId],
    params: &DwaParams,
    classes: &ClassPartition,
) -> Result<f64> {
    check_source_position(i, src)?;
    let c = classes.class_of(f);
    let class_lp = class_log_probs(params.class_query(src, i).view(), params);
    let word_lp = member_log_probs(params.word_query(src, i).view(), classes.members(c), params);
    Ok(class_lp[c] + word_lp[classes.within_index(f)])
}

/// `p(c_f | e_i) p(f | c_f, e_i)` for source position `i` (1-based).
pub fn translation_prob(
    f: WordId,
    i: usize,
    src: &[WordId],
    params: &DwaParams,
    classes: &ClassPartition,
) -> Result<f64> {
    Ok(log_translation_prob(f, i, src, params, classes)?.exp())
}

fn full_distribution(
    q: ArrayView1<f64>,
    qc: ArrayView1<f64>,
    params: &DwaParams,
    classes: &ClassPartition,
) -> Array1<f64> {
    let class_lp = class_log_probs(qc, params);
    let mut out = Array1::zeros(params.tgt_vocab());
    for (c, members) in classes.all_members().iter().enumerate() {
        let lp = member_log_probs(q, members, params);
        for (&m, l) in members.iter().zip(lp) {
            out[m as usize] = (class_lp[c] + l).exp();
        }
    }
    out
}

/// Distribution over the whole target vocabulary for source position `i`.
pub fn translation_distribution(
    i: usize,
    src: &[WordId],
    params: &DwaParams,
    classes: &ClassPartition,
) -> Result<Array1<f64>> {
    check_source_position(i, src)?;
    let q = params.word_query(src, i);
    let qc = params.class_query(src, i);
    Ok(full_distribution(q.view(), qc.view(), params, classes))
}

/// Distribution over the target vocabulary for source word `e` used as its
/// own only context (centre transforms, no neighbours).
pub fn isolated_translation_probs(e: WordId, params: &DwaParams, classes: &ClassPartition) -> Array1<f64> {
    let r_e = params.r_src.row(e as usize);
    let centre = params.k;
    let q = &params.b_r + &r_e.dot(&params.t_word.index_axis(Axis(0), centre));
    let qc = &params.b_rc + &r_e.dot(&params.t_class.index_axis(Axis(0), centre));
    full_distribution(q.view(), qc.view(), params, classes)
}

/// Log translation probabilities for every (target position, source
/// position) of a sentence pair. Column 0 holds the NULL term.
pub fn sentence_log_probs(pair: &SentencePair, params: &DwaParams, classes: &ClassPartition) -> Array2<f64> {
    let (src_len, tgt_len) = (pair.src_len(), pair.tgt_len());
    let mut out = Array2::zeros((tgt_len, src_len + 1));
    let null_lp = null_log_probs(params);
    for (r, &f) in pair.tgt.iter().enumerate() {
        out[[r, 0]] = null_lp[f as usize];
    }
    for i in 1..=src_len {
        let q = params.word_query(&pair.src, i);
        let qc = params.class_query(&pair.src, i);
        let class_lp = class_log_probs(qc.view(), params);
        let mut cache: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (r, &f) in pair.tgt.iter().enumerate() {
            let c = classes.class_of(f);
            let word_lp = cache
                .entry(c)
                .or_insert_with(|| member_log_probs(q.view(), classes.members(c), params));
            out[[r, i]] = class_lp[c] + word_lp[classes.within_index(f)];
        }
    }
    out
}

/// Gradient buffer shaped like [`DwaParams`]. Rows of the vocabulary-sized
/// blocks that received gradient are tracked so updates and resets can skip
/// the rest.
#[derive(Clone, Debug)]
pub struct DwaGradient {
    pub g: DwaParams,
    touched_src: Vec<WordId>,
    touched_tgt: Vec<WordId>,
}

impl DwaGradient {
    pub fn zeros_like(params: &DwaParams) -> Self {
        DwaGradient {
            g: params.zeros_like(),
            touched_src: Vec::new(),
            touched_tgt: Vec::new(),
        }
    }

    fn normalize_touched(&mut self) {
        self.touched_src.sort_unstable();
        self.touched_src.dedup();
        self.touched_tgt.sort_unstable();
        self.touched_tgt.dedup();
    }

    /// Source rows with (possibly) non-zero gradient.
    pub fn touched_src(&mut self) -> &[WordId] {
        self.normalize_touched();
        &self.touched_src
    }

    /// Target rows (embeddings and biases) with (possibly) non-zero gradient.
    pub fn touched_tgt(&mut self) -> &[WordId] {
        self.normalize_touched();
        &self.touched_tgt
    }

    pub fn clear(&mut self) {
        self.normalize_touched();
        for &e in &self.touched_src {
            self.g.r_src.row_mut(e as usize).fill(0.0);
        }
        for &f in &self.touched_tgt {
            self.g.r_tgt.row_mut(f as usize).fill(0.0);
            self.g.b_f[f as usize] = 0.0;
        }
        self.touched_src.clear();
        self.touched_tgt.clear();
        let g = &mut self.g;
        for block in [&mut g.b_r, &mut g.b_rc, &mut g.b_c, &mut g.w_null] {
            block.fill(0.0);
        }
        g.t_word.fill(0.0);
        g.t_class.fill(0.0);
        g.r_class.fill(0.0);
    }
}

/// Accumulates `d/dtheta sum_j sum_i gamma[j][i] log p_i(f_j)` into `grad`,
/// where `p_0` is the NULL softmax and `p_i` for `i >= 1` the class-factored
/// translation probability. Returns the weighted log-probability itself.
pub fn accumulate_weighted_logprob_grad(
    pair: &SentencePair,
    weights: &PosteriorTable,
    params: &DwaParams,
    classes: &ClassPartition,
    grad: &mut DwaGradient,
) -> f64 {
    let (src_len, tgt_len) = (pair.src_len(), pair.tgt_len());
    debug_assert_eq!(weights.gamma.dim(), (tgt_len, src_len + 1));
    let gamma = &weights.gamma;
    let d = params.d;
    let k = params.k as isize;
    let g = &mut grad.g;
    let mut objective = 0.0;

    // NULL column
    let null_lp = null_log_probs(params);
    let mut null_mass = 0.0;
    for (r, &f) in pair.tgt.iter().enumerate() {
        let w = gamma[[r, 0]];
        if w == 0.0 {
            continue;
        }
        objective += w * null_lp[f as usize];
        g.w_null[f as usize] += w;
        null_mass += w;
    }
    if null_mass != 0.0 {
        for (gw, lp) in g.w_null.iter_mut().zip(&null_lp) {
            *gw -= null_mass * lp.exp();
        }
    }

    let mut groups: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    let mut dq = Array1::<f64>::zeros(d);
    let mut dqc = Array1::<f64>::zeros(d);
    for i in 1..=src_len {
        groups.clear();
        let mut total = 0.0;
        for (r, &f) in pair.tgt.iter().enumerate() {
            let w = gamma[[r, i]];
            if w != 0.0 {
                groups.entry(classes.class_of(f)).or_default().push((r, w));
                total += w;
            }
        }
        if total == 0.0 {
            continue;
        }
        let q = params.word_query(&pair.src, i);
        let qc = params.class_query(&pair.src, i);

        // class softmax
        let class_lp = class_log_probs(qc.view(), params);
        let mut delta_c: Vec<f64> = class_lp.iter().map(|lp| -total * lp.exp()).collect();
        for (&c, items) in &groups {
            let mass: f64 = items.iter().map(|(_, w)| w).sum();
            delta_c[c] += mass;
            objective += mass * class_lp[c];
        }
        dqc.fill(0.0);
        for (c, &delta) in delta_c.iter().enumerate() {
            g.b_c[c] += delta;
            g.r_class.row_mut(c).scaled_add(delta, &qc);
            dqc.scaled_add(delta, &params.r_class.row(c));
        }

        // within-class word softmaxes
        dq.fill(0.0);
        for (&c, items) in &groups {
            let members = classes.members(c);
            let word_lp = member_log_probs(q.view(), members, params);
            let mass: f64 = items.iter().map(|(_, w)| w).sum();
            let mut delta: Vec<f64> = word_lp.iter().map(|lp| -mass * lp.exp()).collect();
            for &(r, w) in items {
                let idx = classes.within_index(pair.tgt[r]);
                delta[idx] += w;
                objective += w * word_lp[idx];
            }
            for (&m, &dm) in members.iter().zip(&delta) {
                let m = m as usize;
                g.b_f[m] += dm;
                g.r_tgt.row_mut(m).scaled_add(dm, &q);
                dq.scaled_add(dm, &params.r_tgt.row(m));
            }
            grad.touched_tgt.extend_from_slice(members);
        }

        // back through the queries
        g.b_r += &dq;
        g.b_rc += &dqc;
        for s in -k..=k {
            let pos = i as isize + s;
            if pos < 1 || pos > src_len as isize {
                continue;
            }
            let e = pair.src[pos as usize - 1] as usize;
            let slot = (s + k) as usize;
            let r_e = params.r_src.row(e);
            let tw = params.t_word.index_axis(Axis(0), slot);
            let tc = params.t_class.index_axis(Axis(0), slot);
            let back = tw.dot(&dq) + tc.dot(&dqc);
            g.r_src.row_mut(e).scaled_add(1.0, &back);
            grad.touched_src.push(e as WordId);
            let mut gtw = g.t_word.index_axis_mut(Axis(0), slot);
            let mut gtc = g.t_class.index_axis_mut(Axis(0), slot);
            for a in 0..d {
                let ra = r_e[a];
                if ra != 0.0 {
                    gtw.row_mut(a).scaled_add(ra, &dq);
                    gtc.row_mut(a).scaled_add(ra, &dqc);
                }
            }
        }
    }
    objective
}

/// Gradient of the posterior-weighted log translation probability of one
/// sentence pair.
pub fn grad_weighted_logprob(
    pair: &SentencePair,
    weights: &PosteriorTable,
    params: &DwaParams,
    classes: &ClassPartition,
) -> DwaGradient {
    let mut grad = DwaGradient::zeros_like(params);
    accumulate_weighted_logprob_grad(pair, weights, params, classes, &mut grad);
    grad
}

/// Per-coordinate squared-gradient accumulators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaGradState {
    pub accum: DwaParams,
    pub eta: f64,
    pub eps: f64,
}

#[inline]
fn adagrad_update(theta: &mut [f64], g: &[f64], acc: &mut [f64], eta: f64, eps: f64) {
    for ((t, &gi), a) in theta.iter_mut().zip(g).zip(acc.iter_mut()) {
        if gi != 0.0 {
            *a += gi * gi;
            *t += eta * gi / (a.sqrt() + eps);
        }
    }
}

fn row_slice_mut(m: &mut Array2<f64>, r: usize) -> &mut [f64] {
    m.row_mut(r).into_slice().expect("contiguous row")
}

impl AdaGradState {
    pub fn new(params: &DwaParams, eta: f64, eps: f64) -> Self {
        AdaGradState {
            accum: params.zeros_like(),
            eta,
            eps,
        }
    }

    /// Ascent step `theta += eta * g / (sqrt(G) + eps)` after `G += g^2`.
    /// Zero gradient coordinates are left untouched. Fails without
    /// modifying anything if a gradient coordinate is not finite.
    pub fn step(&mut self, params: &mut DwaParams, grad: &mut DwaGradient) -> Result<()> {
        grad.normalize_touched();
        let finite_rows =
            |m: &Array2<f64>, rows: &[WordId]| rows.iter().all(|&r| m.row(r as usize).iter().all(|x| x.is_finite()));
        if !finite_rows(&grad.g.r_src, &grad.touched_src) {
            return Err(Error::NonFiniteGradient { block: "r_src" });
        }
        if !finite_rows(&grad.g.r_tgt, &grad.touched_tgt) {
            return Err(Error::NonFiniteGradient { block: "r_tgt" });
        }
        if !grad.touched_tgt.iter().all(|&f| grad.g.b_f[f as usize].is_finite()) {
            return Err(Error::NonFiniteGradient { block: "b_f" });
        }
        for (name, block) in grad.g.blocks() {
            if matches!(name, "r_src" | "r_tgt" | "b_f") {
                continue;
            }
            if block.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient { block: name });
            }
        }

        let (eta, eps) = (self.eta, self.eps);
        for &e in &grad.touched_src {
            let e = e as usize;
            adagrad_update(
                row_slice_mut(&mut params.r_src, e),
                grad.g.r_src.row(e).as_slice().expect("contiguous row"),
                row_slice_mut(&mut self.accum.r_src, e),
                eta,
                eps,
            );
        }
        for &f in &grad.touched_tgt {
            let f = f as usize;
            adagrad_update(
                row_slice_mut(&mut params.r_tgt, f),
                grad.g.r_tgt.row(f).as_slice().expect("contiguous row"),
                row_slice_mut(&mut self.accum.r_tgt, f),
                eta,
                eps,
            );
            adagrad_update(
                std::slice::from_mut(&mut params.b_f[f]),
                std::slice::from_ref(&grad.g.b_f[f]),
                std::slice::from_mut(&mut self.accum.b_f[f]),
                eta,
                eps,
            );
        }
        let grads = grad.g.blocks();
        let accs = self.accum.blocks_mut();
        let thetas = params.blocks_mut();
        for (((name, theta), (_, g)), (_, acc)) in thetas.into_iter().zip(grads).zip(accs) {
            if matches!(name, "r_src" | "r_tgt" | "b_f") {
                continue;
            }
            adagrad_update(theta, g, acc, eta, eps);
        }
        Ok(())
    }
}

pub fn adagrad_step(params: &mut DwaParams, grad: &mut DwaGradient, state: &mut AdaGradState) -> Result<()> {
    state.step(params, grad)
}
