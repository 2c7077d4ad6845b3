//! DWA training: EM whose E-step posteriors are frozen to those of a trained
//! FA model, with an M-step that ascends the expected complete-data
//! log-likelihood. Translation parameters take one AdaGrad step per
//! sentence; the model's own diagonal tension takes the FA-style gradient
//! steps once per epoch.

use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClassPartition, ParallelCorpus, SentencePair, Vocab};
use crate::error::{Error, Result};
use crate::eval::{AlignmentLinks, AlignmentModel};
use crate::fa_align::{self, diagonal_feature, expected_feature, FaModel, FaParams, LambdaStats, PosteriorTable};
use crate::lbl::{self, AdaGradState, DwaGradient, DwaParams};
use crate::serialize;
use crate::WordId;

pub const DEFAULT_EPOCHS: usize = 40;
pub const DEFAULT_DIM: usize = 100;
pub const DEFAULT_SEED: u64 = 1;
pub const MODEL_KIND: &str = "dwalign-dwa";

#[derive(Clone, Debug, PartialEq)]
pub struct DwaTrainConfig {
    pub epochs: usize,
    pub d: usize,
    pub k: usize,
    pub eta: f64,
    pub eps: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Starting diagonal tension; `None` takes the FA value.
    pub lambda_init: Option<f64>,
    /// NULL probability; `None` takes the FA value.
    pub p0: Option<f64>,
    pub optimize_lambda: bool,
    /// Start word and class biases at log unigram frequencies instead of 0.
    pub unigram_bias_init: bool,
    pub threads: usize,
}

impl Default for DwaTrainConfig {
    fn default() -> Self {
        DwaTrainConfig {
            epochs: DEFAULT_EPOCHS,
            d: DEFAULT_DIM,
            k: 0,
            eta: lbl::DEFAULT_ETA,
            eps: lbl::DEFAULT_EPS,
            seed: DEFAULT_SEED,
            shuffle: true,
            lambda_init: None,
            p0: None,
            optimize_lambda: true,
            unigram_bias_init: false,
            threads: 1,
        }
    }
}

impl DwaTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.d == 0 {
            return bad("embedding dimension must be >= 1".into());
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("learning rate must be > 0, got {}", self.eta));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return bad(format!("epsilon must be >= 0, got {}", self.eps));
        }
        if self.threads == 0 {
            return bad("threads must be >= 1".into());
        }
        if let Some(l) = self.lambda_init {
            if !(fa_align::LAMBDA_MIN..=fa_align::LAMBDA_MAX).contains(&l) {
                return bad(format!("lambda must lie in [0.1, 20], got {l}"));
            }
        }
        if let Some(p0) = self.p0 {
            if !(0.0..1.0).contains(&p0) {
                return bad(format!("p0 must lie in [0, 1), got {p0}"));
            }
        }
        Ok(())
    }
}

/// E-step posteriors under the frozen FA parameters.
pub fn frozen_posteriors(pair: &SentencePair, fa: &FaParams, null_id: WordId) -> PosteriorTable {
    fa_align::e_step(pair, fa, null_id)
}

/// `d/dlambda sum_j sum_{i>=1} gamma[j][i] log prior(i | j)`.
pub fn lambda_gradient(gamma: &PosteriorTable, lambda: f64) -> f64 {
    let (src_len, tgt_len) = (gamma.src_len(), gamma.tgt_len());
    let mut total = 0.0;
    for (r, row) in gamma.gamma.outer_iter().enumerate() {
        let expected = expected_feature(r + 1, src_len, tgt_len, lambda);
        for i in 1..=src_len {
            total += row[i] * (diagonal_feature(i, r + 1, src_len, tgt_len) - expected);
        }
    }
    total
}

/// Gradient of one sentence's expected complete-data log-likelihood with
/// respect to the translation parameters and the diagonal tension.
pub fn sentence_gradient(
    pair: &SentencePair,
    gamma: &PosteriorTable,
    params: &DwaParams,
    classes: &ClassPartition,
    lambda: f64,
) -> (DwaGradient, f64) {
    let grad = lbl::grad_weighted_logprob(pair, gamma, params, classes);
    (grad, lambda_gradient(gamma, lambda))
}

/// `sum_j sum_i gamma[j][i] log(prior(i | j) p_i(f_j))` for one sentence.
/// Zero-weight terms are skipped.
pub fn sentence_q(
    pair: &SentencePair,
    gamma: &PosteriorTable,
    params: &DwaParams,
    classes: &ClassPartition,
    lambda: f64,
    p0: f64,
) -> f64 {
    let log_probs = lbl::sentence_log_probs(pair, params, classes);
    let (src_len, tgt_len) = (pair.src_len(), pair.tgt_len());
    let mut prior = vec![0.0; src_len + 1];
    let mut q = 0.0;
    for r in 0..tgt_len {
        fa_align::prior_row(r + 1, src_len, tgt_len, lambda, p0, &mut prior);
        for (i, p) in prior.iter().enumerate() {
            let w = gamma.gamma[[r, i]];
            if w != 0.0 {
                q += w * (p.ln() + log_probs[[r, i]]);
            }
        }
    }
    q
}

/// Q-function over the corpus with FA's posteriors as weights.
pub fn q_objective(
    corpus: &ParallelCorpus,
    params: &DwaParams,
    classes: &ClassPartition,
    lambda: f64,
    p0: f64,
    fa: &FaParams,
) -> f64 {
    let null_id = corpus.src_vocab().null_id().expect("source vocab has NULL");
    corpus
        .pairs()
        .iter()
        .map(|pair| sentence_q(pair, &frozen_posteriors(pair, fa, null_id), params, classes, lambda, p0))
        .sum()
}

fn checked_q(corpus: &ParallelCorpus, model: &DwaModel, fa: &FaParams, epoch: usize) -> Result<f64> {
    let null_id = corpus.src_vocab().null_id().expect("source vocab has NULL");
    let mut total = 0.0;
    for (n, pair) in corpus.pairs().iter().enumerate() {
        let gamma = frozen_posteriors(pair, fa, null_id);
        let q = sentence_q(pair, &gamma, &model.params, &model.classes, model.lambda, model.p0);
        if !q.is_finite() {
            return Err(Error::NonFiniteObjective { epoch, sentence: n });
        }
        total += q;
    }
    Ok(total)
}

/// Trained DWA parameters with everything needed to decode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DwaModel {
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
    pub classes: ClassPartition,
    pub params: DwaParams,
    pub lambda: f64,
    pub p0: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub q: f64,
    pub elapsed_ms: u128,
}

impl std::fmt::Display for EpochReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "epoch={} Q={} elapsed_ms={}", self.epoch, self.q, self.elapsed_ms)
    }
}

/// Q before training followed by Q after every epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DwaTrainReport {
    pub q: Vec<f64>,
}

impl DwaModel {
    /// Fresh model for `corpus` with classes built from the target vocabulary.
    pub fn init(corpus: &ParallelCorpus, fa: &FaParams, config: &DwaTrainConfig) -> Result<DwaModel> {
        config.validate()?;
        let classes = ClassPartition::build(corpus.tgt_vocab());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = DwaParams::init(
            corpus.src_vocab().len(),
            corpus.tgt_vocab().len(),
            classes.num_classes(),
            config.d,
            config.k,
            &mut rng,
        );
        if config.unigram_bias_init {
            unigram_biases(&mut params, corpus.tgt_vocab(), &classes);
        }
        Ok(DwaModel {
            src_vocab: corpus.src_vocab().clone(),
            tgt_vocab: corpus.tgt_vocab().clone(),
            classes,
            params,
            lambda: config.lambda_init.unwrap_or(fa.lambda),
            p0: config.p0.unwrap_or(fa.p0),
        })
    }

    pub fn null_id(&self) -> WordId {
        self.src_vocab.null_id().expect("source vocab has NULL")
    }

    /// Log translation probabilities for a pair; column 0 is NULL.
    pub fn log_probs(&self, pair: &SentencePair) -> Array2<f64> {
        lbl::sentence_log_probs(pair, &self.params, &self.classes)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        serialize::to_bytes(MODEL_KIND, self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<DwaModel> {
        let m: DwaModel = serialize::from_bytes(MODEL_KIND, bytes)?;
        m.params.check_shapes()?;
        let consistent = m.params.src_vocab() == m.src_vocab.len()
            && m.params.tgt_vocab() == m.tgt_vocab.len()
            && m.classes.vocab_size() == m.tgt_vocab.len()
            && m.classes.num_classes() == m.params.num_classes()
            && m.src_vocab.null_id().is_some();
        if !consistent {
            return Err(Error::Model("parameters do not match vocabularies".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        serialize::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<DwaModel> {
        DwaModel::from_bytes(&serialize::read_file(path)?)
    }
}

fn unigram_biases(params: &mut DwaParams, vocab: &Vocab, classes: &ClassPartition) {
    let smoothed = |f: WordId| vocab.freq(f) as f64 + 1.0;
    let total: f64 = (0..vocab.len() as WordId).map(smoothed).sum();
    for (c, members) in classes.all_members().iter().enumerate() {
        let class_total: f64 = members.iter().map(|&m| smoothed(m)).sum();
        params.b_c[c] = (class_total / total).ln();
        for &m in members {
            params.b_f[m as usize] = (smoothed(m) / class_total).ln();
        }
    }
}

pub fn train_dwa(
    corpus: &ParallelCorpus,
    fa: &FaParams,
    config: &DwaTrainConfig,
) -> Result<(DwaModel, DwaTrainReport)> {
    train_dwa_with(corpus, fa, config, |_| {})
}

/// Runs `config.epochs` M-step epochs. `observer` receives the initial Q
/// (epoch 0) and the Q after every epoch.
pub fn train_dwa_with(
    corpus: &ParallelCorpus,
    fa: &FaParams,
    config: &DwaTrainConfig,
    mut observer: impl FnMut(&EpochReport),
) -> Result<(DwaModel, DwaTrainReport)> {
    let start = Instant::now();
    let mut model = DwaModel::init(corpus, fa, config)?;
    if fa.ttable.dim() != (corpus.src_vocab().len(), corpus.tgt_vocab().len()) {
        return Err(Error::InvalidArgument(
            "FA model does not match the corpus vocabularies".into(),
        ));
    }
    let null_id = model.null_id();
    let mut report = DwaTrainReport::default();
    let mut emit = |epoch: usize, q: f64, report: &mut DwaTrainReport| {
        report.q.push(q);
        observer(&EpochReport {
            epoch,
            q,
            elapsed_ms: start.elapsed().as_millis(),
        });
    };
    emit(0, checked_q(corpus, &model, fa, 0)?, &mut report);
    if config.epochs == 0 {
        return Ok((model, report));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0fad);
    let mut state = AdaGradState::new(&model.params, config.eta, config.eps);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let pool = if config.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| Error::InvalidArgument(e.to_string()))?,
        )
    } else {
        None
    };
    let mut buffers: Vec<DwaGradient> = (0..config.threads)
        .map(|_| DwaGradient::zeros_like(&model.params))
        .collect();

    for epoch in 1..=config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut lambda_stats = LambdaStats::default();
        match &pool {
            None => {
                let grad = &mut buffers[0];
                for &n in &order {
                    let pair = &corpus.pairs()[n];
                    let gamma = frozen_posteriors(pair, fa, null_id);
                    grad.clear();
                    lbl::accumulate_weighted_logprob_grad(pair, &gamma, &model.params, &model.classes, grad);
                    state.step(&mut model.params, grad)?;
                    lambda_stats.observe(&gamma);
                }
            }
            Some(pool) => {
                // gradients of a batch are computed against one snapshot,
                // then applied in order
                for batch in order.chunks(config.threads) {
                    let params = &model.params;
                    let classes = &model.classes;
                    let gammas: Vec<PosteriorTable> = pool.install(|| {
                        batch
                            .par_iter()
                            .zip(buffers.par_iter_mut())
                            .map(|(&n, grad)| {
                                let pair = &corpus.pairs()[n];
                                let gamma = frozen_posteriors(pair, fa, null_id);
                                grad.clear();
                                lbl::accumulate_weighted_logprob_grad(pair, &gamma, params, classes, grad);
                                gamma
                            })
                            .collect()
                    });
                    for (grad, gamma) in buffers.iter_mut().zip(&gammas) {
                        state.step(&mut model.params, grad)?;
                        lambda_stats.observe(gamma);
                    }
                }
            }
        }
        if config.optimize_lambda {
            model.lambda = lambda_stats.optimize(model.lambda);
        }
        if let Some(block) = model.params.first_non_finite() {
            return Err(Error::NonFiniteGradient { block });
        }
        emit(epoch, checked_q(corpus, &model, fa, epoch)?, &mut report);
    }
    Ok((model, report))
}

/// Per target position, the source position maximizing
/// `prior(i | j) p_i(f_j)`; NULL winners emit no link.
pub fn dwa_viterbi(pair: &SentencePair, model: &DwaModel) -> AlignmentLinks {
    let log_probs = model.log_probs(pair);
    fa_align::viterbi_decode(pair, model.lambda, model.p0, |r, i| log_probs[[r, i]].exp())
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl AlignmentModel for DwaModel {
    fn sentence_loglik(&self, pair: &SentencePair) -> f64 {
        let log_probs = self.log_probs(pair);
        let (src_len, tgt_len) = (pair.src_len(), pair.tgt_len());
        let mut prior = vec![0.0; src_len + 1];
        (0..tgt_len)
            .map(|r| {
                fa_align::prior_row(r + 1, src_len, tgt_len, self.lambda, self.p0, &mut prior);
                log_sum_exp(prior.iter().enumerate().map(|(i, p)| p.ln() + log_probs[[r, i]]))
            })
            .sum()
    }

    fn viterbi(&self, pair: &SentencePair) -> AlignmentLinks {
        dwa_viterbi(pair, self)
    }
}

/// Convenience: FA model and DWA config in, trained DWA model out.
pub fn train_from_fa(
    corpus: &ParallelCorpus,
    fa: &FaModel,
    config: &DwaTrainConfig,
) -> Result<(DwaModel, DwaTrainReport)> {
    train_dwa(corpus, &fa.params, config)
}
