//! Bilingual word alignment and distributed word representations.
//!
//! The crate provides two alignment models over a shared parallel-corpus
//! representation:
//!
//! * [`fa_align`]: a log-linear reparametrization of IBM Model 2 with a single
//!   diagonal-tension parameter and a multinomial translation table, trained
//!   with EM.
//! * [`dwa`]: a distributed alignment model whose translation probabilities
//!   come from a class-factorized log-bilinear energy over word embeddings
//!   ([`lbl`]). Its M-step is optimized with AdaGrad while the E-step
//!   posteriors stay frozen to those of a trained FA model.
//!
//! [`eval`] covers alignment error rate, likelihood reporting and embedding
//! inspection, and [`transfer`] implements cross-lingual document
//! classification with an averaged perceptron.

pub mod corpus;
pub mod dwa;
pub mod error;
pub mod eval;
pub mod fa_align;
pub mod lbl;
pub mod serialize;
pub mod synth;
pub mod transfer;

pub use corpus::{ClassPartition, ParallelCorpus, SentencePair, Vocab, VocabSide};
pub use dwa::{DwaModel, DwaTrainConfig};
pub use error::{Error, Result};
pub use eval::{AlignmentLinks, GoldAlignment};
pub use fa_align::{FaConfig, FaModel, FaParams, PosteriorTable};
pub use lbl::{AdaGradState, DwaParams};
pub use transfer::{LabeledDocs, PerceptronModel};

/// Word id inside a [`Vocab`].
pub type WordId = u32;
