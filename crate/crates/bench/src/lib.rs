//! Shared fixtures for the criterion benches.

use dwalign::corpus::ParallelCorpus;
use dwalign::dwa::{DwaModel, DwaTrainConfig};
use dwalign::fa_align::{self, FaConfig, FaParams};
use dwalign::synth::{self, DictionaryCorpusConfig};

pub struct Fixture {
    pub corpus: ParallelCorpus,
    pub fa: FaParams,
}

/// Synthetic dictionary corpus with a trained FA model.
pub fn fixture(pairs: usize) -> Fixture {
    let data = synth::dictionary_corpus(&DictionaryCorpusConfig {
        pairs,
        ..Default::default()
    });
    let (corpus, _) = ParallelCorpus::from_raw(&data.raw, 1, None).expect("synthetic corpus encodes");
    let (fa, _) = fa_align::train_fa(&corpus, &FaConfig::default()).expect("FA trains");
    Fixture { corpus, fa }
}

pub fn dwa_config(d: usize, k: usize, epochs: usize) -> DwaTrainConfig {
    DwaTrainConfig {
        epochs,
        d,
        k,
        ..Default::default()
    }
}

pub fn dwa_model(fx: &Fixture, d: usize, k: usize) -> DwaModel {
    DwaModel::init(&fx.corpus, &fx.fa, &dwa_config(d, k, 0)).expect("valid config")
}
