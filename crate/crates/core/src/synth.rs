//! Seeded synthetic data: a dictionary-translated parallel corpus with gold
//! links, and topic-labelled documents in both languages.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::RawCorpus;
use crate::eval::GoldAlignment;
use crate::transfer::LabeledDocs;

pub fn src_word(n: usize) -> String {
    format!("s{n}")
}

pub fn tgt_word(n: usize) -> String {
    format!("t{n}")
}

#[derive(Clone, Debug)]
pub struct DictionaryCorpusConfig {
    /// Size of both vocabularies; word `s{n}` translates to `t{n}`.
    pub words: usize,
    pub pairs: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Zipf exponent of source word frequencies.
    pub zipf: f64,
    /// Chance of inserting an unaligned target token after each position.
    pub noise_rate: f64,
    /// Chance of swapping each adjacent target pair.
    pub swap_rate: f64,
    pub seed: u64,
}

impl Default for DictionaryCorpusConfig {
    fn default() -> Self {
        DictionaryCorpusConfig {
            words: 50,
            pairs: 2000,
            min_len: 3,
            max_len: 10,
            zipf: 0.7,
            noise_rate: 0.1,
            swap_rate: 0.0,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub raw: RawCorpus,
    /// Sure links `(src_pos, tgt_pos)`, 0-based.
    pub gold: Vec<GoldAlignment>,
}

pub fn dictionary_corpus(cfg: &DictionaryCorpusConfig) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let weights: Vec<f64> = (1..=cfg.words).map(|r| (r as f64).powf(-cfg.zipf)).collect();
    let zipf = WeightedIndex::new(&weights).expect("positive weights");
    let mut raw = RawCorpus::default();
    let mut gold = Vec::with_capacity(cfg.pairs);
    for _ in 0..cfg.pairs {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let src: Vec<usize> = (0..len).map(|_| zipf.sample(&mut rng)).collect();
        // (word, source position or None for noise)
        let mut tgt: Vec<(usize, Option<usize>)> = Vec::new();
        for (i, &w) in src.iter().enumerate() {
            tgt.push((w, Some(i)));
            if rng.random_bool(cfg.noise_rate) {
                tgt.push((rng.random_range(0..cfg.words), None));
            }
        }
        let mut j = 0;
        while j + 1 < tgt.len() {
            if rng.random_bool(cfg.swap_rate) {
                tgt.swap(j, j + 1);
                j += 2;
            } else {
                j += 1;
            }
        }
        let sure = tgt.iter().enumerate().filter_map(|(j, (_, i))| i.map(|i| (i, j)));
        gold.push(GoldAlignment::from_links(sure, []));
        raw.src.push(src.iter().map(|&w| src_word(w)).collect());
        raw.tgt.push(tgt.iter().map(|&(w, _)| tgt_word(w)).collect());
    }
    SyntheticCorpus { raw, gold }
}

#[derive(Clone, Debug)]
pub struct TopicDocsConfig {
    pub words: usize,
    pub class_priors: Vec<f64>,
    pub train_docs: usize,
    pub test_docs: usize,
    pub doc_len: usize,
    /// Chance a token comes from the document's topic words.
    pub topic_share: f64,
    pub seed: u64,
}

impl Default for TopicDocsConfig {
    fn default() -> Self {
        TopicDocsConfig {
            words: 50,
            class_priors: vec![0.4, 0.3, 0.2, 0.1],
            train_docs: 200,
            test_docs: 200,
            doc_len: 20,
            topic_share: 0.7,
            seed: 11,
        }
    }
}

/// Training documents use source words, test documents target words. Word
/// `n` belongs to topic `n % classes`.
pub fn topic_docs(cfg: &TopicDocsConfig) -> (LabeledDocs, LabeledDocs) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let classes = cfg.class_priors.len();
    let prior = WeightedIndex::new(&cfg.class_priors).expect("positive priors");
    let label_names: Vec<String> = (0..classes).map(|c| format!("topic{c}")).collect();
    let mut make = |n: usize, word: fn(usize) -> String| {
        let mut docs = LabeledDocs {
            docs: Vec::with_capacity(n),
            label_names: label_names.clone(),
        };
        for _ in 0..n {
            let label = prior.sample(&mut rng);
            let tokens = (0..cfg.doc_len)
                .map(|_| {
                    let w = if rng.random_bool(cfg.topic_share) {
                        let per_topic = (cfg.words - label).div_ceil(classes);
                        label + classes * rng.random_range(0..per_topic)
                    } else {
                        rng.random_range(0..cfg.words)
                    };
                    word(w)
                })
                .collect();
            docs.docs.push((tokens, label));
        }
        docs
    };
    let train = make(cfg.train_docs, src_word);
    let test = make(cfg.test_docs, tgt_word);
    (train, test)
}
