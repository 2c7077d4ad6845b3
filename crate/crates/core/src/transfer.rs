//! Cross-lingual document classification through projected embeddings.
//!
//! Source-language words are mapped to the embedding of their most probable
//! translation, documents are averaged into single vectors, and an averaged
//! multiclass perceptron trained on one language is evaluated on the other.

use std::io::BufRead;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ClassPartition;
use crate::error::{Error, Result};
use crate::lbl::{self, DwaParams};
use crate::WordId;

pub const DEFAULT_PERCEPTRON_EPOCHS: usize = 3;

/// Most probable translation of `e` under its own single-word context, ties
/// to the smallest id.
pub fn best_translation(e: WordId, params: &DwaParams, classes: &ClassPartition) -> WordId {
    let probs = lbl::isolated_translation_probs(e, params, classes);
    let mut best = 0;
    for (f, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = f;
        }
    }
    best as WordId
}

/// Embedding of the most probable translation of `e`.
pub fn project_embedding(e: WordId, params: &DwaParams, classes: &ClassPartition) -> Array1<f64> {
    params
        .r_tgt
        .row(best_translation(e, params, classes) as usize)
        .to_owned()
}

/// Projected embedding for every source id.
pub fn projection_table(params: &DwaParams, classes: &ClassPartition) -> Array2<f64> {
    let mut table = Array2::zeros((params.src_vocab(), params.d));
    for (e, mut row) in table.outer_iter_mut().enumerate() {
        row.assign(
            &params
                .r_tgt
                .row(best_translation(e as WordId, params, classes) as usize),
        );
    }
    table
}

/// Mean embedding of the tokens `lookup` knows. Returns the vector and the
/// number of tokens used; a document with no known token maps to zero.
pub fn doc_representation<'a, S: AsRef<str>>(
    tokens: &[S],
    d: usize,
    lookup: impl Fn(&str) -> Option<ArrayView1<'a, f64>>,
) -> (Array1<f64>, usize) {
    let mut sum = Array1::zeros(d);
    let mut used = 0;
    for tok in tokens {
        if let Some(v) = lookup(tok.as_ref()) {
            sum += &v;
            used += 1;
        }
    }
    if used > 0 {
        sum /= used as f64;
    }
    (sum, used)
}

/// Documents with dense integer labels.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabeledDocs {
    pub docs: Vec<(Vec<String>, usize)>,
    pub label_names: Vec<String>,
}

impl LabeledDocs {
    /// Parses `label<TAB>token token ...` lines. Labels already in
    /// `label_names` keep their ids; new ones are appended, so a training
    /// and a test file can share one label set.
    pub fn parse<R: BufRead>(reader: R, label_names: Vec<String>, context: &str) -> Result<LabeledDocs> {
        let mut out = LabeledDocs {
            docs: Vec::new(),
            label_names,
        };
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(context, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let (label, text) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(context, n + 1, "expected `label<TAB>tokens`"))?;
            let label = out.label_id(label);
            out.docs
                .push((text.split_ascii_whitespace().map(str::to_string).collect(), label));
        }
        Ok(out)
    }

    pub fn read(path: &std::path::Path, label_names: Vec<String>) -> Result<LabeledDocs> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        LabeledDocs::parse(std::io::BufReader::new(f), label_names, &path.display().to_string())
    }

    pub fn label_id(&mut self, name: &str) -> usize {
        match self.label_names.iter().position(|l| l == name) {
            Some(id) => id,
            None => {
                self.label_names.push(name.to_string());
                self.label_names.len() - 1
            }
        }
    }

    pub fn labels(&self) -> Vec<usize> {
        self.docs.iter().map(|(_, l)| *l).collect()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn write_to<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        for (tokens, label) in &self.docs {
            writeln!(w, "{}\t{}", self.label_names[*label], tokens.join(" "))?;
        }
        Ok(())
    }
}

/// Document vectors with a count of documents that had no known token.
#[derive(Clone, Debug)]
pub struct DocVectors {
    pub vectors: Array2<f64>,
    pub labels: Vec<usize>,
    pub empty_docs: usize,
}

pub fn vectorize<'a>(
    docs: &LabeledDocs,
    d: usize,
    lookup: impl Fn(&str) -> Option<ArrayView1<'a, f64>> + Copy,
) -> DocVectors {
    let mut vectors = Array2::zeros((docs.len(), d));
    let mut empty_docs = 0;
    for ((tokens, _), mut row) in docs.docs.iter().zip(vectors.outer_iter_mut()) {
        let (v, used) = doc_representation(tokens, d, lookup);
        if used == 0 {
            empty_docs += 1;
        }
        row.assign(&v);
    }
    DocVectors {
        vectors,
        labels: docs.labels(),
        empty_docs,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerceptronConfig {
    pub epochs: usize,
    pub seed: u64,
    /// Append a constant-1 feature.
    pub bias: bool,
    pub shuffle: bool,
}

impl Default for PerceptronConfig {
    fn default() -> Self {
        PerceptronConfig {
            epochs: DEFAULT_PERCEPTRON_EPOCHS,
            seed: 1,
            bias: true,
            shuffle: true,
        }
    }
}

/// Multiclass perceptron with one weight row per label. Predictions use the
/// average of the weights after every training example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerceptronModel {
    pub weights: Array2<f64>,
    pub averaged_weights: Array2<f64>,
    /// Training examples processed.
    pub steps: usize,
    /// Mistake-driven updates made.
    pub update_count: usize,
    pub bias: bool,
}

fn argmax_row(weights: ArrayView2<f64>, x: ArrayView1<f64>) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (y, w) in weights.outer_iter().enumerate() {
        let score = w.dot(&x);
        if score > best_score {
            best = y;
            best_score = score;
        }
    }
    best
}

fn augment(x: ArrayView1<f64>, bias: bool) -> Array1<f64> {
    if !bias {
        return x.to_owned();
    }
    let mut out = Array1::ones(x.len() + 1);
    out.slice_mut(s![..x.len()]).assign(&x);
    out
}

impl PerceptronModel {
    pub fn num_labels(&self) -> usize {
        self.weights.nrows()
    }

    /// Label with the highest averaged score, ties to the smallest label.
    pub fn predict(&self, x: ArrayView1<f64>) -> usize {
        argmax_row(self.averaged_weights.view(), augment(x, self.bias).view())
    }
}

/// Trains on the rows of `xs`. Mistakes move `x` onto the gold row and off
/// the predicted row. The example order is reshuffled each epoch from
/// `config.seed`.
pub fn train_perceptron(
    xs: ArrayView2<f64>,
    labels: &[usize],
    num_labels: usize,
    config: &PerceptronConfig,
) -> Result<PerceptronModel> {
    if config.epochs == 0 {
        return Err(Error::InvalidArgument("perceptron epochs must be >= 1".into()));
    }
    if xs.nrows() != labels.len() {
        return Err(Error::InvalidArgument("one label per document required".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_labels) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range")));
    }
    let dim = xs.ncols() + usize::from(config.bias);
    let mut weights = Array2::<f64>::zeros((num_labels, dim));
    // sum over updates of (step - 1) * delta; average = w - lagged / steps
    let mut lagged = Array2::<f64>::zeros((num_labels, dim));
    let mut steps = 0usize;
    let mut update_count = 0usize;
    let mut order: Vec<usize> = (0..xs.nrows()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        for &n in &order {
            steps += 1;
            let x = augment(xs.row(n), config.bias);
            let gold = labels[n];
            let guess = argmax_row(weights.view(), x.view());
            if guess != gold {
                update_count += 1;
                let lag = (steps - 1) as f64;
                weights.row_mut(gold).scaled_add(1.0, &x);
                weights.row_mut(guess).scaled_add(-1.0, &x);
                lagged.row_mut(gold).scaled_add(lag, &x);
                lagged.row_mut(guess).scaled_add(-lag, &x);
            }
        }
    }
    let averaged_weights = if steps == 0 {
        weights.clone()
    } else {
        &weights - &(lagged / steps as f64)
    };
    Ok(PerceptronModel {
        weights,
        averaged_weights,
        steps,
        update_count,
        bias: config.bias,
    })
}

/// Fraction of rows whose prediction matches the gold label.
pub fn classify_eval(model: &PerceptronModel, xs: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    if xs.nrows() == 0 {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    if xs.nrows() != labels.len() {
        return Err(Error::InvalidArgument("one label per document required".into()));
    }
    let correct = xs
        .outer_iter()
        .zip(labels)
        .filter(|(x, &y)| model.predict(*x) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Accuracy on `test` of always predicting the most frequent `train` label
/// (ties to the smallest label).
pub fn majority_baseline(train: &[usize], test: &[usize]) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let n = train.iter().chain(test).max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; n];
    for &l in train {
        counts[l] += 1;
    }
    let mut majority = 0;
    for (l, &c) in counts.iter().enumerate() {
        if c > counts[majority] {
            majority = l;
        }
    }
    test.iter().filter(|&&l| l == majority).count() as f64 / test.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};
    use proptest::prelude::*;

    fn no_bias(epochs: usize) -> PerceptronConfig {
        PerceptronConfig {
            epochs,
            bias: false,
            ..Default::default()
        }
    }

    #[test]
    fn single_mistake_update() {
        let xs = array![[1.0, 0.0]];
        let m = train_perceptron(xs.view(), &[1], 2, &no_bias(1)).unwrap();
        assert_eq!(m.weights.row(1).to_vec(), vec![1.0, 0.0]);
        assert_eq!(m.weights.row(0).to_vec(), vec![-1.0, 0.0]);
        assert_eq!(m.update_count, 1);
    }

    #[test]
    fn zero_documents_predict_first_label() {
        let xs = Array2::zeros((3, 2));
        let m = train_perceptron(xs.view(), &[1, 0, 1], 2, &no_bias(3)).unwrap();
        assert!(m.weights.iter().all(|w| *w == 0.0));
        assert_eq!(m.predict(xs.row(0)), 0);
    }

    #[test]
    fn separable_set_is_learned() {
        let xs = array![[1.0, 0.2], [-0.5, 1.0]];
        let m = train_perceptron(xs.view(), &[0, 1], 2, &PerceptronConfig::default()).unwrap();
        assert_eq!(classify_eval(&m, xs.view(), &[0, 1]).unwrap(), 1.0);
    }

    #[test]
    fn wrong_single_prediction_scores_zero() {
        let xs = array![[1.0, 0.0]];
        let m = train_perceptron(xs.view(), &[1], 2, &no_bias(1)).unwrap();
        assert_eq!(classify_eval(&m, xs.view(), &[0]).unwrap(), 0.0);
        assert!(classify_eval(&m, Array2::zeros((0, 2)).view(), &[]).is_err());
    }

    #[test]
    fn majority_of_skewed_labels() {
        let mut test = vec![0; 468];
        test.extend(vec![1; 300]);
        test.extend(vec![2; 232]);
        assert!((majority_baseline(&[0, 0, 1], &test) - 0.468).abs() < 1e-12);
    }

    fn brute_force_average(xs: ArrayView2<f64>, labels: &[usize], l: usize, cfg: &PerceptronConfig) -> Array2<f64> {
        // keep every snapshot explicitly
        let dim = xs.ncols() + usize::from(cfg.bias);
        let mut w = Array2::<f64>::zeros((l, dim));
        let mut sum = Array2::<f64>::zeros((l, dim));
        let mut steps = 0.0;
        let mut order: Vec<usize> = (0..xs.nrows()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for _ in 0..cfg.epochs {
            if cfg.shuffle {
                order.shuffle(&mut rng);
            }
            for &n in &order {
                let x = augment(xs.row(n), cfg.bias);
                let scores: Vec<f64> = w.outer_iter().map(|r| r.dot(&x)).collect();
                let guess = (0..l).fold(0, |b, y| if scores[y] > scores[b] { y } else { b });
                if guess != labels[n] {
                    w.row_mut(labels[n]).scaled_add(1.0, &x);
                    w.row_mut(guess).scaled_add(-1.0, &x);
                }
                sum += &w;
                steps += 1.0;
            }
        }
        sum / steps
    }

    proptest! {
        #[test]
        fn lazy_average_matches_snapshot_mean(
            seed in any::<u64>(),
            raw in prop::collection::vec((prop::collection::vec(-2.0f64..2.0, 3), 0usize..3), 1..12),
            epochs in 1usize..4,
            bias in any::<bool>(),
        ) {
            let xs = Array2::from_shape_vec((raw.len(), 3), raw.iter().flat_map(|(x, _)| x.clone()).collect()).unwrap();
            let labels: Vec<usize> = raw.iter().map(|(_, l)| *l).collect();
            let cfg = PerceptronConfig { epochs, seed, bias, shuffle: true };
            let m = train_perceptron(xs.view(), &labels, 3, &cfg).unwrap();
            let want = brute_force_average(xs.view(), &labels, 3, &cfg);
            for (a, b) in m.averaged_weights.iter().zip(want.iter()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            // mistake updates conserve the zero sum over label rows
            for c in m.weights.sum_axis(ndarray::Axis(0)).iter() {
                prop_assert!(c.abs() < 1e-9);
            }
        }

        #[test]
        fn positive_scaling_keeps_predictions(
            seed in any::<u64>(),
            raw in prop::collection::vec((prop::collection::vec(-2.0f64..2.0, 3), 0usize..3), 1..12),
            c in 0.01f64..50.0,
        ) {
            let xs = Array2::from_shape_vec((raw.len(), 3), raw.iter().flat_map(|(x, _)| x.clone()).collect()).unwrap();
            let labels: Vec<usize> = raw.iter().map(|(_, l)| *l).collect();
            let cfg = PerceptronConfig { epochs: 3, seed, bias: false, shuffle: true };
            let a = train_perceptron(xs.view(), &labels, 3, &cfg).unwrap();
            let scaled = &xs * c;
            let b = train_perceptron(scaled.view(), &labels, 3, &cfg).unwrap();
            prop_assert_eq!(a.update_count, b.update_count);
            for (x, xs_) in xs.outer_iter().zip(scaled.outer_iter()) {
                prop_assert_eq!(a.predict(x), b.predict(xs_));
            }
        }

        #[test]
        fn doc_average_ignores_order(perm_seed in any::<u64>()) {
            let emb = array![[1.0, 0.0], [0.0, 1.0], [2.0, -1.0]];
            let names = ["a", "b", "c"];
            let lookup = |t: &str| names.iter().position(|n| *n == t).map(|i| emb.row(i));
            let mut tokens = vec!["a", "b", "c", "a", "zz"];
            let (v1, _) = doc_representation(&tokens, 2, lookup);
            tokens.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
            let (v2, _) = doc_representation(&tokens, 2, lookup);
            for (x, y) in v1.iter().zip(v2.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn repeated_single_example_average_agrees_with_final() {
        let xs = array![[0.3, -1.0], [0.3, -1.0], [0.3, -1.0]];
        let m = train_perceptron(xs.view(), &[2, 2, 2], 3, &PerceptronConfig::default()).unwrap();
        let x = xs.row(0);
        let aug = augment(x, true);
        assert_eq!(m.predict(x), argmax_row(m.weights.view(), aug.view()));
    }

    #[test]
    fn doc_representation_cases() {
        let emb = array![[1.0, 0.0], [0.0, 1.0]];
        let lookup = |t: &str| match t {
            "a" => Some(emb.row(0)),
            "b" => Some(emb.row(1)),
            _ => None,
        };
        assert_eq!(doc_representation(&["a"], 2, lookup).0.to_vec(), vec![1.0, 0.0]);
        assert_eq!(doc_representation(&["a", "b"], 2, lookup).0.to_vec(), vec![0.5, 0.5]);
        let (v, used) = doc_representation(&["x", "y"], 2, lookup);
        assert_eq!((v.to_vec(), used), (vec![0.0, 0.0], 0));
    }

    #[test]
    fn projection_picks_argmax_row() {
        let classes = ClassPartition::single(4);
        let mut p = DwaParams::zeros(2, 4, 1, 2, 0);
        p.r_tgt = array![[1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [4.0, 0.0]];
        p.t_word = Array3::zeros((1, 2, 2));
        // zero query: ties resolve to the first id
        assert_eq!(best_translation(1, &p, &classes), 0);
        assert_eq!(project_embedding(1, &p, &classes).to_vec(), vec![1.0, 0.0]);
        p.b_f[3] = 5.0;
        assert_eq!(project_embedding(1, &p, &classes).to_vec(), vec![4.0, 0.0]);
        let table = projection_table(&p, &classes);
        assert_eq!(table.row(0).to_vec(), vec![4.0, 0.0]);
    }

    #[test]
    fn labeled_docs_parse_and_share_labels() {
        let train = LabeledDocs::parse("pos\ta b\nneg\tc\n".as_bytes(), vec![], "t").unwrap();
        assert_eq!(train.labels(), vec![0, 1]);
        let test = LabeledDocs::parse("neg\tx\nother\ty z\n".as_bytes(), train.label_names.clone(), "t").unwrap();
        assert_eq!(test.labels(), vec![1, 2]);
        assert_eq!(test.docs[1].0, vec!["y", "z"]);
        assert!(LabeledDocs::parse("no tab here\n".as_bytes(), vec![], "t").is_err());
    }
}
