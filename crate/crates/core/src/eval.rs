//! Alignment error rate, likelihood reporting and embedding inspection.

use std::collections::BTreeSet;
use std::io::{BufRead, Read};

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::corpus::{ClassPartition, ParallelCorpus, SentencePair};
use crate::error::{Error, Result};
use crate::lbl::{self, DwaParams};
use crate::WordId;

/// Anything that can score and decode sentence pairs.
pub trait AlignmentModel {
    /// Marginal log-likelihood of the target sentence given the source.
    fn sentence_loglik(&self, pair: &SentencePair) -> f64;

    fn viterbi(&self, pair: &SentencePair) -> AlignmentLinks;
}

/// Predicted links `(src_pos, tgt_pos)`, 0-based, NULL excluded. Iteration
/// is ordered by target position, then source position.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AlignmentLinks {
    // stored as (tgt, src) so iteration follows target order
    links: BTreeSet<(usize, usize)>,
}

impl AlignmentLinks {
    pub fn insert(&mut self, src: usize, tgt: usize) -> bool {
        self.links.insert((tgt, src))
    }

    pub fn contains(&self, src: usize, tgt: usize) -> bool {
        self.links.contains(&(tgt, src))
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Links as `(src, tgt)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.links.iter().map(|&(t, s)| (s, t))
    }

    /// Pharaoh line: space-separated `i-j` links in increasing `j`.
    pub fn to_pharaoh(&self) -> String {
        self.iter()
            .map(|(s, t)| format!("{s}-{t}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn parse_pharaoh(line: &str) -> std::result::Result<AlignmentLinks, String> {
        let mut links = AlignmentLinks::default();
        for item in line.split_ascii_whitespace() {
            let (s, t) = item.split_once('-').ok_or_else(|| format!("bad link `{item}`"))?;
            let s = s.parse().map_err(|_| format!("bad source index in `{item}`"))?;
            let t = t.parse().map_err(|_| format!("bad target index in `{item}`"))?;
            links.insert(s, t);
        }
        Ok(links)
    }
}

impl FromIterator<(usize, usize)> for AlignmentLinks {
    fn from_iter<I: IntoIterator<Item = (usize, usize)>>(iter: I) -> Self {
        let mut links = AlignmentLinks::default();
        for (s, t) in iter {
            links.insert(s, t);
        }
        links
    }
}

pub fn read_pharaoh<R: BufRead>(reader: R, context: &str) -> Result<Vec<AlignmentLinks>> {
    reader
        .lines()
        .enumerate()
        .map(|(n, line)| {
            let line = line.map_err(|e| Error::io(context, e))?;
            AlignmentLinks::parse_pharaoh(&line).map_err(|m| Error::format(context, n + 1, m))
        })
        .collect()
}

/// Gold sure and possible links, `(src_pos, tgt_pos)`, 0-based.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GoldAlignment {
    pub sure: BTreeSet<(usize, usize)>,
    pub possible: BTreeSet<(usize, usize)>,
}

impl GoldAlignment {
    /// Sure links are added to the possible set.
    pub fn from_links(
        sure: impl IntoIterator<Item = (usize, usize)>,
        possible: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let sure: BTreeSet<_> = sure.into_iter().collect();
        let mut possible: BTreeSet<_> = possible.into_iter().collect();
        possible.extend(sure.iter().copied());
        GoldAlignment { sure, possible }
    }
}

/// Parses `pair_index src_pos tgt_pos flag` lines (flag `S` or `P`). The
/// result has at least `min_pairs` entries; pairs without lines get an
/// empty gold alignment.
pub fn parse_gold<R: BufRead>(reader: R, min_pairs: usize, context: &str) -> Result<Vec<GoldAlignment>> {
    let mut gold: Vec<GoldAlignment> = vec![GoldAlignment::default(); min_pairs];
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(context, e))?;
        let fields: Vec<&str> = line.split_ascii_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let bad = |m: &str| Error::format(context, n + 1, m);
        if fields.len() != 4 {
            return Err(bad("expected `pair_index src_pos tgt_pos flag`"));
        }
        let idx: usize = fields[0].parse().map_err(|_| bad("bad pair index"))?;
        let s: usize = fields[1].parse().map_err(|_| bad("bad source position"))?;
        let t: usize = fields[2].parse().map_err(|_| bad("bad target position"))?;
        if idx >= gold.len() {
            gold.resize(idx + 1, GoldAlignment::default());
        }
        match fields[3] {
            "S" => {
                gold[idx].sure.insert((s, t));
                gold[idx].possible.insert((s, t));
            }
            "P" => {
                gold[idx].possible.insert((s, t));
            }
            other => return Err(bad(&format!("flag must be S or P, got `{other}`"))),
        }
    }
    Ok(gold)
}

pub fn read_gold(path: &std::path::Path, min_pairs: usize) -> Result<Vec<GoldAlignment>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_gold(std::io::BufReader::new(f), min_pairs, &path.display().to_string())
}

pub fn write_gold<W: std::io::Write>(gold: &[GoldAlignment], mut w: W) -> std::io::Result<()> {
    for (n, g) in gold.iter().enumerate() {
        for &(s, t) in &g.sure {
            writeln!(w, "{n} {s} {t} S")?;
        }
        for &(s, t) in g.possible.difference(&g.sure) {
            writeln!(w, "{n} {s} {t} P")?;
        }
    }
    Ok(())
}

/// Link counts entering the AER ratio.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AerCounts {
    pub predicted_and_sure: usize,
    pub predicted_and_possible: usize,
    pub predicted: usize,
    pub sure: usize,
}

impl AerCounts {
    pub fn of(predicted: &AlignmentLinks, gold: &GoldAlignment) -> Result<AerCounts> {
        if !gold.sure.is_subset(&gold.possible) {
            return Err(Error::InvalidArgument(
                "sure links must be a subset of possible links".into(),
            ));
        }
        Ok(AerCounts {
            predicted_and_sure: predicted.iter().filter(|l| gold.sure.contains(l)).count(),
            predicted_and_possible: predicted.iter().filter(|l| gold.possible.contains(l)).count(),
            predicted: predicted.len(),
            sure: gold.sure.len(),
        })
    }

    pub fn add(&mut self, other: &AerCounts) {
        self.predicted_and_sure += other.predicted_and_sure;
        self.predicted_and_possible += other.predicted_and_possible;
        self.predicted += other.predicted;
        self.sure += other.sure;
    }

    /// `1 - (|A∩S| + |A∩P|) / (|A| + |S|)`, or 0 when both sets are empty.
    pub fn aer(&self) -> f64 {
        let denom = self.predicted + self.sure;
        if denom == 0 {
            return 0.0;
        }
        1.0 - (self.predicted_and_sure + self.predicted_and_possible) as f64 / denom as f64
    }
}

pub fn aer(predicted: &AlignmentLinks, gold: &GoldAlignment) -> Result<f64> {
    Ok(AerCounts::of(predicted, gold)?.aer())
}

/// AER from counts aggregated over the corpus.
pub fn corpus_aer(predicted: &[AlignmentLinks], gold: &[GoldAlignment]) -> Result<f64> {
    if predicted.len() != gold.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predicted alignments but {} gold alignments",
            predicted.len(),
            gold.len()
        )));
    }
    let mut total = AerCounts::default();
    for (p, g) in predicted.iter().zip(gold) {
        total.add(&AerCounts::of(p, g)?);
    }
    Ok(total.aer())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoglikReport {
    pub total: f64,
    pub per_token: f64,
    pub tokens: usize,
}

pub fn corpus_loglik(corpus: &ParallelCorpus, model: &impl AlignmentModel) -> LoglikReport {
    let total: f64 = corpus.pairs().iter().map(|p| model.sentence_loglik(p)).sum();
    let tokens = corpus.target_tokens();
    LoglikReport {
        total,
        per_token: if tokens == 0 { 0.0 } else { total / tokens as f64 },
        tokens,
    }
}

/// `sum_f p(f | e) r_f` with `e` as its own only context.
pub fn expected_translation_repr(e: WordId, params: &DwaParams, classes: &ClassPartition) -> Array1<f64> {
    let probs = lbl::isolated_translation_probs(e, params, classes);
    params.r_tgt.t().dot(&probs)
}

pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dot(&b) / (na * nb)
}

/// Top `n` rows of `embeddings` by cosine similarity to `query`; ties go to
/// the smaller id.
pub fn nearest_neighbors(query: ArrayView1<f64>, embeddings: ArrayView2<f64>, n: usize) -> Vec<(WordId, f64)> {
    let mut scored: Vec<(WordId, f64)> = embeddings
        .outer_iter()
        .enumerate()
        .map(|(id, row)| (id as WordId, cosine(query, row)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(n);
    scored
}

/// Reads a whole Pharaoh file from any reader.
pub fn read_pharaoh_from<R: Read>(reader: R, context: &str) -> Result<Vec<AlignmentLinks>> {
    read_pharaoh(std::io::BufReader::new(reader), context)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2, Array3};
    use proptest::prelude::*;

    fn links(v: &[(usize, usize)]) -> AlignmentLinks {
        v.iter().copied().collect()
    }

    fn gold(s: &[(usize, usize)], p: &[(usize, usize)]) -> GoldAlignment {
        GoldAlignment::from_links(s.iter().copied(), p.iter().copied())
    }

    #[test]
    fn aer_examples() {
        let g = gold(&[(0, 0)], &[(0, 0), (1, 1)]);
        assert_eq!(aer(&links(&[(0, 0), (1, 1)]), &g).unwrap(), 0.0);
        assert_eq!(aer(&links(&[(0, 1)]), &gold(&[(0, 0)], &[])).unwrap(), 1.0);
        assert_eq!(aer(&links(&[]), &gold(&[(0, 0)], &[])).unwrap(), 1.0);
        assert_eq!(aer(&links(&[]), &gold(&[], &[])).unwrap(), 0.0);
    }

    #[test]
    fn aer_rejects_sure_outside_possible() {
        let g = GoldAlignment {
            sure: [(0, 0)].into(),
            possible: BTreeSet::new(),
        };
        assert!(aer(&links(&[]), &g).is_err());
    }

    #[test]
    fn corpus_aer_aggregates_counts() {
        let preds = vec![links(&[(0, 0)]), links(&[(1, 0)])];
        let golds = vec![gold(&[(0, 0)], &[]), gold(&[(0, 0)], &[])];
        assert_eq!(corpus_aer(&preds, &golds).unwrap(), 0.5);
        assert_eq!(
            corpus_aer(&preds[..1], &golds[..1]).unwrap(),
            aer(&preds[0], &golds[0]).unwrap()
        );
        assert!(corpus_aer(&preds, &golds[..1]).is_err());
    }

    proptest! {
        #[test]
        fn corpus_aer_invariant_to_duplication_and_order(
            raw in prop::collection::vec(
                (prop::collection::vec((0usize..4, 0usize..4), 0..6),
                 prop::collection::vec((0usize..4, 0usize..4), 0..6),
                 prop::collection::vec((0usize..4, 0usize..4), 0..6)),
                1..6)
        ) {
            let preds: Vec<_> = raw.iter().map(|(a, _, _)| links(a)).collect();
            let golds: Vec<_> = raw.iter().map(|(_, s, p)| gold(s, p)).collect();
            let base = corpus_aer(&preds, &golds).unwrap();
            prop_assert!((0.0..=1.0).contains(&base));

            let mut p2 = preds.clone();
            p2.extend(preds.iter().cloned());
            let mut g2 = golds.clone();
            g2.extend(golds.iter().cloned());
            prop_assert!((corpus_aer(&p2, &g2).unwrap() - base).abs() < 1e-12);

            let pr: Vec<_> = preds.iter().rev().cloned().collect();
            let gr: Vec<_> = golds.iter().rev().cloned().collect();
            prop_assert_eq!(corpus_aer(&pr, &gr).unwrap(), base);
        }

        #[test]
        fn aer_zero_iff_sure_within_predicted_within_possible(
            a in prop::collection::btree_set((0usize..3, 0usize..3), 0..5),
            s in prop::collection::btree_set((0usize..3, 0usize..3), 0..5),
            p in prop::collection::btree_set((0usize..3, 0usize..3), 0..5),
        ) {
            let g = GoldAlignment::from_links(s.iter().copied(), p.iter().copied());
            let pred: AlignmentLinks = a.iter().copied().collect();
            let value = aer(&pred, &g).unwrap();
            prop_assert!((0.0..=1.0).contains(&value));
            if !a.is_empty() || !s.is_empty() {
                let perfect = g.sure.is_subset(&a) && a.is_subset(&g.possible);
                prop_assert_eq!(value == 0.0, perfect);
            }
        }
    }

    #[test]
    fn pharaoh_round_trip_orders_by_target() {
        let l = links(&[(2, 0), (0, 1), (1, 1)]);
        assert_eq!(l.to_pharaoh(), "2-0 0-1 1-1");
        assert_eq!(AlignmentLinks::parse_pharaoh("2-0 0-1 1-1").unwrap(), l);
        assert!(AlignmentLinks::parse_pharaoh("2_0").is_err());
        assert_eq!(AlignmentLinks::parse_pharaoh("").unwrap(), AlignmentLinks::default());
    }

    #[test]
    fn gold_file_parsing() {
        let text = "0 0 0 S\n0 1 1 P\n2 0 0 S\n";
        let g = parse_gold(text.as_bytes(), 1, "g").unwrap();
        assert_eq!(g.len(), 3);
        assert!(g[0].possible.contains(&(0, 0)) && g[0].sure.contains(&(0, 0)));
        assert!(!g[0].sure.contains(&(1, 1)));
        assert!(g[1].sure.is_empty());
        let mut out = Vec::new();
        write_gold(&g, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
        assert!(matches!(
            parse_gold("0 0 0 X\n".as_bytes(), 0, "g"),
            Err(Error::Format { line: 1, .. })
        ));
    }

    #[test]
    fn nearest_neighbor_ties_in_id_order() {
        let emb = array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
        let nn = nearest_neighbors(array![1.0, 1.0].view(), emb.view(), 3);
        assert_eq!(nn[0].0, 0);
        assert_eq!(nn[1].0, 1);
        assert!((nn[0].1 - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(nn[0].1, nn[1].1);
        assert_eq!(nn[2].0, 2);
    }

    #[test]
    fn nearest_neighbor_self_and_orthogonal() {
        let emb = array![[0.3, -2.0, 1.0], [2.0, 0.3, 0.0], [0.0, 0.0, 0.0]];
        let nn = nearest_neighbors(emb.row(0), emb.view(), 3);
        assert_eq!(nn[0].0, 0);
        assert!((nn[0].1 - 1.0).abs() < 1e-12);
        assert_eq!(cosine(emb.row(0), emb.row(1)), 0.0);
        assert_eq!(cosine(emb.row(0), emb.row(2)), 0.0);
    }

    proptest! {
        #[test]
        fn nearest_neighbors_scale_invariant(
            q in prop::collection::vec(-3.0f64..3.0, 3),
            rows in prop::collection::vec(-3.0f64..3.0, 15),
            c in 0.01f64..100.0,
        ) {
            let emb = Array2::from_shape_vec((5, 3), rows).unwrap();
            let q = Array1::from(q);
            let a: Vec<_> = nearest_neighbors(q.view(), emb.view(), 5).into_iter().map(|x| x.0).collect();
            let scaled = &q * c;
            let b: Vec<_> = nearest_neighbors(scaled.view(), emb.view(), 5).into_iter().map(|x| x.0).collect();
            prop_assert_eq!(a, b);
        }
    }

    fn zero_params(v_src: usize, v_tgt: usize, classes: usize, d: usize) -> DwaParams {
        DwaParams::zeros(v_src, v_tgt, classes, d, 0)
    }

    #[test]
    fn expected_repr_of_zero_model_is_mean() {
        let classes = ClassPartition::from_members(vec![vec![0, 1], vec![2, 3]], 4).unwrap();
        let mut p = zero_params(3, 4, 2, 2);
        let r = expected_translation_repr(1, &p, &classes);
        assert_eq!(r.to_vec(), vec![0.0, 0.0]);
        p.r_tgt = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, 0.0]];
        let r = expected_translation_repr(1, &p, &classes);
        assert!((r[0] - 1.0).abs() < 1e-12 && (r[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn expected_repr_hand_mixture() {
        // single class; biases give probabilities (0.5, 0.25, 0.25)
        let classes = ClassPartition::single(3);
        let mut p = zero_params(2, 3, 1, 3);
        p.b_f = array![2.0f64.ln(), 0.0, 0.0];
        p.r_tgt = Array2::eye(3);
        p.t_word = Array3::zeros((1, 3, 3));
        let r = expected_translation_repr(1, &p, &classes);
        for (x, want) in r.iter().zip([0.5, 0.25, 0.25]) {
            assert!((x - want).abs() < 1e-12);
        }
    }

    #[test]
    fn expected_repr_concentrated() {
        let classes = ClassPartition::single(3);
        let mut p = zero_params(2, 3, 1, 2);
        p.b_f = array![0.0, 800.0, 0.0];
        p.r_tgt = array![[1.0, 2.0], [3.0, -4.0], [5.0, 6.0]];
        let r = expected_translation_repr(1, &p, &classes);
        assert_eq!(r.to_vec(), vec![3.0, -4.0]);
    }
}
