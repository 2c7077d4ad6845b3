use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ndarray::{Array2, ArrayView2};

use dwalign::corpus::{self, ParallelCorpus, RawCorpus, SentencePair, Vocab};
use dwalign::dwa::{self, DwaModel, DwaTrainConfig};
use dwalign::eval::{self, AlignmentLinks, AlignmentModel};
use dwalign::fa_align::{self, FaConfig, FaModel};
use dwalign::transfer::{self, LabeledDocs, PerceptronConfig};
use dwalign::{serialize, WordId};

use crate::{
    AerArgs, AlignArgs, ClassifyArgs, CorpusArgs, ExpectedReprArgs, ExportArgs, ExportSide, NnArgs, PrepareArgs,
    ProjectArgs, Side, TrainDwaArgs, TrainFaArgs, UsageError,
};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Library validation failures on flag values are usage errors.
fn check_flags(r: dwalign::Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        dwalign::Error::InvalidArgument(m) => usage(m),
        other => other.into(),
    })
}

fn read_corpus(args: &CorpusArgs) -> Result<RawCorpus> {
    let raw = match (&args.corpus, &args.src, &args.tgt) {
        (Some(path), _, _) => corpus::read_triple_pipe(path)?,
        (None, Some(src), Some(tgt)) => corpus::read_two_files(src, tgt)?,
        _ => return Err(usage("give --corpus or both --src and --tgt")),
    };
    Ok(raw)
}

fn report_drops(stats: &corpus::EncodeStats) {
    if stats.dropped_empty > 0 || stats.dropped_long > 0 {
        eprintln!(
            "dropped {} pairs with an empty side, {} over the length limit",
            stats.dropped_empty, stats.dropped_long
        );
    }
}

/// Writes to `out` atomically, or to standard output when absent.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => serialize::write_atomic(path, text.as_bytes())?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .context("writing to standard output")?;
            stdout.flush().context("writing to standard output")?;
        }
    }
    Ok(())
}

pub fn prepare(a: PrepareArgs) -> Result<()> {
    if a.min_count == 0 {
        return Err(usage("--min-count must be >= 1"));
    }
    let raw = read_corpus(&a.corpus)?;
    let (corpus, stats) = ParallelCorpus::from_raw(&raw, a.min_count, a.corpus.max_len)?;
    report_drops(&stats);
    corpus.src_vocab().save(&a.src_vocab)?;
    corpus.tgt_vocab().save(&a.tgt_vocab)?;
    eprintln!(
        "pairs={} src_vocab={} tgt_vocab={}",
        corpus.len(),
        corpus.src_vocab().len(),
        corpus.tgt_vocab().len()
    );
    Ok(())
}

pub fn train_fa(a: TrainFaArgs) -> Result<()> {
    let config = FaConfig {
        iterations: a.iters,
        p0: a.p0,
        lambda_init: a.lambda,
        optimize_lambda: !a.fixed_lambda,
        threads: a.threads,
        ..Default::default()
    };
    check_flags(config.validate())?;
    if a.min_count == 0 {
        return Err(usage("--min-count must be >= 1"));
    }
    let raw = read_corpus(&a.corpus)?;
    let (corpus, stats) = match (&a.src_vocab, &a.tgt_vocab) {
        (Some(sv), Some(tv)) => {
            ParallelCorpus::encode(&raw.src, &raw.tgt, Vocab::load(sv)?, Vocab::load(tv)?, a.corpus.max_len)?
        }
        _ => ParallelCorpus::from_raw(&raw, a.min_count, a.corpus.max_len)?,
    };
    report_drops(&stats);
    if corpus.is_empty() {
        bail!(dwalign::Error::InvalidArgument(
            "corpus has no usable sentence pairs".into()
        ));
    }
    let (params, _) = fa_align::train_fa_with(&corpus, &config, |iter, ll| {
        eprintln!("iter={iter} loglik={ll}");
    })?;
    eprintln!("lambda={} p0={}", params.lambda, params.p0);
    FaModel::new(&corpus, params).save(&a.out)?;
    Ok(())
}

pub fn train_dwa(a: TrainDwaArgs) -> Result<()> {
    let config = DwaTrainConfig {
        epochs: a.epochs,
        d: a.dim,
        k: a.context,
        eta: a.eta,
        eps: a.eps,
        seed: a.seed,
        shuffle: !a.no_shuffle,
        lambda_init: a.lambda,
        p0: a.p0,
        optimize_lambda: !a.fixed_lambda,
        unigram_bias_init: a.unigram_bias,
        threads: a.threads,
    };
    check_flags(config.validate())?;
    let fa = FaModel::load(&a.fa)?;
    let raw = read_corpus(&a.corpus)?;
    let (corpus, stats) = ParallelCorpus::encode(&raw.src, &raw.tgt, fa.src_vocab, fa.tgt_vocab, a.corpus.max_len)?;
    report_drops(&stats);
    if corpus.is_empty() {
        bail!(dwalign::Error::InvalidArgument(
            "corpus has no usable sentence pairs".into()
        ));
    }
    let (model, _) = dwa::train_dwa_with(&corpus, &fa.params, &config, |report| eprintln!("{report}"))?;
    model.save(&a.out)?;
    Ok(())
}

// loaded once per command, so variant size does not matter
#[allow(clippy::large_enum_variant)]
enum AnyModel {
    Fa(FaModel),
    Dwa(DwaModel),
}

impl AnyModel {
    fn load(path: &Path) -> Result<AnyModel> {
        let bytes = serialize::read_file(path)?;
        let (kind, _) = serialize::peek_header(&bytes).with_context(|| format!("reading {}", path.display()))?;
        Ok(match kind.as_str() {
            fa_align::MODEL_KIND => AnyModel::Fa(FaModel::from_bytes(&bytes)?),
            dwa::MODEL_KIND => AnyModel::Dwa(DwaModel::from_bytes(&bytes)?),
            other => bail!(dwalign::Error::Model(format!("unknown model kind `{other}`"))),
        })
    }

    fn vocabs(&self) -> (&Vocab, &Vocab) {
        match self {
            AnyModel::Fa(m) => (&m.src_vocab, &m.tgt_vocab),
            AnyModel::Dwa(m) => (&m.src_vocab, &m.tgt_vocab),
        }
    }

    fn model(&self) -> &dyn Aligner {
        match self {
            AnyModel::Fa(m) => m,
            AnyModel::Dwa(m) => m,
        }
    }
}

/// Object-safe view of [`AlignmentModel`].
trait Aligner {
    fn viterbi(&self, pair: &SentencePair) -> AlignmentLinks;
    fn loglik(&self, pair: &SentencePair) -> f64;
}

impl<T: AlignmentModel> Aligner for T {
    fn viterbi(&self, pair: &SentencePair) -> AlignmentLinks {
        AlignmentModel::viterbi(self, pair)
    }

    fn loglik(&self, pair: &SentencePair) -> f64 {
        self.sentence_loglik(pair)
    }
}

fn load_dwa(path: &Path) -> Result<DwaModel> {
    match AnyModel::load(path)? {
        AnyModel::Dwa(m) => Ok(m),
        AnyModel::Fa(_) => bail!(dwalign::Error::Model(format!(
            "{} is a FastAlign model; this command needs a DWA model",
            path.display()
        ))),
    }
}

pub fn align(a: AlignArgs) -> Result<()> {
    let model = AnyModel::load(&a.model)?;
    let raw = read_corpus(&a.corpus)?;
    let (src_vocab, tgt_vocab) = model.vocabs();
    let aligner = model.model();
    let mut out = String::new();
    let (mut loglik, mut tokens) = (0.0, 0usize);
    for (s, t) in raw.src.iter().zip(&raw.tgt) {
        // every input line gets an output line so links stay in step with gold files
        let too_long = a.corpus.max_len.is_some_and(|m| s.len() > m || t.len() > m);
        if !s.is_empty() && !t.is_empty() && !too_long {
            let pair = SentencePair::new(src_vocab.encode(s), tgt_vocab.encode(t));
            out.push_str(&aligner.viterbi(&pair).to_pharaoh());
            loglik += aligner.loglik(&pair);
            tokens += pair.tgt_len();
        }
        out.push('\n');
    }
    if !loglik.is_finite() {
        bail!(dwalign::Error::NonFiniteObjective { epoch: 0, sentence: 0 });
    }
    eprintln!(
        "loglik={loglik} per_token={}",
        if tokens > 0 { loglik / tokens as f64 } else { 0.0 }
    );
    emit(a.out.as_deref(), &out)
}

pub fn aer(a: AerArgs) -> Result<()> {
    let f = std::fs::File::open(&a.pred).with_context(|| format!("opening {}", a.pred.display()))?;
    let pred = eval::read_pharaoh_from(f, &a.pred.display().to_string())?;
    let gold = eval::read_gold(&a.gold, pred.len())?;
    println!("AER={}", eval::corpus_aer(&pred, &gold)?);
    Ok(())
}

fn lookup(vocab: &Vocab, word: &str, what: &str) -> Result<WordId> {
    vocab
        .get(word)
        .ok_or_else(|| dwalign::Error::InvalidArgument(format!("`{word}` is not in the {what} vocabulary")).into())
}

fn side_table<'a>(model: &'a DwaModel, side: Side) -> (&'a Vocab, ArrayView2<'a, f64>) {
    match side {
        Side::Src => (&model.src_vocab, model.params.r_src.view()),
        Side::Tgt => (&model.tgt_vocab, model.params.r_tgt.view()),
    }
}

fn neighbour_rows(vocab: &Vocab, hits: &[(WordId, f64)]) -> String {
    let mut out = String::new();
    for (id, score) in hits {
        let _ = writeln!(out, "{}\t{score}", vocab.token(*id));
    }
    out
}

pub fn nn(a: NnArgs) -> Result<()> {
    if a.n == 0 {
        return Err(usage("--n must be >= 1"));
    }
    let model = load_dwa(&a.model)?;
    let (qvocab, qtable) = side_table(&model, a.side);
    let id = lookup(qvocab, &a.word, if a.side == Side::Src { "source" } else { "target" })?;
    let (svocab, stable) = side_table(&model, a.search.unwrap_or(a.side));
    if qtable.ncols() != stable.ncols() {
        bail!(dwalign::Error::Model("embedding dimensions differ".into()));
    }
    let hits = eval::nearest_neighbors(qtable.row(id as usize), stable, a.n);
    emit(None, &neighbour_rows(svocab, &hits))
}

pub fn expected_repr(a: ExpectedReprArgs) -> Result<()> {
    if a.n == 0 {
        return Err(usage("--n must be >= 1"));
    }
    let model = load_dwa(&a.model)?;
    let e = lookup(&model.src_vocab, &a.word, "source")?;
    let repr = eval::expected_translation_repr(e, &model.params, &model.classes);
    let hits = eval::nearest_neighbors(repr.view(), model.params.r_tgt.view(), a.n);
    emit(None, &neighbour_rows(&model.tgt_vocab, &hits))
}

pub fn project(a: ProjectArgs) -> Result<()> {
    let model = load_dwa(&a.model)?;
    let ids: Vec<WordId> = match &a.word {
        Some(w) => vec![lookup(&model.src_vocab, w, "source")?],
        None => (0..model.src_vocab.len() as WordId)
            .filter(|&e| Some(e) != model.src_vocab.null_id())
            .collect(),
    };
    let mut out = String::new();
    for e in ids {
        let probs = dwalign::lbl::isolated_translation_probs(e, &model.params, &model.classes);
        let f = transfer::best_translation(e, &model.params, &model.classes);
        let _ = writeln!(
            out,
            "{}\t{}\t{}",
            model.src_vocab.token(e),
            model.tgt_vocab.token(f),
            probs[f as usize]
        );
    }
    emit(None, &out)
}

pub fn classify(a: ClassifyArgs) -> Result<()> {
    let config = PerceptronConfig {
        epochs: a.epochs,
        seed: a.seed,
        bias: !a.no_bias,
        shuffle: true,
    };
    if config.epochs == 0 {
        return Err(usage("--epochs must be >= 1"));
    }
    let model = load_dwa(&a.model)?;
    let train = LabeledDocs::read(&a.train, Vec::new())?;
    let test = LabeledDocs::read(&a.test, train.label_names.clone())?;
    if train.is_empty() || test.is_empty() {
        bail!(dwalign::Error::InvalidArgument(
            "training and test sets must be non-empty".into()
        ));
    }
    let d = model.params.d;
    let projected = transfer::projection_table(&model.params, &model.classes);
    let src_lookup = |w: &str| model.src_vocab.get(w).map(|id| projected.row(id as usize));
    let tgt_lookup = |w: &str| model.tgt_vocab.get(w).map(|id| model.params.r_tgt.row(id as usize));
    let (train_vecs, test_vecs) = match a.train_side {
        Side::Src => (
            transfer::vectorize(&train, d, src_lookup),
            transfer::vectorize(&test, d, tgt_lookup),
        ),
        Side::Tgt => (
            transfer::vectorize(&train, d, tgt_lookup),
            transfer::vectorize(&test, d, src_lookup),
        ),
    };
    for (name, v) in [("training", &train_vecs), ("test", &test_vecs)] {
        if v.empty_docs > 0 {
            eprintln!("warning: {} {name} documents have no known token", v.empty_docs);
        }
    }
    let perceptron = transfer::train_perceptron(
        train_vecs.vectors.view(),
        &train_vecs.labels,
        test.label_names.len(),
        &config,
    )?;
    let accuracy = transfer::classify_eval(&perceptron, test_vecs.vectors.view(), &test_vecs.labels)?;
    let majority = transfer::majority_baseline(&train_vecs.labels, &test_vecs.labels);
    println!("accuracy={accuracy} n={} majority={majority}", test.len());
    Ok(())
}

/// `{:e}` with six significant digits.
fn sig6(v: f64) -> String {
    format!("{v:.5e}")
}

pub fn export_embeddings(a: ExportArgs) -> Result<()> {
    let model = load_dwa(&a.model)?;
    let (vocab, table): (&Vocab, Array2<f64>) = match a.side {
        ExportSide::Src => (&model.src_vocab, model.params.r_src.clone()),
        ExportSide::Tgt => (&model.tgt_vocab, model.params.r_tgt.clone()),
        ExportSide::Projected => (
            &model.src_vocab,
            transfer::projection_table(&model.params, &model.classes),
        ),
        ExportSide::Expected => {
            let mut t = Array2::zeros(model.params.r_src.dim());
            for (e, mut row) in t.outer_iter_mut().enumerate() {
                row.assign(&eval::expected_translation_repr(
                    e as WordId,
                    &model.params,
                    &model.classes,
                ));
            }
            (&model.src_vocab, t)
        }
    };
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", table.nrows(), table.ncols());
    for (id, row) in table.outer_iter().enumerate() {
        out.push_str(vocab.token(id as WordId));
        for v in row {
            out.push(' ');
            out.push_str(&sig6(*v));
        }
        out.push('\n');
    }
    emit(a.out.as_deref(), &out)
}
