use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Word alignment with FastAlign and distributed (DWA) translation models.
#[derive(Parser, Debug)]
#[command(name = "dwalign", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build and write source/target vocabularies.
    Prepare(PrepareArgs),
    /// Train the FastAlign baseline.
    TrainFa(TrainFaArgs),
    /// Train a DWA model on top of a trained FastAlign model.
    TrainDwa(TrainDwaArgs),
    /// Viterbi-align a corpus and print Pharaoh links.
    Align(AlignArgs),
    /// Alignment error rate of predicted links against a gold file.
    Aer(AerArgs),
    /// Nearest neighbours of a word by cosine similarity.
    Nn(NnArgs),
    /// Target words closest to the expected translation of a source word.
    ExpectedRepr(ExpectedReprArgs),
    /// Most probable translation of source words.
    Project(ProjectArgs),
    /// Cross-lingual document classification with an averaged perceptron.
    Classify(ClassifyArgs),
    /// Write embeddings in text format.
    ExportEmbeddings(ExportArgs),
}

#[derive(Args, Debug)]
struct CorpusArgs {
    /// Parallel corpus, one `source ||| target` pair per line.
    #[arg(long, conflicts_with_all = ["src", "tgt"], required_unless_present = "src")]
    corpus: Option<PathBuf>,
    /// Source side, one sentence per line (use with --tgt).
    #[arg(long, requires = "tgt")]
    src: Option<PathBuf>,
    /// Target side, one sentence per line (use with --src).
    #[arg(long, requires = "src")]
    tgt: Option<PathBuf>,
    /// Drop pairs with a side longer than this many tokens.
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Args, Debug)]
struct PrepareArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Tokens seen fewer times map to <unk>.
    #[arg(long, default_value_t = 1)]
    min_count: u64,
    #[arg(long)]
    src_vocab: PathBuf,
    #[arg(long)]
    tgt_vocab: PathBuf,
}

#[derive(Args, Debug)]
struct TrainFaArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, default_value_t = 1)]
    min_count: u64,
    /// Reuse vocabularies written by `prepare` instead of building new ones.
    #[arg(long, requires = "tgt_vocab")]
    src_vocab: Option<PathBuf>,
    #[arg(long, requires = "src_vocab")]
    tgt_vocab: Option<PathBuf>,
    #[arg(long, default_value_t = dwalign::fa_align::DEFAULT_ITERATIONS)]
    iters: usize,
    /// Prior probability of aligning to NULL.
    #[arg(long, default_value_t = dwalign::fa_align::DEFAULT_P0)]
    p0: f64,
    /// Initial diagonal tension.
    #[arg(long, default_value_t = dwalign::fa_align::DEFAULT_LAMBDA)]
    lambda: f64,
    /// Keep the diagonal tension fixed.
    #[arg(long)]
    fixed_lambda: bool,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainDwaArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Trained FastAlign model; its vocabularies and posteriors are reused.
    #[arg(long)]
    fa: PathBuf,
    #[arg(long, default_value_t = dwalign::dwa::DEFAULT_EPOCHS)]
    epochs: usize,
    /// Embedding dimension.
    #[arg(long, default_value_t = dwalign::dwa::DEFAULT_DIM)]
    dim: usize,
    /// Source context half-width.
    #[arg(long, default_value_t = 0)]
    context: usize,
    /// AdaGrad learning rate.
    #[arg(long, default_value_t = dwalign::lbl::DEFAULT_ETA)]
    eta: f64,
    /// AdaGrad denominator offset.
    #[arg(long, default_value_t = dwalign::lbl::DEFAULT_EPS)]
    eps: f64,
    #[arg(long, default_value_t = dwalign::dwa::DEFAULT_SEED)]
    seed: u64,
    /// Visit sentences in corpus order every epoch.
    #[arg(long)]
    no_shuffle: bool,
    /// Initial diagonal tension (default: the FastAlign value).
    #[arg(long)]
    lambda: Option<f64>,
    /// NULL prior (default: the FastAlign value).
    #[arg(long)]
    p0: Option<f64>,
    #[arg(long)]
    fixed_lambda: bool,
    /// Start word and class biases at log unigram frequencies.
    #[arg(long)]
    unigram_bias: bool,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AlignArgs {
    /// FastAlign or DWA model file.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Write links here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AerArgs {
    /// Predicted links in Pharaoh format.
    #[arg(long)]
    pred: PathBuf,
    /// Gold links, `pair src tgt S|P` per line.
    #[arg(long)]
    gold: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Side {
    Src,
    Tgt,
}

#[derive(Args, Debug)]
struct NnArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    word: String,
    /// Vocabulary the query word belongs to.
    #[arg(long, value_enum, default_value_t = Side::Tgt)]
    side: Side,
    /// Vocabulary to search (default: same as --side).
    #[arg(long, value_enum)]
    search: Option<Side>,
    #[arg(long, default_value_t = 10)]
    n: usize,
}

#[derive(Args, Debug)]
struct ExpectedReprArgs {
    #[arg(long)]
    model: PathBuf,
    /// Source word.
    #[arg(long)]
    word: String,
    #[arg(long, default_value_t = 10)]
    n: usize,
}

#[derive(Args, Debug)]
struct ProjectArgs {
    #[arg(long)]
    model: PathBuf,
    /// Source word to project (default: every source word).
    #[arg(long)]
    word: Option<String>,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    /// Labelled training documents, `label<TAB>tokens` per line.
    #[arg(long)]
    train: PathBuf,
    /// Labelled test documents in the other language.
    #[arg(long)]
    test: PathBuf,
    /// Language of the training documents; test documents use the other.
    #[arg(long, value_enum, default_value_t = Side::Src)]
    train_side: Side,
    #[arg(long, default_value_t = dwalign::transfer::DEFAULT_PERCEPTRON_EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Do not append a constant bias feature.
    #[arg(long)]
    no_bias: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ExportSide {
    /// Source embeddings.
    Src,
    /// Target embeddings.
    Tgt,
    /// Target embedding of each source word's best translation.
    Projected,
    /// Expected target embedding of each source word's translation.
    Expected,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = ExportSide::Tgt)]
    side: ExportSide,
    /// Write here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Bad flag values caught before any work starts.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match err.chain().find_map(|e| e.downcast_ref::<dwalign::Error>()) {
        Some(e) if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Prepare(a) => commands::prepare(a),
        Command::TrainFa(a) => commands::train_fa(a),
        Command::TrainDwa(a) => commands::train_dwa(a),
        Command::Align(a) => commands::align(a),
        Command::Aer(a) => commands::aer(a),
        Command::Nn(a) => commands::nn(a),
        Command::ExpectedRepr(a) => commands::expected_repr(a),
        Command::Project(a) => commands::project(a),
        Command::Classify(a) => commands::classify(a),
        Command::ExportEmbeddings(a) => commands::export_embeddings(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
