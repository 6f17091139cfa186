//! `sparselex`: command-line pipeline for unsupervised sparse-lexicon
//! decipherment.
//!
//! Exit status: 0 on success, 1 for usage errors, 2 for data errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

/// Bad or contradictory command-line input.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "sparselex", version, about = "Unsupervised training of sparse translation lexicons")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Builds a monotone 1:1 task from word-aligned parallel text.
    BuildTask(BuildTaskArgs),
    /// Trains a Kneser-Ney n-gram LM and writes it in ARPA format.
    TrainLm(TrainLmArgs),
    /// Clusters the words of a text with the exchange algorithm.
    Cluster(ClusterArgs),
    /// Builds an initial word lexicon from a class-level EM run.
    InitClassLexicon(InitClassArgs),
    /// Trains a sparse lexicon with EM.
    Train(TrainArgs),
    /// Viterbi-decodes source text into target text.
    Decode(DecodeArgs),
    /// Token accuracy of a hypothesis against a reference.
    Evaluate(EvaluateArgs),
    /// Writes a synthetic substitution-cipher task: input.txt, reference.txt,
    /// lm.txt, key.tsv and src_vocab.txt.
    GenSynthetic(GenSyntheticArgs),
}

#[derive(Args, Debug)]
struct BuildTaskArgs {
    /// Source side, one tokenized sentence per line.
    #[arg(long)]
    src: PathBuf,
    /// Target side, parallel to --src.
    #[arg(long)]
    tgt: PathBuf,
    /// Alignments, one line of `i-j` links per sentence pair.
    #[arg(long)]
    align: PathBuf,
    /// Fraction of sentence pairs used as deciphering input.
    #[arg(long, default_value_t = 0.5)]
    split: f64,
    /// Words seen fewer times are written as <unk>.
    #[arg(long, default_value_t = 1)]
    min_count: u64,
    /// Directory for input.txt, reference.txt and lm.txt.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct TrainLmArgs {
    #[arg(long)]
    text: PathBuf,
    #[arg(long, default_value_t = 3)]
    order: usize,
    /// Comma-separated discounts (one, or one per order); estimated if absent.
    #[arg(long, value_delimiter = ',')]
    discount: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    min_count: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum InitKind {
    Frequency,
    Random,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    #[arg(long)]
    text: PathBuf,
    #[arg(long)]
    classes: usize,
    #[arg(long, default_value_t = 10)]
    sweeps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = InitKind::Frequency)]
    init: InitKind,
    #[arg(long, default_value_t = 1)]
    min_count: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct InitClassArgs {
    /// Source text to decipher.
    #[arg(long)]
    input: PathBuf,
    /// Target LM training text.
    #[arg(long)]
    lm_text: PathBuf,
    #[arg(long)]
    classes_src: PathBuf,
    #[arg(long)]
    classes_tgt: PathBuf,
    #[arg(long, default_value_t = 2)]
    class_lm_order: usize,
    /// EM iterations on the class task.
    #[arg(long, default_value_t = 20)]
    iterations: usize,
    /// Threshold applied to the expanded word lexicon.
    #[arg(long, default_value_t = 1e-6)]
    tau: f64,
    /// Minimum count for the target vocabulary; match the LM's.
    #[arg(long, default_value_t = 1)]
    min_count: u64,
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write the class-to-class lexicon.
    #[arg(long)]
    class_out: Option<PathBuf>,
}

/// Training settings; each overrides the same key in --config.
#[derive(Args, Debug, Default)]
struct TrainOverrides {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    /// uniform, unigram or kneser-ney.
    #[arg(long)]
    backoff: Option<String>,
    /// Nodes kept per position, or `inf`.
    #[arg(long)]
    histogram_beam: Option<String>,
    /// Candidates per source word by lexicon score, or `inf`.
    #[arg(long)]
    lex_beam: Option<String>,
    /// Candidates per LM state by LM score, or `inf`.
    #[arg(long)]
    lm_beam: Option<String>,
    #[arg(long)]
    convergence_rel_tol: Option<String>,
    /// Worker threads; 0 uses all cores, 1 is the reproducibility baseline.
    #[arg(long)]
    workers: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    input: PathBuf,
    /// Target LM in ARPA format.
    #[arg(long)]
    lm: PathBuf,
    /// `uniform` or a lexicon TSV.
    #[arg(long)]
    init: Option<String>,
    /// Declared source vocabulary, one word per line. Words listed here but
    /// absent from the input still count towards the backoff model.
    #[arg(long)]
    src_vocab: Option<PathBuf>,
    #[command(flatten)]
    settings: TrainOverrides,
    /// Reference for per-iteration accuracy in the stats.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    checkpoint_every: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration statistics TSV.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    lexicon: PathBuf,
    #[arg(long)]
    lm: PathBuf,
    /// Declared source vocabulary; use the one given to `train`.
    #[arg(long)]
    src_vocab: Option<PathBuf>,
    #[command(flatten)]
    settings: TrainOverrides,
    /// Hypothesis file; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
}

#[derive(Args, Debug)]
struct GenSyntheticArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// Regular word types.
    #[arg(long, default_value_t = 100)]
    types: usize,
    /// Approximate number of enciphered tokens.
    #[arg(long, default_value_t = 10_000)]
    input_tokens: usize,
    #[arg(long, default_value_t = 100_000)]
    lm_tokens: usize,
    /// Successors per context in the generating bigram language.
    #[arg(long, default_value_t = 8)]
    branching: usize,
    #[arg(long, default_value_t = 10.0)]
    mean_len: f64,
    /// Probability of enciphering a token as its fixed confusable word.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 7)]
    lang_seed: u64,
    #[arg(long, default_value_t = 11)]
    key_seed: u64,
    /// Seed of the input sample; the LM sample uses the next seed.
    #[arg(long, default_value_t = 1)]
    sample_seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::BuildTask(a) => commands::build_task(a),
        Command::TrainLm(a) => commands::train_lm(a),
        Command::Cluster(a) => commands::cluster(a),
        Command::InitClassLexicon(a) => commands::init_class_lexicon(a),
        Command::Train(a) => commands::train(a),
        Command::Decode(a) => commands::decode(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::GenSynthetic(a) => commands::gen_synthetic(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
