//! `lexdrift`: one entry point for every pipeline stage.
//!
//! Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.

mod cmd;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::FileConfig;

#[derive(Debug, Parser)]
#[command(
    name = "lexdrift",
    version,
    about = "Lexical overuse detection and preference-study pipeline"
)]
pub struct Cli {
    /// Master RNG seed.
    #[arg(long, global = true, env = "LEXDRIFT_SEED")]
    pub seed: Option<u64>,

    /// TOML configuration file.
    #[arg(long, global = true, env = "LEXDRIFT_CONFIG")]
    pub config: Option<PathBuf>,

    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize a tagged corpus into line records.
    Ingest(IngestArgs),
    /// Compare two tagged corpora key by key.
    Compare(CompareArgs),
    /// Turn a divergence report into a score table.
    BuildTable(BuildTableArgs),
    /// Score tagged records against a score table.
    Score(ScoreArgs),
    /// Filter variants and select length-matched item pairs.
    SelectPairs(SelectPairsArgs),
    /// Drive the text-generation service.
    Generate(GenerateArgs),
    /// Serve the preference study over HTTP.
    Serve(ServeArgs),
    /// Apply participant and rating exclusions.
    Exclude(ExcludeArgs),
    /// Descriptives, goodness of fit and the mixed model.
    Analyze(AnalyzeArgs),
    /// Write seeded synthetic fixtures.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
pub enum InputFormat {
    Records,
    Conllu,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct IngestArgs {
    #[arg(long, value_enum, default_value = "records")]
    pub format: InputFormat,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Corpus id; defaults to the input file stem.
    #[arg(long)]
    pub corpus_id: Option<String>,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct CompareArgs {
    /// Baseline corpus.
    #[arg(long)]
    pub a: PathBuf,
    /// Comparison corpus.
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, value_enum, default_value = "records")]
    pub format: InputFormat,
    #[arg(long, env = "LEXDRIFT_ALPHA")]
    pub alpha: Option<f64>,
    #[arg(long, env = "LEXDRIFT_MIN_COUNT_A")]
    pub min_count_a: Option<u64>,
    /// Apply the Yates continuity correction.
    #[arg(long)]
    pub yates: bool,
    /// Drop PUNCT and SYM tokens from counts and N.
    #[arg(long)]
    pub exclude_punct: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Keys below the baseline count threshold.
    #[arg(long)]
    pub novel: Option<PathBuf>,
    /// Word list (one per line) to check against increased keys.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct BuildTableArgs {
    #[arg(long)]
    pub report: PathBuf,
    /// Keep every key, not only significant increases.
    #[arg(long)]
    pub permissive: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub table: PathBuf,
    /// Tagged records to score.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
pub enum RunnerUp {
    /// Next-best admissible pair within the abstract.
    WithinAbstract,
    /// Skip the abstract and move down the ranking.
    AbstractReplacement,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct SelectPairsArgs {
    /// Tagged variant records.
    #[arg(long)]
    pub variants: PathBuf,
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub length_tol: Option<usize>,
    #[arg(long)]
    pub min_words: Option<usize>,
    #[arg(long)]
    pub max_words: Option<usize>,
    /// Banned word list, one per line; defaults to the bundled list.
    #[arg(long)]
    pub banned: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<RunnerUp>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
pub enum GenerateTask {
    Continue,
    Keywords,
    Variants,
    Clean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
pub enum CleanKind {
    Continuation,
    Variant,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct GenerateArgs {
    #[arg(value_enum)]
    pub task: GenerateTask,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Endpoint profile: base-model, instruct-model or cleaner.
    #[arg(long)]
    pub profile: Option<String>,
    /// Variants per keyword line.
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    /// Minimum words for abstracts fed to `continue`.
    #[arg(long, default_value_t = 40)]
    pub min_words: usize,
    #[arg(long, value_enum, default_value = "variant")]
    pub clean_mode: CleanKind,
    #[arg(long, env = "LEXDRIFT_API_BASE")]
    pub base_url: Option<String>,
    #[serde(skip)]
    #[arg(long, env = "LEXDRIFT_API_KEY", hide_env_values = true)]
    pub api_key: Option<String>,
    #[arg(long)]
    pub path: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Requests per second; 0 disables limiting.
    #[arg(long)]
    pub rate: Option<f64>,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct ServeArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Append-only event log; replayed on start when it exists.
    #[arg(long)]
    pub log: PathBuf,
    #[serde(skip)]
    #[arg(long, env = "LEXDRIFT_ADMIN_TOKEN", hide_env_values = true)]
    pub admin_token: Option<String>,
    /// Static front-end bundle.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    #[arg(long)]
    pub critical_per_session: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
pub enum GotchaRuleArg {
    Strict,
    Lenient,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct ExcludeArgs {
    /// Trial records or an event log.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub min_items: Option<usize>,
    #[arg(long)]
    pub speed_factor: Option<f64>,
    #[arg(long)]
    pub fast_trial_limit: Option<usize>,
    #[arg(long, value_enum)]
    pub gotcha_rule: Option<GotchaRuleArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
pub enum SolverArg {
    Structured,
    Dense,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct AnalyzeArgs {
    /// Retained ratings CSV.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Lemma key for the subgroup split, e.g. nuanced_ADJ.
    #[arg(long)]
    pub marker: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-item CSV `item_id,n,mean_high_preference`.
    #[arg(long)]
    pub items: Option<PathBuf>,
    /// `dense` factorizes the full covariance (cubic in ratings); use it
    /// only to cross-check small data sets.
    #[arg(long, value_enum, default_value = "structured")]
    pub solver: SolverArg,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct SimulateArgs {
    #[command(subcommand)]
    pub what: SimulateWhat,
}

#[derive(Debug, Subcommand, serde::Serialize)]
pub enum SimulateWhat {
    /// Baseline and comparison corpora with planted overused lemmas.
    Corpora {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1000)]
        documents: usize,
        #[arg(long, default_value_t = 150)]
        tokens_per_document: usize,
    },
    /// Tagged generation variants grouped by abstract.
    Variants {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        abstracts: usize,
        #[arg(long, default_value_t = 40)]
        per_abstract: usize,
    },
    /// Simulated participants run against the study engine.
    Responses {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        participants: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

pub struct Ctx {
    pub seed: u64,
    pub file: FileConfig,
    pub quiet: bool,
}

impl Ctx {
    pub fn say(&self, line: impl std::fmt::Display) {
        if !self.quiet {
            println!("{line}");
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let ctx = Ctx {
        seed: config::pick(cli.seed, file.seed, 1),
        file,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Ingest(a) => cmd::corpus::ingest(&ctx, a),
        Command::Compare(a) => cmd::corpus::compare(&ctx, a),
        Command::BuildTable(a) => cmd::items::build_table(&ctx, a),
        Command::Score(a) => cmd::items::score(&ctx, a),
        Command::SelectPairs(a) => cmd::items::select_pairs(&ctx, a),
        Command::Generate(a) => cmd::generate::run(&ctx, a),
        Command::Serve(a) => cmd::study::serve(&ctx, a),
        Command::Exclude(a) => cmd::analysis::exclude(&ctx, a),
        Command::Analyze(a) => cmd::analysis::analyze(&ctx, a),
        Command::Simulate(a) => cmd::study::simulate(&ctx, a),
    }
}
