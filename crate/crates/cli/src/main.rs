//! `expeval` command-line tool.

mod commands;

use std::ops::RangeInclusive;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use expeval::{FeatureKind, QuantileScheme, StandardizationKind};

#[derive(Parser, Debug)]
#[command(name = "expeval", version, about = "Reconstruction-error evaluation of expressive performance models")]
struct Cli {
    /// Worker threads for parallel work (default: all cores).
    #[arg(long, global = true, env = "EXPEVAL_THREADS")]
    threads: Option<usize>,

    /// Machine output format on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Tsv)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Tsv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract feature curves from every performance of a piece directory.
    Extract(ExtractArgs),
    /// Draw randomized curves around the average of a piece's performances.
    Sample(SampleArgs),
    /// Find the noise level that reaches a target identification rate.
    Calibrate(CalibrateArgs),
    /// Run the reliability/validity grid over a directory of pieces.
    Evaluate(EvaluateArgs),
    /// Rank excerpt windows by inter-performer correlation.
    Scan(ScanArgs),
    /// Impose a feature curve on a base performance.
    Render(RenderArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Exact binomial probability of k successes in n fair trials.
    Binom(BinomArgs),
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Piece directory of perfalign files.
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "tempo,velocity")]
    pub features: Vec<FeatureKind>,
    /// Destination directory for `<performer>.<feature>.json`.
    #[arg(long, short)]
    pub output: PathBuf,
}

/// Optional measure window shared by `sample` and `calibrate`.
#[derive(Args, Debug, Clone, Copy)]
pub struct ExcerptArgs {
    #[arg(long, requires = "measures")]
    pub start_measure: Option<u32>,
    #[arg(long, requires = "start_measure")]
    pub measures: Option<u32>,
}

#[derive(Args, Debug)]
pub struct RateArgs {
    #[arg(long, default_value = "quartiles", value_parser = parse_scheme)]
    pub scheme: QuantileScheme,
    #[arg(long, default_value = "standard_score", value_parser = parse_std)]
    pub standardization: StandardizationKind,
    #[arg(long, default_value_t = expeval::randomizer::DEFAULT_MC_SAMPLES)]
    pub mc_samples: usize,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("level").required(true).args(["sigma", "target"])))]
pub struct SampleArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long)]
    pub feature: FeatureKind,
    /// Noise level in curve units.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Calibrate the noise level to this identification rate first.
    #[arg(long)]
    pub target: Option<f64>,
    #[arg(long, default_value_t = expeval::randomizer::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub rate: RateArgs,
    #[command(flatten)]
    pub excerpt: ExcerptArgs,
    /// Destination directory for `random_<index>.<feature>.json`.
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long)]
    pub feature: FeatureKind,
    #[arg(long, default_value_t = 0.5)]
    pub target: f64,
    #[arg(long, default_value_t = expeval::randomizer::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub rate: RateArgs,
    #[command(flatten)]
    pub excerpt: ExcerptArgs,
    /// Re-estimate the rate at the calibrated level with this many samples.
    #[arg(long)]
    pub verify_samples: Option<usize>,
    /// Seed for the re-estimate (default: seed + 1).
    #[arg(long)]
    pub verify_seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Directory whose subdirectories are pieces.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Destination for `report_<standardization>.tsv`, `report.json` and `cells.tsv`.
    #[arg(long, short)]
    pub output: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "tempo,velocity")]
    pub features: Vec<FeatureKind>,
    #[arg(long, value_delimiter = ',', default_value = "none,mean,mean_log,standard_score", value_parser = parse_std)]
    pub standardizations: Vec<StandardizationKind>,
    #[arg(long, default_value_t = 64)]
    pub randoms: usize,
    #[arg(long, default_value = "tails_5_90_5", value_parser = parse_scheme)]
    pub scheme: QuantileScheme,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct ScanArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, default_value = "tempo")]
    pub feature: FeatureKind,
    /// Window length in measures.
    #[arg(long, default_value_t = 9)]
    pub window: u32,
    #[arg(long, default_value_t = 8)]
    pub min_onsets: usize,
    /// Print only the best windows.
    #[arg(long)]
    pub top: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Base perfalign file.
    #[arg(long)]
    pub base: PathBuf,
    /// Curve or note-wise feature JSON to impose.
    #[arg(long)]
    pub target: PathBuf,
    /// Expected kind of the target; checked against the JSON.
    #[arg(long)]
    pub feature: Option<FeatureKind>,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Root directory; one subdirectory per piece.
    #[arg(long, short)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 33)]
    pub pieces: usize,
    #[arg(long, default_value = "6..34", value_parser = parse_range)]
    pub performers: RangeInclusive<usize>,
    #[arg(long, default_value = "40..160", value_parser = parse_range)]
    pub onsets: RangeInclusive<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub dispersion: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct BinomArgs {
    #[arg(long)]
    pub n: u64,
    #[arg(long)]
    pub k: u64,
}

fn parse_std(s: &str) -> Result<StandardizationKind, String> {
    s.parse()
}

fn parse_scheme(s: &str) -> Result<QuantileScheme, String> {
    s.parse()
}

/// `a..b`, `a..=b` (both inclusive) or a single count.
fn parse_range(s: &str) -> Result<RangeInclusive<usize>, String> {
    let num = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (num(a)?, num(b.strip_prefix('=').unwrap_or(b))?),
        None => {
            let n = num(s)?;
            (n, n)
        }
    };
    if lo > hi {
        return Err(format!("empty range {s}"));
    }
    Ok(lo..=hi)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads.filter(|&n| n > 0) {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(2);
        }
    };

    let format = cli.format;
    let outcome = pool.install(|| match cli.command {
        Command::Extract(a) => commands::extract(&a, format),
        Command::Sample(a) => commands::sample(&a, format),
        Command::Calibrate(a) => commands::calibrate(&a, format),
        Command::Evaluate(a) => commands::evaluate(&a, format),
        Command::Scan(a) => commands::scan(&a, format),
        Command::Render(a) => commands::render(&a, format),
        Command::Synth(a) => commands::synth(&a, format),
        Command::Binom(a) => commands::binom(&a, format),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            for line in &e.messages {
                eprintln!("error: {line}");
            }
            ExitCode::from(e.code)
        }
    }
}
