use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use commands::{
    AggregateConfig, CvCommandConfig, DetectConfig, EvaluateConfig, EvaluateMode, HypothesisConfig, RetrainConfig,
    TestKind,
};
use config::ConfigFile;
use hybridwatch::metrics::TemporalMode;
use hybridwatch::simulator::{PoolPreset, SimConfig};

#[derive(Parser)]
#[command(name = "hybridwatch", version, about = "Hybrid human/AI bot detection experiments")]
struct Cli {
    /// TOML file with one table per subcommand; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: $HYBRIDWATCH_OUT/<command>, or runs/<command>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the social-network simulation and write a dataset.
    Simulate(SimulateArgs),
    /// Out-of-fold detector predictions for a dataset.
    Detect(DetectArgs),
    /// Score flags, human reports or reporters against the labels.
    Evaluate(EvaluateArgs),
    /// Combine human reports and detector predictions.
    Aggregate(AggregateArgs),
    /// Cross-validated comparison of detectors and aggregation strategies.
    Cv(CvArgs),
    /// Day-by-day incremental retraining.
    Retrain(RetrainArgs),
    /// Significance tests over a dataset.
    Hypothesis(HypothesisArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_parser = parse_preset)]
    preset: Option<PoolPreset>,
    #[arg(long)]
    days: Option<u32>,
    #[arg(long)]
    steps_per_day: Option<u32>,
    #[arg(long)]
    no_scans: bool,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated detector names (trees, moe).
    #[arg(long, value_delimiter = ',')]
    detectors: Option<Vec<String>>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    up_to_day: Option<u32>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<EvaluateMode>,
    /// `source,account,probability` file for `--mode flags`.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_parser = parse_temporal)]
    temporal: Option<TemporalMode>,
    /// Count raw reports instead of distinct reporters for P(bot|k).
    #[arg(long)]
    raw_counts: bool,
}

#[derive(Args)]
struct AggregateArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    predictions: Option<Vec<PathBuf>>,
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
    #[arg(long)]
    soft_threshold: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Pick the soft threshold and fusion weights on the labels (in-sample).
    #[arg(long)]
    optimize: bool,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    inner_k: Option<usize>,
    #[arg(long)]
    fusion_samples: Option<usize>,
}

#[derive(Args)]
struct RetrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    detector: Option<String>,
    /// Comma-separated: ground_truth, self, human.
    #[arg(long, value_delimiter = ',')]
    strategy: Option<Vec<String>>,
    #[arg(long)]
    confidence: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    days: Option<u32>,
}

#[derive(Args)]
struct HypothesisArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    test: Option<TestKind>,
    /// Add Benjamini-Hochberg adjusted p-values.
    #[arg(long)]
    fdr: bool,
    #[arg(long)]
    resamples: Option<u64>,
}

fn parse_preset(s: &str) -> Result<PoolPreset, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|_| {
        format!("unknown preset `{s}` (calibrated, perfect_precision, perfect)")
    })
}

fn parse_temporal(s: &str) -> Result<TemporalMode, String> {
    match s {
        "day" | "day_specific" => Ok(TemporalMode::DaySpecific),
        "cumulative" => Ok(TemporalMode::Cumulative),
        _ => Err(format!("unknown temporal mode `{s}` (day_specific, cumulative)")),
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = ConfigFile::load(cli.config.as_deref())?;
    let ctx = commands::Context {
        verbose: cli.verbose,
    };
    match cli.command {
        Command::Simulate(a) => {
            let mut cfg: SimConfig = file.section("simulate")?;
            set(&mut cfg.seed, cli.seed);
            set(&mut cfg.n_days, a.days);
            set(&mut cfg.steps_per_day, a.steps_per_day);
            set(&mut cfg.reporters.preset, a.preset);
            if a.no_scans {
                cfg.scans_enabled = false;
            }
            commands::simulate(&ctx, &cfg, &config::output_dir(cli.out.as_deref(), "simulate"))
        }
        Command::Detect(a) => {
            let mut cfg: DetectConfig = file.section("detect")?;
            set(&mut cfg.seed, cli.seed);
            cfg.data = a.data.or(cfg.data);
            set(&mut cfg.detectors, a.detectors);
            set(&mut cfg.k, a.k);
            cfg.up_to_day = a.up_to_day.or(cfg.up_to_day);
            commands::detect(&ctx, &cfg, &config::output_dir(cli.out.as_deref(), "detect"))
        }
        Command::Evaluate(a) => {
            let mut cfg: EvaluateConfig = file.section("evaluate")?;
            set(&mut cfg.seed, cli.seed);
            cfg.data = a.data.or(cfg.data);
            set(&mut cfg.mode, a.mode);
            cfg.predictions = a.predictions.or(cfg.predictions);
            cfg.source = a.source.or(cfg.source);
            set(&mut cfg.threshold, a.threshold);
            set(&mut cfg.tau, a.tau);
            set(&mut cfg.temporal, a.temporal);
            if a.raw_counts {
                cfg.raw_counts = true;
            }
            commands::evaluate(&ctx, &cfg, &config::output_dir(cli.out.as_deref(), "evaluate"))
        }
        Command::Aggregate(a) => {
            let mut cfg: AggregateConfig = file.section("aggregate")?;
            set(&mut cfg.seed, cli.seed);
            cfg.data = a.data.or(cfg.data);
            set(&mut cfg.predictions, a.predictions);
            set(&mut cfg.strategies, a.strategies);
            set(&mut cfg.soft_threshold, a.soft_threshold);
            set(&mut cfg.tau, a.tau);
            if a.optimize {
                cfg.optimize = true;
            }
            commands::aggregate(&ctx, &cfg, &config::output_dir(cli.out.as_deref(), "aggregate"))
        }
        Command::Cv(a) => {
            let mut cfg: CvCommandConfig = file.section("cv")?;
            set(&mut cfg.cv.seed, cli.seed);
            cfg.data = a.data.or(cfg.data);
            set(&mut cfg.strategies, a.strategies);
            set(&mut cfg.cv.k, a.k);
            set(&mut cfg.cv.inner_k, a.inner_k);
            set(&mut cfg.cv.fusion_samples, a.fusion_samples);
            commands::cv(&ctx, &cfg, &config::output_dir(cli.out.as_deref(), "cv"))
        }
        Command::Retrain(a) => {
            let mut cfg: RetrainConfig = file.section("retrain")?;
            set(&mut cfg.seed, cli.seed);
            cfg.data = a.data.or(cfg.data);
            set(&mut cfg.detector, a.detector);
            set(&mut cfg.strategies, a.strategy);
            set(&mut cfg.confidence, a.confidence);
            set(&mut cfg.tau, a.tau);
            cfg.days = a.days.or(cfg.days);
            commands::retrain(&ctx, &cfg, &config::output_dir(cli.out.as_deref(), "retrain"))
        }
        Command::Hypothesis(a) => {
            let mut cfg: HypothesisConfig = file.section("hypothesis")?;
            set(&mut cfg.seed, cli.seed);
            cfg.data = a.data.or(cfg.data);
            set(&mut cfg.test, a.test);
            set(&mut cfg.resamples, a.resamples);
            if a.fdr {
                cfg.fdr = true;
            }
            commands::hypothesis(&ctx, &cfg, &config::output_dir(cli.out.as_deref(), "hypothesis"))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
