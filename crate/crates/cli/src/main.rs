//! `remine`: hard-sample mining, selection and manifest emission from files.

mod commands;
mod config;
mod fail;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use remine_core::{GenerationTag, SearchMode};

use config::RunConfig;
use fail::{CliResult, Failure};

#[derive(Debug, Parser)]
#[command(
    name = "remine",
    version,
    about = "Hard-sample mining and re-mining for detection-based diagnosis"
)]
pub struct Cli {
    /// TOML run configuration; flags override its values
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Worker threads, 0 for one per core
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Class catalog JSON ({"disease_classes": [...], "healthy_label": "..."})
    #[arg(long, value_name = "PATH")]
    pub catalog: Option<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify a dataset from a detection dump and write metric reports
    Evaluate(EvaluateArgs),
    /// Collect false-positive detections on healthy images as hard-samples
    Mine(MineArgs),
    /// Drop hard-sample classes whose recall fell by more than theta
    Select(SelectArgs),
    /// Write a training manifest for one generation
    Emit(EmitArgs),
    /// Produce a detection dump from a synthetic detector profile
    Simulate(SimulateArgs),
    /// Pick theta by scoring each candidate with a simulated retrained detector
    SearchTheta(SearchThetaArgs),
    /// Write a synthetic dataset manifest
    GenDataset(GenDatasetArgs),
    /// Write the bundled demo catalog, profile and retraining model
    InitDemo(InitDemoArgs),
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset manifest (JSON lines)
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    /// Detection dump (JSON lines, one line per image)
    #[arg(long, value_name = "PATH")]
    pub detections: Option<PathBuf>,
    /// Binary healthy/diseased verdicts for the two-stage rule
    #[arg(long, value_name = "PATH")]
    pub gate: Option<PathBuf>,
    /// Model tag stored in the report
    #[arg(long)]
    pub tag: Option<String>,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset manifest; only its healthy images are mined
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    /// Detection dump covering the healthy images
    #[arg(long, value_name = "PATH")]
    pub detections: Option<PathBuf>,
    /// Minimum confidence for a box to count (default 0.25)
    #[arg(long, value_name = "P")]
    pub conf_floor: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub common: Common,
    /// report.json of the detector trained without hard-samples
    #[arg(long, value_name = "PATH")]
    pub org_report: Option<PathBuf>,
    /// report.json of the detector trained with all hard-samples
    #[arg(long, value_name = "PATH")]
    pub hsm_report: Option<PathBuf>,
    /// hard_samples.json from `mine`
    #[arg(long, value_name = "PATH")]
    pub hard_samples: Option<PathBuf>,
    /// Recall-drop threshold in percentage points (default 6)
    #[arg(long)]
    pub theta: Option<u32>,
}

#[derive(Debug, Args)]
pub struct EmitArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset manifest; its disease images form the base of every generation
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    /// Hard-sample index to append (required for hsm and hsrem)
    #[arg(long, value_name = "PATH")]
    pub hard_samples: Option<PathBuf>,
    /// Generation: org, hsm or hsrem
    #[arg(long)]
    pub tag: GenerationTag,
    /// Also export normalised box labels, one text file per image
    #[arg(long)]
    pub labels: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset manifest to simulate detections for
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    /// Detector profile JSON
    #[arg(long, value_name = "PATH")]
    pub profile: Option<PathBuf>,
    /// Override the profile seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Kernel shifts applied to the profile
    #[arg(long, value_name = "PATH")]
    pub degradation: Option<PathBuf>,
    /// Retraining model; combined with --keys
    #[arg(long, value_name = "PATH")]
    pub retraining: Option<PathBuf>,
    /// Hard-sample classes the simulated detector was retrained with
    #[arg(long, value_delimiter = ',', value_name = "CLASS,...")]
    pub keys: Vec<String>,
    /// Output file name inside --out
    #[arg(long, default_value = "detections.jsonl")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct SearchThetaArgs {
    #[command(flatten)]
    pub common: Common,
    /// Validation manifest scored for every candidate theta
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    /// report.json of the detector trained without hard-samples
    #[arg(long, value_name = "PATH")]
    pub org_report: Option<PathBuf>,
    /// report.json of the detector trained with all hard-samples
    #[arg(long, value_name = "PATH")]
    pub hsm_report: Option<PathBuf>,
    /// hard_samples.json from `mine`
    #[arg(long, value_name = "PATH")]
    pub hard_samples: Option<PathBuf>,
    /// Base detector profile JSON
    #[arg(long, value_name = "PATH")]
    pub profile: Option<PathBuf>,
    /// Retraining model JSON
    #[arg(long, value_name = "PATH")]
    pub retraining: Option<PathBuf>,
    /// Override the profile seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// exhaustive (default) or binary; binary assumes a unimodal score
    #[arg(long, value_name = "MODE")]
    pub theta_mode: Option<SearchMode>,
    /// Smallest candidate theta (default 3)
    #[arg(long)]
    pub search_lower: Option<u32>,
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    #[command(flatten)]
    pub common: Common,
    /// Images per disease class
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    /// Healthy images (defaults to --per-class)
    #[arg(long)]
    pub healthy: Option<usize>,
    /// Per-class overrides, e.g. MD=500
    #[arg(long = "count", value_name = "CLASS=N")]
    pub counts: Vec<String>,
    /// Image size as WIDTHxHEIGHT
    #[arg(long, default_value = "1472x1427")]
    pub image_size: String,
    /// Seed for box placement (default 0)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Prefix for generated image ids
    #[arg(long, default_value = "")]
    pub prefix: String,
    /// Output file name inside --out
    #[arg(long, default_value = "manifest.jsonl")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct InitDemoArgs {
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

fn init_logging(config: &RunConfig) {
    let default = config.log.as_deref().unwrap_or("warn");
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("REMINE_LOG", default))
        .format_timestamp(None)
        .init();
}

fn run(cli: Cli) -> CliResult<()> {
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    init_logging(&config);
    let threads = cli.threads.or(config.threads).unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(Failure::internal)?;
    match cli.command {
        Command::Evaluate(a) => commands::evaluate(&a, &config),
        Command::Mine(a) => commands::mine(&a, &config),
        Command::Select(a) => commands::select(&a, &config),
        Command::Emit(a) => commands::emit(&a, &config),
        Command::Simulate(a) => commands::simulate(&a, &config),
        Command::SearchTheta(a) => commands::search_theta(&a, &config),
        Command::GenDataset(a) => commands::gen_dataset(&a, &config),
        Command::InitDemo(a) => commands::init_demo(&a, &config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = std::panic::catch_unwind(|| run(cli)).unwrap_or_else(|_| {
        Err(Failure::internal(
            "internal error (panic), see message above",
        ))
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.exit as u8)
        }
    }
}
