//! `railinspect` command-line tool.
//!
//! Exit codes: 0 success (or track safe), 3 defect found (`inspect` only),
//! 2 usage error, 1 runtime failure.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod config;
mod cv;
mod ml;

pub use config::{RunConfig, UsageError, CONFIG_ECHO};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NOT_SAFE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "railinspect", version, about = "Synthetic track inspection and defect classification")]
pub struct Cli {
    /// INI config file; flags override its values
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for rendering, dataset generation and training
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Suppress progress and report output
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the 15x5 experiment frames and/or a CNN dataset
    Generate(cv::GenerateArgs),
    /// Compare a control frame with a test frame
    Inspect(cv::InspectArgs),
    /// Run every experiment pair and score the results
    InspectBatch(cv::BatchArgs),
    /// Train the classifier on a generated dataset
    Train(ml::TrainArgs),
    /// Classify one image
    Predict(ml::PredictArgs),
    /// Confusion matrix of a model on a dataset split
    Evaluate(ml::EvaluateArgs),
    /// Sweep the difference threshold over an experiment
    Roc(cv::RocArgs),
    /// Recompute statistics and histogram from a batch run
    Report(cv::ReportArgs),
}

/// Pipeline overrides shared by the inspection commands.
#[derive(Debug, Clone, Default, Args)]
pub struct PipelineFlags {
    /// Gray-level difference threshold (1-254)
    #[arg(long)]
    pub threshold: Option<u8>,
    /// Smallest blob area in pixels
    #[arg(long)]
    pub min_area: Option<usize>,
    /// Registration search radius in pixels
    #[arg(long)]
    pub window: Option<u32>,
    #[arg(long)]
    pub median_radius: Option<u32>,
    #[arg(long)]
    pub open_radius: Option<u32>,
    /// Largest blob-to-component distance in pixels
    #[arg(long)]
    pub max_distance: Option<f64>,
}

impl PipelineFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        let p = &mut cfg.pipeline;
        if let Some(v) = self.threshold {
            p.diff_threshold = v;
        }
        if let Some(v) = self.min_area {
            p.min_blob_area = v;
        }
        if let Some(v) = self.window {
            p.registration_window = v;
        }
        if let Some(v) = self.median_radius {
            p.median_radius = v;
        }
        if let Some(v) = self.open_radius {
            p.morph_open_radius = v;
        }
        if let Some(v) = self.max_distance {
            p.max_mapping_distance = v;
        }
    }
}

pub(crate) struct Ctx {
    pub cfg: RunConfig,
    pub quiet: bool,
}

impl Ctx {
    pub fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<i32> {
    let cfg = RunConfig::resolve(cli.config.as_deref(), cli.seed, cli.out.clone())?;
    let mut ctx = Ctx { cfg, quiet: cli.quiet };
    match cli.command {
        Command::Generate(a) => cv::generate(&mut ctx, a),
        Command::Inspect(a) => cv::inspect(&mut ctx, a),
        Command::InspectBatch(a) => cv::inspect_batch(&mut ctx, a),
        Command::Roc(a) => cv::roc(&mut ctx, a),
        Command::Report(a) => cv::report(&mut ctx, a, cli.out.is_some()),
        Command::Train(a) => ml::train(&mut ctx, a),
        Command::Predict(a) => ml::predict(&mut ctx, a),
        Command::Evaluate(a) => ml::evaluate(&mut ctx, a),
    }
}
