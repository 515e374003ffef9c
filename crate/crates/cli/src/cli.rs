//! Flag and subcommand definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "fusemetrics",
    version,
    about = "Fuse, refine and score 3D brain tumor segmentations"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,

    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every subcommand. Values given here override the
/// configuration file.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// TOML label-schema file with [labels] and [regions] tables.
    #[arg(long, global = true, value_name = "FILE")]
    pub schema: Option<PathBuf>,

    /// Worker threads for batch subcommands.
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,

    /// Report output format.
    #[arg(long, global = true, value_enum, value_name = "FORMAT")]
    pub format: Option<ReportFormat>,

    /// Report file, or output directory for subcommands that write volumes.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,

    /// Voxel neighborhood for lesion matching and refinement.
    #[arg(long, global = true, value_enum, value_name = "N")]
    pub connectivity: Option<ConnectivityArg>,

    /// Distance charged for missed and spurious lesions, in mm.
    #[arg(long, global = true, value_name = "MM")]
    pub penalty_mm: Option<f64>,

    /// Enhancing-tumor components below this size are dropped unless
    /// their mean probability is convincing.
    #[arg(long, global = true, value_name = "VOXELS")]
    pub et_min_component: Option<usize>,

    /// Surviving enhancing tumor below this total is dropped unless
    /// its mean probability is convincing.
    #[arg(long, global = true, value_name = "VOXELS")]
    pub et_min_total: Option<usize>,

    /// Mean probability at which enhancing tumor is kept regardless of size.
    #[arg(long, global = true, value_name = "P")]
    pub et_prob_threshold: Option<f64>,

    /// Consensus method for the fuse subcommand.
    #[arg(long, global = true, value_enum, value_name = "METHOD")]
    pub fusion: Option<FusionArg>,

    /// Percentile estimator for surface distances.
    #[arg(long, global = true, value_enum, value_name = "METHOD")]
    pub percentile_method: Option<PercentileArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConnectivityArg {
    #[value(name = "6")]
    Six,
    #[value(name = "18")]
    Eighteen,
    #[value(name = "26")]
    TwentySix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FusionArg {
    Staple,
    Majority,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PercentileArg {
    NearestRank,
    Linear,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print header facts for NIfTI files.
    Info(InfoArgs),
    /// Reorient, resample, crop, resize and normalize the images of each case.
    Preprocess(BatchArgs),
    /// Fuse each case's predictions into one consensus label map.
    Fuse(BatchArgs),
    /// Clean up enhancing tumor in each case's predicted label map.
    Postprocess(BatchArgs),
    /// Score predictions against ground truth and emit a report.
    Evaluate(BatchArgs),
    /// Re-emit a JSON report, converting between formats.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct InfoArgs {
    /// Files to inspect.
    #[arg(required = true, value_name = "FILE")]
    pub paths: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    /// CSV manifest or dataset directory.
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// JSON report written by evaluate.
    #[arg(value_name = "FILE")]
    pub input: PathBuf,
}
