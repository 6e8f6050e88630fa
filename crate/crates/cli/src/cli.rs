use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "blindmon",
    version,
    about = "Design and blinded monitoring of recurrent-event trials",
    propagate_version = true
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Random seed; overrides any seed in the configuration file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write results to this file instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Output format; each subcommand has its own default.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Unit of every time in data files, flags and outputs.
    #[arg(long, global = true, value_enum, default_value_t = Unit::Years)]
    pub time_unit: Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Years,
    Days,
}

impl From<Unit> for blindmon::counting::TimeUnit {
    fn from(u: Unit) -> Self {
        match u {
            Unit::Years => Self::Years,
            Unit::Days => Self::Days,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Target event count, sample size and target variance for a design.
    Design(DesignArgs),
    /// Simulate a trial and write it as an events CSV.
    Simulate(SimulateArgs),
    /// Fit the rate ratio with robust standard errors.
    Fit(FitArgs),
    /// Track the blinded variance estimate and report when it crosses the target.
    Monitor(MonitorArgs),
    /// Percentile bootstrap interval for the blinded variance at one time.
    Bootstrap(BootstrapArgs),
    /// Repeated-trial comparison of the fixed and monitored designs.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Rounding {
    Early,
    Late,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    /// Design specification (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Whether the base event count is rounded up before inflation.
    #[arg(long, value_enum, default_value_t = Rounding::Early)]
    pub rounding: Rounding,
    /// Events added to the rounded target.
    #[arg(long, default_value_t = 0)]
    pub cushion: u64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario parameters (JSON).
    #[arg(long)]
    pub params: PathBuf,
    /// Leave the arm column empty.
    #[arg(long)]
    pub blinded: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Events CSV with treatment codes.
    #[arg(long)]
    pub data: PathBuf,
    /// Calendar time of the analysis; defaults to the end of the data.
    #[arg(long, conflicts_with = "events")]
    pub at: Option<f64>,
    /// Analyse at the calendar time of this event (fixed design).
    #[arg(long)]
    pub events: Option<usize>,
    /// Two-sided significance level.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

/// How the target variance and the power reference are obtained.
#[derive(Debug, Args)]
pub struct TargetArgs {
    /// Design specification (JSON) supplying beta0, alpha and power.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Target variance; overrides the value implied by the design.
    #[arg(long)]
    pub target_v2: Option<f64>,
    /// Design log rate ratio when no specification is given; by default the
    /// effect that the target variance powers at `--power`.
    #[arg(long, allow_hyphen_values = true)]
    pub beta0: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.8)]
    pub power: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleKind {
    Continuous,
    Daily,
    Weekly,
    Monthly,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    /// Events CSV; the arm column is ignored.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub target: TargetArgs,
    #[arg(long, value_enum, default_value_t = ScheduleKind::Continuous, conflicts_with = "times")]
    pub schedule: ScheduleKind,
    /// Explicit comma-separated evaluation times.
    #[arg(long, value_delimiter = ',')]
    pub times: Option<Vec<f64>>,
    /// Start monitoring once this many events have occurred.
    #[arg(long)]
    pub start_events: Option<usize>,
    /// Start monitoring once this much calendar time has elapsed.
    #[arg(long)]
    pub start_time: Option<f64>,
    /// Last calendar time considered.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Bootstrap replicates for a pointwise interval at every evaluation.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Keep evaluating after the first crossing.
    #[arg(long)]
    pub full: bool,
    /// Also write the decision record (JSON) to this file.
    #[arg(long)]
    pub decision: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    /// Events CSV; the arm column is ignored.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub target: TargetArgs,
    /// Calendar time of the evaluation.
    #[arg(long)]
    pub at: f64,
    #[arg(long, default_value_t = 1000)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Correctly specified designs.
    Table2,
    /// Designs planned under misspecified frailty or shape.
    Table3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DesignChoice {
    Fixed,
    Proposed,
    Both,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Experiment configuration (JSON).
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in scenario set.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Override the number of replicates.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Simulate with no treatment effect.
    #[arg(long)]
    pub null: bool,
    #[arg(long, value_enum)]
    pub designs: Option<DesignChoice>,
    /// Write one CSV row per replicate and design to this file.
    #[arg(long)]
    pub replicate_log: Option<PathBuf>,
    /// Report each finished scenario on standard error.
    #[arg(long)]
    pub progress: bool,
}
