use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "primhand", version, about = "Learn fingertip motion primitives, plan with them and check the plans")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Worker threads; defaults to one per core. Outputs do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Log filter such as `info` or `primhand=debug`; overrides PRIMHAND_LOG.
    #[arg(long, global = true)]
    pub log_level: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize training and test recordings for each object.
    Synth(SynthArgs),
    /// Train a primitive dictionary from recordings.
    Train(TrainArgs),
    /// Reconstruct held-out segments and report fingertip errors.
    TestDict(TestDictArgs),
    /// Plan trajectories reaching target final fingertip positions.
    Plan(PlanArgs),
    /// Check planned trajectories against reachability, collisions and contacts.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub duration: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub primitives: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TestDictArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Symmetric per-axis fingertip speed limit, m/s.
    #[arg(long)]
    pub speed_limit: Option<f64>,
    #[arg(long)]
    pub max_segments: Option<usize>,
    #[arg(long)]
    pub nonneg_weights: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub workspace_radius: Option<f64>,
    #[arg(long)]
    pub contact_threshold: Option<f64>,
    #[arg(long)]
    pub min_finger_distance: Option<f64>,
}
