//! Batch pipeline behind the `primhand` binary.
//!
//! Every subcommand reads one JSON config, applies command-line overrides and
//! writes its artifacts. Runs are deterministic in the config and seed; the
//! worker count only changes speed.

pub mod args;
pub mod commands;
pub mod config;

use primhand::planner::VelocityBounds;
use serde_json::json;

use args::{Cli, Command};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] primhand::Error),

    #[error("{infeasible} of {total} plans are infeasible")]
    Infeasible { infeasible: usize, total: usize },

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Infeasible { .. } => "infeasible",
            CliError::Usage(_) => "usage",
        }
    }

    /// One-line JSON report written to stderr on failure.
    pub fn to_json(&self) -> String {
        json!({ "error": self.to_string(), "kind": self.kind() }).to_string()
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn init_logging(filter: Option<&str>) {
    let mut builder = env_logger::Builder::from_env(env_logger::Env::new().filter_or("PRIMHAND_LOG", "warn"));
    if let Some(f) = filter {
        builder.parse_filters(f);
    }
    // A logger installed earlier (tests) stays in place.
    let _ = builder.try_init();
}

pub fn run(cli: &Cli) -> CliResult<()> {
    if cli.jobs == Some(0) {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {:?} workers: {e}", cli.jobs)))?;
    pool.install(|| dispatch(&cli.command))
}

fn dispatch(command: &Command) -> CliResult<()> {
    match command {
        Command::Synth(a) => {
            let mut run: config::SynthRun = config::load(&a.config)?;
            run.seed = a.seed.or(run.seed);
            if let Some(dir) = &a.out_dir {
                run.out_dir = dir.clone();
            }
            run.duration_s = a.duration.or(run.duration_s);
            commands::synth(&run).map(drop)
        }
        Command::Train(a) => {
            let mut run: config::TrainRun = config::load(&a.config)?;
            run.seed = a.seed.or(run.seed);
            if let Some(out) = &a.output {
                run.output = out.clone();
            }
            if let Some(p) = a.primitives {
                run.nmf.primitives = p;
            }
            if let Some(m) = a.max_iters {
                run.nmf.max_iters = m;
            }
            commands::train(&run).map(drop)
        }
        Command::TestDict(a) => {
            let mut run: config::TestDictRun = config::load(&a.config)?;
            if let Some(d) = &a.dictionary {
                run.dictionary = d.clone();
            }
            commands::test_dict(&run).map(drop)
        }
        Command::Plan(a) => {
            let mut run: config::PlanRun = config::load(&a.config)?;
            if let Some(dir) = &a.output_dir {
                run.output_dir = dir.clone();
            }
            run.alpha = a.alpha.unwrap_or(run.alpha);
            if let Some(limit) = a.speed_limit {
                run.velocity = VelocityBounds::symmetric(limit);
            }
            run.max_segments = a.max_segments.or(run.max_segments);
            run.nonneg_weights |= a.nonneg_weights;
            commands::plan_cmd(&run).map(drop)
        }
        Command::Verify(a) => {
            let mut run: config::VerifyRun = config::load(&a.config)?;
            let v = &mut run.verify;
            v.workspace_radius = a.workspace_radius.unwrap_or(v.workspace_radius);
            v.contact_threshold = a.contact_threshold.unwrap_or(v.contact_threshold);
            v.min_finger_distance = a.min_finger_distance.unwrap_or(v.min_finger_distance);
            commands::verify(&run).map(drop)
        }
    }
}
