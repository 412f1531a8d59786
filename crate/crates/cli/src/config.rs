//! JSON run configurations, one per subcommand.
//!
//! Relative paths inside a config file are resolved against the directory
//! holding that file. Paths given as command-line overrides are used as is.

use std::path::{Path, PathBuf};

use primhand::dictionary::NmfConfig;
use primhand::ingest::{ObjectModel, DEFAULT_FILTER_WINDOW};
use primhand::planner::{SolveOptions, VelocityBounds};
use primhand::pose::ContactTemplate;
use primhand::verify::VerifyConfig;
use primhand::Error;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliResult;

fn default_segment_s() -> f64 {
    1.0
}

fn default_filter_window() -> usize {
    DEFAULT_FILTER_WINDOW
}

fn default_train_sessions() -> usize {
    5
}

fn default_objects() -> Vec<ObjectModel> {
    vec![ObjectModel::cube(), ObjectModel::cylinder()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthRun {
    /// Required, here or on the command line.
    #[serde(default)]
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    #[serde(default = "default_objects")]
    pub objects: Vec<ObjectModel>,
    #[serde(default = "default_train_sessions")]
    pub train_sessions: usize,
    #[serde(default)]
    pub duration_s: Option<f64>,
    #[serde(default)]
    pub rate_hz: Option<f64>,
    #[serde(default)]
    pub noise_std: Option<f64>,
    /// Peak angular speed of the object, rad/s.
    #[serde(default)]
    pub angular_speed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRun {
    /// Required, here or on the command line; overrides `nmf.seed`.
    #[serde(default)]
    pub seed: Option<u64>,
    pub object: String,
    pub recordings: Vec<PathBuf>,
    /// Dictionary file to write.
    pub output: PathBuf,
    /// Per-iteration CSV log; defaults to the output path with a `.log.csv`
    /// suffix.
    #[serde(default)]
    pub log: Option<PathBuf>,
    #[serde(default)]
    pub nmf: NmfConfig,
    #[serde(default = "default_segment_s")]
    pub segment_s: f64,
    #[serde(default = "default_filter_window")]
    pub filter_window: usize,
}

impl TrainRun {
    pub fn log_path(&self) -> PathBuf {
        self.log.clone().unwrap_or_else(|| with_suffix(&self.output, ".log.csv"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestDictRun {
    pub dictionary: PathBuf,
    pub recording: PathBuf,
    pub output_json: PathBuf,
    /// Box-plot statistics per finger.
    pub output_csv: PathBuf,
    /// Optional raw per-instant distances.
    #[serde(default)]
    pub distances_csv: Option<PathBuf>,
    #[serde(default = "default_segment_s")]
    pub segment_s: f64,
    #[serde(default = "default_filter_window")]
    pub filter_window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanRun {
    pub dictionary: PathBuf,
    pub output_dir: PathBuf,
    /// JSON array of plan requests. Exclusive with `targets_from`.
    #[serde(default)]
    pub requests: Option<PathBuf>,
    /// Recording whose segment final frames become targets.
    #[serde(default)]
    pub targets_from: Option<PathBuf>,
    #[serde(default)]
    pub max_segments: Option<usize>,
    #[serde(default = "default_segment_s")]
    pub segment_s: f64,
    #[serde(default = "default_filter_window")]
    pub filter_window: usize,
    /// Object-pose cost weight for targets taken from a recording.
    #[serde(default)]
    pub alpha: f64,
    /// Contacts used to fit the object pose when `alpha > 0`.
    #[serde(default)]
    pub template: Option<ContactTemplate>,
    #[serde(default)]
    pub velocity: VelocityBounds,
    #[serde(default)]
    pub nonneg_weights: bool,
    #[serde(default)]
    pub solver: SolveOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyRun {
    /// Object model JSON.
    pub object: PathBuf,
    /// Recordings whose fingertips define the reachable workspace.
    pub training: Vec<PathBuf>,
    /// Manifest written by `plan`.
    pub plans: PathBuf,
    /// Recording with the object track the plans were derived from.
    pub reference: PathBuf,
    pub output_json: PathBuf,
    pub output_csv: PathBuf,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default = "default_segment_s")]
    pub segment_s: f64,
    #[serde(default = "default_filter_window")]
    pub filter_window: usize,
}

/// Paths relative to the config file are rebased onto its directory.
pub trait ResolvePaths {
    fn resolve_paths(&mut self, base: &Path);
}

fn rebase(path: &mut PathBuf, base: &Path) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

fn rebase_opt(path: &mut Option<PathBuf>, base: &Path) {
    if let Some(p) = path {
        rebase(p, base);
    }
}

impl ResolvePaths for SynthRun {
    fn resolve_paths(&mut self, base: &Path) {
        rebase(&mut self.out_dir, base);
    }
}

impl ResolvePaths for TrainRun {
    fn resolve_paths(&mut self, base: &Path) {
        self.recordings.iter_mut().for_each(|p| rebase(p, base));
        rebase(&mut self.output, base);
        rebase_opt(&mut self.log, base);
    }
}

impl ResolvePaths for TestDictRun {
    fn resolve_paths(&mut self, base: &Path) {
        rebase(&mut self.dictionary, base);
        rebase(&mut self.recording, base);
        rebase(&mut self.output_json, base);
        rebase(&mut self.output_csv, base);
        rebase_opt(&mut self.distances_csv, base);
    }
}

impl ResolvePaths for PlanRun {
    fn resolve_paths(&mut self, base: &Path) {
        rebase(&mut self.dictionary, base);
        rebase(&mut self.output_dir, base);
        rebase_opt(&mut self.requests, base);
        rebase_opt(&mut self.targets_from, base);
    }
}

impl ResolvePaths for VerifyRun {
    fn resolve_paths(&mut self, base: &Path) {
        rebase(&mut self.object, base);
        self.training.iter_mut().for_each(|p| rebase(p, base));
        rebase(&mut self.plans, base);
        rebase(&mut self.reference, base);
        rebase(&mut self.output_json, base);
        rebase(&mut self.output_csv, base);
    }
}

/// Reads a config file and resolves its relative paths.
pub fn load<T: DeserializeOwned + ResolvePaths>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg: T = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    cfg.resolve_paths(&base);
    Ok(cfg)
}

/// `path` with `suffix` appended to its file name.
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

pub fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("input file {} does not exist", path.display())).into())
    }
}

/// Creates the parent directory of an output file.
pub fn prepare_output(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => prepare_dir(dir),
        _ => Ok(()),
    }
}

pub fn prepare_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}
