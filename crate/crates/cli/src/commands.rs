use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use primhand::dictionary::{
    nonneg_shift, reconstruction_distances, train_nmf_with, training_matrix, Dictionary, ReconStats,
    DEFAULT_SHIFT_MARGIN,
};
use primhand::frame::Pose;
use primhand::ingest::{
    preprocess, segment, segment_ranges, synth_sessions, ObjectModel, Recording, Sample, SynthConfig,
};
use primhand::planner::{plan, ObjectGoal, PlanRequest, PlanSummary, SolveStatus};
use primhand::stats::BoxStats;
use primhand::verify::{report, ConstraintReport, VerifyCase, Workspace};
use primhand::{Error, Finger, Trajectory};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{prepare_dir, prepare_output, require_file, PlanRun, SynthRun, TestDictRun, TrainRun, VerifyRun};
use crate::{CliError, CliResult};

pub const SYNTH_MANIFEST: &str = "synth.json";
pub const PLAN_MANIFEST: &str = "plans.json";
pub const PLAN_FORMAT: &str = "primplan/1";

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e).into())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text).map_err(Error::from)?)
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn flush(mut w: csv::Writer<std::fs::File>, path: &Path) -> CliResult<()> {
    w.flush().map_err(|e| Error::io(path, e).into())
}

fn require_seed(seed: Option<u64>, command: &str) -> CliResult<u64> {
    seed.ok_or_else(|| Error::Config(format!("{command} needs a seed (config `seed` or --seed)")).into())
}

fn load_segments(path: &Path, filter_window: usize, segment_s: f64) -> CliResult<Vec<Trajectory>> {
    let pre = preprocess(&Recording::load(path)?, filter_window)?;
    Ok(segment(&pre.trajectory, segment_s)?)
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub seed: u64,
    pub objects: Vec<SynthObject>,
}

/// Files are relative to the manifest directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthObject {
    pub name: String,
    pub seed: u64,
    pub config: SynthConfig,
    pub model: String,
    pub train: Vec<String>,
    pub test: String,
}

pub fn synth(run: &SynthRun) -> CliResult<SynthManifest> {
    let seed = require_seed(run.seed, "synth")?;
    if run.objects.is_empty() {
        return Err(Error::Config("no objects to synthesize".into()).into());
    }
    if run.train_sessions == 0 {
        return Err(Error::Config("train_sessions must be at least 1".into()).into());
    }
    let names: BTreeSet<&str> = run.objects.iter().map(|o| o.name.as_str()).collect();
    if names.len() != run.objects.len() {
        return Err(Error::Config("object names must be unique".into()).into());
    }
    if let Some(bad) = names.iter().find(|n| n.is_empty() || n.contains(['/', '\\']) || n.starts_with('.')) {
        return Err(Error::Config(format!("object name {bad:?} is not a valid directory name")).into());
    }

    // One generator hands each object its seed, in config order.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let configs: Vec<SynthConfig> = run
        .objects
        .iter()
        .map(|model| {
            let mut cfg = SynthConfig::for_object(model.clone(), rng.next_u64());
            if let Some(d) = run.duration_s {
                cfg.duration_s = d;
            }
            if let Some(r) = run.rate_hz {
                cfg.rate_hz = r;
            }
            if let Some(n) = run.noise_std {
                cfg.noise_std = n;
            }
            if let Some(w) = run.angular_speed {
                cfg.rotation.angular_speed = w;
            }
            cfg.validate()?;
            if cfg.sample_count() < 2 {
                return Err(Error::InvalidParameter(format!(
                    "{} s at {} Hz is shorter than two samples",
                    cfg.duration_s, cfg.rate_hz
                )));
            }
            Ok(cfg)
        })
        .collect::<primhand::Result<_>>()?;
    for cfg in &configs {
        prepare_dir(&run.out_dir.join(&cfg.object.name))?;
    }

    let objects = configs
        .par_iter()
        .map(|cfg| synth_object(run, cfg))
        .collect::<CliResult<Vec<_>>>()?;
    let manifest = SynthManifest { seed, objects };
    write_json(&run.out_dir.join(SYNTH_MANIFEST), &manifest)?;
    Ok(manifest)
}

fn synth_object(run: &SynthRun, cfg: &SynthConfig) -> CliResult<SynthObject> {
    let name = &cfg.object.name;
    let dir = run.out_dir.join(name);
    let sessions = synth_sessions(cfg, run.train_sessions, cfg.seed)?;
    cfg.object.save(dir.join("object.json"))?;
    let train = sessions
        .train
        .par_iter()
        .enumerate()
        .map(|(k, rec)| {
            let file = format!("train_{:02}.csv", k + 1);
            rec.save(dir.join(&file))?;
            Ok(format!("{name}/{file}"))
        })
        .collect::<CliResult<Vec<_>>>()?;
    sessions.test.save(dir.join("test.csv"))?;
    log::info!("{name}: {} training sessions and one test session", train.len());
    Ok(SynthObject {
        name: name.clone(),
        seed: cfg.seed,
        config: cfg.clone(),
        model: format!("{name}/object.json"),
        train,
        test: format!("{name}/test.csv"),
    })
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub segments: usize,
    pub rows: usize,
    pub primitives: usize,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub relative_error: f64,
}

pub fn train(run: &TrainRun) -> CliResult<TrainSummary> {
    let seed = require_seed(run.seed, "train")?;
    if run.recordings.is_empty() {
        return Err(Error::Config("no training recordings".into()).into());
    }
    run.recordings.iter().try_for_each(|p| require_file(p))?;
    let log_path = run.log_path();
    prepare_output(&run.output)?;
    prepare_output(&log_path)?;
    let cfg = primhand::dictionary::NmfConfig { seed, ..run.nmf.clone() };
    cfg.validate()?;

    let per_file = run
        .recordings
        .par_iter()
        .map(|p| load_segments(p, run.filter_window, run.segment_s))
        .collect::<CliResult<Vec<_>>>()?;
    let segments: Vec<Trajectory> = per_file.into_iter().flatten().collect();
    let rate = segments[0].rate_hz();
    if segments.iter().any(|s| s.rate_hz() != rate) {
        return Err(Error::InvalidInput("training recordings differ in sampling rate".into()).into());
    }
    let v = training_matrix(&segments)?;
    let (shifted, offset) = nonneg_shift(&v, DEFAULT_SHIFT_MARGIN)?;
    let norm_sq = shifted.norm_squared();
    log::info!(
        "training {} primitives on {} segments of {} frames",
        cfg.primitives,
        segments.len(),
        segments[0].len()
    );

    let mut log_rows: Vec<(usize, f64)> = Vec::new();
    let factors = train_nmf_with(&shifted, &cfg, |iteration, objective| {
        log_rows.push((iteration, objective));
        if iteration % 50 == 0 {
            log::debug!("iteration {iteration}: objective {objective:e}");
        }
    })?;
    let dict = Dictionary::new(factors.w.clone(), offset, rate, run.object.clone(), seed)?;
    dict.save(&run.output)?;

    let mut w = csv_writer(&log_path)?;
    w.write_record(["iteration", "objective", "relative_error"]).map_err(Error::from)?;
    for (iteration, objective) in &log_rows {
        let rel = (objective / norm_sq).sqrt();
        w.write_record([iteration.to_string(), objective.to_string(), rel.to_string()])
            .map_err(Error::from)?;
    }
    flush(w, &log_path)?;

    let final_objective = *factors.objective.last().expect("objective history is never empty");
    let summary = TrainSummary {
        segments: segments.len(),
        rows: dict.rows(),
        primitives: dict.primitives(),
        iterations: factors.iterations(),
        converged: factors.converged,
        objective: final_objective,
        relative_error: (final_objective / norm_sq).sqrt(),
    };
    log::info!("{summary:?}");
    Ok(summary)
}

// ---------------------------------------------------------------------------
// test-dict
// ---------------------------------------------------------------------------

pub fn test_dict(run: &TestDictRun) -> CliResult<ReconStats> {
    require_file(&run.dictionary)?;
    require_file(&run.recording)?;
    for p in [Some(&run.output_json), Some(&run.output_csv), run.distances_csv.as_ref()].into_iter().flatten() {
        prepare_output(p)?;
    }
    let dict = Dictionary::load(&run.dictionary)?;
    let segments = load_segments(&run.recording, run.filter_window, run.segment_s)?;
    if segments[0].len() != dict.frames() {
        return Err(Error::Shape(format!(
            "test segments have {} frames, the dictionary {}",
            segments[0].len(),
            dict.frames()
        ))
        .into());
    }
    let v_test = training_matrix(&segments)?;
    let h = dict.reconstruct_weights(&v_test)?;
    let dists = reconstruction_distances(&v_test, &dict, &h)?;
    let stats = ReconStats::from_distances(&dists, segments.len())?;

    write_json(&run.output_json, &stats)?;
    let mut w = csv_writer(&run.output_csv)?;
    w.write_record(["finger", "count", "min", "q1", "median", "q3", "max", "mean", "std"])
        .map_err(Error::from)?;
    let rows = stats
        .fingers
        .iter()
        .map(|f| (f.finger.label(), &f.stats))
        .chain(std::iter::once(("all", &stats.overall)));
    for (label, s) in rows {
        w.write_record(box_record(label, s)).map_err(Error::from)?;
    }
    flush(w, &run.output_csv)?;

    if let Some(path) = &run.distances_csv {
        let mut w = csv_writer(path)?;
        let mut header = vec!["segment".to_string(), "t".to_string()];
        header.extend(Finger::ALL.iter().map(|f| format!("e_{}", f.label())));
        w.write_record(&header).map_err(Error::from)?;
        for (k, d) in dists.iter().enumerate() {
            let mut rec = vec![(k / dict.frames()).to_string(), (k % dict.frames()).to_string()];
            rec.extend(d.iter().map(f64::to_string));
            w.write_record(&rec).map_err(Error::from)?;
        }
        flush(w, path)?;
    }
    for f in &stats.fingers {
        log::info!(
            "{:?}: median {:.3} mm, q3 {:.3} mm",
            f.finger,
            f.stats.median * 1e3,
            f.stats.q3 * 1e3
        );
    }
    Ok(stats)
}

fn box_record(label: &str, s: &BoxStats) -> Vec<String> {
    let mut rec = vec![label.to_string(), s.count.to_string()];
    rec.extend([s.min, s.q1, s.median, s.q3, s.max, s.mean, s.std].iter().map(f64::to_string));
    rec
}

// ---------------------------------------------------------------------------
// plan
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanManifest {
    pub format: String,
    pub object: String,
    pub dictionary_seed: u64,
    pub rate_hz: f64,
    pub plans: Vec<PlanEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub index: usize,
    /// Segment of the source recording supplying the target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment: Option<usize>,
    /// Trajectory CSV, relative to the manifest directory.
    pub trajectory: String,
    pub request: PlanRequest,
    pub result: PlanSummary,
}

impl PlanManifest {
    pub fn load(path: &Path) -> CliResult<PlanManifest> {
        let manifest: PlanManifest = read_json(path)?;
        if manifest.format != PLAN_FORMAT {
            return Err(Error::Format(format!("expected {PLAN_FORMAT}, found {:?}", manifest.format)).into());
        }
        Ok(manifest)
    }
}

fn requests_for(run: &PlanRun) -> CliResult<Vec<(Option<usize>, PlanRequest)>> {
    let requests = match (&run.requests, &run.targets_from) {
        (Some(path), None) => {
            require_file(path)?;
            let list: Vec<PlanRequest> = read_json(path)?;
            list.into_iter().map(|r| (None, r)).collect()
        }
        (None, Some(path)) => {
            require_file(path)?;
            if run.alpha > 0.0 && run.template.is_none() {
                return Err(Error::Config("alpha > 0 needs a contact template".into()).into());
            }
            let pre = preprocess(&Recording::load(path)?, run.filter_window)?;
            let ranges = segment_ranges(pre.trajectory.len(), pre.trajectory.rate_hz(), run.segment_s)?;
            let count = run.max_segments.map_or(ranges.len(), |m| m.min(ranges.len()));
            let frames = pre.trajectory.frames();
            (0..count)
                .map(|k| {
                    let end = ranges[k].end - 1;
                    let mut req = PlanRequest::new(frames[end]);
                    req.alpha = run.alpha;
                    req.velocity = run.velocity;
                    req.nonneg_weights = run.nonneg_weights;
                    if let Some(template) = &run.template {
                        let track = pre.object_track.as_ref().ok_or_else(|| {
                            Error::Config("an object goal needs a recording with an object track".into())
                        })?;
                        req.object = Some(ObjectGoal {
                            pose: track[end],
                            template: template.clone(),
                        });
                    }
                    Ok((Some(k), req))
                })
                .collect::<CliResult<Vec<_>>>()?
        }
        _ => {
            return Err(Error::Config("set exactly one of `requests` and `targets_from`".into()).into());
        }
    };
    if requests.is_empty() {
        return Err(Error::Config("no plan requests".into()).into());
    }
    for (_, req) in &requests {
        req.validate()?;
    }
    Ok(requests)
}

/// Writes a hand-frame trajectory in the recording format, hand back at the
/// origin.
fn trajectory_recording(traj: &Trajectory) -> primhand::Result<Recording> {
    let rate = traj.rate_hz();
    let samples = traj
        .frames()
        .iter()
        .enumerate()
        .map(|(i, f)| Sample {
            t: i as f64 / rate,
            fingertips: *f,
            hand_back: Pose::identity(),
            object: None,
        })
        .collect();
    Recording::new(samples)
}

pub fn plan_cmd(run: &PlanRun) -> CliResult<PlanManifest> {
    require_file(&run.dictionary)?;
    prepare_dir(&run.output_dir)?;
    let dict = Dictionary::load(&run.dictionary)?;
    let requests = requests_for(run)?;
    let results = requests
        .par_iter()
        .map(|(_, req)| plan(&dict, req, &run.solver))
        .collect::<primhand::Result<Vec<_>>>()?;

    let plans = results
        .par_iter()
        .zip(&requests)
        .enumerate()
        .map(|(index, (result, (segment, request)))| {
            let file = format!("plan_{index:03}.csv");
            trajectory_recording(&result.trajectory)?.save(run.output_dir.join(&file))?;
            Ok(PlanEntry {
                index,
                segment: *segment,
                trajectory: file,
                request: request.clone(),
                result: result.summary(),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let manifest = PlanManifest {
        format: PLAN_FORMAT.into(),
        object: dict.object().into(),
        dictionary_seed: dict.seed(),
        rate_hz: dict.rate_hz(),
        plans,
    };
    write_json(&run.output_dir.join(PLAN_MANIFEST), &manifest)?;

    let count = |status| manifest.plans.iter().filter(|p| p.result.status == status).count();
    let (infeasible, capped) = (count(SolveStatus::Infeasible), count(SolveStatus::MaxIter));
    if capped > 0 {
        log::warn!("{capped} plans hit the iteration cap");
    }
    log::info!("{} plans written to {}", manifest.plans.len(), run.output_dir.display());
    if infeasible > 0 {
        return Err(CliError::Infeasible {
            infeasible,
            total: manifest.plans.len(),
        });
    }
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

pub fn verify(run: &VerifyRun) -> CliResult<ConstraintReport> {
    require_file(&run.object)?;
    require_file(&run.plans)?;
    require_file(&run.reference)?;
    if run.training.is_empty() {
        return Err(Error::Config("the workspace needs at least one training recording".into()).into());
    }
    run.training.iter().try_for_each(|p| require_file(p))?;
    prepare_output(&run.output_json)?;
    prepare_output(&run.output_csv)?;
    run.verify.validate()?;

    let model = ObjectModel::load(&run.object)?;
    let manifest = PlanManifest::load(&run.plans)?;
    let plan_dir: PathBuf = run.plans.parent().map(Path::to_path_buf).unwrap_or_default();

    let training = run
        .training
        .par_iter()
        .map(|p| Ok(preprocess(&Recording::load(p)?, run.filter_window)?.trajectory))
        .collect::<CliResult<Vec<_>>>()?;
    let workspace = Workspace::from_training(&training, run.verify.workspace_radius)?;
    let cloud = model.build_cloud()?;

    let reference = preprocess(&Recording::load(&run.reference)?, run.filter_window)?;
    let track = reference
        .object_track
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("the reference recording has no object track".into()))?;
    let ranges = segment_ranges(reference.trajectory.len(), reference.trajectory.rate_hz(), run.segment_s)?;
    let ref_segments = segment(&reference.trajectory, run.segment_s)?;

    let generated = manifest
        .plans
        .par_iter()
        .map(|entry| {
            let rec = Recording::load(plan_dir.join(&entry.trajectory))?;
            Ok(preprocess(&rec, 1)?.trajectory)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let cases = manifest
        .plans
        .iter()
        .zip(&generated)
        .map(|(entry, traj)| {
            let k = entry.segment.ok_or_else(|| {
                Error::InvalidInput(format!("plan {} has no reference segment", entry.index))
            })?;
            let range = ranges.get(k).ok_or_else(|| {
                Error::InvalidInput(format!("reference has no segment {k} for plan {}", entry.index))
            })?;
            if traj.len() != range.len() {
                return Err(Error::Shape(format!(
                    "plan {} has {} frames, reference segment {k} has {}",
                    entry.index,
                    traj.len(),
                    range.len()
                ))
                .into());
            }
            Ok(VerifyCase {
                generated: traj,
                reference: Some(&ref_segments[k]),
                object_track: &track[range.clone()],
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let report = report(&model.name, &cases, &workspace, &cloud, &run.verify)?;
    report.save(&run.output_json, &run.output_csv)?;
    let t = &report.totals;
    log::info!(
        "{}: {:.2}% instants with >= {} contacts, {} collision instants, {} reachability violations",
        report.object,
        t.contact_rate_percent,
        run.verify.min_contacts,
        t.collision_instants,
        t.reachability_violations
    );
    Ok(report)
}
