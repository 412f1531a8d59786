//! Constraint checks on generated trajectories: reachability against the
//! training workspace, fingertip collisions, fingertip–object contacts and the
//! comparison of finger–object distances with a reference demonstration.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dictionary::FingerError;
use crate::error::{Error, Result};
use crate::frame::{Finger, FingertipFrame, Pose, Trajectory, FINGERS};
use crate::ingest::ObjectCloud;
use crate::spatial::{squared_distance, to_array, KdTree};
use crate::stats::BoxStats;

pub const REPORT_FORMAT: &str = "primreport/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    /// Largest fingertip–surface distance counted as contact, meters.
    pub contact_threshold: f64,
    /// Fingertips closer than this collide, meters.
    pub min_finger_distance: f64,
    /// Membership radius of the reachable workspace, meters.
    pub workspace_radius: f64,
    pub min_contacts: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            contact_threshold: 0.005,
            min_finger_distance: 0.008,
            workspace_radius: 0.002,
            min_contacts: 3,
        }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.contact_threshold) || !positive(self.min_finger_distance) || !positive(self.workspace_radius) {
            return Err(Error::InvalidParameter(format!("verification thresholds must be positive: {self:?}")));
        }
        if self.min_contacts == 0 || self.min_contacts > FINGERS {
            return Err(Error::InvalidParameter(format!(
                "min_contacts must lie in 1..=5, got {}",
                self.min_contacts
            )));
        }
        Ok(())
    }
}

/// Fingertip positions seen in training, one index per finger.
#[derive(Debug, Clone)]
pub struct Workspace {
    trees: Vec<KdTree>,
    radius: f64,
}

impl Workspace {
    pub fn from_training(trajs: &[Trajectory], radius: f64) -> Result<Workspace> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidParameter(format!("workspace radius {radius} must be positive")));
        }
        let trees = Finger::ALL
            .iter()
            .map(|&f| {
                let pts: Vec<[f64; 3]> = trajs
                    .iter()
                    .flat_map(|t| t.frames().iter().map(move |fr| to_array(fr.get(f))))
                    .collect();
                KdTree::build(&pts).ok_or_else(|| Error::InvalidInput("no training positions".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Workspace { trees, radius })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn with_radius(&self, radius: f64) -> Result<Workspace> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidParameter(format!("workspace radius {radius} must be positive")));
        }
        Ok(Workspace {
            trees: self.trees.clone(),
            radius,
        })
    }

    pub fn distance(&self, finger: Finger, p: &[f64; 3]) -> f64 {
        self.trees[finger.index()].nearest_distance(p)
    }

    pub fn contains(&self, finger: Finger, p: &[f64; 3]) -> bool {
        self.distance(finger, p) <= self.radius
    }
}

/// Membership flag per instant and finger.
pub fn check_reachability(traj: &Trajectory, ws: &Workspace) -> Vec<[bool; FINGERS]> {
    traj.frames()
        .iter()
        .map(|f| std::array::from_fn(|j| ws.contains(Finger::ALL[j], &to_array(&f.positions[j]))))
        .collect()
}

/// Closest pair of fingertips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosestPair {
    pub fingers: (Finger, Finger),
    pub distance: f64,
}

/// Closest pair by a sweep along x: pairs whose x gap alone exceeds the best
/// distance so far are skipped, so the result equals the full scan exactly.
pub fn closest_pair(frame: &FingertipFrame) -> ClosestPair {
    let pts: [[f64; 3]; FINGERS] = frame.positions.map(|p| to_array(&p));
    let mut order: [usize; FINGERS] = std::array::from_fn(|i| i);
    order.sort_by(|&a, &b| pts[a][0].total_cmp(&pts[b][0]).then(a.cmp(&b)));
    let mut best = (f64::INFINITY, 0, 1);
    for (k, &i) in order.iter().enumerate() {
        for &j in &order[k + 1..] {
            let dx = pts[j][0] - pts[i][0];
            if dx * dx > best.0 {
                break;
            }
            let d = squared_distance(&pts[i], &pts[j]);
            if d < best.0 {
                best = (d, i.min(j), i.max(j));
            }
        }
    }
    ClosestPair {
        fingers: (Finger::ALL[best.1], Finger::ALL[best.2]),
        distance: best.0.sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Collision {
    pub instant: usize,
    pub pair: ClosestPair,
}

/// Instants whose closest fingertip pair is nearer than `d_min`.
pub fn check_collisions(traj: &Trajectory, d_min: f64) -> Vec<Collision> {
    traj.frames()
        .iter()
        .enumerate()
        .filter_map(|(instant, f)| {
            let pair = closest_pair(f);
            (pair.distance < d_min).then_some(Collision { instant, pair })
        })
        .collect()
}

/// Distance from each fingertip to the nearest cloud point of the object at
/// `object_pose` (both in the hand frame).
pub fn finger_object_distance(frame: &FingertipFrame, cloud: &ObjectCloud, object_pose: &Pose) -> [f64; FINGERS] {
    frame
        .positions
        .map(|p| cloud.index().nearest_distance(&to_array(&object_pose.inverse_transform_point(&p))))
}

fn check_track(traj: &Trajectory, track: &[Pose]) -> Result<()> {
    if traj.len() != track.len() {
        return Err(Error::Shape(format!(
            "trajectory has {} frames but the object track has {}",
            traj.len(),
            track.len()
        )));
    }
    Ok(())
}

pub fn object_distances(traj: &Trajectory, cloud: &ObjectCloud, track: &[Pose]) -> Result<Vec<[f64; FINGERS]>> {
    check_track(traj, track)?;
    Ok(traj
        .frames()
        .iter()
        .zip(track)
        .map(|(f, pose)| finger_object_distance(f, cloud, pose))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactCheck {
    pub distances: Vec<[f64; FINGERS]>,
    pub counts: Vec<usize>,
    /// Percentage of instants with at least `min_contacts` contacts.
    pub percent_with_min: f64,
}

pub fn count_contacts(distances: &[f64; FINGERS], threshold: f64) -> usize {
    distances.iter().filter(|d| **d <= threshold).count()
}

pub fn check_contacts(traj: &Trajectory, cloud: &ObjectCloud, track: &[Pose], cfg: &VerifyConfig) -> Result<ContactCheck> {
    let distances = object_distances(traj, cloud, track)?;
    let counts: Vec<usize> = distances.iter().map(|d| count_contacts(d, cfg.contact_threshold)).collect();
    let ok = counts.iter().filter(|c| **c >= cfg.min_contacts).count();
    Ok(ContactCheck {
        percent_with_min: 100.0 * ok as f64 / counts.len() as f64,
        distances,
        counts,
    })
}

/// Per-instant `d_reference - d_generated` for every finger.
pub fn distance_difference(
    reference: &Trajectory,
    generated: &Trajectory,
    cloud: &ObjectCloud,
    track: &[Pose],
) -> Result<Vec<[f64; FINGERS]>> {
    if reference.len() != generated.len() {
        return Err(Error::Shape(format!(
            "reference has {} frames, generated has {}",
            reference.len(),
            generated.len()
        )));
    }
    let dr = object_distances(reference, cloud, track)?;
    let dg = object_distances(generated, cloud, track)?;
    Ok(dr.iter().zip(&dg).map(|(a, b)| std::array::from_fn(|j| a[j] - b[j])).collect())
}

pub fn finger_stats(rows: &[[f64; FINGERS]]) -> Option<Vec<FingerError>> {
    Finger::ALL
        .iter()
        .map(|&finger| {
            let col: Vec<f64> = rows.iter().map(|r| r[finger.index()]).collect();
            BoxStats::from_values(&col).map(|stats| FingerError { finger, stats })
        })
        .collect()
}

/// One verified trajectory. Without its own object track the reference track
/// applies.
#[derive(Debug, Clone, Copy)]
pub struct VerifyCase<'a> {
    pub generated: &'a Trajectory,
    pub reference: Option<&'a Trajectory>,
    pub object_track: &'a [Pose],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstantRow {
    pub t: f64,
    pub reach: [bool; FINGERS],
    pub min_pair_dist: f64,
    pub distances: [f64; FINGERS],
    pub n_contacts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub instants: usize,
    /// Percentage of instants with at least `min_contacts` contacts.
    pub contact_rate_percent: f64,
    pub collision_instants: usize,
    /// Finger-instants outside the workspace.
    pub reachability_violations: usize,
    pub instants_with_unreachable_finger: usize,
}

impl Aggregates {
    pub fn from_rows(rows: &[InstantRow], cfg: &VerifyConfig) -> Aggregates {
        let with_min = rows.iter().filter(|r| r.n_contacts >= cfg.min_contacts).count();
        Aggregates {
            instants: rows.len(),
            contact_rate_percent: if rows.is_empty() { 0.0 } else { 100.0 * with_min as f64 / rows.len() as f64 },
            collision_instants: rows.iter().filter(|r| r.min_pair_dist < cfg.min_finger_distance).count(),
            reachability_violations: rows.iter().map(|r| r.reach.iter().filter(|ok| !**ok).count()).sum(),
            instants_with_unreachable_finger: rows.iter().filter(|r| r.reach.contains(&false)).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub format: String,
    pub object: String,
    pub config: VerifyConfig,
    pub cloud_resolution: f64,
    pub trajectories: usize,
    pub totals: Aggregates,
    pub per_trajectory: Vec<Aggregates>,
    /// Quartiles of `d_reference - d_generated` per finger, when references
    /// were given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_difference: Option<Vec<FingerError>>,
    /// Sampling rate of the per-instant rows.
    pub rate_hz: f64,
    #[serde(skip)]
    pub rows: Vec<InstantRow>,
}

pub fn report(
    object: &str,
    cases: &[VerifyCase<'_>],
    ws: &Workspace,
    cloud: &ObjectCloud,
    cfg: &VerifyConfig,
) -> Result<ConstraintReport> {
    cfg.validate()?;
    let first = cases.first().ok_or_else(|| Error::InvalidInput("nothing to verify".into()))?;
    let rate = first.generated.rate_hz();
    let mut rows = Vec::new();
    let mut per_trajectory = Vec::with_capacity(cases.len());
    let mut differences = Vec::new();
    let mut offset = 0usize;
    for case in cases {
        let traj = case.generated;
        if traj.rate_hz() != rate {
            return Err(Error::InvalidInput("trajectories differ in sampling rate".into()));
        }
        let reach = check_reachability(traj, ws);
        let distances = object_distances(traj, cloud, case.object_track)?;
        let case_rows: Vec<InstantRow> = traj
            .frames()
            .iter()
            .enumerate()
            .map(|(i, f)| InstantRow {
                // Trajectories are laid end to end on one time axis.
                t: (offset + i) as f64 / rate,
                reach: reach[i],
                min_pair_dist: closest_pair(f).distance,
                distances: distances[i],
                n_contacts: count_contacts(&distances[i], cfg.contact_threshold),
            })
            .collect();
        per_trajectory.push(Aggregates::from_rows(&case_rows, cfg));
        if let Some(reference) = case.reference {
            differences.extend(distance_difference(reference, traj, cloud, case.object_track)?);
        }
        offset += traj.len();
        rows.extend(case_rows);
    }
    Ok(ConstraintReport {
        format: REPORT_FORMAT.into(),
        object: object.into(),
        config: *cfg,
        cloud_resolution: cloud.resolution(),
        trajectories: cases.len(),
        totals: Aggregates::from_rows(&rows, cfg),
        per_trajectory,
        distance_difference: finger_stats(&differences),
        rate_hz: rate,
        rows,
    })
}

/// Header of the per-instant CSV.
pub fn instant_header() -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    cols.extend(Finger::ALL.iter().map(|f| format!("reach_{}", f.label())));
    cols.push("min_pair_dist".into());
    cols.extend(Finger::ALL.iter().map(|f| format!("d_{}", f.label())));
    cols.push("n_contacts".into());
    cols
}

impl ConstraintReport {
    pub fn write_rows_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(instant_header())?;
        for r in &self.rows {
            let mut rec = vec![r.t.to_string()];
            rec.extend(r.reach.iter().map(|b| u8::from(*b).to_string()));
            rec.push(r.min_pair_dist.to_string());
            rec.extend(r.distances.iter().map(|d| d.to_string()));
            rec.push(r.n_contacts.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_rows_csv<R: std::io::Read>(input: R) -> Result<Vec<InstantRow>> {
        let mut rdr = csv::Reader::from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != instant_header() {
            return Err(Error::Format("unexpected per-instant CSV header".into()));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |k: usize| -> Result<f64> {
                rec[k].parse().map_err(|_| Error::Parse {
                    row: i + 1,
                    column: header[k].clone(),
                    message: format!("`{}` is not a number", &rec[k]),
                })
            };
            rows.push(InstantRow {
                t: num(0)?,
                reach: std::array::from_fn(|j| &rec[1 + j] == "1"),
                min_pair_dist: num(6)?,
                distances: [num(7)?, num(8)?, num(9)?, num(10)?, num(11)?],
                n_contacts: num(12)? as usize,
            });
        }
        Ok(rows)
    }

    pub fn save(&self, json_path: impl AsRef<Path>, csv_path: impl AsRef<Path>) -> Result<()> {
        let (jp, cp) = (json_path.as_ref(), csv_path.as_ref());
        let json = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(jp, json).map_err(|e| Error::io(jp, e))?;
        let file = std::fs::File::create(cp).map_err(|e| Error::io(cp, e))?;
        self.write_rows_csv(std::io::BufWriter::new(file))
    }
}
