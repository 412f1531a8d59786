//! Demonstration recordings: CSV I/O, preprocessing into the hand-back frame,
//! one-second segmentation, object surface point clouds, and a synthetic
//! demonstration generator standing in for motion-capture sessions.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{median_filter, Finger, FingertipFrame, Pose, Trajectory, DEFAULT_RATE_HZ};
use crate::spatial::KdTree;

/// Median window stated for demonstration preprocessing (widened to 51).
pub const DEFAULT_FILTER_WINDOW: usize = 50;

// ---------------------------------------------------------------------------
// Recordings
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    /// Fingertip marker positions in the world frame.
    pub fingertips: FingertipFrame,
    pub hand_back: Pose,
    pub object: Option<Pose>,
}

/// A motion-capture session at a constant rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    rate_hz: f64,
    samples: Vec<Sample>,
}

impl Recording {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "a recording needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        let has_object = samples[0].object.is_some();
        for (i, s) in samples.iter().enumerate() {
            if s.object.is_some() != has_object {
                return Err(Error::InvalidInput(format!(
                    "sample {} disagrees with sample 1 on the presence of an object pose",
                    i + 1
                )));
            }
            if !s.t.is_finite() {
                return Err(Error::Parse {
                    row: i + 1,
                    column: "t".into(),
                    message: format!("timestamp {} is not finite", s.t),
                });
            }
            if i > 0 && s.t <= samples[i - 1].t {
                return Err(Error::Parse {
                    row: i + 1,
                    column: "t".into(),
                    message: format!("timestamp {} does not increase", s.t),
                });
            }
        }
        let n = samples.len();
        let mean_dt = (samples[n - 1].t - samples[0].t) / (n - 1) as f64;
        for (i, pair) in samples.windows(2).enumerate() {
            let dt = pair[1].t - pair[0].t;
            if (dt - mean_dt).abs() > 0.01 * mean_dt {
                return Err(Error::Parse {
                    row: i + 2,
                    column: "t".into(),
                    message: format!("sampling interval {dt} deviates more than 1% from {mean_dt}"),
                });
            }
        }
        Ok(Recording {
            rate_hz: 1.0 / mean_dt,
            samples,
        })
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn has_object(&self) -> bool {
        self.samples[0].object.is_some()
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Recording> {
        parse_recording(reader)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Recording> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        parse_recording(std::io::BufReader::new(file))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header = recording_header(self.has_object());
        writeln!(out, "{}", header.join(","))?;
        let mut line = String::new();
        for s in &self.samples {
            line.clear();
            push_num(&mut line, s.t);
            for c in s.fingertips.coords() {
                push_num(&mut line, c);
            }
            push_pose(&mut line, &s.hand_back);
            if let Some(o) = &s.object {
                push_pose(&mut line, o);
            }
            writeln!(out, "{}", &line[1..])?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

fn push_num(line: &mut String, v: f64) {
    use std::fmt::Write as _;
    let _ = write!(line, ",{v}");
}

fn push_pose(line: &mut String, p: &Pose) {
    for c in p.position.iter() {
        push_num(line, *c);
    }
    for c in p.wxyz() {
        push_num(line, c);
    }
}

const POSE_SUFFIXES: [&str; 7] = ["x", "y", "z", "qw", "qx", "qy", "qz"];

/// CSV header of a recording, with or without the object pose columns.
pub fn recording_header(with_object: bool) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    cols.extend(fingertip_columns());
    cols.extend(POSE_SUFFIXES.iter().map(|s| format!("hb_{s}")));
    if with_object {
        cols.extend(POSE_SUFFIXES.iter().map(|s| format!("ob_{s}")));
    }
    cols
}

/// `th_x, th_y, th_z, if_x, ... lf_z`.
pub fn fingertip_columns() -> Vec<String> {
    Finger::ALL
        .iter()
        .flat_map(|f| ["x", "y", "z"].map(|a| format!("{}_{a}", f.label())))
        .collect()
}

fn parse_recording<R: Read>(reader: R) -> Result<Recording> {
    let mut csv = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = csv.headers()?.iter().map(str::to_string).collect();
    let with_object = match header.len() {
        23 => false,
        30 => true,
        n => {
            return Err(Error::Parse {
                row: 0,
                column: header.last().cloned().unwrap_or_default(),
                message: format!("expected 23 or 30 columns, found {n}"),
            })
        }
    };
    let expected = recording_header(with_object);
    if let Some((name, want)) = header.iter().zip(&expected).find(|(a, b)| a != b) {
        return Err(Error::Parse {
            row: 0,
            column: name.clone(),
            message: format!("expected column `{want}`"),
        });
    }
    let mut samples = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let row = i + 1;
        let record = record?;
        if record.len() != expected.len() {
            return Err(Error::Parse {
                row,
                column: expected.get(record.len()).cloned().unwrap_or_default(),
                message: format!("expected {} fields, found {}", expected.len(), record.len()),
            });
        }
        let mut values = Vec::with_capacity(record.len());
        for (field, name) in record.iter().zip(&expected) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                column: name.clone(),
                message: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: name.clone(),
                    message: "value is not finite".into(),
                });
            }
            values.push(v);
        }
        let pose_at = |start: usize, col: &str| {
            let v = &values[start..start + 7];
            Pose::from_wxyz(Vector3::new(v[0], v[1], v[2]), [v[3], v[4], v[5], v[6]]).map_err(
                |e| Error::Parse {
                    row,
                    column: col.to_string(),
                    message: e.to_string(),
                },
            )
        };
        samples.push(Sample {
            t: values[0],
            fingertips: FingertipFrame::from_slice(&values[1..16])?,
            hand_back: pose_at(16, "hb_qw")?,
            object: if with_object {
                Some(pose_at(23, "ob_qw")?)
            } else {
                None
            },
        });
    }
    Recording::new(samples)
}

// ---------------------------------------------------------------------------
// Preprocessing and segmentation
// ---------------------------------------------------------------------------

/// A recording expressed in the hand-back frame and median filtered.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub trajectory: Trajectory,
    /// Object pose in the hand-back frame, when the recording tracked it.
    pub object_track: Option<Vec<Pose>>,
}

pub fn preprocess(rec: &Recording, filter_window: usize) -> Result<Preprocessed> {
    let hand_frames = rec
        .samples
        .iter()
        .map(|s| s.fingertips.to_hand_frame(&s.hand_back))
        .collect::<Result<Vec<_>>>()?;

    let n = hand_frames.len();
    let mut coords: Vec<Vec<f64>> = (0..15).map(|_| Vec::with_capacity(n)).collect();
    for f in &hand_frames {
        for (k, c) in f.coords().into_iter().enumerate() {
            coords[k].push(c);
        }
    }
    let filtered = coords
        .iter()
        .map(|s| median_filter(s, filter_window))
        .collect::<Result<Vec<_>>>()?;
    let frames = (0..n)
        .map(|i| {
            let c: Vec<f64> = filtered.iter().map(|s| s[i]).collect();
            FingertipFrame::from_slice(&c)
        })
        .collect::<Result<Vec<_>>>()?;
    let trajectory = Trajectory::new(frames, rec.rate_hz)?;

    let object_track = if rec.has_object() {
        let rel: Vec<Pose> = rec
            .samples
            .iter()
            .map(|s| s.hand_back.inverse().compose(s.object.as_ref().expect("checked")))
            .collect();
        Some(filter_pose_track(&rel, filter_window)?)
    } else {
        None
    };
    Ok(Preprocessed {
        trajectory,
        object_track,
    })
}

/// Median filters positions and quaternion components. Quaternion signs are
/// made continuous first so the filter never averages across `q` and `-q`.
pub fn filter_pose_track(track: &[Pose], window: usize) -> Result<Vec<Pose>> {
    let n = track.len();
    let mut series: Vec<Vec<f64>> = (0..7).map(|_| Vec::with_capacity(n)).collect();
    let mut prev: Option<[f64; 4]> = None;
    for p in track {
        let mut q = p.wxyz();
        if let Some(pq) = prev {
            let dot: f64 = q.iter().zip(pq.iter()).map(|(a, b)| a * b).sum();
            if dot < 0.0 {
                q = q.map(|c| -c);
            }
        }
        prev = Some(q);
        for (k, c) in p.position.iter().chain(q.iter()).enumerate() {
            series[k].push(*c);
        }
    }
    let filtered = series
        .iter()
        .map(|s| median_filter(s, window))
        .collect::<Result<Vec<_>>>()?;
    (0..n)
        .map(|i| {
            let v: Vec<f64> = filtered.iter().map(|s| s[i]).collect();
            Pose::from_wxyz(Vector3::new(v[0], v[1], v[2]), [v[3], v[4], v[5], v[6]])
        })
        .collect()
}

/// Frames per segment of `seconds` at `rate_hz`.
pub fn segment_len(rate_hz: f64, seconds: f64) -> Result<usize> {
    if !(seconds.is_finite() && seconds > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "segment length must be positive, got {seconds} s"
        )));
    }
    let n = (rate_hz * seconds).round() as usize;
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "{seconds} s at {rate_hz} Hz gives fewer than 2 frames"
        )));
    }
    Ok(n)
}

/// Index ranges of consecutive non-overlapping segments; the remainder is
/// dropped.
pub fn segment_ranges(len: usize, rate_hz: f64, seconds: f64) -> Result<Vec<Range<usize>>> {
    let n = segment_len(rate_hz, seconds)?;
    if len < n {
        return Err(Error::InvalidInput(format!(
            "{len} frames are shorter than one {n}-frame segment"
        )));
    }
    Ok((0..len / n).map(|k| k * n..(k + 1) * n).collect())
}

pub fn segment(traj: &Trajectory, seconds: f64) -> Result<Vec<Trajectory>> {
    segment_ranges(traj.len(), traj.rate_hz(), seconds)?
        .into_iter()
        .map(|r| Trajectory::new(traj.frames()[r].to_vec(), traj.rate_hz()))
        .collect()
}

// ---------------------------------------------------------------------------
// Objects and point clouds
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum ObjectShape {
    /// Axis-aligned cube centered at the origin.
    Cube { edge: f64 },
    /// Cylinder along z centered at the origin.
    Cylinder { diameter: f64, height: f64 },
}

impl ObjectShape {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ObjectShape::Cube { edge } => edge.is_finite() && edge > 0.0,
            ObjectShape::Cylinder { diameter, height } => {
                diameter.is_finite() && diameter > 0.0 && height.is_finite() && height > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "object dimensions must be positive: {self:?}"
            )))
        }
    }

    /// Unsigned distance from `p` (object frame) to the surface.
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        match *self {
            ObjectShape::Cube { edge } => {
                let h = edge / 2.0;
                let d = p.map(|c| c.abs() - h);
                let outside = d.map(|c| c.max(0.0)).norm();
                let inside = d.max().min(0.0);
                (outside + inside).abs()
            }
            ObjectShape::Cylinder { diameter, height } => {
                let dr = (p.x * p.x + p.y * p.y).sqrt() - diameter / 2.0;
                let dz = p.z.abs() - height / 2.0;
                let outside = (dr.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt();
                let inside = dr.max(dz).min(0.0);
                (outside + inside).abs()
            }
        }
    }

    /// Surface patches and their areas, in sampling order.
    fn patches(&self) -> Vec<(Patch, f64)> {
        match *self {
            ObjectShape::Cube { edge } => (0..6)
                .map(|f| {
                    let sign = if f % 2 == 0 { 1.0 } else { -1.0 };
                    (Patch::CubeFace { axis: f / 2, sign, edge }, edge * edge)
                })
                .collect(),
            ObjectShape::Cylinder { diameter, height } => {
                let r = diameter / 2.0;
                vec![
                    (Patch::Lateral { r, height }, 2.0 * PI * r * height),
                    (Patch::Cap { r, z: height / 2.0 }, PI * r * r),
                    (Patch::Cap { r, z: -height / 2.0 }, PI * r * r),
                ]
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Patch {
    CubeFace { axis: usize, sign: f64, edge: f64 },
    Lateral { r: f64, height: f64 },
    Cap { r: f64, z: f64 },
}

impl Patch {
    /// Maps a point of the unit square onto the patch, area-preserving.
    fn map(&self, u: f64, v: f64) -> [f64; 3] {
        match *self {
            Patch::CubeFace { axis, sign, edge } => {
                let mut p = [0.0; 3];
                p[axis] = sign * edge / 2.0;
                p[(axis + 1) % 3] = (u - 0.5) * edge;
                p[(axis + 2) % 3] = (v - 0.5) * edge;
                p
            }
            Patch::Lateral { r, height } => {
                let theta = 2.0 * PI * u;
                [r * theta.cos(), r * theta.sin(), (v - 0.5) * height]
            }
            Patch::Cap { r, z } => {
                let rho = r * u.sqrt();
                let theta = 2.0 * PI * v;
                [rho * theta.cos(), rho * theta.sin(), z]
            }
        }
    }
}

/// Splits `n` samples across weights by largest remainder.
fn allocate(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .total_cmp(&(exact[a] - exact[a].floor()))
            .then(a.cmp(&b))
    });
    let missing = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

/// Quasi-uniform surface sampling: each patch receives an area-proportional
/// share of points laid out by a randomly shifted R2 low-discrepancy sequence.
pub fn build_pointcloud(shape: &ObjectShape, n_points: usize, seed: u64) -> Result<Vec<[f64; 3]>> {
    shape.validate()?;
    if n_points < 6 {
        return Err(Error::InvalidParameter(format!(
            "a point cloud needs at least 6 points, got {n_points}"
        )));
    }
    // Plastic number: R2 sequence generator.
    const G: f64 = 1.324_717_957_244_746;
    let (a1, a2) = (1.0 / G, 1.0 / (G * G));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patches = shape.patches();
    let counts = allocate(n_points, &patches.iter().map(|p| p.1).collect::<Vec<_>>());
    let mut cloud = Vec::with_capacity(n_points);
    for ((patch, _), count) in patches.iter().zip(counts) {
        let (s1, s2): (f64, f64) = (rng.random(), rng.random());
        for i in 0..count {
            let u = (s1 + a1 * i as f64).fract();
            let v = (s2 + a2 * i as f64).fract();
            cloud.push(patch.map(u, v));
        }
    }
    Ok(cloud)
}

/// Parametric description of a manipulated object. Its point cloud is
/// regenerated deterministically from `seed` and `cloud_size`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectModel {
    pub name: String,
    #[serde(flatten)]
    pub shape: ObjectShape,
    pub seed: u64,
    pub cloud_size: usize,
}

impl ObjectModel {
    /// 5 cm cube sampled with 50k points.
    pub fn cube() -> Self {
        ObjectModel {
            name: "cube".into(),
            shape: ObjectShape::Cube { edge: 0.05 },
            seed: 1,
            cloud_size: 50_000,
        }
    }

    /// 5 cm diameter, 5 cm high cylinder sampled with 70k points.
    pub fn cylinder() -> Self {
        ObjectModel {
            name: "cylinder".into(),
            shape: ObjectShape::Cylinder {
                diameter: 0.05,
                height: 0.05,
            },
            seed: 2,
            cloud_size: 70_000,
        }
    }

    pub fn build_cloud(&self) -> Result<ObjectCloud> {
        let points = build_pointcloud(&self.shape, self.cloud_size, self.seed)?;
        let index = KdTree::build(&points).expect("cloud has at least 6 points");
        let resolution = index.max_spacing();
        Ok(ObjectCloud {
            points,
            index,
            resolution,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: ObjectModel = serde_json::from_str(&text)?;
        model.shape.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Sampled object surface with its spatial index.
#[derive(Debug, Clone)]
pub struct ObjectCloud {
    points: Vec<[f64; 3]>,
    index: KdTree,
    resolution: f64,
}

impl ObjectCloud {
    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn index(&self) -> &KdTree {
        &self.index
    }

    /// Largest nearest-neighbour spacing in the cloud, meters.
    pub fn resolution(&self) -> f64 {
        self.resolution
    }
}

// ---------------------------------------------------------------------------
// Synthetic demonstrations
// ---------------------------------------------------------------------------

/// Rotation of the object about a fixed axis through its center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationProfile {
    /// Axis in the object frame; normalized on use.
    pub axis: [f64; 3],
    /// Peak angular speed, rad/s.
    pub angular_speed: f64,
    /// Periods of back-and-forth oscillations sharing the peak speed equally;
    /// empty for a constant-speed rotation.
    #[serde(default)]
    pub periods_s: Vec<f64>,
}

impl RotationProfile {
    fn angle(&self, t: f64, phases: &[f64]) -> f64 {
        if self.periods_s.is_empty() {
            return self.angular_speed * t;
        }
        let share = self.angular_speed / self.periods_s.len() as f64;
        self.periods_s
            .iter()
            .zip(phases)
            .map(|(period, phase)| share * period / (2.0 * PI) * (2.0 * PI * t / period + phase).sin())
            .sum()
    }
}

/// In-hand translation of the object center: one sinusoid per hand-frame axis
/// with a seeded phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationProfile {
    /// Per-axis amplitude, meters.
    pub amplitude: [f64; 3],
    pub periods_s: [f64; 3],
}

impl TranslationProfile {
    pub fn none() -> Self {
        TranslationProfile {
            amplitude: [0.0; 3],
            periods_s: [1.0; 3],
        }
    }

    fn offset(&self, t: f64, phases: &[f64; 3]) -> Vector3<f64> {
        Vector3::from_fn(|axis, _| {
            self.amplitude[axis] * (2.0 * PI * t / self.periods_s[axis] + phases[axis]).sin()
        })
    }
}

impl Default for TranslationProfile {
    fn default() -> Self {
        TranslationProfile::none()
    }
}

/// Slow oscillating motion of the hand back in the world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandMotion {
    pub base: Pose,
    pub translation_amplitude: [f64; 3],
    /// Amplitude of the wrist rotation, radians.
    pub rotation_amplitude: f64,
    pub period_s: f64,
}

impl HandMotion {
    pub fn stationary(base: Pose) -> Self {
        HandMotion {
            base,
            translation_amplitude: [0.0; 3],
            rotation_amplitude: 0.0,
            period_s: 1.0,
        }
    }

    fn pose(&self, t: f64) -> Pose {
        let w = 2.0 * PI * t / self.period_s;
        let offset = Vector3::from(self.translation_amplitude) * w.sin();
        let axis = Unit::new_normalize(Vector3::new(0.3, 0.5, 0.8));
        let rot = UnitQuaternion::from_axis_angle(&axis, self.rotation_amplitude * (w + 0.7).sin());
        self.base.compose(&Pose::new(offset, rot))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub object: ObjectModel,
    /// Fingertip contact points on the object surface, object frame, ordered
    /// thumb to little.
    pub contacts: [[f64; 3]; 5],
    /// Object center in the hand-back frame.
    pub object_center: [f64; 3],
    pub rotation: RotationProfile,
    #[serde(default)]
    pub translation: TranslationProfile,
    pub hand: HandMotion,
    /// Per-axis standard deviation of the fingertip marker noise, meters.
    pub noise_std: f64,
    pub duration_s: f64,
    pub rate_hz: f64,
    pub seed: u64,
    /// Whether the object pose is tracked (test sessions) or not (training).
    pub track_object: bool,
}

impl SynthConfig {
    /// Default grasp and motion for one of the two reference objects.
    pub fn for_object(object: ObjectModel, seed: u64) -> Self {
        let contacts = match object.shape {
            ObjectShape::Cube { edge } => {
                let h = edge / 2.0;
                [
                    [-h, 0.0, -0.005],
                    [h, -0.014, 0.010],
                    [h, 0.0, -0.008],
                    [h, 0.014, 0.006],
                    [0.012, h, -0.002],
                ]
            }
            ObjectShape::Cylinder { diameter, .. } => {
                let r = diameter / 2.0;
                let at = |deg: f64, z: f64| {
                    let a = deg.to_radians();
                    [r * a.cos(), r * a.sin(), z]
                };
                [
                    at(180.0, -0.005),
                    at(-35.0, 0.010),
                    at(0.0, -0.008),
                    at(35.0, 0.006),
                    at(75.0, -0.002),
                ]
            }
        };
        SynthConfig {
            object,
            contacts,
            object_center: [0.09, 0.0, 0.06],
            rotation: RotationProfile {
                axis: [0.0, 0.0, 1.0],
                angular_speed: 0.5,
                periods_s: vec![6.7, 10.9],
            },
            translation: TranslationProfile::none(),
            hand: HandMotion {
                base: Pose::from_euler_zyx(Vector3::new(0.4, 0.2, 1.1), 0.5, 0.0, 0.0),
                translation_amplitude: [0.05, 0.03, 0.02],
                rotation_amplitude: 0.3,
                period_s: 23.0,
            },
            noise_std: 0.0005,
            duration_s: 120.0,
            rate_hz: DEFAULT_RATE_HZ,
            seed,
            track_object: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.object.shape.validate()?;
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::InvalidParameter(format!("noise std {}", self.noise_std)));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::InvalidParameter(format!("duration {} s", self.duration_s)));
        }
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(Error::InvalidParameter(format!("rate {} Hz", self.rate_hz)));
        }
        if Vector3::from(self.rotation.axis).norm() < 1e-12 {
            return Err(Error::InvalidParameter("rotation axis is zero".into()));
        }
        if self.rotation.periods_s.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::InvalidParameter("oscillation periods must be positive".into()));
        }
        let t = &self.translation;
        if t.amplitude.iter().any(|a| !(a.is_finite() && *a >= 0.0)) || t.periods_s.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::InvalidParameter(
                "translation amplitudes must be >= 0 and periods positive".into(),
            ));
        }
        if !(self.hand.period_s.is_finite() && self.hand.period_s > 0.0) {
            return Err(Error::InvalidParameter("hand motion period must be positive".into()));
        }
        for (finger, c) in Finger::ALL.iter().zip(&self.contacts) {
            let d = self.object.shape.surface_distance(&Vector3::from(*c));
            if d > 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "{finger:?} contact point {c:?} is {d} m off the object surface"
                )));
            }
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        (self.duration_s * self.rate_hz).round() as usize
    }
}

/// Generates a recording where the fingertips stay on fixed contact points of
/// a rotating object held by a moving hand. Marker noise is isotropic Gaussian
/// in the hand frame. Deterministic in `cfg.seed`.
pub fn synth_demo(cfg: &SynthConfig) -> Result<Recording> {
    cfg.validate()?;
    let n = cfg.sample_count();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "{} s at {} Hz is shorter than two samples",
            cfg.duration_s, cfg.rate_hz
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let phases: Vec<f64> = cfg
        .rotation
        .periods_s
        .iter()
        .map(|_| rng.random_range(0.0..2.0 * PI))
        .collect();
    let hand_phase = rng.random_range(0.0..cfg.hand.period_s);
    let drift_phases: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI));
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let axis = Unit::new_normalize(Vector3::from(cfg.rotation.axis));
    let center = Vector3::from(cfg.object_center);
    let contacts = cfg.contacts.map(Vector3::from);

    let samples = (0..n)
        .map(|k| {
            let t = k as f64 / cfg.rate_hz;
            let object_in_hand = Pose::new(
                center + cfg.translation.offset(t, &drift_phases),
                UnitQuaternion::from_axis_angle(&axis, cfg.rotation.angle(t, &phases)),
            );
            let hand = cfg.hand.pose(t + hand_phase);
            let hand_frame = FingertipFrame {
                positions: contacts.map(|c| {
                    let jitter = Vector3::from_fn(|_, _| noise.sample(&mut rng));
                    object_in_hand.transform_point(&c) + jitter
                }),
            };
            Ok(Sample {
                t,
                fingertips: hand_frame.to_world_frame(&hand)?,
                hand_back: hand,
                object: cfg.track_object.then(|| hand.compose(&object_in_hand)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Recording::new(samples)
}

/// Training and test sessions for one object.
#[derive(Debug, Clone)]
pub struct SynthSessions {
    pub train: Vec<Recording>,
    pub test: Recording,
}

/// Mirrors the collection protocol: `n_train` untracked-object sessions and one
/// session with the object pose tracked. Session seeds are drawn from a single
/// generator seeded with `seed`.
pub fn synth_sessions(base: &SynthConfig, n_train: usize, seed: u64) -> Result<SynthSessions> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut session = |track_object| {
        let cfg = SynthConfig {
            seed: rng.next_u64(),
            track_object,
            ..base.clone()
        };
        synth_demo(&cfg)
    };
    let train = (0..n_train).map(|_| session(false)).collect::<Result<Vec<_>>>()?;
    let test = session(true)?;
    Ok(SynthSessions { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_cfg(object: ObjectModel) -> SynthConfig {
        SynthConfig {
            duration_s: 3.0,
            translation: TranslationProfile::none(),
            ..SynthConfig::for_object(object, 11)
        }
    }

    #[test]
    fn minimal_file_parses() {
        let text = format!(
            "{}\n0,{},0,0,0,1,0,0,0\n0.01,{},0,0,0,1,0,0,0\n",
            recording_header(false).join(", "),
            ["0.1"; 15].join(","),
            ["0.1"; 15].join(",")
        );
        let rec = Recording::read_csv(text.as_bytes()).unwrap();
        assert_eq!(rec.len(), 2);
        assert!((rec.rate_hz() - 100.0).abs() < 1e-9);
        assert!(!rec.has_object());
    }

    #[test]
    fn decreasing_timestamp_names_row() {
        let row = |t: &str| format!("{t},{},0,0,0,1,0,0,0\n", ["0"; 15].join(","));
        let text = format!(
            "{}\n{}{}{}{}",
            recording_header(false).join(","),
            row("0"),
            row("0.01"),
            row("0.02"),
            row("0.015")
        );
        match Recording::read_csv(text.as_bytes()) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 4);
                assert_eq!(column, "t");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn schema_errors_name_the_column() {
        let mut header = recording_header(false);
        header[3] = "th_w".into();
        let text = format!("{}\n", header.join(","));
        match Recording::read_csv(text.as_bytes()) {
            Err(Error::Parse { column, .. }) => assert_eq!(column, "th_w"),
            other => panic!("expected parse error, got {other:?}"),
        }
        let text = format!(
            "{}\n0,{},0,0,0,1,0,0,0\n0.01,{},abc,0,0,1,0,0,0\n",
            recording_header(false).join(","),
            ["0"; 15].join(","),
            ["0"; 15].join(",")
        );
        match Recording::read_csv(text.as_bytes()) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column.as_str()), (2, "hb_x")),
            other => panic!("expected parse error, got {other:?}"),
        }
        let short = format!("{}\n0,1,2\n", recording_header(false).join(","));
        assert!(matches!(Recording::read_csv(short.as_bytes()), Err(Error::Parse { row: 1, .. })));
    }

    #[test]
    fn csv_round_trip() {
        let cfg = SynthConfig {
            track_object: true,
            ..short_cfg(ObjectModel::cube())
        };
        let rec = synth_demo(&cfg).unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let back = Recording::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), rec.len());
        for (a, b) in rec.samples().iter().zip(back.samples()) {
            assert!((a.t - b.t).abs() <= 1e-9);
            for (p, q) in a.fingertips.positions.iter().zip(&b.fingertips.positions) {
                assert!((p - q).amax() <= 1e-9);
            }
            assert!((a.hand_back.position - b.hand_back.position).amax() <= 1e-9);
            assert!(a.hand_back.angle_to(&b.hand_back) <= 1e-9);
            let (oa, ob) = (a.object.unwrap(), b.object.unwrap());
            assert!((oa.position - ob.position).amax() <= 1e-9 && oa.angle_to(&ob) <= 1e-9);
        }
    }

    #[test]
    fn static_scene_preprocesses_to_constant_trajectory() {
        let mut cfg = short_cfg(ObjectModel::cube());
        cfg.noise_std = 0.0;
        cfg.rotation.angular_speed = 0.0;
        cfg.hand = HandMotion::stationary(cfg.hand.base);
        let pre = preprocess(&synth_demo(&cfg).unwrap(), DEFAULT_FILTER_WINDOW).unwrap();
        let first = pre.trajectory.frames()[0];
        for f in pre.trajectory.frames() {
            for (a, b) in f.positions.iter().zip(&first.positions) {
                assert!((a - b).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn moving_hand_with_rigid_grasp_is_constant_in_hand_frame() {
        let mut cfg = short_cfg(ObjectModel::cylinder());
        cfg.rotation.angular_speed = 0.0;
        cfg.hand.translation_amplitude = [0.2, 0.1, 0.05];
        cfg.hand.rotation_amplitude = 0.8;
        cfg.hand.period_s = 4.0;
        let sigma = cfg.noise_std;
        let rec = synth_demo(&cfg).unwrap();
        let pre = preprocess(&rec, 1).unwrap();
        let n = pre.trajectory.len() as f64;
        for finger in Finger::ALL {
            for axis in 0..3 {
                let s = pre.trajectory.coordinate_series(finger, axis);
                let mean = s.iter().sum::<f64>() / n;
                let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                // Unfiltered noise only: sample variance within 30% of sigma^2.
                assert!(var <= 1.3 * sigma * sigma, "{finger:?}/{axis}: var {var}");
            }
        }
        // World-frame fingertips, by contrast, move by centimeters.
        let xs: Vec<f64> = rec.samples().iter().map(|s| s.fingertips.positions[0].x).collect();
        let spread = xs.iter().cloned().fold(f64::MIN, f64::max) - xs.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread > 0.05);
    }

    #[test]
    fn filter_removes_short_spikes() {
        let mut cfg = short_cfg(ObjectModel::cube());
        cfg.noise_std = 0.0;
        cfg.rotation.angular_speed = 0.0;
        let mut rec = synth_demo(&cfg).unwrap();
        let clean = preprocess(&rec, DEFAULT_FILTER_WINDOW).unwrap();
        // A 24-sample, 2 cm spike on the index finger.
        for s in &mut rec.samples[100..124] {
            let hand = s.hand_back;
            let mut local = s.fingertips.to_hand_frame(&hand).unwrap();
            local.positions[1].x += 0.02;
            s.fingertips = local.to_world_frame(&hand).unwrap();
        }
        let spiked = preprocess(&rec, DEFAULT_FILTER_WINDOW).unwrap();
        for (a, b) in clean.trajectory.frames().iter().zip(spiked.trajectory.frames()) {
            assert!((a.positions[1] - b.positions[1]).amax() < 1e-12);
        }
    }

    #[test]
    fn object_track_is_expressed_in_hand_frame() {
        let mut cfg = short_cfg(ObjectModel::cube());
        cfg.track_object = true;
        cfg.noise_std = 0.0;
        let rec = synth_demo(&cfg).unwrap();
        let pre = preprocess(&rec, 1).unwrap();
        let track = pre.object_track.unwrap();
        let center = Vector3::from(cfg.object_center);
        for (pose, frame) in track.iter().zip(pre.trajectory.frames()) {
            assert!((pose.position - center).amax() < 1e-12);
            for (c, f) in cfg.contacts.iter().zip(&frame.positions) {
                assert!((pose.transform_point(&Vector3::from(*c)) - f).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn pose_filter_handles_quaternion_sign_flips() {
        // A rotation sweeping through 180 degrees crosses w = 0.
        let axis = Vector3::z_axis();
        let track: Vec<Pose> = (0..200)
            .map(|k| Pose::new(Vector3::zeros(), UnitQuaternion::from_axis_angle(&axis, 2.0 + 0.01 * k as f64)))
            .collect();
        // Componentwise medians of a smooth track stay within a few window steps.
        let filtered = filter_pose_track(&track, 11).unwrap();
        for (a, b) in track.iter().zip(&filtered) {
            assert!(a.angle_to(b) < 1e-3);
        }
    }

    #[test]
    fn segmentation_rules() {
        let frame = FingertipFrame::from_slice(&[0.0; 15]).unwrap();
        let traj = |n| Trajectory::new(vec![frame; n], 100.0).unwrap();
        assert_eq!(segment(&traj(12000), 1.0).unwrap().len(), 120);
        let segs = segment(&traj(150), 1.0).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].len(), 100);
        assert!(matches!(segment(&traj(150), 0.0), Err(Error::InvalidParameter(_))));
        assert!(segment(&traj(50), 1.0).is_err());
    }

    #[test]
    fn segments_tile_a_prefix() {
        let frames: Vec<FingertipFrame> = (0..1037)
            .map(|i| FingertipFrame::from_slice(&[i as f64 * 1e-3; 15]).unwrap())
            .collect();
        let traj = Trajectory::new(frames, 100.0).unwrap();
        let joined: Vec<FingertipFrame> = segment(&traj, 1.0)
            .unwrap()
            .iter()
            .flat_map(|s| s.frames().to_vec())
            .collect();
        assert_eq!(joined.as_slice(), &traj.frames()[..1000]);
    }

    #[test]
    fn cube_cloud_lies_on_faces() {
        let cloud = build_pointcloud(&ObjectShape::Cube { edge: 0.05 }, 50_000, 3).unwrap();
        assert_eq!(cloud.len(), 50_000);
        for p in &cloud {
            assert!(p.iter().any(|c| c.abs() == 0.025));
            assert!(p.iter().all(|c| c.abs() <= 0.025));
        }
    }

    #[test]
    fn cylinder_cloud_lies_on_surface() {
        let (d, h) = (0.05, 0.05);
        let r2 = 0.025f64 * 0.025;
        let cloud = build_pointcloud(&ObjectShape::Cylinder { diameter: d, height: h }, 70_000, 5).unwrap();
        assert_eq!(cloud.len(), 70_000);
        for p in &cloud {
            let rr = p[0] * p[0] + p[1] * p[1];
            let lateral = (rr - r2).abs() <= 1e-9 && p[2].abs() <= h / 2.0;
            let cap = (p[2].abs() - h / 2.0).abs() <= 1e-9 && rr <= r2 + 1e-9;
            assert!(lateral || cap, "{p:?}");
        }
    }

    #[test]
    fn six_point_cube_has_one_point_per_face() {
        let cloud = build_pointcloud(&ObjectShape::Cube { edge: 0.05 }, 6, 0).unwrap();
        let mut faces: Vec<(usize, bool)> = cloud
            .iter()
            .map(|p| {
                let axis = (0..3).find(|&a| p[a].abs() == 0.025).unwrap();
                (axis, p[axis] > 0.0)
            })
            .collect();
        faces.sort();
        faces.dedup();
        assert_eq!(faces.len(), 6);
        assert!(build_pointcloud(&ObjectShape::Cube { edge: 0.05 }, 5, 0).is_err());
        assert!(build_pointcloud(&ObjectShape::Cube { edge: -1.0 }, 50, 0).is_err());
    }

    #[test]
    fn patch_counts_follow_areas() {
        let cloud = build_pointcloud(&ObjectShape::Cylinder { diameter: 0.05, height: 0.05 }, 70_000, 9).unwrap();
        let caps = cloud.iter().filter(|p| (p[2].abs() - 0.025).abs() < 1e-15).count() as f64;
        let lateral_area = 2.0 * PI * 0.025 * 0.05;
        let cap_area = 2.0 * PI * 0.025 * 0.025;
        let expected = cap_area / (cap_area + lateral_area);
        assert!((caps / 70_000.0 - expected).abs() / expected < 0.02);
    }

    #[test]
    fn object_model_json_omits_cloud() {
        let model = ObjectModel::cylinder();
        let json = serde_json::to_string(&model).unwrap();
        assert!(json.contains("\"shape\":\"cylinder\""));
        let back: ObjectModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn in_hand_translation_moves_the_grasp_rigidly() {
        let mut cfg = short_cfg(ObjectModel::cube());
        cfg.noise_std = 0.0;
        cfg.rotation.angular_speed = 0.0;
        cfg.translation = TranslationProfile {
            amplitude: [0.004, 0.0, 0.002],
            periods_s: [1.1, 1.0, 0.7],
        };
        cfg.track_object = true;
        let pre = preprocess(&synth_demo(&cfg).unwrap(), 1).unwrap();
        let track = pre.object_track.unwrap();
        let first = pre.trajectory.frames()[0];
        let mut travel: f64 = 0.0;
        for (pose, frame) in track.iter().zip(pre.trajectory.frames()) {
            let shift = pose.position - Vector3::from(cfg.object_center);
            assert!(shift.x.abs() <= 0.004 + 1e-12 && shift.y.abs() <= 1e-12 && shift.z.abs() <= 0.002 + 1e-12);
            for (p, q) in frame.positions.iter().zip(&first.positions) {
                // Every fingertip moves by the same displacement.
                assert!((p - q - (frame.positions[0] - first.positions[0])).amax() < 1e-12);
            }
            travel = travel.max(shift.x.abs());
        }
        assert!(travel > 0.003);
    }

    #[test]
    fn synthetic_rotation_traces_circles() {
        let mut cfg = short_cfg(ObjectModel::cylinder());
        cfg.noise_std = 0.0;
        cfg.rotation.periods_s.clear();
        cfg.rotation.angular_speed = 1.3;
        let pre = preprocess(&synth_demo(&cfg).unwrap(), 1).unwrap();
        let center = Vector3::from(cfg.object_center);
        for (k, frame) in pre.trajectory.frames().iter().enumerate() {
            let angle = 1.3 * k as f64 / cfg.rate_hz;
            for (c, p) in cfg.contacts.iter().zip(&frame.positions) {
                let (s, co) = angle.sin_cos();
                let expected = center + Vector3::new(co * c[0] - s * c[1], s * c[0] + co * c[1], c[2]);
                assert!((expected - p).amax() < 1e-12);
                let radius = (c[0] * c[0] + c[1] * c[1]).sqrt();
                let rel = p - center;
                assert!(((rel.x * rel.x + rel.y * rel.y).sqrt() - radius).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn synthesis_is_deterministic_and_validated() {
        let cfg = short_cfg(ObjectModel::cube());
        assert_eq!(synth_demo(&cfg).unwrap(), synth_demo(&cfg).unwrap());
        let mut off = cfg.clone();
        off.contacts[2][0] += 0.003;
        assert!(matches!(synth_demo(&off), Err(Error::InvalidParameter(_))));
        let mut zero = cfg.clone();
        zero.duration_s = 0.0;
        assert!(synth_demo(&zero).is_err());
        let mut neg = cfg;
        neg.noise_std = -1.0;
        assert!(synth_demo(&neg).is_err());
    }

    #[test]
    fn zero_noise_fingertips_touch_the_cloud() {
        for model in [ObjectModel::cube(), ObjectModel::cylinder()] {
            let mut cfg = short_cfg(model.clone());
            cfg.noise_std = 0.0;
            cfg.track_object = true;
            let cloud = model.build_cloud().unwrap();
            let pre = preprocess(&synth_demo(&cfg).unwrap(), 1).unwrap();
            let track = pre.object_track.unwrap();
            for (pose, frame) in track.iter().zip(pre.trajectory.frames()).step_by(7) {
                for p in &frame.positions {
                    let local = pose.inverse_transform_point(p);
                    let d = cloud.index().nearest_distance(&[local.x, local.y, local.z]);
                    assert!(d <= cloud.resolution(), "{} > {}", d, cloud.resolution());
                }
            }
        }
    }
}
