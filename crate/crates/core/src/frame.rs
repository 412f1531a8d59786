//! Reference frames, fingertip containers, median filtering and the flat
//! vector layout shared with the dictionary.
//!
//! The flat layout is time-major: for each instant `t`, the fifteen
//! coordinates `(x, y, z)` of thumb, index, middle, ring and little finger, in
//! that order. The rows of one instant are therefore a contiguous block of the
//! dictionary matrix.

use nalgebra::{DVector, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const FINGERS: usize = 5;
/// Coordinates per instant in the flat layout.
pub const COORDS_PER_FRAME: usize = 3 * FINGERS;
/// Default sampling rate of demonstrations.
pub const DEFAULT_RATE_HZ: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Finger {
    Thumb,
    Index,
    Middle,
    Ring,
    Little,
}

impl Finger {
    pub const ALL: [Finger; FINGERS] = [
        Finger::Thumb,
        Finger::Index,
        Finger::Middle,
        Finger::Ring,
        Finger::Little,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Column prefix used in CSV headers.
    pub fn label(self) -> &'static str {
        match self {
            Finger::Thumb => "th",
            Finger::Index => "if",
            Finger::Middle => "mf",
            Finger::Ring => "rf",
            Finger::Little => "lf",
        }
    }

    pub fn from_index(i: usize) -> Option<Finger> {
        Finger::ALL.get(i).copied()
    }
}

/// Positions of the five fingertips at one instant, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FingertipFrame {
    pub positions: [Vector3<f64>; FINGERS],
}

impl FingertipFrame {
    pub fn new(positions: [Vector3<f64>; FINGERS]) -> Result<Self> {
        let frame = FingertipFrame { positions };
        frame.validate()?;
        Ok(frame)
    }

    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        if coords.len() != COORDS_PER_FRAME {
            return Err(Error::Shape(format!(
                "a fingertip frame has {COORDS_PER_FRAME} coordinates, got {}",
                coords.len()
            )));
        }
        let positions = std::array::from_fn(|j| Vector3::from_column_slice(&coords[3 * j..3 * j + 3]));
        FingertipFrame::new(positions)
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.iter().all(|p| p.iter().all(|c| c.is_finite())) {
            Ok(())
        } else {
            Err(Error::InvalidInput("fingertip coordinates must be finite".into()))
        }
    }

    pub fn get(&self, finger: Finger) -> &Vector3<f64> {
        &self.positions[finger.index()]
    }

    pub fn coords(&self) -> [f64; COORDS_PER_FRAME] {
        let mut out = [0.0; COORDS_PER_FRAME];
        for (j, p) in self.positions.iter().enumerate() {
            out[3 * j..3 * j + 3].copy_from_slice(p.as_slice());
        }
        out
    }

    /// Express world-frame fingertips in the frame of `hand_back`.
    pub fn to_hand_frame(&self, hand_back: &Pose) -> Result<FingertipFrame> {
        self.validate()?;
        hand_back.validate()?;
        Ok(FingertipFrame {
            positions: self.positions.map(|p| hand_back.inverse_transform_point(&p)),
        })
    }

    /// Inverse of [`FingertipFrame::to_hand_frame`].
    pub fn to_world_frame(&self, hand_back: &Pose) -> Result<FingertipFrame> {
        self.validate()?;
        hand_back.validate()?;
        Ok(FingertipFrame {
            positions: self.positions.map(|p| hand_back.transform_point(&p)),
        })
    }
}

impl Serialize for FingertipFrame {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: [[f64; 3]; FINGERS] = self.positions.map(|p| [p.x, p.y, p.z]);
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FingertipFrame {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = <[[f64; 3]; FINGERS]>::deserialize(deserializer)?;
        FingertipFrame::new(rows.map(Vector3::from)).map_err(serde::de::Error::custom)
    }
}

/// Rigid pose. The orientation is kept as a unit quaternion with a
/// nonnegative scalar part; Euler angles appear only at I/O boundaries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    orientation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Pose {
            position,
            orientation: canonical(orientation),
        }
    }

    /// Builds a pose from a scalar-first quaternion, normalizing it.
    pub fn from_wxyz(position: Vector3<f64>, q: [f64; 4]) -> Result<Self> {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if !norm.is_finite() || norm < 1e-12 || !position.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "pose needs a finite position and a nonzero quaternion, got {q:?}"
            )));
        }
        Ok(Pose::new(position, UnitQuaternion::from_quaternion(quat)))
    }

    pub fn from_rotation(position: Vector3<f64>, rotation: &Rotation3<f64>) -> Self {
        Pose::new(position, UnitQuaternion::from_rotation_matrix(rotation))
    }

    /// ZYX intrinsic angles: yaw `psi` about z, then pitch `theta` about the new
    /// y, then roll `phi` about the new x.
    pub fn from_euler_zyx(position: Vector3<f64>, psi: f64, theta: f64, phi: f64) -> Self {
        Pose::new(position, UnitQuaternion::from_euler_angles(phi, theta, psi))
    }

    pub fn orientation(&self) -> &UnitQuaternion<f64> {
        &self.orientation
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        self.orientation.to_rotation_matrix()
    }

    /// `(psi, theta, phi)` in the ZYX intrinsic convention.
    pub fn euler_zyx(&self) -> (f64, f64, f64) {
        let (roll, pitch, yaw) = self.orientation.euler_angles();
        (yaw, pitch, roll)
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.orientation.quaternion();
        let finite = self.position.iter().chain(q.coords.iter()).all(|c| c.is_finite());
        if !finite {
            return Err(Error::InvalidInput("pose must be finite".into()));
        }
        if (q.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "pose quaternion norm {} is not 1",
                q.norm()
            )));
        }
        Ok(())
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.orientation * p + self.position
    }

    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.orientation.inverse_transform_vector(&(p - self.position))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.transform_point(&other.position),
            self.orientation * other.orientation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.orientation.inverse();
        Pose::new(-(inv * self.position), inv)
    }

    /// Geodesic angle between the two orientations, radians.
    pub fn angle_to(&self, other: &Pose) -> f64 {
        rotation_angle(&(self.orientation.inverse() * other.orientation))
    }
}

/// Rotation angle of a unit quaternion, accurate for tiny angles.
pub fn rotation_angle(q: &UnitQuaternion<f64>) -> f64 {
    let q = q.quaternion();
    2.0 * q.vector().norm().atan2(q.w.abs())
}

fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.quaternion().w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    position: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quaternion_wxyz: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    euler_zyx: Option<[f64; 3]>,
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let (psi, theta, phi) = self.euler_zyx();
        PoseRepr {
            position: [self.position.x, self.position.y, self.position.z],
            quaternion_wxyz: Some(self.wxyz()),
            euler_zyx: Some([psi, theta, phi]),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pose {
    /// Accepts either a scalar-first quaternion or ZYX Euler angles; the
    /// quaternion wins when both are present.
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(deserializer)?;
        let position = Vector3::from(repr.position);
        match (repr.quaternion_wxyz, repr.euler_zyx) {
            (Some(q), _) => Pose::from_wxyz(position, q).map_err(serde::de::Error::custom),
            (None, Some([psi, theta, phi])) => Ok(Pose::from_euler_zyx(position, psi, theta, phi)),
            (None, None) => Ok(Pose::new(position, UnitQuaternion::identity())),
        }
    }
}

/// Uniformly sampled fingertip trajectory in the hand-back frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    frames: Vec<FingertipFrame>,
    rate_hz: f64,
}

impl Trajectory {
    pub fn new(frames: Vec<FingertipFrame>, rate_hz: f64) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "a trajectory needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(Error::InvalidParameter(format!("sampling rate {rate_hz} Hz")));
        }
        for f in &frames {
            f.validate()?;
        }
        Ok(Trajectory { frames, rate_hz })
    }

    pub fn frames(&self) -> &[FingertipFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn last(&self) -> &FingertipFrame {
        self.frames.last().expect("trajectory is never empty")
    }

    /// Time stamp of frame `i`, starting at zero.
    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.rate_hz
    }

    pub fn flatten(&self) -> FlatVector {
        flatten_frames(&self.frames)
    }

    /// The series of one coordinate (`axis` in 0..3) of one finger.
    pub fn coordinate_series(&self, finger: Finger, axis: usize) -> Vec<f64> {
        self.frames.iter().map(|f| f.positions[finger.index()][axis]).collect()
    }
}

/// A trajectory stacked into one column of the dictionary's vector space.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatVector(DVector<f64>);

impl FlatVector {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.is_empty() || !values.len().is_multiple_of(COORDS_PER_FRAME) {
            return Err(Error::Shape(format!(
                "flat vector length {} is not a positive multiple of {COORDS_PER_FRAME}",
                values.len()
            )));
        }
        Ok(FlatVector(values))
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    pub fn frame_count(&self) -> usize {
        self.0.len() / COORDS_PER_FRAME
    }

    pub fn unflatten(&self, rate_hz: f64) -> Result<Trajectory> {
        let frames = self
            .0
            .as_slice()
            .chunks_exact(COORDS_PER_FRAME)
            .map(FingertipFrame::from_slice)
            .collect::<Result<Vec<_>>>()?;
        Trajectory::new(frames, rate_hz)
    }
}

pub fn flatten_frames(frames: &[FingertipFrame]) -> FlatVector {
    let mut values = Vec::with_capacity(frames.len() * COORDS_PER_FRAME);
    for f in frames {
        values.extend_from_slice(&f.coords());
    }
    FlatVector(DVector::from_vec(values))
}

/// Row of the flat layout holding `axis` of `finger` at instant `t`.
pub fn flat_index(t: usize, finger: Finger, axis: usize) -> usize {
    t * COORDS_PER_FRAME + 3 * finger.index() + axis
}

/// Odd window actually applied for a requested median window.
pub fn effective_window(window: usize) -> usize {
    if window.is_multiple_of(2) {
        window + 1
    } else {
        window
    }
}

/// Centered running median. Even windows are widened by one sample; near the
/// ends the window shrinks symmetrically so it stays centered.
pub fn median_filter(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window < 1 {
        return Err(Error::InvalidParameter("median window must be at least 1".into()));
    }
    if series.is_empty() {
        return Err(Error::InvalidInput("cannot filter an empty series".into()));
    }
    if let Some(i) = series.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite sample at index {i}")));
    }
    let half = effective_window(window) / 2;
    let n = series.len();
    let mut buf = Vec::with_capacity(2 * half + 1);
    let out = (0..n)
        .map(|i| {
            let k = half.min(i).min(n - 1 - i);
            buf.clear();
            buf.extend_from_slice(&series[i - k..=i + k]);
            buf.sort_unstable_by(f64::total_cmp);
            buf[k]
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(seed: f64) -> FingertipFrame {
        FingertipFrame::new(std::array::from_fn(|j| {
            let j = j as f64;
            Vector3::new(0.01 * j + seed, -0.02 * j + 0.5 * seed, 0.003 * j * j - seed)
        }))
        .unwrap()
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            prop::array::uniform3(-1.0..1.0f64),
            prop::array::uniform3(-3.2..3.2f64),
        )
            .prop_map(|(p, [a, b, c])| Pose::from_euler_zyx(Vector3::from(p), a, b, c))
    }

    fn arb_frame() -> impl Strategy<Value = FingertipFrame> {
        prop::array::uniform5(prop::array::uniform3(-0.2..0.2f64))
            .prop_map(|rows| FingertipFrame::new(rows.map(Vector3::from)).unwrap())
    }

    #[test]
    fn identity_hand_pose_leaves_frame_unchanged() {
        let f = frame(0.3);
        assert_eq!(f.to_hand_frame(&Pose::identity()).unwrap(), f);
    }

    #[test]
    fn pure_translation_moves_origin() {
        let hand = Pose::new(Vector3::new(0.1, 0.0, 0.0), UnitQuaternion::identity());
        let mut positions = frame(0.0).positions;
        positions[0] = Vector3::new(0.1, 0.0, 0.0);
        let f = FingertipFrame::new(positions).unwrap();
        assert_eq!(f.to_hand_frame(&hand).unwrap().positions[0], Vector3::zeros());
    }

    #[test]
    fn non_finite_frame_is_rejected() {
        let mut positions = frame(0.0).positions;
        positions[2].y = f64::NAN;
        assert!(matches!(FingertipFrame::new(positions), Err(Error::InvalidInput(_))));
        let f = FingertipFrame { positions };
        assert!(f.to_hand_frame(&Pose::identity()).is_err());
    }

    #[test]
    fn pose_canonicalizes_quaternion_sign() {
        let p = Pose::from_wxyz(Vector3::zeros(), [-0.5, 0.5, 0.5, 0.5]).unwrap();
        assert!(p.wxyz()[0] >= 0.0);
        assert!((p.orientation().quaternion().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pose_json_accepts_euler_or_quaternion() {
        let p = Pose::from_euler_zyx(Vector3::new(0.0, 0.0, 0.02), 0.3, -0.2, 0.1);
        let json = serde_json::to_string(&p).unwrap();
        let back: Pose = serde_json::from_str(&json).unwrap();
        assert!(p.angle_to(&back) < 1e-12);
        let euler_only: Pose =
            serde_json::from_str(r#"{"position":[0,0,0.02],"euler_zyx":[0.3,-0.2,0.1]}"#).unwrap();
        assert!(p.angle_to(&euler_only) < 1e-12);
        let (psi, theta, phi) = euler_only.euler_zyx();
        assert!((psi - 0.3).abs() < 1e-12 && (theta + 0.2).abs() < 1e-12 && (phi - 0.1).abs() < 1e-12);
    }

    #[test]
    fn median_filter_examples() {
        assert_eq!(median_filter(&[2.5; 9], 5).unwrap(), vec![2.5; 9]);
        assert_eq!(
            median_filter(&[1.0, 100.0, 1.0, 1.0, 1.0], 3).unwrap(),
            vec![1.0; 5]
        );
        assert!(median_filter(&[1.0, f64::NAN, 2.0], 3).is_err());
        assert!(matches!(median_filter(&[1.0], 0), Err(Error::InvalidParameter(_))));
        assert_eq!(effective_window(50), 51);
        assert_eq!(effective_window(51), 51);
    }

    #[test]
    fn median_filter_even_window_is_widened() {
        // A window of 2 behaves as 3: the isolated spike disappears.
        let out = median_filter(&[0.0, 0.0, 9.0, 0.0, 0.0], 2).unwrap();
        assert_eq!(out, vec![0.0; 5]);
    }

    #[test]
    fn flatten_shapes() {
        assert_eq!(flatten_frames(&[frame(0.1)]).values().len(), 15);
        let traj = Trajectory::new((0..100).map(|i| frame(i as f64 * 1e-3)).collect(), 100.0).unwrap();
        let flat = traj.flatten();
        assert_eq!(flat.values().len(), 1500);
        assert_eq!(flat.values()[flat_index(3, Finger::Middle, 2)], traj.frames()[3].positions[2].z);
        assert!(matches!(
            FlatVector::new(DVector::zeros(16)),
            Err(Error::Shape(_))
        ));
    }

    proptest! {
        #[test]
        fn hand_frame_round_trip(pose in arb_pose(), f in arb_frame()) {
            let back = f.to_hand_frame(&pose).unwrap().to_world_frame(&pose).unwrap();
            for (a, b) in f.positions.iter().zip(back.positions.iter()) {
                prop_assert!((a - b).amax() <= 1e-12);
            }
        }

        #[test]
        fn hand_frame_is_isometry(pose in arb_pose(), f in arb_frame()) {
            let g = f.to_hand_frame(&pose).unwrap();
            for i in 0..FINGERS {
                for j in i + 1..FINGERS {
                    let d0 = (f.positions[i] - f.positions[j]).norm();
                    let d1 = (g.positions[i] - g.positions[j]).norm();
                    prop_assert!((d0 - d1).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn flatten_round_trip_is_exact(frames in prop::collection::vec(arb_frame(), 2..20)) {
            let traj = Trajectory::new(frames, 100.0).unwrap();
            prop_assert_eq!(traj.flatten().unflatten(100.0).unwrap(), traj);
        }

        #[test]
        fn median_filter_stays_in_range(series in prop::collection::vec(-5.0..5.0f64, 1..200), w in 1usize..60) {
            let out = median_filter(&series, w).unwrap();
            prop_assert_eq!(out.len(), series.len());
            let lo = series.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(out.iter().all(|v| *v >= lo && *v <= hi));
        }

        #[test]
        fn median_filter_fixes_monotone_series(mut series in prop::collection::vec(-5.0..5.0f64, 1..200), w in 1usize..60) {
            series.sort_by(f64::total_cmp);
            prop_assert_eq!(median_filter(&series, w).unwrap(), series);
        }
    }
}
