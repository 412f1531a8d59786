//! Object pose from four fingertip contacts.
//!
//! With the contacts `(Xᵢ, Yᵢ, Zᵢ)` of four fingers fixed in the object frame,
//! the affine map sending them to the observed fingertips solves
//! `A [a d g t_x]ᵀ = x` (and likewise for y, z) where `A` has rows
//! `[Xᵢ Yᵢ Zᵢ 1]`. Because generated fingertips are linear in the weight
//! vector, so are the fitted parameters.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Rotation3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::frame::{Finger, Pose};

/// Largest accepted condition number of `A`.
pub const MAX_CONDITION: f64 = 1e8;
/// Fingers used by default to build `A`.
pub const DEFAULT_TEMPLATE_FINGERS: [Finger; 4] = [Finger::Thumb, Finger::Index, Finger::Middle, Finger::Ring];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TemplateRepr", into = "TemplateRepr")]
pub struct ContactTemplate {
    fingers: [Finger; 4],
    points: [Vector3<f64>; 4],
    a: Matrix4<f64>,
    a_inv: Matrix4<f64>,
    condition: f64,
}

#[derive(Serialize, Deserialize)]
struct TemplateRepr {
    fingers: [Finger; 4],
    points: [[f64; 3]; 4],
}

impl TryFrom<TemplateRepr> for ContactTemplate {
    type Error = Error;
    fn try_from(r: TemplateRepr) -> Result<Self> {
        ContactTemplate::new(r.fingers, r.points.map(Vector3::from))
    }
}

impl From<ContactTemplate> for TemplateRepr {
    fn from(t: ContactTemplate) -> Self {
        TemplateRepr {
            fingers: t.fingers,
            points: t.points.map(|p| [p.x, p.y, p.z]),
        }
    }
}

impl ContactTemplate {
    pub fn new(fingers: [Finger; 4], points: [Vector3<f64>; 4]) -> Result<Self> {
        for i in 0..4 {
            if fingers[i + 1..].contains(&fingers[i]) {
                return Err(Error::InvalidParameter(format!(
                    "template lists {:?} twice",
                    fingers[i]
                )));
            }
        }
        if !points.iter().all(|p| p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidInput("template points must be finite".into()));
        }
        let (a, a_inv, condition) = build_a(&points)?;
        Ok(ContactTemplate {
            fingers,
            points,
            a,
            a_inv,
            condition,
        })
    }

    /// Template over `fingers` taking their points from a five-finger contact
    /// list ordered thumb to little.
    pub fn from_contacts(contacts: &[[f64; 3]; 5], fingers: [Finger; 4]) -> Result<Self> {
        ContactTemplate::new(fingers, fingers.map(|f| Vector3::from(contacts[f.index()])))
    }

    pub fn fingers(&self) -> &[Finger; 4] {
        &self.fingers
    }

    pub fn points(&self) -> &[Vector3<f64>; 4] {
        &self.points
    }

    pub fn a(&self) -> &Matrix4<f64> {
        &self.a
    }

    pub fn a_inv(&self) -> &Matrix4<f64> {
        &self.a_inv
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }
}

/// `A` with rows `[Xᵢ Yᵢ Zᵢ 1]`, its inverse and its 2-norm condition number.
pub fn build_a(points: &[Vector3<f64>; 4]) -> Result<(Matrix4<f64>, Matrix4<f64>, f64)> {
    let edges = Matrix3::from_columns(&[points[1] - points[0], points[2] - points[0], points[3] - points[0]]);
    let scale = edges.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    if scale == 0.0 || (edges / scale).determinant().abs() <= 1e-9 {
        return Err(Error::Degenerate("template points are coplanar".into()));
    }
    let a = Matrix4::from_fn(|r, c| if c == 3 { 1.0 } else { points[r][c] });
    let sv = a.singular_values();
    let condition = sv.max() / sv.min();
    if condition.is_nan() || condition > MAX_CONDITION {
        return Err(Error::Degenerate(format!(
            "template matrix condition number {condition:e} exceeds {MAX_CONDITION:e}"
        )));
    }
    let a_inv = a
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("template matrix is singular".into()))?;
    Ok((a, a_inv, condition))
}

/// Affine map `x = a X + d Y + g Z + t_x` (and y, z rows), stored as
/// `(a, d, g, t_x, b, e, h_aff, t_y, c, f, m, t_z)`: the row-major 3×4 matrix
/// `[M | t]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams(pub [f64; 12]);

impl AffineParams {
    pub fn identity() -> Self {
        AffineParams::from_parts(&Matrix3::identity(), &Vector3::zeros())
    }

    pub fn from_parts(m: &Matrix3<f64>, t: &Vector3<f64>) -> Self {
        let mut p = [0.0; 12];
        for r in 0..3 {
            p[4 * r..4 * r + 3].copy_from_slice(&[m[(r, 0)], m[(r, 1)], m[(r, 2)]]);
            p[4 * r + 3] = t[r];
        }
        AffineParams(p)
    }

    pub fn from_vector(v: &DVector<f64>) -> Result<Self> {
        if v.len() != 12 {
            return Err(Error::Shape(format!("affine parameters have 12 entries, got {}", v.len())));
        }
        Ok(AffineParams(std::array::from_fn(|i| v[i])))
    }

    pub fn linear(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.0[4 * r + c])
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.0[3], self.0[7], self.0[11])
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.linear() * p + self.translation()
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }
}

/// Affine parameters interpolating the template points onto `world` (one point
/// per template finger, in template order).
pub fn fit_affine(template: &ContactTemplate, world: &[Vector3<f64>; 4]) -> AffineParams {
    let mut p = [0.0; 12];
    for axis in 0..3 {
        let rhs = Vector4::from_fn(|i, _| world[i][axis]);
        let row = template.a_inv * rhs;
        p[4 * axis..4 * axis + 4].copy_from_slice(row.as_slice());
    }
    AffineParams(p)
}

/// Affine parameters of the final frame as an affine function `L h + c` of the
/// weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseMap {
    pub linear: DMatrix<f64>,
    pub constant: DVector<f64>,
}

impl PoseMap {
    pub fn apply(&self, h: &DVector<f64>) -> Result<AffineParams> {
        if h.len() != self.linear.ncols() {
            return Err(Error::Shape(format!(
                "weight vector has {} entries, pose map expects {}",
                h.len(),
                self.linear.ncols()
            )));
        }
        AffineParams::from_vector(&(&self.linear * h + &self.constant))
    }
}

pub fn pose_map(dict: &Dictionary, template: &ContactTemplate) -> PoseMap {
    let base = dict.frame_row(dict.frames() - 1);
    let i = dict.primitives();
    let mut linear = DMatrix::zeros(12, i);
    let mut constant = DVector::zeros(12);
    for axis in 0..3 {
        let rows: Vec<usize> = template.fingers.iter().map(|f| base + 3 * f.index() + axis).collect();
        let w_rows = dict.w().select_rows(&rows);
        let offsets = DVector::from_iterator(4, rows.iter().map(|&r| dict.offset()[r]));
        let a_inv = DMatrix::from_column_slice(4, 4, template.a_inv.as_slice());
        linear.rows_mut(4 * axis, 4).copy_from(&(&a_inv * w_rows));
        constant.rows_mut(4 * axis, 4).copy_from(&(-(&a_inv * offsets)));
    }
    PoseMap { linear, constant }
}

/// Rigid pose nearest to the affine parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractedPose {
    pub pose: Pose,
    /// `‖M - R‖_F` between the fitted 3×3 block and its rotation.
    pub orthogonality_residual: f64,
}

/// Projects the 3×3 block onto the rotations by polar decomposition
/// (`R = U diag(1, 1, det(U Vᵀ)) Vᵀ`); the translation passes through.
pub fn extract_pose(p: &AffineParams) -> Result<ExtractedPose> {
    if !p.0.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidInput("affine parameters must be finite".into()));
    }
    let m = p.linear();
    let svd = m.svd(true, true);
    let sv = svd.singular_values;
    if sv.min() <= 1e-12 * sv.max().max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate(format!(
            "affine block has rank below 3 (singular values {:?})",
            sv.as_slice()
        )));
    }
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    let sign = (u * v_t).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign)) * v_t;
    let rotation = Rotation3::from_matrix_unchecked(r);
    Ok(ExtractedPose {
        pose: Pose::from_rotation(p.translation(), &rotation),
        orthogonality_residual: (m - r).norm(),
    })
}

/// The parameters `T_f` of a desired rigid object pose.
pub fn pose_target(desired: &Pose) -> AffineParams {
    AffineParams::from_parts(desired.rotation().matrix(), &desired.position)
}

/// Translation and rotation distance between two poses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    /// Meters.
    pub translation: f64,
    /// Geodesic angle, radians.
    pub rotation: f64,
}

pub fn pose_error(a: &Pose, b: &Pose) -> PoseError {
    PoseError {
        translation: (a.position - b.position).norm(),
        rotation: a.angle_to(b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn simplex() -> ContactTemplate {
        let s = 0.05;
        ContactTemplate::new(
            DEFAULT_TEMPLATE_FINGERS,
            [
                Vector3::zeros(),
                Vector3::new(s, 0.0, 0.0),
                Vector3::new(0.0, s, 0.0),
                Vector3::new(0.0, 0.0, s),
            ],
        )
        .unwrap()
    }

    fn arb_rigid() -> impl Strategy<Value = Pose> {
        (prop::array::uniform3(-0.2..0.2f64), prop::array::uniform3(-3.2..3.2f64))
            .prop_map(|(t, [a, b, c])| Pose::from_euler_zyx(Vector3::from(t), a, b, c))
    }

    fn arb_template() -> impl Strategy<Value = ContactTemplate> {
        prop::array::uniform4(prop::array::uniform3(-0.03..0.03f64))
            .prop_filter_map("degenerate", |pts| {
                ContactTemplate::new(DEFAULT_TEMPLATE_FINGERS, pts.map(Vector3::from)).ok()
            })
    }

    fn random_dictionary(seed: u64) -> Dictionary {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = DMatrix::from_fn(45, 7, |_, _| rng.random_range(0.0..0.1));
        let offset = DVector::from_fn(45, |_, _| rng.random_range(0.0..0.05));
        Dictionary::new(w, offset, 100.0, "t", seed).unwrap()
    }

    fn final_points(dict: &Dictionary, template: &ContactTemplate, h: &DVector<f64>) -> [Vector3<f64>; 4] {
        let traj = dict.generate(h).unwrap();
        template.fingers().map(|f| *traj.last().get(f))
    }

    #[test]
    fn canonical_simplex() {
        let t = simplex();
        let unit: [Vector3<f64>; 4] = [Vector3::zeros(), Vector3::x(), Vector3::y(), Vector3::z()];
        let edges = Matrix3::from_columns(&[unit[1], unit[2], unit[3]]);
        assert_eq!(edges.determinant(), 1.0);
        assert!((t.a() * t.a_inv() - Matrix4::identity()).amax() <= 1e-10);
    }

    #[test]
    fn coplanar_points_are_degenerate() {
        let pts = [
            Vector3::zeros(),
            Vector3::new(0.05, 0.0, 0.0),
            Vector3::new(0.0, 0.05, 0.0),
            Vector3::new(0.05, 0.05, 0.0),
        ];
        assert!(matches!(ContactTemplate::new(DEFAULT_TEMPLATE_FINGERS, pts), Err(Error::Degenerate(_))));
        let dup = [Finger::Thumb, Finger::Thumb, Finger::Middle, Finger::Ring];
        assert!(ContactTemplate::new(dup, simplex().points).is_err());
    }

    #[test]
    fn fit_affine_examples() {
        let t = simplex();
        let p = fit_affine(&t, t.points());
        assert!((p.linear() - Matrix3::identity()).amax() <= 1e-12);
        assert!(p.translation().amax() <= 1e-12);
        let moved = t.points().map(|q| q + Vector3::new(0.01, 0.0, 0.0));
        let p = fit_affine(&t, &moved);
        assert!((p.translation() - Vector3::new(0.01, 0.0, 0.0)).amax() <= 1e-12);
        assert!((p.linear() - Matrix3::identity()).amax() <= 1e-12);
    }

    #[test]
    fn extract_pose_examples() {
        let e = extract_pose(&AffineParams::identity()).unwrap();
        assert_eq!(e.orthogonality_residual, 0.0);
        assert!(e.pose.angle_to(&Pose::identity()) == 0.0);
        let scaled = AffineParams::from_parts(&(Matrix3::identity() * 2.0), &Vector3::zeros());
        let e = extract_pose(&scaled).unwrap();
        assert!((e.orthogonality_residual - 3f64.sqrt()).abs() < 1e-12);
        assert!(e.pose.angle_to(&Pose::identity()) < 1e-12);
        let flat = AffineParams::from_parts(&Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)), &Vector3::zeros());
        assert!(matches!(extract_pose(&flat), Err(Error::Degenerate(_))));
    }

    #[test]
    fn pose_target_examples() {
        assert_eq!(pose_target(&Pose::identity()), AffineParams::identity());
        let lifted = Pose::new(Vector3::new(0.0, 0.0, 0.02), UnitQuaternion::identity());
        assert_eq!(pose_target(&lifted).0[11], 0.02);
    }

    #[test]
    fn pose_map_constant_part_is_the_offset_frame() {
        let dict = random_dictionary(1);
        let t = simplex();
        let map = pose_map(&dict, &t);
        let zero = DVector::zeros(7);
        let direct = fit_affine(&t, &final_points(&dict, &t, &zero));
        assert!((map.apply(&zero).unwrap().to_vector() - direct.to_vector()).amax() <= 1e-10);
        assert!(map.apply(&DVector::zeros(3)).is_err());
    }

    proptest! {
        #[test]
        fn random_template_inverse(t in arb_template()) {
            prop_assert!((t.a() * t.a_inv() - Matrix4::identity()).amax() <= 1e-10);
        }

        #[test]
        fn fit_is_exact_on_its_points(t in arb_template(), raw in prop::array::uniform12(-1.0..1.0f64)) {
            let params = AffineParams(raw);
            let world = t.points().map(|p| params.apply(&p));
            let fitted = fit_affine(&t, &world);
            for (p, w) in t.points().iter().zip(&world) {
                prop_assert!((fitted.apply(p) - w).amax() <= 1e-10);
            }
        }

        #[test]
        fn rigid_round_trip(t in arb_template(), pose in arb_rigid()) {
            let world = t.points().map(|p| pose.transform_point(&p));
            let e = extract_pose(&fit_affine(&t, &world)).unwrap();
            prop_assert!(e.pose.angle_to(&pose) <= 1e-9);
            prop_assert!((e.pose.position - pose.position).amax() <= 1e-9);
            prop_assert!(e.orthogonality_residual <= 1e-9);
        }

        #[test]
        fn target_round_trip(pose in arb_rigid()) {
            let e = extract_pose(&pose_target(&pose)).unwrap();
            prop_assert!(e.pose.angle_to(&pose) <= 1e-12);
            prop_assert!((e.pose.position - pose.position).amax() <= 1e-12);
        }

        #[test]
        fn rotation_ignores_positive_scale(pose in arb_rigid(), s in 0.1..10.0f64) {
            let p = pose_target(&pose);
            let scaled = AffineParams::from_parts(&(p.linear() * s), &p.translation());
            let e = extract_pose(&scaled).unwrap();
            prop_assert!(e.pose.angle_to(&pose) <= 1e-9);
            prop_assert!((e.pose.rotation().matrix().determinant() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn pose_map_matches_generate_then_fit(seed in 0u64..500, t in arb_template()) {
            let dict = random_dictionary(seed);
            let map = pose_map(&dict, &t);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let h = DVector::from_fn(7, |_, _| rng.random_range(-2.0..2.0));
            let h2 = DVector::from_fn(7, |_, _| rng.random_range(-2.0..2.0));
            let one_shot = map.apply(&h).unwrap().to_vector();
            let two_step = fit_affine(&t, &final_points(&dict, &t, &h)).to_vector();
            prop_assert!((&one_shot - two_step).amax() <= 1e-9);
            let sum = map.apply(&(&h + &h2)).unwrap().to_vector();
            let parts = one_shot + map.apply(&h2).unwrap().to_vector() - &map.constant;
            prop_assert!((sum - parts).amax() <= 1e-12 * (1.0 + map.linear.amax()));
        }
    }
}
