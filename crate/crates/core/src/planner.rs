//! Trajectory planning over primitive weights.
//!
//! The cost is the squared distance between the generated final fingertips and
//! their targets, optionally plus `α` times the squared distance between the
//! final affine object parameters and those of a desired pose. Forward
//! differences of every fingertip coordinate are bounded, which keeps the
//! problem a convex QP in `h`.

pub mod qp;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::frame::{FingertipFrame, Pose, Trajectory, COORDS_PER_FRAME, FINGERS};
use crate::pose::{extract_pose, pose_map, pose_target, ContactTemplate, PoseError};

pub use qp::{solve_qp, KktResiduals, QpProblem, QpSolution, RowOrigin, SolveOptions, SolveStatus};

/// Default speed limit per fingertip axis, m/s.
pub const DEFAULT_SPEED_LIMIT: f64 = 1.0;

/// Per-finger, per-axis velocity bounds in m/s. Infinite entries are
/// unbounded and serialize as `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityBounds {
    #[serde(with = "bounds_serde::lower")]
    pub lower: [[f64; 3]; FINGERS],
    #[serde(with = "bounds_serde::upper")]
    pub upper: [[f64; 3]; FINGERS],
}

impl VelocityBounds {
    /// `±limit` on every axis.
    pub fn symmetric(limit: f64) -> Self {
        VelocityBounds {
            lower: [[-limit; 3]; FINGERS],
            upper: [[limit; 3]; FINGERS],
        }
    }

    pub fn unbounded() -> Self {
        VelocityBounds::symmetric(f64::INFINITY)
    }
}

impl Default for VelocityBounds {
    fn default() -> Self {
        VelocityBounds::symmetric(DEFAULT_SPEED_LIMIT)
    }
}

mod bounds_serde {
    use super::*;

    pub fn serialize<S: Serializer>(b: &[[f64; 3]; FINGERS], s: S) -> std::result::Result<S::Ok, S::Error> {
        b.map(|row| row.map(|v| v.is_finite().then_some(v))).serialize(s)
    }

    fn deserialize_with<'de, D: Deserializer<'de>>(d: D, missing: f64) -> std::result::Result<[[f64; 3]; FINGERS], D::Error> {
        let raw = <[[Option<f64>; 3]; FINGERS]>::deserialize(d)?;
        Ok(raw.map(|row| row.map(|v| v.unwrap_or(missing))))
    }

    pub mod lower {
        pub use super::serialize;
        pub fn deserialize<'de, D: super::Deserializer<'de>>(d: D) -> Result<[[f64; 3]; super::FINGERS], D::Error> {
            super::deserialize_with(d, f64::NEG_INFINITY)
        }
    }

    pub mod upper {
        pub use super::serialize;
        pub fn deserialize<'de, D: super::Deserializer<'de>>(d: D) -> Result<[[f64; 3]; super::FINGERS], D::Error> {
            super::deserialize_with(d, f64::INFINITY)
        }
    }
}

/// Desired final object pose with the contacts used to fit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectGoal {
    pub pose: Pose,
    pub template: ContactTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    /// Desired fingertips at the last instant, hand-back frame.
    pub target: FingertipFrame,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<ObjectGoal>,
    /// Weight of the object-pose cost.
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub velocity: VelocityBounds,
    /// Restrict weights to be nonnegative.
    #[serde(default)]
    pub nonneg_weights: bool,
}

impl PlanRequest {
    pub fn new(target: FingertipFrame) -> Self {
        PlanRequest {
            target,
            object: None,
            alpha: 0.0,
            velocity: VelocityBounds::default(),
            nonneg_weights: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.target.validate()?;
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!("alpha {} must be finite and >= 0", self.alpha)));
        }
        if self.alpha > 0.0 && self.object.is_none() {
            return Err(Error::Config(
                "alpha > 0 needs an object goal with a contact template".into(),
            ));
        }
        let VelocityBounds { lower, upper } = &self.velocity;
        let bad_lower = lower.iter().flatten().any(|v| v.is_nan() || *v == f64::INFINITY);
        let bad_upper = upper.iter().flatten().any(|v| v.is_nan() || *v == f64::NEG_INFINITY);
        if bad_lower || bad_upper {
            return Err(Error::InvalidParameter(
                "velocity bounds must be numbers, lower < +inf and upper > -inf".into(),
            ));
        }
        Ok(())
    }
}

/// Builds `½ hᵀQh + qᵀh + c` equal to the cost `J` at every `h`, with
/// `Q = 2(W_NᵀW_N + α LᵀL)` and `q = -2(W_Nᵀ(f̂ + offset_N) + α Lᵀ(T_f - c))`.
pub fn build_qp(dict: &Dictionary, req: &PlanRequest) -> Result<QpProblem> {
    req.validate()?;
    let i = dict.primitives();
    let n = dict.frames();
    let last = dict.frame_row(n - 1);
    let w_n = dict.w().rows(last, COORDS_PER_FRAME);
    let b = DVector::from_column_slice(&req.target.coords()) + dict.offset().rows(last, COORDS_PER_FRAME);

    let mut hessian = w_n.tr_mul(&w_n) * 2.0;
    let mut linear = w_n.tr_mul(&b) * -2.0;
    let mut constant = b.norm_squared();
    if req.alpha > 0.0 {
        let goal = req.object.as_ref().expect("validated");
        let map = pose_map(dict, &goal.template);
        let b2 = pose_target(&goal.pose).to_vector() - &map.constant;
        hessian += map.linear.tr_mul(&map.linear) * (2.0 * req.alpha);
        linear -= map.linear.tr_mul(&b2) * (2.0 * req.alpha);
        constant += req.alpha * b2.norm_squared();
    }
    symmetrize(&mut hessian);

    let VelocityBounds { lower, upper } = req.velocity;
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    let mut origins = Vec::new();
    let rate = dict.rate_hz();
    for t in 0..n - 1 {
        for finger in 0..FINGERS {
            for axis in 0..3 {
                let (l, u) = (lower[finger][axis], upper[finger][axis]);
                if l.is_infinite() && u.is_infinite() {
                    continue;
                }
                let r0 = dict.frame_row(t) + 3 * finger + axis;
                let r1 = r0 + COORDS_PER_FRAME;
                let row = (dict.w().row(r1) - dict.w().row(r0)).transpose() * rate;
                // Velocity of the generated trajectory is row·h − drift.
                let drift = rate * (dict.offset()[r1] - dict.offset()[r0]);
                rows.push(row);
                lo.push(l + drift);
                hi.push(u + drift);
                origins.push(RowOrigin::Velocity { t, finger, axis });
            }
        }
    }
    if req.nonneg_weights {
        for index in 0..i {
            rows.push(DVector::from_fn(i, |k, _| if k == index { 1.0 } else { 0.0 }));
            lo.push(0.0);
            hi.push(f64::INFINITY);
            origins.push(RowOrigin::Nonnegative { index });
        }
    }
    let g = if rows.is_empty() {
        DMatrix::zeros(0, i)
    } else {
        DMatrix::from_columns(&rows).transpose()
    };
    Ok(QpProblem {
        hessian,
        linear,
        constant,
        g,
        lo: DVector::from_vec(lo),
        hi: DVector::from_vec(hi),
        origins,
    })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..r {
            let v = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub solution: QpSolution,
    pub trajectory: Trajectory,
    /// Distance of each generated final fingertip from its target, meters.
    pub final_error: [f64; FINGERS],
    /// Final object pose implied by the fitted template, when one is given.
    pub object_pose: Option<Pose>,
    pub object_error: Option<PoseError>,
}

impl PlanResult {
    pub fn status(&self) -> SolveStatus {
        self.solution.status
    }

    pub fn summary(&self) -> PlanSummary {
        PlanSummary {
            status: self.solution.status,
            objective: self.solution.objective,
            iterations: self.solution.iterations,
            kkt: self.solution.kkt,
            regularization: self.solution.regularization,
            active_constraints: self.solution.active,
            final_error: self.final_error,
            object_pose: self.object_pose,
            object_error: self.object_error,
            h: self.solution.h.iter().copied().collect(),
        }
    }
}

/// Serializable view of a [`PlanResult`]; the trajectory is written separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub status: SolveStatus,
    pub objective: f64,
    pub iterations: usize,
    pub kkt: KktResiduals,
    pub regularization: f64,
    pub active_constraints: usize,
    pub final_error: [f64; FINGERS],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_pose: Option<Pose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_error: Option<PoseError>,
    pub h: Vec<f64>,
}

pub fn plan(dict: &Dictionary, req: &PlanRequest, opts: &SolveOptions) -> Result<PlanResult> {
    let problem = build_qp(dict, req)?;
    let solution = solve_qp(&problem, opts)?;
    let trajectory = dict.generate(&solution.h)?;
    let last = trajectory.last();
    let final_error = std::array::from_fn(|j| (last.positions[j] - req.target.positions[j]).norm());
    let (object_pose, object_error) = match &req.object {
        Some(goal) => {
            let params = pose_map(dict, &goal.template).apply(&solution.h)?;
            match extract_pose(&params) {
                Ok(e) => (Some(e.pose), Some(crate::pose::pose_error(&e.pose, &goal.pose))),
                Err(err) => {
                    log::warn!("final object pose is undefined: {err}");
                    (None, None)
                }
            }
        }
        None => (None, None),
    };
    Ok(PlanResult {
        solution,
        trajectory,
        final_error,
        object_pose,
        object_error,
    })
}

/// Largest amount by which forward-difference velocities of `traj` leave the
/// bounds, m/s. Computed from positions alone.
pub fn velocity_violation(traj: &Trajectory, bounds: &VelocityBounds) -> f64 {
    let rate = traj.rate_hz();
    let mut worst: f64 = 0.0;
    for pair in traj.frames().windows(2) {
        for j in 0..FINGERS {
            let v: Vector3<f64> = (pair[1].positions[j] - pair[0].positions[j]) * rate;
            for axis in 0..3 {
                worst = worst
                    .max(bounds.lower[j][axis] - v[axis])
                    .max(v[axis] - bounds.upper[j][axis]);
            }
        }
    }
    worst
}
