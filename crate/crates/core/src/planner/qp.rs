//! Convex quadratic programs with two-sided linear inequalities,
//!
//! ```text
//! minimize  ½ hᵀ Q h + qᵀ h + constant
//! subject   lo ≤ G h ≤ hi
//! ```
//!
//! solved by the dual active-set method of Goldfarb and Idnani. The method
//! starts from the unconstrained minimizer and adds the most violated
//! constraint at each step, so every iterate is optimal for the constraints
//! currently active. It needs `Q` positive definite; a positive semidefinite
//! `Q` is regularized first.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a constraint row comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowOrigin {
    /// Forward-difference velocity of `axis` of finger `finger` between
    /// instants `t` and `t + 1`.
    Velocity { t: usize, finger: usize, axis: usize },
    /// Sign constraint on one weight.
    Nonnegative { index: usize },
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
    pub g: DMatrix<f64>,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
    pub origins: Vec<RowOrigin>,
}

impl QpProblem {
    pub fn unconstrained(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let n = linear.len();
        QpProblem {
            hessian,
            linear,
            constant: 0.0,
            g: DMatrix::zeros(0, n),
            lo: DVector::zeros(0),
            hi: DVector::zeros(0),
            origins: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn rows(&self) -> usize {
        self.g.nrows()
    }

    /// Number of finite one-sided bounds.
    pub fn one_sided_bounds(&self) -> usize {
        self.lo.iter().chain(self.hi.iter()).filter(|b| b.is_finite()).count()
    }

    pub fn objective(&self, h: &DVector<f64>) -> f64 {
        0.5 * h.dot(&(&self.hessian * h)) + self.linear.dot(h) + self.constant
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 {
            return Err(Error::Shape("problem has no variables".into()));
        }
        if self.hessian.shape() != (n, n) {
            return Err(Error::Shape(format!("Hessian is {:?}, expected {n}x{n}", self.hessian.shape())));
        }
        let m = self.g.nrows();
        if self.g.ncols() != n || self.lo.len() != m || self.hi.len() != m || self.origins.len() != m {
            return Err(Error::Shape("constraint block dimensions disagree".into()));
        }
        let finite = self.hessian.iter().chain(self.linear.iter()).chain(self.g.iter()).all(|x| x.is_finite());
        if !finite || !self.constant.is_finite() {
            return Err(Error::InvalidInput("problem data must be finite".into()));
        }
        if self.lo.iter().any(|x| x.is_nan() || *x == f64::INFINITY)
            || self.hi.iter().any(|x| x.is_nan() || *x == f64::NEG_INFINITY)
        {
            return Err(Error::InvalidInput("bounds must be numbers, lower < +inf and upper > -inf".into()));
        }
        let asym = (&self.hessian - self.hessian.transpose()).amax();
        if asym > 1e-12 * self.hessian.amax().max(1.0) {
            return Err(Error::InvalidInput(format!("Hessian is not symmetric (gap {asym:e})")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `‖Q h + q + Gᵀλ‖∞ / (1 + ‖q‖∞)` with the Hessian actually solved.
    pub stationarity: f64,
    /// Largest bound violation of `G h`.
    pub primal: f64,
    /// Largest product of a multiplier and its constraint slack.
    pub complementarity: f64,
    /// Most negative one-sided multiplier, as a positive number.
    pub dual: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity).max(self.dual)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub h: DVector<f64>,
    pub status: SolveStatus,
    /// Objective of the unregularized problem at `h`.
    pub objective: f64,
    /// Row multipliers, `λ = ν - μ` for the upper (`ν`) and lower (`μ`) sides.
    pub multipliers: DVector<f64>,
    pub kkt: KktResiduals,
    pub iterations: usize,
    /// Multiple of the identity added to the Hessian, zero if none.
    pub regularization: f64,
    pub active: usize,
}

/// One-sided constraint `sign · g_row · h ≥ bound`.
#[derive(Debug, Clone, Copy)]
struct Side {
    row: usize,
    sign: f64,
    bound: f64,
}

/// Adds `1e-10 · trace · I` when the smallest eigenvalue is below that level.
pub fn regularization_for(hessian: &DMatrix<f64>) -> f64 {
    let trace = hessian.trace();
    let level = 1e-10 * trace.abs().max(f64::MIN_POSITIVE);
    let min_eig = SymmetricEigen::new(hessian.clone()).eigenvalues.min();
    if min_eig < level {
        level
    } else {
        0.0
    }
}

pub fn solve_qp(p: &QpProblem, opts: &SolveOptions) -> Result<QpSolution> {
    p.validate()?;
    if !(opts.tol.is_finite() && opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::InvalidParameter("solver needs tol > 0 and max_iter >= 1".into()));
    }
    let n = p.dim();
    let reg = regularization_for(&p.hessian);
    let mut hess = p.hessian.clone();
    for i in 0..n {
        hess[(i, i)] += reg;
    }

    if let Some(r) = (0..p.rows()).find(|&r| p.lo[r] > p.hi[r]) {
        log::debug!("row {r}: lower bound {} exceeds upper bound {}", p.lo[r], p.hi[r]);
        return Ok(finish(p, &hess, reg, DVector::zeros(n), &[], &[], SolveStatus::Infeasible, 0, opts));
    }

    let sides: Vec<Side> = (0..p.rows())
        .flat_map(|r| {
            let lower = p.lo[r].is_finite().then_some(Side { row: r, sign: 1.0, bound: p.lo[r] });
            let upper = p.hi[r].is_finite().then_some(Side { row: r, sign: -1.0, bound: -p.hi[r] });
            lower.into_iter().chain(upper)
        })
        .collect();

    let chol = Cholesky::new(hess.clone())
        .ok_or_else(|| Error::Degenerate("Hessian is not positive definite after regularization".into()))?;
    let mut solver = DualActiveSet::new(&chol, n);
    let mut x = -chol.solve(&p.linear);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let row_norms: Vec<f64> = (0..p.rows()).map(|r| p.g.row(r).norm()).collect();

    let slack = |x: &DVector<f64>, s: &Side| s.sign * p.g.row(s.row).dot(&x.transpose()) - s.bound;
    let normal = |s: &Side| p.g.row(s.row).transpose() * s.sign;

    let mut iterations = 0;
    let mut status = SolveStatus::Optimal;
    'outer: loop {
        // Most violated inactive side, measured relative to the row scale.
        let mut worst: Option<(usize, f64)> = None;
        for (k, s) in sides.iter().enumerate() {
            let scale = row_norms[s.row] * (1.0 + x.amax()) + s.bound.abs();
            let v = slack(&x, s);
            if v < -1e-14 * scale.max(f64::MIN_POSITIVE) && !active.contains(&k) {
                let rel = v / scale.max(f64::MIN_POSITIVE);
                if worst.is_none_or(|(_, w)| rel < w) {
                    worst = Some((k, rel));
                }
            }
        }
        let Some((pk, _)) = worst else { break };
        let np = normal(&sides[pk]);
        let mut u_new = 0.0;

        loop {
            iterations += 1;
            if iterations > opts.max_iter {
                status = SolveStatus::MaxIter;
                break 'outer;
            }
            let d = solver.j.tr_mul(&np);
            let q = active.len();
            let z = solver.j.columns(q, n - q) * d.rows(q, n - q);
            let r = solver.back_substitute(&d.rows(0, q).into_owned());

            // Largest dual step keeping active multipliers nonnegative.
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for j in 0..q {
                if r[j] > 0.0 {
                    let t = u[j] / r[j];
                    if t < t1 {
                        t1 = t;
                        drop = Some(j);
                    }
                }
            }
            let dz = d.rows(q, n - q).norm();
            let primal_step = dz > 1e-12 * d.norm();
            let t2 = if primal_step {
                -slack(&x, &sides[pk]) / z.dot(&np)
            } else {
                f64::INFINITY
            };

            if t1.is_infinite() && t2.is_infinite() {
                status = SolveStatus::Infeasible;
                break 'outer;
            }
            let t = t1.min(t2);
            for j in 0..q {
                u[j] -= t * r[j];
            }
            u_new += t;
            if primal_step {
                x += &z * t;
            }
            if t2 <= t1 {
                solver.add(&d, q);
                active.push(pk);
                u.push(u_new);
                break;
            }
            let l = drop.expect("finite t1 has an index");
            solver.drop(l, q);
            active.remove(l);
            u.remove(l);
        }
    }

    let act: Vec<Side> = active.iter().map(|&k| sides[k]).collect();
    Ok(finish(p, &hess, reg, x, &act, &u, status, iterations, opts))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    p: &QpProblem,
    hess: &DMatrix<f64>,
    reg: f64,
    h: DVector<f64>,
    active: &[Side],
    u: &[f64],
    mut status: SolveStatus,
    iterations: usize,
    opts: &SolveOptions,
) -> QpSolution {
    let mut lambda = DVector::zeros(p.rows());
    let mut complementarity: f64 = 0.0;
    let mut dual: f64 = 0.0;
    let gh = &p.g * &h;
    for (s, &ui) in active.iter().zip(u) {
        // A lower side (sign +1) contributes -μ, an upper side +ν.
        lambda[s.row] -= s.sign * ui;
        let slack = s.sign * gh[s.row] - s.bound;
        complementarity = complementarity.max((ui * slack).abs());
        dual = dual.max(-ui);
    }
    let grad = hess * &h + &p.linear + p.g.tr_mul(&lambda);
    let stationarity = grad.amax() / (1.0 + p.linear.amax());
    let primal = (0..p.rows())
        .map(|r| (p.lo[r] - gh[r]).max(gh[r] - p.hi[r]).max(0.0))
        .fold(0.0, f64::max);
    let kkt = KktResiduals {
        stationarity,
        primal,
        complementarity,
        dual,
    };
    if status == SolveStatus::Optimal && kkt.max() > opts.tol {
        log::warn!("solver stopped with KKT residuals {kkt:?} above tolerance {}", opts.tol);
        status = SolveStatus::MaxIter;
    }
    QpSolution {
        objective: p.objective(&h),
        h,
        status,
        multipliers: lambda,
        kkt,
        iterations,
        regularization: reg,
        active: active.len(),
    }
}

/// Factorization state: `J = L⁻ᵀ Qf` where `L⁻¹ N = Qf [R; 0]` for the active
/// normals `N`. The first `q` columns of `J` span the active normals in the
/// Hessian metric and the remaining ones their complement.
struct DualActiveSet {
    j: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl DualActiveSet {
    fn new(chol: &Cholesky<f64, nalgebra::Dyn>, n: usize) -> Self {
        let l = chol.l();
        let l_inv = l
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("Cholesky factor has a positive diagonal");
        DualActiveSet {
            j: l_inv.transpose(),
            r: DMatrix::zeros(n, n),
        }
    }

    fn back_substitute(&self, d1: &DVector<f64>) -> DVector<f64> {
        let q = d1.len();
        let mut r = d1.clone();
        for i in (0..q).rev() {
            let mut v = r[i];
            for k in i + 1..q {
                v -= self.r[(i, k)] * r[k];
            }
            r[i] = v / self.r[(i, i)];
        }
        r
    }

    /// Appends the normal whose projection `d = Jᵀ n` was computed, rotating
    /// `d[q..]` onto `d[q]`.
    fn add(&mut self, d: &DVector<f64>, q: usize) {
        let mut d = d.clone();
        let n = d.len();
        for k in (q + 1..n).rev() {
            if d[k] == 0.0 {
                continue;
            }
            let (c, s, rho) = givens(d[k - 1], d[k]);
            d[k - 1] = rho;
            d[k] = 0.0;
            rotate_columns(&mut self.j, k - 1, k, c, s);
        }
        for i in 0..=q {
            self.r[(i, q)] = d[i];
        }
    }

    /// Removes active constraint `l` of `q` and restores triangular `R`.
    fn drop(&mut self, l: usize, q: usize) {
        for c in l..q - 1 {
            for i in 0..=c + 1 {
                self.r[(i, c)] = self.r[(i, c + 1)];
            }
        }
        for i in 0..q {
            self.r[(i, q - 1)] = 0.0;
        }
        for k in l..q - 1 {
            let (a, b) = (self.r[(k, k)], self.r[(k + 1, k)]);
            if b == 0.0 {
                continue;
            }
            let (c, s, rho) = givens(a, b);
            self.r[(k, k)] = rho;
            self.r[(k + 1, k)] = 0.0;
            for col in k + 1..q - 1 {
                let (x, y) = (self.r[(k, col)], self.r[(k + 1, col)]);
                self.r[(k, col)] = c * x + s * y;
                self.r[(k + 1, col)] = -s * x + c * y;
            }
            rotate_columns(&mut self.j, k, k + 1, c, s);
        }
    }
}

/// `(c, s, ρ)` with `[c s; -s c] [a; b] = [ρ; 0]`.
fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let rho = a.hypot(b);
    (a / rho, b / rho, rho)
}

fn rotate_columns(m: &mut DMatrix<f64>, i: usize, k: usize, c: f64, s: f64) {
    for r in 0..m.nrows() {
        let (x, y) = (m[(r, i)], m[(r, k)]);
        m[(r, i)] = c * x + s * y;
        m[(r, k)] = -s * x + c * y;
    }
}
