//! Small dense strictly convex QPs.
//!
//! ```text
//!     minimize     1/2 z' H z + c' z
//!     subject to   rows (>= or <=), lower <= z <= upper
//! ```
//!
//! Solved with a primal active-set method. A feasible starting point comes
//! from a phase-1 LP (`min t` s.t. every row relaxed by `t`, box kept hard),
//! which is run by the same active-set loop with a zero Hessian. A positive
//! phase-1 optimum is the infeasibility certificate: the rows active at the
//! phase-1 solution have an empty intersection with the box.
//!
//! Rows are scaled to unit coefficient norm before solving; the returned
//! point and multipliers are in the caller's scaling.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cbf::ConstraintRow;

/// Primal feasibility tolerance (normalized rows).
pub const FEASIBILITY_TOL: f64 = 1e-9;
/// Phase-1 optimum above which a problem is declared infeasible.
pub const PHASE1_TOL: f64 = 1e-8;
/// Bound on the (scale-relative) KKT residual of an optimal solution.
pub const KKT_TOL: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("hessian is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite problem data: {0}")]
    NonFinite(String),
    #[error("degenerate working set")]
    Numerical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub rows: Vec<ConstraintRow>,
    /// May contain `-inf` for unbounded components.
    pub lower: DVector<f64>,
    /// May contain `+inf` for unbounded components.
    pub upper: DVector<f64>,
}

impl QpProblem {
    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.linear.dot(z)
    }

    /// Same problem with the box removed.
    pub fn without_box(&self) -> Self {
        let d = self.dim();
        Self {
            lower: DVector::from_element(d, f64::NEG_INFINITY),
            upper: DVector::from_element(d, f64::INFINITY),
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<(), QpError> {
        let d = self.dim();
        if self.hessian.shape() != (d, d) || self.lower.len() != d || self.upper.len() != d {
            return Err(QpError::Dimension(format!(
                "hessian {:?}, bounds {}/{} for dimension {d}",
                self.hessian.shape(),
                self.lower.len(),
                self.upper.len()
            )));
        }
        if let Some(i) = self.rows.iter().position(|r| r.coeffs.len() != d) {
            return Err(QpError::Dimension(format!("row {i} has wrong length")));
        }
        if !self
            .hessian
            .iter()
            .chain(self.linear.iter())
            .all(|v| v.is_finite())
        {
            return Err(QpError::NonFinite("objective".into()));
        }
        if let Some(i) = self.rows.iter().position(|r| !r.is_finite()) {
            return Err(QpError::NonFinite(format!("row {i}")));
        }
        for (lo, hi) in self.lower.iter().zip(self.upper.iter()) {
            if lo.is_nan()
                || hi.is_nan()
                || lo > hi
                || *lo == f64::INFINITY
                || *hi == f64::NEG_INFINITY
            {
                return Err(QpError::Dimension(format!("invalid box [{lo}, {hi}]")));
            }
        }
        let scale = self.hessian.amax().max(f64::MIN_POSITIVE);
        if (&self.hessian - self.hessian.transpose()).amax() > 1e-12 * scale {
            return Err(QpError::NotPositiveDefinite);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

impl QpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Optimal => "optimal",
            Self::Infeasible => "infeasible",
            Self::MaxIterations => "max-iterations",
        }
    }
}

/// Lagrange multipliers, all non-negative at a KKT point. Row multipliers
/// refer to each row written in `<=` form.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub rows: Vec<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl Multipliers {
    pub fn zeros(problem: &QpProblem) -> Self {
        Self {
            rows: vec![0.0; problem.rows.len()],
            lower: DVector::zeros(problem.dim()),
            upper: DVector::zeros(problem.dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibilityCertificate {
    /// Rows whose joint intersection with the box is empty.
    pub rows: Vec<usize>,
    /// Worst normalized row violation at the returned point, which minimizes
    /// that violation over the box (in the solver's internal scaling).
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub status: QpStatus,
    pub point: DVector<f64>,
    pub objective: f64,
    /// `verify_kkt` at the returned point; infinite unless optimal.
    pub kkt_residual: f64,
    /// Row indices active at the solution.
    pub active_set: Vec<usize>,
    pub multipliers: Multipliers,
    pub certificate: Option<InfeasibilityCertificate>,
    pub iterations: usize,
}

/// Primal active-set solver. Holds only settings, so one instance can be
/// shared or cloned per thread.
#[derive(Debug, Clone)]
pub struct ActiveSetSolver {
    pub max_iterations: usize,
}

impl Default for ActiveSetSolver {
    fn default() -> Self {
        Self {
            max_iterations: MAX_ITERATIONS,
        }
    }
}

pub fn solve(problem: &QpProblem) -> Result<QpSolution, QpError> {
    ActiveSetSolver::default().solve(problem)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Origin {
    Row(usize),
    Lower(usize),
    Upper(usize),
    /// Phase-1 `t >= 0`.
    Slack,
}

#[derive(Debug, Clone)]
struct Halfspace {
    normal: DVector<f64>,
    rhs: f64,
    origin: Origin,
    /// Factor the original row was divided by.
    scale: f64,
}

enum Mode<'a> {
    Quadratic {
        chol: &'a Cholesky<f64, Dyn>,
        hessian: &'a DMatrix<f64>,
    },
    Linear,
}

struct Outcome {
    z: DVector<f64>,
    working: Vec<usize>,
    mu: Vec<f64>,
    converged: bool,
    iterations: usize,
}

impl ActiveSetSolver {
    pub fn solve(&self, problem: &QpProblem) -> Result<QpSolution, QpError> {
        problem.validate()?;
        // Work in y = z / s with s_j = 1 / sqrt(H_jj), which gives the scaled
        // Hessian a unit diagonal.
        let s = problem
            .hessian
            .diagonal()
            .map(|h| if h > 0.0 { 1.0 / h.sqrt() } else { 1.0 });
        let scaled = QpProblem {
            hessian: DMatrix::from_fn(s.len(), s.len(), |i, j| {
                problem.hessian[(i, j)] * s[i] * s[j]
            }),
            linear: problem.linear.component_mul(&s),
            rows: problem
                .rows
                .iter()
                .map(|r| ConstraintRow {
                    coeffs: r.coeffs.component_mul(&s),
                    ..r.clone()
                })
                .collect(),
            lower: problem.lower.component_div(&s),
            upper: problem.upper.component_div(&s),
        };
        let mut sol = self.solve_scaled(&scaled)?;
        sol.point.component_mul_assign(&s);
        sol.objective = problem.objective(&sol.point);
        if let Some(cert) = &mut sol.certificate {
            cert.violation = problem
                .rows
                .iter()
                .map(|r| {
                    let (a, b) = r.as_less_eq();
                    let norm = a.norm();
                    if norm == 0.0 {
                        -b
                    } else {
                        (a.dot(&sol.point) - b) / norm
                    }
                })
                .fold(0.0, f64::max);
        }
        if sol.status == QpStatus::Optimal {
            let m = &mut sol.multipliers;
            for j in 0..s.len() {
                if m.lower[j] > 0.0 {
                    sol.point[j] = problem.lower[j];
                }
                if m.upper[j] > 0.0 {
                    sol.point[j] = problem.upper[j];
                }
                sol.point[j] = sol.point[j].clamp(problem.lower[j], problem.upper[j]);
            }
            m.lower.component_div_assign(&s);
            m.upper.component_div_assign(&s);
            sol.objective = problem.objective(&sol.point);
            sol.kkt_residual = verify_kkt(problem, &sol.point, &sol.multipliers);
        }
        Ok(sol)
    }

    fn solve_scaled(&self, problem: &QpProblem) -> Result<QpSolution, QpError> {
        let d = problem.dim();
        let chol = problem
            .hessian
            .clone()
            .cholesky()
            .ok_or(QpError::NotPositiveDefinite)?;

        let mut cons = Vec::new();
        for (i, row) in problem.rows.iter().enumerate() {
            let (a, b) = row.as_less_eq();
            let scale = a.norm();
            if scale == 0.0 {
                if b < -FEASIBILITY_TOL {
                    return Ok(self.infeasible(problem, DVector::zeros(d), vec![i], -b, 0));
                }
                continue;
            }
            cons.push(Halfspace {
                normal: a / scale,
                rhs: b / scale,
                origin: Origin::Row(i),
                scale,
            });
        }
        let rows_end = cons.len();
        for j in 0..d {
            if problem.lower[j].is_finite() {
                let mut n = DVector::zeros(d);
                n[j] = -1.0;
                cons.push(Halfspace {
                    normal: n,
                    rhs: -problem.lower[j],
                    origin: Origin::Lower(j),
                    scale: 1.0,
                });
            }
            if problem.upper[j].is_finite() {
                let mut n = DVector::zeros(d);
                n[j] = 1.0;
                cons.push(Halfspace {
                    normal: n,
                    rhs: problem.upper[j],
                    origin: Origin::Upper(j),
                    scale: 1.0,
                });
            }
        }

        // Phase 1 in (z, t).
        let z0 = DVector::from_iterator(
            d,
            problem
                .lower
                .iter()
                .zip(problem.upper.iter())
                .map(|(lo, hi)| 0.0_f64.clamp(*lo, *hi)),
        );
        let t0 = cons[..rows_end]
            .iter()
            .map(|h| h.normal.dot(&z0) - h.rhs)
            .fold(0.0_f64, f64::max);
        let mut phase1 = Vec::with_capacity(cons.len() + 1);
        for (k, h) in cons.iter().enumerate() {
            let mut n = h.normal.clone().insert_row(d, 0.0);
            if k < rows_end {
                n[d] = -1.0;
            }
            phase1.push(Halfspace {
                normal: n,
                rhs: h.rhs,
                origin: h.origin,
                scale: h.scale,
            });
        }
        let mut slack = DVector::zeros(d + 1);
        slack[d] = -1.0;
        phase1.push(Halfspace {
            normal: slack,
            rhs: 0.0,
            origin: Origin::Slack,
            scale: 1.0,
        });
        let mut c1 = DVector::zeros(d + 1);
        c1[d] = 1.0;
        let start = z0.clone().insert_row(d, t0);
        let p1 = self.run(&Mode::Linear, &c1, &phase1, start, self.max_iterations)?;
        let used = p1.iterations;
        let z_feas = p1.z.rows(0, d).into_owned();
        if !p1.converged {
            return Ok(self.stalled(problem, z_feas, used));
        }
        let violation = p1.z[d];
        if violation > PHASE1_TOL {
            let mut rows: Vec<usize> = p1
                .working
                .iter()
                .filter_map(|&k| match phase1[k].origin {
                    Origin::Row(i) => Some(i),
                    _ => None,
                })
                .collect();
            rows.sort_unstable();
            return Ok(self.infeasible(problem, z_feas, rows, violation, used));
        }

        // Phase 2.
        let mode = Mode::Quadratic {
            chol: &chol,
            hessian: &problem.hessian,
        };
        let p2 = self.run(
            &mode,
            &problem.linear,
            &cons,
            z_feas,
            self.max_iterations.saturating_sub(used),
        )?;
        let iterations = used + p2.iterations;
        if !p2.converged {
            return Ok(self.stalled(problem, p2.z, iterations));
        }
        let p2 = polish(problem, &cons, p2);

        let mut multipliers = Multipliers::zeros(problem);
        let mut active_set = Vec::new();
        for (&k, &mu) in p2.working.iter().zip(&p2.mu) {
            let h = &cons[k];
            match h.origin {
                Origin::Row(i) => {
                    multipliers.rows[i] = mu / h.scale;
                    active_set.push(i);
                }
                Origin::Lower(j) => multipliers.lower[j] = mu,
                Origin::Upper(j) => multipliers.upper[j] = mu,
                Origin::Slack => unreachable!("slack only exists in phase 1"),
            }
        }
        active_set.sort_unstable();
        let kkt_residual = verify_kkt(problem, &p2.z, &multipliers);
        Ok(QpSolution {
            status: QpStatus::Optimal,
            objective: problem.objective(&p2.z),
            point: p2.z,
            kkt_residual,
            active_set,
            multipliers,
            certificate: None,
            iterations,
        })
    }

    fn infeasible(
        &self,
        problem: &QpProblem,
        point: DVector<f64>,
        rows: Vec<usize>,
        violation: f64,
        iterations: usize,
    ) -> QpSolution {
        QpSolution {
            status: QpStatus::Infeasible,
            objective: problem.objective(&point),
            point,
            kkt_residual: f64::INFINITY,
            active_set: Vec::new(),
            multipliers: Multipliers::zeros(problem),
            certificate: Some(InfeasibilityCertificate { rows, violation }),
            iterations,
        }
    }

    fn stalled(&self, problem: &QpProblem, point: DVector<f64>, iterations: usize) -> QpSolution {
        QpSolution {
            status: QpStatus::MaxIterations,
            objective: problem.objective(&point),
            point,
            kkt_residual: f64::INFINITY,
            active_set: Vec::new(),
            multipliers: Multipliers::zeros(problem),
            certificate: None,
            iterations,
        }
    }

    /// Active-set iterations from a point feasible for `cons` (up to the
    /// feasibility tolerance). Ties in adding and dropping constraints go to
    /// the lowest index, which rules out cycling on degenerate vertices.
    fn run(
        &self,
        mode: &Mode<'_>,
        c: &DVector<f64>,
        cons: &[Halfspace],
        mut z: DVector<f64>,
        max_iterations: usize,
    ) -> Result<Outcome, QpError> {
        let mut working: Vec<usize> = Vec::new();
        for iteration in 0..max_iterations {
            let (step, mu, full_step_lands) = match mode {
                Mode::Quadratic { chol, .. } => {
                    let (target, mu) = equality_qp(chol, c, cons, &working)?;
                    (&target - &z, mu, true)
                }
                Mode::Linear => {
                    let (step, mu) = projected_descent(c, cons, &working)?;
                    let scale = c.amax().max(1.0);
                    if step.amax() <= 1e-12 * scale {
                        (DVector::zeros(z.len()), mu, false)
                    } else {
                        (step, mu, false)
                    }
                }
            };

            let moving = step.amax() > 0.0;
            if moving {
                let step_norm = step.norm();
                let mut alpha = if full_step_lands { 1.0 } else { f64::INFINITY };
                let mut blocking = None;
                for (k, h) in cons.iter().enumerate() {
                    if working.contains(&k) {
                        continue;
                    }
                    let rate = h.normal.dot(&step);
                    if rate <= 1e-13 * step_norm {
                        continue;
                    }
                    let room = (h.rhs - h.normal.dot(&z)).max(0.0);
                    let limit = room / rate;
                    if limit < alpha {
                        alpha = limit;
                        blocking = Some(k);
                    }
                }
                match blocking {
                    Some(k) => {
                        z.axpy(alpha, &step, 1.0);
                        working.push(k);
                        continue;
                    }
                    None if !full_step_lands => {
                        return Err(QpError::Dimension("unbounded phase-1 direction".into()));
                    }
                    None => z += &step,
                }
            }

            // Stationary on the working set: check the multipliers.
            let scale = 1.0
                + c.amax()
                + match mode {
                    Mode::Quadratic { hessian, .. } => (*hessian * &z).amax(),
                    Mode::Linear => 0.0,
                };
            let mut drop: Option<usize> = None;
            for (slot, m) in mu.iter().enumerate() {
                if *m < -1e-12 * scale {
                    let better = match drop {
                        None => true,
                        Some(prev) => {
                            *m < mu[prev] || (*m == mu[prev] && working[slot] < working[prev])
                        }
                    };
                    if better {
                        drop = Some(slot);
                    }
                }
            }
            match drop {
                Some(slot) => {
                    working.remove(slot);
                }
                None => {
                    return Ok(Outcome {
                        z,
                        working,
                        mu,
                        converged: true,
                        iterations: iteration + 1,
                    })
                }
            }
        }
        Ok(Outcome {
            z,
            working,
            mu: Vec::new(),
            converged: false,
            iterations: max_iterations,
        })
    }
}

/// Re-solve the final working set by the null-space method: the point comes
/// from the working constraints and the reduced Hessian, the multipliers from
/// stationarity, so large multipliers do not leak into the point. Kept only if
/// it does not hurt the residual.
fn polish(problem: &QpProblem, cons: &[Halfspace], out: Outcome) -> Outcome {
    let d = problem.dim();
    let k = out.working.len();
    if k == 0 || k > d {
        return out;
    }
    let (a, b) = working_matrix(cons, &out.working, d);
    let mut aug = DMatrix::zeros(d, k + d);
    aug.view_mut((0, 0), (d, k)).copy_from(&a.transpose());
    aug.view_mut((0, k), (d, d)).fill_with_identity();
    let q = aug.qr().q();
    let q1 = q.columns(0, k).into_owned();
    let Some(r) = a.transpose().tr_mul(&q1).transpose().try_inverse() else {
        return out;
    };
    // r = (Q1' A')^{-1}, so Q1 r' b solves A z = b.
    let particular = |rhs: &DVector<f64>| &q1 * (r.transpose() * rhs);
    let mut z = particular(&b);
    if k < d {
        let n = q.columns(k, d - k).into_owned();
        let reduced = n.tr_mul(&(&problem.hessian * &n));
        let g = &problem.hessian * &z + &problem.linear;
        let Some(ch) = reduced.cholesky() else {
            return out;
        };
        z += &n * ch.solve(&(-n.tr_mul(&g)));
    }
    z += particular(&(&b - &a * &z));
    let g = &problem.hessian * &z + &problem.linear;
    let mu_vec = &r * q1.tr_mul(&(-&g));
    let mu: Vec<f64> = mu_vec.iter().copied().collect();

    let residual = |z: &DVector<f64>, mu: &[f64]| {
        let mut g = &problem.hessian * z + &problem.linear;
        for (&w, m) in out.working.iter().zip(mu) {
            g.axpy(*m, &cons[w].normal, 1.0);
        }
        let eq = out
            .working
            .iter()
            .zip(mu)
            .map(|(&w, m)| {
                let r = (cons[w].normal.dot(z) - cons[w].rhs).abs();
                r.max(r * m.abs())
            })
            .fold(0.0, f64::max);
        g.amax().max(eq)
    };
    let outside_ok = cons
        .iter()
        .all(|h| h.normal.dot(&z) - h.rhs <= FEASIBILITY_TOL);
    if z.iter().chain(&mu).all(|v| v.is_finite())
        && outside_ok
        && mu
            .iter()
            .zip(&out.mu)
            .all(|(m, o)| *m >= -1e-12 * (1.0 + o.abs()))
        && residual(&z, &mu) <= residual(&out.z, &out.mu)
    {
        Outcome { z, mu, ..out }
    } else {
        out
    }
}

fn working_matrix(cons: &[Halfspace], working: &[usize], n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut a = DMatrix::zeros(working.len(), n);
    let mut b = DVector::zeros(working.len());
    for (r, &k) in working.iter().enumerate() {
        a.row_mut(r).copy_from(&cons[k].normal.transpose());
        b[r] = cons[k].rhs;
    }
    (a, b)
}

fn solve_small(s: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>, QpError> {
    if let Some(ch) = s.clone().cholesky() {
        return Ok(ch.solve(&rhs));
    }
    s.lu().solve(&rhs).ok_or(QpError::Numerical)
}

/// Minimizer of the objective on `A_W z = b_W` and its multipliers, with
/// `H z + c + A_W' mu = 0`.
fn equality_qp(
    chol: &Cholesky<f64, Dyn>,
    c: &DVector<f64>,
    cons: &[Halfspace],
    working: &[usize],
) -> Result<(DVector<f64>, Vec<f64>), QpError> {
    let hinv_c = chol.solve(c);
    if working.is_empty() {
        return Ok((-hinv_c, Vec::new()));
    }
    let (a, b) = working_matrix(cons, working, c.len());
    let hinv_at = chol.solve(&a.transpose());
    let schur = &a * &hinv_at;
    let rhs = -(&b + &a * &hinv_c);
    let mu = solve_small(schur, rhs)?;
    let z = -(hinv_c + hinv_at * &mu);
    Ok((z, mu.iter().copied().collect()))
}

/// Steepest descent for a linear objective projected onto the null space of
/// the working set, plus least-squares multipliers.
fn projected_descent(
    c: &DVector<f64>,
    cons: &[Halfspace],
    working: &[usize],
) -> Result<(DVector<f64>, Vec<f64>), QpError> {
    if working.is_empty() {
        return Ok((-c, Vec::new()));
    }
    let (a, _) = working_matrix(cons, working, c.len());
    let y = solve_small(&a * a.transpose(), &a * c)?;
    let step = -(c - a.transpose() * &y);
    Ok((step, y.iter().map(|v| -v).collect()))
}

/// Largest violation across stationarity, primal feasibility, dual
/// feasibility and complementary slackness.
///
/// Rows are taken at unit norm. Stationarity, dual feasibility and
/// complementarity are divided by `max(1, |Hz|, |c|, |mu|)`; primal violations
/// and complementarity by `max(1, |rhs|)` of their constraint. The residual is
/// therefore invariant under row scaling and stays at roundoff level when
/// multipliers are large.
pub fn verify_kkt(problem: &QpProblem, point: &DVector<f64>, multipliers: &Multipliers) -> f64 {
    let hz = &problem.hessian * point;
    let mut grad = &hz + &problem.linear;
    let mut scale = 1.0_f64.max(hz.amax()).max(problem.linear.amax());
    let mut primal = 0.0_f64;
    let mut dual = 0.0_f64;
    let mut slack = Vec::new();
    for (row, mu) in problem.rows.iter().zip(&multipliers.rows) {
        let (a, b) = row.as_less_eq();
        grad.axpy(*mu, &a, 1.0);
        let norm = a.norm();
        let (mu, residual, rhs) = if norm > 0.0 {
            (mu * norm, (a.dot(point) - b) / norm, b / norm)
        } else {
            (*mu, -b, b)
        };
        let rel = residual / rhs.abs().max(1.0);
        primal = primal.max(rel);
        dual = dual.max(-mu);
        scale = scale.max(mu.abs());
        slack.push((mu, rel));
    }
    for j in 0..problem.dim() {
        let (lo, hi) = (problem.lower[j], problem.upper[j]);
        let (ml, mu) = (multipliers.lower[j], multipliers.upper[j]);
        grad[j] += mu - ml;
        dual = dual.max(-ml).max(-mu);
        scale = scale.max(ml.abs()).max(mu.abs());
        for (m, bound, gap) in [(ml, lo, lo - point[j]), (mu, hi, point[j] - hi)] {
            if bound.is_finite() {
                let rel = gap / bound.abs().max(1.0);
                primal = primal.max(rel);
                slack.push((m, rel));
            } else {
                slack.push((m, 1.0));
            }
        }
    }
    let complementarity = slack
        .iter()
        .map(|(m, rel)| (m * rel).abs())
        .fold(0.0, f64::max);
    (grad.amax() / scale)
        .max(primal)
        .max(dual / scale)
        .max(complementarity / scale)
}
