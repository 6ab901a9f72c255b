#![allow(dead_code)]

pub mod lie;

use auxcbf::cbf::{ConstraintRow, RowLabel, Sense, SystemModel};
use auxcbf::config::{RunConfig, Scenario};
use auxcbf::qp::QpProblem;
use auxcbf::report::emit_trace;
use auxcbf::scenarios::AccCase;
use auxcbf::sim::{InfeasibilityPolicy, SimTrace};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Relative error with a floor on the denominator, so quantities that are
/// analytically zero are compared absolutely.
pub fn rel_err(analytic: f64, reference: f64, floor: f64) -> f64 {
    (analytic - reference).abs() / analytic.abs().max(reference.abs()).max(floor)
}

pub const FD_FLOOR: f64 = 1e-6;

/// Central-difference gradient of `phi` in `x` and partial derivative in `t`.
/// State steps are `1e-4 * max(1, |x_i|)`, the time step is `1e-4`.
pub fn fd_gradient<F>(phi: F, t: f64, x: &DVector<f64>) -> (DVector<f64>, f64)
where
    F: Fn(f64, &DVector<f64>) -> f64,
{
    let mut grad = DVector::zeros(x.len());
    for i in 0..x.len() {
        let h = 1e-4 * x[i].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        grad[i] = (phi(t, &xp) - phi(t, &xm)) / (xp[i] - xm[i]);
    }
    let ht = 1e-4;
    let dt = (phi(t + ht, x) - phi(t - ht, x)) / (2.0 * ht);
    (grad, dt)
}

/// `(L_f phi, L_g phi)` by finite differences, with explicit time
/// dependence folded into `L_f`.
pub fn fd_lie<F>(sys: &dyn SystemModel, phi: F, t: f64, x: &DVector<f64>) -> (f64, DVector<f64>)
where
    F: Fn(f64, &DVector<f64>) -> f64,
{
    let (grad, dt) = fd_gradient(phi, t, x);
    let f = sys.drift(t, x).unwrap();
    let g = sys.actuation(t, x).unwrap();
    (grad.dot(&f) + dt, g.tr_mul(&grad))
}

/// Brute-force QP oracle: every working set of at most `d` constraints
/// (rows and finite box sides) is solved as an equality-constrained QP, and
/// the best primal-feasible candidate wins. `None` means infeasible.
pub fn enumerate_qp(problem: &QpProblem) -> Option<(DVector<f64>, f64)> {
    let d = problem.dim();
    let mut cons: Vec<(DVector<f64>, f64)> = problem
        .rows
        .iter()
        .map(|r| {
            let (a, b) = r.as_less_eq();
            let n = a.norm();
            if n == 0.0 {
                (a, b)
            } else {
                (a / n, b / n)
            }
        })
        .collect();
    for j in 0..d {
        if problem.lower[j].is_finite() {
            let mut a = DVector::zeros(d);
            a[j] = -1.0;
            cons.push((a, -problem.lower[j]));
        }
        if problem.upper[j].is_finite() {
            let mut a = DVector::zeros(d);
            a[j] = 1.0;
            cons.push((a, problem.upper[j]));
        }
    }
    let feasible = |z: &DVector<f64>| {
        cons.iter()
            .all(|(a, b)| a.dot(z) - b <= 1e-7 * (1.0 + b.abs()))
    };

    let mut best: Option<(DVector<f64>, f64)> = None;
    let mut subset = Vec::new();
    let mut consider = |subset: &[usize]| {
        let k = subset.len();
        let mut kkt = DMatrix::zeros(d + k, d + k);
        kkt.view_mut((0, 0), (d, d)).copy_from(&problem.hessian);
        let mut rhs = DVector::zeros(d + k);
        rhs.rows_mut(0, d).copy_from(&(-&problem.linear));
        for (r, &i) in subset.iter().enumerate() {
            let (a, b) = &cons[i];
            for c in 0..d {
                kkt[(d + r, c)] = a[c];
                kkt[(c, d + r)] = a[c];
            }
            rhs[d + r] = *b;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            return;
        };
        let z = sol.rows(0, d).into_owned();
        if !z.iter().all(|v| v.is_finite()) || !feasible(&z) {
            return;
        }
        let obj = problem.objective(&z);
        if best.as_ref().is_none_or(|(_, o)| obj < *o) {
            best = Some((z, obj));
        }
    };
    fn walk(
        start: usize,
        n: usize,
        max: usize,
        subset: &mut Vec<usize>,
        f: &mut dyn FnMut(&[usize]),
    ) {
        f(subset);
        if subset.len() == max {
            return;
        }
        for i in start..n {
            subset.push(i);
            walk(i + 1, n, max, subset, f);
            subset.pop();
        }
    }
    walk(0, cons.len(), d, &mut subset, &mut consider);
    best
}

/// Random strictly convex QP with `d <= 3` and at most six rows.
pub fn random_qp<R: Rng>(rng: &mut R) -> QpProblem {
    let d = rng.gen_range(1..=3);
    let l = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let hessian = &l * l.transpose() + DMatrix::identity(d, d) * rng.gen_range(0.05..1.0);
    let linear = DVector::from_fn(d, |_, _| rng.gen_range(-3.0..3.0));
    let n_rows = rng.gen_range(0..=6);
    let rows = (0..n_rows)
        .map(|_| {
            let coeffs = DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0));
            let sense = if rng.gen_bool(0.5) {
                Sense::GreaterEq
            } else {
                Sense::LessEq
            };
            ConstraintRow::new(coeffs, rng.gen_range(-2.0..2.0), sense, RowLabel::Hocbf)
        })
        .collect();
    let mut lower = DVector::from_element(d, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(d, f64::INFINITY);
    for j in 0..d {
        if rng.gen_bool(0.7) {
            let lo = rng.gen_range(-3.0..1.0);
            lower[j] = lo;
            upper[j] = lo + rng.gen_range(0.1..4.0);
        }
    }
    QpProblem {
        hessian,
        linear,
        rows,
        lower,
        upper,
    }
}

/// Platoon preset with the feasibility switch and policy set.
pub fn acc_config(case: AccCase, feasibility: bool, policy: InfeasibilityPolicy) -> RunConfig {
    let mut c = RunConfig::preset(Scenario::Acc, case);
    c.run.feasibility = feasibility;
    c.run.policy = policy;
    c
}

pub fn csv_bytes(trace: &SimTrace) -> Vec<u8> {
    let mut out = Vec::new();
    emit_trace(trace, &mut out).unwrap();
    out
}
