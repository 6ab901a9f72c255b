use std::cmp::Ordering;

use nalgebra::DVector;

use super::rows::drift_part;
use super::{
    check_state, psi_coefficients, AuxiliaryFunction, CbfError, ConstraintRow, ControlBounds,
    FeasibilitySpec, HocbfSpec, RowLabel, Sense, SystemModel,
};

/// The feasibility barrier `b_F` and its Lie derivatives at one state, with
/// `u_M` held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityJet {
    pub value: f64,
    /// `L_f b_F`
    pub drift: f64,
    /// `L_g b_F`
    pub actuated: DVector<f64>,
    pub u_m: DVector<f64>,
}

impl FeasibilityJet {
    /// `L_g b_F . u_M`
    pub fn lambda_unscaled(&self) -> f64 {
        self.actuated.dot(&self.u_m)
    }
}

/// Control in the box attaining `sup_u coupling . u`.
///
/// Componentwise sign rule; a zero coefficient picks the lower bound.
pub fn compute_u_m(coupling: &DVector<f64>, bounds: &ControlBounds) -> DVector<f64> {
    DVector::from_iterator(
        coupling.len(),
        coupling
            .iter()
            .zip(bounds.lower().iter().zip(bounds.upper().iter()))
            .map(|(c, (lo, hi))| if *c > 0.0 { *hi } else { *lo }),
    )
}

/// `b_F(x)`: the m-th order HOCBF expression evaluated at `u = u_M`.
pub fn feasibility_value(
    spec: &HocbfSpec,
    sys: &dyn SystemModel,
    bounds: &ControlBounds,
    t: f64,
    x: &DVector<f64>,
) -> Result<f64, CbfError> {
    check_state(sys, x)?;
    let jet = sys.barrier_jet(t, x)?;
    check_degree(spec, jet.check(sys.control_dim())?)?;
    check_bounds(sys, bounds)?;
    let u_m = compute_u_m(jet.coupling(), bounds);
    Ok(drift_part(spec, &jet.drift) + jet.coupling().dot(&u_m))
}

/// `b_F`, `L_f b_F`, `L_g b_F` and `u_M` at `(t, x)`.
///
/// `u_M` is treated as locally constant, which holds while the sign pattern
/// of `L_g L_f^{m-1} b` is unchanged.
pub fn feasibility_jet(
    spec: &HocbfSpec,
    sys: &dyn SystemModel,
    bounds: &ControlBounds,
    t: f64,
    x: &DVector<f64>,
) -> Result<FeasibilityJet, CbfError> {
    check_state(sys, x)?;
    let jet = sys.barrier_jet(t, x)?;
    let m = jet.check(sys.control_dim())?;
    check_degree(spec, m)?;
    check_bounds(sys, bounds)?;
    let u_m = compute_u_m(jet.coupling(), bounds);
    let c = psi_coefficients(spec.gains(), m);

    let value = drift_part(spec, &jet.drift) + jet.coupling().dot(&u_m);
    let drift = c
        .iter()
        .zip(&jet.drift[1..])
        .map(|(c, d)| c * d)
        .sum::<f64>()
        + jet.drift_of_coupling.dot(&u_m);
    let mut actuated = jet.actuated_of_coupling.tr_mul(&u_m);
    for (c, lg) in c.iter().zip(&jet.actuated) {
        actuated.axpy(*c, lg, 1.0);
    }
    Ok(FeasibilityJet {
        value,
        drift,
        actuated,
        u_m,
    })
}

/// Closed-form auxiliary dynamics
/// `a' = -(dA/da)^{-1} (A(a) L_f b_F + lambda) / b_F`, with
/// `lambda = A(a) L_g b_F u_M`.
///
/// For `A = e^a` this is `-(L_f b_F + L_g b_F u_M) / b_F`, independent of `a`.
pub fn aux_dot(spec: &FeasibilitySpec, jet: &FeasibilityJet, a: f64) -> Result<f64, CbfError> {
    if jet.value.is_nan() || jet.value <= 0.0 {
        return Err(CbfError::FeasibilityLoss { b_f: jet.value });
    }
    let rate = match spec.aux {
        AuxiliaryFunction::Exponential => -(jet.drift + jet.lambda_unscaled()) / jet.value,
    };
    if !rate.is_finite() || !a.is_finite() {
        return Err(CbfError::Evaluation(format!(
            "non-finite auxiliary rate at a = {a}"
        )));
    }
    Ok(rate)
}

/// `A'(a) a' b_F + A(a) (L_f b_F + L_g b_F u) + k_F A(a) b_F >= epsilon`.
pub fn feasibility_constraint_row(
    spec: &FeasibilitySpec,
    jet: &FeasibilityJet,
    a: f64,
    a_dot: f64,
) -> ConstraintRow {
    let weight = spec.aux.value(a);
    let q = jet.actuated.len();
    let mut coeffs = DVector::zeros(q + 1);
    coeffs.rows_mut(0, q).copy_from(&(&jet.actuated * weight));
    let constant = spec.aux.derivative(a) * a_dot * jet.value
        + weight * jet.drift
        + spec.gain * weight * jet.value;
    ConstraintRow::new(
        coeffs,
        spec.epsilon - constant,
        Sense::GreaterEq,
        RowLabel::Feasibility,
    )
}

/// The feasibility row after substituting the closed-form `a'`:
/// `A(a) L_g b_F (u - u_M) + k_F A(a) b_F >= epsilon`.
pub fn reduced_feasibility_row(
    spec: &FeasibilitySpec,
    jet: &FeasibilityJet,
    a: f64,
) -> ConstraintRow {
    let weight = spec.aux.value(a);
    let q = jet.actuated.len();
    let scaled = &jet.actuated * weight;
    let mut coeffs = DVector::zeros(q + 1);
    coeffs.rows_mut(0, q).copy_from(&scaled);
    let bound = spec.epsilon + scaled.dot(&jet.u_m) - spec.gain * weight * jet.value;
    ConstraintRow::new(coeffs, bound, Sense::GreaterEq, RowLabel::Feasibility)
}

/// Sign of each component of `L_g L_f^{m-1} b`, captured as a reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignPattern(Vec<Ordering>);

impl SignPattern {
    pub fn of(v: &DVector<f64>) -> Self {
        Self(
            v.iter()
                .map(|c| c.partial_cmp(&0.0).unwrap_or(Ordering::Equal))
                .collect(),
        )
    }

    /// True when no component has flipped to the opposite strict sign. Zero
    /// is compatible with either sign, and a zero reference accepts anything.
    pub fn admits(&self, v: &DVector<f64>) -> bool {
        self.0.len() == v.len()
            && self
                .0
                .iter()
                .zip(Self::of(v).0)
                .all(|(r, c)| *r == Ordering::Equal || c == Ordering::Equal || *r == c)
    }

    pub fn has_zero(v: &DVector<f64>) -> bool {
        v.iter().any(|c| *c == 0.0)
    }
}

/// Sign-stability monitor: the coupling vector keeps its reference sign pattern.
pub fn assumption1_check(
    spec: &HocbfSpec,
    sys: &dyn SystemModel,
    t: f64,
    x: &DVector<f64>,
    reference: &SignPattern,
) -> Result<bool, CbfError> {
    check_state(sys, x)?;
    let jet = sys.barrier_jet(t, x)?;
    check_degree(spec, jet.check(sys.control_dim())?)?;
    Ok(reference.admits(jet.coupling()))
}

fn check_degree(spec: &HocbfSpec, m: usize) -> Result<(), CbfError> {
    if m != spec.relative_degree() {
        return Err(CbfError::DimensionMismatch {
            what: "relative degree",
            expected: spec.relative_degree(),
            actual: m,
        });
    }
    Ok(())
}

fn check_bounds(sys: &dyn SystemModel, bounds: &ControlBounds) -> Result<(), CbfError> {
    if bounds.dim() != sys.control_dim() {
        return Err(CbfError::DimensionMismatch {
            what: "control bounds",
            expected: sys.control_dim(),
            actual: bounds.dim(),
        });
    }
    Ok(())
}
