use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{check_state, psi_coefficients, CbfError, ClfSpec, HocbfSpec, SystemModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    #[serde(rename = ">=")]
    GreaterEq,
    #[serde(rename = "<=")]
    LessEq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowLabel {
    Hocbf,
    Clf,
    Feasibility,
    Bounds,
}

/// One linear constraint `coeffs . (u, delta) {>=,<=} bound`.
///
/// Rows are stored exactly as assembled; any normalization happens inside the
/// QP solver.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub coeffs: DVector<f64>,
    pub bound: f64,
    pub sense: Sense,
    pub label: RowLabel,
}

impl ConstraintRow {
    pub fn new(coeffs: DVector<f64>, bound: f64, sense: Sense, label: RowLabel) -> Self {
        Self {
            coeffs,
            bound,
            sense,
            label,
        }
    }

    pub fn lhs(&self, z: &DVector<f64>) -> f64 {
        self.coeffs.dot(z)
    }

    /// Signed slack; non-negative iff the row holds at `z`.
    pub fn margin(&self, z: &DVector<f64>) -> f64 {
        match self.sense {
            Sense::GreaterEq => self.lhs(z) - self.bound,
            Sense::LessEq => self.bound - self.lhs(z),
        }
    }

    pub fn is_satisfied(&self, z: &DVector<f64>, tol: f64) -> bool {
        self.margin(z) >= -tol
    }

    /// Margin with `delta = 0` and the controls set to `u`.
    pub fn margin_at_controls(&self, u: &DVector<f64>) -> f64 {
        let mut z = DVector::zeros(self.coeffs.len());
        z.rows_mut(0, u.len()).copy_from(u);
        self.margin(&z)
    }

    /// The same half-space written as `a . z <= b`.
    pub fn as_less_eq(&self) -> (DVector<f64>, f64) {
        match self.sense {
            Sense::LessEq => (self.coeffs.clone(), self.bound),
            Sense::GreaterEq => (-&self.coeffs, -self.bound),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.bound.is_finite() && self.coeffs.iter().all(|c| c.is_finite())
    }
}

/// `psi_0 .. psi_{m-1}` at `(t, x)`.
pub fn psi_sequence(
    spec: &HocbfSpec,
    sys: &dyn SystemModel,
    t: f64,
    x: &DVector<f64>,
) -> Result<Vec<f64>, CbfError> {
    check_state(sys, x)?;
    let jet = sys.barrier_jet(t, x)?;
    let m = jet.check(sys.control_dim())?;
    if m != spec.relative_degree() {
        return Err(CbfError::DimensionMismatch {
            what: "relative degree",
            expected: spec.relative_degree(),
            actual: m,
        });
    }
    Ok((0..m)
        .map(|i| {
            psi_coefficients(spec.gains(), i)
                .iter()
                .zip(&jet.drift)
                .map(|(c, d)| c * d)
                .sum()
        })
        .collect())
}

/// The m-th order HOCBF condition
/// `L_f^m b + L_g L_f^{m-1} b u + O(b) + k_m psi_{m-1} >= 0` as a row.
///
/// With linear gains the lower-order terms collapse to
/// `sum_{j<m} c_j L_f^j b`, where `c` are the coefficients of
/// `prod_i (D + k_i)`.
pub fn hocbf_constraint_row(
    spec: &HocbfSpec,
    sys: &dyn SystemModel,
    t: f64,
    x: &DVector<f64>,
) -> Result<ConstraintRow, CbfError> {
    check_state(sys, x)?;
    let q = sys.control_dim();
    let jet = sys.barrier_jet(t, x)?;
    let m = jet.check(q)?;
    if m != spec.relative_degree() {
        return Err(CbfError::DimensionMismatch {
            what: "relative degree",
            expected: spec.relative_degree(),
            actual: m,
        });
    }
    let constant = drift_part(spec, &jet.drift);
    let mut coeffs = DVector::zeros(q + 1);
    coeffs.rows_mut(0, q).copy_from(jet.coupling());
    Ok(ConstraintRow::new(
        coeffs,
        -constant,
        Sense::GreaterEq,
        super::RowLabel::Hocbf,
    ))
}

/// `L_f^m b + sum_{j<m} c_j L_f^j b`, i.e. the u-free part of `psi_m`.
pub(crate) fn drift_part(spec: &HocbfSpec, drift: &[f64]) -> f64 {
    let m = spec.relative_degree();
    let coeffs = psi_coefficients(spec.gains(), m);
    coeffs.iter().zip(drift).map(|(c, d)| c * d).sum()
}

/// Relaxed CLF condition `L_f V + L_g V u + c3 V - delta <= 0`.
pub fn clf_constraint_row(
    spec: &ClfSpec,
    sys: &dyn SystemModel,
    t: f64,
    x: &DVector<f64>,
) -> Result<ConstraintRow, CbfError> {
    check_state(sys, x)?;
    let q = sys.control_dim();
    let jet = sys
        .lyapunov_jet(t, x)?
        .ok_or_else(|| CbfError::InvalidSpec("system has no Lyapunov function".into()))?;
    if jet.actuated.len() != q {
        return Err(CbfError::DimensionMismatch {
            what: "L_g V",
            expected: q,
            actual: jet.actuated.len(),
        });
    }
    if jet.value < 0.0 {
        return Err(CbfError::Evaluation(format!(
            "Lyapunov value {} is negative",
            jet.value
        )));
    }
    let mut coeffs = DVector::zeros(q + 1);
    coeffs.rows_mut(0, q).copy_from(&jet.actuated);
    coeffs[q] = -1.0;
    Ok(ConstraintRow::new(
        coeffs,
        -(jet.drift + spec.c3 * jet.value),
        Sense::LessEq,
        super::RowLabel::Clf,
    ))
}
