//! Control barrier function mathematics.
//!
//! Everything in here is a pure function of its inputs. A scenario supplies a
//! [`SystemModel`], which exposes the control-affine dynamics together with the
//! analytic Lie derivatives of its safety barrier and (optionally) its Lyapunov
//! function. The functions in this module turn those quantities into linear
//! constraint rows over the decision vector `(u_1, .., u_q, delta)`.
//!
//! All class-kappa functions are linear, `alpha_i(s) = k_i * s`.

mod feasibility;
mod rows;
mod spec;

pub use feasibility::{
    assumption1_check, aux_dot, compute_u_m, feasibility_constraint_row, feasibility_jet,
    feasibility_value, reduced_feasibility_row, FeasibilityJet, SignPattern,
};
pub use rows::{
    clf_constraint_row, hocbf_constraint_row, psi_sequence, ConstraintRow, RowLabel, Sense,
};
pub use spec::{AuxiliaryFunction, ClfSpec, ControlBounds, FeasibilitySpec, HocbfSpec};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CbfError {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("model evaluation failed: {0}")]
    Evaluation(String),
    #[error("feasibility lost: b_F = {b_f:e} is not strictly positive")]
    FeasibilityLoss { b_f: f64 },
}

/// Lie derivatives of a barrier `b` with relative degree `m`.
///
/// `L_f` derivatives include any explicit time dependence (exogenous signals),
/// so `drift[j + 1]` is the derivative of `drift[j]` along the drift vector
/// field in `(t, x)` space.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierJet {
    /// `L_f^j b` for `j = 0..=m+1`.
    pub drift: Vec<f64>,
    /// `L_g L_f^j b` for `j = 0..=m`, each a q-vector. Entries below `m - 1`
    /// vanish for a barrier of relative degree `m`.
    pub actuated: Vec<DVector<f64>>,
    /// `L_f (L_g L_f^{m-1} b)`.
    pub drift_of_coupling: DVector<f64>,
    /// `L_g (L_g L_f^{m-1} b)`; entry `(l, i)` is the derivative of component
    /// `l` of the coupling vector along column `i` of `g`.
    pub actuated_of_coupling: DMatrix<f64>,
}

impl BarrierJet {
    pub fn relative_degree(&self) -> usize {
        self.drift.len().saturating_sub(2)
    }

    /// `L_g L_f^{m-1} b`, the coefficient of `u` in the m-th order condition.
    pub fn coupling(&self) -> &DVector<f64> {
        &self.actuated[self.relative_degree() - 1]
    }

    pub(crate) fn check(&self, q: usize) -> Result<usize, CbfError> {
        let m = self.relative_degree();
        if m == 0 {
            return Err(CbfError::InvalidSpec(
                "barrier jet must carry at least L_f^0 b .. L_f^2 b".into(),
            ));
        }
        if self.actuated.len() != m + 1 {
            return Err(CbfError::DimensionMismatch {
                what: "barrier jet actuated terms",
                expected: m + 1,
                actual: self.actuated.len(),
            });
        }
        for v in self.actuated.iter().chain([&self.drift_of_coupling]) {
            if v.len() != q {
                return Err(CbfError::DimensionMismatch {
                    what: "barrier jet control vector",
                    expected: q,
                    actual: v.len(),
                });
            }
        }
        if self.actuated_of_coupling.shape() != (q, q) {
            return Err(CbfError::DimensionMismatch {
                what: "barrier jet coupling derivative",
                expected: q,
                actual: self.actuated_of_coupling.nrows(),
            });
        }
        Ok(m)
    }
}

/// `V`, `L_f V` and `L_g V` at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovJet {
    pub value: f64,
    pub drift: f64,
    pub actuated: DVector<f64>,
}

/// Control-affine system `x' = f(t, x) + g(t, x) u` plus the Lie-derivative
/// bundle its constraints need.
///
/// Models are immutable; every method is a pure function of `(t, x)`.
pub trait SystemModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn drift(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>, CbfError>;
    fn actuation(&self, t: f64, x: &DVector<f64>) -> Result<DMatrix<f64>, CbfError>;
    fn barrier_jet(&self, t: f64, x: &DVector<f64>) -> Result<BarrierJet, CbfError>;
    fn lyapunov_jet(&self, _t: f64, _x: &DVector<f64>) -> Result<Option<LyapunovJet>, CbfError> {
        Ok(None)
    }
}

pub(crate) fn check_state(sys: &dyn SystemModel, x: &DVector<f64>) -> Result<(), CbfError> {
    if x.len() != sys.state_dim() {
        return Err(CbfError::DimensionMismatch {
            what: "state",
            expected: sys.state_dim(),
            actual: x.len(),
        });
    }
    Ok(())
}

/// Coefficients `c` with `psi_i = sum_j c[j] * L_f^j b`, obtained by expanding
/// `psi_i = psi_{i-1}' + k_i psi_{i-1}` with linear class-kappa functions.
pub(crate) fn psi_coefficients(gains: &[f64], order: usize) -> Vec<f64> {
    let mut coeffs = vec![1.0];
    for &k in &gains[..order] {
        let mut next = vec![0.0; coeffs.len() + 1];
        for (j, c) in coeffs.iter().enumerate() {
            next[j] += k * c;
            next[j + 1] += c;
        }
        coeffs = next;
    }
    coeffs
}
