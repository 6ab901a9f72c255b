use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::CbfError;

/// High-order CBF with linear class-kappa gains `k_1..k_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct HocbfSpec {
    gains: Vec<f64>,
}

impl HocbfSpec {
    pub fn new(gains: Vec<f64>) -> Result<Self, CbfError> {
        if gains.is_empty() {
            return Err(CbfError::InvalidSpec(
                "relative degree must be at least 1".into(),
            ));
        }
        if let Some(k) = gains.iter().find(|k| !(k.is_finite() && **k > 0.0)) {
            return Err(CbfError::InvalidSpec(format!(
                "class-kappa gains must be positive and finite, got {k}"
            )));
        }
        Ok(Self { gains })
    }

    pub fn relative_degree(&self) -> usize {
        self.gains.len()
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }
}

/// Relaxed exponentially-stabilizing CLF: `L_f V + L_g V u + c3 V <= delta`,
/// with `p * delta^2` added to the QP cost.
///
/// The bounding constants `c1, c2` of the CLF definition only matter for the
/// existence argument and are not stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClfSpec {
    pub c3: f64,
    pub relax_weight: f64,
}

impl ClfSpec {
    pub fn new(c3: f64, relax_weight: f64) -> Result<Self, CbfError> {
        if !(c3.is_finite() && c3 > 0.0) {
            return Err(CbfError::InvalidSpec(format!(
                "CLF rate c3 must be positive, got {c3}"
            )));
        }
        if !(relax_weight.is_finite() && relax_weight > 0.0) {
            return Err(CbfError::InvalidSpec(format!(
                "CLF relaxation weight must be positive, got {relax_weight}"
            )));
        }
        Ok(Self { c3, relax_weight })
    }
}

/// Positive multiplier `A(a)` applied to the feasibility barrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuxiliaryFunction {
    /// `A(a) = e^a`.
    #[default]
    Exponential,
}

impl AuxiliaryFunction {
    pub fn value(self, a: f64) -> f64 {
        match self {
            Self::Exponential => a.exp(),
        }
    }

    /// `dA/da`.
    pub fn derivative(self, a: f64) -> f64 {
        match self {
            Self::Exponential => a.exp(),
        }
    }
}

/// Auxiliary-function CBF enforcing `b_F(x) > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilitySpec {
    /// Linear class-kappa gain `k_F`.
    pub gain: f64,
    /// Margin `epsilon` on the right-hand side of the row.
    pub epsilon: f64,
    /// Initial value of the auxiliary variable.
    pub a0: f64,
    pub aux: AuxiliaryFunction,
}

impl FeasibilitySpec {
    pub fn new(gain: f64, epsilon: f64, a0: f64) -> Result<Self, CbfError> {
        if !(gain.is_finite() && gain > 0.0) {
            return Err(CbfError::InvalidSpec(format!(
                "k_F must be positive, got {gain}"
            )));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(CbfError::InvalidSpec(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        if !a0.is_finite() {
            return Err(CbfError::InvalidSpec(format!(
                "a0 must be finite, got {a0}"
            )));
        }
        Ok(Self {
            gain,
            epsilon,
            a0,
            aux: AuxiliaryFunction::Exponential,
        })
    }
}

/// Box `u_min <= u <= u_max` with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBounds {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl ControlBounds {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self, CbfError> {
        if lower.len() != upper.len() {
            return Err(CbfError::DimensionMismatch {
                what: "control bounds",
                expected: lower.len(),
                actual: upper.len(),
            });
        }
        for (lo, hi) in lower.iter().zip(upper.iter()) {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(CbfError::InvalidSpec(
                    "control bounds must be finite".into(),
                ));
            }
            if lo > hi {
                return Err(CbfError::InvalidSpec(format!(
                    "control bound {lo} exceeds {hi}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn scalar(lower: f64, upper: f64) -> Result<Self, CbfError> {
        Self::new(
            DVector::from_element(1, lower),
            DVector::from_element(1, upper),
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn contains(&self, u: &DVector<f64>, tol: f64) -> bool {
        u.len() == self.dim()
            && u.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(v, (lo, hi))| *v >= lo - tol && *v <= hi + tol)
    }

    pub fn clamp(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            u.len(),
            u.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .map(|(v, (lo, hi))| v.clamp(*lo, *hi)),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_specs() {
        assert!(HocbfSpec::new(vec![]).is_err());
        assert!(HocbfSpec::new(vec![1.0, 0.0]).is_err());
        assert!(HocbfSpec::new(vec![1.0, f64::NAN]).is_err());
        assert!(ClfSpec::new(0.0, 1.0).is_err());
        assert!(ClfSpec::new(1.0, -1.0).is_err());
        assert!(FeasibilitySpec::new(0.1, 0.0, 1.0).is_err());
        assert!(FeasibilitySpec::new(-0.1, 1e-10, 1.0).is_err());
        assert!(ControlBounds::scalar(1.0, -1.0).is_err());
        assert!(ControlBounds::scalar(f64::NEG_INFINITY, 1.0).is_err());
    }

    #[test]
    fn exponential_aux_is_positive() {
        for a in [-700.0, -1.0, 0.0, 1.0, 50.0] {
            assert!(AuxiliaryFunction::Exponential.value(a) > 0.0);
        }
    }
}
