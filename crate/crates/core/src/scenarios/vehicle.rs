use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::ScenarioError;

pub const GRAVITY: f64 = 9.81;

/// `F_r(v) = f0 sgn(v) + f1 v + f2 v^2`, defined for `v > 0` only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resistance {
    pub f0: f64,
    pub f1: f64,
    pub f2: f64,
}

impl Default for Resistance {
    fn default() -> Self {
        Self {
            f0: 0.1,
            f1: 5.0,
            f2: 0.25,
        }
    }
}

impl Resistance {
    pub fn force(&self, v: f64) -> Result<f64, ScenarioError> {
        check_speed(v)?;
        Ok(self.f0 + self.f1 * v + self.f2 * v * v)
    }

    /// `dF_r/dv`; the Coulomb term is constant for `v > 0`.
    pub fn slope(&self, v: f64) -> Result<f64, ScenarioError> {
        check_speed(v)?;
        Ok(self.f1 + 2.0 * self.f2 * v)
    }
}

fn check_speed(v: f64) -> Result<(), ScenarioError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ScenarioError::Domain(format!(
            "resistance model needs a positive speed, got {v}"
        )))
    }
}

/// Per-vehicle parameters. The lead vehicle only uses mass, friction and
/// initial conditions; the controller fields apply to followers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    /// kg
    pub mass: f64,
    pub f0: f64,
    pub f1: f64,
    pub f2: f64,
    /// Deceleration coefficient, `u >= -c_d M g`.
    pub c_d: f64,
    /// Acceleration coefficient, `u <= c_a M g`.
    pub c_a: f64,
    /// Desired speed for the CLF, m/s.
    pub v_d: f64,
    pub k1: f64,
    pub k2: f64,
    /// Gain of the auxiliary feasibility CBF.
    pub l_f: f64,
    pub c3: f64,
    pub p: f64,
    pub epsilon: f64,
    pub a0: f64,
    /// Initial position, m.
    pub x0: f64,
    /// Initial speed, m/s.
    pub v0: f64,
}

impl VehicleParams {
    pub fn resistance(&self) -> Resistance {
        Resistance {
            f0: self.f0,
            f1: self.f1,
            f2: self.f2,
        }
    }

    pub fn validate(&self, name: &str) -> Result<(), ScenarioError> {
        let positive = [
            ("mass", self.mass),
            ("f0", self.f0),
            ("f1", self.f1),
            ("f2", self.f2),
            ("c_d", self.c_d),
            ("c_a", self.c_a),
            ("v_d", self.v_d),
            ("k1", self.k1),
            ("k2", self.k2),
            ("l_f", self.l_f),
            ("c3", self.c3),
            ("p", self.p),
            ("epsilon", self.epsilon),
            ("v0", self.v0),
        ];
        for (key, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ScenarioError::Config(format!(
                    "{name}.{key} must be positive and finite, got {value}"
                )));
            }
        }
        for (key, value) in [("a0", self.a0), ("x0", self.x0)] {
            if !value.is_finite() {
                return Err(ScenarioError::Config(format!(
                    "{name}.{key} must be finite"
                )));
            }
        }
        Ok(())
    }
}

pub fn resistance_force(params: &VehicleParams, v: f64) -> Result<f64, ScenarioError> {
    params.resistance().force(v)
}

pub fn resistance_force_slope(params: &VehicleParams, v: f64) -> Result<f64, ScenarioError> {
    params.resistance().slope(v)
}

/// Open-loop lead control `u_1 = 2 M_1 sin(2 pi t) + F_r(v_1)`, which gives
/// the lead an acceleration of exactly `2 sin(2 pi t)`.
pub fn lead_control(params: &VehicleParams, t: f64, v1: f64) -> Result<f64, ScenarioError> {
    Ok(2.0 * params.mass * (2.0 * PI * t).sin() + resistance_force(params, v1)?)
}

pub fn lead_acceleration(t: f64) -> f64 {
    2.0 * (2.0 * PI * t).sin()
}

pub fn lead_jerk(t: f64) -> f64 {
    4.0 * PI * (2.0 * PI * t).cos()
}
