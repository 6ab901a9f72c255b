//! Simplified adaptive cruise control: gap `z` to a lead at constant speed.
//!
//! ```text
//!     z' = v_p - v,   v' = u,   b = z - l_p
//! ```

use nalgebra::{dvector, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::cbf::{BarrierJet, CbfError, ControlBounds, FeasibilitySpec, HocbfSpec, SystemModel};
use crate::sim::{AgentModel, AgentSpec, Body, Plant};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaccModel {
    pub lead_speed: f64,
    pub safe_distance: f64,
}

impl SystemModel for SaccModel {
    fn state_dim(&self) -> usize {
        2
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn drift(&self, _t: f64, x: &DVector<f64>) -> Result<DVector<f64>, CbfError> {
        Ok(dvector![self.lead_speed - x[1], 0.0])
    }

    fn actuation(&self, _t: f64, _x: &DVector<f64>) -> Result<DMatrix<f64>, CbfError> {
        Ok(DMatrix::from_column_slice(2, 1, &[0.0, 1.0]))
    }

    fn barrier_jet(&self, _t: f64, x: &DVector<f64>) -> Result<BarrierJet, CbfError> {
        Ok(BarrierJet {
            drift: vec![x[0] - self.safe_distance, self.lead_speed - x[1], 0.0, 0.0],
            actuated: vec![dvector![0.0], dvector![-1.0], dvector![0.0]],
            drift_of_coupling: dvector![0.0],
            actuated_of_coupling: DMatrix::zeros(1, 1),
        })
    }
}

/// Illustrative parameters; the example carries no numbers of its own. The
/// default start closes on the lead fast enough that, without the
/// feasibility constraint, the safety row eventually leaves the bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaccParams {
    pub lead_speed: f64,
    pub safe_distance: f64,
    pub k1: f64,
    pub k2: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub z0: f64,
    pub v0: f64,
    pub k_f: f64,
    pub epsilon: f64,
    pub a0: f64,
}

impl Default for SaccParams {
    fn default() -> Self {
        Self {
            lead_speed: 13.89,
            safe_distance: 10.0,
            k1: 0.1,
            k2: 0.1,
            u_min: -1.178,
            u_max: 1.178,
            z0: 1000.0,
            v0: 50.0,
            k_f: 0.1,
            epsilon: 1e-10,
            a0: 0.0,
        }
    }
}

impl SaccParams {
    /// Same example with a braking limit loose enough that the safety row
    /// never conflicts with the bounds.
    pub fn generous() -> Self {
        Self {
            u_min: -100.0,
            ..Self::default()
        }
    }
}

struct SaccAgent<'a> {
    model: &'a SaccModel,
}

impl AgentModel for SaccAgent<'_> {
    fn system(&self) -> &dyn SystemModel {
        self.model
    }

    fn local_state(&self, plant: &DVector<f64>) -> DVector<f64> {
        plant.clone()
    }

    fn control_cost(
        &self,
        _t: f64,
        _x: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DVector<f64>), CbfError> {
        Ok((DMatrix::from_element(1, 1, 2.0), dvector![0.0]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaccPlant {
    pub params: SaccParams,
    pub model: SaccModel,
    agents: Vec<AgentSpec>,
    bodies: Vec<Body>,
}

pub fn build_sacc(params: &SaccParams) -> Result<SaccPlant, ScenarioError> {
    if !(params.lead_speed > 0.0 && params.lead_speed.is_finite()) {
        return Err(ScenarioError::Config(format!(
            "sacc.lead_speed must be positive, got {}",
            params.lead_speed
        )));
    }
    let cfg = |e: CbfError| ScenarioError::Config(format!("sacc: {e}"));
    let hocbf = HocbfSpec::new(vec![params.k1, params.k2]).map_err(cfg)?;
    let feasibility = FeasibilitySpec::new(params.k_f, params.epsilon, params.a0).map_err(cfg)?;
    let bounds = ControlBounds::scalar(params.u_min, params.u_max).map_err(cfg)?;
    Ok(SaccPlant {
        params: params.clone(),
        model: SaccModel {
            lead_speed: params.lead_speed,
            safe_distance: params.safe_distance,
        },
        agents: vec![AgentSpec {
            label: "ego".into(),
            hocbf,
            clf: None,
            feasibility,
            bounds,
        }],
        bodies: vec![Body {
            label: "ego".into(),
            position: 0,
            velocity: 1,
            agent: Some(0),
        }],
    })
}

impl Plant for SaccPlant {
    fn state_dim(&self) -> usize {
        2
    }

    fn initial_state(&self) -> DVector<f64> {
        dvector![self.params.z0, self.params.v0]
    }

    fn agents(&self) -> &[AgentSpec] {
        &self.agents
    }

    fn bodies(&self) -> &[Body] {
        &self.bodies
    }

    fn agent_model<'a>(
        &'a self,
        index: usize,
        _upstream: &[DVector<f64>],
    ) -> Result<Box<dyn AgentModel + 'a>, CbfError> {
        if index != 0 {
            return Err(CbfError::InvalidSpec(format!("sacc has no agent {index}")));
        }
        Ok(Box::new(SaccAgent { model: &self.model }))
    }

    fn derivative(
        &self,
        t: f64,
        x: &DVector<f64>,
        controls: &[DVector<f64>],
    ) -> Result<DVector<f64>, CbfError> {
        let u = controls
            .first()
            .ok_or_else(|| CbfError::InvalidSpec("missing sacc control".into()))?;
        let f = self.model.drift(t, x)?;
        Ok(f + self.model.actuation(t, x)? * u)
    }
}
