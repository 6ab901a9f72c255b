//! Three-vehicle heterogeneous platoon. Vehicle 1 runs open loop; vehicles 2
//! and 3 each solve their own QP with the vehicle ahead as a known signal.
//!
//! ```text
//!     x_j' = v_j,   v_j' = (u_j - F_r(v_j)) / M_j,   b_j = x_{j-1} - x_j - l_p
//! ```

use nalgebra::{dvector, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::vehicle::{
    lead_acceleration, lead_control, lead_jerk, Resistance, VehicleParams, GRAVITY,
};
use super::ScenarioError;
use crate::cbf::{
    BarrierJet, CbfError, ClfSpec, ControlBounds, FeasibilitySpec, HocbfSpec, LyapunovJet,
    SystemModel,
};
use crate::sim::{AgentModel, AgentSpec, Body, Plant};

/// What a follower knows about the vehicle ahead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LeadMotion {
    /// Open-loop lead with acceleration `2 sin(2 pi t)`.
    Sinusoid,
    /// Another follower holding `control` over the current interval.
    Follower {
        mass: f64,
        resistance: Resistance,
        control: f64,
    },
}

impl LeadMotion {
    pub fn acceleration(&self, t: f64, v: f64) -> Result<f64, ScenarioError> {
        match self {
            Self::Sinusoid => Ok(lead_acceleration(t)),
            Self::Follower {
                mass,
                resistance,
                control,
            } => Ok((control - resistance.force(v)?) / mass),
        }
    }

    /// Time derivative of the acceleration along the lead's own motion.
    pub fn jerk(&self, t: f64, v: f64) -> Result<f64, ScenarioError> {
        match self {
            Self::Sinusoid => Ok(lead_jerk(t)),
            Self::Follower {
                mass, resistance, ..
            } => Ok(-resistance.slope(v)? * self.acceleration(t, v)? / mass),
        }
    }
}

/// Local model of one follower, state `(x_lead, v_lead, x, v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowerModel {
    pub lead: LeadMotion,
    pub mass: f64,
    pub resistance: Resistance,
    pub safe_distance: f64,
    pub desired_speed: f64,
}

impl SystemModel for FollowerModel {
    fn state_dim(&self) -> usize {
        4
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn drift(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>, CbfError> {
        Ok(dvector![
            x[1],
            self.lead.acceleration(t, x[1])?,
            x[3],
            -self.resistance.force(x[3])? / self.mass
        ])
    }

    fn actuation(&self, _t: f64, _x: &DVector<f64>) -> Result<DMatrix<f64>, CbfError> {
        Ok(DMatrix::from_column_slice(
            4,
            1,
            &[0.0, 0.0, 0.0, 1.0 / self.mass],
        ))
    }

    fn barrier_jet(&self, t: f64, x: &DVector<f64>) -> Result<BarrierJet, CbfError> {
        let m = self.mass;
        let (v_l, v) = (x[1], x[3]);
        let fr = self.resistance.force(v)?;
        let slope = self.resistance.slope(v)?;
        Ok(BarrierJet {
            drift: vec![
                x[0] - x[2] - self.safe_distance,
                v_l - v,
                self.lead.acceleration(t, v_l)? + fr / m,
                self.lead.jerk(t, v_l)? - slope * fr / (m * m),
            ],
            actuated: vec![dvector![0.0], dvector![-1.0 / m], dvector![slope / (m * m)]],
            drift_of_coupling: dvector![0.0],
            actuated_of_coupling: DMatrix::zeros(1, 1),
        })
    }

    fn lyapunov_jet(&self, _t: f64, x: &DVector<f64>) -> Result<Option<LyapunovJet>, CbfError> {
        let e = x[3] - self.desired_speed;
        let fr = self.resistance.force(x[3])?;
        Ok(Some(LyapunovJet {
            value: e * e,
            drift: -2.0 * e * fr / self.mass,
            actuated: dvector![2.0 * e / self.mass],
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccCase {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

impl AccCase {
    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(Self::One),
            2 => Some(Self::Two),
            _ => None,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Self::One => 1,
            Self::Two => 2,
        }
    }

    /// Preset parameters of vehicles 1, 2 and 3.
    pub fn vehicles(self) -> [VehicleParams; 3] {
        let (l_f, c_d) = match self {
            Self::One => (0.1, [0.4, 0.35]),
            Self::Two => (0.05, [0.2, 0.25]),
        };
        let base = VehicleParams {
            mass: 1500.0,
            f0: 0.1,
            f1: 5.0,
            f2: 0.25,
            c_d: c_d[0],
            c_a: 0.4,
            v_d: 24.0,
            k1: 1.0,
            k2: 1.0,
            l_f,
            c3: 1.0,
            p: 1000.0,
            epsilon: 1e-10,
            a0: 1.0,
            x0: 0.0,
            v0: 13.89,
        };
        [
            base.clone(),
            VehicleParams {
                mass: 1650.0,
                x0: -100.0,
                v0: 8.0,
                ..base.clone()
            },
            VehicleParams {
                mass: 1550.0,
                c_d: c_d[1],
                c_a: 0.35,
                v_d: 25.0,
                x0: -190.0,
                v0: 14.0,
                ..base
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatoonParams {
    pub safe_distance: f64,
    pub gravity: f64,
    pub vehicles: [VehicleParams; 3],
}

impl PlatoonParams {
    pub fn case(case: AccCase) -> Self {
        Self {
            safe_distance: 10.0,
            gravity: GRAVITY,
            vehicles: case.vehicles(),
        }
    }
}

struct FollowerAgent {
    model: FollowerModel,
    lead_body: usize,
    body: usize,
}

impl AgentModel for FollowerAgent {
    fn system(&self) -> &dyn SystemModel {
        &self.model
    }

    fn local_state(&self, plant: &DVector<f64>) -> DVector<f64> {
        let (l, j) = (2 * self.lead_body, 2 * self.body);
        dvector![plant[l], plant[l + 1], plant[j], plant[j + 1]]
    }

    /// `((u - F_r(v)) / M)^2`
    fn control_cost(
        &self,
        _t: f64,
        x: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DVector<f64>), CbfError> {
        let m2 = self.model.mass * self.model.mass;
        let fr = self.model.resistance.force(x[3])?;
        Ok((
            DMatrix::from_element(1, 1, 2.0 / m2),
            dvector![-2.0 * fr / m2],
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccPlatoon {
    pub params: PlatoonParams,
    agents: Vec<AgentSpec>,
    bodies: Vec<Body>,
}

pub fn build_acc_platoon(params: &PlatoonParams) -> Result<AccPlatoon, ScenarioError> {
    let [v1, v2, v3] = &params.vehicles;
    for (i, v) in params.vehicles.iter().enumerate() {
        v.validate(&format!("vehicle{}", i + 1))?;
    }
    for (key, value) in [
        ("safe_distance", params.safe_distance),
        ("gravity", params.gravity),
    ] {
        if !(value.is_finite() && value > 0.0) {
            return Err(ScenarioError::Config(format!(
                "platoon.{key} must be positive, got {value}"
            )));
        }
    }
    if !(v1.x0 > v2.x0 && v2.x0 > v3.x0) {
        return Err(ScenarioError::Config(format!(
            "initial positions must satisfy x1 > x2 > x3, got {}, {}, {}",
            v1.x0, v2.x0, v3.x0
        )));
    }
    let cfg = |e: CbfError| ScenarioError::Config(e.to_string());
    let agents = [("2", v2), ("3", v3)]
        .into_iter()
        .map(|(label, v)| {
            Ok(AgentSpec {
                label: label.into(),
                hocbf: HocbfSpec::new(vec![v.k1, v.k2]).map_err(cfg)?,
                clf: Some(ClfSpec::new(v.c3, v.p).map_err(cfg)?),
                feasibility: FeasibilitySpec::new(v.l_f, v.epsilon, v.a0).map_err(cfg)?,
                bounds: ControlBounds::scalar(
                    -v.c_d * v.mass * params.gravity,
                    v.c_a * v.mass * params.gravity,
                )
                .map_err(cfg)?,
            })
        })
        .collect::<Result<Vec<_>, ScenarioError>>()?;
    let bodies = (0..3)
        .map(|j| Body {
            label: (j + 1).to_string(),
            position: 2 * j,
            velocity: 2 * j + 1,
            agent: j.checked_sub(1),
        })
        .collect();
    Ok(AccPlatoon {
        params: params.clone(),
        agents,
        bodies,
    })
}

impl AccPlatoon {
    fn follower(&self, index: usize, lead: LeadMotion) -> FollowerAgent {
        let v = &self.params.vehicles[index + 1];
        FollowerAgent {
            model: FollowerModel {
                lead,
                mass: v.mass,
                resistance: v.resistance(),
                safe_distance: self.params.safe_distance,
                desired_speed: v.v_d,
            },
            lead_body: index,
            body: index + 1,
        }
    }
}

impl Plant for AccPlatoon {
    fn state_dim(&self) -> usize {
        6
    }

    fn initial_state(&self) -> DVector<f64> {
        DVector::from_iterator(6, self.params.vehicles.iter().flat_map(|v| [v.x0, v.v0]))
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
        upstream: &[DVector<f64>],
    ) -> Result<Box<dyn AgentModel + 'a>, CbfError> {
        let lead = match index {
            0 => LeadMotion::Sinusoid,
            1 => {
                let u = upstream.first().ok_or_else(|| {
                    CbfError::InvalidSpec("vehicle 3 needs vehicle 2's control".into())
                })?;
                let v2 = &self.params.vehicles[1];
                LeadMotion::Follower {
                    mass: v2.mass,
                    resistance: v2.resistance(),
                    control: u[0],
                }
            }
            _ => {
                return Err(CbfError::InvalidSpec(format!(
                    "platoon has no agent {index}"
                )))
            }
        };
        Ok(Box::new(self.follower(index, lead)))
    }

    fn derivative(
        &self,
        t: f64,
        x: &DVector<f64>,
        controls: &[DVector<f64>],
    ) -> Result<DVector<f64>, CbfError> {
        if controls.len() != 2 {
            return Err(CbfError::DimensionMismatch {
                what: "platoon controls",
                expected: 2,
                actual: controls.len(),
            });
        }
        let vs = &self.params.vehicles;
        let u = [
            lead_control(&vs[0], t, x[1])?,
            controls[0][0],
            controls[1][0],
        ];
        let mut dx = DVector::zeros(6);
        for j in 0..3 {
            let v = x[2 * j + 1];
            dx[2 * j] = v;
            dx[2 * j + 1] = (u[j] - vs[j].resistance().force(v)?) / vs[j].mass;
        }
        Ok(dx)
    }

    fn open_loop_control(
        &self,
        body: usize,
        t: f64,
        x: &DVector<f64>,
    ) -> Result<Option<f64>, CbfError> {
        if body == 0 {
            Ok(Some(lead_control(&self.params.vehicles[0], t, x[1])?))
        } else {
            Ok(None)
        }
    }
}
