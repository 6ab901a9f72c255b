//! Sample-and-hold CBF-CLF-QP loop.
//!
//! At each grid time `t_k = k dt` every controlled agent assembles its rows
//! from the current plant state, solves its QP and holds the result over
//! `[t_k, t_k + dt)`. Agents are solved in order, and agent `i` sees the
//! controls already chosen by agents `0..i` (the decentralized platoon
//! ordering). Plant state and auxiliary variables are integrated together.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cbf::{
    aux_dot, clf_constraint_row, feasibility_constraint_row, feasibility_jet, hocbf_constraint_row,
    psi_sequence, CbfError, ClfSpec, ConstraintRow, ControlBounds, FeasibilityJet, FeasibilitySpec,
    HocbfSpec, SignPattern, SystemModel,
};
use crate::ode::{DormandPrince, IntegrationError};
use crate::qp::{ActiveSetSolver, QpError, QpProblem, QpSolution, QpStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("model evaluation failed at t = {t}: {source}")]
    Model { t: f64, source: CbfError },
    #[error("qp error at t = {t}: {source}")]
    Qp { t: f64, source: QpError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfeasibilityPolicy {
    Abort,
    DropControlBounds,
    ClampToBounds,
}

impl InfeasibilityPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Abort => "abort",
            Self::DropControlBounds => "drop-control-bounds",
            Self::ClampToBounds => "clamp-to-bounds",
        }
    }
}

impl fmt::Display for InfeasibilityPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InfeasibilityPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "abort" => Ok(Self::Abort),
            "drop-control-bounds" => Ok(Self::DropControlBounds),
            "clamp-to-bounds" => Ok(Self::ClampToBounds),
            other => Err(format!("unknown infeasibility policy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t_end: f64,
    pub dt: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub policy: InfeasibilityPolicy,
    pub feasibility_enabled: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t_end: 30.0,
            dt: 0.1,
            abs_tol: 1e-9,
            rel_tol: 1e-7,
            policy: InfeasibilityPolicy::Abort,
            feasibility_enabled: true,
        }
    }
}

impl SimConfig {
    /// Number of control intervals `N = T / dt`.
    pub fn intervals(&self) -> Result<usize, SimError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(SimError::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(SimError::Config(format!(
                "t_end must be non-negative, got {}",
                self.t_end
            )));
        }
        for (name, tol) in [("abs_tol", self.abs_tol), ("rel_tol", self.rel_tol)] {
            if !(tol.is_finite() && tol > 0.0) {
                return Err(SimError::Config(format!(
                    "{name} must be positive, got {tol}"
                )));
            }
        }
        let n = (self.t_end / self.dt).round();
        if (n * self.dt - self.t_end).abs() > 1e-12 * self.t_end.max(1.0) {
            return Err(SimError::Config(format!(
                "t_end = {} is not a multiple of dt = {}",
                self.t_end, self.dt
            )));
        }
        Ok(n as usize)
    }
}

/// One controlled agent's constraint set.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub label: String,
    pub hocbf: HocbfSpec,
    pub clf: Option<ClfSpec>,
    pub feasibility: FeasibilitySpec,
    pub bounds: ControlBounds,
}

impl AgentSpec {
    /// Weight `p` on `delta^2`. Without a CLF the relaxation is inert and
    /// gets unit weight.
    pub fn relax_weight(&self) -> f64 {
        self.clf.as_ref().map_or(1.0, |c| c.relax_weight)
    }
}

/// A reported body of the plant (a vehicle). Columns of the trace are laid
/// out per body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Body {
    pub label: String,
    pub position: usize,
    pub velocity: usize,
    pub agent: Option<usize>,
}

/// The agent's view of the plant: a local control-affine model plus the
/// cost it minimizes.
pub trait AgentModel: Send + Sync {
    fn system(&self) -> &dyn SystemModel;
    /// Extract the local model state from the full plant state.
    fn local_state(&self, plant: &DVector<f64>) -> DVector<f64>;
    /// `(H_u, c_u)` of the control part of `1/2 u' H_u u + c_u' u`.
    fn control_cost(
        &self,
        t: f64,
        x: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DVector<f64>), CbfError>;
}

/// Whole simulated system.
pub trait Plant: Send + Sync {
    fn state_dim(&self) -> usize;
    fn initial_state(&self) -> DVector<f64>;
    fn agents(&self) -> &[AgentSpec];
    fn bodies(&self) -> &[Body];
    /// Model for agent `index`, given the controls already chosen by the
    /// agents before it.
    fn agent_model<'a>(
        &'a self,
        index: usize,
        upstream: &[DVector<f64>],
    ) -> Result<Box<dyn AgentModel + 'a>, CbfError>;
    fn derivative(
        &self,
        t: f64,
        x: &DVector<f64>,
        controls: &[DVector<f64>],
    ) -> Result<DVector<f64>, CbfError>;
    /// Control of an uncontrolled body, for reporting.
    fn open_loop_control(
        &self,
        _body: usize,
        _t: f64,
        _x: &DVector<f64>,
    ) -> Result<Option<f64>, CbfError> {
        Ok(None)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentFlags {
    pub infeasible: bool,
    pub bounds_dropped: bool,
    pub clamped: bool,
    pub assumption1_violated: bool,
    pub coupling_zero: bool,
}

impl AgentFlags {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    pub fn names(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for (on, name) in [
            (self.infeasible, "infeasible"),
            (self.bounds_dropped, "bounds-dropped"),
            (self.clamped, "clamped"),
            (self.assumption1_violated, "assumption1-violated"),
            (self.coupling_zero, "coupling-zero"),
        ] {
            if on {
                out.push(name);
            }
        }
        out
    }

    pub fn parse(names: &str) -> Result<Self, String> {
        let mut flags = Self::default();
        for name in names.split('|').filter(|s| !s.is_empty()) {
            match name {
                "infeasible" => flags.infeasible = true,
                "bounds-dropped" => flags.bounds_dropped = true,
                "clamped" => flags.clamped = true,
                "assumption1-violated" => flags.assumption1_violated = true,
                "coupling-zero" => flags.coupling_zero = true,
                other => return Err(format!("unknown flag `{other}`")),
            }
        }
        Ok(flags)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSample {
    /// Applied (held) control.
    pub u: DVector<f64>,
    pub delta: f64,
    pub a: f64,
    /// `None` when the feasibility constraint is disabled.
    pub a_dot: Option<f64>,
    /// `psi_0 .. psi_{m-1}`
    pub psi: Vec<f64>,
    pub feasibility: FeasibilityJet,
    pub status: QpStatus,
    pub kkt_residual: f64,
    /// Assembled rows, in order: HOCBF, CLF (if any), feasibility (if enabled).
    pub rows: Vec<ConstraintRow>,
    pub assumption1: bool,
    pub flags: AgentFlags,
}

impl AgentSample {
    pub fn barrier(&self) -> f64 {
        self.psi[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: DVector<f64>,
    pub agents: Vec<AgentSample>,
    /// Per body; `Some` for uncontrolled bodies with a known input.
    pub open_loop: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Termination {
    Completed,
    Aborted { t: f64, agent: String },
    FeasibilityLost { t: f64, agent: String, b_f: f64 },
    IntegrationFailure { t: f64, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub samples: Vec<Sample>,
    pub termination: Termination,
    pub bodies: Vec<Body>,
    pub agents: Vec<String>,
    pub config: SimConfig,
}

impl SimTrace {
    pub fn completed(&self) -> bool {
        self.termination == Termination::Completed
    }
}

pub fn run(plant: &dyn Plant, config: &SimConfig) -> Result<SimTrace, SimError> {
    let n = config.intervals()?;
    let specs = plant.agents();
    let mut x = plant.initial_state();
    if x.len() != plant.state_dim() {
        return Err(SimError::Config(format!(
            "initial state has dimension {}, plant expects {}",
            x.len(),
            plant.state_dim()
        )));
    }
    let mut aux: Vec<f64> = specs.iter().map(|s| s.feasibility.a0).collect();
    let mut references: Vec<SignPattern> = Vec::with_capacity(specs.len());
    let solver = ActiveSetSolver::default();
    let integrator = DormandPrince {
        abs_tol: config.abs_tol,
        rel_tol: config.rel_tol,
        ..DormandPrince::default()
    };
    let mut trace = SimTrace {
        samples: Vec::with_capacity(n + 1),
        termination: Termination::Completed,
        bodies: plant.bodies().to_vec(),
        agents: specs.iter().map(|s| s.label.clone()).collect(),
        config: *config,
    };

    for k in 0..=n {
        let t = k as f64 * config.dt;
        let mut controls: Vec<DVector<f64>> = Vec::with_capacity(specs.len());
        let mut agents = Vec::with_capacity(specs.len());
        let mut stop = None;

        for (i, spec) in specs.iter().enumerate() {
            let model_err = |source| SimError::Model { t, source };
            let model = plant.agent_model(i, &controls).map_err(model_err)?;
            let sys = model.system();
            let xl = model.local_state(&x);
            let psi = psi_sequence(&spec.hocbf, sys, t, &xl).map_err(model_err)?;
            let hocbf = hocbf_constraint_row(&spec.hocbf, sys, t, &xl).map_err(model_err)?;
            let jet = feasibility_jet(&spec.hocbf, sys, &spec.bounds, t, &xl).map_err(model_err)?;
            let q = sys.control_dim();
            let coupling = hocbf.coeffs.rows(0, q).into_owned();

            if k == 0 {
                check_preconditions(spec, &psi, &jet, config.feasibility_enabled)?;
                references.push(SignPattern::of(&coupling));
            }
            let mut flags = AgentFlags {
                coupling_zero: SignPattern::has_zero(&coupling),
                ..AgentFlags::default()
            };
            let assumption1 = references[i].admits(&coupling);
            flags.assumption1_violated = !assumption1;

            let mut rows = vec![hocbf];
            if let Some(clf) = &spec.clf {
                rows.push(clf_constraint_row(clf, sys, t, &xl).map_err(model_err)?);
            }
            let mut a_dot = None;
            if config.feasibility_enabled {
                match aux_dot(&spec.feasibility, &jet, aux[i]) {
                    Ok(rate) => {
                        rows.push(feasibility_constraint_row(
                            &spec.feasibility,
                            &jet,
                            aux[i],
                            rate,
                        ));
                        a_dot = Some(rate);
                    }
                    Err(CbfError::FeasibilityLoss { b_f }) => {
                        trace.termination = Termination::FeasibilityLost {
                            t,
                            agent: spec.label.clone(),
                            b_f,
                        };
                        return Ok(trace);
                    }
                    Err(e) => return Err(model_err(e)),
                }
            }

            let problem =
                assemble(spec, model.as_ref(), t, &xl, rows.clone()).map_err(model_err)?;
            let qp_err = |source| SimError::Qp { t, source };
            let sol = solver.solve(&problem).map_err(qp_err)?;
            let status = sol.status;
            let (u, delta, kkt_residual) = if status == QpStatus::Optimal {
                split(&sol, q)
            } else {
                flags.infeasible = true;
                let fallback = match config.policy {
                    InfeasibilityPolicy::Abort => None,
                    policy => {
                        let relaxed = solver.solve(&problem.without_box()).map_err(qp_err)?;
                        (relaxed.status == QpStatus::Optimal).then(|| {
                            let (u, delta, r) = split(&relaxed, q);
                            if policy == InfeasibilityPolicy::ClampToBounds {
                                flags.clamped = true;
                                (spec.bounds.clamp(&u), delta, r)
                            } else {
                                flags.bounds_dropped = true;
                                (u, delta, r)
                            }
                        })
                    }
                };
                match fallback {
                    Some(v) => v,
                    None => {
                        stop = Some(spec.label.clone());
                        (DVector::from_element(q, f64::NAN), f64::NAN, f64::INFINITY)
                    }
                }
            };

            controls.push(u.clone());
            agents.push(AgentSample {
                u,
                delta,
                a: aux[i],
                a_dot,
                psi,
                feasibility: jet,
                status,
                kkt_residual,
                rows,
                assumption1,
                flags,
            });
            if stop.is_some() {
                break;
            }
        }

        let open_loop = (0..trace.bodies.len())
            .map(|b| plant.open_loop_control(b, t, &x))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|source| SimError::Model { t, source })?;
        trace.samples.push(Sample {
            t,
            state: x.clone(),
            agents,
            open_loop,
        });
        if let Some(agent) = stop {
            trace.termination = Termination::Aborted { t, agent };
            return Ok(trace);
        }
        if k == n {
            break;
        }

        match step(plant, config, &integrator, t, &x, &aux, &controls) {
            Ok((x_next, aux_next)) => {
                x = x_next;
                aux = aux_next;
            }
            Err(message) => {
                trace.termination = Termination::IntegrationFailure { t, message };
                return Ok(trace);
            }
        }
    }
    Ok(trace)
}

fn check_preconditions(
    spec: &AgentSpec,
    psi: &[f64],
    jet: &FeasibilityJet,
    feasibility: bool,
) -> Result<(), SimError> {
    for (i, value) in psi.iter().enumerate() {
        if *value < 0.0 {
            return Err(SimError::Precondition(format!(
                "agent {}: psi_{i}(x(0)) = {value} < 0",
                spec.label
            )));
        }
    }
    if feasibility {
        let f = &spec.feasibility;
        if jet.value.is_nan() || jet.value <= 0.0 {
            return Err(SimError::Precondition(format!(
                "agent {}: b_F(x(0)) = {} is not > 0",
                spec.label, jet.value
            )));
        }
        let margin = f.gain * f.aux.value(f.a0) * jet.value;
        if margin < f.epsilon {
            return Err(SimError::Precondition(format!(
                "agent {}: k_F e^a0 b_F(x(0)) = {margin} < epsilon = {}",
                spec.label, f.epsilon
            )));
        }
    }
    Ok(())
}

fn assemble(
    spec: &AgentSpec,
    model: &dyn AgentModel,
    t: f64,
    xl: &DVector<f64>,
    rows: Vec<ConstraintRow>,
) -> Result<QpProblem, CbfError> {
    let q = spec.bounds.dim();
    let (h_u, c_u) = model.control_cost(t, xl)?;
    if h_u.shape() != (q, q) || c_u.len() != q {
        return Err(CbfError::DimensionMismatch {
            what: "control cost",
            expected: q,
            actual: c_u.len(),
        });
    }
    let mut hessian = DMatrix::zeros(q + 1, q + 1);
    hessian.view_mut((0, 0), (q, q)).copy_from(&h_u);
    hessian[(q, q)] = 2.0 * spec.relax_weight();
    let mut linear = DVector::zeros(q + 1);
    linear.rows_mut(0, q).copy_from(&c_u);
    let mut lower = DVector::from_element(q + 1, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(q + 1, f64::INFINITY);
    lower.rows_mut(0, q).copy_from(spec.bounds.lower());
    upper.rows_mut(0, q).copy_from(spec.bounds.upper());
    Ok(QpProblem {
        hessian,
        linear,
        rows,
        lower,
        upper,
    })
}

fn split(sol: &QpSolution, q: usize) -> (DVector<f64>, f64, f64) {
    (
        sol.point.rows(0, q).into_owned(),
        sol.point[q],
        sol.kkt_residual,
    )
}

/// Integrate plant state and auxiliary variables over one held interval.
fn step(
    plant: &dyn Plant,
    config: &SimConfig,
    integrator: &DormandPrince,
    t: f64,
    x: &DVector<f64>,
    aux: &[f64],
    controls: &[DVector<f64>],
) -> Result<(DVector<f64>, Vec<f64>), String> {
    let specs = plant.agents();
    let n = x.len();
    let models = (0..specs.len())
        .map(|i| plant.agent_model(i, &controls[..i]))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;

    let rhs = |s: f64, y: &DVector<f64>| -> Result<DVector<f64>, CbfError> {
        let xs = y.rows(0, n).into_owned();
        let mut dy = DVector::zeros(y.len());
        dy.rows_mut(0, n)
            .copy_from(&plant.derivative(s, &xs, controls)?);
        if config.feasibility_enabled {
            for (i, (spec, model)) in specs.iter().zip(&models).enumerate() {
                let xl = model.local_state(&xs);
                let jet = feasibility_jet(&spec.hocbf, model.system(), &spec.bounds, s, &xl)?;
                dy[n + i] = aux_dot(&spec.feasibility, &jet, y[n + i])?;
            }
        }
        Ok(dy)
    };

    let mut y0 = DVector::zeros(n + aux.len());
    y0.rows_mut(0, n).copy_from(x);
    for (i, a) in aux.iter().enumerate() {
        y0[n + i] = *a;
    }
    let y1 = integrator
        .integrate(rhs, t, t + config.dt, &y0)
        .map_err(|e: IntegrationError<CbfError>| e.to_string())?;
    Ok((
        y1.rows(0, n).into_owned(),
        y1.iter().skip(n).copied().collect(),
    ))
}
