//! Run configuration: a TOML file with one section per vehicle, layered over
//! the case presets, with command-line overrides on top.
//!
//! ```toml
//! [run]
//! scenario = "acc"
//! case = 1
//! feasibility = true
//! policy = "abort"
//!
//! [vehicle2]
//! c_d = 0.3
//! ```

use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenarios::{
    build_acc_platoon, build_sacc, AccCase, PlatoonParams, SaccParams, VehicleParams, GRAVITY,
};
use crate::sim::{run, InfeasibilityPolicy, Plant, SimConfig, SimError, SimTrace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Sacc,
    Acc,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sacc => "sacc",
            Self::Acc => "acc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub scenario: Scenario,
    /// Platoon parameter preset, 1 or 2.
    pub case: u8,
    pub feasibility: bool,
    pub policy: InfeasibilityPolicy,
    pub dt: f64,
    pub t_end: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatoonSection {
    pub safe_distance: f64,
    pub gravity: f64,
}

/// Fully resolved configuration. Serializing it gives a file that reproduces
/// the run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub platoon: PlatoonSection,
    /// Lead vehicle; only mass, friction and initial conditions are used.
    pub vehicle1: VehicleParams,
    pub vehicle2: VehicleParams,
    pub vehicle3: VehicleParams,
    pub sacc: SaccParams,
}

/// Command-line settings that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub scenario: Option<Scenario>,
    pub case: Option<u8>,
    pub feasibility: Option<bool>,
    pub policy: Option<InfeasibilityPolicy>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
}

impl RunConfig {
    pub fn preset(scenario: Scenario, case: AccCase) -> Self {
        let sim = SimConfig::default();
        let [vehicle1, vehicle2, vehicle3] = case.vehicles();
        Self {
            run: RunSection {
                scenario,
                case: case.number(),
                feasibility: sim.feasibility_enabled,
                policy: sim.policy,
                dt: sim.dt,
                t_end: sim.t_end,
                abs_tol: sim.abs_tol,
                rel_tol: sim.rel_tol,
            },
            platoon: PlatoonSection {
                safe_distance: 10.0,
                gravity: GRAVITY,
            },
            vehicle1,
            vehicle2,
            vehicle3,
            sacc: SaccParams::default(),
        }
    }

    /// Resolve a configuration from optional file text and overrides.
    ///
    /// The case preset is chosen first (override, then file, then case 1);
    /// keys in the file replace preset values; overrides replace both.
    pub fn load(text: Option<&str>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let file: toml::Table = match text {
            Some(t) => toml::from_str(t).map_err(|e| ConfigError::Parse(e.to_string()))?,
            None => toml::Table::new(),
        };
        let file_run = file.get("run").and_then(|v| v.as_table());
        let case_number = match overrides.case {
            Some(c) => i64::from(c),
            None => file_run
                .and_then(|r| r.get("case"))
                .map(|v| {
                    v.as_integer()
                        .ok_or_else(|| ConfigError::Invalid("run.case must be an integer".into()))
                })
                .transpose()?
                .unwrap_or(1),
        };
        let case = u8::try_from(case_number)
            .ok()
            .and_then(AccCase::from_number)
            .ok_or_else(|| {
                ConfigError::Invalid(format!("case must be 1 or 2, got {case_number}"))
            })?;

        let preset = Self::preset(Scenario::Acc, case);
        let mut merged =
            toml::Table::try_from(&preset).map_err(|e| ConfigError::Parse(e.to_string()))?;
        merge(&mut merged, file);
        let mut config: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.run.case = case.number();

        let r = &mut config.run;
        if let Some(s) = overrides.scenario {
            r.scenario = s;
        }
        if let Some(f) = overrides.feasibility {
            r.feasibility = f;
        }
        if let Some(p) = overrides.policy {
            r.policy = p;
        }
        if let Some(dt) = overrides.dt {
            r.dt = dt;
        }
        if let Some(t) = overrides.t_end {
            r.t_end = t;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            t_end: self.run.t_end,
            dt: self.run.dt,
            abs_tol: self.run.abs_tol,
            rel_tol: self.run.rel_tol,
            policy: self.run.policy,
            feasibility_enabled: self.run.feasibility,
        }
    }

    pub fn platoon_params(&self) -> PlatoonParams {
        PlatoonParams {
            safe_distance: self.platoon.safe_distance,
            gravity: self.platoon.gravity,
            vehicles: [
                self.vehicle1.clone(),
                self.vehicle2.clone(),
                self.vehicle3.clone(),
            ],
        }
    }

    pub fn build_plant(&self) -> Result<Box<dyn Plant>, ConfigError> {
        let invalid = |e: crate::scenarios::ScenarioError| ConfigError::Invalid(e.to_string());
        Ok(match self.run.scenario {
            Scenario::Sacc => Box::new(build_sacc(&self.sacc).map_err(invalid)?),
            Scenario::Acc => Box::new(build_acc_platoon(&self.platoon_params()).map_err(invalid)?),
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sim_config()
            .intervals()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.build_plant().map(|_| ())
    }

    /// Same configuration with the feasibility constraint switched.
    pub fn with_feasibility(&self, on: bool) -> Self {
        let mut c = self.clone();
        c.run.feasibility = on;
        c
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

pub fn execute(config: &RunConfig) -> Result<SimTrace, RunError> {
    let plant = config.build_plant()?;
    Ok(run(plant.as_ref(), &config.sim_config())?)
}

/// Run the configuration with and without the feasibility constraint, in
/// parallel, from identical initial conditions.
pub fn compare(config: &RunConfig) -> (Result<SimTrace, RunError>, Result<SimTrace, RunError>) {
    let on = config.with_feasibility(true);
    let off = config.with_feasibility(false);
    thread::scope(|s| {
        let with = s.spawn(|| execute(&on));
        let without = s.spawn(|| execute(&off));
        (
            with.join().expect("simulation thread panicked"),
            without.join().expect("simulation thread panicked"),
        )
    })
}
