//! Concrete systems: the two-vehicle simplified ACC example and the
//! three-vehicle heterogeneous platoon.

pub mod acc;
pub mod sacc;
pub mod vehicle;

use thiserror::Error;

use crate::cbf::CbfError;

pub use acc::{build_acc_platoon, AccCase, AccPlatoon, FollowerModel, LeadMotion, PlatoonParams};
pub use sacc::{build_sacc, SaccModel, SaccParams, SaccPlant};
pub use vehicle::{
    lead_control, resistance_force, resistance_force_slope, Resistance, VehicleParams, GRAVITY,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl From<ScenarioError> for CbfError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Domain(msg) => CbfError::Evaluation(msg),
            ScenarioError::Config(msg) => CbfError::InvalidSpec(msg),
        }
    }
}
