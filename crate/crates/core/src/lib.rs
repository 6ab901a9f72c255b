//! Control barrier function QP controllers with an auxiliary feasibility
//! constraint, plus the simulation loop and vehicle scenarios they run in.

pub mod cbf;
pub mod config;
pub mod ode;
pub mod qp;
pub mod report;
pub mod scenarios;
pub mod sim;
