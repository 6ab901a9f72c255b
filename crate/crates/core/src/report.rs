//! CSV time series and the per-vehicle run summary.
//!
//! Columns: `t`, then for every body `j`: `x_j, v_j, u_j, delta_j, a_j, b_j,
//! bF_j, psi1_j, qp_status_j`, then `flags`. Quantities an uncontrolled body
//! does not have are left empty, and its status reads `open-loop`. Floats are
//! written with 17 significant digits so that they parse back bit-exactly.
//!
//! The flags cell lists flagged agents as `label:flag|flag;label:flag`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{SimTrace, Termination};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed trace: {0}")]
    Malformed(String),
}

const PER_BODY: [&str; 9] = ["x", "v", "u", "delta", "a", "b", "bF", "psi1", "qp_status"];
const OPEN_LOOP: &str = "open-loop";

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn header(trace: &SimTrace) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for body in &trace.bodies {
        h.extend(PER_BODY.iter().map(|c| format!("{c}_{}", body.label)));
    }
    h.push("flags".into());
    h
}

/// Write the trace as CSV, one row per sample.
pub fn emit_trace<W: Write>(trace: &SimTrace, out: W) -> Result<(), ReportError> {
    if trace.samples.is_empty() {
        return Err(ReportError::Malformed("trace has no samples".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(trace))?;
    for s in &trace.samples {
        let mut rec = vec![fmt(s.t)];
        for (bi, body) in trace.bodies.iter().enumerate() {
            rec.push(fmt(s.state[body.position]));
            rec.push(fmt(s.state[body.velocity]));
            match body.agent.and_then(|i| s.agents.get(i)) {
                Some(a) => {
                    if a.u.len() != 1 {
                        return Err(ReportError::Malformed(format!(
                            "agent {} has {} controls; the CSV layout needs scalar controls",
                            body.label,
                            a.u.len()
                        )));
                    }
                    rec.push(fmt(a.u[0]));
                    rec.push(fmt(a.delta));
                    rec.push(fmt(a.a));
                    rec.push(fmt(a.psi[0]));
                    rec.push(fmt(a.feasibility.value));
                    rec.push(a.psi.get(1).map(|p| fmt(*p)).unwrap_or_default());
                    rec.push(a.status.as_str().into());
                }
                None if body.agent.is_some() => {
                    // Agent not reached in an aborted sample.
                    rec.extend(std::iter::repeat_n(String::new(), 6));
                    rec.push("not-solved".into());
                }
                None => {
                    rec.push(s.open_loop[bi].map(fmt).unwrap_or_default());
                    rec.extend(std::iter::repeat_n(String::new(), 5));
                    rec.push(OPEN_LOOP.into());
                }
            }
        }
        let flags: Vec<String> = trace
            .agents
            .iter()
            .zip(&s.agents)
            .filter(|(_, a)| !a.flags.is_empty())
            .map(|(label, a)| format!("{label}:{}", a.flags.names().join("|")))
            .collect();
        rec.push(flags.join(";"));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleSummary {
    pub label: String,
    pub controlled: bool,
    pub first_infeasible_time: Option<f64>,
    pub infeasible_times: Vec<f64>,
    pub min_b: Option<f64>,
    pub first_negative_b_time: Option<f64>,
    pub min_u: Option<f64>,
    pub max_u: Option<f64>,
    pub min_b_f: Option<f64>,
    pub final_velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub samples: usize,
    pub vehicles: Vec<VehicleSummary>,
}

/// One row of a trace, reduced to what the summary needs.
struct Row {
    t: f64,
    bodies: Vec<BodyRow>,
}

struct BodyRow {
    v: f64,
    u: Option<f64>,
    b: Option<f64>,
    b_f: Option<f64>,
    status: String,
}

fn fold_min(acc: Option<f64>, v: Option<f64>) -> Option<f64> {
    match (acc, v) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

fn fold_max(acc: Option<f64>, v: Option<f64>) -> Option<f64> {
    match (acc, v) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (a, b) => a.or(b),
    }
}

fn summarize(labels: &[String], rows: &[Row]) -> RunSummary {
    let vehicles = labels
        .iter()
        .enumerate()
        .map(|(j, label)| {
            let mut s = VehicleSummary {
                label: label.clone(),
                controlled: false,
                first_infeasible_time: None,
                infeasible_times: Vec::new(),
                min_b: None,
                first_negative_b_time: None,
                min_u: None,
                max_u: None,
                min_b_f: None,
                final_velocity: f64::NAN,
            };
            for row in rows {
                let b = &row.bodies[j];
                s.controlled |= b.status != OPEN_LOOP;
                if b.status != OPEN_LOOP && b.status != "optimal" && b.status != "not-solved" {
                    s.infeasible_times.push(row.t);
                }
                let u = b.u.filter(|u| !u.is_nan());
                s.min_u = fold_min(s.min_u, u);
                s.max_u = fold_max(s.max_u, u);
                s.min_b = fold_min(s.min_b, b.b);
                s.min_b_f = fold_min(s.min_b_f, b.b_f);
                if s.first_negative_b_time.is_none() && b.b.is_some_and(|b| b < 0.0) {
                    s.first_negative_b_time = Some(row.t);
                }
                s.final_velocity = b.v;
            }
            s.first_infeasible_time = s.infeasible_times.first().copied();
            s
        })
        .collect();
    RunSummary {
        samples: rows.len(),
        vehicles,
    }
}

impl RunSummary {
    pub fn from_trace(trace: &SimTrace) -> Self {
        let labels: Vec<String> = trace.bodies.iter().map(|b| b.label.clone()).collect();
        let rows: Vec<Row> = trace
            .samples
            .iter()
            .map(|s| Row {
                t: s.t,
                bodies: trace
                    .bodies
                    .iter()
                    .enumerate()
                    .map(|(bi, body)| {
                        let v = s.state[body.velocity];
                        match body.agent {
                            Some(i) => match s.agents.get(i) {
                                Some(a) => BodyRow {
                                    v,
                                    u: Some(a.u[0]),
                                    b: Some(a.psi[0]),
                                    b_f: Some(a.feasibility.value),
                                    status: a.status.as_str().into(),
                                },
                                None => BodyRow {
                                    v,
                                    u: None,
                                    b: None,
                                    b_f: None,
                                    status: "not-solved".into(),
                                },
                            },
                            None => BodyRow {
                                v,
                                u: s.open_loop[bi],
                                b: None,
                                b_f: None,
                                status: OPEN_LOOP.into(),
                            },
                        }
                    })
                    .collect(),
            })
            .collect();
        summarize(&labels, &rows)
    }

    /// Recompute the summary from an emitted CSV.
    pub fn from_csv<R: Read>(input: R) -> Result<Self, ReportError> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let labels: Vec<String> = header
            .iter()
            .filter_map(|h| h.strip_prefix("x_").map(str::to_string))
            .collect();
        let col = |name: String| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| ReportError::Malformed(format!("missing column {name}")))
        };
        let t_col = col("t".into())?;
        let cols = labels
            .iter()
            .map(|l| {
                Ok([
                    col(format!("v_{l}"))?,
                    col(format!("u_{l}"))?,
                    col(format!("b_{l}"))?,
                    col(format!("bF_{l}"))?,
                    col(format!("qp_status_{l}"))?,
                ])
            })
            .collect::<Result<Vec<_>, ReportError>>()?;

        let num = |s: &str| -> Result<Option<f64>, ReportError> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| ReportError::Malformed(format!("bad number `{s}`")))
            }
        };
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let t = num(&rec[t_col])?.ok_or_else(|| ReportError::Malformed("empty t".into()))?;
            let bodies = cols
                .iter()
                .map(|[v, u, b, bf, st]| {
                    Ok(BodyRow {
                        v: num(&rec[*v])?
                            .ok_or_else(|| ReportError::Malformed("empty velocity".into()))?,
                        u: num(&rec[*u])?,
                        b: num(&rec[*b])?,
                        b_f: num(&rec[*bf])?,
                        status: rec[*st].to_string(),
                    })
                })
                .collect::<Result<Vec<_>, ReportError>>()?;
            rows.push(Row { t, bodies });
        }
        Ok(summarize(&labels, &rows))
    }

    pub fn vehicle(&self, label: &str) -> Option<&VehicleSummary> {
        self.vehicles.iter().find(|v| v.label == label)
    }
}

/// Summary document for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub case: u8,
    pub feasibility: bool,
    pub policy: String,
    pub termination: Termination,
    pub all_optimal: bool,
    pub summary: RunSummary,
}

impl RunReport {
    pub fn new(scenario: &str, case: u8, trace: &SimTrace) -> Self {
        Self {
            scenario: scenario.into(),
            case,
            feasibility: trace.config.feasibility_enabled,
            policy: trace.config.policy.as_str().into(),
            termination: trace.termination.clone(),
            all_optimal: trace.samples.iter().all(|s| {
                s.agents.len() == trace.agents.len()
                    && s.agents
                        .iter()
                        .all(|a| a.status == crate::qp::QpStatus::Optimal)
            }),
            summary: RunSummary::from_trace(trace),
        }
    }
}

impl RunReport {
    /// A run with the feasibility constraint that still hit an infeasible
    /// QP, lost `b_F > 0` or let a barrier go negative.
    pub fn guarantee_breached(&self) -> bool {
        self.feasibility
            && (!self.all_optimal
                || matches!(
                    self.termination,
                    Termination::Aborted { .. } | Termination::FeasibilityLost { .. }
                )
                || self
                    .summary
                    .vehicles
                    .iter()
                    .any(|v| v.min_b.is_some_and(|b| b < 0.0)))
    }
}

/// Both halves of a with/without feasibility comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub with_feasibility: RunReport,
    pub without_feasibility: RunReport,
}
