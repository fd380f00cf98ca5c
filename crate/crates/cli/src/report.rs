//! Run reports: problem metadata, config snapshot, per-iteration trace, and
//! totals in the itIPD/itSsN/itamg vocabulary.

use serde::{Deserialize, Serialize};
use transolve_core::ipd::{IpdResult, SolveStatus, SolverConfig, TraceRow};
use transolve_core::problem::GeneralizedTransportProblem;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemMeta {
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunTotals {
    pub it_ipd: usize,
    pub it_ssn: usize,
    pub it_lin_max: usize,
    pub it_lin_avg: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub problem: ProblemMeta,
    pub config: SolverConfig,
    pub backend: String,
    pub status: SolveStatus,
    pub final_res: f64,
    pub objective: f64,
    pub totals: RunTotals,
    pub wall_time_s: f64,
    pub trace: Vec<TraceRow>,
}

/// Aggregates trace rows into the report totals.
pub fn totals_from_trace(trace: &[TraceRow]) -> RunTotals {
    let it_ipd = trace.len();
    let it_ssn = trace.iter().map(|r| r.it_ssn).sum();
    let it_lin_max = trace.iter().map(|r| r.it_lin_max).max().unwrap_or(0);
    // average of the per-Newton-step maxima, weighted by inner counts
    let weighted: f64 = trace
        .iter()
        .map(|r| r.it_lin_avg * r.it_ssn.max(1) as f64)
        .sum();
    let weight: f64 = trace.iter().map(|r| r.it_ssn.max(1) as f64).sum();
    let it_lin_avg = if weight > 0.0 { weighted / weight } else { 0.0 };
    RunTotals {
        it_ipd,
        it_ssn,
        it_lin_max,
        it_lin_avg,
    }
}

pub fn build_report(
    problem: &GeneralizedTransportProblem,
    config: &SolverConfig,
    result: &IpdResult,
    wall_time_s: f64,
) -> RunReport {
    let objective =
        transolve_core::problem::objective_h(problem, &result.u[..problem.plan_len()]);
    RunReport {
        problem: ProblemMeta {
            m: problem.m,
            n: problem.n,
            r: problem.r,
            sigma: problem.sigma,
        },
        config: config.clone(),
        backend: config.linear.backend.clone(),
        status: result.status,
        final_res: result.final_res,
        objective,
        totals: totals_from_trace(&result.trace),
        wall_time_s,
        trace: result.trace.clone(),
    }
}

/// One-screen rendering in the table vocabulary.
pub fn render(report: &RunReport) -> String {
    let t = &report.totals;
    let mut out = String::new();
    out.push_str(&format!(
        "problem: {}x{} (r = {}, sigma = {})\n",
        report.problem.m, report.problem.n, report.problem.r, report.problem.sigma
    ));
    out.push_str(&format!(
        "status: {:?}  Res = {:.3e}  objective = {:.9e}\n",
        report.status, report.final_res, report.objective
    ));
    out.push_str(&format!(
        "backend: {}  wall time: {:.3}s\n",
        report.backend, report.wall_time_s
    ));
    out.push_str("itIPD  itSsN  itlin(max)  itlin(aver)\n");
    out.push_str(&format!(
        "{:<6} {:<6} {:<11} {:.1}\n",
        t.it_ipd, t.it_ssn, t.it_lin_max, t.it_lin_avg
    ));
    out
}
