//! Semismooth Newton solver for the inner equation of each outer iteration:
//! residual and dual-objective evaluation, the Clarke generalized Jacobian of
//! the box projection, Newton-system assembly in reduced form, and an Armijo
//! backtracking line search.

use crate::problem::{apply_h, apply_h_transpose, clamp1, GeneralizedTransportProblem};
use crate::reduction::{hybrid_solve, LinearSolveStats, ReductionError, SolvePolicy};
use crate::sparsela::{dot, norm2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SsnError {
    #[error(
        "support function received a positive argument {value:.3e} on an unbounded coordinate {index}"
    )]
    SupportOverflow { index: usize, value: f64 },
    #[error("linear solve failed: {0}")]
    Linear(#[from] ReductionError),
}

/// Everything one inner solve needs: the step parameters of the current
/// outer iteration plus the problem handle.
pub struct InnerProblemView<'a> {
    pub problem: &'a GeneralizedTransportProblem,
    pub beta_next: f64,
    pub eta: f64,
    pub tau: f64,
    /// w_k, length m*n + n + m
    pub w: Vec<f64>,
    /// lambda~_k, length n + m + r
    pub lambda_tilde: Vec<f64>,
}

impl InnerProblemView<'_> {
    #[inline]
    fn d_inv_entry(&self, i: usize) -> f64 {
        if i < self.problem.plan_len() {
            1.0 / self.eta
        } else {
            1.0 / self.tau
        }
    }

    /// z = D^{-1}(w - H^T lambda)
    pub fn inner_point(&self, lambda: &[f64]) -> Vec<f64> {
        let ht = apply_h_transpose(self.problem, lambda);
        (0..self.w.len())
            .map(|i| (self.w[i] - ht[i]) * self.d_inv_entry(i))
            .collect()
    }

    /// u = proj_Sigma(D^{-1}(w - H^T lambda)), the primal candidate
    pub fn primal_candidate(&self, lambda: &[f64]) -> Vec<f64> {
        crate::problem::proj_sigma(self.problem, &self.inner_point(lambda))
    }
}

/// chosen element of the Clarke subdifferential of proj_Sigma: 0/1 flags,
/// boundary and equality-bound coordinates select 0
#[derive(Debug, Clone)]
pub struct ClarkeDiag {
    pub d: Vec<bool>,
}

/// F_k(lambda) = beta_{k+1} lambda - H proj_Sigma(D^{-1}(w - H^T lambda)) - lambda~
pub fn eval_fk(view: &InnerProblemView, lambda: &[f64]) -> Vec<f64> {
    let u = view.primal_candidate(lambda);
    let hu = apply_h(view.problem, &u);
    (0..lambda.len())
        .map(|i| view.beta_next * lambda[i] - hu[i] - view.lambda_tilde[i])
        .collect()
}

const SUPPORT_GUARD: f64 = 1e-10;

/// Dual objective whose gradient is F_k, evaluated through Moreau's
/// decomposition: the prox of the conjugate is q = v - D proj_Sigma(D^{-1} v).
/// Coordinates with an unbounded upper bound must receive a nonpositive
/// argument in the support function; the prox output guarantees that up to
/// roundoff, and anything beyond the guard is an error.
pub fn eval_dual_objective(view: &InnerProblemView, lambda: &[f64]) -> Result<f64, SsnError> {
    let problem = view.problem;
    let ht = apply_h_transpose(problem, lambda);
    let total = view.w.len();
    let mut value = 0.5 * view.beta_next * dot(lambda, lambda) - dot(&view.lambda_tilde, lambda);
    for i in 0..total {
        let v = view.w[i] - ht[i];
        let dinv = view.d_inv_entry(i);
        let (lo, hi) = problem.primal_bounds(i);
        let p = clamp1(v * dinv, lo, hi);
        // prox of the conjugate via Moreau
        let q = v - p / dinv;
        match hi {
            Some(hi_val) => {
                value += hi_val * q.max(0.0) + lo * q.min(0.0);
            }
            None => {
                if q > SUPPORT_GUARD {
                    return Err(SsnError::SupportOverflow { index: i, value: q });
                }
                value += lo * q.min(0.0);
            }
        }
        value += 0.5 * p * p / dinv;
    }
    Ok(value)
}

/// d_i = 1 iff the inner point is strictly inside its box; boundary points
/// and equality bounds select 0.
pub fn clarke_diagonal(view: &InnerProblemView, lambda: &[f64]) -> ClarkeDiag {
    let z = view.inner_point(lambda);
    let d = (0..z.len())
        .map(|i| {
            let (lo, hi) = view.problem.primal_bounds(i);
            match hi {
                Some(hi_val) => lo < z[i] && z[i] < hi_val,
                None => z[i] > lo,
            }
        })
        .collect();
    ClarkeDiag { d }
}

/// The reduced data of J_k = beta_{k+1} I + H D^{-1} U H^T: the scalar
/// shift, the bipartite weights s = d_x / eta, and the slack diagonal
/// t = (d_y, d_z) / tau.
#[derive(Debug, Clone)]
pub struct NewtonSystem {
    pub epsilon: f64,
    pub s: Vec<f64>,
    pub t: Vec<f64>,
}

pub fn build_newton_system(view: &InnerProblemView, diag: &ClarkeDiag) -> NewtonSystem {
    let problem = view.problem;
    let mn = problem.plan_len();
    let (m, n) = (problem.m, problem.n);
    let s: Vec<f64> = (0..mn)
        .map(|i| if diag.d[i] { 1.0 / view.eta } else { 0.0 })
        .collect();
    let mut t = vec![0.0; m + n];
    for j in 0..n {
        if diag.d[mn + j] {
            t[j] = 1.0 / view.tau;
        }
    }
    for i in 0..m {
        if diag.d[mn + n + i] {
            t[n + i] = 1.0 / view.tau;
        }
    }
    NewtonSystem {
        epsilon: view.beta_next,
        s,
        t,
    }
}

/// Matrix-free application of J_k to a vector (testing and diagnostics).
pub fn jk_apply(view: &InnerProblemView, diag: &ClarkeDiag, v: &[f64]) -> Vec<f64> {
    let ht = apply_h_transpose(view.problem, v);
    let scaled: Vec<f64> = (0..ht.len())
        .map(|i| {
            if diag.d[i] {
                ht[i] * view.d_inv_entry(i)
            } else {
                0.0
            }
        })
        .collect();
    let h_scaled = apply_h(view.problem, &scaled);
    (0..v.len())
        .map(|i| view.beta_next * v[i] + h_scaled[i])
        .collect()
}

#[derive(Debug, Clone)]
pub struct SsnConfig {
    /// Armijo slope fraction, in (0, 1/2)
    pub tau_ls: f64,
    /// backtracking factor, in (0, 1)
    pub delta_ls: f64,
    pub j_max: usize,
    pub tol: f64,
}

impl Default for SsnConfig {
    fn default() -> Self {
        SsnConfig {
            tau_ls: 0.2,
            delta_ls: 0.9,
            j_max: 15,
            tol: 1e-11,
        }
    }
}

// 0.9^200 ~ 7e-10: clamp-dominated pieces model far less curvature than the
// neighboring pieces have, and the acceptable step fraction shrinks with the
// curvature ratio, which reaches ~1e8 on degenerate instances
const LINE_SEARCH_CAP: u32 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsnStatus {
    Converged,
    IterationLimit,
    LineSearchStall,
}

#[derive(Debug)]
pub struct SsnOutcome {
    pub lambda: Vec<f64>,
    pub iterations: usize,
    pub status: SsnStatus,
    pub residual_norm: f64,
    pub residual_history: Vec<f64>,
    pub linear_stats: Vec<LinearSolveStats>,
}

#[derive(Debug, Error)]
#[error("line search stalled after {cap} backtracking steps")]
pub struct LineSearchStall {
    pub cap: u32,
}

/// Smallest backtracking exponent satisfying the Armijo condition, or the
/// stall error when the cap is reached.
pub fn armijo_line_search(
    view: &InnerProblemView,
    lambda: &[f64],
    direction: &[f64],
    config: &SsnConfig,
) -> Result<u32, LineSearchStall> {
    let f0 = eval_dual_objective(view, lambda)
        .expect("dual objective finite at the current iterate");
    let g0 = dot(&eval_fk(view, lambda), direction);
    let mut step = 1.0;
    for ell in 0..LINE_SEARCH_CAP {
        let trial: Vec<f64> = lambda
            .iter()
            .zip(direction)
            .map(|(l, d)| l + step * d)
            .collect();
        if let Ok(f_trial) = eval_dual_objective(view, &trial) {
            if f_trial <= f0 + config.tau_ls * step * g0 {
                return Ok(ell);
            }
        }
        step *= config.delta_ls;
    }
    Err(LineSearchStall {
        cap: LINE_SEARCH_CAP,
    })
}

/// Damped semismooth Newton iteration on F_k(lambda) = 0, warm-started at
/// `lambda0`. Iteration-limit exhaustion and line-search stalls return the
/// best iterate with a status; the outer loop decides what to do with it.
pub fn ssn_solve(
    view: &InnerProblemView,
    lambda0: &[f64],
    config: &SsnConfig,
    policy: &SolvePolicy,
) -> Result<SsnOutcome, SsnError> {
    let problem = view.problem;
    let (m, n, r) = (problem.m, problem.n, problem.r);
    let mut lambda = lambda0.to_vec();
    let mut fk = eval_fk(view, &lambda);
    let mut res = norm2(&fk);
    let mut history = vec![res];
    let mut linear_stats = Vec::new();
    let mut iterations = 0;
    while res > config.tol {
        if iterations >= config.j_max {
            return Ok(SsnOutcome {
                lambda,
                iterations,
                status: SsnStatus::IterationLimit,
                residual_norm: res,
                residual_history: history,
                linear_stats,
            });
        }
        let diag = clarke_diagonal(view, &lambda);
        let system = build_newton_system(view, &diag);
        let rhs: Vec<f64> = fk.iter().map(|v| -v).collect();
        let (mut direction, stats) =
            hybrid_solve(&system.s, &system.t, system.epsilon, m, n, r, &rhs, policy)?;
        linear_stats.push(stats);
        // guard against an inexact solve returning an ascent direction
        if dot(&fk, &direction) >= 0.0 {
            direction = rhs.clone();
        }
        let ell = match armijo_line_search(view, &lambda, &direction, config) {
            Ok(ell) => ell,
            Err(_) => {
                return Ok(SsnOutcome {
                    lambda,
                    iterations,
                    status: SsnStatus::LineSearchStall,
                    residual_norm: res,
                    residual_history: history,
                    linear_stats,
                });
            }
        };
        let step = config.delta_ls.powi(ell as i32);
        for (l, d) in lambda.iter_mut().zip(&direction) {
            *l += step * d;
        }
        fk = eval_fk(view, &lambda);
        res = norm2(&fk);
        history.push(res);
        iterations += 1;
    }
    Ok(SsnOutcome {
        lambda,
        iterations,
        status: SsnStatus::Converged,
        residual_norm: res,
        residual_history: history,
        linear_stats,
    })
}
