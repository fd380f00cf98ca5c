//! Brute-force oracles for tiny instances: exact assignment enumeration,
//! support-pattern enumeration for general transport, and the analytic
//! one-parameter Birkhoff projection at n = 2. Independent of the solver
//! path by construction.

use thiserror::Error;
use transolve_core::problem::{unvec_col_major, GeneralizedTransportProblem};
use transolve_core::sparsela::DenseMat;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance too large for the oracle: {0}")]
    SizeCap(String),
    #[error("oracle does not cover this problem shape: {0}")]
    Unsupported(String),
    #[error("no feasible support pattern found")]
    NoFeasiblePattern,
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub objective: f64,
    /// plan as a dense m x n matrix
    pub plan: DenseMat,
}

const ASSIGNMENT_CAP: usize = 7;
const GENERAL_CAP: usize = 3;

/// Dispatches to the matching brute-force route.
pub fn oracle_solve(problem: &GeneralizedTransportProblem) -> Result<OracleResult, OracleError> {
    let (m, n) = (problem.m, problem.n);
    if problem.sigma > 0.0 {
        if m == 2 && n == 2 && problem.c.iter().all(|&v| v == 0.0) {
            return Ok(birkhoff_2x2(problem));
        }
        return Err(OracleError::SizeCap(format!(
            "quadratic objective covered only at n = 2, got {n}"
        )));
    }
    if problem.r != 0 {
        return Err(OracleError::Unsupported(
            "total-mass row not covered by the oracle".into(),
        ));
    }
    let uniform = m == n
        && problem
            .mu
            .iter()
            .chain(problem.nu.iter())
            .all(|&v| (v - problem.mu[0]).abs() <= 1e-12 * problem.mu[0].abs().max(1.0));
    if uniform && n <= ASSIGNMENT_CAP {
        return Ok(assignment(problem));
    }
    if m <= GENERAL_CAP && n <= GENERAL_CAP {
        return general_tiny(problem);
    }
    Err(OracleError::SizeCap(format!(
        "m = {m}, n = {n} beyond assignment cap {ASSIGNMENT_CAP} / general cap {GENERAL_CAP}"
    )))
}

/// Exact minimum over all n! permutations; the optimal plan is the scaled
/// permutation matrix.
fn assignment(problem: &GeneralizedTransportProblem) -> OracleResult {
    let n = problem.n;
    let mass = problem.mu[0];
    let cost = unvec_col_major(&problem.c, n, n);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best_value = f64::INFINITY;
    let mut best_perm = perm.clone();
    let eval = |p: &[usize], best_value: &mut f64, best_perm: &mut Vec<usize>| {
        let total: f64 = (0..n).map(|j| cost.get(p[j], j)).sum();
        if total < *best_value {
            *best_value = total;
            best_perm.copy_from_slice(p);
        }
    };
    // Heap's algorithm
    eval(&perm, &mut best_value, &mut best_perm);
    let mut counters = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if counters[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(counters[i], i);
            }
            eval(&perm, &mut best_value, &mut best_perm);
            counters[i] += 1;
            i = 0;
        } else {
            counters[i] = 0;
            i += 1;
        }
    }
    let mut plan = DenseMat::zeros(n, n);
    for j in 0..n {
        plan.set(best_perm[j], j, mass);
    }
    OracleResult {
        objective: mass * best_value,
        plan,
    }
}

/// Enumerates all support patterns of size at most m + n - 1, solves the
/// marginal equations on each support (unique solutions only: supports with
/// cycles are skipped, their optima lie on already-enumerated forests), and
/// keeps the best feasible candidate.
fn general_tiny(problem: &GeneralizedTransportProblem) -> Result<OracleResult, OracleError> {
    let (m, n) = (problem.m, problem.n);
    let mn = m * n;
    let max_support = m + n - 1;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << mn) {
        let size = mask.count_ones() as usize;
        if size > max_support {
            continue;
        }
        let support: Vec<usize> = (0..mn).filter(|&i| mask & (1 << i) != 0).collect();
        if let Some(x_s) = solve_support(problem, &support) {
            if x_s.iter().any(|&v| v < -1e-9) {
                continue;
            }
            let value: f64 = support
                .iter()
                .zip(&x_s)
                .map(|(&idx, &v)| problem.c[idx] * v)
                .sum();
            let better = match &best {
                Some((bv, _)) => value < *bv,
                None => true,
            };
            if better {
                let mut full = vec![0.0; mn];
                for (&idx, &v) in support.iter().zip(&x_s) {
                    full[idx] = v;
                }
                best = Some((value, full));
            }
        }
    }
    let (objective, x) = best.ok_or(OracleError::NoFeasiblePattern)?;
    Ok(OracleResult {
        objective,
        plan: unvec_col_major(&x, m, n),
    })
}

/// Gaussian elimination of the (m+n) x |S| marginal system restricted to a
/// support. Returns the unique solution when the support columns are
/// independent and the full system is consistent, `None` otherwise.
fn solve_support(problem: &GeneralizedTransportProblem, support: &[usize]) -> Option<Vec<f64>> {
    let (m, n) = (problem.m, problem.n);
    let rows = m + n;
    let cols = support.len();
    let mut a = vec![0.0f64; rows * cols];
    for (col, &idx) in support.iter().enumerate() {
        let i = idx % m;
        let j = idx / m;
        a[j * cols + col] = 1.0; // column-sum row j
        a[(n + i) * cols + col] = 1.0; // row-sum row i
    }
    let mut b = problem.rhs();
    debug_assert_eq!(b.len(), rows);
    let mut pivot_row = 0usize;
    let mut pivots = Vec::with_capacity(cols);
    for col in 0..cols {
        let mut best = pivot_row;
        for r in pivot_row..rows {
            if a[r * cols + col].abs() > a[best * cols + col].abs() {
                best = r;
            }
        }
        if a[best * cols + col].abs() < 1e-12 {
            return None; // rank-deficient support: solution not unique
        }
        if best != pivot_row {
            for c in 0..cols {
                a.swap(pivot_row * cols + c, best * cols + c);
            }
            b.swap(pivot_row, best);
        }
        let pv = a[pivot_row * cols + col];
        for r in (pivot_row + 1)..rows {
            let f = a[r * cols + col] / pv;
            if f != 0.0 {
                for c in col..cols {
                    a[r * cols + c] -= f * a[pivot_row * cols + c];
                }
                b[r] -= f * b[pivot_row];
            }
        }
        pivots.push(pivot_row);
        pivot_row += 1;
    }
    // consistency of the eliminated-out equations
    for r in pivot_row..rows {
        if b[r].abs() > 1e-9 {
            return None;
        }
    }
    let mut x = vec![0.0f64; cols];
    for col in (0..cols).rev() {
        let r = pivots[col];
        let mut acc = b[r];
        for c in (col + 1)..cols {
            acc -= a[r * cols + c] * x[c];
        }
        x[col] = acc / a[r * cols + col];
    }
    Some(x)
}

/// The 2x2 doubly stochastic matrices form the segment
/// {[[t, 1-t], [1-t, t]] : t in [0, 1]}; the projection minimizes a scalar
/// quadratic in t.
fn birkhoff_2x2(problem: &GeneralizedTransportProblem) -> OracleResult {
    let phi = &problem.phi; // column-major: (phi11, phi21, phi12, phi22)
    let (p11, p21, p12, p22) = (phi[0], phi[1], phi[2], phi[3]);
    let t = ((2.0 + p11 + p22 - p12 - p21) / 4.0).clamp(0.0, 1.0);
    let objective = 0.5
        * problem.sigma
        * ((t - p11).powi(2)
            + (1.0 - t - p12).powi(2)
            + (1.0 - t - p21).powi(2)
            + (t - p22).powi(2));
    let plan = DenseMat::from_rows(&[vec![t, 1.0 - t], vec![1.0 - t, t]]);
    OracleResult { objective, plan }
}
