//! Generalized transport problems: box-constrained plans with marginal and
//! total-mass constraints, matrix-free constraint operators, objective and
//! KKT residuals, and seeded instance generators.
//!
//! Plans are stored in vectorized column-major form throughout: the (i, j)
//! entry of an m-by-n plan lives at index `i + j*m`. All index arithmetic in
//! this crate relies on that single convention.

use crate::sparsela::{norm2, DenseMat};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("marginal masses differ: sum(mu) = {mu_sum}, sum(nu) = {nu_sum}")]
    MassImbalance { mu_sum: f64, nu_sum: f64 },
    #[error("marginal has a negative entry: {value} at index {index}")]
    NegativeMarginal { index: usize, value: f64 },
    #[error("requested mass {a} exceeds the feasible maximum {a_max}")]
    InfeasibleFraction { a: f64, a_max: f64 },
    #[error("quadratic-distance cost needs a perfect-square size, got {n}")]
    NonSquareGrid { n: usize },
    #[error("fixed entry value {value} outside [0, 1]")]
    FixedValueOutOfRange { value: f64 },
    #[error("entry index ({i}, {j}) out of bounds for {m}x{n}")]
    IndexOutOfBounds { i: usize, j: usize, m: usize, n: usize },
    #[error("dimension mismatch: {context} expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid bounds at index {index}: lower {lower} > upper {upper}")]
    InvalidBounds { index: usize, lower: f64, upper: f64 },
}

/// Feasible region of a slack variable: the nonnegative orthant or {0}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConeKind {
    NonNegative,
    Zero,
}

/// The generalized transport problem in vectorized form:
/// minimize sigma/2 ||x - phi||^2 + c^T x over x in [lower, upper],
/// subject to column sums + y = mu, row sums + z = nu, and (optionally)
/// total mass = a, with y and z constrained to their cones.
///
/// Upper bounds use `None` as the explicit "unbounded" sentinel so that no
/// IEEE infinity ever enters an inner product.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedTransportProblem {
    pub m: usize,
    pub n: usize,
    /// number of total-mass rows, 0 or 1; the single row is all-ones
    pub r: usize,
    pub sigma: f64,
    /// cost vector, length m*n, column-major
    pub c: Vec<f64>,
    /// anchor vector, length m*n, column-major
    pub phi: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<Option<f64>>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub a: Option<f64>,
    pub cone_y: ConeKind,
    pub cone_z: ConeKind,
}

/// Direction of the affine constraint operator H = (G, I_Y, I_Z).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorDirection {
    Forward,
    Adjoint,
}

/// The four KKT residuals plus their normalized maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResidual {
    pub res_x: f64,
    pub res_y: f64,
    pub res_z: f64,
    pub res_lambda: f64,
    /// max of the four ratios against iteration-0 values; 1.0 at the baseline
    pub relative: f64,
}

const KKT_DENOM_FLOOR: f64 = 1e-16;

impl KktResidual {
    /// Normalized maximum against baseline values, denominators floored at
    /// 1e-16. A baseline component that is already at roundoff (the feasible
    /// cold start zeroes three of the four) would pin its ratio at
    /// noise/floor forever, so such components fall back to an absolute
    /// criterion with denominator max(1, scale).
    pub fn relative_to(&self, base: &KktResidual, scale: f64) -> f64 {
        let noise_floor = 1e-13 * scale.max(1.0);
        let ratio = |r: f64, r0: f64| {
            if r0 <= noise_floor {
                r / scale.max(1.0)
            } else {
                r / r0.max(KKT_DENOM_FLOOR)
            }
        };
        ratio(self.res_x, base.res_x)
            .max(ratio(self.res_y, base.res_y))
            .max(ratio(self.res_z, base.res_z))
            .max(ratio(self.res_lambda, base.res_lambda))
    }
}

impl GeneralizedTransportProblem {
    /// length of the plan block, m*n
    pub fn plan_len(&self) -> usize {
        self.m * self.n
    }

    /// length of the primal triple u = (x, y, z)
    pub fn primal_len(&self) -> usize {
        self.m * self.n + self.n + self.m
    }

    /// length of the multiplier, n + m + r
    pub fn dual_len(&self) -> usize {
        self.n + self.m + self.r
    }

    /// right-hand side b = (mu, nu, a)
    pub fn rhs(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.dual_len());
        b.extend_from_slice(&self.mu);
        b.extend_from_slice(&self.nu);
        if self.r == 1 {
            b.push(self.a.expect("r = 1 requires a"));
        }
        b
    }

    /// bounds of coordinate i of the full primal triple u = (x, y, z)
    pub fn primal_bounds(&self, i: usize) -> (f64, Option<f64>) {
        let mn = self.plan_len();
        if i < mn {
            (self.lower[i], self.upper[i])
        } else {
            let cone = if i < mn + self.n {
                self.cone_y
            } else {
                self.cone_z
            };
            match cone {
                ConeKind::NonNegative => (0.0, None),
                ConeKind::Zero => (0.0, Some(0.0)),
            }
        }
    }

    fn validate(&self) -> Result<(), ProblemError> {
        let mn = self.plan_len();
        for (name, vec, expected) in [
            ("c", self.c.len(), mn),
            ("phi", self.phi.len(), mn),
            ("lower", self.lower.len(), mn),
            ("upper", self.upper.len(), mn),
            ("mu", self.mu.len(), self.n),
            ("nu", self.nu.len(), self.m),
        ] {
            if vec != expected {
                return Err(ProblemError::DimensionMismatch {
                    context: name,
                    expected,
                    got: vec,
                });
            }
        }
        for (idx, &v) in self.mu.iter().enumerate() {
            if v < 0.0 {
                return Err(ProblemError::NegativeMarginal {
                    index: idx,
                    value: v,
                });
            }
        }
        for (idx, &v) in self.nu.iter().enumerate() {
            if v < 0.0 {
                return Err(ProblemError::NegativeMarginal {
                    index: idx,
                    value: v,
                });
            }
        }
        for i in 0..mn {
            if let Some(u) = self.upper[i] {
                if self.lower[i] > u {
                    return Err(ProblemError::InvalidBounds {
                        index: i,
                        lower: self.lower[i],
                        upper: u,
                    });
                }
            }
        }
        if self.r == 1 {
            let a = self.a.unwrap_or(0.0);
            let a_max = total(&self.mu).min(total(&self.nu));
            if a <= 0.0 || a > a_max + 1e-12 * a_max.abs().max(1.0) {
                return Err(ProblemError::InfeasibleFraction { a, a_max });
            }
        }
        Ok(())
    }
}

fn total(v: &[f64]) -> f64 {
    v.iter().sum()
}

/// Balanced optimal transport: linear cost, equality marginals.
pub fn build_optimal_transport(
    cost: &DenseMat,
    mu: &[f64],
    nu: &[f64],
) -> Result<GeneralizedTransportProblem, ProblemError> {
    let (m, n) = (cost.rows, cost.cols);
    if mu.len() != n {
        return Err(ProblemError::DimensionMismatch {
            context: "mu",
            expected: n,
            got: mu.len(),
        });
    }
    if nu.len() != m {
        return Err(ProblemError::DimensionMismatch {
            context: "nu",
            expected: m,
            got: nu.len(),
        });
    }
    let (mu_sum, nu_sum) = (total(mu), total(nu));
    if (mu_sum - nu_sum).abs() > 1e-12 * mu_sum.abs().max(nu_sum.abs()).max(1.0) {
        return Err(ProblemError::MassImbalance { mu_sum, nu_sum });
    }
    let problem = GeneralizedTransportProblem {
        m,
        n,
        r: 0,
        sigma: 0.0,
        c: vec_col_major(cost),
        phi: vec![0.0; m * n],
        lower: vec![0.0; m * n],
        upper: vec![None; m * n],
        mu: mu.to_vec(),
        nu: nu.to_vec(),
        a: None,
        cone_y: ConeKind::Zero,
        cone_z: ConeKind::Zero,
    };
    problem.validate()?;
    Ok(problem)
}

/// Projection onto the Birkhoff polytope, optionally with prescribed entries
/// encoded as two-sided equality bounds.
pub fn build_birkhoff_projection(
    phi: &DenseMat,
    fixed: Option<&[(usize, usize, f64)]>,
) -> Result<GeneralizedTransportProblem, ProblemError> {
    let n = phi.rows;
    if phi.cols != n {
        return Err(ProblemError::DimensionMismatch {
            context: "phi",
            expected: n,
            got: phi.cols,
        });
    }
    let mut lower = vec![0.0; n * n];
    let mut upper: Vec<Option<f64>> = vec![None; n * n];
    if let Some(entries) = fixed {
        for &(i, j, v) in entries {
            if i >= n || j >= n {
                return Err(ProblemError::IndexOutOfBounds { i, j, m: n, n });
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(ProblemError::FixedValueOutOfRange { value: v });
            }
            let idx = i + j * n;
            lower[idx] = v;
            upper[idx] = Some(v);
        }
    }
    let problem = GeneralizedTransportProblem {
        m: n,
        n,
        r: 0,
        sigma: 1.0,
        c: vec![0.0; n * n],
        phi: vec_col_major(phi),
        lower,
        upper,
        mu: vec![1.0; n],
        nu: vec![1.0; n],
        a: None,
        cone_y: ConeKind::Zero,
        cone_z: ConeKind::Zero,
    };
    problem.validate()?;
    Ok(problem)
}

/// Partial optimal transport: inequality marginals via nonnegative slacks
/// plus a single total-mass row.
pub fn build_partial_transport(
    cost: &DenseMat,
    mu: &[f64],
    nu: &[f64],
    a: f64,
) -> Result<GeneralizedTransportProblem, ProblemError> {
    let (m, n) = (cost.rows, cost.cols);
    let a_max = total(mu).min(total(nu));
    if a <= 0.0 || a > a_max + 1e-12 * a_max.abs().max(1.0) {
        return Err(ProblemError::InfeasibleFraction { a, a_max });
    }
    let problem = GeneralizedTransportProblem {
        m,
        n,
        r: 1,
        sigma: 0.0,
        c: vec_col_major(cost),
        phi: vec![0.0; m * n],
        lower: vec![0.0; m * n],
        upper: vec![None; m * n],
        mu: mu.to_vec(),
        nu: nu.to_vec(),
        a: Some(a),
        cone_y: ConeKind::NonNegative,
        cone_z: ConeKind::NonNegative,
    };
    problem.validate()?;
    Ok(problem)
}

/// column-major vectorization of a dense (row-major) matrix
pub fn vec_col_major(a: &DenseMat) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.rows * a.cols);
    for j in 0..a.cols {
        for i in 0..a.rows {
            v.push(a.get(i, j));
        }
    }
    v
}

/// inverse of [`vec_col_major`]
pub fn unvec_col_major(v: &[f64], m: usize, n: usize) -> DenseMat {
    assert_eq!(v.len(), m * n);
    let mut a = DenseMat::zeros(m, n);
    for j in 0..n {
        for i in 0..m {
            a.set(i, j, v[i + j * m]);
        }
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    Random,
    QuadraticDistance,
}

/// Seeded cost-matrix generator. `Random` draws i.i.d. uniform entries on
/// [0, 1]; `QuadraticDistance` uses squared Euclidean distances between grid
/// points of the uniform subdivision of the unit square (x varies fastest),
/// which requires n to be a perfect square.
pub fn gen_cost(kind: CostKind, n: usize, seed: u64) -> Result<DenseMat, ProblemError> {
    match kind {
        CostKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut c = DenseMat::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    c.set(i, j, rng.gen::<f64>());
                }
            }
            Ok(c)
        }
        CostKind::QuadraticDistance => {
            let g = (n as f64).sqrt().round() as usize;
            if g * g != n || g < 2 {
                return Err(ProblemError::NonSquareGrid { n });
            }
            let h = 1.0 / (g as f64 - 1.0);
            let point = |k: usize| ((k % g) as f64 * h, (k / g) as f64 * h);
            let mut c = DenseMat::zeros(n, n);
            for i in 0..n {
                let (xi, yi) = point(i);
                for j in 0..n {
                    let (xj, yj) = point(j);
                    c.set(i, j, (xi - xj).powi(2) + (yi - yj).powi(2));
                }
            }
            Ok(c)
        }
    }
}

/// Matrix-free application of H = (G, I_Y, I_Z) or its adjoint.
///
/// Forward maps u = (x, y, z) to (column sums + y, row sums + z, total mass);
/// Adjoint maps a multiplier back to primal space. Both run in O(m*n).
pub fn apply_constraint_operator(
    problem: &GeneralizedTransportProblem,
    direction: OperatorDirection,
    v: &[f64],
) -> Result<Vec<f64>, ProblemError> {
    match direction {
        OperatorDirection::Forward => {
            if v.len() != problem.primal_len() {
                return Err(ProblemError::DimensionMismatch {
                    context: "forward input",
                    expected: problem.primal_len(),
                    got: v.len(),
                });
            }
            Ok(apply_h(problem, v))
        }
        OperatorDirection::Adjoint => {
            if v.len() != problem.dual_len() {
                return Err(ProblemError::DimensionMismatch {
                    context: "adjoint input",
                    expected: problem.dual_len(),
                    got: v.len(),
                });
            }
            Ok(apply_h_transpose(problem, v))
        }
    }
}

pub(crate) fn apply_h(problem: &GeneralizedTransportProblem, u: &[f64]) -> Vec<f64> {
    let (m, n) = (problem.m, problem.n);
    let mn = m * n;
    let x = &u[..mn];
    let y = &u[mn..mn + n];
    let z = &u[mn + n..];
    let mut out = vec![0.0; problem.dual_len()];
    for j in 0..n {
        let mut col = 0.0;
        for i in 0..m {
            col += x[i + j * m];
        }
        out[j] = col + y[j];
    }
    for i in 0..m {
        let mut row = 0.0;
        for j in 0..n {
            row += x[i + j * m];
        }
        out[n + i] = row + z[i];
    }
    if problem.r == 1 {
        out[n + m] = x.iter().sum();
    }
    out
}

pub(crate) fn apply_h_transpose(problem: &GeneralizedTransportProblem, lambda: &[f64]) -> Vec<f64> {
    let (m, n) = (problem.m, problem.n);
    let mn = m * n;
    let lam_mu = &lambda[..n];
    let lam_nu = &lambda[n..n + m];
    let lam_a = if problem.r == 1 { lambda[n + m] } else { 0.0 };
    let mut out = vec![0.0; problem.primal_len()];
    for j in 0..n {
        for i in 0..m {
            out[i + j * m] = lam_mu[j] + lam_nu[i] + lam_a;
        }
    }
    out[mn..mn + n].copy_from_slice(lam_mu);
    out[mn + n..].copy_from_slice(lam_nu);
    out
}

/// sigma/2 ||x - phi||^2 + c^T x
pub fn objective_h(problem: &GeneralizedTransportProblem, x: &[f64]) -> f64 {
    assert_eq!(x.len(), problem.plan_len());
    let mut quad = 0.0;
    if problem.sigma > 0.0 {
        for i in 0..x.len() {
            let d = x[i] - problem.phi[i];
            quad += d * d;
        }
    }
    0.5 * problem.sigma * quad + crate::sparsela::dot(&problem.c, x)
}

/// componentwise clamp to [lower, upper]; `None` upper bounds never clip
pub fn proj_box(v: &[f64], lower: &[f64], upper: &[Option<f64>]) -> Vec<f64> {
    assert_eq!(v.len(), lower.len());
    assert_eq!(v.len(), upper.len());
    v.iter()
        .enumerate()
        .map(|(i, &vi)| clamp1(vi, lower[i], upper[i]))
        .collect()
}

pub fn proj_cone(v: &[f64], kind: ConeKind) -> Vec<f64> {
    match kind {
        ConeKind::NonNegative => v.iter().map(|&t| t.max(0.0)).collect(),
        ConeKind::Zero => vec![0.0; v.len()],
    }
}

#[inline]
pub(crate) fn clamp1(v: f64, lower: f64, upper: Option<f64>) -> f64 {
    let lo = v.max(lower);
    match upper {
        Some(u) => lo.min(u),
        None => lo,
    }
}

/// Clamp a full primal triple into its feasible box.
pub fn proj_sigma(problem: &GeneralizedTransportProblem, u: &[f64]) -> Vec<f64> {
    assert_eq!(u.len(), problem.primal_len());
    (0..u.len())
        .map(|i| {
            let (lo, hi) = problem.primal_bounds(i);
            clamp1(u[i], lo, hi)
        })
        .collect()
}

/// Natural-residual KKT quantities at (u, lambda). `baseline` supplies the
/// iteration-0 values for the normalized maximum; without it the residual is
/// its own baseline and `relative` is 1.
pub fn kkt_residuals(
    problem: &GeneralizedTransportProblem,
    u: &[f64],
    lambda: &[f64],
    baseline: Option<&KktResidual>,
) -> KktResidual {
    let (m, n) = (problem.m, problem.n);
    let mn = m * n;
    let x = &u[..mn];
    let y = &u[mn..mn + n];
    let z = &u[mn + n..];
    let ht_lambda = apply_h_transpose(problem, lambda);
    let sigma = problem.sigma;

    let mut res_x = 0.0;
    for i in 0..mn {
        let arg = sigma * problem.phi[i] + (1.0 - sigma) * x[i] - problem.c[i] - ht_lambda[i];
        let d = x[i] - clamp1(arg, problem.lower[i], problem.upper[i]);
        res_x += d * d;
    }
    let res_x = res_x.sqrt();

    let cone_res = |vals: &[f64], grad: &[f64], kind: ConeKind| -> f64 {
        let mut acc = 0.0;
        for i in 0..vals.len() {
            let arg = vals[i] - grad[i];
            let p = match kind {
                ConeKind::NonNegative => arg.max(0.0),
                ConeKind::Zero => 0.0,
            };
            let d = vals[i] - p;
            acc += d * d;
        }
        acc.sqrt()
    };
    let res_y = cone_res(y, &ht_lambda[mn..mn + n], problem.cone_y);
    let res_z = cone_res(z, &ht_lambda[mn + n..], problem.cone_z);

    let hu = apply_h(problem, u);
    let b = problem.rhs();
    let diff: Vec<f64> = hu.iter().zip(&b).map(|(h, bi)| h - bi).collect();
    let res_lambda = norm2(&diff);

    let raw = KktResidual {
        res_x,
        res_y,
        res_z,
        res_lambda,
        relative: 1.0,
    };
    let relative = match baseline {
        Some(b0) => raw.relative_to(b0, norm2(&b)),
        None => 1.0,
    };
    KktResidual { relative, ..raw }
}

// --- JSON import/export -------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ProblemJson {
    m: usize,
    n: usize,
    r: usize,
    sigma: f64,
    cost: Vec<Vec<f64>>,
    phi: Vec<Vec<f64>>,
    lower: Vec<Vec<f64>>,
    upper: Vec<Vec<Option<f64>>>,
    mu: Vec<f64>,
    nu: Vec<f64>,
    a: Option<f64>,
    cone_y: ConeKind,
    cone_z: ConeKind,
}

fn rows_from_vec(v: &[f64], m: usize, n: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|i| (0..n).map(|j| v[i + j * m]).collect())
        .collect()
}

impl GeneralizedTransportProblem {
    pub fn to_json(&self) -> String {
        let (m, n) = (self.m, self.n);
        let upper_rows: Vec<Vec<Option<f64>>> = (0..m)
            .map(|i| (0..n).map(|j| self.upper[i + j * m]).collect())
            .collect();
        let doc = ProblemJson {
            m,
            n,
            r: self.r,
            sigma: self.sigma,
            cost: rows_from_vec(&self.c, m, n),
            phi: rows_from_vec(&self.phi, m, n),
            lower: rows_from_vec(&self.lower, m, n),
            upper: upper_rows,
            mu: self.mu.clone(),
            nu: self.nu.clone(),
            a: self.a,
            cone_y: self.cone_y,
            cone_z: self.cone_z,
        };
        serde_json::to_string_pretty(&doc).expect("problem serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let doc: ProblemJson = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let (m, n) = (doc.m, doc.n);
        let flat = |rows: &[Vec<f64>], name: &str| -> Result<Vec<f64>, String> {
            if rows.len() != m || rows.iter().any(|r| r.len() != n) {
                return Err(format!("{name}: expected {m} rows of length {n}"));
            }
            let mut v = vec![0.0; m * n];
            for (i, row) in rows.iter().enumerate() {
                for (j, &val) in row.iter().enumerate() {
                    v[i + j * m] = val;
                }
            }
            Ok(v)
        };
        if doc.upper.len() != m || doc.upper.iter().any(|r| r.len() != n) {
            return Err(format!("upper: expected {m} rows of length {n}"));
        }
        let mut upper = vec![None; m * n];
        for (i, row) in doc.upper.iter().enumerate() {
            for (j, &val) in row.iter().enumerate() {
                upper[i + j * m] = val;
            }
        }
        let problem = GeneralizedTransportProblem {
            m,
            n,
            r: doc.r,
            sigma: doc.sigma,
            c: flat(&doc.cost, "cost")?,
            phi: flat(&doc.phi, "phi")?,
            lower: flat(&doc.lower, "lower")?,
            upper,
            mu: doc.mu,
            nu: doc.nu,
            a: doc.a,
            cone_y: doc.cone_y,
            cone_z: doc.cone_z,
        };
        problem.validate().map_err(|e| e.to_string())?;
        Ok(problem)
    }
}

/// Dense assembly of H for small sizes; the oracle for the matrix-free path.
pub fn dense_h(problem: &GeneralizedTransportProblem) -> DenseMat {
    let rows = problem.dual_len();
    let cols = problem.primal_len();
    let (m, n) = (problem.m, problem.n);
    let mn = m * n;
    let mut h = DenseMat::zeros(rows, cols);
    for j in 0..n {
        for i in 0..m {
            h.set(j, i + j * m, 1.0); // column-sum block, I_n (x) 1_m^T
            h.set(n + i, i + j * m, 1.0); // row-sum block, 1_n^T (x) I_m
        }
    }
    if problem.r == 1 {
        for k in 0..mn {
            h.set(n + m, k, 1.0);
        }
    }
    for j in 0..n {
        h.set(j, mn + j, 1.0); // I_Y
    }
    for i in 0..m {
        h.set(n + i, mn + n + i, 1.0); // I_Z
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparsela::dot;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn toy_ot() -> GeneralizedTransportProblem {
        let c = DenseMat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        build_optimal_transport(&c, &[0.5, 0.5], &[0.5, 0.5]).unwrap()
    }

    #[test]
    fn ot_builder_maps_fields() {
        let p = toy_ot();
        assert_eq!(p.c, vec![0.0, 1.0, 1.0, 0.0]);
        assert_eq!(p.rhs(), vec![0.5, 0.5, 0.5, 0.5]);
        assert_eq!(p.sigma, 0.0);
        assert_eq!(p.r, 0);
        assert_eq!(p.cone_y, ConeKind::Zero);
        assert!(p.upper.iter().all(|u| u.is_none()));
    }

    #[test]
    fn ot_builder_accepts_balanced_and_rejects_imbalance() {
        let c = DenseMat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!(build_optimal_transport(&c, &[0.6, 0.4], &[0.5, 0.5]).is_ok());
        match build_optimal_transport(&c, &[0.6, 0.6], &[0.5, 0.5]) {
            Err(ProblemError::MassImbalance { .. }) => {}
            other => panic!("expected mass imbalance, got {other:?}"),
        }
        match build_optimal_transport(&c, &[-0.5, 1.5], &[0.5, 0.5]) {
            Err(ProblemError::NegativeMarginal { .. }) => {}
            other => panic!("expected negativity error, got {other:?}"),
        }
    }

    #[test]
    fn birkhoff_builder_maps_fields() {
        let phi = DenseMat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let p = build_birkhoff_projection(&phi, None).unwrap();
        assert_eq!(p.sigma, 1.0);
        assert_eq!(p.phi, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(p.mu, vec![1.0, 1.0]);
        assert!(p.c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn birkhoff_fixed_entry_sets_equality_bounds() {
        let phi = DenseMat::from_rows(&[vec![0.3, 0.7], vec![0.6, 0.4]]);
        let p = build_birkhoff_projection(&phi, Some(&[(0, 0, 0.3)])).unwrap();
        // (1,1) in matrix terms is the first column-major coordinate
        assert_eq!(p.lower[0], 0.3);
        assert_eq!(p.upper[0], Some(0.3));
        assert_eq!(p.lower[1], 0.0);
        assert_eq!(p.upper[1], None);

        assert!(build_birkhoff_projection(&phi, Some(&[(0, 0, 1.5)])).is_err());
        assert!(build_birkhoff_projection(&phi, Some(&[(5, 0, 0.5)])).is_err());
    }

    #[test]
    fn partial_builder_dimensions_and_errors() {
        let c = DenseMat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let p = build_partial_transport(&c, &[1.0, 1.0], &[1.0, 1.0], 1.0).unwrap();
        assert_eq!(p.r, 1);
        assert_eq!(p.dual_len(), 5);
        assert_eq!(p.rhs().len(), 5);
        assert_eq!(p.cone_y, ConeKind::NonNegative);
        match build_partial_transport(&c, &[1.0, 1.0], &[1.0, 1.0], 3.0) {
            Err(ProblemError::InfeasibleFraction { .. }) => {}
            other => panic!("expected infeasible fraction, got {other:?}"),
        }
    }

    #[test]
    fn quadratic_cost_on_unit_grid() {
        let c = gen_cost(CostKind::QuadraticDistance, 4, 0).unwrap();
        // 2x2 grid, h = 1: points (0,0),(1,0),(0,1),(1,1)
        assert!((c.get(0, 1) - 1.0).abs() < 1e-15);
        assert!((c.get(0, 3) - 2.0).abs() < 1e-15);
        for i in 0..4 {
            assert_eq!(c.get(i, i), 0.0);
        }
        assert!(gen_cost(CostKind::QuadraticDistance, 5, 0).is_err());
    }

    #[test]
    fn random_cost_is_seed_deterministic() {
        let a = gen_cost(CostKind::Random, 6, 42).unwrap();
        let b = gen_cost(CostKind::Random, 6, 42).unwrap();
        assert_eq!(a, b);
        let c = gen_cost(CostKind::Random, 6, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn forward_operator_on_2x2_example() {
        let p = toy_ot();
        // X = [[1,2],[3,4]] column-major
        let mut u = vec![1.0, 3.0, 2.0, 4.0];
        u.extend_from_slice(&[0.0, 0.0, 0.0, 0.0]);
        let hu = apply_constraint_operator(&p, OperatorDirection::Forward, &u).unwrap();
        assert_eq!(hu, vec![4.0, 6.0, 3.0, 7.0]);
    }

    #[test]
    fn adjoint_of_first_column_row() {
        let p = toy_ot();
        let mut lambda = vec![0.0; p.dual_len()];
        lambda[0] = 1.0;
        let htl = apply_constraint_operator(&p, OperatorDirection::Adjoint, &lambda).unwrap();
        // ones exactly on column 1 of X, plus the y_1 slot
        assert_eq!(htl[..4], [1.0, 1.0, 0.0, 0.0]);
        assert_eq!(htl[4], 1.0);
        assert_eq!(htl[5], 0.0);
    }

    #[test]
    fn matrix_free_h_matches_dense_kron_form() {
        let mut rng = StdRng::seed_from_u64(5);
        for (m, n, r) in [(2, 3, 0), (4, 4, 1), (8, 5, 0), (3, 8, 1)] {
            let c = DenseMat::zeros(m, n);
            let mu: Vec<f64> = vec![1.0; n];
            let nu: Vec<f64> = (0..m).map(|_| n as f64 / m as f64).collect();
            let p = if r == 0 {
                build_optimal_transport(&c, &mu, &nu).unwrap()
            } else {
                build_partial_transport(&c, &mu, &nu, 0.5).unwrap()
            };
            let h = dense_h(&p);
            for _ in 0..5 {
                let u: Vec<f64> = (0..p.primal_len())
                    .map(|_| rng.gen::<f64>() - 0.5)
                    .collect();
                let hu = apply_h(&p, &u);
                let hu_dense = h.matvec(&u);
                for i in 0..hu.len() {
                    assert!((hu[i] - hu_dense[i]).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn objective_examples() {
        let p = toy_ot();
        let x = vec![0.5, 0.0, 0.0, 0.5];
        assert!((objective_h(&p, &x) - dot(&p.c, &x)).abs() < 1e-15);

        let phi = DenseMat::from_rows(&[vec![0.2, 0.8], vec![0.8, 0.2]]);
        let bp = build_birkhoff_projection(&phi, None).unwrap();
        assert_eq!(objective_h(&bp, &bp.phi.clone()), 0.0);

        // sigma = 2, phi = 0, c = 0, x = (1,1) -> 2
        let mut q = toy_ot();
        q.sigma = 2.0;
        q.m = 1;
        q.n = 2;
        q.c = vec![0.0, 0.0];
        q.phi = vec![0.0, 0.0];
        assert!((objective_h(&q, &[1.0, 1.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn proj_box_examples() {
        let v = vec![-1.0, 0.5, 9.0];
        let lower = vec![0.0; 3];
        let upper = vec![Some(1.0); 3];
        assert_eq!(proj_box(&v, &lower, &upper), vec![0.0, 0.5, 1.0]);
        let inside = vec![0.1, 0.2, 0.9];
        assert_eq!(proj_box(&inside, &lower, &upper), inside);
        assert_eq!(proj_cone(&[-1.0, 2.0], ConeKind::NonNegative), [0.0, 2.0]);
        assert_eq!(proj_cone(&[-1.0, 2.0], ConeKind::Zero), [0.0, 0.0]);
    }

    #[test]
    fn kkt_at_trivial_points() {
        let p = toy_ot();
        let u = vec![0.0; p.primal_len()];
        let lambda = vec![0.0; p.dual_len()];
        let res = kkt_residuals(&p, &u, &lambda, None);
        assert!((res.res_lambda - norm2(&p.rhs())).abs() < 1e-14);

        // doubly stochastic anchor is a KKT point of its own projection
        let phi = DenseMat::from_rows(&[vec![0.25, 0.75], vec![0.75, 0.25]]);
        let bp = build_birkhoff_projection(&phi, None).unwrap();
        let mut u = bp.phi.clone();
        u.extend_from_slice(&[0.0; 4]);
        let res = kkt_residuals(&bp, &u, &vec![0.0; bp.dual_len()], None);
        assert!(res.res_x < 1e-14);
        assert!(res.res_y < 1e-14);
        assert!(res.res_z < 1e-14);
        assert!(res.res_lambda < 1e-14);
    }

    #[test]
    fn kkt_lambda_scales_linearly_with_b_and_u() {
        let p = toy_ot();
        let mut rng = StdRng::seed_from_u64(9);
        let u: Vec<f64> = (0..p.primal_len()).map(|_| rng.gen::<f64>()).collect();
        let lambda = vec![0.0; p.dual_len()];
        let r1 = kkt_residuals(&p, &u, &lambda, None);
        let mut scaled = p.clone();
        let factor = 3.5;
        for v in scaled.mu.iter_mut().chain(scaled.nu.iter_mut()) {
            *v *= factor;
        }
        let us: Vec<f64> = u.iter().map(|v| v * factor).collect();
        let r2 = kkt_residuals(&scaled, &us, &lambda, None);
        assert!((r2.res_lambda - factor * r1.res_lambda).abs() < 1e-12);
    }

    #[test]
    fn json_roundtrip() {
        let c = DenseMat::from_rows(&[vec![1.0, 2.0, 0.5], vec![3.0, 4.0, 0.1]]);
        let p = build_partial_transport(&c, &[0.4, 0.3, 0.3], &[0.5, 0.5], 0.7).unwrap();
        let text = p.to_json();
        let q = GeneralizedTransportProblem::from_json(&text).unwrap();
        assert_eq!(p, q);
    }

    proptest! {
        #[test]
        fn adjoint_identity(seed in 0u64..100) {
            let mut rng = StdRng::seed_from_u64(seed);
            let m = 2 + (seed as usize % 7);
            let n = 2 + ((seed as usize / 7) % 7);
            let c = DenseMat::zeros(m, n);
            let mu = vec![1.0; n];
            let nu = vec![n as f64 / m as f64; m];
            let p = if seed % 2 == 0 {
                build_optimal_transport(&c, &mu, &nu).unwrap()
            } else {
                build_partial_transport(&c, &mu, &nu, 0.3).unwrap()
            };
            let u: Vec<f64> = (0..p.primal_len()).map(|_| rng.gen::<f64>() - 0.5).collect();
            let lam: Vec<f64> = (0..p.dual_len()).map(|_| rng.gen::<f64>() - 0.5).collect();
            let lhs = dot(&apply_h(&p, &u), &lam);
            let rhs = dot(&u, &apply_h_transpose(&p, &lam));
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn proj_box_idempotent_and_nonexpansive(seed in 0u64..200) {
            let mut rng = StdRng::seed_from_u64(seed);
            let len = 12;
            let lower: Vec<f64> = (0..len).map(|_| rng.gen::<f64>() - 1.0).collect();
            let upper: Vec<Option<f64>> = lower
                .iter()
                .map(|&l| if rng.gen::<bool>() { Some(l + rng.gen::<f64>()) } else { None })
                .collect();
            let v1: Vec<f64> = (0..len).map(|_| 4.0 * rng.gen::<f64>() - 2.0).collect();
            let v2: Vec<f64> = (0..len).map(|_| 4.0 * rng.gen::<f64>() - 2.0).collect();
            let p1 = proj_box(&v1, &lower, &upper);
            let p2 = proj_box(&v2, &lower, &upper);
            let pp1 = proj_box(&p1, &lower, &upper);
            prop_assert_eq!(&p1, &pp1);
            let dp: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| a - b).collect();
            let dv: Vec<f64> = v1.iter().zip(&v2).map(|(a, b)| a - b).collect();
            prop_assert!(norm2(&dp) <= norm2(&dv) + 1e-14);
        }
    }
}
