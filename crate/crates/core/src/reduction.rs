//! Exact reduction of each Newton system to independent nearly-singular
//! graph Laplacian systems: Schur elimination of the total-mass row via a
//! rank-one Sherman-Woodbury correction, conjugation by Q = diag(I, -I) into
//! an honest bipartite graph Laplacian, connected-component splitting by
//! breadth-first search, and a hybrid direct/AMG dispatch per component.

use crate::amg::{
    amg_solve, setup_hierarchy_with_kernel, AmgConfig, InterpolationKind, SmootherKind,
};
use crate::sparsela::{dot, pcg_jacobi, CsrMatrix, DenseMat, DenseSymFactor};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReductionError {
    #[error("negative weight in reduced system: {which}[{index}] = {value}")]
    NegativeWeight {
        which: &'static str,
        index: usize,
        value: f64,
    },
    #[error("Sherman-Woodbury correction scalar {value:.3e} is numerically singular")]
    SingularCorrection { value: f64 },
    #[error(
        "linear component solve failed: size {size}, relative residual {residual:.3e} after {iterations} iterations"
    )]
    ComponentSolveFailed {
        size: usize,
        residual: f64,
        iterations: usize,
    },
}

/// One reduced system T = eps*I + K + T diag(s) T^T in bipartite form:
/// the weight matrix Y (m x n) carries vec(Y) = s, and node i < n is the
/// i-th column node while node n + i is the i-th row node.
#[derive(Debug, Clone)]
pub struct ReducedLaplacianSystem {
    pub epsilon: f64,
    /// diagonal t >= 0, length m + n (column-node block first)
    pub k_diag: Vec<f64>,
    /// bipartite weights, rows = m, cols = n
    pub y: CsrMatrix,
    pub m: usize,
    pub n: usize,
    /// nodes with no incident edge and zero t, solvable as eps * xi = z
    pub zero_degree: Vec<usize>,
}

/// Schur pieces of the eliminated total-mass row (r = 1).
#[derive(Debug, Clone)]
pub struct SchurPieces {
    /// Pi~ = eps + Pi S Pi^T, a positive scalar
    pub pi_tilde: f64,
    /// Psi = T S Pi^T, length m + n
    pub psi: Vec<f64>,
}

/// Connected components of the bipartite graph of Y.
#[derive(Debug, Clone)]
pub struct ComponentSplit {
    /// component id per node, length m + n
    pub labels: Vec<usize>,
    /// permutation gathering each component contiguously
    pub perm: Vec<usize>,
    /// per component: global node indices, column nodes first
    pub blocks: Vec<ComponentBlock>,
}

#[derive(Debug, Clone)]
pub struct ComponentBlock {
    pub nodes: Vec<usize>,
    /// how many of `nodes` are column nodes (they come first)
    pub num_col_nodes: usize,
}

/// Builds the reduced system from the diagonal data of one Newton step.
/// `s` has length m*n (column-major), `t` has length m + n.
pub fn assemble_bipartite_laplacian(
    s: &[f64],
    t: &[f64],
    epsilon: f64,
    m: usize,
    n: usize,
) -> Result<ReducedLaplacianSystem, ReductionError> {
    assert_eq!(s.len(), m * n);
    assert_eq!(t.len(), m + n);
    for (index, &v) in s.iter().enumerate() {
        if v < 0.0 {
            return Err(ReductionError::NegativeWeight {
                which: "s",
                index,
                value: v,
            });
        }
    }
    for (index, &v) in t.iter().enumerate() {
        if v < 0.0 {
            return Err(ReductionError::NegativeWeight {
                which: "t",
                index,
                value: v,
            });
        }
    }
    let mut triplets = Vec::new();
    for j in 0..n {
        for i in 0..m {
            let w = s[i + j * m];
            if w > 0.0 {
                triplets.push((i, j, w));
            }
        }
    }
    let y = CsrMatrix::from_triplets(m, n, &triplets);
    let yt = y.transpose();
    let mut zero_degree = Vec::new();
    for node in 0..(m + n) {
        let deg = if node < n {
            yt.row_ptr[node + 1] - yt.row_ptr[node]
        } else {
            y.row_ptr[node - n + 1] - y.row_ptr[node - n]
        };
        if deg == 0 && t[node] == 0.0 {
            zero_degree.push(node);
        }
    }
    Ok(ReducedLaplacianSystem {
        epsilon,
        k_diag: t.to_vec(),
        y,
        m,
        n,
        zero_degree,
    })
}

impl ReducedLaplacianSystem {
    /// Assembled T0 = T diag(s) T^T in block form (diagnostics and tests).
    pub fn assemble_t0(&self) -> CsrMatrix {
        self.assemble_block_matrix(1.0)
    }

    /// Assembled Laplacian A0 = Q T0 Q: same diagonals, negated couplings.
    pub fn assemble_a0(&self) -> CsrMatrix {
        self.assemble_block_matrix(-1.0)
    }

    /// Full matrix A = eps*I + K + A0 the hybrid solver works with.
    pub fn assemble_full(&self) -> CsrMatrix {
        let a0 = self.assemble_a0();
        let big_m = self.m + self.n;
        let mut triplets = Vec::with_capacity(a0.nnz() + big_m);
        for i in 0..big_m {
            for p in a0.row_ptr[i]..a0.row_ptr[i + 1] {
                triplets.push((i, a0.col_idx[p], a0.values[p]));
            }
            triplets.push((i, i, self.epsilon + self.k_diag[i]));
        }
        CsrMatrix::from_triplets(big_m, big_m, &triplets)
    }

    fn assemble_block_matrix(&self, coupling_sign: f64) -> CsrMatrix {
        let (m, n) = (self.m, self.n);
        let mut triplets = Vec::new();
        for i in 0..m {
            for p in self.y.row_ptr[i]..self.y.row_ptr[i + 1] {
                let j = self.y.col_idx[p];
                let w = self.y.values[p];
                // column node j, row node n + i
                triplets.push((j, j, w));
                triplets.push((n + i, n + i, w));
                triplets.push((j, n + i, coupling_sign * w));
                triplets.push((n + i, j, coupling_sign * w));
            }
        }
        CsrMatrix::from_triplets(m + n, m + n, &triplets)
    }

    /// BFS over the bipartite adjacency in O(nnz); isolated nodes become
    /// singleton components. Column nodes come first inside each block.
    pub fn split_components(&self) -> ComponentSplit {
        let (m, n) = (self.m, self.n);
        let total = m + n;
        let yt = self.y.transpose();
        let mut labels = vec![usize::MAX; total];
        let mut blocks = Vec::new();
        let mut queue = std::collections::VecDeque::new();
        for start in 0..total {
            if labels[start] != usize::MAX {
                continue;
            }
            let id = blocks.len();
            labels[start] = id;
            queue.push_back(start);
            let mut members = Vec::new();
            while let Some(node) = queue.pop_front() {
                members.push(node);
                // neighbors of column node j are row nodes n + i with Y_ij > 0
                if node < n {
                    for p in yt.row_ptr[node]..yt.row_ptr[node + 1] {
                        let nb = n + yt.col_idx[p];
                        if labels[nb] == usize::MAX {
                            labels[nb] = id;
                            queue.push_back(nb);
                        }
                    }
                } else {
                    let i = node - n;
                    for p in self.y.row_ptr[i]..self.y.row_ptr[i + 1] {
                        let nb = self.y.col_idx[p];
                        if labels[nb] == usize::MAX {
                            labels[nb] = id;
                            queue.push_back(nb);
                        }
                    }
                }
            }
            members.sort_unstable();
            let num_col_nodes = members.iter().take_while(|&&v| v < n).count();
            blocks.push(ComponentBlock {
                nodes: members,
                num_col_nodes,
            });
        }
        let mut perm = Vec::with_capacity(total);
        for b in &blocks {
            perm.extend_from_slice(&b.nodes);
        }
        ComponentSplit {
            labels,
            perm,
            blocks,
        }
    }
}

/// Which iterative backend handles large components.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearBackend {
    Amg,
    Pcg,
}

#[derive(Debug, Clone)]
pub struct SolvePolicy {
    /// components at or below this size go to the dense direct path;
    /// `None` selects max(64, ceil(M^(1/3)))
    pub direct_threshold: Option<usize>,
    pub backend: LinearBackend,
    pub tol: f64,
    pub max_iter: usize,
    /// size cap for the dense fallback after an iterative failure
    pub fallback_cap: usize,
}

impl Default for SolvePolicy {
    fn default() -> Self {
        SolvePolicy {
            direct_threshold: None,
            backend: LinearBackend::Amg,
            tol: 1e-11,
            max_iter: 200,
            fallback_cap: 4096,
        }
    }
}

impl SolvePolicy {
    pub fn effective_threshold(&self, big_m: usize) -> usize {
        self.direct_threshold
            .unwrap_or_else(|| 64usize.max((big_m as f64).powf(1.0 / 3.0).ceil() as usize))
    }
}

/// Iteration counts of one reduced solve: maxima/totals over the iterative
/// component solves (all zero when everything went direct).
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearSolveStats {
    pub max_iterations: usize,
    pub total_iterations: usize,
    pub iterative_components: usize,
    pub direct_components: usize,
}

enum ComponentSolver {
    /// 1x1 block: divide by eps + t
    Scalar { node: usize, diag: f64 },
    Direct {
        nodes: Vec<usize>,
        factor: DenseSymFactor,
    },
    Iterative {
        nodes: Vec<usize>,
        a: CsrMatrix,
        a_ones: Vec<f64>,
        num_col_nodes: usize,
    },
}

/// The component split plus per-component solvers for one T matrix. One
/// instance serves several right-hand sides, which is what the
/// Sherman-Woodbury elimination relies on.
pub struct ReducedSolver {
    system: ReducedLaplacianSystem,
    policy: SolvePolicy,
    components: Vec<ComponentSolver>,
}

impl ReducedSolver {
    pub fn new(
        system: ReducedLaplacianSystem,
        policy: SolvePolicy,
    ) -> Result<Self, ReductionError> {
        let split = system.split_components();
        let big_m = system.m + system.n;
        let threshold = policy.effective_threshold(big_m);
        let full = system.assemble_full();
        let mut components = Vec::with_capacity(split.blocks.len());
        for block in &split.blocks {
            let size = block.nodes.len();
            if size == 1 {
                let node = block.nodes[0];
                components.push(ComponentSolver::Scalar {
                    node,
                    diag: system.epsilon + system.k_diag[node],
                });
                continue;
            }
            let (sub, sub_ones) = extract_submatrix(&full, &system, &block.nodes);
            if size <= threshold {
                let factor = DenseSymFactor::new(&sub.to_dense()).map_err(|_| {
                    ReductionError::ComponentSolveFailed {
                        size,
                        residual: f64::NAN,
                        iterations: 0,
                    }
                })?;
                components.push(ComponentSolver::Direct {
                    nodes: block.nodes.clone(),
                    factor,
                });
            } else {
                components.push(ComponentSolver::Iterative {
                    nodes: block.nodes.clone(),
                    a: sub,
                    a_ones: sub_ones,
                    num_col_nodes: block.num_col_nodes,
                });
            }
        }
        Ok(ReducedSolver {
            system,
            policy,
            components,
        })
    }

    /// Solves T xi = z. Works in the Q-conjugated Laplacian domain and maps
    /// back at the boundary: A (Q xi) = Q z with Q = diag(I_n, -I_m).
    pub fn solve(
        &self,
        z: &[f64],
        stats: &mut LinearSolveStats,
    ) -> Result<Vec<f64>, ReductionError> {
        let (m, n) = (self.system.m, self.system.n);
        assert_eq!(z.len(), m + n);
        let qz: Vec<f64> = apply_q(z, n);
        let mut u = vec![0.0; m + n];
        for comp in &self.components {
            match comp {
                ComponentSolver::Scalar { node, diag } => {
                    u[*node] = qz[*node] / diag;
                }
                ComponentSolver::Direct { nodes, factor } => {
                    let rhs: Vec<f64> = nodes.iter().map(|&g| qz[g]).collect();
                    let x = factor.solve_projected(&rhs);
                    for (local, &g) in nodes.iter().enumerate() {
                        u[g] = x[local];
                    }
                    stats.direct_components += 1;
                }
                ComponentSolver::Iterative {
                    nodes,
                    a,
                    a_ones,
                    num_col_nodes,
                } => {
                    let rhs: Vec<f64> = nodes.iter().map(|&g| qz[g]).collect();
                    let x = self.solve_iterative(a, a_ones, *num_col_nodes, &rhs, stats)?;
                    for (local, &g) in nodes.iter().enumerate() {
                        u[g] = x[local];
                    }
                }
            }
        }
        Ok(apply_q(&u, n))
    }

    fn solve_iterative(
        &self,
        a: &CsrMatrix,
        a_ones: &[f64],
        num_col_nodes: usize,
        rhs: &[f64],
        stats: &mut LinearSolveStats,
    ) -> Result<Vec<f64>, ReductionError> {
        let size = a.rows;
        let (x, iterations, converged, residual) = match self.policy.backend {
            LinearBackend::Amg => {
                let cfg = AmgConfig {
                    interpolation: InterpolationKind::BipartiteThenStandard,
                    bipartite_cols: Some(num_col_nodes),
                    smoother_fine: SmootherKind::GaussSeidel,
                    ..AmgConfig::default()
                };
                let h = setup_hierarchy_with_kernel(a.clone(), Some(a_ones.to_vec()), cfg)
                    .map_err(|_| ReductionError::ComponentSolveFailed {
                        size,
                        residual: f64::NAN,
                        iterations: 0,
                    })?;
                let r = amg_solve(&h, rhs, self.policy.tol, self.policy.max_iter);
                let rel = r.history.last().copied().unwrap_or(0.0);
                (r.x, r.iterations, r.converged, rel)
            }
            LinearBackend::Pcg => {
                let r = pcg_jacobi(
                    a,
                    rhs,
                    self.policy.tol,
                    self.policy.max_iter.max(20 * size),
                    false,
                );
                (r.x, r.iterations, r.converged, r.relative_residual)
            }
        };
        if converged {
            stats.iterative_components += 1;
            stats.max_iterations = stats.max_iterations.max(iterations);
            stats.total_iterations += iterations;
            return Ok(x);
        }
        if size <= self.policy.fallback_cap {
            let factor = DenseSymFactor::new(&a.to_dense()).map_err(|_| {
                ReductionError::ComponentSolveFailed {
                    size,
                    residual,
                    iterations,
                }
            })?;
            let x = factor.solve_projected(rhs);
            stats.direct_components += 1;
            return Ok(x);
        }
        Err(ReductionError::ComponentSolveFailed {
            size,
            residual,
            iterations,
        })
    }
}

/// reconstruct the column-major weight vector s from the stored Y
fn vec_col_major_s(system: &ReducedLaplacianSystem) -> Vec<f64> {
    let (m, n) = (system.m, system.n);
    let mut s = vec![0.0; m * n];
    for i in 0..m {
        for p in system.y.row_ptr[i]..system.y.row_ptr[i + 1] {
            s[i + system.y.col_idx[p] * m] = system.y.values[p];
        }
    }
    s
}

fn apply_q(v: &[f64], n: usize) -> Vec<f64> {
    v.iter()
        .enumerate()
        .map(|(i, &x)| if i < n { x } else { -x })
        .collect()
}

fn extract_submatrix(
    full: &CsrMatrix,
    system: &ReducedLaplacianSystem,
    nodes: &[usize],
) -> (CsrMatrix, Vec<f64>) {
    let mut local_of = std::collections::HashMap::with_capacity(nodes.len());
    for (l, &g) in nodes.iter().enumerate() {
        local_of.insert(g, l);
    }
    let mut triplets = Vec::new();
    for (l, &g) in nodes.iter().enumerate() {
        for p in full.row_ptr[g]..full.row_ptr[g + 1] {
            let col = full.col_idx[p];
            if let Some(&lc) = local_of.get(&col) {
                triplets.push((l, lc, full.values[p]));
            }
        }
    }
    let a = CsrMatrix::from_triplets(nodes.len(), nodes.len(), &triplets);
    // analytic A*1 on the component: the Laplacian part cancels exactly
    let a_ones: Vec<f64> = nodes
        .iter()
        .map(|&g| system.epsilon + system.k_diag[g])
        .collect();
    (a, a_ones)
}

/// Full Newton-system solve specification: the reduced T pieces plus the
/// optional Schur data of the eliminated total-mass row.
pub struct NewtonSystemSolve<'a> {
    pub system: ReducedLaplacianSystem,
    pub schur: Option<SchurPieces>,
    pub policy: &'a SolvePolicy,
}

/// Computes the Schur pieces from s: Psi = T s and Pi~ = eps + sum(s).
pub fn schur_pieces(s: &[f64], epsilon: f64, m: usize, n: usize) -> SchurPieces {
    let mut psi = vec![0.0; m + n];
    for j in 0..n {
        for i in 0..m {
            let w = s[i + j * m];
            psi[j] += w;
            psi[n + i] += w;
        }
    }
    SchurPieces {
        pi_tilde: epsilon + s.iter().sum::<f64>(),
        psi,
    }
}

impl NewtonSystemSolve<'_> {
    /// Solves the (M + r) x (M + r) system for xi given z. For r = 1 the
    /// total-mass row is eliminated: two T-solves against one shared set of
    /// component factorizations/hierarchies plus a scalar correction recover
    /// the answer, never forming the corrected matrix.
    pub fn solve(
        &self,
        z: &[f64],
        stats: &mut LinearSolveStats,
    ) -> Result<Vec<f64>, ReductionError> {
        let big_m = self.system.m + self.system.n;
        let solver = ReducedSolver::new(self.system.clone(), self.policy.clone())?;
        match &self.schur {
            None => {
                assert_eq!(z.len(), big_m);
                solver.solve(z, stats)
            }
            Some(schur) => {
                assert_eq!(z.len(), big_m + 1);
                let (z1, z2) = (&z[..big_m], z[big_m]);
                let pi_tilde = schur.pi_tilde;
                let corrected: Vec<f64> = z1
                    .iter()
                    .zip(&schur.psi)
                    .map(|(zi, psi_i)| zi - psi_i * z2 / pi_tilde)
                    .collect();
                let q0 = solver.solve(&corrected, stats)?;
                let q1 = solver.solve(&schur.psi, stats)?;
                let denom = pi_tilde - dot(&schur.psi, &q1);
                if denom.abs() <= 1e-14 * pi_tilde {
                    // the correction scalar is at the cancellation noise of
                    // Pi~ - Psi^T q1 (it shrinks with beta while Pi~ grows);
                    // solve the whole bordered system directly instead
                    if big_m < self.policy.fallback_cap {
                        let dense = dense_generic_matrix(
                            &vec_col_major_s(&self.system),
                            &self.system.k_diag,
                            self.system.epsilon,
                            self.system.m,
                            self.system.n,
                            1,
                        );
                        let factor = DenseSymFactor::new(&dense).map_err(|_| {
                            ReductionError::SingularCorrection { value: denom }
                        })?;
                        stats.direct_components += 1;
                        return Ok(factor.solve_projected(z));
                    }
                    return Err(ReductionError::SingularCorrection { value: denom });
                }
                let gain = dot(&schur.psi, &q0) / denom;
                let mut xi = vec![0.0; big_m + 1];
                for i in 0..big_m {
                    xi[i] = q0[i] + gain * q1[i];
                }
                xi[big_m] = (z2 - dot(&schur.psi, &xi[..big_m])) / pi_tilde;
                Ok(xi)
            }
        }
    }
}

/// Convenience entry: assemble, reduce, and solve in one call.
#[allow(clippy::too_many_arguments)]
pub fn hybrid_solve(
    s: &[f64],
    t: &[f64],
    epsilon: f64,
    m: usize,
    n: usize,
    r: usize,
    z: &[f64],
    policy: &SolvePolicy,
) -> Result<(Vec<f64>, LinearSolveStats), ReductionError> {
    let system = assemble_bipartite_laplacian(s, t, epsilon, m, n)?;
    let schur = if r == 1 {
        Some(schur_pieces(s, epsilon, m, n))
    } else {
        None
    };
    let solve = NewtonSystemSolve {
        system,
        schur,
        policy,
    };
    let mut stats = LinearSolveStats::default();
    let xi = solve.solve(z, &mut stats)?;
    Ok((xi, stats))
}

/// Dense assembly of the full (M + r) x (M + r) generic matrix; the oracle
/// the hybrid path is tested against.
pub fn dense_generic_matrix(
    s: &[f64],
    t: &[f64],
    epsilon: f64,
    m: usize,
    n: usize,
    r: usize,
) -> DenseMat {
    let big_m = m + n;
    let mut a = DenseMat::zeros(big_m + r, big_m + r);
    for i in 0..big_m + r {
        a.set(i, i, epsilon);
    }
    for i in 0..big_m {
        a.set(i, i, a.get(i, i) + t[i]);
    }
    for j in 0..n {
        for i in 0..m {
            let w = s[i + j * m];
            if w == 0.0 {
                continue;
            }
            // T rows: column node j, row node n + i
            a.set(j, j, a.get(j, j) + w);
            a.set(n + i, n + i, a.get(n + i, n + i) + w);
            a.set(j, n + i, a.get(j, n + i) + w);
            a.set(n + i, j, a.get(n + i, j) + w);
            if r == 1 {
                a.set(j, big_m, a.get(j, big_m) + w);
                a.set(big_m, j, a.get(big_m, j) + w);
                a.set(n + i, big_m, a.get(n + i, big_m) + w);
                a.set(big_m, n + i, a.get(big_m, n + i) + w);
                a.set(big_m, big_m, a.get(big_m, big_m) + w);
            }
        }
    }
    a
}
