//! Kernel-aware algebraic multigrid for A = eps*I + Lambda + A0 with A0 a
//! connected graph Laplacian: strength-based C\F-splitting, ideal/standard
//! interpolation (with a bipartite shortcut for the first level), Galerkin
//! coarse operators, and a W-cycle whose smoother handles the near-kernel
//! direction 1 exactly.

use crate::sparsela::{
    dot, norm2, spmv, triple_product, CsrMatrix, DenseSymFactor, LinAlgError,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AmgError {
    #[error("kernel energy xi^T A xi = {0:.3e} is not positive; matrix is not SPD/SPSD")]
    NonPositiveKernelEnergy(f64),
    #[error("coarsest-level factorization failed: {0}")]
    CoarseFactor(#[from] LinAlgError),
    #[error("iteration limit {max_iter} reached, relative residual {residual:.3e}")]
    IterationLimit { max_iter: usize, residual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmootherKind {
    GaussSeidel,
    WeightedJacobi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpolationKind {
    /// W = -A_FF^{-1} A_FC, dense solve per fine row; desk sizes only
    Ideal,
    /// diagonal two-term approximation of the ideal weights
    Standard,
    /// natural split of a bipartite Laplacian at level 1 (A_FF diagonal, so
    /// the ideal weights are exact and cheap), standard on coarser levels
    BipartiteThenStandard,
}

#[derive(Debug, Clone)]
pub struct AmgConfig {
    /// smoothing steps per half-cycle
    pub theta: usize,
    /// Jacobi weight
    pub omega: f64,
    /// strength threshold
    pub strength_delta: f64,
    /// stop coarsening at this size and factorize
    pub coarsest_max: usize,
    pub smoother_fine: SmootherKind,
    pub smoother_coarse: SmootherKind,
    pub interpolation: InterpolationKind,
    /// size of the first node group for the bipartite shortcut
    pub bipartite_cols: Option<usize>,
    /// relative drop tolerance applied to standard-interpolation rows;
    /// keeps coarse operators sparse
    pub truncation: f64,
    /// treat A as exactly singular with kernel span{1}: project right-hand
    /// sides and re-center iterates
    pub mean_zero: bool,
}

impl Default for AmgConfig {
    fn default() -> Self {
        AmgConfig {
            theta: 5,
            omega: 0.5,
            strength_delta: 0.25,
            coarsest_max: 512,
            smoother_fine: SmootherKind::WeightedJacobi,
            smoother_coarse: SmootherKind::WeightedJacobi,
            interpolation: InterpolationKind::Standard,
            bipartite_cols: None,
            truncation: 0.1,
            mean_zero: false,
        }
    }
}

/// Coarse/fine partition of the node set.
#[derive(Debug, Clone)]
pub struct CfSplit {
    pub coarse: Vec<usize>,
    pub fine: Vec<usize>,
}

/// Strength of connection between two distinct nodes:
/// A_ij / max{min_k A_ik, min_k A_jk} over their neighborhoods. Isolated
/// nodes and rows without negative off-diagonals are never strongly
/// connected.
pub fn strength_of_connection(a: &CsrMatrix, i: usize, j: usize) -> f64 {
    debug_assert_ne!(i, j);
    let row_min = |k: usize| -> Option<f64> {
        let (cols, vals) = a.row(k);
        let mut best: Option<f64> = None;
        for (&c, &v) in cols.iter().zip(vals) {
            if c != k {
                best = Some(best.map_or(v, |b: f64| b.min(v)));
            }
        }
        best
    };
    let (mi, mj) = match (row_min(i), row_min(j)) {
        (Some(a), Some(b)) => (a, b),
        _ => return 0.0,
    };
    let denom = mi.max(mj);
    if denom >= -1e-300 {
        return 0.0;
    }
    let aij = {
        let (cols, vals) = a.row(i);
        cols.iter()
            .position(|&c| c == j)
            .map(|p| vals[p])
            .unwrap_or(0.0)
    };
    aij / denom
}

/// Greedy maximal-independent-set splitting in natural node order: each
/// unvisited node becomes coarse and its strong neighbors become fine. A
/// post-pass promotes any fine node left without a strong coarse neighbor.
pub fn cf_split(a: &CsrMatrix, delta: f64) -> CfSplit {
    let n = a.rows;
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Unvisited,
        Coarse,
        Fine,
    }
    let mut mark = vec![Mark::Unvisited; n];
    for i in 0..n {
        if mark[i] != Mark::Unvisited {
            continue;
        }
        mark[i] = Mark::Coarse;
        let (cols, _) = a.row(i);
        for &j in cols {
            if j != i && strength_of_connection(a, i, j) > delta {
                mark[j] = Mark::Fine;
            }
        }
    }
    // promote fine nodes no coarse node claims strongly (cannot happen for a
    // symmetric strength function, kept as a guard)
    for i in 0..n {
        if mark[i] != Mark::Fine {
            continue;
        }
        let (cols, _) = a.row(i);
        let covered = cols.iter().any(|&j| {
            j != i && mark[j] == Mark::Coarse && strength_of_connection(a, i, j) > delta
        });
        if !covered {
            mark[i] = Mark::Coarse;
        }
    }
    let mut coarse = Vec::new();
    let mut fine = Vec::new();
    for i in 0..n {
        match mark[i] {
            Mark::Coarse => coarse.push(i),
            Mark::Fine => fine.push(i),
            Mark::Unvisited => unreachable!(),
        }
    }
    CfSplit { coarse, fine }
}

/// Builds the prolongation P (N x Nc) for a given split. Every variant ends
/// with a row scaling so that P * 1 sums to exactly 1.0 in sequential
/// floating-point order; the constant near-kernel then survives Galerkin
/// coarsening. Fine rows that would interpolate from nothing get their node
/// promoted to coarse and the build restarts.
pub fn build_interpolation(
    a: &CsrMatrix,
    split: &CfSplit,
    kind: InterpolationKind,
    truncation: f64,
) -> (CsrMatrix, CfSplit) {
    let mut split = split.clone();
    loop {
        match try_interpolation(a, &split, kind, truncation) {
            Ok(p) => return (p, split),
            Err(bad_fine_nodes) => {
                let promote: std::collections::HashSet<usize> =
                    bad_fine_nodes.into_iter().collect();
                split.fine.retain(|f| !promote.contains(f));
                split.coarse.extend(promote.iter().copied());
                split.coarse.sort_unstable();
            }
        }
    }
}

fn try_interpolation(
    a: &CsrMatrix,
    split: &CfSplit,
    kind: InterpolationKind,
    truncation: f64,
) -> Result<CsrMatrix, Vec<usize>> {
    let n = a.rows;
    let nc = split.coarse.len();
    let mut coarse_pos = vec![usize::MAX; n];
    for (k, &c) in split.coarse.iter().enumerate() {
        coarse_pos[c] = k;
    }
    let mut is_fine = vec![false; n];
    for &f in &split.fine {
        is_fine[f] = true;
    }

    // raw weights per fine row, before scaling
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut bad = Vec::new();
    match kind {
        InterpolationKind::Ideal | InterpolationKind::BipartiteThenStandard => {
            // W = -A_FF^{-1} A_FC via a dense factorization of A_FF; for the
            // bipartite shortcut A_FF is diagonal and this is exact division
            let nf = split.fine.len();
            let mut fine_pos = vec![usize::MAX; n];
            for (k, &f) in split.fine.iter().enumerate() {
                fine_pos[f] = k;
            }
            let diagonal_ff = split.fine.iter().all(|&f| {
                let (cols, _) = a.row(f);
                cols.iter().all(|&j| !is_fine[j] || j == f)
            });
            if diagonal_ff {
                for &f in &split.fine {
                    let (cols, vals) = a.row(f);
                    let mut diag = 0.0;
                    let mut entries = Vec::new();
                    for (&j, &v) in cols.iter().zip(vals) {
                        if j == f {
                            diag = v;
                        } else if coarse_pos[j] != usize::MAX {
                            entries.push((coarse_pos[j], -v));
                        }
                    }
                    if diag <= 0.0 || entries.is_empty() {
                        bad.push(f);
                        continue;
                    }
                    for e in &mut entries {
                        e.1 /= diag;
                    }
                    rows[f] = entries;
                }
            } else {
                // dense Schur route, desk sizes only
                let mut aff = crate::sparsela::DenseMat::zeros(nf, nf);
                let mut afc = crate::sparsela::DenseMat::zeros(nf, nc);
                for (fi, &f) in split.fine.iter().enumerate() {
                    let (cols, vals) = a.row(f);
                    for (&j, &v) in cols.iter().zip(vals) {
                        if is_fine[j] {
                            aff.set(fi, fine_pos[j], v);
                        } else if coarse_pos[j] != usize::MAX {
                            afc.set(fi, coarse_pos[j], v);
                        }
                    }
                }
                let factor = DenseSymFactor::new(&aff).map_err(|_| split.fine.clone())?;
                for cj in 0..nc {
                    let col: Vec<f64> = (0..nf).map(|fi| -afc.get(fi, cj)).collect();
                    if col.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let w = factor.solve(&col).map_err(|_| split.fine.clone())?;
                    for (fi, &wi) in w.iter().enumerate() {
                        if wi.abs() > 1e-14 {
                            rows[split.fine[fi]].push((cj, wi));
                        }
                    }
                }
                for (fi, &f) in split.fine.iter().enumerate() {
                    rows[f].sort_unstable_by_key(|&(j, _)| j);
                    if rows[f].is_empty() {
                        bad.push(split.fine[fi]);
                    }
                }
            }
        }
        InterpolationKind::Standard => {
            // two-term diagonal approximation of the ideal weights:
            // (2I - D_FF^{-1} A_FF) W~ with W~ = -D_FF^{-1} A_FC keeps the
            // direct coarse couplings and adds a one-hop correction. The
            // correction mass of a fine neighbor is folded onto the coarse
            // nodes the fine row already reaches whenever possible, which
            // keeps the coarse stencil from spreading.
            let diag = a.diagonal();
            let wt_row = |f: usize| -> Vec<(usize, f64)> {
                let (cols, vals) = a.row(f);
                let mut out = Vec::new();
                for (&j, &v) in cols.iter().zip(vals) {
                    if coarse_pos[j] != usize::MAX && j != f {
                        out.push((coarse_pos[j], -v / diag[f]));
                    }
                }
                out
            };
            for &f in &split.fine {
                let direct = wt_row(f);
                let direct_cols: std::collections::BTreeSet<usize> =
                    direct.iter().map(|&(j, _)| j).collect();
                let mut acc: std::collections::BTreeMap<usize, f64> =
                    std::collections::BTreeMap::new();
                for &(j, w) in &direct {
                    *acc.entry(j).or_insert(0.0) += w;
                }
                let (cols, vals) = a.row(f);
                for (&j, &v) in cols.iter().zip(vals) {
                    if j != f && is_fine[j] {
                        let scale = -v / diag[f];
                        let through = wt_row(j);
                        let shared: Vec<&(usize, f64)> = through
                            .iter()
                            .filter(|&&(cj, _)| direct_cols.contains(&cj))
                            .collect();
                        if !shared.is_empty() && !direct_cols.is_empty() {
                            let total: f64 = shared.iter().map(|&&(_, w)| w).sum();
                            if total > 1e-300 {
                                for &&(cj, w) in &shared {
                                    let full: f64 = through.iter().map(|&(_, w)| w).sum();
                                    *acc.entry(cj).or_insert(0.0) += scale * full * w / total;
                                }
                                continue;
                            }
                        }
                        for (cj, w) in through {
                            *acc.entry(cj).or_insert(0.0) += scale * w;
                        }
                    }
                }
                let mut entries: Vec<(usize, f64)> = acc.into_iter().collect();
                if truncation > 0.0 && !entries.is_empty() {
                    let max_abs = entries
                        .iter()
                        .map(|&(_, w)| w.abs())
                        .fold(0.0f64, f64::max);
                    entries.retain(|&(_, w)| w.abs() >= truncation * max_abs);
                }
                if entries.is_empty() || entries.iter().map(|&(_, w)| w).sum::<f64>() <= 1e-300 {
                    bad.push(f);
                    continue;
                }
                rows[f] = entries;
            }
        }
    }
    if !bad.is_empty() {
        return Err(bad);
    }

    // assemble P with identity rows on coarse nodes and scaled fine rows
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for i in 0..n {
        if coarse_pos[i] != usize::MAX {
            col_idx.push(coarse_pos[i]);
            values.push(1.0);
        } else {
            let entries = &rows[i];
            let total: f64 = entries.iter().map(|&(_, w)| w).sum();
            let k = entries.len();
            // scale to unit row sum, then pin the last entry so the
            // sequential sum is exactly 1.0
            let mut running = 0.0;
            for (pos, &(j, w)) in entries.iter().enumerate() {
                let scaled = if pos + 1 == k {
                    1.0 - running
                } else {
                    let s = w / total;
                    running += s;
                    s
                };
                col_idx.push(j);
                values.push(scaled);
            }
        }
        row_ptr.push(col_idx.len());
    }
    Ok(CsrMatrix {
        rows: n,
        cols: nc,
        row_ptr,
        col_idx,
        values,
    })
}

/// Galerkin coarse operator P^T A P (symmetry enforced by averaging).
pub fn galerkin_coarse(a: &CsrMatrix, p: &CsrMatrix) -> CsrMatrix {
    let mut next = triple_product(p, a);
    next.drop_small(0.0);
    next
}

#[derive(Debug)]
pub struct AmgLevel {
    pub a: CsrMatrix,
    /// prolongation to this level from the next coarser one; absent on the
    /// coarsest level
    pub p: Option<CsrMatrix>,
    pub smoother: SmootherKind,
    pub diag: Vec<f64>,
    /// A_l * 1
    pub a_ones: Vec<f64>,
    /// xi^T A xi with xi = 1
    pub kernel_energy: f64,
}

#[derive(Debug)]
pub struct AmgHierarchy {
    pub levels: Vec<AmgLevel>,
    pub coarse_factor: Option<DenseSymFactor>,
    pub config: AmgConfig,
}

impl AmgHierarchy {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }
}

const KERNEL_ENERGY_REL_FLOOR: f64 = 1e-13;
const COARSEST_FACTOR_CAP: usize = 4096;
/// coarsening stall guard: stop when a level shrinks by less than this
const STALL_RATIO: f64 = 0.9;

fn make_level(a: CsrMatrix, smoother: SmootherKind, a_ones: Vec<f64>) -> Result<AmgLevel, AmgError> {
    let diag = a.diagonal();
    let kernel_energy: f64 = a_ones.iter().sum();
    let scale = diag.iter().map(|d| d.abs()).sum::<f64>().max(1e-300);
    if kernel_energy < -1e-10 * scale {
        return Err(AmgError::NonPositiveKernelEnergy(kernel_energy));
    }
    Ok(AmgLevel {
        p: None,
        smoother,
        diag,
        a_ones,
        kernel_energy,
        a,
    })
}

/// Builds the multilevel hierarchy: repeat {strength -> C\F split (or the
/// bipartite shortcut at level 1) -> interpolation -> Galerkin} until the
/// coarsest-size cap is hit or coarsening stalls.
pub fn setup_hierarchy(a: CsrMatrix, config: AmgConfig) -> Result<AmgHierarchy, AmgError> {
    setup_hierarchy_with_kernel(a, None, config)
}

/// Like [`setup_hierarchy`], with the vector A*1 supplied analytically
/// (eps + Lambda entries for a shifted Laplacian). Carrying it exactly is
/// what keeps the kernel-augmented smoother effective once eps drops below
/// the roundoff of an assembled matrix-vector product; coarse levels inherit
/// it through P^T, which involves only nonnegative sums.
pub fn setup_hierarchy_with_kernel(
    a: CsrMatrix,
    a_ones: Option<Vec<f64>>,
    config: AmgConfig,
) -> Result<AmgHierarchy, AmgError> {
    assert_eq!(a.rows, a.cols);
    let mut levels: Vec<AmgLevel> = Vec::new();
    let mut current = a;
    let mut current_ones = a_ones.unwrap_or_else(|| {
        let ones = vec![1.0; current.rows];
        spmv(&current, &ones)
    });
    loop {
        let level_index = levels.len();
        let n = current.rows;
        let smoother = if level_index == 0 {
            config.smoother_fine
        } else {
            config.smoother_coarse
        };
        if n <= config.coarsest_max {
            levels.push(make_level(current, smoother, current_ones)?);
            break;
        }
        let use_shortcut = level_index == 0
            && config.interpolation == InterpolationKind::BipartiteThenStandard
            && config.bipartite_cols.is_some();
        let (split, kind, trunc) = if use_shortcut {
            let nf = config.bipartite_cols.unwrap().min(n);
            (
                CfSplit {
                    fine: (0..nf).collect(),
                    coarse: (nf..n).collect(),
                },
                InterpolationKind::BipartiteThenStandard,
                0.0,
            )
        } else {
            let kind = match config.interpolation {
                InterpolationKind::Ideal => InterpolationKind::Ideal,
                _ => InterpolationKind::Standard,
            };
            let trunc = if kind == InterpolationKind::Standard {
                config.truncation
            } else {
                0.0
            };
            (cf_split(&current, config.strength_delta), kind, trunc)
        };
        if split.coarse.is_empty() || split.coarse.len() == n {
            // degenerate graph (all coarse or all fine): stop here
            levels.push(make_level(current, smoother, current_ones)?);
            break;
        }
        let (p, split) = build_interpolation(&current, &split, kind, trunc);
        let nc = split.coarse.len();
        if nc as f64 > STALL_RATIO * n as f64 {
            levels.push(make_level(current, smoother, current_ones)?);
            break;
        }
        let coarse = galerkin_coarse(&current, &p);
        let coarse_ones = crate::sparsela::transpose_spmv(&p, &current_ones);
        let mut level = make_level(current, smoother, current_ones)?;
        level.p = Some(p);
        levels.push(level);
        current = coarse;
        current_ones = coarse_ones;
    }
    let coarsest = levels.last().unwrap();
    let coarse_factor = if coarsest.a.rows <= COARSEST_FACTOR_CAP {
        let mut dense = coarsest.a.to_dense();
        if config.mean_zero {
            // regularize the explicit null space; solutions are re-centered
            let n = dense.rows;
            let c = coarsest.diag.iter().sum::<f64>() / n as f64;
            for i in 0..n {
                for j in 0..n {
                    let v = dense.get(i, j) + c / n as f64;
                    dense.set(i, j, v);
                }
            }
        }
        Some(DenseSymFactor::new(&dense)?)
    } else {
        None
    };
    Ok(AmgHierarchy {
        levels,
        coarse_factor,
        config,
    })
}

fn apply_base_smoother(level: &AmgLevel, omega: f64, r: &[f64], transpose: bool) -> Vec<f64> {
    match level.smoother {
        SmootherKind::WeightedJacobi => r
            .iter()
            .zip(&level.diag)
            .map(|(ri, d)| {
                if d.abs() > 1e-300 {
                    omega * ri / d
                } else {
                    0.0
                }
            })
            .collect(),
        SmootherKind::GaussSeidel => {
            let a = &level.a;
            let n = a.rows;
            let mut x = vec![0.0; n];
            if !transpose {
                // forward sweep: (D + L) x = r
                for i in 0..n {
                    let mut acc = r[i];
                    let mut diag = level.diag[i];
                    for p in a.row_ptr[i]..a.row_ptr[i + 1] {
                        let j = a.col_idx[p];
                        if j < i {
                            acc -= a.values[p] * x[j];
                        } else if j == i {
                            diag = a.values[p];
                        }
                    }
                    x[i] = if diag.abs() > 1e-300 { acc / diag } else { 0.0 };
                }
            } else {
                // backward sweep: (D + L)^T x = r
                for i in (0..n).rev() {
                    let mut acc = r[i];
                    let mut diag = level.diag[i];
                    for p in a.row_ptr[i]..a.row_ptr[i + 1] {
                        let j = a.col_idx[p];
                        if j > i {
                            acc -= a.values[p] * x[j];
                        } else if j == i {
                            diag = a.values[p];
                        }
                    }
                    x[i] = if diag.abs() > 1e-300 { acc / diag } else { 0.0 };
                }
            }
            x
        }
    }
}

/// One application of the kernel-augmented smoother
/// R_hat = xi xi^T / eta + R (I - A xi xi^T / eta) to a residual, or of its
/// transpose when `transpose` is set (the post-smoothing direction).
/// In mean-zero mode the kernel energy vanishes and the extra terms are
/// skipped; residuals are then orthogonal to the kernel anyway.
pub fn apply_kernel_smoother(
    level: &AmgLevel,
    omega: f64,
    r: &[f64],
    transpose: bool,
) -> Vec<f64> {
    let eta = level.kernel_energy;
    let diag_scale: f64 = level.diag.iter().map(|d| d.abs()).sum::<f64>().max(1e-300);
    if eta <= KERNEL_ENERGY_REL_FLOOR * diag_scale {
        return apply_base_smoother(level, omega, r, transpose);
    }
    let ones_dot_r: f64 = r.iter().sum();
    if !transpose {
        // R_hat r = xi c + R (r - c A xi), c = (xi^T r) / eta
        let c = ones_dot_r / eta;
        let shifted: Vec<f64> = r
            .iter()
            .zip(&level.a_ones)
            .map(|(ri, ai)| ri - c * ai)
            .collect();
        let mut out = apply_base_smoother(level, omega, &shifted, false);
        for v in &mut out {
            *v += c;
        }
        out
    } else {
        // R_hat^T r = g + xi (xi^T r - xi^T A g) / eta, g = R^T r
        let g = apply_base_smoother(level, omega, r, true);
        let a_ones_dot_g = dot(&level.a_ones, &g);
        let c = (ones_dot_r - a_ones_dot_g) / eta;
        g.iter().map(|gi| gi + c).collect()
    }
}

/// Recursive W-cycle: returns the corrected error approximation for the
/// residual equation A_level e = zeta. `level` is zero-based.
pub fn w_cycle(hierarchy: &AmgHierarchy, zeta: &[f64], e: &[f64], level: usize) -> Vec<f64> {
    let lvl = &hierarchy.levels[level];
    let theta = hierarchy.config.theta;
    let omega = hierarchy.config.omega;
    let is_coarsest = level + 1 == hierarchy.levels.len();
    let mut e = e.to_vec();
    if is_coarsest {
        let r: Vec<f64> = residual(&lvl.a, zeta, &e);
        if let Some(factor) = &hierarchy.coarse_factor {
            let mut rr = r;
            if hierarchy.config.mean_zero {
                center(&mut rr);
            }
            let mut corr = factor.solve_projected(&rr);
            if hierarchy.config.mean_zero {
                center(&mut corr);
            }
            for (ei, ci) in e.iter_mut().zip(&corr) {
                *ei += ci;
            }
        } else {
            let corr = apply_kernel_smoother(lvl, omega, &r, false);
            for (ei, ci) in e.iter_mut().zip(&corr) {
                *ei += ci;
            }
        }
        return e;
    }
    for _ in 0..theta {
        let r = residual(&lvl.a, zeta, &e);
        let corr = apply_kernel_smoother(lvl, omega, &r, false);
        for (ei, ci) in e.iter_mut().zip(&corr) {
            *ei += ci;
        }
    }
    let p = lvl.p.as_ref().expect("non-coarsest level has P");
    let r = residual(&lvl.a, zeta, &e);
    let zeta_coarse = crate::sparsela::transpose_spmv(p, &r);
    let zero = vec![0.0; zeta_coarse.len()];
    let e1 = w_cycle(hierarchy, &zeta_coarse, &zero, level + 1);
    let e2 = w_cycle(hierarchy, &zeta_coarse, &e1, level + 1);
    let up = spmv(p, &e2);
    for (ei, ui) in e.iter_mut().zip(&up) {
        *ei += ui;
    }
    for _ in 0..theta {
        let r = residual(&lvl.a, zeta, &e);
        let corr = apply_kernel_smoother(lvl, omega, &r, true);
        for (ei, ci) in e.iter_mut().zip(&corr) {
            *ei += ci;
        }
    }
    e
}

fn residual(a: &CsrMatrix, rhs: &[f64], x: &[f64]) -> Vec<f64> {
    let ax = spmv(a, x);
    rhs.iter().zip(&ax).map(|(r, axi)| r - axi).collect()
}

fn center(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    for x in v.iter_mut() {
        *x -= mean;
    }
}

#[derive(Debug, Clone)]
pub struct AmgSolveResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<f64>,
}

/// Stationary W-cycle iteration x <- x + B(f - Ax) to relative residual
/// ||Ax - f|| / ||Ax0 - f|| <= tol, starting at x0 = 0.
pub fn amg_solve(
    hierarchy: &AmgHierarchy,
    f: &[f64],
    tol: f64,
    max_iter: usize,
) -> AmgSolveResult {
    let a = &hierarchy.levels[0].a;
    let mut rhs = f.to_vec();
    if hierarchy.config.mean_zero {
        center(&mut rhs);
    }
    let mut x = vec![0.0; rhs.len()];
    let norm0 = norm2(&rhs).max(1e-300);
    let mut history = Vec::new();
    let mut rel = 1.0;
    for it in 0..max_iter {
        if rel <= tol {
            return AmgSolveResult {
                x,
                iterations: it,
                converged: true,
                history,
            };
        }
        let r = residual(a, &rhs, &x);
        let corr = w_cycle(hierarchy, &r, &vec![0.0; r.len()], 0);
        for (xi, ci) in x.iter_mut().zip(&corr) {
            *xi += ci;
        }
        if hierarchy.config.mean_zero {
            center(&mut x);
        }
        rel = norm2(&residual(a, &rhs, &x)) / norm0;
        history.push(rel);
    }
    AmgSolveResult {
        x,
        iterations: max_iter,
        converged: rel <= tol,
        history,
    }
}

/// sum of nnz over all levels divided by nnz of the finest operator
pub fn operator_complexity(hierarchy: &AmgHierarchy) -> f64 {
    let base = hierarchy.levels[0].a.nnz().max(1) as f64;
    hierarchy.levels.iter().map(|l| l.a.nnz() as f64).sum::<f64>() / base
}

/// Per-level summary as CSV: level, size, nnz.
pub fn hierarchy_levels_csv(hierarchy: &AmgHierarchy) -> String {
    let mut out = String::from("level,size,nnz\n");
    for (idx, level) in hierarchy.levels.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", idx + 1, level.a.rows, level.a.nnz()));
    }
    out
}

/// Multiply-add estimate for one W-cycle: level l is visited 2^l times, and
/// each visit costs two smoothing half-sweeps of theta applications plus the
/// residual/transfer products.
pub fn w_cycle_work_estimate(hierarchy: &AmgHierarchy) -> f64 {
    let theta = hierarchy.config.theta as f64;
    let mut work = 0.0;
    for (idx, level) in hierarchy.levels.iter().enumerate() {
        let visits = 2f64.powi(idx as i32);
        let nnz = level.a.nnz() as f64;
        let transfer = level.p.as_ref().map(|p| p.nnz() as f64).unwrap_or(0.0);
        work += visits * ((2.0 * theta + 1.0) * nnz + 2.0 * transfer);
    }
    work
}

/// Power-iteration estimate of ||I - B A||_A, the A-norm contraction factor
/// of one W-cycle, from random mean-zero starts.
pub fn contraction_factor_estimate(hierarchy: &AmgHierarchy, trials: usize, seed: u64) -> f64 {
    use rand::Rng;
    use rand::SeedableRng;
    let a = &hierarchy.levels[0].a;
    let n = a.rows;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let a_norm = |v: &[f64]| -> f64 { dot(&spmv(a, v), v).max(0.0).sqrt() };
    let mut best: f64 = 0.0;
    for _ in 0..trials.max(1) {
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
        center(&mut v);
        let mut rho = 0.0;
        for _ in 0..40 {
            let nv = a_norm(&v);
            if nv <= 1e-300 {
                break;
            }
            for x in &mut v {
                *x /= nv;
            }
            // v <- (I - B A) v
            let av = spmv(a, &v);
            let bav = w_cycle(hierarchy, &av, &vec![0.0; n], 0);
            for (vi, bi) in v.iter_mut().zip(&bav) {
                *vi -= bi;
            }
            if hierarchy.config.mean_zero {
                center(&mut v);
            }
            rho = a_norm(&v);
        }
        best = best.max(rho);
    }
    best
}

/// Unit-weight graph Laplacian of the (g x g)-point grid with horizontal,
/// vertical, and both diagonal edges in every cell (x varies fastest).
pub fn grid_graph_laplacian(g: usize) -> CsrMatrix {
    let n = g * g;
    let idx = |ix: usize, iy: usize| ix + iy * g;
    let mut triplets = Vec::new();
    let mut push_edge = |a: usize, b: usize| {
        triplets.push((a, b, -1.0));
        triplets.push((b, a, -1.0));
        triplets.push((a, a, 1.0));
        triplets.push((b, b, 1.0));
    };
    for iy in 0..g {
        for ix in 0..g {
            if ix + 1 < g {
                push_edge(idx(ix, iy), idx(ix + 1, iy));
            }
            if iy + 1 < g {
                push_edge(idx(ix, iy), idx(ix, iy + 1));
            }
            if ix + 1 < g && iy + 1 < g {
                push_edge(idx(ix, iy), idx(ix + 1, iy + 1));
                push_edge(idx(ix + 1, iy), idx(ix, iy + 1));
            }
        }
    }
    CsrMatrix::from_triplets(n, n, &triplets)
}

/// Path-graph Laplacian on n nodes.
pub fn path_graph_laplacian(n: usize) -> CsrMatrix {
    let mut triplets = Vec::new();
    for i in 0..n.saturating_sub(1) {
        triplets.push((i, i + 1, -1.0));
        triplets.push((i + 1, i, -1.0));
        triplets.push((i, i, 1.0));
        triplets.push((i + 1, i + 1, 1.0));
    }
    CsrMatrix::from_triplets(n, n, &triplets)
}

/// Adds eps to every diagonal entry.
pub fn shift_diagonal(a: &CsrMatrix, eps: f64) -> CsrMatrix {
    if eps == 0.0 {
        return a.clone();
    }
    let mut triplets = Vec::with_capacity(a.nnz() + a.rows);
    for i in 0..a.rows {
        for p in a.row_ptr[i]..a.row_ptr[i + 1] {
            triplets.push((i, a.col_idx[p], a.values[p]));
        }
        triplets.push((i, i, eps));
    }
    CsrMatrix::from_triplets(a.rows, a.cols, &triplets)
}
