//! Grid-Laplacian robustness benchmark: W-cycle vs Jacobi-preconditioned CG
//! across mesh sizes and singular shifts, reported as CSV rows.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use transolve_core::amg::{
    amg_solve, grid_graph_laplacian, hierarchy_levels_csv, operator_complexity,
    setup_hierarchy_with_kernel, shift_diagonal, AmgConfig,
};
use transolve_core::sparsela::{pcg_jacobi, CsrMatrix};

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub one_over_h: usize,
    pub eps: f64,
    pub itamg: usize,
    pub amg_converged: bool,
    pub itpcg: usize,
    pub pcg_converged: bool,
    pub levels: usize,
    pub opcom: f64,
}

pub const BENCH_TOL: f64 = 1e-11;
const AMG_MAX_ITER: usize = 200;
const PCG_MAX_ITER: usize = 50_000;
const RHS_SEED: u64 = 20_240_101;

/// parallelism cap from TRANSOLVE_THREADS (defaults to the machine width)
pub fn thread_cap() -> usize {
    std::env::var("TRANSOLVE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|v| v.get())
                .unwrap_or(1)
        })
}

/// One benchmark cell: the (2^k + 1)^2-node unit-weight grid graph Laplacian
/// shifted by eps, solved to `tol` from a seeded mean-zero right-hand side.
pub fn bench_cell(grid_k: u32, eps: f64, tol: f64) -> BenchRow {
    let g = 2usize.pow(grid_k) + 1;
    let base = grid_graph_laplacian(g);
    bench_matrix(&base, g - 1, eps, tol, u64::from(grid_k)).0
}

/// Benchmarks one Laplacian (built-in grid or a Matrix Market import)
/// shifted by eps; also returns the per-level hierarchy summary.
pub fn bench_matrix(
    base: &CsrMatrix,
    size_label: usize,
    eps: f64,
    tol: f64,
    rhs_salt: u64,
) -> (BenchRow, String) {
    let nodes = base.rows;
    let a = shift_diagonal(base, eps);
    let config = AmgConfig {
        // coarsest level sized O(N^{1/3}) so every size runs a real multilevel
        // cycle; the solver-default 512 would turn the smallest grid into a
        // single direct level
        coarsest_max: 16usize.max((nodes as f64).powf(1.0 / 3.0).ceil() as usize),
        mean_zero: eps == 0.0,
        ..AmgConfig::default()
    };
    let hierarchy =
        setup_hierarchy_with_kernel(a.clone(), Some(vec![eps; nodes]), config).expect("SPD input");
    let mut rng = ChaCha8Rng::seed_from_u64(RHS_SEED ^ rhs_salt);
    let mut f: Vec<f64> = (0..nodes).map(|_| rng.gen::<f64>() - 0.5).collect();
    let mean = f.iter().sum::<f64>() / nodes as f64;
    for v in &mut f {
        *v -= mean;
    }
    let amg = amg_solve(&hierarchy, &f, tol, AMG_MAX_ITER);
    let pcg = pcg_jacobi(&a, &f, tol, PCG_MAX_ITER, eps == 0.0);
    let row = BenchRow {
        one_over_h: size_label,
        eps,
        itamg: amg.iterations,
        amg_converged: amg.converged,
        itpcg: pcg.iterations,
        pcg_converged: pcg.converged,
        levels: hierarchy.num_levels(),
        opcom: operator_complexity(&hierarchy),
    };
    (row, hierarchy_levels_csv(&hierarchy))
}

/// Full sweep over grid sizes and shifts, fanned out across threads (capped
/// by TRANSOLVE_THREADS); rows come back in input order.
pub fn bench_amg(grid_ks: &[u32], eps_list: &[f64], tol: f64) -> Vec<BenchRow> {
    let cells: Vec<(u32, f64)> = grid_ks
        .iter()
        .flat_map(|&k| eps_list.iter().map(move |&e| (k, e)))
        .collect();
    let cap = thread_cap().max(1);
    let mut rows: Vec<Option<BenchRow>> = vec![None; cells.len()];
    for chunk_start in (0..cells.len()).step_by(cap) {
        let chunk_end = (chunk_start + cap).min(cells.len());
        let results: Vec<(usize, BenchRow)> = std::thread::scope(|scope| {
            let handles: Vec<_> = (chunk_start..chunk_end)
                .map(|idx| {
                    let (k, e) = cells[idx];
                    scope.spawn(move || (idx, bench_cell(k, e, tol)))
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for (idx, row) in results {
            rows[idx] = Some(row);
        }
    }
    rows.into_iter().map(|r| r.unwrap()).collect()
}

pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("one_over_h,eps,itamg,itpcg,J,opcom\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:e},{},{},{},{:.4}\n",
            r.one_over_h, r.eps, r.itamg, r.itpcg, r.levels, r.opcom
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_grid_cell_matches_expectations() {
        let row = bench_cell(4, 1e-6, BENCH_TOL);
        assert_eq!(row.one_over_h, 16);
        assert!(row.amg_converged && row.pcg_converged);
        assert!(row.itamg <= 15, "itamg = {}", row.itamg);
        assert!(row.opcom <= 2.0);
        // Jacobi-PCG lands in the expected band on the 17x17 grid
        let row = bench_cell(4, 1e-4, BENCH_TOL);
        assert!(
            (31..=93).contains(&row.itpcg),
            "itpcg = {} outside the band",
            row.itpcg
        );
    }

    #[test]
    fn csv_has_fixed_columns() {
        let rows = vec![bench_cell(3, 1e-4, 1e-9)];
        let csv = rows_to_csv(&rows);
        assert!(csv.starts_with("one_over_h,eps,itamg,itpcg,J,opcom\n"));
        assert_eq!(csv.lines().count(), 2);
    }
}
