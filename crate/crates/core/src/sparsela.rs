//! Shared sparse/dense linear-algebra kernels: CSR storage, products,
//! Galerkin triple products, dense symmetric factorization, and the
//! Jacobi-preconditioned CG baseline.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinAlgError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("matrix is not positive (semi)definite: pivot {pivot:.3e} at index {index}")]
    Indefinite { pivot: f64, index: usize },
    #[error("singular system: right-hand side not compatible with the null space")]
    IncompatibleRhs,
    #[error("iteration limit {max_iter} reached, relative residual {residual:.3e}")]
    IterationLimit { max_iter: usize, residual: f64 },
}

/// Sparse matrix in compressed-sparse-row layout. Column indices are sorted
/// and unique within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CsrMatrix {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let n = d.len();
        CsrMatrix {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: d.to_vec(),
        }
    }

    /// Builds a CSR matrix from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; rows + 1];
        for &(i, _, _) in triplets {
            debug_assert!(i < rows);
            counts[i + 1] += 1;
        }
        for i in 0..rows {
            counts[i + 1] += counts[i];
        }
        let mut col_idx = vec![0usize; triplets.len()];
        let mut values = vec![0f64; triplets.len()];
        let mut next = counts.clone();
        for &(i, j, v) in triplets {
            debug_assert!(j < cols);
            let p = next[i];
            col_idx[p] = j;
            values[p] = v;
            next[i] += 1;
        }
        let mut m = CsrMatrix {
            rows,
            cols,
            row_ptr: counts,
            col_idx,
            values,
        };
        m.sort_and_merge();
        m
    }

    pub fn from_dense(a: &DenseMat) -> Self {
        let mut triplets = Vec::new();
        for i in 0..a.rows {
            for j in 0..a.cols {
                let v = a.get(i, j);
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        CsrMatrix::from_triplets(a.rows, a.cols, &triplets)
    }

    pub fn to_dense(&self) -> DenseMat {
        let mut d = DenseMat::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                d.set(i, self.col_idx[p], self.values[p]);
            }
        }
        d
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.rows];
        for i in 0..self.rows.min(self.cols) {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col_idx[p] == i {
                    d[i] = self.values[p];
                }
            }
        }
        d
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.cols + 1];
        for &j in &self.col_idx {
            counts[j + 1] += 1;
        }
        for j in 0..self.cols {
            counts[j + 1] += counts[j];
        }
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0f64; self.nnz()];
        let mut next = counts.clone();
        for i in 0..self.rows {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[p];
                let q = next[j];
                col_idx[q] = i;
                values[q] = self.values[p];
                next[j] += 1;
            }
        }
        // rows come out sorted because the outer scan is in row order
        CsrMatrix {
            rows: self.cols,
            cols: self.rows,
            row_ptr: counts,
            col_idx,
            values,
        }
    }

    fn sort_and_merge(&mut self) {
        let mut new_ptr = Vec::with_capacity(self.rows + 1);
        let mut new_idx = Vec::with_capacity(self.nnz());
        let mut new_val = Vec::with_capacity(self.nnz());
        new_ptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for i in 0..self.rows {
            scratch.clear();
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                scratch.push((self.col_idx[p], self.values[p]));
            }
            scratch.sort_unstable_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < scratch.len() {
                let j = scratch[k].0;
                let mut v = scratch[k].1;
                k += 1;
                while k < scratch.len() && scratch[k].0 == j {
                    v += scratch[k].1;
                    k += 1;
                }
                new_idx.push(j);
                new_val.push(v);
            }
            new_ptr.push(new_idx.len());
        }
        self.row_ptr = new_ptr;
        self.col_idx = new_idx;
        self.values = new_val;
    }

    /// Drops stored entries with |value| <= threshold (structural cleanup).
    pub fn drop_small(&mut self, threshold: f64) {
        let mut new_ptr = Vec::with_capacity(self.rows + 1);
        let mut new_idx = Vec::new();
        let mut new_val = Vec::new();
        new_ptr.push(0);
        for i in 0..self.rows {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.values[p].abs() > threshold {
                    new_idx.push(self.col_idx[p]);
                    new_val.push(self.values[p]);
                }
            }
            new_ptr.push(new_idx.len());
        }
        self.row_ptr = new_ptr;
        self.col_idx = new_idx;
        self.values = new_val;
    }
}

/// y = A x
pub fn spmv(a: &CsrMatrix, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.cols, x.len(), "spmv shape mismatch");
    let mut y = vec![0.0; a.rows];
    for i in 0..a.rows {
        let mut acc = 0.0;
        for p in a.row_ptr[i]..a.row_ptr[i + 1] {
            acc += a.values[p] * x[a.col_idx[p]];
        }
        y[i] = acc;
    }
    y
}

/// y = A^T x without materializing the transpose.
pub fn transpose_spmv(a: &CsrMatrix, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.rows, x.len(), "transpose_spmv shape mismatch");
    let mut y = vec![0.0; a.cols];
    for i in 0..a.rows {
        let xi = x[i];
        if xi == 0.0 {
            continue;
        }
        for p in a.row_ptr[i]..a.row_ptr[i + 1] {
            y[a.col_idx[p]] += a.values[p] * xi;
        }
    }
    y
}

/// Sparse C = A * B with a dense accumulator per row.
pub fn csr_matmul(a: &CsrMatrix, b: &CsrMatrix) -> CsrMatrix {
    assert_eq!(a.cols, b.rows, "csr_matmul shape mismatch");
    let mut row_ptr = Vec::with_capacity(a.rows + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    let mut acc = vec![0.0f64; b.cols];
    let mut marked: Vec<usize> = Vec::new();
    for i in 0..a.rows {
        marked.clear();
        for p in a.row_ptr[i]..a.row_ptr[i + 1] {
            let k = a.col_idx[p];
            let av = a.values[p];
            for q in b.row_ptr[k]..b.row_ptr[k + 1] {
                let j = b.col_idx[q];
                if acc[j] == 0.0 && !marked.contains(&j) {
                    marked.push(j);
                }
                acc[j] += av * b.values[q];
            }
        }
        marked.sort_unstable();
        for &j in &marked {
            col_idx.push(j);
            values.push(acc[j]);
            acc[j] = 0.0;
        }
        row_ptr.push(col_idx.len());
    }
    CsrMatrix {
        rows: a.rows,
        cols: b.cols,
        row_ptr,
        col_idx,
        values,
    }
}

/// Galerkin triple product P^T A P with symmetry enforced against roundoff.
pub fn triple_product(p: &CsrMatrix, a: &CsrMatrix) -> CsrMatrix {
    let ap = csr_matmul(a, p);
    let pt = p.transpose();
    let mut c = csr_matmul(&pt, &ap);
    symmetrize(&mut c);
    c
}

/// Averages A and A^T in place: (A + A^T)/2.
pub fn symmetrize(a: &mut CsrMatrix) {
    assert_eq!(a.rows, a.cols);
    let at = a.transpose();
    let mut triplets = Vec::with_capacity(a.nnz());
    for i in 0..a.rows {
        for p in a.row_ptr[i]..a.row_ptr[i + 1] {
            triplets.push((i, a.col_idx[p], 0.5 * a.values[p]));
        }
        for p in at.row_ptr[i]..at.row_ptr[i + 1] {
            triplets.push((i, at.col_idx[p], 0.5 * at.values[p]));
        }
    }
    *a = CsrMatrix::from_triplets(a.rows, a.cols, &triplets);
}

/// Small dense row-major matrix used for oracles and coarsest-level work.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut m = DenseMat::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged rows");
            m.data[i * c..(i + 1) * c].copy_from_slice(row);
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len());
        let mut y = vec![0.0; self.rows];
        for i in 0..self.rows {
            let mut acc = 0.0;
            for j in 0..self.cols {
                acc += self.get(i, j) * x[j];
            }
            y[i] = acc;
        }
        y
    }
}

/// Symmetric pivoted LDL^T factorization of a dense SPD/SPSD matrix.
/// Kept around so one factorization can serve many right-hand sides.
#[derive(Debug, Clone)]
pub struct DenseSymFactor {
    n: usize,
    // packed unit-lower factor with D on the diagonal, in pivoted order
    ld: Vec<f64>,
    perm: Vec<usize>,
    // rank-deficient directions get a zero pivot flag
    zero_pivot: Vec<bool>,
    kernel_is_ones: bool,
}

const PIVOT_REL_TOL: f64 = 1e-13;

impl DenseSymFactor {
    /// Factors A = P L D L^T P^T with diagonal pivoting. Pivots below
    /// `PIVOT_REL_TOL` times the largest diagonal are treated as zero,
    /// which covers the graph-Laplacian case with kernel span{1}.
    pub fn new(a: &DenseMat) -> Result<Self, LinAlgError> {
        assert_eq!(a.rows, a.cols);
        let n = a.rows;
        let mut w = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = (0..n)
            .map(|i| a.get(i, i).abs())
            .fold(0.0f64, f64::max)
            .max(1e-300);
        let mut zero_pivot = vec![false; n];

        // detect the constant null vector up front
        let ones_res: f64 = (0..n)
            .map(|i| (0..n).map(|j| a.get(i, j)).sum::<f64>().abs())
            .fold(0.0, f64::max);
        let kernel_is_ones = ones_res <= 1e-11 * scale.max(1.0);

        for k in 0..n {
            // symmetric pivot: bring the largest remaining diagonal to front
            let mut best = k;
            for i in k..n {
                if w.get(i, i) > w.get(best, best) {
                    best = i;
                }
            }
            if best != k {
                perm.swap(k, best);
                for j in 0..n {
                    let t = w.get(k, j);
                    w.set(k, j, w.get(best, j));
                    w.set(best, j, t);
                }
                for i in 0..n {
                    let t = w.get(i, k);
                    w.set(i, k, w.get(i, best));
                    w.set(i, best, t);
                }
            }
            let d = w.get(k, k);
            if d <= PIVOT_REL_TOL * scale {
                if d < -1e-8 * scale {
                    return Err(LinAlgError::Indefinite { pivot: d, index: k });
                }
                zero_pivot[k] = true;
                w.set(k, k, 0.0);
                for i in (k + 1)..n {
                    w.set(i, k, 0.0);
                }
                continue;
            }
            for i in (k + 1)..n {
                let lik = w.get(i, k) / d;
                for j in (k + 1)..=i {
                    let v = w.get(i, j) - lik * w.get(k, j);
                    w.set(i, j, v);
                    w.set(j, i, v);
                }
                w.set(i, k, lik);
            }
        }
        Ok(DenseSymFactor {
            n,
            ld: w.data,
            perm,
            zero_pivot,
            kernel_is_ones,
        })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinAlgError> {
        let rank_deficient = self.zero_pivot.iter().any(|&z| z);
        if rank_deficient && self.kernel_is_ones {
            let n = self.n;
            let mean = b.iter().sum::<f64>() / n as f64;
            let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            if mean.abs() * (n as f64).sqrt() > 1e-6 * bnorm.max(1e-300) {
                return Err(LinAlgError::IncompatibleRhs);
            }
        }
        Ok(self.solve_raw(b))
    }

    /// Like [`DenseSymFactor::solve`], but an incompatible right-hand side on
    /// a rank-deficient system is projected onto the compatible subspace
    /// instead of rejected. This is the pseudo-solve a nearly-singular Newton
    /// component wants: the unrepresentable kernel amplitude is dropped and
    /// the returned direction remains a descent direction.
    pub fn solve_projected(&self, b: &[f64]) -> Vec<f64> {
        if self.zero_pivot.iter().any(|&z| z) && self.kernel_is_ones {
            let mean = b.iter().sum::<f64>() / self.n as f64;
            let centered: Vec<f64> = b.iter().map(|v| v - mean).collect();
            return self.solve_raw(&centered);
        }
        self.solve_raw(b)
    }

    fn solve_raw(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let rank_deficient = self.zero_pivot.iter().any(|&z| z);
        let mut y: Vec<f64> = (0..n).map(|i| b[self.perm[i]]).collect();
        // forward solve L y = b
        for i in 0..n {
            let mut acc = y[i];
            for j in 0..i {
                acc -= self.ld[i * n + j] * y[j];
            }
            y[i] = acc;
        }
        // diagonal
        for i in 0..n {
            if self.zero_pivot[i] {
                y[i] = 0.0;
            } else {
                y[i] /= self.ld[i * n + i];
            }
        }
        // backward solve L^T x = y
        for i in (0..n).rev() {
            let mut acc = y[i];
            for j in (i + 1)..n {
                acc -= self.ld[j * n + i] * y[j];
            }
            y[i] = acc;
        }
        let mut x = vec![0.0; n];
        for i in 0..n {
            x[self.perm[i]] = y[i];
        }
        if rank_deficient && self.kernel_is_ones {
            let mean = x.iter().sum::<f64>() / n as f64;
            for v in &mut x {
                *v -= mean;
            }
        }
        x
    }
}

/// Direct solve of a dense symmetric positive (semi)definite system.
/// Semidefinite inputs with kernel span{1} require a compatible right-hand
/// side and return the mean-zero solution.
pub fn dense_sym_solve(a: &DenseMat, b: &[f64]) -> Result<Vec<f64>, LinAlgError> {
    DenseSymFactor::new(a)?.solve(b)
}

#[derive(Debug, Clone)]
pub struct PcgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients, stopping at
/// ||Ax - b|| / ||Ax0 - b|| <= tol with x0 = 0. With `mean_zero` the system
/// is treated as singular with kernel span{1}: the right-hand side is
/// projected and iterates are re-centered.
pub fn pcg_jacobi(
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    mean_zero: bool,
) -> PcgResult {
    assert_eq!(a.rows, b.len());
    let n = b.len();
    let mut f = b.to_vec();
    if mean_zero {
        let mean = f.iter().sum::<f64>() / n as f64;
        for v in &mut f {
            *v -= mean;
        }
    }
    let diag = a.diagonal();
    let minv: Vec<f64> = diag
        .iter()
        .map(|&d| if d.abs() > 1e-300 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = vec![0.0; n];
    let mut r = f.clone();
    let norm0 = norm2(&r).max(1e-300);
    let mut z: Vec<f64> = r.iter().zip(&minv).map(|(ri, mi)| ri * mi).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut rel = 1.0;
    for it in 0..max_iter {
        if rel <= tol {
            return PcgResult {
                x,
                iterations: it,
                converged: true,
                relative_residual: rel,
            };
        }
        let ap = spmv(a, &p);
        let pap = dot(&p, &ap);
        if pap.abs() <= 1e-300 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if mean_zero {
            let mx = x.iter().sum::<f64>() / n as f64;
            for v in &mut x {
                *v -= mx;
            }
            let mr = r.iter().sum::<f64>() / n as f64;
            for v in &mut r {
                *v -= mr;
            }
        }
        for i in 0..n {
            z[i] = r[i] * minv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rel = norm2(&r) / norm0;
    }
    let converged = rel <= tol;
    PcgResult {
        x,
        iterations: max_iter,
        converged,
        relative_residual: rel,
    }
}

#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[inline]
pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub mod matrix_market {
    //! Matrix Market coordinate-format reader/writer (real, general or
    //! symmetric).

    use super::CsrMatrix;
    use std::io::{BufRead, Write};
    use thiserror::Error;

    #[derive(Debug, Error)]
    pub enum MmError {
        #[error("io error: {0}")]
        Io(#[from] std::io::Error),
        #[error("invalid Matrix Market header: {0}")]
        Header(String),
        #[error("parse error on line {line}: {msg}")]
        Parse { line: usize, msg: String },
    }

    pub fn write<W: Write>(w: &mut W, a: &CsrMatrix, symmetric: bool) -> Result<(), MmError> {
        let kind = if symmetric { "symmetric" } else { "general" };
        writeln!(w, "%%MatrixMarket matrix coordinate real {kind}")?;
        let mut entries = Vec::new();
        for i in 0..a.rows {
            for p in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.col_idx[p];
                if symmetric && j > i {
                    continue;
                }
                entries.push((i, j, a.values[p]));
            }
        }
        writeln!(w, "{} {} {}", a.rows, a.cols, entries.len())?;
        for (i, j, v) in entries {
            writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: &mut R) -> Result<CsrMatrix, MmError> {
        let mut lines = r.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| MmError::Header("empty input".into()))?;
        let header = header?;
        let low = header.to_lowercase();
        if !low.starts_with("%%matrixmarket matrix coordinate real") {
            return Err(MmError::Header(header));
        }
        let symmetric = low.contains("symmetric");
        if !symmetric && !low.contains("general") {
            return Err(MmError::Header(header));
        }
        let mut dims: Option<(usize, usize, usize)> = None;
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        for (lineno, line) in lines {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('%') {
                continue;
            }
            let parts: Vec<&str> = t.split_whitespace().collect();
            let parse = |s: &str| -> Result<f64, MmError> {
                s.parse::<f64>().map_err(|e| MmError::Parse {
                    line: lineno + 1,
                    msg: e.to_string(),
                })
            };
            if dims.is_none() {
                if parts.len() != 3 {
                    return Err(MmError::Parse {
                        line: lineno + 1,
                        msg: "expected `rows cols nnz`".into(),
                    });
                }
                dims = Some((
                    parse(parts[0])? as usize,
                    parse(parts[1])? as usize,
                    parse(parts[2])? as usize,
                ));
                continue;
            }
            if parts.len() != 3 {
                return Err(MmError::Parse {
                    line: lineno + 1,
                    msg: "expected `i j value`".into(),
                });
            }
            let i = parse(parts[0])? as usize - 1;
            let j = parse(parts[1])? as usize - 1;
            let v = parse(parts[2])?;
            triplets.push((i, j, v));
            if symmetric && i != j {
                triplets.push((j, i, v));
            }
        }
        let (rows, cols, _) = dims.ok_or_else(|| MmError::Header("missing size line".into()))?;
        Ok(CsrMatrix::from_triplets(rows, cols, &triplets))
    }
}
