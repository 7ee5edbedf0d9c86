//! Sparse and dense linear algebra for the reduced Dirichlet systems and the
//! Poincaré eigenproblem.

use thiserror::Error;

use crate::par::Execution;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid sparse structure: {0}")]
    InvalidStructure(String),
    #[error("matrix is singular: pivot {pivot:e} in column {column}")]
    Singular { column: usize, pivot: f64 },
    #[error("BiCGSTAB breakdown ({what}) at iteration {iteration}")]
    Breakdown { what: &'static str, iteration: usize },
    #[error("no convergence after {iterations} iterations (last relative change {last_change:e})")]
    NotConverged { iterations: usize, last_change: f64 },
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCsr {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseCsr {
    /// Checks the CSR invariants: `row_ptr` non-decreasing and ending at
    /// `nnz`, strictly increasing column indices within each row.
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, LinalgError> {
        let bad = |msg: &str| Err(LinalgError::InvalidStructure(msg.to_string()));
        if row_ptr.len() != n_rows + 1 || row_ptr[0] != 0 {
            return bad("row_ptr must have n_rows + 1 entries starting at 0");
        }
        if row_ptr[n_rows] != col_idx.len() || col_idx.len() != values.len() {
            return bad("row_ptr[n_rows], col_idx and values lengths disagree");
        }
        for i in 0..n_rows {
            if row_ptr[i] > row_ptr[i + 1] {
                return bad("row_ptr decreases");
            }
            let cols = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return bad("column indices within a row must strictly increase");
            }
            if cols.last().is_some_and(|&c| c >= n_cols) {
                return bad("column index out of range");
            }
        }
        Ok(SparseCsr {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Compresses `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self, LinalgError> {
        if let Some(&(r, c, _)) = triplets.iter().find(|&&(r, c, _)| r >= n_rows || c >= n_cols) {
            return Err(LinalgError::DimensionMismatch(format!(
                "triplet ({r}, {c}) outside {n_rows}x{n_cols}"
            )));
        }
        let mut sorted = triplets.to_vec();
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; n_rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(SparseCsr {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        SparseCsr {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(a: &DenseMatrix) -> Self {
        let mut trip = Vec::new();
        for i in 0..a.n_rows() {
            for j in 0..a.n_cols() {
                if a[(i, j)] != 0.0 {
                    trip.push((i, j, a[(i, j)]));
                }
            }
        }
        SparseCsr::from_triplets(a.n_rows(), a.n_cols(), &trip).expect("indices in range")
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        self.matvec_with(x, Execution::default())
    }

    /// Row-parallel product; each row is summed in column order so both
    /// policies give bit-identical results.
    pub fn matvec_with(&self, x: &[f64], exec: Execution) -> Result<Vec<f64>, LinalgError> {
        if x.len() != self.n_cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "matrix has {} columns, vector has {} entries",
                self.n_cols,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.n_rows];
        exec.fill(&mut y, |i| self.row(i).map(|(j, a)| a * x[j]).sum());
        Ok(y)
    }

    /// `vᵀ A u`.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> Result<f64, LinalgError> {
        if v.len() != self.n_rows {
            return Err(LinalgError::DimensionMismatch("left vector length".into()));
        }
        Ok(dot(v, &self.matvec_with(u, Execution::Sequential)?))
    }

    pub fn transpose(&self) -> SparseCsr {
        let mut trip = Vec::with_capacity(self.nnz());
        for i in 0..self.n_rows {
            trip.extend(self.row(i).map(|(j, v)| (j, i, v)));
        }
        SparseCsr::from_triplets(self.n_cols, self.n_rows, &trip).expect("indices in range")
    }

    /// Entrywise sum of two matrices with the same shape.
    pub fn add(&self, other: &SparseCsr) -> Result<SparseCsr, LinalgError> {
        if self.n_rows != other.n_rows || self.n_cols != other.n_cols {
            return Err(LinalgError::DimensionMismatch("matrix shapes differ".into()));
        }
        let mut trip = Vec::with_capacity(self.nnz() + other.nnz());
        for m in [self, other] {
            for i in 0..m.n_rows {
                trip.extend(m.row(i).map(|(j, v)| (i, j, v)));
            }
        }
        SparseCsr::from_triplets(self.n_rows, self.n_cols, &trip)
    }

    /// Largest entrywise difference `max |A_ij - B_ij|`.
    pub fn max_abs_diff(&self, other: &SparseCsr) -> Result<f64, LinalgError> {
        if self.n_rows != other.n_rows || self.n_cols != other.n_cols {
            return Err(LinalgError::DimensionMismatch("matrix shapes differ".into()));
        }
        let mut neg = other.clone();
        neg.values.iter_mut().for_each(|v| *v = -*v);
        Ok(norm_inf(&self.add(&neg)?.values))
    }

    /// `‖A − Aᵀ‖_max`.
    pub fn asymmetry(&self) -> f64 {
        self.max_abs_diff(&self.transpose()).unwrap_or(f64::INFINITY)
    }

    /// Principal submatrix on the index list `keep` (in that order).
    pub fn restrict(&self, keep: &[usize]) -> SparseCsr {
        let mut local = vec![usize::MAX; self.n_cols];
        for (k, &g) in keep.iter().enumerate() {
            local[g] = k;
        }
        let mut row_ptr = Vec::with_capacity(keep.len() + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for &g in keep {
            let mut entries: Vec<(usize, f64)> = self
                .row(g)
                .filter(|&(j, _)| local[j] != usize::MAX)
                .map(|(j, v)| (local[j], v))
                .collect();
            entries.sort_by_key(|&(j, _)| j);
            for (j, v) in entries {
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        SparseCsr {
            n_rows: keep.len(),
            n_cols: keep.len(),
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        DenseMatrix {
            n_rows,
            n_cols,
            data: vec![0.0; n_rows * n_cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_cols), "ragged rows");
        DenseMatrix {
            n_rows,
            n_cols,
            data: rows.concat(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if x.len() != self.n_cols {
            return Err(LinalgError::DimensionMismatch("dense matvec".into()));
        }
        Ok((0..self.n_rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n_rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n_cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n_cols + j]
    }
}

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct DenseLu {
    lu: DenseMatrix,
    perm: Vec<usize>,
}

impl DenseLu {
    /// Fails when a pivot falls below `1e-14` times the scale (max abs entry)
    /// of its original row.
    pub fn factor(a: &DenseMatrix) -> Result<Self, LinalgError> {
        let n = a.n_rows;
        if a.n_cols != n {
            return Err(LinalgError::DimensionMismatch("LU needs a square matrix".into()));
        }
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale: Vec<f64> = (0..n).map(|i| norm_inf(a.row(i))).collect();
        for k in 0..n {
            let (p, pivot) =
                (k..n)
                    .map(|i| (i, lu[(i, k)].abs()))
                    .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot < 1e-14 * scale[perm[p]] || pivot == 0.0 {
                return Err(LinalgError::Singular { column: k, pivot });
            }
            if p != k {
                for j in 0..n {
                    lu.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let d = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / d;
                lu[(i, k)] = f;
                if f != 0.0 {
                    let (upper, lower) = lu.data.split_at_mut(i * n);
                    let pivot_row = &upper[k * n + k + 1..k * n + n];
                    for (dst, src) in lower[k + 1..n].iter_mut().zip(pivot_row) {
                        *dst -= f * src;
                    }
                }
            }
        }
        Ok(DenseLu { lu, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let n = self.perm.len();
        if b.len() != n {
            return Err(LinalgError::DimensionMismatch("LU right-hand side".into()));
        }
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s = dot(&self.lu.row(i)[..i], &x[..i]);
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s = dot(&self.lu.row(i)[i + 1..], &x[i + 1..]);
            x[i] = (x[i] - s) / self.lu[(i, i)];
        }
        Ok(x)
    }
}

pub fn lu_solve_dense(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    DenseLu::factor(a)?.solve(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preconditioner {
    None,
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BicgstabOptions {
    pub tol: f64,
    /// Defaults to `10 n`.
    pub max_iter: Option<usize>,
    pub preconditioner: Preconditioner,
}

impl Default for BicgstabOptions {
    fn default() -> Self {
        BicgstabOptions {
            tol: 1e-10,
            max_iter: None,
            preconditioner: Preconditioner::Jacobi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// True residual `‖b − Ax‖₂ / ‖b‖₂` of the returned iterate.
    pub relative_residual: f64,
    pub converged: bool,
}

// Scale-free breakdown threshold for the BiCGSTAB inner products.
const BREAKDOWN: f64 = 1e-30;
const MAX_RESTARTS: usize = 8;

/// Right-preconditioned BiCGSTAB from a zero initial guess.
pub fn bicgstab(a: &SparseCsr, b: &[f64], opts: &BicgstabOptions) -> Result<(Vec<f64>, SolveStats), LinalgError> {
    bicgstab_from(a, b, vec![0.0; b.len()], opts)
}

/// BiCGSTAB from the initial guess `x0`. Convergence is declared only when
/// the true residual satisfies `‖b − Ax‖₂ ≤ tol ‖b‖₂`; the iteration restarts
/// if the recursive residual has drifted away from it.
pub fn bicgstab_from(
    a: &SparseCsr,
    b: &[f64],
    x0: Vec<f64>,
    opts: &BicgstabOptions,
) -> Result<(Vec<f64>, SolveStats), LinalgError> {
    let n = b.len();
    if a.n_rows != n || a.n_cols != n || x0.len() != n {
        return Err(LinalgError::DimensionMismatch(format!(
            "{}x{} system with rhs {} and guess {}",
            a.n_rows,
            a.n_cols,
            n,
            x0.len()
        )));
    }
    let exec = Execution::default();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok((
            vec![0.0; n],
            SolveStats {
                iterations: 0,
                relative_residual: 0.0,
                converged: true,
            },
        ));
    }
    let target = opts.tol * bnorm;
    let max_iter = opts.max_iter.unwrap_or(10 * n).max(1);
    let inv_diag: Vec<f64> = match opts.preconditioner {
        Preconditioner::None => vec![1.0; n],
        Preconditioner::Jacobi => a
            .diagonal()
            .into_iter()
            .map(|d| if d != 0.0 { 1.0 / d } else { 1.0 })
            .collect(),
    };
    let precondition = |v: &[f64]| -> Vec<f64> { v.iter().zip(&inv_diag).map(|(a, d)| a * d).collect() };
    let true_residual = |x: &[f64]| -> Result<Vec<f64>, LinalgError> {
        let ax = a.matvec_with(x, exec)?;
        Ok(b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect())
    };

    let mut x = x0;
    let mut iterations = 0;
    let mut r = true_residual(&x)?;
    for _restart in 0..=MAX_RESTARTS {
        if norm2(&r) <= target {
            let rel = norm2(&r) / bnorm;
            return Ok((
                x,
                SolveStats {
                    iterations,
                    relative_residual: rel,
                    converged: true,
                },
            ));
        }
        let r_hat = r.clone();
        let r_hat_norm = norm2(&r_hat);
        let (mut rho_prev, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        let mut v = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut recursive_converged = false;
        while iterations < max_iter {
            let rho = dot(&r_hat, &r);
            if rho.abs() <= BREAKDOWN * r_hat_norm * norm2(&r) {
                return Err(LinalgError::Breakdown {
                    what: "rho",
                    iteration: iterations,
                });
            }
            let beta = (rho / rho_prev) * (alpha / omega);
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            let y = precondition(&p);
            v = a.matvec_with(&y, exec)?;
            let rv = dot(&r_hat, &v);
            if rv.abs() <= BREAKDOWN * r_hat_norm * norm2(&v) {
                return Err(LinalgError::Breakdown {
                    what: "r_hat . v",
                    iteration: iterations,
                });
            }
            alpha = rho / rv;
            let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
            iterations += 1;
            if norm2(&s) <= target {
                x.iter_mut().zip(&y).for_each(|(xi, yi)| *xi += alpha * yi);
                recursive_converged = true;
                break;
            }
            let z = precondition(&s);
            let t = a.matvec_with(&z, exec)?;
            let ts = dot(&t, &s);
            let tt = dot(&t, &t);
            if tt == 0.0 || ts.abs() <= BREAKDOWN * tt.sqrt() * norm2(&s) {
                return Err(LinalgError::Breakdown {
                    what: "omega",
                    iteration: iterations,
                });
            }
            omega = ts / tt;
            for i in 0..n {
                x[i] += alpha * y[i] + omega * z[i];
                r[i] = s[i] - omega * t[i];
            }
            rho_prev = rho;
            if norm2(&r) <= target {
                recursive_converged = true;
                break;
            }
        }
        r = true_residual(&x)?;
        if !recursive_converged {
            break;
        }
    }
    let rel = norm2(&r) / bnorm;
    Ok((
        x,
        SolveStats {
            iterations,
            relative_residual: rel,
            converged: rel <= opts.tol,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub lambda: f64,
    /// Normalized so that `vᵀ M v = 1`.
    pub vector: Vec<f64>,
    pub iterations: usize,
}

/// Systems up to this size are factored densely once; larger ones go
/// through BiCGSTAB at every step.
const DENSE_EIG_LIMIT: usize = 1000;
const EIG_MAX_ITER: usize = 1000;

/// Smallest eigenpair of `K v = λ M v` (both symmetric positive definite)
/// by inverse power iteration with a Rayleigh-quotient estimate. Stops when
/// successive estimates differ by at most `tol λ`.
pub fn generalized_eig_smallest(k: &SparseCsr, m: &SparseCsr, tol: f64) -> Result<EigenPair, LinalgError> {
    let dense = k.n_rows <= DENSE_EIG_LIMIT;
    eig_smallest_impl(k, m, tol, dense)
}

fn eig_smallest_impl(k: &SparseCsr, m: &SparseCsr, tol: f64, use_dense: bool) -> Result<EigenPair, LinalgError> {
    let n = k.n_rows;
    if k.n_cols != n || m.n_rows != n || m.n_cols != n {
        return Err(LinalgError::DimensionMismatch(
            "K and M must be square and equal-sized".into(),
        ));
    }
    if n == 0 {
        return Err(LinalgError::DimensionMismatch("empty eigenproblem".into()));
    }
    let dense = if use_dense {
        Some(DenseLu::factor(&k.to_dense())?)
    } else {
        None
    };
    let inner = BicgstabOptions {
        tol: 1e-13,
        max_iter: Some(50 * n),
        ..Default::default()
    };
    let solve = |rhs: &[f64], guess: &[f64]| -> Result<Vec<f64>, LinalgError> {
        match &dense {
            Some(lu) => lu.solve(rhs),
            None => {
                let (z, stats) = bicgstab_from(k, rhs, guess.to_vec(), &inner)?;
                if !stats.converged && stats.relative_residual > 1e-10 {
                    return Err(LinalgError::NotConverged {
                        iterations: stats.iterations,
                        last_change: stats.relative_residual,
                    });
                }
                Ok(z)
            }
        }
    };
    let m_norm = |v: &[f64]| -> Result<f64, LinalgError> { Ok(m.bilinear(v, v)?.sqrt()) };

    let mut v = vec![1.0; n];
    let s = m_norm(&v)?;
    v.iter_mut().for_each(|x| *x /= s);
    let mut lambda = k.bilinear(&v, &v)?;
    let mut last_change = f64::INFINITY;
    for it in 1..=EIG_MAX_ITER {
        let w = m.matvec(&v)?;
        // Warm start: z ≈ v / λ.
        let guess: Vec<f64> = v.iter().map(|x| x / lambda).collect();
        let mut z = solve(&w, &guess)?;
        let zm = m_norm(&z)?;
        z.iter_mut().for_each(|x| *x /= zm);
        let next = k.bilinear(&z, &z)?;
        v = z;
        last_change = (next - lambda).abs();
        lambda = next;
        if last_change <= tol * lambda.abs() {
            return Ok(EigenPair {
                lambda,
                vector: v,
                iterations: it,
            });
        }
    }
    Err(LinalgError::NotConverged {
        iterations: EIG_MAX_ITER,
        last_change,
    })
}
