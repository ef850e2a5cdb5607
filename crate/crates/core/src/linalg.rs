//! Small linear-algebra layer over `faer`: triplet assembly, CSR products,
//! sparse LU with transpose solves, dense Cholesky and preconditioned CG.

use faer::linalg::solvers::{Solve, SolveCore};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Mat, Par, Side};

use crate::error::{MfgError, Result};

/// Fixed-order pairwise summation. Result depends only on the input order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if v.len() <= BLOCK {
        let mut s = 0.0;
        for x in v {
            s += x;
        }
        return s;
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let prod: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    pairwise_sum(&prod)
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn min_value(a: &[f64]) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for (i, &x) in a.iter().enumerate() {
        if x < best.0 {
            best = (x, i);
        }
    }
    best
}

/// Coordinate-format builder. Duplicate entries are summed.
#[derive(Debug, Clone)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    #[inline]
    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.nrows && c < self.ncols);
        if v != 0.0 {
            self.entries.push((r, c, v));
        }
    }

    /// Copy another block in at an offset, scaling every entry.
    pub fn push_block(&mut self, other: &Triplets, row_off: usize, col_off: usize, scale: f64) {
        for &(r, c, v) in &other.entries {
            self.push(r + row_off, c + col_off, scale * v);
        }
    }

    /// Copy a block in with rows scaled by `row_scale[r]`.
    pub fn push_block_row_scaled(
        &mut self,
        other: &Triplets,
        row_off: usize,
        col_off: usize,
        row_scale: &[f64],
    ) {
        for &(r, c, v) in &other.entries {
            self.push(r + row_off, c + col_off, row_scale[r] * v);
        }
    }

    pub fn to_csr(&self) -> CsrMatrix {
        CsrMatrix::from_triplets(self)
    }
}

/// Compressed sparse rows, used for matrix-vector products.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_triplets(t: &Triplets) -> Self {
        let mut sorted = t.entries.clone();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; t.nrows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..t.nrows {
            indptr[r + 1] += indptr[r];
        }
        Self {
            nrows: t.nrows,
            ncols: t.ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for (r, yr) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                s += self.values[k] * x[self.indices[k]];
            }
            *yr = s;
        }
        y
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for k in self.indptr[r]..self.indptr[r + 1] {
                y[self.indices[k]] += self.values[k] * xr;
            }
        }
        y
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.indptr[r]..self.indptr[r + 1]).map(move |k| (self.indices[k], self.values[k]))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, row) in d.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] += v;
            }
        }
        d
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let mut trip = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                trip.push(Triplet::new(r, c, v));
            }
        }
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &trip)
            .map_err(|e| MfgError::LinearSolve(format!("sparse assembly: {e:?}")))
    }
}

fn col_from(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

fn vec_from(m: &Mat<f64>) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, 0)]).collect()
}

enum LuFactor {
    Sparse(faer::sparse::linalg::solvers::Lu<usize, f64>),
    Dense(faer::linalg::solvers::PartialPivLu<f64>),
}

impl LuFactor {
    fn solve_in_place(&self, transpose: bool, rhs: faer::MatMut<'_, f64>) {
        match (self, transpose) {
            (LuFactor::Sparse(lu), false) => lu.solve_in_place_with_conj(Conj::No, rhs),
            (LuFactor::Sparse(lu), true) => lu.solve_transpose_in_place_with_conj(Conj::No, rhs),
            (LuFactor::Dense(lu), false) => lu.solve_in_place_with_conj(Conj::No, rhs),
            (LuFactor::Dense(lu), true) => lu.solve_transpose_in_place_with_conj(Conj::No, rhs),
        }
    }
}

/// Fill fraction above which a dense LU is cheaper than the sparse one
/// (dense nonlocal couplings produce such Jacobians).
const DENSE_FILL: f64 = 0.05;
const DENSE_MAX_DIM: usize = 6000;

/// LU factorization of a square matrix, with solves for A and Aᵀ. Matrices
/// that are mostly filled are factored densely.
pub struct SparseLu {
    n: usize,
    matrix: CsrMatrix,
    lu: LuFactor,
}

impl SparseLu {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(MfgError::DimensionMismatch {
                expected: a.nrows,
                got: a.ncols,
            });
        }
        let n = a.nrows;
        let fill = a.nnz() as f64 / (n as f64 * n as f64).max(1.0);
        let lu = if n <= DENSE_MAX_DIM && fill > DENSE_FILL {
            let mut d = Mat::<f64>::zeros(n, n);
            for r in 0..n {
                for (c, v) in a.row(r) {
                    d[(r, c)] += v;
                }
            }
            LuFactor::Dense(d.partial_piv_lu())
        } else {
            let f = a.to_faer()?;
            LuFactor::Sparse(f.sp_lu().map_err(|e| MfgError::LinearSolve(format!("sparse LU: {e:?}")))?)
        };
        Ok(Self {
            n: a.nrows,
            matrix: a.clone(),
            lu,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut rhs = col_from(b);
        self.lu.solve_in_place(false, rhs.as_mut());
        let x = vec_from(&rhs);
        self.verify(&x, b, false)?;
        Ok(x)
    }

    pub fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut rhs = col_from(b);
        self.lu.solve_in_place(true, rhs.as_mut());
        let x = vec_from(&rhs);
        self.verify(&x, b, true)?;
        Ok(x)
    }

    fn verify(&self, x: &[f64], b: &[f64], transpose: bool) -> Result<()> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(MfgError::LinearSolve("non-finite solution".into()));
        }
        let ax = if transpose {
            self.matrix.matvec_transpose(x)
        } else {
            self.matrix.matvec(x)
        };
        let res = norm_inf(&sub(&ax, b));
        let scale = norm_inf(b).max(1e-300);
        if res > 1e-6 * scale.max(1.0) {
            return Err(MfgError::LinearSolve(format!(
                "residual check failed ({res:e} vs rhs {scale:e})"
            )));
        }
        Ok(())
    }
}

/// Solve `A x = b`, retrying with a Tikhonov shift `eps` on the diagonal
/// if the plain factorization fails.
pub fn solve_sparse_with_fallback(a: &Triplets, b: &[f64], eps: f64) -> Result<Vec<f64>> {
    match SparseLu::new(&a.to_csr()).and_then(|lu| lu.solve(b)) {
        Ok(x) => Ok(x),
        Err(first) => {
            log::debug!("sparse solve failed ({first}); retrying with shift {eps:e}");
            let mut shifted = a.clone();
            for i in 0..a.nrows {
                shifted.push(i, i, eps);
            }
            let lu = SparseLu::new(&shifted.to_csr())?;
            let mut rhs = col_from(b);
            lu.lu.solve_in_place(false, rhs.as_mut());
            let x = vec_from(&rhs);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(first);
            }
            Ok(x)
        }
    }
}

/// Dense symmetric positive-definite factor `A = L Lᵀ`.
#[derive(Clone)]
pub struct DenseCholesky {
    l: Mat<f64>,
}

impl DenseCholesky {
    pub fn new(a: &Mat<f64>) -> Result<Self> {
        let llt = a
            .llt(Side::Lower)
            .map_err(|e| MfgError::NotPositiveDefinite(format!("{e:?}")))?;
        Ok(Self {
            l: llt.L().to_owned(),
        })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn lower(&self) -> &Mat<f64> {
        &self.l
    }

    /// x = L⁻¹ b
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let mut rhs = col_from(b);
        faer::linalg::triangular_solve::solve_lower_triangular_in_place(
            self.l.as_ref(),
            rhs.as_mut(),
            Par::Seq,
        );
        vec_from(&rhs)
    }

    /// x = L⁻ᵀ b
    pub fn solve_lower_transpose(&self, b: &[f64]) -> Vec<f64> {
        let mut rhs = col_from(b);
        faer::linalg::triangular_solve::solve_upper_triangular_in_place(
            self.l.as_ref().transpose(),
            rhs.as_mut(),
            Par::Seq,
        );
        vec_from(&rhs)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_lower_transpose(&self.solve_lower(b))
    }

    /// Solve for several right-hand sides stored as columns.
    pub fn solve_mat(&self, b: &Mat<f64>) -> Mat<f64> {
        let mut rhs = b.clone();
        faer::linalg::triangular_solve::solve_lower_triangular_in_place(
            self.l.as_ref(),
            rhs.as_mut(),
            Par::Seq,
        );
        faer::linalg::triangular_solve::solve_upper_triangular_in_place(
            self.l.as_ref().transpose(),
            rhs.as_mut(),
            Par::Seq,
        );
        rhs
    }
}

/// Dense LU solve of a small square system (row-major input).
pub fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let m = Mat::from_fn(n, n, |i, j| a[i][j]);
    let x = m.partial_piv_lu().solve(col_from(b));
    let out = vec_from(&x);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(MfgError::LinearSolve("dense LU produced non-finite values".into()));
    }
    Ok(out)
}

pub fn mat_vec(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    let y = a * col_from(x);
    vec_from(&y)
}

pub fn mat_t_vec(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    let y = a.transpose() * col_from(x);
    vec_from(&y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Preconditioned conjugate gradients for an SPD operator.
pub fn pcg<A, P>(
    apply: A,
    precond: P,
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, CgOutcome)>
where
    A: Fn(&[f64]) -> Result<Vec<f64>>,
    P: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let mut x = vec![0.0; n];
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok((
            x,
            CgOutcome {
                iterations: 0,
                relative_residual: 0.0,
                converged: true,
            },
        ));
    }
    let mut r = b.to_vec();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut rel = 1.0;
    for it in 0..max_iter {
        let ap = apply(&p)?;
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Ok((
                x,
                CgOutcome {
                    iterations: it,
                    relative_residual: rel,
                    converged: false,
                },
            ));
        }
        let a = rz / pap;
        axpy(a, &p, &mut x);
        axpy(-a, &ap, &mut r);
        rel = norm2(&r) / bnorm;
        if rel <= rel_tol {
            return Ok((
                x,
                CgOutcome {
                    iterations: it + 1,
                    relative_residual: rel,
                    converged: true,
                },
            ));
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    Ok((
        x,
        CgOutcome {
            iterations: max_iter,
            relative_residual: rel,
            converged: false,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_sum_on_integers() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499500.0);
    }

    #[test]
    fn csr_sums_duplicates_and_transposes() {
        let mut t = Triplets::new(2, 3);
        t.push(0, 0, 1.0);
        t.push(0, 0, 2.0);
        t.push(1, 2, 4.0);
        t.push(0, 1, -1.0);
        let a = t.to_csr();
        assert_eq!(a.matvec(&[1.0, 1.0, 1.0]), vec![2.0, 4.0]);
        assert_eq!(a.matvec_transpose(&[1.0, 2.0]), vec![3.0, -1.0, 8.0]);
    }

    #[test]
    fn sparse_lu_solves_and_transpose_solves() {
        let mut t = Triplets::new(2, 2);
        t.push(0, 0, 2.0);
        t.push(0, 1, 1.0);
        t.push(1, 1, 3.0);
        let lu = SparseLu::new(&t.to_csr()).unwrap();
        let x = lu.solve(&[1.0, 1.0]).unwrap();
        assert!((x[0] - 1.0 / 3.0).abs() < 1e-15 && (x[1] - 1.0 / 3.0).abs() < 1e-15);
        let y = lu.solve_transpose(&[1.0, 1.0]).unwrap();
        assert!((y[0] - 0.5).abs() < 1e-15 && (y[1] - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn cholesky_triangular_solves() {
        let a = Mat::from_fn(3, 3, |i, j| if i == j { 2.0 } else { 0.5 });
        let c = DenseCholesky::new(&a).unwrap();
        let b = [1.0, -2.0, 0.5];
        let x = c.solve(&b);
        let ax = mat_vec(&a, &x);
        for i in 0..3 {
            assert!((ax[i] - b[i]).abs() < 1e-14);
        }
        let y = c.solve_lower(&b);
        let ly = mat_vec(c.lower(), &y);
        for i in 0..3 {
            assert!((ly[i] - b[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn pcg_solves_spd_system() {
        let n = 20;
        let a = Mat::from_fn(n, n, |i, j| {
            if i == j {
                4.0
            } else if i.abs_diff(j) == 1 {
                -1.0
            } else {
                0.0
            }
        });
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let (x, out) = pcg(|v| Ok(mat_vec(&a, v)), |r| r.to_vec(), &b, 1e-12, 100).unwrap();
        assert!(out.converged);
        let ax = mat_vec(&a, &x);
        assert!(norm_inf(&sub(&ax, &b)) < 1e-10);
    }
}
