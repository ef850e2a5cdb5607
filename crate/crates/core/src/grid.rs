//! Uniform periodic grids on the unit torus in one or two dimensions.
//!
//! Node (i, j) has coordinates (i h, j h) and flat index `j * n + i`.

use std::sync::{Arc, OnceLock};

use faer::linalg::solvers::SolveCore;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Mat, Side};

use crate::error::{check_len, MfgError, Result};
use crate::linalg::{self, Triplets};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
}

/// The upwind stencil at one node: `(D₁⁺y, D₁⁻y, D₂⁺y, D₂⁻y)`, truncated
/// to the first two entries in one dimension.
pub type UpwindStencil = [f64; 4];

impl TorusGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(MfgError::InvalidGrid(format!("dimension {dim} not in {{1, 2}}")));
        }
        if n < 3 {
            return Err(MfgError::InvalidGrid(format!("need at least 3 nodes per axis, got {n}")));
        }
        Ok(Self { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// h^d, the quadrature weight of one node.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of stencil directions, 2d.
    pub fn n_directions(&self) -> usize {
        2 * self.dim
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        if self.dim == 1 {
            i % self.n
        } else {
            (j % self.n) * self.n + (i % self.n)
        }
    }

    pub fn multi_index(&self, idx: usize) -> (usize, usize) {
        (idx % self.n, idx / self.n)
    }

    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.multi_index(idx);
        let h = self.h();
        if self.dim == 1 {
            [i as f64 * h, 0.0]
        } else {
            [i as f64 * h, j as f64 * h]
        }
    }

    /// Periodic neighbour of `idx` shifted by `step` along `axis`.
    pub fn neighbor(&self, idx: usize, axis: usize, step: isize) -> usize {
        let (i, j) = self.multi_index(idx);
        let n = self.n as isize;
        let shift = |k: usize| (((k as isize + step) % n + n) % n) as usize;
        match axis {
            0 => self.index(shift(i), j),
            _ => self.index(i, shift(j)),
        }
    }

    /// For stencil direction ℓ, the pair `(plus, minus)` with
    /// q_ℓ = (y[plus] - y[minus]) / h.
    pub fn direction_pair(&self, idx: usize, dir: usize) -> (usize, usize) {
        let axis = dir / 2;
        if dir % 2 == 0 {
            (self.neighbor(idx, axis, 1), idx)
        } else {
            (idx, self.neighbor(idx, axis, -1))
        }
    }

    pub fn diff(&self, y: &[f64], axis: usize, sign: Sign) -> Result<Vec<f64>> {
        check_len(y, self.len())?;
        if axis >= self.dim {
            return Err(MfgError::InvalidInput(format!("axis {axis} out of range")));
        }
        let inv_h = self.n as f64;
        Ok((0..self.len())
            .map(|k| match sign {
                Sign::Forward => (y[self.neighbor(k, axis, 1)] - y[k]) * inv_h,
                Sign::Backward => (y[k] - y[self.neighbor(k, axis, -1)]) * inv_h,
            })
            .collect())
    }

    pub fn laplacian(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(y, self.len())?;
        let inv_h2 = (self.n * self.n) as f64;
        Ok((0..self.len())
            .map(|k| {
                let mut s = 0.0;
                for axis in 0..self.dim {
                    s += y[self.neighbor(k, axis, 1)] + y[self.neighbor(k, axis, -1)] - 2.0 * y[k];
                }
                s * inv_h2
            })
            .collect())
    }

    /// Triplets of `scale * Δ_h`.
    pub fn laplacian_triplets(&self, scale: f64) -> Triplets {
        let mut t = Triplets::new(self.len(), self.len());
        self.push_laplacian(&mut t, 0, 0, scale);
        t
    }

    pub fn push_laplacian(&self, t: &mut Triplets, row_off: usize, col_off: usize, scale: f64) {
        if scale == 0.0 {
            return;
        }
        let c = scale * (self.n * self.n) as f64;
        for k in 0..self.len() {
            t.push(row_off + k, col_off + k, -2.0 * self.dim as f64 * c);
            for axis in 0..self.dim {
                t.push(row_off + k, col_off + self.neighbor(k, axis, 1), c);
                t.push(row_off + k, col_off + self.neighbor(k, axis, -1), c);
            }
        }
    }

    pub fn stencil_at(&self, y: &[f64], idx: usize) -> UpwindStencil {
        let mut q = [0.0; 4];
        let inv_h = self.n as f64;
        for (dir, qd) in q.iter_mut().enumerate().take(self.n_directions()) {
            let (p, m) = self.direction_pair(idx, dir);
            *qd = (y[p] - y[m]) * inv_h;
        }
        q
    }

    pub fn upwind_stencil(&self, y: &[f64]) -> Result<Vec<UpwindStencil>> {
        check_len(y, self.len())?;
        Ok((0..self.len()).map(|k| self.stencil_at(y, k)).collect())
    }

    /// Discrete pairing ⟨a, b⟩_h = h^d Σ a_i b_i.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        check_len(a, self.len())?;
        check_len(b, self.len())?;
        Ok(self.cell_volume() * linalg::dot(a, b))
    }

    pub fn integral(&self, a: &[f64]) -> f64 {
        self.cell_volume() * linalg::pairwise_sum(a)
    }

    pub fn norm_sq(&self, a: &[f64]) -> f64 {
        self.cell_volume() * linalg::dot(a, a)
    }

    pub fn sample<F: Fn([f64; 2]) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.len()).map(|k| f(self.coords(k))).collect()
    }

    pub fn nodes(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|k| self.coords(k)).collect()
    }
}

/// Factorized `I - Δ_h` for repeated applications of `(I - Δ_h)^{-r}`.
pub struct HelmholtzSolver {
    grid: TorusGrid,
    llt: faer::sparse::linalg::solvers::Llt<usize, f64>,
    dense_inverse: OnceLock<Arc<Mat<f64>>>,
}

impl std::fmt::Debug for HelmholtzSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HelmholtzSolver").field("grid", &self.grid).finish()
    }
}

impl HelmholtzSolver {
    pub fn new(grid: TorusGrid) -> Result<Self> {
        let lap = grid.laplacian_triplets(-1.0);
        let mut trip: Vec<Triplet<usize, usize, f64>> =
            lap.entries.iter().map(|&(r, c, v)| Triplet::new(r, c, v)).collect();
        for k in 0..grid.len() {
            trip.push(Triplet::new(k, k, 1.0));
        }
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(grid.len(), grid.len(), &trip)
            .map_err(|e| MfgError::LinearSolve(format!("{e:?}")))?;
        let llt = a
            .sp_cholesky(Side::Lower)
            .map_err(|e| MfgError::LinearSolve(format!("Helmholtz Cholesky: {e:?}")))?;
        Ok(Self {
            grid,
            llt,
            dense_inverse: OnceLock::new(),
        })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    /// y - Δ_h y
    pub fn apply_operator(&self, y: &[f64]) -> Result<Vec<f64>> {
        let lap = self.grid.laplacian(y)?;
        Ok(y.iter().zip(&lap).map(|(a, b)| a - b).collect())
    }

    /// (I - Δ_h)^{-r} rhs
    pub fn solve(&self, rhs: &[f64], r: u32) -> Result<Vec<f64>> {
        check_len(rhs, self.grid.len())?;
        let mut x = rhs.to_vec();
        for _ in 0..r {
            let mut col = Mat::from_fn(x.len(), 1, |i, _| x[i]);
            self.llt.solve_in_place_with_conj(Conj::No, col.as_mut());
            let next: Vec<f64> = (0..x.len()).map(|i| col[(i, 0)]).collect();
            let back = self.apply_operator(&next)?;
            let res = linalg::norm_inf(&linalg::sub(&back, &x));
            if !res.is_finite() || res > 1e-9 * linalg::norm_inf(&x).max(1.0) {
                return Err(MfgError::LinearSolve(format!(
                    "Helmholtz residual {res:e} exceeds tolerance"
                )));
            }
            x = next;
        }
        Ok(x)
    }

    /// Dense `(I - Δ_h)^{-1}`, computed once on demand.
    pub fn dense_inverse(&self) -> Result<Arc<Mat<f64>>> {
        if let Some(m) = self.dense_inverse.get() {
            return Ok(m.clone());
        }
        let n = self.grid.len();
        let mut id = Mat::<f64>::identity(n, n);
        self.llt.solve_in_place_with_conj(Conj::No, id.as_mut());
        if id.col_iter().any(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(MfgError::LinearSolve("Helmholtz inverse not finite".into()));
        }
        let arc = Arc::new(id);
        let _ = self.dense_inverse.set(arc.clone());
        Ok(arc)
    }
}
