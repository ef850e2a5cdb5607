//! Fully discrete time-dependent MFG on the interior unknowns
//! Y = (M₁..M_NT, U₀..U_{NT-1}); M₀ and U_NT are frozen problem data.
//!
//! Residual blocks are stored as F = (r₁..r_NT, s₁..s_NT), so block b of F
//! pairs with block b of Y (r_k with M_k, s_k with U_{k-1}).

mod hrf;
mod newton;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use hrf::hrf_timedep_solve;
pub use newton::newton_timedep_solve;

use crate::error::{check_len, MfgError, Result};
use crate::linalg::{self, Triplets};
use crate::models::{self, MfgProblem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeState {
    pub nt: usize,
    pub n: usize,
    /// Flat interior vector, slice-major.
    pub y: Vec<f64>,
}

impl SpaceTimeState {
    /// M_k ≡ M₀, U_k ≡ U_NT.
    pub fn initial(problem: &MfgProblem) -> Result<Self> {
        let td = problem.time_data()?;
        let n = problem.grid.len();
        let nt = td.slices;
        let mut y = Vec::with_capacity(2 * nt * n);
        for _ in 0..nt {
            y.extend_from_slice(&td.m0);
        }
        for _ in 0..nt {
            y.extend_from_slice(&td.u_terminal);
        }
        Ok(Self { nt, n, y })
    }

    /// M_k ≡ 1, U_k ≡ 0.
    pub fn uniform(problem: &MfgProblem) -> Result<Self> {
        let td = problem.time_data()?;
        let n = problem.grid.len();
        let nt = td.slices;
        let mut y = vec![1.0; nt * n];
        y.extend(vec![0.0; nt * n]);
        Ok(Self { nt, n, y })
    }

    pub fn from_vec(problem: &MfgProblem, y: Vec<f64>) -> Result<Self> {
        let td = problem.time_data()?;
        let n = problem.grid.len();
        check_len(&y, 2 * td.slices * n)?;
        Ok(Self { nt: td.slices, n, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Interior density slice k ∈ 1..=NT.
    pub fn m_slice(&self, k: usize) -> &[f64] {
        &self.y[(k - 1) * self.n..k * self.n]
    }

    /// Interior value slice k ∈ 0..NT.
    pub fn u_slice(&self, k: usize) -> &[f64] {
        let off = self.nt * self.n;
        &self.y[off + k * self.n..off + (k + 1) * self.n]
    }

    pub fn m_slice_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.n;
        &mut self.y[(k - 1) * n..k * n]
    }

    pub fn u_slice_mut(&mut self, k: usize) -> &mut [f64] {
        let off = self.nt * self.n;
        let n = self.n;
        &mut self.y[off + k * n..off + (k + 1) * n]
    }

    pub fn densities(&self) -> &[f64] {
        &self.y[..self.nt * self.n]
    }

    /// M_k for k ∈ 0..=NT including the frozen endpoint.
    pub fn m_full<'a>(&'a self, problem: &'a MfgProblem, k: usize) -> &'a [f64] {
        if k == 0 {
            &problem.time.as_ref().expect("time data").m0
        } else {
            self.m_slice(k)
        }
    }

    /// U_k for k ∈ 0..=NT including the frozen endpoint.
    pub fn u_full<'a>(&'a self, problem: &'a MfgProblem, k: usize) -> &'a [f64] {
        if k == self.nt {
            &problem.time.as_ref().expect("time data").u_terminal
        } else {
            self.u_slice(k)
        }
    }

    pub fn min_density(&self) -> f64 {
        linalg::min_value(self.densities()).0
    }

    pub fn max_mass_deviation(&self, problem: &MfgProblem) -> f64 {
        (1..=self.nt)
            .map(|k| (problem.grid.integral(self.m_slice(k)) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    fn check_feasible(&self, problem: &MfgProblem) -> Result<()> {
        let td = problem.time_data()?;
        if self.nt != td.slices || self.n != problem.grid.len() {
            return Err(MfgError::DimensionMismatch {
                expected: 2 * td.slices * problem.grid.len(),
                got: self.y.len(),
            });
        }
        check_len(&self.y, 2 * self.nt * self.n)?;
        let (min, node) = linalg::min_value(self.densities());
        if !(min > 0.0) {
            return Err(MfgError::NonPositiveDensity { min, node });
        }
        Ok(())
    }

    /// Scale each density slice to unit mass.
    pub fn renormalize(&mut self, problem: &MfgProblem) {
        for k in 1..=self.nt {
            let mass = problem.grid.integral(self.m_slice(k));
            for v in self.m_slice_mut(k) {
                *v /= mass;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpaceTimeResidual {
    pub nt: usize,
    pub n: usize,
    /// (r₁..r_NT, s₁..s_NT)
    pub blocks: Vec<f64>,
}

impl SpaceTimeResidual {
    pub fn r(&self, k: usize) -> &[f64] {
        &self.blocks[(k - 1) * self.n..k * self.n]
    }

    pub fn s(&self, k: usize) -> &[f64] {
        let off = self.nt * self.n;
        &self.blocks[off + (k - 1) * self.n..off + k * self.n]
    }

    pub fn norm_inf(&self) -> f64 {
        linalg::norm_inf(&self.blocks)
    }
}

pub fn residual_td(problem: &MfgProblem, y: &SpaceTimeState) -> Result<SpaceTimeResidual> {
    let td = problem.time_data()?;
    check_len(&y.y, 2 * td.slices * problem.grid.len())?;
    let grid = &problem.grid;
    let n = grid.len();
    let nt = td.slices;
    let dt = td.dt();
    let nu = problem.viscosity;
    let sigma = problem.sign.sigma();
    let mut blocks = vec![0.0; 2 * nt * n];
    for k in 1..=nt {
        let mk = y.m_full(problem, k);
        let mkm = y.m_full(problem, k - 1);
        let uk = y.u_full(problem, k);
        let ukm = y.u_full(problem, k - 1);
        let eval = models::eval_hamiltonian(problem, ukm, mk, false)?;
        let lap_u = grid.laplacian(ukm)?;
        let lap_m = grid.laplacian(mk)?;
        let f = problem.coupling.apply(grid, mk)?;
        let b = models::transport_from_eval(grid, &eval, mk);
        let (rb, sb) = blocks.split_at_mut(nt * n);
        let r = &mut rb[(k - 1) * n..k * n];
        let s = &mut sb[(k - 1) * n..k * n];
        for i in 0..n {
            r[i] = (uk[i] - ukm[i]) / dt + nu * lap_u[i] - eval.value[i] + f[i] + sigma * problem.cost[i];
            s[i] = (mk[i] - mkm[i]) / dt - nu * lap_m[i] + b[i];
        }
    }
    Ok(SpaceTimeResidual { nt, n, blocks })
}

/// Sparse ∂F/∂Y in the block ordering of the module docs.
pub fn jacobian_td(problem: &MfgProblem, y: &SpaceTimeState) -> Result<Triplets> {
    let td = problem.time_data()?;
    let grid = &problem.grid;
    let n = grid.len();
    let nt = td.slices;
    let dt = td.dt();
    let nu = problem.viscosity;
    let dim = 2 * nt * n;
    let mut t = Triplets::new(dim, dim);
    let m_col = |k: usize| (k - 1) * n;
    let u_col = |k: usize| nt * n + k * n;
    for k in 1..=nt {
        let mk = y.m_full(problem, k);
        let ukm = y.u_full(problem, k - 1);
        let eval = models::eval_hamiltonian(problem, ukm, mk, true)?;
        let r_row = (k - 1) * n;
        let s_row = nt * n + (k - 1) * n;
        // r_k
        if k < nt {
            for i in 0..n {
                t.push(r_row + i, u_col(k) + i, 1.0 / dt);
            }
        }
        for i in 0..n {
            t.push(r_row + i, u_col(k - 1) + i, -1.0 / dt);
        }
        grid.push_laplacian(&mut t, r_row, u_col(k - 1), nu);
        models::push_hamiltonian_du(grid, &eval, &mut t, r_row, u_col(k - 1), -1.0);
        problem.coupling.push_jacobian(grid, mk, &mut t, r_row, m_col(k), 1.0)?;
        models::push_hamiltonian_dm(grid, &eval, &mut t, r_row, m_col(k), -1.0);
        // s_k
        for i in 0..n {
            t.push(s_row + i, m_col(k) + i, 1.0 / dt);
            if k > 1 {
                t.push(s_row + i, m_col(k - 1) + i, -1.0 / dt);
            }
        }
        grid.push_laplacian(&mut t, s_row, m_col(k), -nu);
        models::push_transport_dm(grid, &eval, mk, &mut t, s_row, m_col(k), 1.0);
        models::push_transport_du(grid, &eval, mk, &mut t, s_row, u_col(k - 1), 1.0);
    }
    Ok(t)
}

/// Δt Σ_b ⟨Ξ_b, Ψ_b⟩_h over all slice blocks of two stacked vectors.
pub fn spacetime_pairing(problem: &MfgProblem, a: &[f64], b: &[f64]) -> Result<f64> {
    let td = problem.time_data()?;
    if a.len() != b.len() {
        return Err(MfgError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    check_len(a, 2 * td.slices * problem.grid.len())?;
    Ok(td.dt() * problem.grid.cell_volume() * linalg::dot(a, b))
}

pub fn monotonicity_gap(problem: &MfgProblem, y: &SpaceTimeState, other: &SpaceTimeState) -> Result<f64> {
    let f1 = residual_td(problem, y)?;
    let f2 = residual_td(problem, other)?;
    let df = linalg::sub(&f1.blocks, &f2.blocks);
    let dy = linalg::sub(&y.y, &other.y);
    spacetime_pairing(problem, &df, &dy)
}

/// The flow direction (Ṁ_k, U̇_{k-1}) = (-M_k⊙(r_k - r̄_k), -s_k), in Y ordering.
pub fn hrf_rhs(problem: &MfgProblem, y: &SpaceTimeState) -> Result<Vec<f64>> {
    let res = residual_td(problem, y)?;
    let grid = &problem.grid;
    let n = y.n;
    let mut out = vec![0.0; y.len()];
    for k in 1..=y.nt {
        let m = y.m_slice(k);
        let r = res.r(k);
        let rbar = grid.inner(m, r)? / grid.integral(m);
        for i in 0..n {
            out[(k - 1) * n + i] = -m[i] * (r[i] - rbar);
        }
        let s = res.s(k);
        let off = y.nt * n + (k - 1) * n;
        for i in 0..n {
            out[off + i] = -s[i];
        }
    }
    Ok(out)
}

/// The flow leaves every ⟨U_k,1⟩_h invariant (⟨s_k,1⟩_h = 0 on unit-mass
/// slices), and its rest points satisfy r_k = r̄_k·1 rather than r_k = 0.
/// Spatially constant shifts of U change r_k only by slice constants, so
/// the shifts a_{k-1} = a_k + Δt·r̄_k (a_NT = 0) map a rest point onto the
/// root without touching M, s_k or r_k - r̄_k.
pub fn recover_value_means(problem: &MfgProblem, y: &SpaceTimeState) -> Result<SpaceTimeState> {
    let td = problem.time_data()?;
    let res = residual_td(problem, y)?;
    let mut out = y.clone();
    let mut a = 0.0;
    for k in (1..=y.nt).rev() {
        let m = y.m_slice(k);
        let rbar = problem.grid.inner(m, res.r(k))? / problem.grid.integral(m);
        a += td.dt() * rbar;
        for v in out.u_slice_mut(k - 1) {
            *v += a;
        }
    }
    Ok(out)
}

pub fn entropy(problem: &MfgProblem, y: &SpaceTimeState) -> Result<f64> {
    let td = problem.time_data()?;
    let (min, node) = linalg::min_value(y.densities());
    if !(min > 0.0) {
        return Err(MfgError::NonPositiveDensity { min, node });
    }
    let nm = y.nt * y.n;
    let terms: Vec<f64> = y
        .y
        .iter()
        .enumerate()
        .map(|(i, &v)| if i < nm { v * (v.ln() - 1.0) } else { 0.5 * v * v })
        .collect();
    Ok(td.dt() * problem.grid.cell_volume() * linalg::pairwise_sum(&terms))
}

/// D_E(Y*, Y) = E(Y*) - E(Y) - ⟨∇E(Y), Y* - Y⟩, evaluated termwise.
pub fn bregman(problem: &MfgProblem, y_star: &SpaceTimeState, y: &SpaceTimeState) -> Result<f64> {
    let td = problem.time_data()?;
    check_len(&y_star.y, y.len())?;
    for s in [y_star, y] {
        let (min, node) = linalg::min_value(s.densities());
        if !(min > 0.0) {
            return Err(MfgError::NonPositiveDensity { min, node });
        }
    }
    let nm = y.nt * y.n;
    let terms: Vec<f64> = (0..y.len())
        .map(|i| {
            let (a, b) = (y_star.y[i], y.y[i]);
            if i < nm {
                a * (a / b).ln() - a + b
            } else {
                0.5 * (a - b) * (a - b)
            }
        })
        .collect();
    Ok(td.dt() * problem.grid.cell_volume() * linalg::pairwise_sum(&terms))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdTraceRow {
    pub step: usize,
    pub s: f64,
    pub ds: f64,
    pub res_inf: f64,
    pub min_density: f64,
    pub mass_dev: f64,
    pub bregman: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TdTrace {
    pub rows: Vec<TdTraceRow>,
}

impl TdTrace {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,s,ds,res_inf,min_density,mass_dev,bregman")?;
        for r in &self.rows {
            let b = r.bregman.map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{},{},{},{}", r.step, r.s, r.ds, r.res_inf, r.min_density, r.mass_dev, b)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TdSolveReport {
    pub state: SpaceTimeState,
    pub trace: TdTrace,
    pub converged: bool,
    pub iterations: usize,
    pub residual_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdFlowConfig {
    pub tol: f64,
    pub max_steps: usize,
    pub ds_init: f64,
    pub ds_grow: f64,
    pub ds_max: f64,
    pub ds_floor: f64,
    pub newton_iters: usize,
}

impl Default for TdFlowConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_steps: 2000,
            ds_init: 0.5,
            ds_grow: 1.2,
            ds_max: 1e8,
            ds_floor: 1e-8,
            newton_iters: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdNewtonConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub tikhonov: f64,
}

impl Default for TdNewtonConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            tikhonov: 1e-10,
        }
    }
}
