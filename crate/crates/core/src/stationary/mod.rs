//! Stationary (ergodic) discrete MFG: residual with λ-elimination and
//! three inner solvers sharing one convergence contract.

mod hrf;
mod newton;
mod policy;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use hrf::{hrf_stationary_solve, FlowConfig};
pub use newton::{newton_stationary_solve, NewtonConfig};
pub use policy::{policy_iteration_solve, PolicyConfig};

use crate::error::{check_len, MfgError, Result};
use crate::linalg::{self, Triplets};
use crate::models::{self, MfgProblem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryState {
    pub m: Vec<f64>,
    pub u: Vec<f64>,
    pub lambda: f64,
}

impl StationaryState {
    /// M ≡ 1, U ≡ 0 with λ from the elimination formula.
    pub fn uniform(problem: &MfgProblem) -> Result<Self> {
        let n = problem.grid.len();
        let m = vec![1.0; n];
        let u = vec![0.0; n];
        let lambda = lambda_eliminate(problem, &m, &u)?;
        Ok(Self { m, u, lambda })
    }

    pub fn from_fields(problem: &MfgProblem, m: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        let lambda = lambda_eliminate(problem, &m, &u)?;
        Ok(Self { m, u, lambda })
    }
}

#[derive(Debug, Clone)]
pub struct StationaryResidual {
    pub hjb: Vec<f64>,
    pub fp: Vec<f64>,
    pub lambda: f64,
}

impl StationaryResidual {
    pub fn norm_inf(&self) -> f64 {
        linalg::norm_inf(&self.hjb).max(linalg::norm_inf(&self.fp))
    }
}

/// νΔU - g(·,[D_hU],M) + f(M) + σV, i.e. the HJB block without λ.
pub(crate) fn hjb_core(problem: &MfgProblem, m: &[f64], u: &[f64], eval: &models::HamiltonianEval) -> Result<Vec<f64>> {
    let grid = &problem.grid;
    let lap = grid.laplacian(u)?;
    let f = problem.coupling.apply(grid, m)?;
    let sigma = problem.sign.sigma();
    Ok((0..grid.len())
        .map(|k| problem.viscosity * lap[k] - eval.value[k] + f[k] + sigma * problem.cost[k])
        .collect())
}

pub(crate) fn fp_block(problem: &MfgProblem, m: &[f64], eval: &models::HamiltonianEval) -> Result<Vec<f64>> {
    let grid = &problem.grid;
    let lap = grid.laplacian(m)?;
    let b = models::transport_from_eval(grid, eval, m);
    Ok((0..grid.len()).map(|k| -problem.viscosity * lap[k] + b[k]).collect())
}

fn eliminate_from_core(problem: &MfgProblem, m: &[f64], core: &[f64]) -> Result<f64> {
    let mass = problem.grid.integral(m);
    if mass == 0.0 || !mass.is_finite() {
        return Err(MfgError::InvalidInput(format!("total mass {mass} cannot be used for λ-elimination")));
    }
    Ok(-problem.grid.inner(m, core)? / mass)
}

pub fn lambda_eliminate(problem: &MfgProblem, m: &[f64], u: &[f64]) -> Result<f64> {
    let eval = models::eval_hamiltonian(problem, u, m, false)?;
    let core = hjb_core(problem, m, u, &eval)?;
    eliminate_from_core(problem, m, &core)
}

pub fn stationary_residual(problem: &MfgProblem, m: &[f64], u: &[f64]) -> Result<StationaryResidual> {
    let eval = models::eval_hamiltonian(problem, u, m, false)?;
    let core = hjb_core(problem, m, u, &eval)?;
    let lambda = eliminate_from_core(problem, m, &core)?;
    let hjb = core.iter().map(|c| c + lambda).collect();
    let fp = fp_block(problem, m, &eval)?;
    Ok(StationaryResidual { hjb, fp, lambda })
}

/// Values and Jacobian blocks of (core, R^u) at (M, U).
pub(crate) struct Linearization {
    pub core: Vec<f64>,
    pub fp: Vec<f64>,
    pub core_m: Triplets,
    pub core_u: Triplets,
    pub fp_m: Triplets,
    pub fp_u: Triplets,
}

pub(crate) fn linearize(problem: &MfgProblem, m: &[f64], u: &[f64]) -> Result<Linearization> {
    let grid = &problem.grid;
    let n = grid.len();
    let eval = models::eval_hamiltonian(problem, u, m, true)?;
    let core = hjb_core(problem, m, u, &eval)?;
    let fp = fp_block(problem, m, &eval)?;

    let mut core_m = Triplets::new(n, n);
    problem.coupling.push_jacobian(grid, m, &mut core_m, 0, 0, 1.0)?;
    models::push_hamiltonian_dm(grid, &eval, &mut core_m, 0, 0, -1.0);

    let mut core_u = Triplets::new(n, n);
    grid.push_laplacian(&mut core_u, 0, 0, problem.viscosity);
    models::push_hamiltonian_du(grid, &eval, &mut core_u, 0, 0, -1.0);

    let mut fp_m = Triplets::new(n, n);
    grid.push_laplacian(&mut fp_m, 0, 0, -problem.viscosity);
    models::push_transport_dm(grid, &eval, m, &mut fp_m, 0, 0, 1.0);

    let mut fp_u = Triplets::new(n, n);
    models::push_transport_du(grid, &eval, m, &mut fp_u, 0, 0, 1.0);

    Ok(Linearization {
        core,
        fp,
        core_m,
        core_u,
        fp_m,
        fp_u,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationarySolver {
    Hrf,
    Newton,
    Policy,
}

impl std::str::FromStr for StationarySolver {
    type Err = MfgError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hrf" => Ok(Self::Hrf),
            "newton" => Ok(Self::Newton),
            "policy" => Ok(Self::Policy),
            other => Err(MfgError::InvalidInput(format!("unknown solver '{other}'"))),
        }
    }
}

impl std::fmt::Display for StationarySolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Hrf => "hrf",
            Self::Newton => "newton",
            Self::Policy => "policy",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub residual_norm: f64,
    pub lambda: f64,
    pub min_density: f64,
    pub step_size: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub rows: Vec<TraceRow>,
}

impl ConvergenceTrace {
    pub fn push(&mut self, row: TraceRow) {
        self.rows.push(row);
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.residual_norm).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,residual_norm,lambda,min_density,step_size")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{}", r.step, r.residual_norm, r.lambda, r.min_density, r.step_size)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub state: StationaryState,
    pub trace: ConvergenceTrace,
    pub converged: bool,
    pub iterations: usize,
    pub residual_norm: f64,
}

/// Common knobs for dispatching to any of the three solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 2000 }
    }
}

pub fn solve(problem: &MfgProblem, solver: StationarySolver, init: &StationaryState, cfg: InnerConfig) -> Result<SolveReport> {
    match solver {
        StationarySolver::Hrf => {
            let c = FlowConfig {
                tol: cfg.tol,
                max_steps: cfg.max_iter,
                ..FlowConfig::default()
            };
            hrf_stationary_solve(problem, init, &c)
        }
        StationarySolver::Newton => {
            let c = NewtonConfig {
                tol: cfg.tol,
                max_iter: cfg.max_iter,
                ..NewtonConfig::default()
            };
            newton_stationary_solve(problem, init, &c)
        }
        StationarySolver::Policy => {
            let c = PolicyConfig {
                tol: cfg.tol,
                max_iter: cfg.max_iter,
                ..PolicyConfig::default()
            };
            policy_iteration_solve(problem, init, &c)
        }
    }
}

pub(crate) fn check_state(problem: &MfgProblem, s: &StationaryState) -> Result<()> {
    check_len(&s.m, problem.grid.len())?;
    check_len(&s.u, problem.grid.len())?;
    let (min, node) = linalg::min_value(&s.m);
    if !(min > 0.0) {
        return Err(MfgError::NonPositiveDensity { min, node });
    }
    Ok(())
}

/// Renormalize mass to 1 and shift U to zero mean.
pub(crate) fn normalize(problem: &MfgProblem, m: &mut [f64], u: &mut [f64]) {
    let g = &problem.grid;
    let mass = g.integral(m);
    for v in m.iter_mut() {
        *v /= mass;
    }
    let mean = g.integral(u);
    for v in u.iter_mut() {
        *v -= mean;
    }
}

pub(crate) fn trace_row(step: usize, res: &StationaryResidual, m: &[f64], step_size: f64) -> TraceRow {
    TraceRow {
        step,
        residual_norm: res.norm_inf(),
        lambda: res.lambda,
        min_density: linalg::min_value(m).0,
        step_size,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use crate::models::{Coupling, GodunovQuadratic};
    use std::sync::Arc;

    #[test]
    fn lambda_example_power_three() {
        let g = TorusGrid::new(2, 5).unwrap();
        let p = MfgProblem::stationary(g, 0.3, Arc::new(GodunovQuadratic::plain()), Coupling::Power(3.0), vec![0.0; 25]).unwrap();
        let l = lambda_eliminate(&p, &vec![1.0; 25], &vec![0.0; 25]).unwrap();
        assert!((l + 1.0).abs() < 1e-15);
    }

    #[test]
    fn residual_example_zero_mean_cost() {
        let g = TorusGrid::new(1, 8).unwrap();
        let v: Vec<f64> = g.sample(|x| (2.0 * std::f64::consts::PI * x[0]).sin());
        let p = MfgProblem::stationary(g, 0.0, Arc::new(GodunovQuadratic::plain()), Coupling::Power(1.0), v.clone()).unwrap();
        let r = stationary_residual(&p, &vec![1.0; 8], &vec![0.0; 8]).unwrap();
        assert!((r.lambda + 1.0).abs() < 1e-14);
        for k in 0..8 {
            assert!(r.fp[k].abs() < 1e-15);
            assert!((r.hjb[k] - v[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn elimination_identity_and_zero_mean_fp() {
        let g = TorusGrid::new(2, 6).unwrap();
        let v = g.sample(|x| (6.0 * x[0]).sin() * (2.0 * x[1]).cos());
        let p = MfgProblem::stationary(g, 0.2, Arc::new(GodunovQuadratic::shifted([0.5, 1.0])), Coupling::Cubic, v).unwrap();
        let m: Vec<f64> = (0..36).map(|k| 1.0 + 0.4 * (k as f64).sin()).collect();
        let u: Vec<f64> = (0..36).map(|k| (k as f64 * 0.3).cos()).collect();
        let r = stationary_residual(&p, &m, &u).unwrap();
        assert!(g.inner(&m, &r.hjb).unwrap().abs() < 1e-12);
        assert!(g.integral(&r.fp).abs() < 1e-12);
    }
}
