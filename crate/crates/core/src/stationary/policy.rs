//! Policy iteration: freeze the slopes α = ∇_q g at the current U, solve
//! the linear Fokker–Planck system for M, then the HJB system linearized
//! at the frozen policy for (U, λ).

use serde::{Deserialize, Serialize};

use super::{check_state, normalize, stationary_residual, trace_row, ConvergenceTrace, SolveReport, StationaryState};
use crate::error::{MfgError, Result};
use crate::linalg::{self, Triplets};
use crate::models::{self, MfgProblem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Weight of the new density in M ← (1-ω)M + ωM_new.
    pub relaxation: f64,
    pub tikhonov: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 500,
            relaxation: 1.0,
            tikhonov: 1e-10,
        }
    }
}

/// Solve -νΔM + B_α(M) = 0, ⟨M,1⟩_h = 1 with the policy frozen.
fn fp_solve(problem: &MfgProblem, eval: &models::HamiltonianEval, tik: f64) -> Result<Vec<f64>> {
    let g = &problem.grid;
    let n = g.len();
    let mut frozen = eval.clone();
    frozen.grad_dm.clear();
    let mut t = Triplets::new(n + 1, n + 1);
    g.push_laplacian(&mut t, 0, 0, -problem.viscosity);
    let unused = vec![0.0; n];
    models::push_transport_dm(g, &frozen, &unused, &mut t, 0, 0, 1.0);
    for i in 0..n {
        t.push(i, n, 1.0);
        t.push(n, i, g.cell_volume());
    }
    let mut rhs = vec![0.0; n + 1];
    rhs[n] = 1.0;
    let x = linalg::solve_sparse_with_fallback(&t, &rhs, tik)?;
    Ok(x[..n].to_vec())
}

/// Solve νΔU - [g(q̂) + ∇g(q̂)·(q(U) - q̂)] + f(M) + σV + λ = 0, ⟨U,1⟩_h = 0.
fn hjb_solve(problem: &MfgProblem, u_old: &[f64], m: &[f64], tik: f64) -> Result<(Vec<f64>, f64)> {
    let g = &problem.grid;
    let n = g.len();
    let eval = models::eval_hamiltonian(problem, u_old, m, false)?;
    let f = problem.coupling.apply(g, m)?;
    let sigma = problem.sign.sigma();
    let mut t = Triplets::new(n + 1, n + 1);
    g.push_laplacian(&mut t, 0, 0, problem.viscosity);
    models::push_hamiltonian_du(g, &eval, &mut t, 0, 0, -1.0);
    for i in 0..n {
        t.push(i, n, 1.0);
        t.push(n, i, g.cell_volume());
    }
    let mut rhs = vec![0.0; n + 1];
    for k in 0..n {
        let q = g.stencil_at(u_old, k);
        let lin: f64 = (0..g.n_directions()).map(|d| eval.grad[k][d] * q[d]).sum();
        rhs[k] = eval.value[k] - lin - f[k] - sigma * problem.cost[k];
    }
    let x = linalg::solve_sparse_with_fallback(&t, &rhs, tik)?;
    Ok((x[..n].to_vec(), x[n]))
}

pub fn policy_iteration_solve(problem: &MfgProblem, init: &StationaryState, cfg: &PolicyConfig) -> Result<SolveReport> {
    check_state(problem, init)?;
    let mut m = init.m.clone();
    let mut u = init.u.clone();
    normalize(problem, &mut m, &mut u);
    let mut res = stationary_residual(problem, &m, &u)?;
    let mut trace = ConvergenceTrace::default();
    trace.push(trace_row(0, &res, &m, 0.0));
    if res.norm_inf() < cfg.tol {
        return Ok(report(m, u, res.lambda, trace, true, 0, res.norm_inf()));
    }
    let mut best = (res.norm_inf(), m.clone(), u.clone(), res.lambda);
    for it in 1..=cfg.max_iter {
        let eval = models::eval_hamiltonian(problem, &u, &m, false)?;
        let m_new = fp_solve(problem, &eval, cfg.tikhonov)?;
        let (min, node) = linalg::min_value(&m_new);
        if !(min > 0.0) {
            return Err(MfgError::NonPositiveDensity { min, node });
        }
        let w = cfg.relaxation;
        for (a, b) in m.iter_mut().zip(&m_new) {
            *a = (1.0 - w) * *a + w * b;
        }
        let (u_new, _) = hjb_solve(problem, &u, &m, cfg.tikhonov)?;
        u = u_new;
        normalize(problem, &mut m, &mut u);
        res = stationary_residual(problem, &m, &u)?;
        let r = res.norm_inf();
        if !r.is_finite() {
            return Err(MfgError::NonFinite(format!("policy iteration residual at {it}")));
        }
        trace.push(trace_row(it, &res, &m, w));
        log::trace!("policy {it}: res={r:e}");
        if r < best.0 {
            best = (r, m.clone(), u.clone(), res.lambda);
        }
        if r < cfg.tol {
            return Ok(report(m, u, res.lambda, trace, true, it, r));
        }
    }
    let (r, m, u, l) = best;
    Ok(report(m, u, l, trace, false, cfg.max_iter, r))
}

fn report(m: Vec<f64>, u: Vec<f64>, lambda: f64, trace: ConvergenceTrace, converged: bool, iterations: usize, residual_norm: f64) -> SolveReport {
    SolveReport {
        state: StationaryState { m, u, lambda },
        trace,
        converged,
        iterations,
        residual_norm,
    }
}
