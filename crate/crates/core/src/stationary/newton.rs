//! Damped (semismooth) Newton on the bordered stationary system
//!   core(M,U) + λ1 = 0,  R^u(M,U) + μ1 = 0,  ⟨M,1⟩_h = 1,  ⟨U,1⟩_h = 0.
//! μ is a dummy multiplier that vanishes at a solution and makes the
//! system square.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{check_state, linearize, normalize, stationary_residual, trace_row, ConvergenceTrace, SolveReport, StationaryState};
use crate::error::{MfgError, Result};
use crate::linalg::{self, Triplets};
use crate::models::{MfgProblem, SmoothedQuadratic};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub tikhonov: f64,
    /// If set, iterate on the softplus-smoothed Hamiltonian first and then
    /// polish on the exact one (quadratic Hamiltonians only).
    pub smoothing: Option<f64>,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 200,
            tikhonov: 1e-10,
            smoothing: None,
        }
    }
}

fn extended_residual(problem: &MfgProblem, m: &[f64], u: &[f64], lambda: f64, mu: f64) -> Result<(Vec<f64>, super::Linearization)> {
    let n = problem.grid.len();
    let lin = linearize(problem, m, u)?;
    let mut e = vec![0.0; 2 * n + 2];
    for i in 0..n {
        e[i] = lin.core[i] + lambda;
        e[n + i] = lin.fp[i] + mu;
    }
    e[2 * n] = problem.grid.integral(m) - 1.0;
    e[2 * n + 1] = problem.grid.integral(u);
    Ok((e, lin))
}

fn extended_jacobian(problem: &MfgProblem, lin: &super::Linearization) -> Triplets {
    let n = problem.grid.len();
    let hd = problem.grid.cell_volume();
    let mut t = Triplets::new(2 * n + 2, 2 * n + 2);
    t.push_block(&lin.core_m, 0, 0, 1.0);
    t.push_block(&lin.core_u, 0, n, 1.0);
    t.push_block(&lin.fp_m, n, 0, 1.0);
    t.push_block(&lin.fp_u, n, n, 1.0);
    for i in 0..n {
        t.push(i, 2 * n, 1.0);
        t.push(n + i, 2 * n + 1, 1.0);
        t.push(2 * n, i, hd);
        t.push(2 * n + 1, n + i, hd);
    }
    t
}

pub fn newton_stationary_solve(problem: &MfgProblem, init: &StationaryState, cfg: &NewtonConfig) -> Result<SolveReport> {
    if let Some(eps) = cfg.smoothing {
        if let Some(shift) = quadratic_shift(problem) {
            let mut smooth = problem.clone();
            smooth.hamiltonian = Arc::new(SmoothedQuadratic::new(shift, eps));
            let pre = newton_core(&smooth, init, &NewtonConfig { smoothing: None, tol: cfg.tol.max(1e-8), ..*cfg })?;
            let mut out = newton_core(problem, &pre.state, &NewtonConfig { smoothing: None, ..*cfg })?;
            out.iterations += pre.iterations;
            let mut rows = pre.trace.rows;
            let off = rows.len();
            for mut r in out.trace.rows {
                r.step += off;
                rows.push(r);
            }
            out.trace.rows = rows;
            return Ok(out);
        }
    }
    newton_core(problem, init, cfg)
}

fn quadratic_shift(problem: &MfgProblem) -> Option<[f64; 2]> {
    use crate::models::HamiltonianKind::*;
    match problem.hamiltonian.kind() {
        GodunovQuadratic => Some([0.0, 0.0]),
        ShiftedQuadratic { shift } => Some(shift),
        _ => None,
    }
}

fn newton_core(problem: &MfgProblem, init: &StationaryState, cfg: &NewtonConfig) -> Result<SolveReport> {
    check_state(problem, init)?;
    let n = problem.grid.len();
    let mut m = init.m.clone();
    let mut u = init.u.clone();
    normalize(problem, &mut m, &mut u);
    let mut res = stationary_residual(problem, &m, &u)?;
    let mut trace = ConvergenceTrace::default();
    trace.push(trace_row(0, &res, &m, 0.0));
    let mut lambda = res.lambda;
    let mut mu = 0.0;
    if res.norm_inf() < cfg.tol {
        return Ok(report(m, u, res.lambda, trace, true, 0, res.norm_inf()));
    }
    let (mut e, mut lin) = extended_residual(problem, &m, &u, lambda, mu)?;
    for it in 1..=cfg.max_iter {
        let jac = extended_jacobian(problem, &lin);
        let rhs: Vec<f64> = e.iter().map(|v| -v).collect();
        let delta = linalg::solve_sparse_with_fallback(&jac, &rhs, cfg.tikhonov)?;
        let e_norm = linalg::norm2(&e);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mt: Vec<f64> = (0..n).map(|i| m[i] + t * delta[i]).collect();
            if mt.iter().all(|&v| v > 0.0) {
                let ut: Vec<f64> = (0..n).map(|i| u[i] + t * delta[n + i]).collect();
                let lt = lambda + t * delta[2 * n];
                let mt_mu = mu + t * delta[2 * n + 1];
                if let Ok((et, lint)) = extended_residual(problem, &mt, &ut, lt, mt_mu) {
                    if linalg::norm2(&et) <= (1.0 - 1e-4 * t) * e_norm {
                        m = mt;
                        u = ut;
                        lambda = lt;
                        mu = mt_mu;
                        e = et;
                        lin = lint;
                        accepted = true;
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        if !accepted {
            log::debug!("newton line search stalled at iteration {it}");
            let r = res.norm_inf();
            return Ok(report(m, u, res.lambda, trace, false, it, r));
        }
        res = stationary_residual(problem, &m, &u)?;
        let r = res.norm_inf();
        if !r.is_finite() {
            return Err(MfgError::NonFinite(format!("newton residual at iteration {it}")));
        }
        trace.push(trace_row(it, &res, &m, t));
        log::trace!("newton {it}: t={t} res={r:e}");
        if r < cfg.tol {
            let (mut mf, mut uf) = (m, u);
            normalize(problem, &mut mf, &mut uf);
            let rf = stationary_residual(problem, &mf, &uf)?;
            return Ok(report(mf, uf, rf.lambda, trace, true, it, rf.norm_inf()));
        }
    }
    let r = res.norm_inf();
    Ok(report(m, u, res.lambda, trace, false, cfg.max_iter, r))
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
