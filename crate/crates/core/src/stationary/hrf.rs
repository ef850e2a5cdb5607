//! Implicit-Euler integration of the stationary Hessian–Riemannian flow
//! Ṁ = -M⊙R^m, U̇ = -R^u.
//!
//! Each step solves, for (M, U, ρ),
//!   M - Mⁿ + Δs M⊙(core(M,U) + ρ) = 0,  U - Uⁿ + Δs R^u(M,U) = 0,  ⟨M,1⟩_h = 1,
//! where ρ is the multiplier that keeps the mass fixed (λ at the limit).

use serde::{Deserialize, Serialize};

use super::{check_state, linearize, normalize, stationary_residual, trace_row, ConvergenceTrace, SolveReport, StationaryState};
use crate::error::{MfgError, Result};
use crate::linalg::{self, SparseLu, Triplets};
use crate::models::MfgProblem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub tol: f64,
    pub max_steps: usize,
    pub ds_init: f64,
    pub ds_grow: f64,
    pub ds_max: f64,
    pub ds_floor: f64,
    pub newton_iters: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_steps: 2000,
            ds_init: 0.5,
            ds_grow: 1.2,
            ds_max: 1e8,
            ds_floor: 1e-8,
            newton_iters: 5,
        }
    }
}

struct StepOutcome {
    m: Vec<f64>,
    u: Vec<f64>,
}

fn step_residual(problem: &MfgProblem, m_old: &[f64], u_old: &[f64], m: &[f64], u: &[f64], rho: f64, ds: f64) -> Result<(Vec<f64>, super::Linearization)> {
    let n = problem.grid.len();
    let lin = linearize(problem, m, u)?;
    let mut g = vec![0.0; 2 * n + 1];
    for i in 0..n {
        g[i] = m[i] - m_old[i] + ds * m[i] * (lin.core[i] + rho);
        g[n + i] = u[i] - u_old[i] + ds * lin.fp[i];
    }
    g[2 * n] = problem.grid.integral(m) - 1.0;
    Ok((g, lin))
}

fn step_jacobian(problem: &MfgProblem, lin: &super::Linearization, m: &[f64], rho: f64, ds: f64) -> Triplets {
    let n = problem.grid.len();
    let hd = problem.grid.cell_volume();
    let mut t = Triplets::new(2 * n + 1, 2 * n + 1);
    let scale: Vec<f64> = m.iter().map(|v| ds * v).collect();
    for i in 0..n {
        t.push(i, i, 1.0 + ds * (lin.core[i] + rho));
        t.push(i, 2 * n, ds * m[i]);
        t.push(n + i, n + i, 1.0);
        t.push(2 * n, i, hd);
    }
    t.push_block_row_scaled(&lin.core_m, 0, 0, &scale);
    t.push_block_row_scaled(&lin.core_u, 0, n, &scale);
    t.push_block(&lin.fp_m, n, 0, ds);
    t.push_block(&lin.fp_u, n, n, ds);
    t
}

fn implicit_step(problem: &MfgProblem, m_old: &[f64], u_old: &[f64], rho0: f64, ds: f64, cfg: &FlowConfig) -> Result<Option<StepOutcome>> {
    let n = problem.grid.len();
    let mut m = m_old.to_vec();
    let mut u = u_old.to_vec();
    let mut rho = rho0;
    let step_tol = (1e-3 * cfg.tol * (1.0 + ds)).max(1e-14);
    let (mut g, mut lin) = step_residual(problem, m_old, u_old, &m, &u, rho, ds)?;
    for _ in 0..cfg.newton_iters {
        if linalg::norm_inf(&g) <= step_tol {
            return Ok(Some(StepOutcome { m, u }));
        }
        let jac = step_jacobian(problem, &lin, &m, rho, ds);
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        let delta = match SparseLu::new(&jac.to_csr()).and_then(|lu| lu.solve(&rhs)) {
            Ok(d) => d,
            Err(_) => return Ok(None),
        };
        let g_norm = linalg::norm2(&g);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let mt: Vec<f64> = (0..n).map(|i| m[i] + t * delta[i]).collect();
            if mt.iter().all(|&v| v > 0.0) {
                let ut: Vec<f64> = (0..n).map(|i| u[i] + t * delta[n + i]).collect();
                let rt = rho + t * delta[2 * n];
                if let Ok((gt, lt)) = step_residual(problem, m_old, u_old, &mt, &ut, rt, ds) {
                    if linalg::norm2(&gt) <= (1.0 - 1e-4 * t) * g_norm || linalg::norm_inf(&gt) <= step_tol {
                        m = mt;
                        u = ut;
                        rho = rt;
                        g = gt;
                        lin = lt;
                        accepted = true;
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return Ok(None);
        }
    }
    if linalg::norm_inf(&g) <= step_tol {
        Ok(Some(StepOutcome { m, u }))
    } else {
        Ok(None)
    }
}

pub fn hrf_stationary_solve(problem: &MfgProblem, init: &StationaryState, cfg: &FlowConfig) -> Result<SolveReport> {
    check_state(problem, init)?;
    let mut m = init.m.clone();
    let mut u = init.u.clone();
    normalize(problem, &mut m, &mut u);
    let mut res = stationary_residual(problem, &m, &u)?;
    let mut trace = ConvergenceTrace::default();
    trace.push(trace_row(0, &res, &m, 0.0));
    let mut best = (res.norm_inf(), m.clone(), u.clone(), res.lambda);
    if res.norm_inf() < cfg.tol {
        return Ok(finish(m, u, res.lambda, trace, true, 0, best.0));
    }
    let mut ds = cfg.ds_init;
    for step in 1..=cfg.max_steps {
        let out = loop {
            match implicit_step(problem, &m, &u, res.lambda, ds, cfg)? {
                Some(o) => break o,
                None => {
                    ds *= 0.5;
                    if ds < cfg.ds_floor {
                        return Err(MfgError::StepFloor { step, floor: cfg.ds_floor });
                    }
                }
            }
        };
        m = out.m;
        u = out.u;
        normalize(problem, &mut m, &mut u);
        res = stationary_residual(problem, &m, &u)?;
        let r = res.norm_inf();
        if !r.is_finite() {
            return Err(MfgError::NonFinite(format!("residual at flow step {step}")));
        }
        trace.push(trace_row(step, &res, &m, ds));
        log::trace!("hrf step {step}: ds={ds:e} res={r:e} lambda={}", res.lambda);
        if r < best.0 {
            best = (r, m.clone(), u.clone(), res.lambda);
        }
        if r < cfg.tol {
            return Ok(finish(m, u, res.lambda, trace, true, step, r));
        }
        ds = (ds * cfg.ds_grow).min(cfg.ds_max);
    }
    let (r, m, u, l) = best;
    Ok(finish(m, u, l, trace, false, cfg.max_steps, r))
}

fn finish(m: Vec<f64>, u: Vec<f64>, lambda: f64, trace: ConvergenceTrace, converged: bool, iterations: usize, residual_norm: f64) -> SolveReport {
    SolveReport {
        state: StationaryState { m, u, lambda },
        trace,
        converged,
        iterations,
        residual_norm,
    }
}
