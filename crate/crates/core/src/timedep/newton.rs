//! Damped Newton on F_h(Y) = 0. Slice masses follow from the FP blocks, so
//! the system is square without extra multipliers.

use super::{jacobian_td, residual_td, SpaceTimeState, TdNewtonConfig, TdSolveReport, TdTrace, TdTraceRow};
use crate::error::{MfgError, Result};
use crate::linalg;
use crate::models::MfgProblem;

fn row(problem: &MfgProblem, step: usize, t: f64, res: f64, y: &SpaceTimeState) -> TdTraceRow {
    TdTraceRow {
        step,
        s: 0.0,
        ds: t,
        res_inf: res,
        min_density: y.min_density(),
        mass_dev: y.max_mass_deviation(problem),
        bregman: None,
    }
}

pub fn newton_timedep_solve(problem: &MfgProblem, init: &SpaceTimeState, cfg: &TdNewtonConfig) -> Result<TdSolveReport> {
    init.check_feasible(problem)?;
    let nm = init.nt * init.n;
    let mut y = init.clone();
    let mut f = residual_td(problem, &y)?.blocks;
    let mut trace = TdTrace::default();
    let mut res = linalg::norm_inf(&f);
    trace.rows.push(row(problem, 0, 0.0, res, &y));
    if res < cfg.tol {
        return Ok(TdSolveReport { state: y, trace, converged: true, iterations: 0, residual_norm: res });
    }
    for it in 1..=cfg.max_iter {
        let jac = jacobian_td(problem, &y)?;
        let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        let delta = linalg::solve_sparse_with_fallback(&jac, &rhs, cfg.tikhonov)?;
        let f_norm = linalg::norm2(&f);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mut yt = y.clone();
            for (a, d) in yt.y.iter_mut().zip(&delta) {
                *a += t * d;
            }
            if yt.y[..nm].iter().all(|&v| v > 0.0) {
                if let Ok(ft) = residual_td(problem, &yt) {
                    if linalg::norm2(&ft.blocks) <= (1.0 - 1e-4 * t) * f_norm {
                        y = yt;
                        f = ft.blocks;
                        accepted = true;
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        if !accepted {
            log::debug!("time-dependent newton line search stalled at iteration {it}");
            return Ok(TdSolveReport { state: y, trace, converged: false, iterations: it, residual_norm: res });
        }
        res = linalg::norm_inf(&f);
        if !res.is_finite() {
            return Err(MfgError::NonFinite(format!("newton residual at iteration {it}")));
        }
        trace.rows.push(row(problem, it, t, res, &y));
        log::trace!("td newton {it}: t={t} res={res:e}");
        if res < cfg.tol {
            return Ok(TdSolveReport { state: y, trace, converged: true, iterations: it, residual_norm: res });
        }
    }
    Ok(TdSolveReport {
        state: y,
        trace,
        converged: false,
        iterations: cfg.max_iter,
        residual_norm: res,
    })
}
