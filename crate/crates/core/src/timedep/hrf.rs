//! Implicit-Euler integration of the space-time flow. Each step solves,
//! for (Y, ρ₁..ρ_NT),
//!   M_k - M_kⁿ + Δs M_k⊙(r_k - ρ_k) = 0,  ⟨M_k,1⟩_h = 1,
//!   U_{k-1} - U_{k-1}ⁿ + Δs s_k = 0.

use super::{bregman, jacobian_td, recover_value_means, residual_td, SpaceTimeState, TdFlowConfig, TdSolveReport, TdTrace, TdTraceRow};
use crate::error::{MfgError, Result};
use crate::linalg::{self, SparseLu, Triplets};
use crate::models::MfgProblem;

fn step_residual(problem: &MfgProblem, old: &SpaceTimeState, y: &SpaceTimeState, rho: &[f64], ds: f64) -> Result<Vec<f64>> {
    let n = y.n;
    let nt = y.nt;
    let res = residual_td(problem, y)?;
    let nm = nt * n;
    let mut g = vec![0.0; 2 * nm + nt];
    for k in 1..=nt {
        let r = res.r(k);
        let m = y.m_slice(k);
        let mo = old.m_slice(k);
        for i in 0..n {
            g[(k - 1) * n + i] = m[i] - mo[i] + ds * m[i] * (r[i] - rho[k - 1]);
        }
        g[2 * nm + k - 1] = problem.grid.integral(m) - 1.0;
    }
    for i in nm..2 * nm {
        g[i] = y.y[i] - old.y[i] + ds * res.blocks[i];
    }
    Ok(g)
}

fn step_jacobian(problem: &MfgProblem, y: &SpaceTimeState, rho: &[f64], ds: f64) -> Result<Triplets> {
    let n = y.n;
    let nt = y.nt;
    let nm = nt * n;
    let dim = 2 * nm + nt;
    let res = residual_td(problem, y)?;
    let jf = jacobian_td(problem, y)?;
    let hd = problem.grid.cell_volume();
    let mut t = Triplets::new(dim, dim);
    let mut scale = vec![ds; 2 * nm];
    for k in 1..=nt {
        let m = y.m_slice(k);
        let r = res.r(k);
        for i in 0..n {
            let row = (k - 1) * n + i;
            scale[row] = ds * m[i];
            t.push(row, row, 1.0 + ds * (r[i] - rho[k - 1]));
            t.push(row, 2 * nm + k - 1, -ds * m[i]);
            t.push(2 * nm + k - 1, row, hd);
        }
    }
    for i in nm..2 * nm {
        t.push(i, i, 1.0);
    }
    t.push_block_row_scaled(&jf, 0, 0, &scale);
    Ok(t)
}

fn implicit_step(problem: &MfgProblem, old: &SpaceTimeState, rho0: &[f64], ds: f64, cfg: &TdFlowConfig) -> Result<Option<(SpaceTimeState, Vec<f64>)>> {
    let nm = old.nt * old.n;
    let mut y = old.clone();
    let mut rho = rho0.to_vec();
    let step_tol = (1e-3 * cfg.tol * (1.0 + ds)).max(1e-14);
    let mut g = step_residual(problem, old, &y, &rho, ds)?;
    for _ in 0..cfg.newton_iters {
        if linalg::norm_inf(&g) <= step_tol {
            return Ok(Some((y, rho)));
        }
        let jac = step_jacobian(problem, &y, &rho, ds)?;
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        let delta = match SparseLu::new(&jac.to_csr()).and_then(|lu| lu.solve(&rhs)) {
            Ok(d) => d,
            Err(_) => return Ok(None),
        };
        let g_norm = linalg::norm2(&g);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let mut yt = y.clone();
            for (a, d) in yt.y.iter_mut().zip(&delta) {
                *a += t * d;
            }
            if yt.y[..nm].iter().all(|&v| v > 0.0) {
                let rt: Vec<f64> = rho.iter().zip(&delta[2 * nm..]).map(|(a, d)| a + t * d).collect();
                if let Ok(gt) = step_residual(problem, old, &yt, &rt, ds) {
                    if linalg::norm2(&gt) <= (1.0 - 1e-4 * t) * g_norm || linalg::norm_inf(&gt) <= step_tol {
                        y = yt;
                        rho = rt;
                        g = gt;
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
        Ok(Some((y, rho)))
    } else {
        Ok(None)
    }
}

fn weighted_means(problem: &MfgProblem, y: &SpaceTimeState) -> Result<Vec<f64>> {
    let res = residual_td(problem, y)?;
    (1..=y.nt)
        .map(|k| Ok(problem.grid.inner(y.m_slice(k), res.r(k))? / problem.grid.integral(y.m_slice(k))))
        .collect()
}

/// Integrate the flow from `init`. With `reference` set, the trace records
/// the Bregman divergence D_E(Y*, Y(s)) along the flow iterates.
///
/// The stopping test and `res_inf` use ‖F_h‖_∞ after `recover_value_means`,
/// and the returned state is that corrected iterate.
pub fn hrf_timedep_solve(problem: &MfgProblem, init: &SpaceTimeState, cfg: &TdFlowConfig, reference: Option<&SpaceTimeState>) -> Result<TdSolveReport> {
    init.check_feasible(problem)?;
    let mut y = init.clone();
    y.renormalize(problem);
    let corrected_res = |s: &SpaceTimeState| -> Result<(f64, SpaceTimeState)> {
        let c = recover_value_means(problem, s)?;
        Ok((residual_td(problem, &c)?.norm_inf(), c))
    };
    let (mut res, mut corrected) = corrected_res(&y)?;
    let breg = |s: &SpaceTimeState| -> Result<Option<f64>> { reference.map(|r| bregman(problem, r, s)).transpose() };
    let mut trace = TdTrace::default();
    trace.rows.push(TdTraceRow {
        step: 0,
        s: 0.0,
        ds: 0.0,
        res_inf: res,
        min_density: y.min_density(),
        mass_dev: y.max_mass_deviation(problem),
        bregman: breg(&y)?,
    });
    if res < cfg.tol {
        return Ok(TdSolveReport { state: corrected, trace, converged: true, iterations: 0, residual_norm: res });
    }
    let mut best = (res, corrected.clone());
    let mut ds = cfg.ds_init;
    let mut s = 0.0;
    for step in 1..=cfg.max_steps {
        let rho0 = weighted_means(problem, &y)?;
        let (next, _) = loop {
            match implicit_step(problem, &y, &rho0, ds, cfg)? {
                Some(o) => break o,
                None => {
                    ds *= 0.5;
                    if ds < cfg.ds_floor {
                        return Err(MfgError::StepFloor { step, floor: cfg.ds_floor });
                    }
                }
            }
        };
        y = next;
        y.renormalize(problem);
        s += ds;
        (res, corrected) = corrected_res(&y)?;
        if !res.is_finite() {
            return Err(MfgError::NonFinite(format!("residual at flow step {step}")));
        }
        trace.rows.push(TdTraceRow {
            step,
            s,
            ds,
            res_inf: res,
            min_density: y.min_density(),
            mass_dev: y.max_mass_deviation(problem),
            bregman: breg(&y)?,
        });
        log::trace!("td hrf step {step}: ds={ds:e} res={res:e}");
        if res < best.0 {
            best = (res, corrected.clone());
        }
        if res < cfg.tol {
            return Ok(TdSolveReport { state: corrected, trace, converged: true, iterations: step, residual_norm: res });
        }
        ds = (ds * cfg.ds_grow).min(cfg.ds_max);
    }
    Ok(TdSolveReport {
        state: best.1,
        trace,
        converged: false,
        iterations: cfg.max_steps,
        residual_norm: best.0,
    })
}
