//! A fast self-check suite over the discrete operators, solvers and the
//! adjoint gradient. Each check reports a worst-case statistic.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::experiments::{build_constraint, Experiment, ExperimentConfig};
use crate::grid::{Sign, TorusGrid};
use crate::inverse::InverseSession;
use crate::linalg;
use crate::models::{adjoint_identity_check, Coupling, GodunovQuadratic, MfgProblem, NumericalHamiltonian, SmoothedQuadratic, TimeData};
use crate::stationary::{InnerConfig, StationarySolver};
use crate::timedep::{hrf_timedep_solve, monotonicity_gap, SpaceTimeState, TdFlowConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Observed statistic and the threshold it was held to.
    pub detail: String,
}

fn outcome(name: &str, value: f64, threshold: f64, below: bool) -> CheckOutcome {
    let passed = if below { value < threshold } else { value > threshold };
    let rel = if below { "<" } else { ">" };
    CheckOutcome {
        name: name.to_string(),
        passed,
        detail: format!("{value:.3e} (needs {rel} {threshold:.0e})"),
    }
}

fn failed(name: &str, e: crate::MfgError) -> CheckOutcome {
    CheckOutcome {
        name: name.to_string(),
        passed: false,
        detail: format!("error: {e}"),
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn small_problem(dim: usize, n: usize, h: Arc<dyn NumericalHamiltonian>, coupling: Coupling, rng: &mut ChaCha8Rng) -> Result<MfgProblem> {
    let g = TorusGrid::new(dim, n)?;
    let cost = random_vec(rng, g.len(), -1.0, 1.0);
    MfgProblem::stationary(g, 0.1, h, coupling, cost)
}

fn random_density(rng: &mut ChaCha8Rng, g: &TorusGrid) -> Vec<f64> {
    let m = random_vec(rng, g.len(), 0.2, 2.0);
    let mass = g.integral(&m);
    m.into_iter().map(|v| v / mass).collect()
}

fn random_td_state(rng: &mut ChaCha8Rng, p: &MfgProblem) -> Result<SpaceTimeState> {
    let td = p.time_data()?;
    let mut y = Vec::new();
    for _ in 0..td.slices {
        y.extend(random_density(rng, &p.grid));
    }
    y.extend(random_vec(rng, td.slices * p.grid.len(), -1.0, 1.0));
    SpaceTimeState::from_vec(p, y)
}

/// Worst defect of the discrete integration-by-parts identity.
pub fn adjoint_identity(seed: u64, trials: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hams: [Arc<dyn NumericalHamiltonian>; 2] = [Arc::new(GodunovQuadratic::plain()), Arc::new(SmoothedQuadratic::new([0.3, -0.2], 0.05))];
    let mut worst = 0.0_f64;
    for (dim, n) in [(1, 8), (2, 6)] {
        for h in &hams {
            for _ in 0..trials {
                let p = small_problem(dim, n, h.clone(), Coupling::Cubic, &mut rng)?;
                let u = random_vec(&mut rng, p.grid.len(), -1.0, 1.0);
                let m = random_vec(&mut rng, p.grid.len(), 0.1, 2.0);
                let v = random_vec(&mut rng, p.grid.len(), -1.0, 1.0);
                worst = worst.max(adjoint_identity_check(&p, &u, &m, &v)?);
            }
        }
    }
    Ok(worst)
}

/// |⟨D⁺a, b⟩ + ⟨a, D⁻b⟩| over random pairs and both axes.
pub fn summation_by_parts(seed: u64, trials: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = TorusGrid::new(2, 7)?;
    let mut worst = 0.0_f64;
    for _ in 0..trials {
        let a = random_vec(&mut rng, g.len(), -1.0, 1.0);
        let b = random_vec(&mut rng, g.len(), -1.0, 1.0);
        for axis in 0..2 {
            let lhs = g.inner(&g.diff(&a, axis, Sign::Forward)?, &b)?;
            let rhs = g.inner(&a, &g.diff(&b, axis, Sign::Backward)?)?;
            worst = worst.max((lhs + rhs).abs());
        }
    }
    Ok(worst)
}

/// Smallest ⟨F(Y) - F(Ỹ), Y - Ỹ⟩ over random feasible pairs.
pub fn monotonicity(seed: u64, trials: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for coupling in [Coupling::Power(1.0), Coupling::Cubic] {
        let g = TorusGrid::new(1, 6)?;
        let base = MfgProblem::stationary(g, 0.1, Arc::new(GodunovQuadratic::plain()), coupling, g.sample(|x| (6.0 * x[0]).sin()))?;
        let m0 = random_density(&mut rng, &g);
        let ut = random_vec(&mut rng, g.len(), -0.5, 0.5);
        let p = base.with_time(TimeData::new(&g, 1.0, 3, m0, ut)?);
        for _ in 0..trials {
            let a = random_td_state(&mut rng, &p)?;
            let b = random_td_state(&mut rng, &p)?;
            worst = worst.min(monotonicity_gap(&p, &a, &b)?);
        }
    }
    Ok(worst)
}

/// Worst (|mass - 1|, -min density) along an HRF run on a small time-dependent problem.
pub fn flow_feasibility() -> Result<(f64, f64, bool)> {
    let g = TorusGrid::new(1, 12)?;
    let c = Coupling::nonlocal(g, 1.0)?;
    let p = MfgProblem::stationary(g, 0.1, Arc::new(GodunovQuadratic::plain()), c, g.sample(|x| (std::f64::consts::TAU * x[0]).sin()))?
        .with_time(TimeData::new(&g, 1.0, 8, vec![1.0; 12], vec![0.0; 12])?);
    let init = SpaceTimeState::uniform(&p)?;
    let rep = hrf_timedep_solve(&p, &init, &TdFlowConfig::default(), None)?;
    let mass = rep.trace.rows.iter().map(|r| r.mass_dev).fold(0.0, f64::max);
    let min = rep.trace.rows.iter().map(|r| r.min_density).fold(f64::INFINITY, f64::min);
    Ok((mass, min, rep.converged))
}

/// Worst relative error of the adjoint gradient against central differences.
pub fn gradient_vs_fd(seed: u64, directions: usize) -> Result<f64> {
    let mut cfg = ExperimentConfig::for_preset("stationary-1d-effective-hamiltonian");
    cfg.grid.n = Some(20);
    cfg.seed = seed;
    gradient_fd_error(&cfg, StationarySolver::Newton, directions)
}

/// Worst relative gap between ⟨∇J, d⟩ and a central difference (step 1e−5)
/// over random directions d, at θ = ½ V_true.
pub fn gradient_fd_error(cfg: &ExperimentConfig, solver: StationarySolver, directions: usize) -> Result<f64> {
    let mut cfg = cfg.clone();
    // Space-time residuals bottom out near 1e-13.
    let tol = if cfg.resolve()?.is_timedep() { 1e-12 } else { 1e-13 };
    cfg.inner.solvers = Some(vec![solver]);
    cfg.inner.tol = tol;
    let exp = Experiment::prepare(&cfg)?;
    let objective = exp.objective();
    let c = build_constraint(&exp.problem, solver, InnerConfig { tol, max_iter: 200 })?;
    let mut session = InverseSession::new(c.as_ref(), &objective)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let theta: Vec<f64> = exp.reference.theta.iter().map(|v| 0.5 * v).collect();
    let grad = session.gradient(&theta)?;
    let eps = 1e-5;
    let mut worst = 0.0_f64;
    for _ in 0..directions {
        let d = random_vec(&mut rng, theta.len(), -1.0, 1.0);
        let plus: Vec<f64> = theta.iter().zip(&d).map(|(a, b)| a + eps * b).collect();
        let minus: Vec<f64> = theta.iter().zip(&d).map(|(a, b)| a - eps * b).collect();
        let fd = (session.evaluate(&plus)? - session.evaluate(&minus)?) / (2.0 * eps);
        let an = linalg::dot(&grad, &d);
        worst = worst.max((fd - an).abs() / an.abs().max(1e-12));
    }
    Ok(worst)
}

pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    out.push(match adjoint_identity(seed, 25) {
        Ok(v) => outcome("adjoint identity", v, 1e-12, true),
        Err(e) => failed("adjoint identity", e),
    });
    out.push(match summation_by_parts(seed, 50) {
        Ok(v) => outcome("summation by parts", v, 1e-13, true),
        Err(e) => failed("summation by parts", e),
    });
    out.push(match monotonicity(seed, 200) {
        Ok(v) => outcome("strict monotonicity", v, 0.0, false),
        Err(e) => failed("strict monotonicity", e),
    });
    out.push(match flow_feasibility() {
        Ok((mass, min, conv)) => {
            let mut o = outcome("flow feasibility", mass, 1e-12, true);
            o.passed &= min > 0.0 && conv;
            o.detail = format!("mass deviation {mass:.3e}, min density {min:.3e}, converged {conv}");
            o
        }
        Err(e) => failed("flow feasibility", e),
    });
    out.push(match gradient_vs_fd(seed, 3) {
        Ok(v) => outcome("adjoint gradient", v, 1e-5, true),
        Err(e) => failed("adjoint gradient", e),
    });
    out
}
