//! Reduced-space inversion for θ = V_h: the objective
//!   (α/2)‖Jθ‖² + (β/2)‖Wz*(θ) - z_obs‖² + (γ/2)‖Gθ - θ_obs‖²
//! with z*(θ) the equilibrium of an [`EquilibriumConstraint`].

mod constraints;
mod linear_map;
mod trace;

use std::time::Instant;

use faer::Mat;
use serde::{Deserialize, Serialize};

pub use constraints::{EquilibriumConstraint, InnerSolution, Linearized, StationaryConstraint, TimeDependentConstraint, TimeSolver};
pub use linear_map::{LinearMap, MapRow};
pub use trace::{OuterTrace, OuterTraceRow};

use crate::error::{check_len, MfgError, Result};
use crate::linalg::{self, CgOutcome, DenseCholesky};

pub struct ReducedObjective {
    /// Observation map on z.
    pub w: LinearMap,
    pub z_obs: Vec<f64>,
    /// Observation map on θ.
    pub g: LinearMap,
    pub theta_obs: Vec<f64>,
    /// Regularizer factor J (p × p), JᵀJ = K_V⁻¹.
    pub j: Mat<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl ReducedObjective {
    fn check(&self, state_len: usize, param_len: usize) -> Result<()> {
        if self.w.ncols() != state_len || self.g.ncols() != param_len || self.j.ncols() != param_len {
            return Err(MfgError::InvalidInput("observation maps do not match the constraint dimensions".into()));
        }
        check_len(&self.z_obs, self.w.nrows())?;
        check_len(&self.theta_obs, self.g.nrows())?;
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0) {
                return Err(MfgError::InvalidInput(format!("{name} must be nonnegative")));
            }
        }
        Ok(())
    }

    fn jtheta(&self, theta: &[f64]) -> Vec<f64> {
        linalg::mat_vec(&self.j, theta)
    }

    /// The three misfit pieces (Jθ, Wz - z_obs, Gθ - θ_obs).
    pub fn pieces(&self, z: &[f64], theta: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let jt = self.jtheta(theta);
        let wz = linalg::sub(&self.w.apply(z)?, &self.z_obs);
        let gt = linalg::sub(&self.g.apply(theta)?, &self.theta_obs);
        Ok((jt, wz, gt))
    }

    pub fn value(&self, z: &[f64], theta: &[f64]) -> Result<f64> {
        let (a, b, c) = self.pieces(z, theta)?;
        Ok(0.5 * (self.alpha * linalg::dot(&a, &a) + self.beta * linalg::dot(&b, &b) + self.gamma * linalg::dot(&c, &c)))
    }

    /// r(θ) = (√α Jθ, √β(Wz - z_obs), √γ(Gθ - θ_obs)); J(θ) = ½‖r‖².
    pub fn residual_vector(&self, z: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        let (a, b, c) = self.pieces(z, theta)?;
        let mut r: Vec<f64> = a.iter().map(|v| self.alpha.sqrt() * v).collect();
        r.extend(b.iter().map(|v| self.beta.sqrt() * v));
        r.extend(c.iter().map(|v| self.gamma.sqrt() * v));
        Ok(r)
    }

    /// γGᵀG + αJᵀJ, dense.
    pub fn parametric_normal_matrix(&self) -> Mat<f64> {
        let gg = self.g.gram();
        let jj = self.j.transpose() * &self.j;
        let n = self.j.ncols();
        Mat::from_fn(n, n, |i, k| self.gamma * gg[(i, k)] + self.alpha * jj[(i, k)])
    }
}

struct Cached {
    theta: Vec<f64>,
    z: Vec<f64>,
    objective: f64,
    inner_iters: usize,
    lin: Option<Linearized>,
}

/// Objective evaluations with z*(θ) cached and reused as the next warm start.
pub struct InverseSession<'a> {
    pub constraint: &'a dyn EquilibriumConstraint,
    pub objective: &'a ReducedObjective,
    cache: Option<Cached>,
    precond: Option<DenseCholesky>,
}

impl<'a> InverseSession<'a> {
    pub fn new(constraint: &'a dyn EquilibriumConstraint, objective: &'a ReducedObjective) -> Result<Self> {
        objective.check(constraint.state_len(), constraint.param_len())?;
        Ok(Self {
            constraint,
            objective,
            cache: None,
            precond: None,
        })
    }

    fn ensure(&mut self, theta: &[f64]) -> Result<&mut Cached> {
        check_len(theta, self.constraint.param_len())?;
        let hit = self.cache.as_ref().is_some_and(|c| c.theta == theta);
        if !hit {
            let warm = self.cache.as_ref().map(|c| c.z.clone());
            let sol = self.constraint.solve(theta, warm.as_deref())?;
            let objective = self.objective.value(&sol.z, theta)?;
            self.cache = Some(Cached {
                theta: theta.to_vec(),
                z: sol.z,
                objective,
                inner_iters: sol.iterations,
                lin: None,
            });
        }
        Ok(self.cache.as_mut().expect("cache filled"))
    }

    fn ensure_linearized(&mut self, theta: &[f64]) -> Result<&Cached> {
        let constraint = self.constraint;
        let c = self.ensure(theta)?;
        if c.lin.is_none() {
            c.lin = Some(constraint.linearize(&c.z, &c.theta)?);
        }
        Ok(self.cache.as_ref().expect("cache filled"))
    }

    pub fn evaluate(&mut self, theta: &[f64]) -> Result<f64> {
        Ok(self.ensure(theta)?.objective)
    }

    /// z*(θ) of the most recent evaluation at θ.
    pub fn state(&mut self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(self.ensure(theta)?.z.clone())
    }

    pub fn inner_iterations(&mut self, theta: &[f64]) -> Result<usize> {
        Ok(self.ensure(theta)?.inner_iters)
    }

    /// ∇J(θ) = (∂F/∂θ)ᵀψ + γGᵀ(Gθ - θ_obs) + αJᵀJθ.
    pub fn gradient(&mut self, theta: &[f64]) -> Result<Vec<f64>> {
        let obj = self.objective;
        let mut grad = self.parametric_gradient(theta)?;
        if obj.beta != 0.0 && obj.w.nrows() > 0 {
            let c = self.ensure_linearized(theta)?;
            let wz = linalg::sub(&obj.w.apply(&c.z)?, &obj.z_obs);
            let rhs: Vec<f64> = obj.w.apply_transpose(&wz)?.iter().map(|v| obj.beta * v).collect();
            let lin = c.lin.as_ref().expect("linearized");
            let psi = lin.adjoint(&rhs)?;
            linalg::axpy(1.0, &lin.theta_transpose(&psi), &mut grad);
        }
        Ok(grad)
    }

    fn parametric_gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let obj = self.objective;
        let jt = obj.jtheta(theta);
        let mut grad: Vec<f64> = linalg::mat_t_vec(&obj.j, &jt).iter().map(|v| obj.alpha * v).collect();
        let gt = linalg::sub(&obj.g.apply(theta)?, &obj.theta_obs);
        linalg::axpy(obj.gamma, &obj.g.apply_transpose(&gt)?, &mut grad);
        Ok(grad)
    }

    fn preconditioner(&mut self) -> Result<&DenseCholesky> {
        if self.precond.is_none() {
            let mut a = self.objective.parametric_normal_matrix();
            let n = a.nrows();
            let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
            for i in 0..n {
                a[(i, i)] += 1e-12 * scale;
            }
            self.precond = Some(DenseCholesky::new(&a)?);
        }
        Ok(self.precond.as_ref().expect("preconditioner"))
    }

    /// Solve (J_rᵀJ_r + μI)p = -J_rᵀr by preconditioned CG.
    pub fn gn_step(&mut self, theta: &[f64], cfg: &GnConfig) -> Result<GnStep> {
        let grad = self.gradient(theta)?;
        let obj = self.objective;
        self.preconditioner()?;
        self.ensure_linearized(theta)?;
        let c = self.cache.as_ref().expect("cache");
        let lin = c.lin.as_ref().expect("linearized");
        let pc = self.precond.as_ref().expect("preconditioner");
        let jj = obj.j.transpose() * &obj.j;
        let normal = |p: &[f64]| -> Result<Vec<f64>> {
            let mut out: Vec<f64> = linalg::mat_vec(&jj, p).iter().map(|v| obj.alpha * v).collect();
            let gp = obj.g.apply_linear(p)?;
            linalg::axpy(obj.gamma, &obj.g.apply_transpose(&gp)?, &mut out);
            if obj.beta != 0.0 && obj.w.nrows() > 0 {
                let dz = lin.sensitivity(p)?;
                let wdz = obj.w.apply_linear(&dz)?;
                let back = lin.sensitivity_transpose(&obj.w.apply_transpose(&wdz)?)?;
                linalg::axpy(obj.beta, &back, &mut out);
            }
            if cfg.damping > 0.0 {
                linalg::axpy(cfg.damping, p, &mut out);
            }
            Ok(out)
        };
        let rhs: Vec<f64> = grad.iter().map(|v| -v).collect();
        if linalg::norm2(&rhs) == 0.0 {
            return Ok(GnStep {
                p: vec![0.0; rhs.len()],
                cg: CgOutcome {
                    iterations: 0,
                    relative_residual: 0.0,
                    converged: true,
                },
                normal_residual: 0.0,
            });
        }
        let (p, cg) = linalg::pcg(&normal, |r| pc.solve(r), &rhs, cfg.cg_tol, cfg.cg_max_iter)?;
        let ap = normal(&p)?;
        let normal_residual = linalg::norm2(&linalg::sub(&ap, &rhs)) / linalg::norm2(&rhs);
        if !cg.converged {
            log::debug!("gauss-newton CG stopped after {} iterations at relative residual {:e}", cg.iterations, cg.relative_residual);
        }
        Ok(GnStep { p, cg, normal_residual })
    }
}

#[derive(Debug, Clone)]
pub struct GnStep {
    pub p: Vec<f64>,
    pub cg: CgOutcome,
    /// ‖J_rᵀ(r + J_r p)‖ / ‖J_rᵀr‖ at the returned p.
    pub normal_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnConfig {
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    /// Levenberg damping μ.
    pub damping: f64,
}

impl Default for GnConfig {
    fn default() -> Self {
        Self {
            cg_tol: 1e-8,
            cg_max_iter: 200,
            damping: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterMethod {
    Gd,
    Gn,
}

impl std::str::FromStr for OuterMethod {
    type Err = MfgError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gd" => Ok(Self::Gd),
            "gn" => Ok(Self::Gn),
            other => Err(MfgError::InvalidInput(format!("unknown outer method '{other}'"))),
        }
    }
}

impl std::fmt::Display for OuterMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gd => "gd",
            Self::Gn => "gn",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterConfig {
    pub max_iter: usize,
    /// Stop when |J(θ^{k+1}) - J(θ^k)| falls below this.
    pub obj_tol: f64,
    pub armijo_c: f64,
    pub shrink: f64,
    pub initial_step: f64,
    pub max_backtracks: usize,
    pub gn: GnConfig,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            obj_tol: 1e-6,
            armijo_c: 1e-4,
            shrink: 0.5,
            initial_step: 1.0,
            max_backtracks: 60,
            gn: GnConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OuterResult {
    pub theta: Vec<f64>,
    pub z: Vec<f64>,
    pub lambda: Option<f64>,
    pub trace: OuterTrace,
    pub converged: bool,
    pub iterations: usize,
}

fn abort(iteration: usize, trace: &OuterTrace, e: MfgError) -> MfgError {
    MfgError::OuterAborted {
        iteration,
        trace: Box::new(trace.clone()),
        source: Box::new(e),
    }
}

/// Try θ + t·d, shrinking t until `accept(J_new)` or the budget runs out.
/// Inner failures at trial points count as rejections.
fn backtrack(session: &mut InverseSession, theta: &[f64], d: &[f64], cfg: &OuterConfig, accept: impl Fn(f64, f64) -> bool) -> Option<(Vec<f64>, f64, f64)> {
    let mut t = cfg.initial_step;
    for _ in 0..=cfg.max_backtracks {
        let trial: Vec<f64> = theta.iter().zip(d).map(|(a, b)| a + t * b).collect();
        match session.evaluate(&trial) {
            Ok(j) if j.is_finite() && accept(j, t) => return Some((trial, j, t)),
            Ok(_) => {}
            Err(e) => log::debug!("trial step t={t:e} rejected: {e}"),
        }
        t *= cfg.shrink;
    }
    None
}

pub fn run_outer(constraint: &dyn EquilibriumConstraint, objective: &ReducedObjective, method: OuterMethod, theta_init: &[f64], cfg: &OuterConfig) -> Result<OuterResult> {
    let start = Instant::now();
    let mut session = InverseSession::new(constraint, objective)?;
    let mut trace = OuterTrace::default();
    let mut theta = theta_init.to_vec();
    let mut j = session.evaluate(&theta).map_err(|e| abort(0, &trace, e))?;
    let inner0 = session.inner_iterations(&theta)?;
    let mut converged = false;
    let mut iterations = 0;
    trace.push(OuterTraceRow {
        iter: 0,
        objective: j,
        grad_or_step_norm: f64::NAN,
        inner_iters: inner0,
        seconds: start.elapsed().as_secs_f64(),
    });
    for it in 1..=cfg.max_iter {
        let (next, j_new, norm) = match method {
            OuterMethod::Gd => {
                let g = session.gradient(&theta).map_err(|e| abort(it, &trace, e))?;
                let gg = linalg::dot(&g, &g);
                if gg == 0.0 {
                    converged = true;
                    break;
                }
                let d: Vec<f64> = g.iter().map(|v| -v).collect();
                let c = cfg.armijo_c;
                let jc = j;
                match backtrack(&mut session, &theta, &d, cfg, |jn, t| jn <= jc - c * t * gg) {
                    Some((th, jn, _)) => (th, jn, gg.sqrt()),
                    None => {
                        log::debug!("armijo line search failed at outer iteration {it}");
                        break;
                    }
                }
            }
            OuterMethod::Gn => {
                let step = session.gn_step(&theta, &cfg.gn).map_err(|e| abort(it, &trace, e))?;
                let pn = linalg::norm2(&step.p);
                if pn == 0.0 {
                    converged = true;
                    break;
                }
                let jc = j;
                match backtrack(&mut session, &theta, &step.p, &OuterConfig { initial_step: 1.0, ..*cfg }, |jn, _| jn <= jc) {
                    Some((th, jn, t)) => (th, jn, t * pn),
                    None => {
                        log::debug!("gauss-newton step did not decrease the objective at outer iteration {it}");
                        break;
                    }
                }
            }
        };
        iterations = it;
        let dj = (j - j_new).abs();
        theta = next;
        j = j_new;
        trace.push(OuterTraceRow {
            iter: it,
            objective: j,
            grad_or_step_norm: norm,
            inner_iters: session.inner_iterations(&theta)?,
            seconds: start.elapsed().as_secs_f64(),
        });
        log::debug!("{method} {it}: J={j:e} |dJ|={dj:e} norm={norm:e}");
        if dj < cfg.obj_tol {
            converged = true;
            break;
        }
    }
    let z = session.state(&theta)?;
    let lambda = constraint.lambda(&z, &theta)?;
    Ok(OuterResult {
        theta,
        z,
        lambda,
        trace,
        converged,
        iterations,
    })
}
