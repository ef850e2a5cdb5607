//! Equilibrium constraints F(z, θ) = 0, 𝖠z = 𝖻 with θ = V_h.

use crate::error::{check_len, MfgError, Result};
use crate::linalg::{self, CsrMatrix, SparseLu, Triplets};
use crate::models::MfgProblem;
use crate::stationary::{self, InnerConfig, StationarySolver, StationaryState};
use crate::timedep::{self, SpaceTimeState, TdFlowConfig, TdNewtonConfig};

#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub z: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

/// A factored linearization at (z*, θ), shared by sensitivity and adjoint
/// solves. The square matrix acts on w = (z, auxiliary multipliers).
pub struct Linearized {
    lu: SparseLu,
    state_len: usize,
    /// ∂E/∂θ on the extended rows.
    theta_map: CsrMatrix,
}

impl Linearized {
    pub fn new(matrix: &Triplets, state_len: usize, theta_map: CsrMatrix, tikhonov: f64) -> Result<Self> {
        let csr = matrix.to_csr();
        let lu = match SparseLu::new(&csr) {
            Ok(lu) => lu,
            Err(e) => {
                log::debug!("linearization factorization failed ({e}); retrying with shift {tikhonov:e}");
                let mut t = matrix.clone();
                for i in 0..t.nrows {
                    t.push(i, i, tikhonov);
                }
                SparseLu::new(&t.to_csr())?
            }
        };
        Ok(Self { lu, state_len, theta_map })
    }

    pub fn state_len(&self) -> usize {
        self.state_len
    }

    /// δz = dz*/dθ · p.
    pub fn sensitivity(&self, p: &[f64]) -> Result<Vec<f64>> {
        let rhs: Vec<f64> = self.theta_map.matvec(p).iter().map(|v| -v).collect();
        let w = self.lu.solve(&rhs)?;
        Ok(w[..self.state_len].to_vec())
    }

    /// (dz*/dθ)ᵀ x.
    pub fn sensitivity_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(x, self.state_len)?;
        let mut rhs = vec![0.0; self.lu.dim()];
        rhs[..self.state_len].copy_from_slice(x);
        let psi = self.lu.solve_transpose(&rhs)?;
        Ok(self.theta_map.matvec_transpose(&psi).iter().map(|v| -v).collect())
    }

    /// ψ with (∂E/∂w)ᵀψ = -(x, 0); the gradient contribution is (∂E/∂θ)ᵀψ.
    pub fn adjoint(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(x, self.state_len)?;
        let mut rhs = vec![0.0; self.lu.dim()];
        for (r, v) in rhs.iter_mut().zip(x) {
            *r = -v;
        }
        self.lu.solve_transpose(&rhs)
    }

    pub fn theta_transpose(&self, psi: &[f64]) -> Vec<f64> {
        self.theta_map.matvec_transpose(psi)
    }
}

pub trait EquilibriumConstraint: Send + Sync {
    fn state_len(&self) -> usize;
    fn param_len(&self) -> usize;
    /// Rows of 𝖠 and 𝖻 (empty when q = 0).
    fn constraints(&self) -> (Vec<Vec<f64>>, Vec<f64>);
    fn residual(&self, z: &[f64], theta: &[f64]) -> Result<Vec<f64>>;
    fn jac_z(&self, z: &[f64], theta: &[f64], v: &[f64]) -> Result<Vec<f64>>;
    fn jac_z_t(&self, z: &[f64], theta: &[f64], w: &[f64]) -> Result<Vec<f64>>;
    fn jac_theta(&self, z: &[f64], theta: &[f64], p: &[f64]) -> Result<Vec<f64>>;
    fn jac_theta_t(&self, z: &[f64], theta: &[f64], w: &[f64]) -> Result<Vec<f64>>;
    /// z*(θ), optionally warm-started.
    fn solve(&self, theta: &[f64], warm: Option<&[f64]>) -> Result<InnerSolution>;
    fn linearize(&self, z: &[f64], theta: &[f64]) -> Result<Linearized>;
    /// Ergodic constant at z, for stationary constraints.
    fn lambda(&self, _z: &[f64], _theta: &[f64]) -> Result<Option<f64>> {
        Ok(None)
    }
}

/// z = (M, U); F = (R^m, R^u) with λ eliminated; 𝖠z = 𝖻 fixes mass and gauge.
#[derive(Debug, Clone)]
pub struct StationaryConstraint {
    pub problem: MfgProblem,
    pub solver: StationarySolver,
    pub inner: InnerConfig,
    pub tikhonov: f64,
}

impl StationaryConstraint {
    pub fn new(problem: MfgProblem, solver: StationarySolver, inner: InnerConfig) -> Self {
        Self {
            problem,
            solver,
            inner,
            tikhonov: 1e-10,
        }
    }

    fn with_theta(&self, theta: &[f64]) -> Result<MfgProblem> {
        self.problem.with_cost(theta.to_vec())
    }

    fn split<'a>(&self, z: &'a [f64]) -> Result<(&'a [f64], &'a [f64])> {
        check_len(z, self.state_len())?;
        Ok(z.split_at(self.problem.grid.len()))
    }

    /// Linearization blocks plus ∇λ and the current λ.
    fn blocks(&self, z: &[f64], theta: &[f64]) -> Result<(stationary::Linearization, Vec<f64>, f64, CsrMatrix, CsrMatrix, CsrMatrix, CsrMatrix)> {
        let p = self.with_theta(theta)?;
        let (m, u) = self.split(z)?;
        let lin = stationary::linearize(&p, m, u)?;
        let g = &p.grid;
        let n = g.len();
        let hd = g.cell_volume();
        let mass = g.integral(m);
        let mc = g.inner(m, &lin.core)?;
        let lambda = -mc / mass;
        let cm = lin.core_m.to_csr();
        let cu = lin.core_u.to_csr();
        let hm: Vec<f64> = m.iter().map(|v| hd * v).collect();
        let tm = cm.matvec_transpose(&hm);
        let tu = cu.matvec_transpose(&hm);
        let mut grad = vec![0.0; 2 * n];
        for j in 0..n {
            grad[j] = -(hd * lin.core[j] + tm[j]) / mass + mc * hd / (mass * mass);
            grad[n + j] = -tu[j] / mass;
        }
        let fm = lin.fp_m.to_csr();
        let fu = lin.fp_u.to_csr();
        Ok((lin, grad, lambda, cm, cu, fm, fu))
    }
}

impl EquilibriumConstraint for StationaryConstraint {
    fn state_len(&self) -> usize {
        2 * self.problem.grid.len()
    }

    fn param_len(&self) -> usize {
        self.problem.grid.len()
    }

    fn constraints(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n = self.problem.grid.len();
        let hd = self.problem.grid.cell_volume();
        let mut a0 = vec![0.0; 2 * n];
        let mut a1 = vec![0.0; 2 * n];
        for i in 0..n {
            a0[i] = hd;
            a1[n + i] = hd;
        }
        (vec![a0, a1], vec![1.0, 0.0])
    }

    fn residual(&self, z: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        let p = self.with_theta(theta)?;
        let (m, u) = self.split(z)?;
        let r = stationary::stationary_residual(&p, m, u)?;
        let mut out = r.hjb;
        out.extend(r.fp);
        Ok(out)
    }

    fn jac_z(&self, z: &[f64], theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_len(v, self.state_len())?;
        let n = self.problem.grid.len();
        let (_, grad, _, cm, cu, fm, fu) = self.blocks(z, theta)?;
        let (vm, vu) = v.split_at(n);
        let dl = linalg::dot(&grad, v);
        let a = cm.matvec(vm);
        let b = cu.matvec(vu);
        let c = fm.matvec(vm);
        let d = fu.matvec(vu);
        let mut out: Vec<f64> = (0..n).map(|i| a[i] + b[i] + dl).collect();
        out.extend((0..n).map(|i| c[i] + d[i]));
        Ok(out)
    }

    fn jac_z_t(&self, z: &[f64], theta: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        check_len(w, self.state_len())?;
        let n = self.problem.grid.len();
        let (_, grad, _, cm, cu, fm, fu) = self.blocks(z, theta)?;
        let (wm, wu) = w.split_at(n);
        let s: f64 = linalg::pairwise_sum(wm);
        let a = cm.matvec_transpose(wm);
        let b = fm.matvec_transpose(wu);
        let c = cu.matvec_transpose(wm);
        let d = fu.matvec_transpose(wu);
        let mut out: Vec<f64> = (0..n).map(|i| a[i] + b[i] + grad[i] * s).collect();
        out.extend((0..n).map(|i| c[i] + d[i] + grad[n + i] * s));
        Ok(out)
    }

    fn jac_theta(&self, z: &[f64], _theta: &[f64], p: &[f64]) -> Result<Vec<f64>> {
        check_len(p, self.param_len())?;
        let (m, _) = self.split(z)?;
        let g = &self.problem.grid;
        let sigma = self.problem.sign.sigma();
        let shift = g.inner(m, p)? / g.integral(m);
        let mut out: Vec<f64> = p.iter().map(|v| sigma * (v - shift)).collect();
        out.extend(vec![0.0; g.len()]);
        Ok(out)
    }

    fn jac_theta_t(&self, z: &[f64], _theta: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        check_len(w, self.state_len())?;
        let (m, _) = self.split(z)?;
        let g = &self.problem.grid;
        let sigma = self.problem.sign.sigma();
        let n = g.len();
        let s = linalg::pairwise_sum(&w[..n]);
        let scale = g.cell_volume() / g.integral(m);
        Ok((0..n).map(|i| sigma * (w[i] - scale * m[i] * s)).collect())
    }

    fn solve(&self, theta: &[f64], warm: Option<&[f64]>) -> Result<InnerSolution> {
        let p = self.with_theta(theta)?;
        let n = p.grid.len();
        let attempt = |init: StationaryState| -> Result<stationary::SolveReport> { stationary::solve(&p, self.solver, &init, self.inner) };
        let mut report = None;
        if let Some(w) = warm {
            check_len(w, 2 * n)?;
            match StationaryState::from_fields(&p, w[..n].to_vec(), w[n..].to_vec()).and_then(&attempt) {
                Ok(r) if r.converged => report = Some(r),
                Ok(r) => log::debug!("warm-started inner solve stopped at residual {:e}; restarting cold", r.residual_norm),
                Err(e) => log::debug!("warm-started inner solve failed ({e}); restarting cold"),
            }
        }
        let r = match report {
            Some(r) => r,
            None => attempt(StationaryState::uniform(&p)?)?,
        };
        if !r.converged {
            return Err(MfgError::InnerNotConverged {
                residual: r.residual_norm,
                iterations: r.iterations,
            });
        }
        let mut z = r.state.m;
        z.extend(r.state.u);
        Ok(InnerSolution {
            z,
            iterations: r.iterations,
            residual_norm: r.residual_norm,
        })
    }

    /// Bordered system in w = (M, U, λ, μ):
    /// core + λ1 = 0, R^u + μ1 = 0, ⟨M,1⟩_h = 1, ⟨U,1⟩_h = 0.
    fn linearize(&self, z: &[f64], theta: &[f64]) -> Result<Linearized> {
        let p = self.with_theta(theta)?;
        let (m, u) = self.split(z)?;
        let lin = stationary::linearize(&p, m, u)?;
        let n = p.grid.len();
        let hd = p.grid.cell_volume();
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
        let mut th = Triplets::new(2 * n + 2, n);
        let sigma = p.sign.sigma();
        for i in 0..n {
            th.push(i, i, sigma);
        }
        Linearized::new(&t, 2 * n, th.to_csr(), self.tikhonov)
    }

    fn lambda(&self, z: &[f64], theta: &[f64]) -> Result<Option<f64>> {
        let p = self.with_theta(theta)?;
        let (m, u) = self.split(z)?;
        Ok(Some(stationary::lambda_eliminate(&p, m, u)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeSolver {
    Hrf,
    Newton,
}

/// z = Y (interior slices); q = 0.
#[derive(Debug, Clone)]
pub struct TimeDependentConstraint {
    pub problem: MfgProblem,
    pub solver: TimeSolver,
    pub flow: TdFlowConfig,
    pub newton: TdNewtonConfig,
    pub tikhonov: f64,
}

impl TimeDependentConstraint {
    pub fn new(problem: MfgProblem, solver: TimeSolver, tol: f64, max_iter: usize) -> Result<Self> {
        problem.time_data()?;
        Ok(Self {
            problem,
            solver,
            flow: TdFlowConfig {
                tol,
                max_steps: max_iter,
                ..TdFlowConfig::default()
            },
            newton: TdNewtonConfig {
                tol,
                max_iter,
                ..TdNewtonConfig::default()
            },
            tikhonov: 1e-10,
        })
    }

    fn state(&self, p: &MfgProblem, z: &[f64]) -> Result<SpaceTimeState> {
        SpaceTimeState::from_vec(p, z.to_vec())
    }

    fn slices(&self) -> usize {
        self.problem.time.as_ref().map_or(0, |t| t.slices)
    }
}

impl EquilibriumConstraint for TimeDependentConstraint {
    fn state_len(&self) -> usize {
        2 * self.slices() * self.problem.grid.len()
    }

    fn param_len(&self) -> usize {
        self.problem.grid.len()
    }

    fn constraints(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        (Vec::new(), Vec::new())
    }

    fn residual(&self, z: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        let p = self.problem.with_cost(theta.to_vec())?;
        Ok(timedep::residual_td(&p, &self.state(&p, z)?)?.blocks)
    }

    fn jac_z(&self, z: &[f64], theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_len(v, self.state_len())?;
        let p = self.problem.with_cost(theta.to_vec())?;
        Ok(timedep::jacobian_td(&p, &self.state(&p, z)?)?.to_csr().matvec(v))
    }

    fn jac_z_t(&self, z: &[f64], theta: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        check_len(w, self.state_len())?;
        let p = self.problem.with_cost(theta.to_vec())?;
        Ok(timedep::jacobian_td(&p, &self.state(&p, z)?)?.to_csr().matvec_transpose(w))
    }

    fn jac_theta(&self, _z: &[f64], _theta: &[f64], p: &[f64]) -> Result<Vec<f64>> {
        check_len(p, self.param_len())?;
        let sigma = self.problem.sign.sigma();
        let mut out = Vec::with_capacity(self.state_len());
        for _ in 0..self.slices() {
            out.extend(p.iter().map(|v| sigma * v));
        }
        out.extend(vec![0.0; self.state_len() / 2]);
        Ok(out)
    }

    fn jac_theta_t(&self, _z: &[f64], _theta: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        check_len(w, self.state_len())?;
        let n = self.problem.grid.len();
        let sigma = self.problem.sign.sigma();
        let mut out = vec![0.0; n];
        for k in 0..self.slices() {
            for i in 0..n {
                out[i] += sigma * w[k * n + i];
            }
        }
        Ok(out)
    }

    fn solve(&self, theta: &[f64], warm: Option<&[f64]>) -> Result<InnerSolution> {
        let p = self.problem.with_cost(theta.to_vec())?;
        let run = |init: &SpaceTimeState| -> Result<timedep::TdSolveReport> {
            match self.solver {
                TimeSolver::Hrf => timedep::hrf_timedep_solve(&p, init, &self.flow, None),
                TimeSolver::Newton => timedep::newton_timedep_solve(&p, init, &self.newton),
            }
        };
        let mut out = None;
        if let Some(w) = warm {
            match self.state(&p, w).and_then(|s| run(&s)) {
                Ok(r) if r.converged => out = Some(r),
                Ok(r) => log::debug!("warm-started time-dependent solve stopped at {:e}; restarting cold", r.residual_norm),
                Err(e) => log::debug!("warm-started time-dependent solve failed ({e}); restarting cold"),
            }
        }
        let r = match out {
            Some(r) => r,
            None => run(&SpaceTimeState::uniform(&p)?)?,
        };
        if !r.converged {
            return Err(MfgError::InnerNotConverged {
                residual: r.residual_norm,
                iterations: r.iterations,
            });
        }
        Ok(InnerSolution {
            z: r.state.y,
            iterations: r.iterations,
            residual_norm: r.residual_norm,
        })
    }

    fn linearize(&self, z: &[f64], theta: &[f64]) -> Result<Linearized> {
        let p = self.problem.with_cost(theta.to_vec())?;
        let jac = timedep::jacobian_td(&p, &self.state(&p, z)?)?;
        let n = p.grid.len();
        let dim = self.state_len();
        let sigma = p.sign.sigma();
        let mut th = Triplets::new(dim, n);
        for k in 0..self.slices() {
            for i in 0..n {
                th.push(k * n + i, i, sigma);
            }
        }
        Linearized::new(&jac, dim, th.to_csr(), self.tikhonov)
    }
}
