//! Problem definitions and the shared discrete operators: Hamiltonian
//! evaluation on a value field, the transport operator B_h and their
//! Jacobian blocks.

pub mod coupling;
pub mod hamiltonian;

use std::sync::Arc;

pub use coupling::Coupling;
pub use hamiltonian::{
    CongestionPower, GodunovQuadratic, HamiltonianKind, NumericalHamiltonian, SmoothedQuadratic,
    StencilHessian,
};

use crate::error::{check_len, MfgError, Result};
use crate::grid::{TorusGrid, UpwindStencil};
use crate::linalg::{self, Triplets};

/// How the spatial cost enters the HJB residual: `νΔU - g + f(M) + σV`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    /// -νΔu + H = f(m) + V + λ  (σ = +1)
    CostOnRight,
    /// -νΔu + H + V = f(m) + λ  (σ = -1)
    CostOnLeft,
}

impl SignConvention {
    pub fn sigma(self) -> f64 {
        match self {
            SignConvention::CostOnRight => 1.0,
            SignConvention::CostOnLeft => -1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TimeData {
    pub horizon: f64,
    pub slices: usize,
    /// Initial density, renormalized to unit mass.
    pub m0: Vec<f64>,
    pub u_terminal: Vec<f64>,
}

impl TimeData {
    pub fn new(grid: &TorusGrid, horizon: f64, slices: usize, m0: Vec<f64>, u_terminal: Vec<f64>) -> Result<Self> {
        check_len(&m0, grid.len())?;
        check_len(&u_terminal, grid.len())?;
        if slices == 0 || horizon <= 0.0 {
            return Err(MfgError::InvalidInput("need positive horizon and slice count".into()));
        }
        if let Some(&v) = m0.iter().find(|&&v| v <= 0.0) {
            return Err(MfgError::NonPositiveDensity {
                min: v,
                node: m0.iter().position(|&w| w == v).unwrap_or(0),
            });
        }
        let mass = grid.integral(&m0);
        let m0 = m0.into_iter().map(|v| v / mass).collect();
        Ok(Self {
            horizon,
            slices,
            m0,
            u_terminal,
        })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.slices as f64
    }
}

#[derive(Debug, Clone)]
pub struct MfgProblem {
    pub grid: TorusGrid,
    pub viscosity: f64,
    pub hamiltonian: Arc<dyn NumericalHamiltonian>,
    pub coupling: Coupling,
    pub cost: Vec<f64>,
    pub sign: SignConvention,
    pub time: Option<TimeData>,
}

impl MfgProblem {
    pub fn stationary(
        grid: TorusGrid,
        viscosity: f64,
        hamiltonian: Arc<dyn NumericalHamiltonian>,
        coupling: Coupling,
        cost: Vec<f64>,
    ) -> Result<Self> {
        check_len(&cost, grid.len())?;
        if viscosity < 0.0 {
            return Err(MfgError::InvalidInput("viscosity must be nonnegative".into()));
        }
        Ok(Self {
            grid,
            viscosity,
            hamiltonian,
            coupling,
            cost,
            sign: SignConvention::CostOnRight,
            time: None,
        })
    }

    pub fn with_time(mut self, time: TimeData) -> Self {
        self.time = Some(time);
        self
    }

    pub fn with_sign(mut self, sign: SignConvention) -> Self {
        self.sign = sign;
        self
    }

    /// Same problem with a different spatial cost.
    pub fn with_cost(&self, cost: Vec<f64>) -> Result<Self> {
        check_len(&cost, self.grid.len())?;
        let mut p = self.clone();
        p.cost = cost;
        Ok(p)
    }

    pub fn time_data(&self) -> Result<&TimeData> {
        self.time
            .as_ref()
            .ok_or_else(|| MfgError::InvalidInput("problem has no time data".into()))
    }
}

/// Hamiltonian values and derivatives at every node of a value field.
#[derive(Debug, Clone)]
pub struct HamiltonianEval {
    pub value: Vec<f64>,
    pub grad: Vec<UpwindStencil>,
    pub hess: Vec<StencilHessian>,
    pub dm: Vec<f64>,
    pub grad_dm: Vec<UpwindStencil>,
}

pub fn eval_hamiltonian(problem: &MfgProblem, u: &[f64], m: &[f64], second_order: bool) -> Result<HamiltonianEval> {
    let grid = &problem.grid;
    check_len(u, grid.len())?;
    check_len(m, grid.len())?;
    let h = &problem.hamiltonian;
    let dim = grid.dim();
    let dens = h.depends_on_density();
    let n = grid.len();
    let mut out = HamiltonianEval {
        value: Vec::with_capacity(n),
        grad: Vec::with_capacity(n),
        hess: Vec::new(),
        dm: Vec::new(),
        grad_dm: Vec::new(),
    };
    for k in 0..n {
        let x = grid.coords(k);
        let q = grid.stencil_at(u, k);
        out.value.push(h.value(x, &q, m[k], dim));
        out.grad.push(h.gradient(x, &q, m[k], dim));
        if second_order {
            out.hess.push(h.hessian(x, &q, m[k], dim));
            if dens {
                out.dm.push(h.density_derivative(x, &q, m[k], dim));
                out.grad_dm.push(h.gradient_density_derivative(x, &q, m[k], dim));
            }
        }
    }
    Ok(out)
}

/// B_h(U, M) given the Hamiltonian gradients at [D_h U].
pub fn transport_from_eval(grid: &TorusGrid, eval: &HamiltonianEval, m: &[f64]) -> Vec<f64> {
    let inv_h = grid.n() as f64;
    let mut b = vec![0.0; grid.len()];
    for j in 0..grid.len() {
        for dir in 0..grid.n_directions() {
            let flux = m[j] * eval.grad[j][dir] * inv_h;
            if flux == 0.0 {
                continue;
            }
            let (p, q) = grid.direction_pair(j, dir);
            b[p] += flux;
            b[q] -= flux;
        }
    }
    b
}

pub fn transport_operator(problem: &MfgProblem, u: &[f64], m: &[f64]) -> Result<Vec<f64>> {
    let eval = eval_hamiltonian(problem, u, m, false)?;
    Ok(transport_from_eval(&problem.grid, &eval, m))
}

/// |⟨B_h(U,M), V⟩_h - ⟨M ∇_q g, [D_h V]⟩_h|
pub fn adjoint_identity_check(problem: &MfgProblem, u: &[f64], m: &[f64], v: &[f64]) -> Result<f64> {
    let grid = &problem.grid;
    check_len(v, grid.len())?;
    let eval = eval_hamiltonian(problem, u, m, false)?;
    let b = transport_from_eval(grid, &eval, m);
    let lhs = grid.inner(&b, v)?;
    let per_node: Vec<f64> = (0..grid.len())
        .map(|k| {
            let q = grid.stencil_at(v, k);
            (0..grid.n_directions()).map(|d| m[k] * eval.grad[k][d] * q[d]).sum::<f64>()
        })
        .collect();
    let rhs = grid.cell_volume() * linalg::pairwise_sum(&per_node);
    Ok((lhs - rhs).abs())
}

/// Row k of the Jacobian of U ↦ g(·, [D_h U]) is Σ_ℓ α_ℓ(k)(e_plus - e_minus)/h.
/// Pushes `scale * ∂g/∂U`.
pub fn push_hamiltonian_du(grid: &TorusGrid, eval: &HamiltonianEval, t: &mut Triplets, row_off: usize, col_off: usize, scale: f64) {
    let c = scale * grid.n() as f64;
    for k in 0..grid.len() {
        for dir in 0..grid.n_directions() {
            let a = eval.grad[k][dir];
            if a == 0.0 {
                continue;
            }
            let (p, q) = grid.direction_pair(k, dir);
            t.push(row_off + k, col_off + p, c * a);
            t.push(row_off + k, col_off + q, -c * a);
        }
    }
}

/// Pushes `scale * ∂g/∂M` (diagonal, congestion only).
pub fn push_hamiltonian_dm(grid: &TorusGrid, eval: &HamiltonianEval, t: &mut Triplets, row_off: usize, col_off: usize, scale: f64) {
    if eval.dm.is_empty() {
        return;
    }
    for k in 0..grid.len() {
        t.push(row_off + k, col_off + k, scale * eval.dm[k]);
    }
}

/// Pushes `scale * ∂B_h/∂M` at (U, M).
pub fn push_transport_dm(grid: &TorusGrid, eval: &HamiltonianEval, m: &[f64], t: &mut Triplets, row_off: usize, col_off: usize, scale: f64) {
    let c = scale * grid.n() as f64;
    let dens = !eval.grad_dm.is_empty();
    for j in 0..grid.len() {
        for dir in 0..grid.n_directions() {
            let mut a = eval.grad[j][dir];
            if dens {
                a += m[j] * eval.grad_dm[j][dir];
            }
            if a == 0.0 {
                continue;
            }
            let (p, q) = grid.direction_pair(j, dir);
            t.push(row_off + p, col_off + j, c * a);
            t.push(row_off + q, col_off + j, -c * a);
        }
    }
}

/// Pushes `scale * ∂B_h/∂U` at (U, M).
pub fn push_transport_du(grid: &TorusGrid, eval: &HamiltonianEval, m: &[f64], t: &mut Triplets, row_off: usize, col_off: usize, scale: f64) {
    let inv_h = grid.n() as f64;
    let c = scale * inv_h * inv_h;
    let nd = grid.n_directions();
    for j in 0..grid.len() {
        if m[j] == 0.0 {
            continue;
        }
        for dir in 0..nd {
            let (p, q) = grid.direction_pair(j, dir);
            for dir2 in 0..nd {
                let hv = eval.hess[j][dir][dir2];
                if hv == 0.0 {
                    continue;
                }
                let w = c * m[j] * hv;
                let (p2, q2) = grid.direction_pair(j, dir2);
                t.push(row_off + p, col_off + p2, w);
                t.push(row_off + p, col_off + q2, -w);
                t.push(row_off + q, col_off + p2, -w);
                t.push(row_off + q, col_off + q2, w);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Sign;

    fn problem(dim: usize, n: usize, h: Arc<dyn NumericalHamiltonian>) -> MfgProblem {
        let g = TorusGrid::new(dim, n).unwrap();
        MfgProblem::stationary(g, 0.1, h, Coupling::Power(1.0), vec![0.0; g.len()]).unwrap()
    }

    fn field(n: usize, seed: f64) -> Vec<f64> {
        (0..n).map(|k| ((k as f64 + 1.0) * seed).sin() + 0.2 * ((k as f64) * seed * 3.1).cos()).collect()
    }

    // B_h straight from the divergence formula, using flat difference operators.
    fn transport_naive(p: &MfgProblem, u: &[f64], m: &[f64]) -> Vec<f64> {
        let g = &p.grid;
        let eval = eval_hamiltonian(p, u, m, false).unwrap();
        let mut b = vec![0.0; g.len()];
        for axis in 0..g.dim() {
            let f_fwd: Vec<f64> = (0..g.len()).map(|k| m[k] * eval.grad[k][2 * axis]).collect();
            let f_bwd: Vec<f64> = (0..g.len()).map(|k| m[k] * eval.grad[k][2 * axis + 1]).collect();
            let d1 = g.diff(&f_fwd, axis, Sign::Backward).unwrap();
            let d2 = g.diff(&f_bwd, axis, Sign::Forward).unwrap();
            for k in 0..g.len() {
                b[k] -= d1[k] + d2[k];
            }
        }
        b
    }

    #[test]
    fn transport_matches_divergence_form() {
        let p = problem(2, 4, Arc::new(GodunovQuadratic::plain()));
        let u = field(16, 0.7);
        let m: Vec<f64> = field(16, 1.3).iter().map(|v| 1.5 + v).collect();
        let a = transport_operator(&p, &u, &m).unwrap();
        let b = transport_naive(&p, &u, &m);
        for k in 0..16 {
            assert!((a[k] - b[k]).abs() < 1e-12);
        }
        let zero = transport_operator(&p, &u, &vec![0.0; 16]).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adjoint_identity_small_defect() {
        for (dim, n, h) in [
            (2, 6, Arc::new(GodunovQuadratic::plain()) as Arc<dyn NumericalHamiltonian>),
            (1, 8, Arc::new(GodunovQuadratic::shifted([2.0, 0.0]))),
        ] {
            let p = problem(dim, n, h);
            let len = p.grid.len();
            let d = adjoint_identity_check(&p, &field(len, 0.3), &field(len, 0.9), &field(len, 2.1)).unwrap();
            assert!(d < 1e-12, "defect {d}");
        }
    }

    fn check_jacobian_blocks(p: &MfgProblem) {
        let g = &p.grid;
        let n = g.len();
        let u = field(n, 0.77);
        let m: Vec<f64> = field(n, 1.1).iter().map(|v| 1.3 + 0.5 * v).collect();
        let v = field(n, 2.3);
        let eval = eval_hamiltonian(p, &u, &m, true).unwrap();
        let d = 1e-7;
        let plus = |x: &[f64]| -> Vec<f64> { x.iter().zip(&v).map(|(a, b)| a + d * b).collect() };
        let minus = |x: &[f64]| -> Vec<f64> { x.iter().zip(&v).map(|(a, b)| a - d * b).collect() };

        let mut t = Triplets::new(n, n);
        push_transport_du(g, &eval, &m, &mut t, 0, 0, 1.0);
        let an = t.to_csr().matvec(&v);
        let bp = transport_operator(p, &plus(&u), &m).unwrap();
        let bm = transport_operator(p, &minus(&u), &m).unwrap();
        for k in 0..n {
            let fd = (bp[k] - bm[k]) / (2.0 * d);
            assert!((fd - an[k]).abs() < 1e-5 * (1.0 + fd.abs()), "dB/dU {k}: {fd} vs {}", an[k]);
        }

        let mut t = Triplets::new(n, n);
        push_transport_dm(g, &eval, &m, &mut t, 0, 0, 1.0);
        let an = t.to_csr().matvec(&v);
        let bp = transport_operator(p, &u, &plus(&m)).unwrap();
        let bm = transport_operator(p, &u, &minus(&m)).unwrap();
        for k in 0..n {
            let fd = (bp[k] - bm[k]) / (2.0 * d);
            assert!((fd - an[k]).abs() < 1e-5 * (1.0 + fd.abs()), "dB/dM");
        }

        let mut t = Triplets::new(n, n);
        push_hamiltonian_du(g, &eval, &mut t, 0, 0, 1.0);
        push_hamiltonian_dm(g, &eval, &mut t, 0, 0, 0.0);
        let an = t.to_csr().matvec(&v);
        let gp = eval_hamiltonian(p, &plus(&u), &m, false).unwrap().value;
        let gm = eval_hamiltonian(p, &minus(&u), &m, false).unwrap().value;
        for k in 0..n {
            let fd = (gp[k] - gm[k]) / (2.0 * d);
            assert!((fd - an[k]).abs() < 1e-5 * (1.0 + fd.abs()), "dg/dU");
        }
    }

    #[test]
    fn jacobian_blocks_match_finite_differences() {
        check_jacobian_blocks(&problem(2, 5, Arc::new(SmoothedQuadratic::new([0.3, -0.2], 0.1))));
        check_jacobian_blocks(&problem(1, 9, Arc::new(SmoothedQuadratic::new([2.0, 0.0], 0.05))));
        check_jacobian_blocks(&problem(2, 5, Arc::new(CongestionPower::new(1.5, 2.0, [1.0, 3.0]))));
    }

    #[test]
    fn time_data_renormalizes_mass() {
        let g = TorusGrid::new(1, 10).unwrap();
        let td = TimeData::new(&g, 1.0, 4, vec![3.0; 10], vec![0.0; 10]).unwrap();
        assert!((g.integral(&td.m0) - 1.0).abs() < 1e-15);
        assert_eq!(td.dt(), 0.25);
    }
}
