use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::grid::TorusGrid;
use crate::models::{CongestionPower, Coupling, GodunovQuadratic, MfgProblem, NumericalHamiltonian, SignConvention, TimeData};
use crate::rkhs::{KernelKind, KernelSpec};
use crate::stationary::StationarySolver;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HamiltonianSpec {
    /// ½|p|² with the plain Godunov stencil.
    Quadratic,
    /// ½|P + p|².
    ShiftedQuadratic { shift: [f64; 2] },
    /// |Q + p|^b / (b m^a).
    Congestion { a: f64, b: f64, shift: [f64; 2] },
}

impl HamiltonianSpec {
    pub fn build(&self) -> Arc<dyn NumericalHamiltonian> {
        match *self {
            HamiltonianSpec::Quadratic => Arc::new(GodunovQuadratic::plain()),
            HamiltonianSpec::ShiftedQuadratic { shift } => Arc::new(GodunovQuadratic::shifted(shift)),
            HamiltonianSpec::Congestion { a, b, shift } => Arc::new(CongestionPower::new(a, b, shift)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingSpec {
    Power { exponent: f64 },
    LogScaled { k: f64 },
    Cubic,
    /// m² + b·∇m with b(x, y) = (-sin 2πy, sin 2πx).
    RotationalDrift,
    /// c (I - Δ)⁻² m.
    Nonlocal { c: f64 },
}

impl CouplingSpec {
    pub fn build(&self, grid: &TorusGrid) -> Result<Coupling> {
        Ok(match *self {
            CouplingSpec::Power { exponent } => Coupling::Power(exponent),
            CouplingSpec::LogScaled { k } => Coupling::LogScaled(k),
            CouplingSpec::Cubic => Coupling::Cubic,
            CouplingSpec::RotationalDrift => Coupling::local_drift(grid, |x| [-(2.0 * PI * x[1]).sin(), (2.0 * PI * x[0]).sin()]),
            CouplingSpec::Nonlocal { c } => Coupling::nonlocal(*grid, c)?,
        })
    }
}

/// Closed-form spatial costs used by the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostFormula {
    /// ½(sin πx + sin 4πx)
    HalfSinPiSin4Pi,
    /// 2 sin(2π(x + ¼)) cos(2π(y + ¼))
    ShiftedSinCos,
    /// -(sin 2πx + cos 4πx + sin 2πy)
    NegSinCosSin,
    /// sin 2πx + cos 2πx + sin 4πy
    SinCosSin4Y,
    /// sin 2πx + cos 4πx
    SinCos4X,
    /// cos 2πx cos 2πy
    CosCos,
}

impl CostFormula {
    pub fn eval(&self, p: [f64; 2]) -> f64 {
        let (x, y) = (p[0], p[1]);
        match self {
            CostFormula::HalfSinPiSin4Pi => 0.5 * ((PI * x).sin() + (4.0 * PI * x).sin()),
            CostFormula::ShiftedSinCos => 2.0 * (2.0 * PI * (x + 0.25)).sin() * (2.0 * PI * (y + 0.25)).cos(),
            CostFormula::NegSinCosSin => -((2.0 * PI * x).sin() + (4.0 * PI * x).cos() + (2.0 * PI * y).sin()),
            CostFormula::SinCosSin4Y => (2.0 * PI * x).sin() + (2.0 * PI * x).cos() + (4.0 * PI * y).sin(),
            CostFormula::SinCos4X => (2.0 * PI * x).sin() + (4.0 * PI * x).cos(),
            CostFormula::CosCos => (2.0 * PI * x).cos() * (2.0 * PI * y).cos(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialDensity {
    Uniform,
    /// C exp(-8|x - (½,½)|²)
    CenteredGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalValue {
    Zero,
    NegInitialDensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    pub horizon: f64,
    pub slices: usize,
    pub m0: InitialDensity,
    pub u_terminal: TerminalValue,
}

/// Where observation targets come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Evenly spaced grid nodes (spatial observations only).
    GridEven,
    /// A seeded random subset of grid nodes (space-time nodes with t > 0 for m).
    GridRandom,
    /// Seeded uniform draws from [0,1)^d (and [0,T] in time).
    UniformRandom,
    /// Every grid node at t = 0 and t = T.
    BoundarySlices,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSpec {
    pub count: usize,
    pub placement: Placement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub id: String,
    pub description: String,
    pub dim: usize,
    pub n: usize,
    pub viscosity: f64,
    pub hamiltonian: HamiltonianSpec,
    pub coupling: CouplingSpec,
    pub cost: CostFormula,
    pub time: Option<TimeSpec>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub noise: f64,
    pub m_obs: ObservationSpec,
    pub v_obs: ObservationSpec,
    pub solvers: Vec<StationarySolver>,
    pub kernel_m: KernelSpec,
    pub kernel_v: KernelSpec,
}

fn spatial_kernel() -> KernelSpec {
    KernelSpec::periodic_gaussian(0.2)
}

/// The regularizer kernel carries a large jitter. The curvature of α‖V‖² is
/// up to α/ε, and with small ε plain gradient descent needs thousands of steps.
fn cost_kernel() -> KernelSpec {
    KernelSpec::periodic_gaussian(0.2).with_jitter(1e-1)
}

fn spacetime_kernel(horizon: f64) -> KernelSpec {
    KernelSpec::spacetime(KernelKind::PeriodicGaussian { lengthscale: 0.2 }, 0.2 * horizon)
}

fn obs(count: usize, placement: Placement) -> ObservationSpec {
    ObservationSpec { count, placement }
}

pub fn preset_catalog() -> Vec<Preset> {
    use StationarySolver::*;
    let td1 = TimeSpec {
        horizon: 1.0,
        slices: 40,
        m0: InitialDensity::Uniform,
        u_terminal: TerminalValue::Zero,
    };
    let td2 = TimeSpec {
        horizon: 1.0,
        slices: 25,
        m0: InitialDensity::CenteredGaussian,
        u_terminal: TerminalValue::NegInitialDensity,
    };
    vec![
        Preset {
            id: "stationary-1d-effective-hamiltonian".into(),
            description: "1D first-order ergodic MFG, H = |P + p|²/2 with P = 2, f = (1/k) ln m with k = 100".into(),
            dim: 1,
            n: 100,
            viscosity: 0.0,
            hamiltonian: HamiltonianSpec::ShiftedQuadratic { shift: [2.0, 0.0] },
            coupling: CouplingSpec::LogScaled { k: 100.0 },
            cost: CostFormula::HalfSinPiSin4Pi,
            time: None,
            alpha: 0.002,
            beta: 2.0,
            gamma: 2.0,
            noise: 1e-3,
            m_obs: obs(8, Placement::GridEven),
            v_obs: obs(10, Placement::GridEven),
            solvers: vec![Hrf],
            kernel_m: spatial_kernel(),
            kernel_v: cost_kernel(),
        },
        Preset {
            id: "stationary-2d-congestion".into(),
            description: "2D first-order ergodic MFG with congestion, H = |Q + p|^b/(b m^a), b = 2, a = 1.5, Q = (1,3), f = m³".into(),
            dim: 2,
            n: 40,
            viscosity: 0.0,
            hamiltonian: HamiltonianSpec::Congestion { a: 1.5, b: 2.0, shift: [1.0, 3.0] },
            coupling: CouplingSpec::Cubic,
            cost: CostFormula::ShiftedSinCos,
            time: None,
            alpha: 0.04,
            beta: 2.0,
            gamma: 2.0,
            noise: 1e-3,
            m_obs: obs(128, Placement::UniformRandom),
            v_obs: obs(320, Placement::UniformRandom),
            solvers: vec![Hrf],
            kernel_m: spatial_kernel(),
            kernel_v: cost_kernel(),
        },
        Preset {
            id: "stationary-2d-nonpotential".into(),
            description: "2D second-order ergodic MFG, ν = 0.1, f = m² + b·∇m with b = (-sin 2πy, sin 2πx)".into(),
            dim: 2,
            n: 30,
            viscosity: 0.1,
            hamiltonian: HamiltonianSpec::Quadratic,
            coupling: CouplingSpec::RotationalDrift,
            cost: CostFormula::NegSinCosSin,
            time: None,
            alpha: 0.04,
            beta: 1.0,
            gamma: 1.0,
            noise: 1e-3,
            m_obs: obs(72, Placement::UniformRandom),
            v_obs: obs(180, Placement::UniformRandom),
            solvers: vec![Hrf],
            kernel_m: spatial_kernel(),
            kernel_v: cost_kernel(),
        },
        Preset {
            id: "stationary-2d-nonlocal-solvers".into(),
            description: "2D second-order ergodic MFG, ν = 0.2, f = 50(I - Δ)⁻²m, solved with HRF, Newton and policy iteration".into(),
            dim: 2,
            n: 30,
            viscosity: 0.2,
            hamiltonian: HamiltonianSpec::Quadratic,
            coupling: CouplingSpec::Nonlocal { c: 50.0 },
            cost: CostFormula::SinCosSin4Y,
            time: None,
            alpha: 0.04,
            beta: 2.0,
            gamma: 2.0,
            noise: 1e-3,
            m_obs: obs(72, Placement::UniformRandom),
            v_obs: obs(180, Placement::UniformRandom),
            solvers: vec![Hrf, Newton, Policy],
            kernel_m: spatial_kernel(),
            kernel_v: cost_kernel(),
        },
        Preset {
            id: "timedep-1d".into(),
            description: "1D time-dependent MFG, T = 1, ν = 0.1, f = (I - Δ)⁻²m, m₀ ≡ 1, u_T ≡ 0".into(),
            dim: 1,
            n: 40,
            viscosity: 0.1,
            hamiltonian: HamiltonianSpec::Quadratic,
            coupling: CouplingSpec::Nonlocal { c: 1.0 },
            cost: CostFormula::SinCos4X,
            time: Some(td1),
            alpha: 0.04,
            beta: 2.0,
            gamma: 2.0,
            noise: 1e-3,
            m_obs: obs(96, Placement::GridRandom),
            v_obs: obs(10, Placement::GridRandom),
            solvers: vec![Hrf],
            kernel_m: spacetime_kernel(1.0),
            kernel_v: cost_kernel(),
        },
        Preset {
            id: "timedep-2d".into(),
            description: "2D time-dependent MFG, T = 1, ν = 0.05, f = m³, Gaussian m₀, u_T = -m₀".into(),
            dim: 2,
            n: 25,
            viscosity: 0.05,
            hamiltonian: HamiltonianSpec::Quadratic,
            coupling: CouplingSpec::Cubic,
            cost: CostFormula::CosCos,
            time: Some(td2),
            alpha: 0.04,
            beta: 2.0,
            gamma: 2.0,
            noise: 1e-3,
            m_obs: obs(1250, Placement::BoundarySlices),
            v_obs: obs(125, Placement::GridRandom),
            solvers: vec![Hrf],
            kernel_m: spacetime_kernel(1.0),
            kernel_v: cost_kernel(),
        },
    ]
}

pub fn find_preset(id: &str) -> Result<Preset> {
    preset_catalog().into_iter().find(|p| p.id == id).ok_or_else(|| MfgError::UnknownPreset(id.to_string()))
}

impl Preset {
    pub fn grid(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.dim, self.n)
    }

    pub fn is_timedep(&self) -> bool {
        self.time.is_some()
    }

    pub fn true_cost(&self, grid: &TorusGrid) -> Vec<f64> {
        grid.sample(|x| self.cost.eval(x))
    }

    /// The forward problem with cost `cost` (the true cost if `None`).
    pub fn problem(&self, cost: Option<Vec<f64>>) -> Result<MfgProblem> {
        let grid = self.grid()?;
        let cost = cost.unwrap_or_else(|| self.true_cost(&grid));
        let p = MfgProblem::stationary(grid, self.viscosity, self.hamiltonian.build(), self.coupling.build(&grid)?, cost)?.with_sign(SignConvention::CostOnRight);
        match &self.time {
            None => Ok(p),
            Some(t) => {
                let m0 = match t.m0 {
                    InitialDensity::Uniform => vec![1.0; grid.len()],
                    InitialDensity::CenteredGaussian => grid.sample(|x| {
                        let dx = x[0] - 0.5;
                        let dy = if grid.dim() == 2 { x[1] - 0.5 } else { 0.0 };
                        (-8.0 * (dx * dx + dy * dy)).exp()
                    }),
                };
                let mass = grid.integral(&m0);
                let m0: Vec<f64> = m0.iter().map(|v| v / mass).collect();
                let ut = match t.u_terminal {
                    TerminalValue::Zero => vec![0.0; grid.len()],
                    TerminalValue::NegInitialDensity => m0.iter().map(|v| -v).collect(),
                };
                Ok(p.with_time(TimeData::new(&grid, t.horizon, t.slices, m0, ut)?))
            }
        }
    }
}
