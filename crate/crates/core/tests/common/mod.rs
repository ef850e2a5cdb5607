//! Naive-loop oracles written directly from the scheme's definitions, plus
//! small problem builders shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use mfg_core::grid::TorusGrid;
use mfg_core::models::{Coupling, GodunovQuadratic, MfgProblem, TimeData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Componentwise couplings the oracles know how to evaluate.
#[derive(Debug, Clone, Copy)]
pub enum LocalF {
    Power(f64),
    Log(f64),
    Cubic,
}

impl LocalF {
    pub fn eval(self, m: f64) -> f64 {
        match self {
            LocalF::Power(p) => m.powf(p),
            LocalF::Log(k) => m.ln() / k,
            LocalF::Cubic => m * m * m,
        }
    }

    pub fn coupling(self) -> Coupling {
        match self {
            LocalF::Power(p) => Coupling::Power(p),
            LocalF::Log(k) => Coupling::LogScaled(k),
            LocalF::Cubic => Coupling::Cubic,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Setup {
    pub dim: usize,
    pub n: usize,
    pub nu: f64,
    pub shift: [f64; 2],
    pub f: LocalF,
    pub cost: Vec<f64>,
}

impl Setup {
    pub fn problem(&self) -> MfgProblem {
        let g = TorusGrid::new(self.dim, self.n).unwrap();
        MfgProblem::stationary(g, self.nu, Arc::new(GodunovQuadratic::shifted(self.shift)), self.f.coupling(), self.cost.clone()).unwrap()
    }

    fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Flat index of (i + di, j + dj) with periodic wrap; j is ignored in 1D.
    fn at(&self, i: usize, j: usize, di: isize, dj: isize) -> usize {
        let n = self.n as isize;
        let ii = ((i as isize + di) % n + n) % n;
        if self.dim == 1 {
            return ii as usize;
        }
        let jj = ((j as isize + dj) % n + n) % n;
        (jj * n + ii) as usize
    }

    fn coords(&self, k: usize) -> (usize, usize) {
        if self.dim == 1 {
            (k, 0)
        } else {
            (k % self.n, k / self.n)
        }
    }

    fn offsets(axis: usize) -> (isize, isize) {
        if axis == 0 {
            (1, 0)
        } else {
            (0, 1)
        }
    }

    /// One-sided differences (D⁺y, D⁻y) along `axis` at node k.
    fn diffs(&self, y: &[f64], k: usize, axis: usize) -> (f64, f64) {
        let h = 1.0 / self.n as f64;
        let (i, j) = self.coords(k);
        let (di, dj) = Self::offsets(axis);
        let fwd = (y[self.at(i, j, di, dj)] - y[k]) / h;
        let bwd = (y[k] - y[self.at(i, j, -di, -dj)]) / h;
        (fwd, bwd)
    }

    pub fn laplacian(&self, y: &[f64]) -> Vec<f64> {
        let h = 1.0 / self.n as f64;
        (0..self.len())
            .map(|k| {
                let (i, j) = self.coords(k);
                let mut s = 0.0;
                for axis in 0..self.dim {
                    let (di, dj) = Self::offsets(axis);
                    s += y[self.at(i, j, di, dj)] - 2.0 * y[k] + y[self.at(i, j, -di, -dj)];
                }
                s / (h * h)
            })
            .collect()
    }

    /// g and its two partials per axis: (value, [(∂g/∂q⁺_a, ∂g/∂q⁻_a)]).
    fn godunov(&self, u: &[f64], k: usize) -> (f64, Vec<(f64, f64)>) {
        let mut val = 0.0;
        let mut parts = Vec::new();
        for axis in 0..self.dim {
            let (fwd, bwd) = self.diffs(u, k, axis);
            let a = (fwd + self.shift[axis]).min(0.0);
            let b = (bwd + self.shift[axis]).max(0.0);
            val += 0.5 * (a * a + b * b);
            parts.push((a, b));
        }
        (val, parts)
    }

    /// B_h(U, M), from the coefficient of V_j in Σ_i M_i ∇g(i)·[D V](i).
    pub fn transport(&self, u: &[f64], m: &[f64]) -> Vec<f64> {
        let h = 1.0 / self.n as f64;
        let parts: Vec<Vec<(f64, f64)>> = (0..self.len()).map(|k| self.godunov(u, k).1).collect();
        (0..self.len())
            .map(|k| {
                let (i, j) = self.coords(k);
                let mut s = 0.0;
                for axis in 0..self.dim {
                    let (di, dj) = Self::offsets(axis);
                    let prev = self.at(i, j, -di, -dj);
                    let next = self.at(i, j, di, dj);
                    s += m[prev] * parts[prev][axis].0 - m[k] * parts[k][axis].0;
                    s += m[k] * parts[k][axis].1 - m[next] * parts[next][axis].1;
                }
                s / h
            })
            .collect()
    }

    pub fn hamiltonian(&self, u: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|k| self.godunov(u, k).0).collect()
    }

    /// (HJB residual with λ eliminated, FP residual, λ).
    pub fn stationary_residual(&self, m: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
        let lu = self.laplacian(u);
        let lm = self.laplacian(m);
        let g = self.hamiltonian(u);
        let b = self.transport(u, m);
        let core: Vec<f64> = (0..self.len()).map(|k| self.nu * lu[k] - g[k] + self.f.eval(m[k]) + self.cost[k]).collect();
        let num: f64 = m.iter().zip(&core).map(|(a, c)| a * c).sum();
        let den: f64 = m.iter().sum();
        let lambda = -num / den;
        let hjb = core.iter().map(|c| c + lambda).collect();
        let fp = (0..self.len()).map(|k| -self.nu * lm[k] + b[k]).collect();
        (hjb, fp, lambda)
    }

    /// (r_1..r_NT, s_1..s_NT) for full slices m[0..=NT], u[0..=NT].
    pub fn td_residual(&self, dt: f64, m: &[Vec<f64>], u: &[Vec<f64>]) -> Vec<f64> {
        let nt = m.len() - 1;
        let mut r = Vec::new();
        let mut s = Vec::new();
        for k in 1..=nt {
            let lu = self.laplacian(&u[k - 1]);
            let lm = self.laplacian(&m[k]);
            let g = self.hamiltonian(&u[k - 1]);
            let b = self.transport(&u[k - 1], &m[k]);
            for i in 0..self.len() {
                r.push((u[k][i] - u[k - 1][i]) / dt + self.nu * lu[i] - g[i] + self.f.eval(m[k][i]) + self.cost[i]);
                s.push((m[k][i] - m[k - 1][i]) / dt - self.nu * lm[i] + b[i]);
            }
        }
        r.extend(s);
        r
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Positive vector with h^d Σ = 1.
pub fn density(rng: &mut ChaCha8Rng, n_nodes: usize, cell: f64) -> Vec<f64> {
    let m = uniform(rng, n_nodes, 0.2, 2.0);
    let mass: f64 = m.iter().sum::<f64>() * cell;
    m.into_iter().map(|v| v / mass).collect()
}

/// A random small stationary setup.
pub fn random_setup(rng: &mut ChaCha8Rng) -> Setup {
    let dim = rng.gen_range(1..=2);
    let n: usize = if dim == 1 { rng.gen_range(4..12) } else { rng.gen_range(3..7) };
    let f = match rng.gen_range(0..3) {
        0 => LocalF::Power(rng.gen_range(0.5..3.0)),
        1 => LocalF::Log(rng.gen_range(1.0..100.0)),
        _ => LocalF::Cubic,
    };
    let shift = if rng.gen_bool(0.5) { [0.0, 0.0] } else { [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)] };
    let len = n.pow(dim as u32);
    Setup {
        dim,
        n,
        nu: rng.gen_range(0.0..0.5),
        shift,
        f,
        cost: uniform(rng, len, -1.0, 1.0),
    }
}

/// The time-dependent problem on a setup with the given terminal data.
pub fn with_time(setup: &Setup, horizon: f64, slices: usize, m0: Vec<f64>, ut: Vec<f64>) -> MfgProblem {
    let p = setup.problem();
    let td = TimeData::new(&p.grid, horizon, slices, m0, ut).unwrap();
    p.with_time(td)
}

/// The 1D time-dependent preset downscaled to N_h = N_T = 20.
pub fn downscaled_timedep() -> MfgProblem {
    let mut cfg = mfg_core::experiments::ExperimentConfig::for_preset("timedep-1d");
    cfg.grid.n = Some(20);
    cfg.grid.slices = Some(20);
    cfg.resolve().unwrap().problem(None).unwrap()
}
