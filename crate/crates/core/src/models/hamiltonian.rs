//! Upwind numerical Hamiltonians g(x, q, m) on the 2·dim slope stencil.
//!
//! Stencil slot 2a holds the forward difference along axis a, slot 2a+1
//! the backward difference. All built-ins are Godunov-type: monotone
//! decreasing in forward slots, increasing in backward slots.

use std::fmt::Debug;

use crate::grid::UpwindStencil;

pub type StencilHessian = [[f64; 4]; 4];

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HamiltonianKind {
    GodunovQuadratic,
    ShiftedQuadratic { shift: [f64; 2] },
    SmoothedQuadratic { shift: [f64; 2], eps: f64 },
    CongestionPower { a: f64, b: f64, shift: [f64; 2] },
    Custom,
}

pub trait NumericalHamiltonian: Send + Sync + Debug {
    fn kind(&self) -> HamiltonianKind;

    fn value(&self, x: [f64; 2], q: &UpwindStencil, m: f64, dim: usize) -> f64;

    fn gradient(&self, x: [f64; 2], q: &UpwindStencil, m: f64, dim: usize) -> UpwindStencil;

    /// Second derivatives in q. The default differentiates `gradient`
    /// numerically, which is enough for custom Hamiltonians.
    fn hessian(&self, x: [f64; 2], q: &UpwindStencil, m: f64, dim: usize) -> StencilHessian {
        let mut hess = [[0.0; 4]; 4];
        let nd = 2 * dim;
        for j in 0..nd {
            let step = 1e-6 * (1.0 + q[j].abs());
            let mut qp = *q;
            let mut qm = *q;
            qp[j] += step;
            qm[j] -= step;
            let gp = self.gradient(x, &qp, m, dim);
            let gm = self.gradient(x, &qm, m, dim);
            for i in 0..nd {
                hess[i][j] = (gp[i] - gm[i]) / (2.0 * step);
            }
        }
        hess
    }

    fn depends_on_density(&self) -> bool {
        false
    }

    /// ∂g/∂m
    fn density_derivative(&self, _x: [f64; 2], _q: &UpwindStencil, _m: f64, _dim: usize) -> f64 {
        0.0
    }

    /// ∂²g/∂q∂m
    fn gradient_density_derivative(
        &self,
        _x: [f64; 2],
        _q: &UpwindStencil,
        _m: f64,
        _dim: usize,
    ) -> UpwindStencil {
        [0.0; 4]
    }

    /// The continuous Hamiltonian H(x, p, m) this scheme is consistent with.
    fn continuous(&self, x: [f64; 2], p: [f64; 2], m: f64, dim: usize) -> f64;
}

/// Shifted Godunov quadratic: ½ Σ_a [min(q⁺_a + s_a, 0)² + max(q⁻_a + s_a, 0)²],
/// consistent with ½|p + s|². `shift = 0` is the plain Godunov scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GodunovQuadratic {
    pub shift: [f64; 2],
}

impl GodunovQuadratic {
    pub fn plain() -> Self {
        Self { shift: [0.0, 0.0] }
    }

    pub fn shifted(shift: [f64; 2]) -> Self {
        Self { shift }
    }
}

#[inline]
fn clamp_slot(q: &UpwindStencil, shift: &[f64; 2], slot: usize) -> f64 {
    let v = q[slot] + shift[slot / 2];
    if slot % 2 == 0 {
        v.min(0.0)
    } else {
        v.max(0.0)
    }
}

impl NumericalHamiltonian for GodunovQuadratic {
    fn kind(&self) -> HamiltonianKind {
        if self.shift == [0.0, 0.0] {
            HamiltonianKind::GodunovQuadratic
        } else {
            HamiltonianKind::ShiftedQuadratic { shift: self.shift }
        }
    }

    fn value(&self, _x: [f64; 2], q: &UpwindStencil, _m: f64, dim: usize) -> f64 {
        let mut s = 0.0;
        for slot in 0..2 * dim {
            let c = clamp_slot(q, &self.shift, slot);
            s += c * c;
        }
        0.5 * s
    }

    fn gradient(&self, _x: [f64; 2], q: &UpwindStencil, _m: f64, dim: usize) -> UpwindStencil {
        let mut g = [0.0; 4];
        for (slot, gs) in g.iter_mut().enumerate().take(2 * dim) {
            *gs = clamp_slot(q, &self.shift, slot);
        }
        g
    }

    // Active-set indicator; 0 exactly at the kink.
    fn hessian(&self, _x: [f64; 2], q: &UpwindStencil, _m: f64, dim: usize) -> StencilHessian {
        let mut h = [[0.0; 4]; 4];
        for (slot, row) in h.iter_mut().enumerate().take(2 * dim) {
            if clamp_slot(q, &self.shift, slot) != 0.0 {
                row[slot] = 1.0;
            }
        }
        h
    }

    fn continuous(&self, _x: [f64; 2], p: [f64; 2], _m: f64, dim: usize) -> f64 {
        (0..dim).map(|a| 0.5 * (p[a] + self.shift[a]).powi(2)).sum()
    }
}

/// Softplus-smoothed version of [`GodunovQuadratic`]: each clamp
/// max(v, 0) is replaced by ε ln(1 + e^{v/ε}).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedQuadratic {
    pub shift: [f64; 2],
    pub eps: f64,
}

impl SmoothedQuadratic {
    pub fn new(shift: [f64; 2], eps: f64) -> Self {
        Self { shift, eps }
    }

    // (φ, φ', φ'') of the softplus at v, with the sign flip for forward slots.
    fn soft(&self, q: &UpwindStencil, slot: usize) -> (f64, f64, f64) {
        let v = q[slot] + self.shift[slot / 2];
        let sgn = if slot % 2 == 0 { -1.0 } else { 1.0 };
        let t = sgn * v / self.eps;
        let phi = if t > 30.0 {
            sgn * v + self.eps * (-t).exp()
        } else {
            self.eps * t.exp().ln_1p()
        };
        let sig = 1.0 / (1.0 + (-t).exp());
        (phi, sgn * sig, sig * (1.0 - sig) / self.eps)
    }
}

impl NumericalHamiltonian for SmoothedQuadratic {
    fn kind(&self) -> HamiltonianKind {
        HamiltonianKind::SmoothedQuadratic {
            shift: self.shift,
            eps: self.eps,
        }
    }

    fn value(&self, _x: [f64; 2], q: &UpwindStencil, _m: f64, dim: usize) -> f64 {
        (0..2 * dim).map(|s| 0.5 * self.soft(q, s).0.powi(2)).sum()
    }

    fn gradient(&self, _x: [f64; 2], q: &UpwindStencil, _m: f64, dim: usize) -> UpwindStencil {
        let mut g = [0.0; 4];
        for (slot, gs) in g.iter_mut().enumerate().take(2 * dim) {
            let (phi, dphi, _) = self.soft(q, slot);
            *gs = phi * dphi;
        }
        g
    }

    fn hessian(&self, _x: [f64; 2], q: &UpwindStencil, _m: f64, dim: usize) -> StencilHessian {
        let mut h = [[0.0; 4]; 4];
        for (slot, row) in h.iter_mut().enumerate().take(2 * dim) {
            let (phi, dphi, d2phi) = self.soft(q, slot);
            row[slot] = dphi * dphi + phi * d2phi;
        }
        h
    }

    fn continuous(&self, _x: [f64; 2], p: [f64; 2], _m: f64, dim: usize) -> f64 {
        (0..dim).map(|a| 0.5 * (p[a] + self.shift[a]).powi(2)).sum()
    }
}

/// Congestion Hamiltonian |Q + p|^b / (b m^a) with Godunov selection of
/// |Q + p|² and a density floor δ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CongestionPower {
    pub a: f64,
    pub b: f64,
    pub shift: [f64; 2],
    pub floor: f64,
}

impl CongestionPower {
    pub fn new(a: f64, b: f64, shift: [f64; 2]) -> Self {
        Self {
            a,
            b,
            shift,
            floor: 1e-10,
        }
    }

    fn density(&self, m: f64) -> f64 {
        m.max(self.floor)
    }

    // S = Σ clamped², ψ = clamped values.
    fn select(&self, q: &UpwindStencil, dim: usize) -> (f64, [f64; 4]) {
        let mut psi = [0.0; 4];
        let mut s = 0.0;
        for (slot, p) in psi.iter_mut().enumerate().take(2 * dim) {
            *p = clamp_slot(q, &self.shift, slot);
            s += *p * *p;
        }
        (s, psi)
    }

    // ∂g/∂q_ℓ · m^a = S^{b/2-1} ψ_ℓ
    fn unscaled_gradient(&self, q: &UpwindStencil, dim: usize) -> UpwindStencil {
        let (s, psi) = self.select(q, dim);
        let mut g = [0.0; 4];
        if s == 0.0 {
            return g;
        }
        let w = s.powf(0.5 * self.b - 1.0);
        for slot in 0..2 * dim {
            g[slot] = w * psi[slot];
        }
        g
    }
}

impl NumericalHamiltonian for CongestionPower {
    fn kind(&self) -> HamiltonianKind {
        HamiltonianKind::CongestionPower {
            a: self.a,
            b: self.b,
            shift: self.shift,
        }
    }

    fn value(&self, _x: [f64; 2], q: &UpwindStencil, m: f64, dim: usize) -> f64 {
        let (s, _) = self.select(q, dim);
        s.powf(0.5 * self.b) / (self.b * self.density(m).powf(self.a))
    }

    fn gradient(&self, _x: [f64; 2], q: &UpwindStencil, m: f64, dim: usize) -> UpwindStencil {
        let mut g = self.unscaled_gradient(q, dim);
        let inv = self.density(m).powf(-self.a);
        for v in g.iter_mut() {
            *v *= inv;
        }
        g
    }

    fn hessian(&self, _x: [f64; 2], q: &UpwindStencil, m: f64, dim: usize) -> StencilHessian {
        let (s, psi) = self.select(q, dim);
        let mut h = [[0.0; 4]; 4];
        if s == 0.0 {
            return h;
        }
        let inv = self.density(m).powf(-self.a);
        let w = s.powf(0.5 * self.b - 1.0);
        let w2 = (self.b - 2.0) * s.powf(0.5 * self.b - 2.0);
        for i in 0..2 * dim {
            for j in 0..2 * dim {
                let mut v = w2 * psi[i] * psi[j];
                if i == j && psi[i] != 0.0 {
                    v += w;
                }
                h[i][j] = v * inv;
            }
        }
        h
    }

    fn depends_on_density(&self) -> bool {
        true
    }

    fn density_derivative(&self, x: [f64; 2], q: &UpwindStencil, m: f64, dim: usize) -> f64 {
        if m < self.floor {
            return 0.0;
        }
        -self.a * self.value(x, q, m, dim) / m
    }

    fn gradient_density_derivative(
        &self,
        x: [f64; 2],
        q: &UpwindStencil,
        m: f64,
        dim: usize,
    ) -> UpwindStencil {
        let mut g = [0.0; 4];
        if m < self.floor {
            return g;
        }
        let grad = self.gradient(x, q, m, dim);
        for (gi, v) in g.iter_mut().zip(grad) {
            *gi = -self.a * v / m;
        }
        g
    }

    fn continuous(&self, _x: [f64; 2], p: [f64; 2], m: f64, dim: usize) -> f64 {
        let s: f64 = (0..dim).map(|a| (p[a] + self.shift[a]).powi(2)).sum();
        s.powf(0.5 * self.b) / (self.b * self.density(m).powf(self.a))
    }
}
