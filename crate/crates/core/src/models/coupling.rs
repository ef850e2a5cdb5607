//! Coupling terms f(m) entering the HJB block.

use std::sync::{Arc, OnceLock};

use faer::Mat;

use crate::error::{check_len, MfgError, Result};
use crate::grid::{HelmholtzSolver, TorusGrid};
use crate::linalg::Triplets;

#[derive(Debug, Clone)]
pub enum Coupling {
    /// m^p
    Power(f64),
    /// (1/k) ln m
    LogScaled(f64),
    /// m³
    Cubic,
    /// m² + b·∇m with centered differences; `drift[i]` is b at node i.
    LocalDrift(Arc<Vec<[f64; 2]>>),
    /// c (I - Δ_h)^{-2} m
    Nonlocal(Arc<NonlocalSmoothing>),
}

#[derive(Debug)]
pub struct NonlocalSmoothing {
    pub scale: f64,
    solver: HelmholtzSolver,
    squared: OnceLock<Arc<Mat<f64>>>,
}

impl NonlocalSmoothing {
    pub fn new(grid: TorusGrid, scale: f64) -> Result<Self> {
        Ok(Self {
            scale,
            solver: HelmholtzSolver::new(grid)?,
            squared: OnceLock::new(),
        })
    }

    /// Dense c (I - Δ_h)^{-2}.
    pub fn matrix(&self) -> Result<Arc<Mat<f64>>> {
        if let Some(m) = self.squared.get() {
            return Ok(m.clone());
        }
        let inv = self.solver.dense_inverse()?;
        let sq = &*inv * &*inv * faer::Scale(self.scale);
        let arc = Arc::new(sq);
        let _ = self.squared.set(arc.clone());
        Ok(arc)
    }
}

#[inline]
fn powf_signed(m: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() < 64.0 {
        m.powi(p as i32)
    } else {
        m.powf(p)
    }
}

impl Coupling {
    pub fn local_drift<F: Fn([f64; 2]) -> [f64; 2]>(grid: &TorusGrid, b: F) -> Self {
        Coupling::LocalDrift(Arc::new((0..grid.len()).map(|k| b(grid.coords(k))).collect()))
    }

    pub fn nonlocal(grid: TorusGrid, scale: f64) -> Result<Self> {
        Ok(Coupling::Nonlocal(Arc::new(NonlocalSmoothing::new(grid, scale)?)))
    }

    pub fn name(&self) -> String {
        match self {
            Coupling::Power(p) => format!("power({p})"),
            Coupling::LogScaled(k) => format!("log_scaled(k={k})"),
            Coupling::Cubic => "cubic".into(),
            Coupling::LocalDrift(_) => "local_drift".into(),
            Coupling::Nonlocal(n) => format!("nonlocal_smooth(c={})", n.scale),
        }
    }

    pub fn is_componentwise(&self) -> bool {
        matches!(self, Coupling::Power(_) | Coupling::LogScaled(_) | Coupling::Cubic)
    }

    fn check_positive(&self, m: &[f64]) -> Result<()> {
        if let Coupling::LogScaled(_) = self {
            if let Some((node, &v)) = m.iter().enumerate().find(|(_, &v)| v <= 0.0 || !v.is_finite()) {
                return Err(MfgError::NonPositiveDensity { min: v, node });
            }
        }
        Ok(())
    }

    pub fn apply(&self, grid: &TorusGrid, m: &[f64]) -> Result<Vec<f64>> {
        check_len(m, grid.len())?;
        self.check_positive(m)?;
        Ok(match self {
            Coupling::Power(p) => m.iter().map(|&v| powf_signed(v, *p)).collect(),
            Coupling::LogScaled(k) => m.iter().map(|&v| v.ln() / k).collect(),
            Coupling::Cubic => m.iter().map(|&v| v * v * v).collect(),
            Coupling::LocalDrift(b) => {
                let half = 0.5 * grid.n() as f64;
                (0..grid.len())
                    .map(|i| {
                        let mut s = m[i] * m[i];
                        for axis in 0..grid.dim() {
                            let dm = (m[grid.neighbor(i, axis, 1)] - m[grid.neighbor(i, axis, -1)]) * half;
                            s += b[i][axis] * dm;
                        }
                        s
                    })
                    .collect()
            }
            Coupling::Nonlocal(n) => {
                let y = n.solver.solve(m, 2)?;
                y.into_iter().map(|v| n.scale * v).collect()
            }
        })
    }

    /// Pointwise derivative f'(m) for componentwise kinds.
    pub fn derivative(&self, m: f64) -> Option<f64> {
        match self {
            Coupling::Power(p) => Some(if *p == 0.0 { 0.0 } else { p * powf_signed(m, p - 1.0) }),
            Coupling::LogScaled(k) => Some(1.0 / (k * m)),
            Coupling::Cubic => Some(3.0 * m * m),
            _ => None,
        }
    }

    /// Push `scale * ∂f/∂M` at the given block offset.
    pub fn push_jacobian(
        &self,
        grid: &TorusGrid,
        m: &[f64],
        t: &mut Triplets,
        row_off: usize,
        col_off: usize,
        scale: f64,
    ) -> Result<()> {
        check_len(m, grid.len())?;
        self.check_positive(m)?;
        match self {
            Coupling::LocalDrift(b) => {
                let half = 0.5 * grid.n() as f64;
                for i in 0..grid.len() {
                    t.push(row_off + i, col_off + i, scale * 2.0 * m[i]);
                    for axis in 0..grid.dim() {
                        let c = scale * b[i][axis] * half;
                        t.push(row_off + i, col_off + grid.neighbor(i, axis, 1), c);
                        t.push(row_off + i, col_off + grid.neighbor(i, axis, -1), -c);
                    }
                }
            }
            Coupling::Nonlocal(n) => {
                let a = n.matrix()?;
                for j in 0..grid.len() {
                    for i in 0..grid.len() {
                        t.push(row_off + i, col_off + j, scale * a[(i, j)]);
                    }
                }
            }
            _ => {
                for (i, &v) in m.iter().enumerate() {
                    t.push(row_off + i, col_off + i, scale * self.derivative(v).unwrap_or(0.0));
                }
            }
        }
        Ok(())
    }

    pub fn jacobian(&self, grid: &TorusGrid, m: &[f64]) -> Result<Triplets> {
        let mut t = Triplets::new(grid.len(), grid.len());
        self.push_jacobian(grid, m, &mut t, 0, 0, 1.0)?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_density_examples() {
        let g = TorusGrid::new(2, 6).unwrap();
        let one = vec![1.0; g.len()];
        assert!(Coupling::Power(3.0).apply(&g, &one).unwrap().iter().all(|&v| v == 1.0));
        assert!(Coupling::LogScaled(100.0).apply(&g, &one).unwrap().iter().all(|&v| v == 0.0));
        let nl = Coupling::nonlocal(g, 50.0).unwrap().apply(&g, &one).unwrap();
        let worst = nl.iter().fold(0.0_f64, |a, &v| a.max((v - 50.0).abs()));
        assert!(worst < 50.0 * 1e-12, "{worst:e}");
    }

    #[test]
    fn log_coupling_names_bad_node() {
        let g = TorusGrid::new(1, 4).unwrap();
        let err = Coupling::LogScaled(1.0).apply(&g, &[1.0, 0.5, -0.1, 2.0]).unwrap_err();
        match err {
            MfgError::NonPositiveDensity { node, .. } => assert_eq!(node, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let g = TorusGrid::new(2, 5).unwrap();
        let m: Vec<f64> = (0..g.len()).map(|k| 1.0 + 0.3 * (k as f64 * 0.9).sin()).collect();
        let couplings = vec![
            Coupling::Power(2.0),
            Coupling::LogScaled(10.0),
            Coupling::Cubic,
            Coupling::local_drift(&g, |x| [(x[1] * 6.0).sin(), (x[0] * 6.0).cos()]),
            Coupling::nonlocal(g, 3.0).unwrap(),
        ];
        let v: Vec<f64> = (0..g.len()).map(|k| (k as f64 * 1.7).cos()).collect();
        for c in couplings {
            let jv = c.jacobian(&g, &m).unwrap().to_csr().matvec(&v);
            let d = 1e-6;
            let mp: Vec<f64> = m.iter().zip(&v).map(|(a, b)| a + d * b).collect();
            let mm: Vec<f64> = m.iter().zip(&v).map(|(a, b)| a - d * b).collect();
            let fp = c.apply(&g, &mp).unwrap();
            let fm = c.apply(&g, &mm).unwrap();
            for i in 0..g.len() {
                let fd = (fp[i] - fm[i]) / (2.0 * d);
                assert!((fd - jv[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{}", c.name());
            }
        }
    }
}
