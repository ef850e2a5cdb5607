//! Periodic kernels, Gram factorizations and optimal recovery.
//!
//! Periodic kernels are periodizations Σ_{j∈ℤ^d} φ(x - y + j) of positive
//! definite kernels on ℝ^d, which keeps them positive definite on the torus.
//! Space-time kernels are products k_x(x,x')·k_t(t,t'); on a tensor node set
//! the Gram matrix is (K_t + εI) ⊗ (K_x + εI) and is never formed.

use std::io::{BufRead, Write};
use std::str::FromStr;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, MfgError, Result};
use crate::grid::TorusGrid;
use crate::linalg::{self, DenseCholesky};

/// A spatial location on the torus with an optional time coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: [f64; 2],
    pub t: f64,
}

impl Point {
    pub fn space(x: [f64; 2]) -> Self {
        Self { x, t: 0.0 }
    }

    pub fn spacetime(x: [f64; 2], t: f64) -> Self {
        Self { x, t }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelKind {
    PeriodicGaussian { lengthscale: f64 },
    /// Smoothness must be 0.5, 1.5 or 2.5.
    TorusMatern { smoothness: f64, lengthscale: f64 },
    /// Spatial kernel times a Gaussian in time.
    SpacetimeProduct { space: Box<KernelKind>, time_lengthscale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub kind: KernelKind,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_jitter() -> f64 {
    1e-8
}

/// Periodic distance |a - b| mod 1 in [0, ½]; exactly symmetric in a, b.
fn torus_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    let w = d - d.floor();
    w.min(1.0 - w)
}

fn matern(r: f64, smoothness: f64, l: f64) -> f64 {
    let s = r / l;
    if smoothness == 0.5 {
        (-s).exp()
    } else if smoothness == 1.5 {
        let a = 3f64.sqrt() * s;
        (1.0 + a) * (-a).exp()
    } else {
        let a = 5f64.sqrt() * s;
        (1.0 + a + a * a / 3.0) * (-a).exp()
    }
}

impl KernelKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelKind::PeriodicGaussian { lengthscale } => positive("lengthscale", *lengthscale),
            KernelKind::TorusMatern { smoothness, lengthscale } => {
                if ![0.5, 1.5, 2.5].contains(smoothness) {
                    return Err(MfgError::InvalidInput(format!("matern smoothness {smoothness} not in {{0.5, 1.5, 2.5}}")));
                }
                positive("lengthscale", *lengthscale)
            }
            KernelKind::SpacetimeProduct { space, time_lengthscale } => {
                if matches!(**space, KernelKind::SpacetimeProduct { .. }) {
                    return Err(MfgError::InvalidInput("nested space-time kernel".into()));
                }
                space.validate()?;
                positive("time_lengthscale", *time_lengthscale)
            }
        }
    }

    pub fn is_spacetime(&self) -> bool {
        matches!(self, KernelKind::SpacetimeProduct { .. })
    }

    /// The spatial factor evaluated between two torus points.
    pub fn spatial(&self, a: [f64; 2], b: [f64; 2], dim: usize) -> f64 {
        match self {
            KernelKind::PeriodicGaussian { lengthscale } => {
                let l = *lengthscale;
                let images = (9.0 * l).ceil() as i32 + 1;
                let mut k = 1.0;
                for axis in 0..dim {
                    let d = torus_dist(a[axis], b[axis]);
                    let s: f64 = (-images..=images)
                        .map(|j| {
                            let z = d + j as f64;
                            (-z * z / (2.0 * l * l)).exp()
                        })
                        .sum();
                    k *= s;
                }
                k
            }
            KernelKind::TorusMatern { smoothness, lengthscale } => {
                let images = (40.0 * lengthscale).ceil() as i32 + 1;
                let d0 = torus_dist(a[0], b[0]);
                let d1 = if dim == 2 { torus_dist(a[1], b[1]) } else { 0.0 };
                let jy = if dim == 2 { images } else { 0 };
                let mut s = 0.0;
                for j in -images..=images {
                    for i in -jy..=jy {
                        let x = d0 + j as f64;
                        let y = d1 + i as f64;
                        s += matern((x * x + y * y).sqrt(), *smoothness, *lengthscale);
                    }
                }
                s
            }
            KernelKind::SpacetimeProduct { space, .. } => space.spatial(a, b, dim),
        }
    }

    pub fn temporal(&self, s: f64, t: f64) -> f64 {
        match self {
            KernelKind::SpacetimeProduct { time_lengthscale, .. } => {
                let d = s - t;
                (-d * d / (2.0 * time_lengthscale * time_lengthscale)).exp()
            }
            _ => 1.0,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(MfgError::InvalidInput(format!("{name} must be positive, got {v}")))
    }
}

impl KernelSpec {
    pub fn periodic_gaussian(lengthscale: f64) -> Self {
        Self {
            kind: KernelKind::PeriodicGaussian { lengthscale },
            jitter: default_jitter(),
        }
    }

    pub fn spacetime(space: KernelKind, time_lengthscale: f64) -> Self {
        Self {
            kind: KernelKind::SpacetimeProduct {
                space: Box::new(space),
                time_lengthscale,
            },
            jitter: default_jitter(),
        }
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn eval(&self, a: &Point, b: &Point, dim: usize) -> f64 {
        self.kind.spatial(a.x, b.x, dim) * self.kind.temporal(a.t, b.t)
    }
}

#[derive(Clone)]
struct Factor {
    chol: DenseCholesky,
}

impl Factor {
    fn new(n: usize, jitter: f64, k: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut m = Mat::from_fn(n, n, |i, j| k(i.max(j), i.min(j)));
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        Ok(Self { chol: DenseCholesky::new(&m)? })
    }
}

/// Factorized Gram matrix on grid nodes (and optionally a time grid).
#[derive(Clone)]
pub struct GramModel {
    spec: KernelSpec,
    grid: TorusGrid,
    nodes: Vec<[f64; 2]>,
    times: Option<Vec<f64>>,
    space: Factor,
    time: Option<Factor>,
}

impl std::fmt::Debug for GramModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GramModel")
            .field("spec", &self.spec)
            .field("nodes", &self.nodes.len())
            .field("times", &self.times.as_ref().map(|t| t.len()))
            .finish()
    }
}

impl GramModel {
    /// Gram on the spatial grid nodes. A space-time spec uses only its spatial factor.
    pub fn spatial(spec: &KernelSpec, grid: &TorusGrid) -> Result<Self> {
        spec.kind.validate()?;
        if !(spec.jitter >= 0.0) {
            return Err(MfgError::InvalidInput(format!("jitter must be nonnegative, got {}", spec.jitter)));
        }
        let nodes = grid.nodes();
        let dim = grid.dim();
        let space = Factor::new(nodes.len(), spec.jitter, |i, j| spec.kind.spatial(nodes[i], nodes[j], dim))?;
        Ok(Self {
            spec: spec.clone(),
            grid: *grid,
            nodes,
            times: None,
            space,
            time: None,
        })
    }

    /// Gram on grid nodes × `times`, stacked slice-major (time outer).
    pub fn spacetime(spec: &KernelSpec, grid: &TorusGrid, times: Vec<f64>) -> Result<Self> {
        if !spec.kind.is_spacetime() {
            return Err(MfgError::InvalidInput("space-time gram needs a spacetime_product kernel".into()));
        }
        let mut g = Self::spatial(spec, grid)?;
        let time = Factor::new(times.len(), spec.jitter, |i, j| spec.kind.temporal(times[i], times[j]))?;
        g.times = Some(times);
        g.time = Some(time);
        Ok(g)
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    /// Number of nodes (space-time nodes if a time grid is attached).
    pub fn len(&self) -> usize {
        self.nodes.len() * self.times.as_ref().map_or(1, |t| t.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn spatial_row(&self, x: [f64; 2]) -> Vec<f64> {
        let x = [x[0] - x[0].floor(), x[1] - x[1].floor()];
        let kx: Vec<f64> = self.nodes.iter().map(|&n| self.spec.kind.spatial(x, n, self.grid.dim())).collect();
        self.space.chol.solve(&kx)
    }

    /// K(x, X)(K(X,X) + εI)⁻¹, as a dense row over all nodes.
    pub fn recovery_row(&self, target: &Point) -> Vec<f64> {
        let (wt, sx) = self.separable_row(target);
        if self.times.is_none() {
            return sx;
        }
        let mut row = Vec::with_capacity(self.len());
        for a in &wt {
            row.extend(sx.iter().map(|b| a * b));
        }
        row
    }

    /// The recovery row split into (time weights, spatial row). The time
    /// weights are `[1.0]` for a spatial gram.
    pub fn separable_row(&self, target: &Point) -> (Vec<f64>, Vec<f64>) {
        let sx = self.spatial_row(target.x);
        match (&self.times, &self.time) {
            (Some(times), Some(tf)) => {
                let t_end = *times.last().unwrap_or(&0.0);
                let t = target.t.clamp(times[0].min(t_end), t_end.max(times[0]));
                let kt: Vec<f64> = times.iter().map(|&s| self.spec.kind.temporal(t, s)).collect();
                (tf.chol.solve(&kt), sx)
            }
            _ => (vec![1.0], sx),
        }
    }

    pub fn reconstruct(&self, target: &Point, samples: &[f64]) -> Result<f64> {
        check_len(samples, self.len())?;
        Ok(linalg::dot(&self.recovery_row(target), samples))
    }

    fn check_spatial(&self, v: &[f64]) -> Result<()> {
        check_len(v, self.nodes.len())
    }

    /// Jθ with J = L⁻¹, so ‖Jθ‖² = θᵀ(K + εI)⁻¹θ. Spatial only.
    pub fn apply_j(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_spatial(v)?;
        Ok(self.space.chol.solve_lower(v))
    }

    pub fn apply_jt(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check_spatial(w)?;
        Ok(self.space.chol.solve_lower_transpose(w))
    }

    /// JᵀJθ = (K + εI)⁻¹θ.
    pub fn apply_jtj(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_spatial(v)?;
        Ok(self.space.chol.solve(v))
    }

    /// Dense L⁻¹ (J as a matrix).
    pub fn j_matrix(&self) -> Mat<f64> {
        let n = self.nodes.len();
        let mut out = Mat::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let c = self.space.chol.solve_lower(&e);
            for i in 0..n {
                out[(i, j)] = c[i];
            }
            e[j] = 0.0;
        }
        out
    }
}

/// V_hᵀ(K + εI)⁻¹V_h.
pub fn rkhs_norm_sq(v: &[f64], gram: &GramModel) -> Result<f64> {
    let jv = gram.apply_j(v)?;
    Ok(linalg::dot(&jv, &jv))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservedField {
    M,
    V,
}

impl FromStr for ObservedField {
    type Err = MfgError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m" => Ok(ObservedField::M),
            "v" | "V" => Ok(ObservedField::V),
            other => Err(MfgError::InvalidInput(format!("unknown observed field '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub field: ObservedField,
    pub targets: Vec<Point>,
    pub values: Vec<f64>,
    pub noise_sigma: f64,
}

impl ObservationSet {
    pub fn new(field: ObservedField, targets: Vec<Point>, values: Vec<f64>, noise_sigma: f64) -> Result<Self> {
        if targets.len() != values.len() {
            return Err(MfgError::DimensionMismatch {
                expected: targets.len(),
                got: values.len(),
            });
        }
        Ok(Self {
            field,
            targets,
            values,
            noise_sigma,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Columns `x,y,t,value,sigma`; the first line names the observed field.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let f = match self.field {
            ObservedField::M => "m",
            ObservedField::V => "v",
        };
        writeln!(w, "# field={f}")?;
        writeln!(w, "x,y,t,value,sigma")?;
        for (p, v) in self.targets.iter().zip(&self.values) {
            writeln!(w, "{:?},{:?},{:?},{:?},{:?}", p.x[0], p.x[1], p.t, v, self.noise_sigma)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut field = None;
        let mut targets = Vec::new();
        let mut values = Vec::new();
        let mut sigma = 0.0;
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("# field=") {
                field = Some(rest.parse()?);
                continue;
            }
            if line.is_empty() || line.starts_with("x,") {
                continue;
            }
            let parts: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|e| MfgError::Serde(format!("bad number '{s}': {e}"))))
                .collect::<Result<_>>()?;
            if parts.len() != 5 {
                return Err(MfgError::Serde(format!("expected 5 columns, got {}", parts.len())));
            }
            targets.push(Point::spacetime([parts[0], parts[1]], parts[2]));
            values.push(parts[3]);
            sigma = parts[4];
        }
        let field = field.ok_or_else(|| MfgError::Serde("missing '# field=' header".into()))?;
        Self::new(field, targets, values, sigma)
    }
}

/// Stack the recovery rows of every target: Φ(Z) = matrix·Z.
pub fn build_observation_matrix(obs: &ObservationSet, gram: &GramModel) -> Mat<f64> {
    let rows: Vec<Vec<f64>> = obs.targets.iter().map(|p| gram.recovery_row(p)).collect();
    Mat::from_fn(rows.len(), gram.len(), |i, j| rows[i][j])
}

/// Split a matrix acting on stacked slices into the part acting on chosen
/// free slices and a constant offset from the frozen ones.
///
/// `frozen` lists (slice index, slice values); every other slice is free and
/// keeps its relative order in the returned matrix.
pub fn fold_frozen_slices(matrix: &Mat<f64>, slice_len: usize, frozen: &[(usize, &[f64])]) -> Result<(Mat<f64>, Vec<f64>)> {
    let total = matrix.ncols();
    if slice_len == 0 || total % slice_len != 0 {
        return Err(MfgError::InvalidInput(format!("{total} columns are not a multiple of slice length {slice_len}")));
    }
    let slices = total / slice_len;
    let mut offset = vec![0.0; matrix.nrows()];
    for (s, vals) in frozen {
        check_len(vals, slice_len)?;
        if *s >= slices {
            return Err(MfgError::InvalidInput(format!("frozen slice {s} out of range")));
        }
        for i in 0..matrix.nrows() {
            let mut acc = 0.0;
            for j in 0..slice_len {
                acc += matrix[(i, s * slice_len + j)] * vals[j];
            }
            offset[i] += acc;
        }
    }
    let free: Vec<usize> = (0..slices).filter(|s| !frozen.iter().any(|(f, _)| f == s)).collect();
    let out = Mat::from_fn(matrix.nrows(), free.len() * slice_len, |i, j| matrix[(i, free[j / slice_len] * slice_len + j % slice_len)]);
    Ok((out, offset))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_targets_give_unit_rows() {
        let g = TorusGrid::new(1, 12).unwrap();
        let gram = GramModel::spatial(&KernelSpec::periodic_gaussian(0.1).with_jitter(0.0), &g).unwrap();
        let row = gram.recovery_row(&Point::space(g.coords(5)));
        for (i, v) in row.iter().enumerate() {
            let e = if i == 5 { 1.0 } else { 0.0 };
            assert!((v - e).abs() < 1e-8, "{i}: {v}");
        }
    }

    #[test]
    fn norm_of_kernel_column() {
        let g = TorusGrid::new(1, 10).unwrap();
        let spec = KernelSpec::periodic_gaussian(0.1).with_jitter(0.0);
        let gram = GramModel::spatial(&spec, &g).unwrap();
        let x = g.nodes();
        let v: Vec<f64> = x.iter().map(|&n| spec.kind.spatial(n, x[0], 1)).collect();
        let q = rkhs_norm_sq(&v, &gram).unwrap();
        assert!((q - spec.kind.spatial(x[0], x[0], 1)).abs() < 1e-6 * q);
    }

    #[test]
    fn matern_is_periodic_and_symmetric() {
        let k = KernelKind::TorusMatern { smoothness: 1.5, lengthscale: 0.2 };
        let a = [0.1, 0.7];
        let b = [0.35, 0.05];
        assert!((k.spatial(a, b, 2) - k.spatial(b, a, 2)).abs() < 1e-15);
        assert!((k.spatial(a, b, 2) - k.spatial([1.1, -0.3], b, 2)).abs() < 1e-12);
    }

    #[test]
    fn kronecker_row_matches_dense_solve() {
        let g = TorusGrid::new(1, 5).unwrap();
        let spec = KernelSpec::spacetime(KernelKind::PeriodicGaussian { lengthscale: 0.3 }, 0.4).with_jitter(1e-3);
        let times = vec![0.0, 0.5, 1.0];
        let gram = GramModel::spacetime(&spec, &g, times.clone()).unwrap();
        let target = Point::spacetime([0.33, 0.0], 0.7);
        let row = gram.recovery_row(&target);
        // (K_t + εI) ⊗ (K_x + εI) assembled densely.
        let nodes = g.nodes();
        let n = 15;
        let mut a = vec![vec![0.0; n]; n];
        for (ti, &t) in times.iter().enumerate() {
            for (si, &s) in times.iter().enumerate() {
                let kt = spec.kind.temporal(t, s) + if ti == si { 1e-3 } else { 0.0 };
                for i in 0..5 {
                    for j in 0..5 {
                        let kx = spec.kind.spatial(nodes[i], nodes[j], 1) + if i == j { 1e-3 } else { 0.0 };
                        a[ti * 5 + i][si * 5 + j] = kt * kx;
                    }
                }
            }
        }
        let mut k = vec![0.0; n];
        for (ti, &t) in times.iter().enumerate() {
            for i in 0..5 {
                k[ti * 5 + i] = spec.kind.temporal(0.7, t) * spec.kind.spatial([0.33, 0.0], nodes[i], 1);
            }
        }
        let want = linalg::dense_solve(&a, &k).unwrap();
        for i in 0..n {
            assert!((row[i] - want[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn observation_csv_round_trip() {
        let obs = ObservationSet::new(ObservedField::M, vec![Point::spacetime([0.1, 0.2], 0.3)], vec![1.0 / 3.0], 1e-3).unwrap();
        let mut buf = Vec::new();
        obs.write_csv(&mut buf).unwrap();
        let back = ObservationSet::read_csv(&buf[..]).unwrap();
        assert_eq!(obs, back);
    }
}
