use faer::Mat;

use crate::error::{check_len, MfgError, Result};
use crate::linalg;

/// One row of an observation map.
#[derive(Debug, Clone)]
pub enum MapRow {
    /// `values` acting on columns `start..start + values.len()`.
    Dense { start: usize, values: Vec<f64> },
    /// Σ_s w_s ⟨space, z[c_s..c_s + space.len()]⟩ over (c_s, w_s) pairs.
    Separable { slices: Vec<(usize, f64)>, space: Vec<f64> },
}

/// An affine map z ↦ Az + offset stored row by row.
#[derive(Debug, Clone)]
pub struct LinearMap {
    ncols: usize,
    rows: Vec<MapRow>,
    offset: Vec<f64>,
}

impl LinearMap {
    pub fn new(ncols: usize, rows: Vec<MapRow>, offset: Vec<f64>) -> Result<Self> {
        check_len(&offset, rows.len())?;
        for r in &rows {
            let ok = match r {
                MapRow::Dense { start, values } => start + values.len() <= ncols,
                MapRow::Separable { slices, space } => slices.iter().all(|(c, _)| c + space.len() <= ncols),
            };
            if !ok {
                return Err(MfgError::InvalidInput("observation row exceeds the state length".into()));
            }
        }
        Ok(Self { ncols, rows, offset })
    }

    pub fn zero(ncols: usize) -> Self {
        Self {
            ncols,
            rows: Vec::new(),
            offset: Vec::new(),
        }
    }

    /// Dense matrix acting on columns starting at `col_start`.
    pub fn from_dense(ncols: usize, col_start: usize, m: &Mat<f64>) -> Result<Self> {
        let rows = (0..m.nrows())
            .map(|i| MapRow::Dense {
                start: col_start,
                values: (0..m.ncols()).map(|j| m[(i, j)]).collect(),
            })
            .collect();
        Self::new(ncols, rows, vec![0.0; m.nrows()])
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    /// Linear part only.
    pub fn apply_linear(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len(z, self.ncols)?;
        Ok(self
            .rows
            .iter()
            .map(|r| match r {
                MapRow::Dense { start, values } => linalg::dot(values, &z[*start..start + values.len()]),
                MapRow::Separable { slices, space } => slices
                    .iter()
                    .map(|&(c, w)| w * linalg::dot(space, &z[c..c + space.len()]))
                    .sum(),
            })
            .collect())
    }

    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.apply_linear(z)?;
        for (a, b) in y.iter_mut().zip(&self.offset) {
            *a += b;
        }
        Ok(y)
    }

    pub fn apply_transpose(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_len(w, self.rows.len())?;
        let mut out = vec![0.0; self.ncols];
        for (r, &wi) in self.rows.iter().zip(w) {
            if wi == 0.0 {
                continue;
            }
            match r {
                MapRow::Dense { start, values } => linalg::axpy(wi, values, &mut out[*start..start + values.len()]),
                MapRow::Separable { slices, space } => {
                    for &(c, s) in slices {
                        linalg::axpy(wi * s, space, &mut out[c..c + space.len()]);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Dense AᵀA, for preconditioners on small parameter spaces.
    pub fn gram(&self) -> Mat<f64> {
        let n = self.ncols;
        let mut g = Mat::zeros(n, n);
        let mut e = vec![0.0; self.rows.len()];
        let dense: Vec<Vec<f64>> = (0..self.rows.len())
            .map(|i| {
                e[i] = 1.0;
                let r = self.apply_transpose(&e).expect("row length");
                e[i] = 0.0;
                r
            })
            .collect();
        for r in &dense {
            let nz: Vec<usize> = (0..n).filter(|&j| r[j] != 0.0).collect();
            for &a in &nz {
                for &b in &nz {
                    g[(a, b)] += r[a] * r[b];
                }
            }
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_is_consistent() {
        let rows = vec![
            MapRow::Dense { start: 1, values: vec![1.0, -2.0] },
            MapRow::Separable {
                slices: vec![(0, 0.5), (3, 2.0)],
                space: vec![1.0, 1.0, 3.0],
            },
        ];
        let a = LinearMap::new(6, rows, vec![0.1, 0.2]).unwrap();
        let z = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let w = [0.7, -1.3];
        let az = a.apply_linear(&z).unwrap();
        let atw = a.apply_transpose(&w).unwrap();
        let lhs = linalg::dot(&az, &w);
        let rhs = linalg::dot(&z, &atw);
        assert!((lhs - rhs).abs() < 1e-12);
        assert_eq!(az[0], 2.0 - 6.0);
        assert_eq!(az[1], 0.5 * (1.0 + 2.0 + 9.0) + 2.0 * (4.0 + 5.0 + 18.0));
    }
}
