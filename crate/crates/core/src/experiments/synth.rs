//! Observation placement, observation operators and noisy synthetic data.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::presets::{ObservationSpec, Placement, Preset};
use crate::error::{MfgError, Result};
use crate::grid::TorusGrid;
use crate::inverse::{LinearMap, MapRow};
use crate::linalg;
use crate::models::MfgProblem;
use crate::rkhs::{GramModel, ObservationSet, ObservedField, Point};

/// The observation operators of an experiment.
#[derive(Debug, Clone)]
pub struct ObservationModel {
    pub m_gram: GramModel,
    pub v_gram: GramModel,
    /// Acts on the equilibrium state z.
    pub w: LinearMap,
    /// Acts on θ = V_h.
    pub g: LinearMap,
}

impl ObservationModel {
    pub fn new(preset: &Preset, problem: &MfgProblem, state_len: usize, m_targets: &[Point], v_targets: &[Point]) -> Result<Self> {
        let grid = problem.grid;
        let v_gram = GramModel::spatial(&preset.kernel_v, &grid)?;
        let g_rows = v_targets
            .iter()
            .map(|p| MapRow::Dense {
                start: 0,
                values: v_gram.recovery_row(p),
            })
            .collect();
        let g = LinearMap::new(grid.len(), g_rows, vec![0.0; v_targets.len()])?;
        let (m_gram, w) = match &problem.time {
            None => {
                let gram = GramModel::spatial(&preset.kernel_m, &grid)?;
                let rows = m_targets
                    .iter()
                    .map(|p| MapRow::Dense {
                        start: 0,
                        values: gram.recovery_row(p),
                    })
                    .collect();
                let w = LinearMap::new(state_len, rows, vec![0.0; m_targets.len()])?;
                (gram, w)
            }
            Some(td) => {
                let nt = td.slices;
                let times: Vec<f64> = (0..=nt).map(|k| k as f64 * td.dt()).collect();
                let gram = GramModel::spacetime(&preset.kernel_m, &grid, times)?;
                let n = grid.len();
                let mut rows = Vec::with_capacity(m_targets.len());
                let mut offset = Vec::with_capacity(m_targets.len());
                for p in m_targets {
                    let (wt, space) = gram.separable_row(p);
                    // Slice 0 is the prescribed m₀ and folds into the offset.
                    offset.push(wt[0] * linalg::dot(&space, &td.m0));
                    rows.push(MapRow::Separable {
                        slices: (1..=nt).map(|k| ((k - 1) * n, wt[k])).collect(),
                        space,
                    });
                }
                (gram, LinearMap::new(state_len, rows, offset)?)
            }
        };
        Ok(Self { m_gram, v_gram, w, g })
    }
}

fn node_point(grid: &TorusGrid, idx: usize, t: f64) -> Point {
    Point::spacetime(grid.coords(idx), t)
}

/// Observation targets for one field. `time` is (horizon, slices) when the
/// targets live in space-time.
pub fn place_targets(spec: &ObservationSpec, grid: &TorusGrid, time: Option<(f64, usize)>, rng: &mut ChaCha8Rng) -> Result<Vec<Point>> {
    let n = grid.len();
    // Candidate nodes: spatial nodes, or space-time nodes with t > 0.
    let (total, node) = match time {
        None => (n, Box::new(|i: usize| node_point(grid, i, 0.0)) as Box<dyn Fn(usize) -> Point>),
        Some((horizon, nt)) => {
            let dt = horizon / nt as f64;
            (n * nt, Box::new(move |i: usize| node_point(grid, i % n, (i / n + 1) as f64 * dt)) as Box<dyn Fn(usize) -> Point>)
        }
    };
    let count = spec.count;
    let too_many = || MfgError::Config(format!("{count} observations requested but only {total} candidate nodes"));
    Ok(match spec.placement {
        Placement::GridEven => {
            if count > total {
                return Err(too_many());
            }
            (0..count).map(|i| node(((2 * i + 1) * total) / (2 * count))).collect()
        }
        Placement::GridRandom => {
            if count > total {
                return Err(too_many());
            }
            let mut idx = sample(rng, total, count).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(node).collect()
        }
        Placement::UniformRandom => (0..count)
            .map(|_| {
                let x = rng.gen::<f64>();
                let y = if grid.dim() == 2 { rng.gen::<f64>() } else { 0.0 };
                let t = time.map_or(0.0, |(h, _)| h * rng.gen::<f64>());
                Point::spacetime([x, y], t)
            })
            .collect(),
        Placement::BoundarySlices => {
            let (horizon, _) = time.ok_or_else(|| MfgError::Config("boundary_slices placement needs a time-dependent preset".into()))?;
            if count != 2 * n {
                return Err(MfgError::Config(format!("boundary_slices places exactly {} observations, {count} requested", 2 * n)));
            }
            (0..n).map(|i| node_point(grid, i, 0.0)).chain((0..n).map(|i| node_point(grid, i, horizon))).collect()
        }
    })
}

fn add_noise(values: &mut [f64], sigma: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| MfgError::InvalidInput(e.to_string()))?;
    for v in values {
        *v += normal.sample(rng);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub m_obs: ObservationSet,
    pub v_obs: ObservationSet,
    pub model: ObservationModel,
}

/// Observe the reference equilibrium `z_ref` through the m kernel and the
/// closed-form cost directly, then add seeded Gaussian noise.
pub fn synthesize(preset: &Preset, problem: &MfgProblem, z_ref: &[f64], seed: u64) -> Result<SyntheticData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let time = problem.time.as_ref().map(|t| (t.horizon, t.slices));
    let m_targets = place_targets(&preset.m_obs, &problem.grid, time, &mut rng)?;
    let v_targets = place_targets(&preset.v_obs, &problem.grid, None, &mut rng)?;
    let model = ObservationModel::new(preset, problem, z_ref.len(), &m_targets, &v_targets)?;
    let mut m_values = model.w.apply(z_ref)?;
    let mut v_values: Vec<f64> = v_targets.iter().map(|p| preset.cost.eval(p.x)).collect();
    add_noise(&mut m_values, preset.noise, &mut rng)?;
    add_noise(&mut v_values, preset.noise, &mut rng)?;
    Ok(SyntheticData {
        m_obs: ObservationSet::new(ObservedField::M, m_targets, m_values, preset.noise)?,
        v_obs: ObservationSet::new(ObservedField::V, v_targets, v_values, preset.noise)?,
        model,
    })
}
