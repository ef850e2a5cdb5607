//! Catalog presets and the end-to-end pipeline: reference solve, synthetic
//! observations, outer optimization and result bundles.

mod config;
mod metrics;
mod output;
mod presets;
mod synth;

use std::time::Instant;

pub use config::{ExperimentConfig, GridOverride, InnerSection, KernelOverride, ObservationOverride, OuterSection, WeightOverride};
pub use metrics::{field_errors, full_fields, l2_error, linf_error, spacings, FieldErrors};
pub use output::{FieldRecord, ReferenceSummary, ResultBundle, RunSummary, Summary};
pub use presets::{
    find_preset, preset_catalog, CostFormula, CouplingSpec, HamiltonianSpec, InitialDensity, ObservationSpec, Placement, Preset, TerminalValue, TimeSpec,
};
pub use synth::{place_targets, synthesize, ObservationModel, SyntheticData};

use crate::error::{MfgError, Result};
use crate::inverse::{run_outer, EquilibriumConstraint, OuterMethod, OuterResult, ReducedObjective, StationaryConstraint, TimeDependentConstraint, TimeSolver};
use crate::models::MfgProblem;
use crate::rkhs::ObservationSet;
use crate::stationary::{InnerConfig, StationarySolver};

/// The equilibrium constraint for `problem` solved with `solver`.
pub fn build_constraint(problem: &MfgProblem, solver: StationarySolver, inner: InnerConfig) -> Result<Box<dyn EquilibriumConstraint>> {
    if problem.time.is_none() {
        return Ok(Box::new(StationaryConstraint::new(problem.clone(), solver, inner)));
    }
    let ts = match solver {
        StationarySolver::Hrf => TimeSolver::Hrf,
        StationarySolver::Newton => TimeSolver::Newton,
        StationarySolver::Policy => return Err(MfgError::Config("policy iteration is only available for stationary problems".into())),
    };
    Ok(Box::new(TimeDependentConstraint::new(problem.clone(), ts, inner.tol, inner.max_iter)?))
}

#[derive(Debug, Clone)]
pub struct Reference {
    pub z: Vec<f64>,
    pub theta: Vec<f64>,
    pub lambda: Option<f64>,
    pub summary: ReferenceSummary,
}

/// Forward solve at the true cost with the first configured solver.
pub fn reference_solve(preset: &Preset, problem: &MfgProblem, inner: InnerConfig) -> Result<Reference> {
    let solver = preset.solvers[0];
    let c = build_constraint(problem, solver, inner)?;
    let theta = problem.cost.clone();
    let sol = c.solve(&theta, None)?;
    let lambda = c.lambda(&sol.z, &theta)?;
    Ok(Reference {
        summary: ReferenceSummary {
            solver,
            lambda,
            iterations: sol.iterations,
            residual_norm: sol.residual_norm,
        },
        z: sol.z,
        theta,
        lambda,
    })
}

/// A prepared experiment: everything except the outer runs.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub preset: Preset,
    pub problem: MfgProblem,
    pub reference: Reference,
    pub data: SyntheticData,
}

impl Experiment {
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        let preset = config.resolve()?;
        let problem = preset.problem(None)?;
        let reference = reference_solve(&preset, &problem, config.inner_config())?;
        log::info!(
            "reference solve for {}: {} iterations, residual {:e}, lambda {:?}",
            preset.id,
            reference.summary.iterations,
            reference.summary.residual_norm,
            reference.lambda
        );
        let data = synthesize(&preset, &problem, &reference.z, config.seed)?;
        Ok(Self {
            config: config.clone(),
            preset,
            problem,
            reference,
            data,
        })
    }

    /// Replace the synthetic observations with externally supplied ones.
    pub fn with_observations(mut self, m_obs: ObservationSet, v_obs: ObservationSet) -> Result<Self> {
        let model = ObservationModel::new(&self.preset, &self.problem, self.reference.z.len(), &m_obs.targets, &v_obs.targets)?;
        self.data = SyntheticData { m_obs, v_obs, model };
        Ok(self)
    }

    pub fn objective(&self) -> ReducedObjective {
        ReducedObjective {
            w: self.data.model.w.clone(),
            z_obs: self.data.m_obs.values.clone(),
            g: self.data.model.g.clone(),
            theta_obs: self.data.v_obs.values.clone(),
            j: self.data.model.v_gram.j_matrix(),
            alpha: self.preset.alpha,
            beta: self.preset.beta,
            gamma: self.preset.gamma,
        }
    }

    /// One outer run from θ ≡ 0.
    pub fn invert(&self, solver: StationarySolver, method: OuterMethod, objective: &ReducedObjective) -> Result<OuterResult> {
        let c = build_constraint(&self.problem, solver, self.config.inner_config())?;
        let theta0 = vec![0.0; self.problem.grid.len()];
        run_outer(c.as_ref(), objective, method, &theta0, &self.config.outer.outer_config())
    }

    fn reference_fields(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        full_fields(&self.problem, &self.reference.z)
    }

    /// Every configured (solver, method) pair, bundled.
    pub fn run(&self) -> Result<ResultBundle> {
        let objective = self.objective();
        let (m_ref, u_ref) = self.reference_fields()?;
        let (st, sp) = spacings(&self.problem);
        let mut fields = vec![
            FieldRecord::on_grid("reference_m", &self.problem, m_ref.clone()),
            FieldRecord::on_grid("reference_u", &self.problem, u_ref.clone()),
            FieldRecord::on_grid("reference_v", &self.problem, self.reference.theta.clone()),
        ];
        let mut runs = Vec::new();
        let mut traces = Vec::new();
        for &solver in &self.preset.solvers {
            for &method in &self.config.outer.methods {
                let start = Instant::now();
                let res = self.invert(solver, method, &objective)?;
                let seconds = start.elapsed().as_secs_f64();
                let (m, u) = full_fields(&self.problem, &res.z)?;
                let errors = field_errors(
                    &self.problem,
                    (&m, &u, &res.theta, res.lambda),
                    (&m_ref, &u_ref, &self.reference.theta, self.reference.lambda),
                )?;
                let run = RunSummary {
                    solver,
                    method,
                    converged: res.converged,
                    iterations: res.iterations,
                    objective: res.trace.objectives().last().copied().unwrap_or(f64::NAN),
                    lambda: res.lambda,
                    errors,
                    inner_iterations: res.trace.rows.iter().map(|r| r.inner_iters).sum(),
                    seconds,
                };
                log::info!(
                    "{} {}: {} iterations, converged {}, m error {:e}, V error {:e}, lambda {:?}",
                    self.preset.id,
                    run.label(),
                    run.iterations,
                    run.converged,
                    errors.m_l2,
                    errors.v_l2,
                    run.lambda
                );
                let label = run.label();
                fields.push(FieldRecord::on_grid(&format!("{label}_m"), &self.problem, m));
                fields.push(FieldRecord::on_grid(&format!("{label}_u"), &self.problem, u));
                fields.push(FieldRecord::on_grid(&format!("{label}_v"), &self.problem, res.theta.clone()));
                traces.push((label, res.trace));
                runs.push(run);
            }
        }
        let mut bundle = ResultBundle {
            summary: Summary {
                preset: self.preset.id.clone(),
                seed: self.config.seed,
                config: self.config.clone(),
                field_spacings: st,
                cost_spacings: sp,
                reference: self.reference.summary.clone(),
                runs,
                fields: Vec::new(),
                content_hash: String::new(),
            },
            fields,
            traces,
            m_obs: self.data.m_obs.clone(),
            v_obs: self.data.v_obs.clone(),
        };
        bundle.seal();
        Ok(bundle)
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultBundle> {
    Experiment::prepare(config)?.run()
}
