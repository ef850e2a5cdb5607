use serde::{Deserialize, Serialize};

use super::presets::{find_preset, Preset};
use crate::error::{MfgError, Result};
use crate::inverse::{GnConfig, OuterConfig, OuterMethod};
use crate::rkhs::KernelSpec;
use crate::stationary::{InnerConfig, StationarySolver};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridOverride {
    pub n: Option<usize>,
    pub slices: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationOverride {
    pub m_count: Option<usize>,
    pub v_count: Option<usize>,
    pub noise_sigma: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightOverride {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelOverride {
    pub m: Option<KernelSpec>,
    pub v: Option<KernelSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InnerSection {
    /// Forward solvers to run; the preset's list when absent.
    pub solvers: Option<Vec<StationarySolver>>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for InnerSection {
    fn default() -> Self {
        let d = InnerConfig::default();
        Self {
            solvers: None,
            tol: d.tol,
            max_iter: d.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OuterSection {
    pub methods: Vec<OuterMethod>,
    pub max_iter: usize,
    pub obj_tol: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for OuterSection {
    fn default() -> Self {
        let o = OuterConfig::default();
        Self {
            methods: vec![OuterMethod::Gd, OuterMethod::Gn],
            max_iter: o.max_iter,
            obj_tol: o.obj_tol,
            cg_tol: o.gn.cg_tol,
            cg_max_iter: o.gn.cg_max_iter,
        }
    }
}

impl OuterSection {
    pub fn outer_config(&self) -> OuterConfig {
        OuterConfig {
            max_iter: self.max_iter,
            obj_tol: self.obj_tol,
            gn: GnConfig {
                cg_tol: self.cg_tol,
                cg_max_iter: self.cg_max_iter,
                ..GnConfig::default()
            },
            ..OuterConfig::default()
        }
    }
}

/// An experiment: a catalog preset plus optional overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grid: GridOverride,
    #[serde(default)]
    pub observations: ObservationOverride,
    #[serde(default)]
    pub weights: WeightOverride,
    #[serde(default)]
    pub kernels: KernelOverride,
    #[serde(default)]
    pub inner: InnerSection,
    #[serde(default)]
    pub outer: OuterSection,
}

impl ExperimentConfig {
    pub fn for_preset(id: &str) -> Self {
        Self {
            preset: id.to_string(),
            seed: 0,
            grid: GridOverride::default(),
            observations: ObservationOverride::default(),
            weights: WeightOverride::default(),
            kernels: KernelOverride::default(),
            inner: InnerSection::default(),
            outer: OuterSection::default(),
        }
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| MfgError::Config(e.to_string()))?;
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| MfgError::Config(e.to_string()))
    }

    pub fn inner_config(&self) -> InnerConfig {
        InnerConfig {
            tol: self.inner.tol,
            max_iter: self.inner.max_iter,
        }
    }

    /// The preset with every override applied and validated.
    pub fn resolve(&self) -> Result<Preset> {
        let mut p = find_preset(&self.preset)?;
        if let Some(n) = self.grid.n {
            p.n = n;
        }
        if let Some(s) = self.grid.slices {
            match p.time.as_mut() {
                Some(t) => t.slices = s,
                None => return Err(MfgError::Config("grid.slices given for a stationary preset".into())),
            }
        }
        if let Some(c) = self.observations.m_count {
            p.m_obs.count = c;
        }
        if let Some(c) = self.observations.v_count {
            p.v_obs.count = c;
        }
        if let Some(s) = self.observations.noise_sigma {
            p.noise = s;
        }
        if let Some(a) = self.weights.alpha {
            p.alpha = a;
        }
        if let Some(b) = self.weights.beta {
            p.beta = b;
        }
        if let Some(g) = self.weights.gamma {
            p.gamma = g;
        }
        if let Some(k) = &self.kernels.m {
            p.kernel_m = k.clone();
        }
        if let Some(k) = &self.kernels.v {
            p.kernel_v = k.clone();
        }
        if let Some(s) = &self.inner.solvers {
            p.solvers = s.clone();
        }
        self.validate(&p)?;
        Ok(p)
    }

    fn validate(&self, p: &Preset) -> Result<()> {
        let bad = |m: String| Err(MfgError::Config(m));
        if p.n < 3 {
            return bad(format!("grid.n must be at least 3, got {}", p.n));
        }
        if p.solvers.is_empty() {
            return bad("inner.solvers is empty".into());
        }
        if p.is_timedep() && p.solvers.contains(&StationarySolver::Policy) {
            return bad("policy iteration is only available for stationary presets".into());
        }
        if self.outer.methods.is_empty() {
            return bad("outer.methods is empty".into());
        }
        for (name, v) in [("alpha", p.alpha), ("beta", p.beta), ("gamma", p.gamma), ("noise_sigma", p.noise)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a nonnegative number, got {v}"));
            }
        }
        if !(self.inner.tol > 0.0) || !(self.outer.obj_tol > 0.0) {
            return bad("tolerances must be positive".into());
        }
        p.kernel_m.kind.validate()?;
        p.kernel_v.kind.validate()?;
        if p.kernel_m.kind.is_spacetime() != p.is_timedep() {
            return bad("the m kernel must be a spacetime_product kernel exactly when the preset is time-dependent".into());
        }
        if p.kernel_v.kind.is_spacetime() {
            return bad("the V kernel must be spatial".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_overrides_apply() {
        let s = r#"
preset = "stationary-2d-congestion"
seed = 7
[grid]
n = 12
[weights]
alpha = 0.5
[outer]
methods = ["gn"]
max_iter = 3
"#;
        let c = ExperimentConfig::from_toml(s).unwrap();
        let p = c.resolve().unwrap();
        assert_eq!(p.n, 12);
        assert_eq!(p.alpha, 0.5);
        assert_eq!(p.beta, 2.0);
        assert_eq!(c.outer.methods, vec![OuterMethod::Gn]);
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("preset = \"timedep-1d\"\nsed = 1\n").is_err());
        assert!(ExperimentConfig::from_toml("preset = \"timedep-1d\"\n[grid]\nm = 3\n").is_err());
        assert!(ExperimentConfig::from_toml("preset = \"no-such-preset\"\n").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = ExperimentConfig::for_preset("timedep-1d");
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn policy_is_rejected_for_timedep() {
        let s = "preset = \"timedep-1d\"\n[inner]\nsolvers = [\"policy\"]\n";
        assert!(ExperimentConfig::from_toml(s).is_err());
    }
}
