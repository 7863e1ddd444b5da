//! TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchmarks::ThickCylinder;
use crate::discretization::DiscretizationOptions;
use crate::driver::{AmrConfig, RunSettings};
use crate::problem::Problem;
use crate::solver::SolverConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Problems with a closed-form reference solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Benchmark {
    ThickCylinder(ThickCylinder),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadConfig {
    pub steps: usize,
    /// Multiple of the boundary data reached at the last step.
    #[serde(default = "unit")]
    pub total: f64,
}

fn unit() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    #[serde(default = "yes")]
    pub vtk: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { directory: PathBuf::from("output"), vtk: true }
    }
}

/// Exactly one of `problem` and `benchmark` must be given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<Problem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<Benchmark>,
    pub load: LoadConfig,
    pub amr: AmrConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub discretization: DiscretizationOptions,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ProblemConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg: ProblemConfig = toml::from_str(text)?;
        cfg.amr.num_load_steps = cfg.load.steps;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        match (&self.problem, &self.benchmark) {
            (Some(_), Some(_)) => return invalid("give either [problem] or [benchmark], not both".into()),
            (None, None) => return invalid("missing [problem] or [benchmark] section".into()),
            _ => {}
        }
        if !(self.load.total.is_finite()) {
            return invalid(format!("load.total must be finite, got {}", self.load.total));
        }
        if self.amr.num_load_steps != self.load.steps {
            return invalid("amr.num_load_steps must match load.steps".into());
        }
        self.amr.validate().map_err(|m| ConfigError::Invalid(format!("amr: {m}")))?;
        self.solver.validate().map_err(|m| ConfigError::Invalid(format!("solver: {m}")))?;
        if let Some(Benchmark::ThickCylinder(c)) = &self.benchmark {
            if !(c.inner_radius > 0.0 && c.outer_radius > c.inner_radius) {
                return invalid("benchmark: need 0 < inner_radius < outer_radius".into());
            }
            if self.load.total * c.pressure >= c.limit_pressure() {
                return invalid(format!(
                    "benchmark: applied pressure {:e} reaches the limit pressure {:e}",
                    self.load.total * c.pressure,
                    c.limit_pressure()
                ));
            }
        }
        self.problem().validate().map_err(|e| ConfigError::Invalid(format!("problem: {e}")))
    }

    pub fn problem(&self) -> Problem {
        match (&self.problem, &self.benchmark) {
            (Some(p), _) => p.clone(),
            (None, Some(Benchmark::ThickCylinder(c))) => c.problem(),
            (None, None) => panic!("configuration without a problem; call validate first"),
        }
    }

    pub fn cylinder(&self) -> Option<&ThickCylinder> {
        match &self.benchmark {
            Some(Benchmark::ThickCylinder(c)) => Some(c),
            None => None,
        }
    }

    pub fn run_settings(&self) -> RunSettings {
        RunSettings {
            problem: self.problem(),
            amr: self.amr,
            solver: self.solver,
            options: self.discretization,
            total_load: self.load.total,
            output_dir: self.output.vtk.then(|| self.output.directory.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::HistoryFlavor;
    use crate::problem::BcValue;

    const CYLINDER: &str = r#"
[benchmark]
kind = "thick_cylinder"
inner_radius = 0.1
outer_radius = 0.2
pressure = 1.9e8

[benchmark.material]
young = 2.1e11
poisson = 0.3
yield_stress = 2.4e8
yield_normalization = "von_mises"

[load]
steps = 10

[amr]
amr_step_freq = 2
num_amr_steps = 2
eta_max = 0.1
theta_r = 0.1
theta_c = 0.05
max_level = 8
initial_uniform_level = 4

[discretization]
history_flavor = "aggregated"
"#;

    const PATCH: &str = r#"
[problem]
box_size = 1.0
level_set = { kind = "circle", center = [0.5, 0.5], radius = 0.35, tag = "hole" }
material = { young = 1.0e9, poisson = 0.25, yield_stress = 1.0e12 }

[[problem.bcs]]
region = { boundary_tag = "hole" }
kind = "dirichlet_nitsche"
value = { kind = "affine", offset = [0.0, 0.0], gradient = [[1e-3, 0.0], [0.0, -2e-4]] }

[load]
steps = 1

[amr]
max_level = 6
initial_uniform_level = 3

[output]
directory = "patch_out"
vtk = false
"#;

    #[test]
    fn parses_cylinder_config() {
        let cfg = ProblemConfig::from_toml_str(CYLINDER).unwrap();
        let cyl = cfg.cylinder().unwrap();
        assert_eq!(cyl, &ThickCylinder::default());
        assert_eq!(cfg.amr.num_load_steps, 10);
        assert_eq!(cfg.discretization.history_flavor, HistoryFlavor::Aggregated);
        assert!(cfg.discretization.aggregation);
        assert_eq!(cfg.solver, SolverConfig::default());
        assert_eq!(cfg.problem(), cyl.problem());
        assert_eq!(cfg.run_settings().output_dir, Some(PathBuf::from("output")));
    }

    #[test]
    fn parses_explicit_problem() {
        let cfg = ProblemConfig::from_toml_str(PATCH).unwrap();
        let p = cfg.problem();
        assert_eq!(p.bcs.len(), 1);
        assert!(matches!(p.bcs[0].value, BcValue::Affine { .. }));
        assert_eq!(p.nitsche_beta0, 25.0);
        assert_eq!(cfg.run_settings().output_dir, None);
        assert!(cfg.amr.eta_max.is_infinite());
    }

    #[test]
    fn round_trip_is_identity() {
        for text in [CYLINDER, PATCH] {
            let a = ProblemConfig::from_toml_str(text).unwrap();
            let b = ProblemConfig::from_toml_str(&a.to_toml()).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.to_toml(), b.to_toml());
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let text = CYLINDER.replace("theta_c = 0.05", "theta_c = 0.05\ntheta_x = 1.0");
        let err = ProblemConfig::from_toml_str(&text).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, ConfigError::Parse(_)));
        assert!(msg.contains("theta_x") && msg.contains("line"), "{msg}");
        let text = CYLINDER.replace("pressure = 1.9e8", "pressure = 1.9e8\nwall = 3");
        assert!(ProblemConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn semantic_errors_are_reported() {
        let both = format!("{PATCH}\n[benchmark]\nkind = \"thick_cylinder\"\ninner_radius = 0.1\nouter_radius = 0.2\npressure = 1.0\nmaterial = {{ young = 1.0, poisson = 0.3, yield_stress = 1.0 }}\n");
        assert!(matches!(ProblemConfig::from_toml_str(&both), Err(ConfigError::Invalid(_))));
        let over = CYLINDER.replace("pressure = 1.9e8", "pressure = 2.0e8");
        assert!(matches!(ProblemConfig::from_toml_str(&over), Err(ConfigError::Invalid(_))));
        let theta = CYLINDER.replace("theta_r = 0.1", "theta_r = 0.99");
        assert!(matches!(ProblemConfig::from_toml_str(&theta), Err(ConfigError::Invalid(_))));
        let strong = PATCH.replace("dirichlet_nitsche", "dirichlet_strong");
        assert!(matches!(ProblemConfig::from_toml_str(&strong), Err(ConfigError::Invalid(_))));
    }
}
