//! TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wgflow::stepper::Initializer;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub discretization: DiscretizationConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// Exponent of the internal energy; absent means no diffusion.
    #[serde(default)]
    pub m: Option<f64>,
    #[serde(default)]
    pub domain: DomainConfig,
    #[serde(default)]
    pub external: PotentialConfig,
    #[serde(default)]
    pub interaction: PotentialConfig,
    pub initial: InitialConfig,
    #[serde(default)]
    pub reference: Option<ReferenceName>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainConfig {
    #[default]
    Line,
    Interval {
        a: f64,
        b: f64,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialConfig {
    #[default]
    Zero,
    /// `strength · x² / 2`.
    Quadratic { strength: f64 },
    /// `(x² - 1)² / 4`, growth audited on `[-radius, radius]`.
    DoubleWell { radius: f64 },
    /// `strength · exp(-x² / 2)`.
    GaussianKernel { strength: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    Uniform {
        a: f64,
        b: f64,
    },
    Gaussian {
        mean: f64,
        var: f64,
    },
    /// Unit-mass Barenblatt profile (`m = 2`) at time `t0`.
    Barenblatt {
        t0: f64,
    },
    /// `15 (1 - y²)² / (16 radius)` with `y = (x - center) / radius`.
    Bump {
        center: f64,
        radius: f64,
    },
    /// Every sample at `x`.
    Point {
        x: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceName {
    GaussianHeat,
    OrnsteinUhlenbeck,
    BarenblattM2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeChoice {
    Jko,
    #[default]
    Bdf2,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationConfig {
    pub n: usize,
    pub tau: f64,
    pub t_end: f64,
    #[serde(default)]
    pub scheme: SchemeChoice,
    #[serde(default)]
    pub initializer: Initializer,
    /// Time steps swept by `compare`; defaults to `tau`, `tau/2`, `tau/4`, `tau/8`.
    #[serde(default)]
    pub taus: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub grad_tol: f64,
    pub max_iters: usize,
    pub min_gap: f64,
    pub d2: f64,
    pub override_tau_guard: bool,
    pub monitor_lower_bound: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-9,
            max_iters: 500,
            min_gap: 0.0,
            d2: 1.0,
            override_tau_guard: false,
            monitor_lower_bound: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub enabled: bool,
    pub el_tolerance: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            el_tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub format: OutputFormat,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("wgflow-out"),
            format: OutputFormat::Csv,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Range and consistency checks that the schema cannot express.
    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |msg: String| Err(CliError::Validation(msg));
        let d = &self.discretization;
        if d.n < 2 {
            return fail(format!("discretization.n must be at least 2, got {}", d.n));
        }
        if !(d.tau > 0.0 && d.tau.is_finite()) {
            return fail(format!("discretization.tau must be positive, got {}", d.tau));
        }
        if !(d.t_end > 0.0 && d.t_end.is_finite()) {
            return fail(format!("discretization.t_end must be positive, got {}", d.t_end));
        }
        if let Some(taus) = &d.taus {
            if taus.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
                return fail("discretization.taus must all be positive".into());
            }
        }
        let o = &self.optimizer;
        if !(o.grad_tol > 0.0) {
            return fail(format!("optimizer.grad_tol must be positive, got {}", o.grad_tol));
        }
        if o.max_iters < 1 {
            return fail("optimizer.max_iters must be at least 1".into());
        }
        if !(o.min_gap >= 0.0) || !(o.d2 >= 0.0 && o.d2.is_finite()) {
            return fail("optimizer.min_gap and optimizer.d2 must be non-negative".into());
        }
        if !(self.diagnostics.el_tolerance > 0.0) {
            return fail("diagnostics.el_tolerance must be positive".into());
        }
        Ok(())
    }

    /// Time steps for `compare`, strictly decreasing.
    pub fn sweep(&self) -> Vec<f64> {
        let mut taus = self.discretization.taus.clone().unwrap_or_else(|| {
            let tau = self.discretization.tau;
            vec![tau, tau / 2.0, tau / 4.0, tau / 8.0]
        });
        taus.sort_by(|a, b| b.total_cmp(a));
        taus.dedup();
        taus
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEAT: &str = r#"
[problem]
m = 1.0
initial = { name = "gaussian", mean = 0.0, var = 1.0 }
reference = "gaussian_heat"

[discretization]
n = 50
tau = 0.01
t_end = 0.1
scheme = "both"
initializer = "jko-substep"
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = RunConfig::from_toml(HEAT).unwrap();
        assert_eq!(cfg.problem.m, Some(1.0));
        assert_eq!(cfg.problem.domain, DomainConfig::Line);
        assert_eq!(cfg.problem.external, PotentialConfig::Zero);
        assert_eq!(cfg.problem.initial, InitialConfig::Gaussian { mean: 0.0, var: 1.0 });
        assert_eq!(cfg.discretization.scheme, SchemeChoice::Both);
        assert_eq!(cfg.discretization.initializer, Initializer::JkoSubstep);
        assert_eq!(cfg.optimizer, OptimizerConfig::default());
        assert_eq!(cfg.output.format, OutputFormat::Csv);
        assert_eq!(cfg.sweep(), vec![0.01, 0.005, 0.0025, 0.00125]);
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::from_toml(HEAT).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_names_and_keys() {
        let bad_potential = HEAT.replace("m = 1.0", "m = 1.0\nexternal = { name = \"cubic\", strength = 1.0 }");
        assert!(matches!(
            RunConfig::from_toml(&bad_potential),
            Err(CliError::Validation(_))
        ));
        let bad_key = HEAT.replace("n = 50", "n = 50\nsteps = 3");
        assert!(matches!(RunConfig::from_toml(&bad_key), Err(CliError::Validation(_))));
        let bad_param = HEAT.replace("var = 1.0", "var = 1.0, skew = 2.0");
        assert!(matches!(RunConfig::from_toml(&bad_param), Err(CliError::Validation(_))));
        let bad_reference = HEAT.replace("gaussian_heat", "heat");
        assert!(matches!(
            RunConfig::from_toml(&bad_reference),
            Err(CliError::Validation(_))
        ));
    }

    #[test]
    fn rejects_nonpositive_sizes() {
        for (from, to) in [
            ("n = 50", "n = 1"),
            ("tau = 0.01", "tau = 0.0"),
            ("t_end = 0.1", "t_end = -1.0"),
        ] {
            let text = HEAT.replace(from, to);
            assert!(
                matches!(RunConfig::from_toml(&text), Err(CliError::Validation(_))),
                "{to}"
            );
        }
    }
}
