//! Named potentials, initial densities and reference solutions.

use wgflow::reference::{self, AnalyticSolution};
use wgflow::{DomainSpec, EnergySpec, PotentialHandle, QuantileMeasure};

use crate::config::{DomainConfig, InitialConfig, PotentialConfig, ProblemConfig, ReferenceName};
use crate::error::{invalid, CliError};

pub fn domain(cfg: &DomainConfig) -> Result<DomainSpec, CliError> {
    match *cfg {
        DomainConfig::Line => Ok(DomainSpec::Line),
        DomainConfig::Interval { a, b } => DomainSpec::interval(a, b).map_err(invalid),
    }
}

pub fn potential(cfg: &PotentialConfig) -> Option<PotentialHandle> {
    match *cfg {
        PotentialConfig::Zero => None,
        PotentialConfig::Quadratic { strength } => Some(PotentialHandle::quadratic(strength)),
        PotentialConfig::DoubleWell { radius } => Some(PotentialHandle::double_well(radius)),
        PotentialConfig::GaussianKernel { strength } => Some(PotentialHandle::gaussian_kernel(strength)),
    }
}

/// Energy of the problem, with every potential audited on a window around
/// the initial support (the domain itself when bounded).
pub fn energy_spec(problem: &ProblemConfig, initial: &QuantileMeasure) -> Result<EnergySpec, CliError> {
    let mut spec = EnergySpec::zero();
    if let Some(m) = problem.m {
        spec = spec.internal(m).map_err(invalid)?;
    }
    let x = initial.positions();
    let reach = x[0].abs().max(x[x.len() - 1].abs());
    let (lo, hi) = match initial.domain() {
        DomainSpec::Interval { a, b } => (a.min(a - b), b.max(b - a)),
        DomainSpec::Line => (-2.0 * reach - 1.0, 2.0 * reach + 1.0),
    };
    if let Some(v) = potential(&problem.external) {
        v.audit(lo, hi).map_err(invalid)?;
        spec = spec.external(v);
    }
    if let Some(w) = potential(&problem.interaction) {
        w.audit(lo, hi).map_err(invalid)?;
        spec = spec.interaction(w).map_err(invalid)?;
    }
    Ok(spec)
}

pub fn initial_measure(problem: &ProblemConfig, n: usize) -> Result<QuantileMeasure, CliError> {
    let domain = domain(&problem.domain)?;
    let mu = match problem.initial {
        InitialConfig::Uniform { a, b } => {
            if !(a < b) {
                return Err(CliError::Validation(format!(
                    "uniform initial density needs a < b, got [{a}, {b}]"
                )));
            }
            let x = (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect();
            QuantileMeasure::from_quantiles(x, domain)
        }
        InitialConfig::Gaussian { mean, var } => {
            let g = reference::gaussian_heat(0.0, mean, var).map_err(invalid)?;
            QuantileMeasure::from_density(|x| g.density(x), domain, n)
        }
        InitialConfig::Barenblatt { t0 } => {
            let b = reference::barenblatt_m2(t0, reference::barenblatt_unit_mass_constant()).map_err(invalid)?;
            QuantileMeasure::from_density(|x| b.density(x), domain, n)
        }
        InitialConfig::Bump { center, radius } => {
            if !(radius > 0.0) {
                return Err(CliError::Validation(format!(
                    "bump radius must be positive, got {radius}"
                )));
            }
            let bump = move |x: f64| {
                let y = (x - center) / radius;
                if y.abs() < 1.0 {
                    15.0 / 16.0 * (1.0 - y * y).powi(2) / radius
                } else {
                    0.0
                }
            };
            QuantileMeasure::from_density(bump, domain, n)
        }
        InitialConfig::Point { x } => QuantileMeasure::from_quantiles(vec![x; n], domain),
    };
    mu.map_err(invalid)
}

/// Exact solution used to score a run.
#[derive(Debug, Clone, Copy)]
pub enum Reference {
    Density(AnalyticSolution),
    /// A single particle at this position.
    Particle(f64),
}

impl Reference {
    pub fn l1_error(&self, mu: &QuantileMeasure) -> Option<f64> {
        match self {
            Reference::Density(exact) => reference::l1_error(mu, exact).ok(),
            Reference::Particle(_) => None,
        }
    }

    pub fn w2_error(&self, mu: &QuantileMeasure) -> f64 {
        match self {
            Reference::Density(exact) => reference::w2_error(mu, exact),
            Reference::Particle(x) => reference::w2_to_point(mu, *x),
        }
    }
}

/// The named reference at elapsed time `t`, checked against the initial
/// density it must start from.
pub fn reference_at(problem: &ProblemConfig, name: ReferenceName, t: f64) -> Result<Reference, CliError> {
    let mismatch = || {
        CliError::Validation(format!(
            "reference {name:?} does not match initial density {:?}",
            problem.initial
        ))
    };
    match (name, problem.initial) {
        (ReferenceName::GaussianHeat, InitialConfig::Gaussian { mean, var }) => reference::gaussian_heat(t, mean, var)
            .map(Reference::Density)
            .map_err(invalid),
        (ReferenceName::OrnsteinUhlenbeck, InitialConfig::Gaussian { mean, var }) => {
            reference::ornstein_uhlenbeck(t, mean, var)
                .map(Reference::Density)
                .map_err(invalid)
        }
        (ReferenceName::OrnsteinUhlenbeck, InitialConfig::Point { x }) => Ok(Reference::Particle(x * (-t).exp())),
        (ReferenceName::BarenblattM2, InitialConfig::Barenblatt { t0 }) => {
            reference::barenblatt_m2(t0 + t, reference::barenblatt_unit_mass_constant())
                .map(Reference::Density)
                .map_err(invalid)
        }
        _ => Err(mismatch()),
    }
}
