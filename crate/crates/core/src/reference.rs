//! Closed-form solutions and error metrics.
//!
//! * heat flow (`m = 1`, no potentials): Gaussian with variance `var0 + 2t`;
//! * Ornstein–Uhlenbeck (`m = 1`, `V = x²/2`): mean `mean0 e^-t`, variance
//!   `1 + (var0 - 1) e^-2t`;
//! * porous medium (`m = 2`): Barenblatt profile
//!   `t^(-1/3) max(C - x² t^(-2/3) / 12, 0)`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::measure::{DomainSpec, QuantileMeasure};
use crate::quadrature::GaussLegendre;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticKind {
    GaussianHeat { mean0: f64, var0: f64 },
    OrnsteinUhlenbeck { mean0: f64, var0: f64 },
    BarenblattM2 { mass_constant: f64 },
}

/// An exact solution frozen at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticSolution {
    pub kind: AnalyticKind,
    pub t: f64,
}

fn check_variance(var0: f64) -> Result<()> {
    if var0 > 0.0 && var0.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "initial variance must be positive, got {var0}"
        )))
    }
}

pub fn gaussian_heat(t: f64, mean0: f64, var0: f64) -> Result<AnalyticSolution> {
    check_variance(var0)?;
    if !(t >= 0.0) {
        return Err(Error::NonpositiveTime(t));
    }
    Ok(AnalyticSolution {
        kind: AnalyticKind::GaussianHeat { mean0, var0 },
        t,
    })
}

pub fn ornstein_uhlenbeck(t: f64, mean0: f64, var0: f64) -> Result<AnalyticSolution> {
    check_variance(var0)?;
    if !(t >= 0.0) {
        return Err(Error::NonpositiveTime(t));
    }
    Ok(AnalyticSolution {
        kind: AnalyticKind::OrnsteinUhlenbeck { mean0, var0 },
        t,
    })
}

/// Barenblatt profile with constant `C`; unit mass needs
/// [`barenblatt_unit_mass_constant`].
pub fn barenblatt_m2(t: f64, mass_constant: f64) -> Result<AnalyticSolution> {
    if !(t > 0.0) {
        return Err(Error::NonpositiveTime(t));
    }
    if !(mass_constant > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "mass constant must be positive, got {mass_constant}"
        )));
    }
    Ok(AnalyticSolution {
        kind: AnalyticKind::BarenblattM2 { mass_constant },
        t,
    })
}

/// `C` with `(4/3) sqrt(12) C^(3/2) = 1`.
pub fn barenblatt_unit_mass_constant() -> f64 {
    (3.0 / (4.0 * 12f64.sqrt())).powf(2.0 / 3.0)
}

impl AnalyticSolution {
    /// `(mean, variance)` for the Gaussian families.
    pub fn gaussian_moments(&self) -> Option<(f64, f64)> {
        let t = self.t;
        match self.kind {
            AnalyticKind::GaussianHeat { mean0, var0 } => Some((mean0, var0 + 2.0 * t)),
            AnalyticKind::OrnsteinUhlenbeck { mean0, var0 } => {
                Some((mean0 * (-t).exp(), 1.0 + (var0 - 1.0) * (-2.0 * t).exp()))
            }
            AnalyticKind::BarenblattM2 { .. } => None,
        }
    }

    fn normal(&self) -> Option<Normal> {
        self.gaussian_moments()
            .map(|(m, v)| Normal::new(m, v.sqrt()).expect("variance is positive"))
    }

    /// Support half-width of the Barenblatt profile.
    pub fn support_radius(&self) -> Option<f64> {
        match self.kind {
            AnalyticKind::BarenblattM2 { mass_constant } => Some((12.0 * mass_constant).sqrt() * self.t.cbrt()),
            _ => None,
        }
    }

    /// Total mass; 1 for the Gaussians.
    pub fn mass(&self) -> f64 {
        match self.kind {
            AnalyticKind::BarenblattM2 { mass_constant } => 4.0 / 3.0 * 12f64.sqrt() * mass_constant.powf(1.5),
            _ => 1.0,
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        match self.kind {
            AnalyticKind::BarenblattM2 { mass_constant } => {
                let t13 = self.t.cbrt();
                (mass_constant - x * x / (12.0 * t13 * t13)).max(0.0) / t13
            }
            _ => self.normal().expect("gaussian").pdf(x),
        }
    }

    /// Mass to the left of `x`.
    pub fn cdf(&self, x: f64) -> f64 {
        match self.kind {
            AnalyticKind::BarenblattM2 { mass_constant } => {
                let r = (12.0 * mass_constant).sqrt();
                let y = (x / self.t.cbrt()).clamp(-r, r);
                mass_constant * (y + r) - (y.powi(3) + r.powi(3)) / 36.0
            }
            _ => self.normal().expect("gaussian").cdf(x),
        }
    }

    /// Quantile function at level `s` in `[0, 1]` (relative to the mass).
    pub fn quantile(&self, s: f64) -> f64 {
        match self.kind {
            AnalyticKind::BarenblattM2 { .. } => {
                let r = self.support_radius().expect("compact support");
                let target = s.clamp(0.0, 1.0) * self.mass();
                let (mut lo, mut hi) = (-r, r);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.cdf(mid) < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 4.0 * f64::EPSILON * r {
                        break;
                    }
                }
                0.5 * (lo + hi)
            }
            _ => self.normal().expect("gaussian").inverse_cdf(s),
        }
    }

    /// Points where the density is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.support_radius().map_or_else(Vec::new, |r| vec![-r, r])
    }

    /// Quantile discretization with `n` samples on the real line.
    pub fn discretize(&self, n: usize) -> Result<QuantileMeasure> {
        QuantileMeasure::from_density(|x| self.density(x), DomainSpec::Line, n)
    }
}

/// `sqrt((m1 - m2)² + (sqrt(v1) - sqrt(v2))²)`.
pub fn w2_gaussians(mean1: f64, var1: f64, mean2: f64, var2: f64) -> f64 {
    let dm = mean1 - mean2;
    let ds = var1.sqrt() - var2.sqrt();
    (dm * dm + ds * ds).sqrt()
}

/// Terminal `W2` error. For the Gaussian families the discrete state is
/// compared through its mean and variance; for the Barenblatt profile the
/// quantile functions are compared at the grid levels.
pub fn w2_error(mu: &QuantileMeasure, exact: &AnalyticSolution) -> f64 {
    match exact.gaussian_moments() {
        Some((mean, var)) => w2_gaussians(mu.mean(), mu.variance(), mean, var),
        None => {
            let n = mu.len();
            let sq: f64 = mu
                .positions()
                .iter()
                .zip(mu.weights())
                .enumerate()
                .map(|(i, (x, w))| w * (x - exact.quantile(i as f64 / (n - 1) as f64)).powi(2))
                .sum();
            sq.sqrt()
        }
    }
}

/// `W2(μ, δ_x)`.
pub fn w2_to_point(mu: &QuantileMeasure, x: f64) -> f64 {
    mu.positions()
        .iter()
        .zip(mu.weights())
        .map(|(y, w)| w * (y - x).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `∫ |ρ_μ - ρ_exact| dx` with the discrete density piecewise constant.
pub fn l1_error(mu: &QuantileMeasure, exact: &AnalyticSolution) -> Result<f64> {
    let rho = mu.reconstruct_density().map_err(|e| match e {
        Error::ZeroGap { index } => Error::SingularMeasure { index },
        other => other,
    })?;
    let x = mu.positions();
    let (first, last) = (x[0], x[x.len() - 1]);
    let rule = GaussLegendre::new(8);

    // exact mass outside the discrete support
    let mut err = exact.cdf(first) + (exact.mass() - exact.cdf(last));
    let mut cuts: Vec<f64> = exact
        .breakpoints()
        .into_iter()
        .filter(|b| *b > first && *b < last)
        .collect();
    cuts.sort_by(f64::total_cmp);
    let mut c = 0;
    for (a, b, v) in rho.cells() {
        let mut left = a;
        while c < cuts.len() && cuts[c] <= left {
            c += 1;
        }
        let mut edges = vec![a];
        while c < cuts.len() && cuts[c] < b {
            edges.push(cuts[c]);
            c += 1;
        }
        edges.push(b);
        for pair in edges.windows(2) {
            left = pair[0];
            let right = pair[1];
            let mid = 0.5 * (left + right);
            err += rule.integrate(left, mid, |y| (v - exact.density(y)).abs());
            err += rule.integrate(mid, right, |y| (v - exact.density(y)).abs());
        }
    }
    Ok(err)
}

/// Least-squares slope of `log(error)` against `log(tau)`.
pub fn empirical_order(taus: &[f64], errors: &[f64]) -> Result<f64> {
    if taus.len() != errors.len() || taus.len() < 3 {
        return Err(Error::DegenerateInput(format!(
            "need at least 3 matching (tau, error) pairs, got {} and {}",
            taus.len(),
            errors.len()
        )));
    }
    if taus.windows(2).any(|p| !(p[1] < p[0])) || taus.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::DegenerateInput(
            "time steps must be positive and strictly decreasing".into(),
        ));
    }
    if errors.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::DegenerateInput("errors must be positive and finite".into()));
    }
    let lx: Vec<f64> = taus.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}
