//! Exact optimal transport between quantile measures.
//!
//! In one dimension the monotone rearrangement is optimal, so the
//! L²-Wasserstein distance reduces to the L² distance between quantile
//! functions: `W2²(mu, nu) = sum_i w_i (X_i - Y_i)²`.

use crate::error::{Error, Result};
use crate::measure::{trapezoid_weights, QuantileMeasure};

fn check_grid(mu: &QuantileMeasure, nu: &QuantileMeasure) -> Result<()> {
    if mu.len() != nu.len() {
        return Err(Error::GridMismatch {
            left: mu.len(),
            right: nu.len(),
        });
    }
    if !mu.domain().same_kind(&nu.domain()) {
        return Err(Error::DomainMismatch);
    }
    Ok(())
}

/// Squared distance on raw position vectors of equal length.
pub(crate) fn w2_squared_raw(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let delta = 1.0 / (n as f64 - 1.0);
    let sq = |i: usize| {
        let d = x[i] - y[i];
        d * d
    };
    let interior: f64 = (1..n - 1).map(sq).sum();
    delta * (interior + 0.5 * (sq(0) + sq(n - 1)))
}

pub fn w2_squared(mu: &QuantileMeasure, nu: &QuantileMeasure) -> Result<f64> {
    check_grid(mu, nu)?;
    Ok(w2_squared_raw(mu.positions(), nu.positions()))
}

pub fn w2(mu: &QuantileMeasure, nu: &QuantileMeasure) -> Result<f64> {
    w2_squared(mu, nu).map(f64::sqrt)
}

/// Index-aligned optimal plan `X_i <-> Y_i` carrying mass `w_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotonePlan {
    pub source: QuantileMeasure,
    pub target: QuantileMeasure,
}

impl MonotonePlan {
    /// `(x, y, mass)` triples of the plan.
    pub fn pairs(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let w = trapezoid_weights(self.source.len());
        self.source
            .positions()
            .iter()
            .zip(self.target.positions())
            .zip(w)
            .map(|((&x, &y), m)| (x, y, m))
    }

    /// Quadratic cost `sum_i w_i |x_i - y_i|²`.
    pub fn cost(&self) -> f64 {
        w2_squared_raw(self.source.positions(), self.target.positions())
    }
}

pub fn monotone_plan(mu: &QuantileMeasure, nu: &QuantileMeasure) -> Result<MonotonePlan> {
    check_grid(mu, nu)?;
    Ok(MonotonePlan {
        source: mu.clone(),
        target: nu.clone(),
    })
}

/// Margin of `W2²(eta, rho) <= 2 W2²(eta, nu) + 2 W2²(nu, rho)`.
pub fn check_triangle_binomial(rho: &QuantileMeasure, nu: &QuantileMeasure, eta: &QuantileMeasure) -> Result<f64> {
    let en = w2_squared(eta, nu)?;
    let nr = w2_squared(nu, rho)?;
    let er = w2_squared(eta, rho)?;
    Ok(2.0 * en + 2.0 * nr - er)
}

/// Margins of `M2(rho) - 2 M2(nu) <= 2 W2²(rho, nu) <= 3 M2(rho) + 6 M2(nu)`,
/// returned as `(lower, upper)`.
pub fn check_moment_distance_bound(rho: &QuantileMeasure, nu: &QuantileMeasure) -> Result<(f64, f64)> {
    let d = 2.0 * w2_squared(rho, nu)?;
    let mr = rho.second_moment();
    let mn = nu.second_moment();
    Ok((d - (mr - 2.0 * mn), 3.0 * mr + 6.0 * mn - d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::DomainSpec;

    fn line(p: &[f64]) -> QuantileMeasure {
        QuantileMeasure::from_quantiles(p.to_vec(), DomainSpec::Line).unwrap()
    }

    #[test]
    fn distance_examples() {
        let mu = line(&[0.0, 0.3, 1.0]);
        assert_eq!(w2(&mu, &mu).unwrap(), 0.0);
        assert_eq!(w2(&line(&[0.0, 0.0]), &line(&[1.0, 1.0])).unwrap(), 1.0);
        let d = w2(&line(&[0.0, 2.0]), &line(&[0.0, 4.0])).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn translation_gives_shift_distance() {
        let mu = line(&[-1.0, 0.2, 0.4, 3.0]);
        let nu = mu.translated(0.75).unwrap();
        assert!((w2(&mu, &nu).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let err = w2(&line(&[0.0, 1.0]), &line(&[0.0, 0.5, 1.0])).unwrap_err();
        assert!(matches!(err, Error::GridMismatch { left: 2, right: 3 }));
        let bounded = QuantileMeasure::from_quantiles(vec![0.0, 1.0], DomainSpec::interval(0.0, 1.0).unwrap()).unwrap();
        assert!(matches!(w2(&line(&[0.0, 1.0]), &bounded), Err(Error::DomainMismatch)));
    }

    #[test]
    fn plan_pairs_indices_and_costs_w2_squared() {
        let plan = monotone_plan(&line(&[0.0, 1.0]), &line(&[2.0, 3.0])).unwrap();
        let pairs: Vec<_> = plan.pairs().map(|(x, y, _)| (x, y)).collect();
        assert_eq!(pairs, vec![(0.0, 2.0), (1.0, 3.0)]);
        assert_eq!(plan.cost(), 4.0);

        let mu = line(&[0.0, 0.5, 2.0]);
        assert_eq!(monotone_plan(&mu, &mu).unwrap().cost(), 0.0);
    }

    #[test]
    fn binomial_margin_examples() {
        let rho = line(&[0.0, 1.0, 2.0]);
        assert_eq!(check_triangle_binomial(&rho, &rho, &rho).unwrap(), 0.0);
        let eta = line(&[1.0, 1.5, 4.0]);
        let m = check_triangle_binomial(&rho, &rho, &eta).unwrap();
        assert!((m - w2_squared(&eta, &rho).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn moment_bound_examples() {
        let rho = line(&[1.0, 1.0]);
        let nu = line(&[0.0, 0.0]);
        assert_eq!(check_moment_distance_bound(&rho, &nu).unwrap(), (1.0, 1.0));
        let mu = line(&[-1.0, 0.5, 2.0]);
        let m2 = mu.second_moment();
        let (lo, hi) = check_moment_distance_bound(&mu, &mu).unwrap();
        // W2 = 0 leaves M2(ρ) below and 9 M2(ρ) above
        assert!((lo - m2).abs() < 1e-14 && (hi - 9.0 * m2).abs() < 1e-14);
    }
}
