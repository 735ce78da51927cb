//! Probability measures on the line stored by their quantile function.
//!
//! A measure is represented by `N` samples `X_1 <= ... <= X_N` of its quantile
//! function at the uniform levels `s_i = (i - 1) / (N - 1)`. Integrals over
//! levels use trapezoidal weights `delta * [1/2, 1, ..., 1, 1/2]`; the density
//! associated with the samples puts mass `delta` on every cell
//! `[X_i, X_{i+1}]`. Unit mass holds by construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;

/// The spatial domain: a bounded open interval or the whole real line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainSpec {
    Interval { a: f64, b: f64 },
    Line,
}

impl DomainSpec {
    pub fn interval(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || a >= b {
            return Err(Error::InvalidDomain(format!("need a < b, got [{a}, {b}]")));
        }
        Ok(DomainSpec::Interval { a, b })
    }

    pub fn line() -> Self {
        DomainSpec::Line
    }

    /// Closed-domain membership.
    pub fn contains(&self, x: f64) -> bool {
        match *self {
            DomainSpec::Interval { a, b } => a <= x && x <= b,
            DomainSpec::Line => x.is_finite(),
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            DomainSpec::Interval { a, b } => (a, b),
            DomainSpec::Line => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn same_kind(&self, other: &DomainSpec) -> bool {
        matches!(
            (self, other),
            (DomainSpec::Line, DomainSpec::Line) | (DomainSpec::Interval { .. }, DomainSpec::Interval { .. })
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileMeasure {
    positions: Vec<f64>,
    domain: DomainSpec,
}

/// Level spacing `1 / (N - 1)` for a grid of `n` samples.
pub fn level_step(n: usize) -> f64 {
    1.0 / (n as f64 - 1.0)
}

/// Trapezoidal weights over the uniform level grid.
pub fn trapezoid_weights(n: usize) -> Vec<f64> {
    let delta = level_step(n);
    let mut w = vec![delta; n];
    w[0] = 0.5 * delta;
    w[n - 1] = 0.5 * delta;
    w
}

impl QuantileMeasure {
    /// Validates `positions` as quantile samples on `domain`.
    pub fn from_quantiles(positions: Vec<f64>, domain: DomainSpec) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::TooFewPoints(positions.len()));
        }
        for (i, &x) in positions.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFinite(i));
            }
        }
        for (i, pair) in positions.windows(2).enumerate() {
            if pair[1] < pair[0] {
                return Err(Error::NonMonotone {
                    index: i,
                    left: pair[0],
                    right: pair[1],
                });
            }
        }
        for (i, &x) in positions.iter().enumerate() {
            if !domain.contains(x) {
                return Err(Error::OutOfDomain { index: i, value: x });
            }
        }
        Ok(Self { positions, domain })
    }

    /// Samples the quantile function of `density` (unit mass on `domain`).
    ///
    /// The CDF is tabulated with composite Gauss–Legendre quadrature and
    /// inverted by bisection. Level 0 and level 1 map to the edges of the
    /// support when the support is bounded. For densities with unbounded
    /// tails the outermost sample is chosen so that the trapezoidal second
    /// moment of its half of the measure (about the median sample) equals the
    /// exact one; when that is not attainable it falls back to matching the
    /// centroid of the tail cell.
    pub fn from_density<F>(density: F, domain: DomainSpec, n: usize) -> Result<Self>
    where
        F: Fn(f64) -> f64,
    {
        if n < 2 {
            return Err(Error::TooFewPoints(n));
        }
        let table = CdfTable::build(&density, domain, n)?;
        let delta = level_step(n);
        let mut positions = Vec::with_capacity(n);
        positions.push(table.left_end(&density, delta));
        for i in 1..n - 1 {
            positions.push(table.quantile(&density, i as f64 * delta));
        }
        positions.push(table.right_end(&density, delta));
        table.match_tail_moments(&density, &mut positions);
        // Guard against round-off at the seams between tabulated panels.
        for i in 1..n {
            if positions[i] < positions[i - 1] {
                positions[i] = positions[i - 1];
            }
        }
        Self::from_quantiles(positions, domain)
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn into_positions(self) -> Vec<f64> {
        self.positions
    }

    pub fn domain(&self) -> DomainSpec {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Level spacing `delta = 1 / (N - 1)`.
    pub fn delta(&self) -> f64 {
        level_step(self.len())
    }

    pub fn weights(&self) -> Vec<f64> {
        trapezoid_weights(self.len())
    }

    /// Quantile level of sample `i` (0-based).
    pub fn level(&self, i: usize) -> f64 {
        i as f64 * self.delta()
    }

    pub fn gaps(&self) -> impl Iterator<Item = f64> + '_ {
        self.positions.windows(2).map(|p| p[1] - p[0])
    }

    /// Index of the first collapsed cell, if any.
    pub fn first_zero_gap(&self) -> Option<usize> {
        self.gaps().position(|g| g <= 0.0)
    }

    pub fn mean(&self) -> f64 {
        weighted_sum(&self.positions, |x| x)
    }

    /// `M_2 = sum_i w_i X_i^2` with trapezoidal weights.
    pub fn second_moment(&self) -> f64 {
        weighted_sum(&self.positions, |x| x * x)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        weighted_sum(&self.positions, |x| (x - m) * (x - m))
    }

    /// Piecewise-constant density with mass `delta` on each cell.
    pub fn reconstruct_density(&self) -> Result<PiecewiseDensity> {
        if let Some(index) = self.first_zero_gap() {
            return Err(Error::ZeroGap { index });
        }
        let delta = self.delta();
        let values = self.gaps().map(|g| delta / g).collect();
        Ok(PiecewiseDensity {
            breakpoints: self.positions.clone(),
            values,
        })
    }

    /// Shifts every position by `c`. The result may leave a bounded domain.
    pub fn translated(&self, c: f64) -> Result<Self> {
        Self::from_quantiles(self.positions.iter().map(|x| x + c).collect(), self.domain)
    }

    /// Mirror image `X -> -X` (re-sorted). Only meaningful on the line.
    pub fn reflected(&self) -> Result<Self> {
        let p: Vec<f64> = self.positions.iter().rev().map(|x| -x).collect();
        Self::from_quantiles(p, self.domain)
    }

    pub(crate) fn from_raw_unchecked(positions: Vec<f64>, domain: DomainSpec) -> Self {
        debug_assert!(positions.windows(2).all(|p| p[0] <= p[1]));
        Self { positions, domain }
    }
}

/// Trapezoidal second moment of a raw position vector.
pub(crate) fn weighted_square_sum(positions: &[f64]) -> f64 {
    weighted_sum(positions, |x| x * x)
}

fn weighted_sum(positions: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let n = positions.len();
    let delta = level_step(n);
    let interior: f64 = positions[1..n - 1].iter().map(|&x| f(x)).sum();
    delta * (interior + 0.5 * (f(positions[0]) + f(positions[n - 1])))
}

/// Density that is constant on each cell between consecutive breakpoints
/// and zero outside `[breakpoints[0], breakpoints[N-1]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseDensity {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseDensity {
    /// Exact integral: sum of value times width.
    pub fn integral(&self) -> f64 {
        self.cells().map(|(a, b, v)| v * (b - a)).sum()
    }

    pub fn cells(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.breakpoints
            .windows(2)
            .zip(&self.values)
            .map(|(p, &v)| (p[0], p[1], v))
    }

    pub fn eval(&self, x: f64) -> f64 {
        let bp = &self.breakpoints;
        if x < bp[0] || x > bp[bp.len() - 1] {
            return 0.0;
        }
        // first breakpoint strictly greater than x
        let idx = bp.partition_point(|&b| b <= x);
        let cell = idx.saturating_sub(1).min(self.values.len() - 1);
        self.values[cell]
    }
}

const TAIL_TOL: f64 = 1e-13;
const MASS_TOL: f64 = 1e-6;

/// Tabulated CDF of an evaluable density on a finite window.
struct CdfTable {
    edges: Vec<f64>,
    cum: Vec<f64>,
    mass: f64,
    rule: GaussLegendre,
    /// Left/right ends are support edges (bounded support) rather than
    /// truncations of an unbounded tail.
    left_compact: bool,
    right_compact: bool,
}

impl CdfTable {
    fn build<F: Fn(f64) -> f64>(density: &F, domain: DomainSpec, n: usize) -> Result<Self> {
        let rule = GaussLegendre::new(8);
        let panels = (16 * n).max(4096);
        let (lo, hi) = match domain {
            DomainSpec::Interval { a, b } => (a, b),
            DomainSpec::Line => line_window(density, &rule)?,
        };
        let h = (hi - lo) / panels as f64;
        let mut edges = Vec::with_capacity(panels + 1);
        let mut cum = Vec::with_capacity(panels + 1);
        cum.push(0.0);
        edges.push(lo);
        let mut acc = 0.0;
        for j in 0..panels {
            let a = lo + j as f64 * h;
            let b = if j + 1 == panels { hi } else { lo + (j + 1) as f64 * h };
            let mut part = 0.0;
            for (x, w) in rule.points(a, b) {
                let v = density(x);
                if !v.is_finite() {
                    return Err(Error::InvalidConfig(format!("density is not finite at x = {x}")));
                }
                if v < 0.0 {
                    return Err(Error::NegativeDensity { x, value: v });
                }
                part += w * v;
            }
            acc += part;
            edges.push(b);
            cum.push(acc);
        }
        if (acc - 1.0).abs() > MASS_TOL {
            return Err(Error::MassNotOne { mass: acc });
        }
        let (left_compact, right_compact) = match domain {
            DomainSpec::Interval { .. } => (true, true),
            DomainSpec::Line => (density(lo) == 0.0, density(hi) == 0.0),
        };
        Ok(Self {
            edges,
            cum,
            mass: acc,
            rule,
            left_compact,
            right_compact,
        })
    }

    /// CDF (normalized by the tabulated mass) at `x` inside panel `j`.
    fn cdf_in_panel<F: Fn(f64) -> f64>(&self, density: &F, j: usize, x: f64) -> f64 {
        let a = self.edges[j];
        let partial = if x > a { self.rule.integrate(a, x, density) } else { 0.0 };
        (self.cum[j] + partial) / self.mass
    }

    fn quantile<F: Fn(f64) -> f64>(&self, density: &F, s: f64) -> f64 {
        let target = s * self.mass;
        // last panel whose starting cumulative mass is <= target
        let j = self
            .cum
            .partition_point(|&c| c <= target)
            .saturating_sub(1)
            .min(self.edges.len() - 2);
        let (mut a, mut b) = (self.edges[j], self.edges[j + 1]);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if self.cdf_in_panel(density, j, mid) < s {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    }

    /// First point of positive density, found by bisection on `density > 0`.
    fn support_start<F: Fn(f64) -> f64>(&self, density: &F) -> f64 {
        let j = self.cum.iter().position(|&c| c > 0.0).unwrap_or(1).saturating_sub(1);
        let (a0, b0) = (self.edges[j], self.edges[j + 1]);
        if density(a0) > 0.0 {
            // the support starts in a sliver of the previous panel that its
            // quadrature nodes miss
            return match j.checked_sub(1).map(|i| self.edges[i]) {
                Some(z) if density(z) == 0.0 => bisect_sign(density, z, a0),
                _ => a0,
            };
        }
        let pos = self
            .rule
            .points(a0, b0)
            .map(|(x, _)| x)
            .find(|&x| density(x) > 0.0)
            .unwrap_or(b0);
        bisect_sign(density, a0, pos)
    }

    fn support_end<F: Fn(f64) -> f64>(&self, density: &F) -> f64 {
        let last = self.cum.len() - 1;
        let total = self.cum[last];
        let j = self.cum.iter().position(|&c| c >= total).unwrap_or(last).max(1) - 1;
        let (a0, b0) = (self.edges[j], self.edges[j + 1]);
        if density(b0) > 0.0 {
            return match self.edges.get(j + 2) {
                Some(&z) if density(z) == 0.0 => bisect_sign(density, z, b0),
                _ => b0,
            };
        }
        let pos = self
            .rule
            .points(a0, b0)
            .map(|(x, _)| x)
            .filter(|&x| density(x) > 0.0)
            .last()
            .unwrap_or(a0);
        bisect_sign(density, b0, pos)
    }

    fn left_end<F: Fn(f64) -> f64>(&self, density: &F, delta: f64) -> f64 {
        if self.left_compact {
            return self.support_start(density);
        }
        let q = self.quantile(density, delta);
        let lo = self.edges[0];
        let mass = self.integrate_between(density, lo, q, |_| 1.0);
        let first = self.integrate_between(density, lo, q, |x| x);
        let centroid = first / mass;
        (2.0 * centroid - q).max(lo)
    }

    fn right_end<F: Fn(f64) -> f64>(&self, density: &F, delta: f64) -> f64 {
        let hi = self.edges[self.edges.len() - 1];
        if self.right_compact {
            return self.support_end(density);
        }
        let q = self.quantile(density, 1.0 - delta);
        let mass = self.integrate_between(density, q, hi, |_| 1.0);
        let first = self.integrate_between(density, q, hi, |x| x);
        let centroid = first / mass;
        (2.0 * centroid - q).min(hi)
    }

    /// Moves unbounded endpoints so that each half of the measure carries
    /// its exact second moment about the middle sample.
    fn match_tail_moments<F: Fn(f64) -> f64>(&self, density: &F, x: &mut [f64]) {
        let n = x.len();
        if n < 5 {
            return;
        }
        let delta = level_step(n);
        let mid = (n - 1) / 2;
        let c = x[mid];
        let lo = self.edges[0];
        let hi = self.edges[self.edges.len() - 1];
        let sq = |v: f64| (v - c) * (v - c);
        if !self.left_compact {
            let exact = self.integrate_between(density, lo, c, sq) / self.mass;
            let inner: f64 = x[1..mid].iter().map(|&v| sq(v)).sum::<f64>() + 0.5 * sq(x[mid]);
            let rest = exact / delta - inner;
            if rest.is_finite() && 2.0 * rest > sq(x[1]) {
                x[0] = (c - (2.0 * rest).sqrt()).max(lo);
            }
        }
        if !self.right_compact {
            let exact = self.integrate_between(density, c, hi, sq) / self.mass;
            let inner: f64 = x[mid + 1..n - 1].iter().map(|&v| sq(v)).sum::<f64>() + 0.5 * sq(x[mid]);
            let rest = exact / delta - inner;
            if rest.is_finite() && 2.0 * rest > sq(x[n - 2]) {
                x[n - 1] = (c + (2.0 * rest).sqrt()).min(hi);
            }
        }
    }

    fn integrate_between<F: Fn(f64) -> f64>(&self, density: &F, a: f64, b: f64, g: impl Fn(f64) -> f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let h = self.edges[1] - self.edges[0];
        let pieces = (((b - a) / h).ceil() as usize).max(1);
        let step = (b - a) / pieces as f64;
        (0..pieces)
            .map(|k| {
                let x0 = a + k as f64 * step;
                let x1 = if k + 1 == pieces { b } else { x0 + step };
                self.rule.integrate(x0, x1, |x| g(x) * density(x))
            })
            .sum()
    }
}

/// Bisection between a zero-density point and a positive-density point.
fn bisect_sign<F: Fn(f64) -> f64>(density: &F, zero: f64, positive: f64) -> f64 {
    let (mut z, mut p) = (zero, positive);
    for _ in 0..200 {
        let mid = 0.5 * (z + p);
        if mid == z || mid == p {
            break;
        }
        if density(mid) > 0.0 {
            p = mid;
        } else {
            z = mid;
        }
    }
    p
}

/// Symmetric window `[-L, L]` holding all but a negligible tail of the mass.
fn line_window<F: Fn(f64) -> f64>(density: &F, rule: &GaussLegendre) -> Result<(f64, f64)> {
    let mass_on = |l: f64| -> f64 {
        let panels = 2048;
        let h = 2.0 * l / panels as f64;
        (0..panels)
            .map(|j| {
                let a = -l + j as f64 * h;
                rule.integrate(a, a + h, density)
            })
            .sum()
    };
    let mut l = 1.0;
    let mut prev = mass_on(l);
    while l < 1e6 {
        let next = mass_on(2.0 * l);
        l *= 2.0;
        let vanishes = density(-l) == 0.0 && density(l) == 0.0;
        if (next - 1.0).abs() < MASS_TOL && ((next - prev).abs() < TAIL_TOL || vanishes) {
            return Ok((-l, l));
        }
        prev = next;
    }
    Err(Error::MassNotOne { mass: prev })
}
