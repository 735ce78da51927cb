//! Free energy `F = U_m + V + W` in quantile coordinates.
//!
//! With cell densities `rho_i = delta / (X_{i+1} - X_i)`:
//!
//! * `U_m = 1/(m-1) * sum_i delta^m * g_i^(1-m)` for `m > 1`,
//!   `H = sum_i delta * log(delta / g_i)` for `m = 1`;
//! * `V = sum_i w_i V(X_i)`;
//! * `W = 1/2 * sum_i sum_j w_i w_j W(X_i - X_j)`.
//!
//! For every `m >= 1` the derivative of the internal energy with respect to
//! `X_k` is the pressure jump `rho_k^m - rho_{k-1}^m`, with `rho_0 = rho_N = 0`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measure::{level_step, trapezoid_weights, QuantileMeasure};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// An external potential or interaction kernel with its growth constant.
#[derive(Clone)]
pub struct PotentialHandle {
    pub name: String,
    value: ScalarFn,
    derivative: ScalarFn,
    /// Optional second derivative, used only to precondition the step solver.
    curvature: Option<ScalarFn>,
    /// `d1` with `|V(x)|, |V'(x)| <= d1 (1 + x²)`.
    pub growth_constant: f64,
    pub symmetric: bool,
    /// Set when the growth bound only holds on a bounded window.
    pub window_only: Option<(f64, f64)>,
}

impl fmt::Debug for PotentialHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PotentialHandle")
            .field("name", &self.name)
            .field("growth_constant", &self.growth_constant)
            .field("symmetric", &self.symmetric)
            .field("window_only", &self.window_only)
            .finish()
    }
}

/// Number of sample points used by [`PotentialHandle::audit`].
pub const AUDIT_POINTS: usize = 1000;

impl PotentialHandle {
    pub fn new(
        name: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
        growth_constant: f64,
        symmetric: bool,
    ) -> Self {
        Self {
            name: name.into(),
            value: Arc::new(value),
            derivative: Arc::new(derivative),
            curvature: None,
            growth_constant,
            symmetric,
            window_only: None,
        }
    }

    pub fn with_curvature(mut self, curvature: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.curvature = Some(Arc::new(curvature));
        self
    }

    pub fn value(&self, x: f64) -> f64 {
        (self.value)(x)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        (self.derivative)(x)
    }

    pub fn curvature(&self, x: f64) -> Option<f64> {
        self.curvature.as_ref().map(|c| c(x))
    }

    /// Checks the quadratic growth bound (and symmetry, when flagged) on
    /// [`AUDIT_POINTS`] equispaced points of `[lo, hi]`.
    pub fn audit(&self, lo: f64, hi: f64) -> Result<()> {
        let (lo, hi) = match self.window_only {
            Some((a, b)) => (lo.max(a), hi.min(b)),
            None => (lo, hi),
        };
        for k in 0..AUDIT_POINTS {
            let x = lo + (hi - lo) * k as f64 / (AUDIT_POINTS - 1) as f64;
            let bound = self.growth_constant * (1.0 + x * x) * (1.0 + 1e-12) + 1e-300;
            if self.value(x).abs() > bound || self.derivative(x).abs() > bound {
                return Err(Error::GrowthBoundViolated {
                    name: self.name.clone(),
                    x,
                });
            }
            if self.symmetric && (self.value(-x) - self.value(x)).abs() > 1e-12 {
                return Err(Error::AsymmetricKernel);
            }
        }
        Ok(())
    }

    // Catalog.

    pub fn zero() -> Self {
        Self::new("zero", |_| 0.0, |_| 0.0, 0.0, true).with_curvature(|_| 0.0)
    }

    /// `strength * x² / 2`.
    pub fn quadratic(strength: f64) -> Self {
        Self::new(
            "quadratic",
            move |x| 0.5 * strength * x * x,
            move |x| strength * x,
            0.5 * strength.abs(),
            true,
        )
        .with_curvature(move |_| strength)
    }

    /// `(x² - 1)² / 4`. Grows quartically, so the growth constant is only
    /// valid on `[-radius, radius]` and the handle is flagged accordingly.
    pub fn double_well(radius: f64) -> Self {
        let value = |x: f64| 0.25 * (x * x - 1.0).powi(2);
        let derivative = |x: f64| x * x * x - x;
        let d1 = (0..=AUDIT_POINTS)
            .map(|k| -radius + 2.0 * radius * k as f64 / AUDIT_POINTS as f64)
            .map(|x| value(x).abs().max(derivative(x).abs()) / (1.0 + x * x))
            .fold(0.0, f64::max);
        let mut h = Self::new("double_well", value, derivative, d1, true).with_curvature(|x| 3.0 * x * x - 1.0);
        h.window_only = Some((-radius, radius));
        h
    }

    /// Gaussian kernel `strength * exp(-x²/2)`.
    pub fn gaussian_kernel(strength: f64) -> Self {
        Self::new(
            "gaussian_kernel",
            move |x| strength * (-0.5 * x * x).exp(),
            move |x| -strength * x * (-0.5 * x * x).exp(),
            strength.abs(),
            true,
        )
        .with_curvature(move |x| strength * (x * x - 1.0) * (-0.5 * x * x).exp())
    }
}

/// Internal energy exponent: `m = 1` is the entropy, `m > 1` porous medium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InternalEnergy {
    pub m: f64,
}

/// The functional `F = U_m + V + W`; absent parts contribute zero.
#[derive(Debug, Clone, Default)]
pub struct EnergySpec {
    pub internal: Option<InternalEnergy>,
    pub external: Option<PotentialHandle>,
    pub interaction: Option<PotentialHandle>,
}

impl EnergySpec {
    /// `F ≡ 0`.
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn with_internal(m: f64) -> Result<Self> {
        Self::zero().internal(m)
    }

    pub fn internal(mut self, m: f64) -> Result<Self> {
        if !(m >= 1.0) || !m.is_finite() {
            return Err(Error::InvalidEnergy(format!("exponent m must be >= 1, got {m}")));
        }
        self.internal = Some(InternalEnergy { m });
        Ok(self)
    }

    pub fn external(mut self, v: PotentialHandle) -> Self {
        self.external = Some(v);
        self
    }

    pub fn interaction(mut self, w: PotentialHandle) -> Result<Self> {
        if !w.symmetric {
            return Err(Error::AsymmetricKernel);
        }
        self.interaction = Some(w);
        Ok(self)
    }

    pub fn m(&self) -> Option<f64> {
        self.internal.map(|i| i.m)
    }

    /// Largest growth constant among the potentials (`d1`).
    pub fn growth_constant(&self) -> f64 {
        let v = self.external.as_ref().map_or(0.0, |p| p.growth_constant);
        let w = self.interaction.as_ref().map_or(0.0, |p| p.growth_constant);
        v.max(w)
    }
}

/// `U_m` (or `H` for `m = 1`) of the cell densities.
pub fn internal(mu: &QuantileMeasure, m: f64) -> Result<f64> {
    if let Some(index) = mu.first_zero_gap() {
        return Err(Error::SingularMeasure { index });
    }
    Ok(internal_raw(mu.positions(), m))
}

pub(crate) fn internal_raw(x: &[f64], m: f64) -> f64 {
    let delta = level_step(x.len());
    if m == 1.0 {
        x.windows(2).map(|p| delta * (delta / (p[1] - p[0])).ln()).sum()
    } else {
        let c = delta / (m - 1.0);
        x.windows(2).map(|p| c * (delta / (p[1] - p[0])).powf(m - 1.0)).sum()
    }
}

/// `sum_i w_i V(X_i)`.
pub fn external(mu: &QuantileMeasure, v: &PotentialHandle) -> f64 {
    external_raw(mu.positions(), v)
}

pub(crate) fn external_raw(x: &[f64], v: &PotentialHandle) -> f64 {
    let w = trapezoid_weights(x.len());
    x.iter().zip(&w).map(|(&xi, wi)| wi * v.value(xi)).sum()
}

/// `1/2 sum_i sum_j w_i w_j W(X_i - X_j)` by direct double sum.
pub fn interaction(mu: &QuantileMeasure, w: &PotentialHandle) -> Result<f64> {
    if !w.symmetric {
        return Err(Error::AsymmetricKernel);
    }
    Ok(interaction_raw(mu.positions(), w))
}

pub(crate) fn interaction_raw(x: &[f64], kernel: &PotentialHandle) -> f64 {
    let w = trapezoid_weights(x.len());
    let mut acc = 0.0;
    for i in 0..x.len() {
        let mut row = 0.0;
        for j in 0..x.len() {
            row += w[j] * kernel.value(x[i] - x[j]);
        }
        acc += w[i] * row;
    }
    0.5 * acc
}

/// The three parts of `F` evaluated separately.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct EnergyParts {
    pub internal: f64,
    pub external: f64,
    pub interaction: f64,
}

impl EnergyParts {
    pub fn total(&self) -> f64 {
        self.internal + self.external + self.interaction
    }
}

pub fn parts(mu: &QuantileMeasure, spec: &EnergySpec) -> Result<EnergyParts> {
    let internal = match spec.internal {
        Some(InternalEnergy { m }) => internal(mu, m)?,
        None => 0.0,
    };
    let external = spec.external.as_ref().map_or(0.0, |v| external(mu, v));
    let interaction = match &spec.interaction {
        Some(w) => interaction(mu, w)?,
        None => 0.0,
    };
    Ok(EnergyParts {
        internal,
        external,
        interaction,
    })
}

pub fn total(mu: &QuantileMeasure, spec: &EnergySpec) -> Result<f64> {
    parts(mu, spec).map(|p| p.total())
}

/// Exact gradient of [`total`] with respect to the quantile positions.
pub fn gradient_total(mu: &QuantileMeasure, spec: &EnergySpec) -> Result<Vec<f64>> {
    if spec.internal.is_some() {
        if let Some(index) = mu.first_zero_gap() {
            return Err(Error::SingularMeasure { index });
        }
    }
    let mut g = vec![0.0; mu.len()];
    accumulate_gradient(mu.positions(), spec, &mut g);
    Ok(g)
}

/// Adds the energy gradient into `g`. Gaps must be positive when the
/// internal energy is present.
pub(crate) fn accumulate_gradient(x: &[f64], spec: &EnergySpec, g: &mut [f64]) {
    let n = x.len();
    let w = trapezoid_weights(n);
    if let Some(InternalEnergy { m }) = spec.internal {
        let delta = level_step(n);
        for i in 0..n - 1 {
            let p = (delta / (x[i + 1] - x[i])).powf(m);
            g[i] += p;
            g[i + 1] -= p;
        }
    }
    if let Some(v) = &spec.external {
        for i in 0..n {
            g[i] += w[i] * v.derivative(x[i]);
        }
    }
    if let Some(kernel) = &spec.interaction {
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += w[j] * kernel.derivative(x[i] - x[j]);
            }
            g[i] += w[i] * row;
        }
    }
}

/// Tridiagonal positive semi-definite approximation of the energy Hessian:
/// exact for the internal part, diagonal (positive part) for the potentials.
/// Returns `(diag, off)` where `off[i]` couples `i` and `i + 1`.
pub(crate) fn hessian_bands(x: &[f64], spec: &EnergySpec) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let w = trapezoid_weights(n);
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n - 1];
    if let Some(InternalEnergy { m }) = spec.internal {
        let delta = level_step(n);
        for i in 0..n - 1 {
            let g = x[i + 1] - x[i];
            let h = m * (delta / g).powf(m) / g;
            diag[i] += h;
            diag[i + 1] += h;
            off[i] -= h;
        }
    }
    if let Some(v) = &spec.external {
        for i in 0..n {
            if let Some(c) = v.curvature(x[i]) {
                diag[i] += w[i] * c.max(0.0);
            }
        }
    }
    if let Some(kernel) = &spec.interaction {
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                if j != i {
                    row += w[j] * kernel.curvature(x[i] - x[j]).unwrap_or(0.0);
                }
            }
            diag[i] += w[i] * row.max(0.0);
        }
    }
    (diag, off)
}

/// Margin of the entropy floor `U_m(mu) >= -d2 (1 + M2(mu))`.
pub fn carleman_floor(mu: &QuantileMeasure, m: f64, d2: f64) -> Result<f64> {
    Ok(internal(mu, m)? + d2 * (1.0 + mu.second_moment()))
}
