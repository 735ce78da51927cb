//! Runtime checks of the inequalities and identities satisfied by the
//! discrete solution.
//!
//! Every check yields a margin that is non-negative when the inequality
//! holds. Checks that only report a quantity (bounds whose constants are
//! existential) are entered with `asserted = false`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::energy::{self, EnergySpec, InternalEnergy};
use crate::error::{Error, Result};
use crate::measure::{level_step, trapezoid_weights, QuantileMeasure};
use crate::stepper::{Scheme, Trajectory};
use crate::transport::{self, w2, w2_squared};

/// Where a check was evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "at", content = "value", rename_all = "snake_case")]
pub enum Location {
    Step(i64),
    Time(f64),
    Run,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticEntry {
    pub name: String,
    /// Identifier of the checked formula.
    pub formula: String,
    /// `>= -tolerance` means satisfied.
    pub margin: f64,
    pub tolerance: f64,
    pub location: Location,
    pub asserted: bool,
    /// Reported quantity, for entries that are not inequalities.
    pub value: Option<f64>,
}

impl DiagnosticEntry {
    pub fn passed(&self) -> bool {
        !self.asserted || self.margin >= -self.tolerance
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub entries: Vec<DiagnosticEntry>,
}

impl DiagnosticsReport {
    pub fn check(&mut self, name: &str, formula: &str, margin: f64, tolerance: f64, location: Location) {
        self.entries.push(DiagnosticEntry {
            name: name.to_string(),
            formula: formula.to_string(),
            margin,
            tolerance,
            location,
            asserted: true,
            value: None,
        });
    }

    pub fn info(&mut self, name: &str, formula: &str, value: f64, location: Location) {
        self.entries.push(DiagnosticEntry {
            name: name.to_string(),
            formula: formula.to_string(),
            margin: 0.0,
            tolerance: 0.0,
            location,
            asserted: false,
            value: Some(value),
        });
    }

    pub fn extend(&mut self, other: DiagnosticsReport) {
        self.entries.extend(other.entries);
    }

    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(DiagnosticEntry::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &DiagnosticEntry> {
        self.entries.iter().filter(|e| !e.passed())
    }

    /// Smallest margin among asserted entries named `name`.
    pub fn worst(&self, name: &str) -> Option<&DiagnosticEntry> {
        self.entries
            .iter()
            .filter(|e| e.asserted && e.name == name)
            .min_by(|a, b| (a.margin + a.tolerance).total_cmp(&(b.margin + b.tolerance)))
    }
}

/// Tolerance for the per-step energy inequality.
pub fn dissipation_tolerance(grad_tol: f64, energy: f64) -> f64 {
    10.0 * grad_tol * (1.0 + energy.abs())
}

/// Right side minus left side of
/// `F(ρ^k) + W2²(ρ^{k-1}, ρ^k)/2τ <= F(ρ^{k-1}) + W2²(ρ^{k-2}, ρ^{k-1})/4τ`
/// (without the last term for JKO trajectories).
pub fn energy_dissipation_margin(traj: &Trajectory, k: i64, spec: &EnergySpec) -> Result<f64> {
    if k < 1 {
        return Err(Error::IndexOutOfRange { k });
    }
    let rho = traj.state(k)?;
    let nu = traj.state(k - 1)?;
    let tau = traj.tau;
    let mut rhs = energy::total(nu, spec)?;
    if traj.scheme == Scheme::Bdf2 {
        rhs += w2_squared(traj.state(k - 2)?, nu)? / (4.0 * tau);
    }
    Ok(rhs - energy::total(rho, spec)? - w2_squared(nu, rho)? / (2.0 * tau))
}

/// Quantities bounded uniformly in `τ` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalBounds {
    /// `sum_k W2²(ρ^{k-1}, ρ^k) / 2τ`.
    pub kinetic_sum: f64,
    /// `max_k |U_m(ρ^k)|`.
    pub max_abs_internal: f64,
    /// `max_k M2(ρ^k)`.
    pub max_second_moment: f64,
}

pub fn classical_bounds(traj: &Trajectory, t_end: f64, spec: &EnergySpec) -> Result<ClassicalBounds> {
    let eps = 1e-9 * traj.tau;
    let mut out = ClassicalBounds {
        kinetic_sum: 0.0,
        max_abs_internal: 0.0,
        max_second_moment: 0.0,
    };
    for (k, t, rho) in traj.solution() {
        if t > t_end + eps {
            break;
        }
        if let Some(InternalEnergy { m }) = spec.internal {
            out.max_abs_internal = out.max_abs_internal.max(energy::internal(rho, m)?.abs());
        }
        out.max_second_moment = out.max_second_moment.max(rho.second_moment());
        if k >= 1 {
            out.kinetic_sum += w2_squared(traj.state(k - 1)?, rho)? / (2.0 * traj.tau);
        }
    }
    Ok(out)
}

pub fn classical_bounds_report(traj: &Trajectory, t_end: f64, spec: &EnergySpec) -> Result<DiagnosticsReport> {
    let b = classical_bounds(traj, t_end, spec)?;
    let mut report = DiagnosticsReport::default();
    report.info("kinetic_sum", "classical-bounds", b.kinetic_sum, Location::Time(t_end));
    report.info(
        "max_abs_internal",
        "classical-bounds",
        b.max_abs_internal,
        Location::Time(t_end),
    );
    report.info(
        "max_second_moment",
        "classical-bounds",
        b.max_second_moment,
        Location::Time(t_end),
    );
    Ok(report)
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A compactly supported test field `ξ` with its derivative and, for use
/// in space-time bundles, its second derivative.
#[derive(Clone)]
pub struct TestVectorField {
    value: ScalarFn,
    derivative: ScalarFn,
    second: ScalarFn,
    pub support: (f64, f64),
}

impl std::fmt::Debug for TestVectorField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestVectorField")
            .field("support", &self.support)
            .finish()
    }
}

fn bump_profile(y: f64) -> (f64, f64, f64) {
    if y.abs() >= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    let q = 1.0 - y * y;
    let b = (-1.0 / q).exp();
    let d1 = b * (-2.0 * y / (q * q));
    let d2 = b * (6.0 * y.powi(4) - 2.0) / q.powi(4);
    (b, d1, d2)
}

impl TestVectorField {
    pub fn new(
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
        second: impl Fn(f64) -> f64 + Send + Sync + 'static,
        support: (f64, f64),
    ) -> Result<Self> {
        let field = Self {
            value: Arc::new(value),
            derivative: Arc::new(derivative),
            second: Arc::new(second),
            support,
        };
        field.audit()?;
        Ok(field)
    }

    /// `exp(-1 / (1 - y²))` with `y = (x - center) / radius`.
    pub fn bump(center: f64, radius: f64) -> Self {
        Self {
            value: Arc::new(move |x| bump_profile((x - center) / radius).0),
            derivative: Arc::new(move |x| bump_profile((x - center) / radius).1 / radius),
            second: Arc::new(move |x| bump_profile((x - center) / radius).2 / (radius * radius)),
            support: (center - radius, center + radius),
        }
    }

    /// Checks that the field vanishes outside its support on a sample grid.
    pub fn audit(&self) -> Result<()> {
        let (a, b) = self.support;
        if !(a < b) {
            return Err(Error::InvalidConfig(format!("empty test field support [{a}, {b}]")));
        }
        let w = b - a;
        for i in 0..=200 {
            let off = w * (i as f64 / 200.0) * 2.0;
            for x in [a - off - 1e-9, b + off + 1e-9] {
                if (self.value)(x) != 0.0 {
                    return Err(Error::InvalidConfig(format!("test field does not vanish at x = {x}")));
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, x: f64) -> f64 {
        (self.value)(x)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        (self.derivative)(x)
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        (self.second)(x)
    }
}

/// `count` bumps of radius `radius` with centers evenly spread over
/// `[lo, hi]`.
pub fn bump_basis(lo: f64, hi: f64, count: usize, radius: f64) -> Vec<TestVectorField> {
    (0..count)
        .map(|i| {
            let c = if count == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * i as f64 / (count - 1) as f64
            };
            TestVectorField::bump(c, radius)
        })
        .collect()
}

/// Euler–Lagrange residual split into its total and the part carried by
/// the discrete gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElResidual {
    /// `|∫(-ξ' ρ^m + ξ V' ρ + ξ (W' * ρ) ρ) dx + transport terms|`.
    pub residual: f64,
    /// `|sum_k ξ(X_k) ∂Ψ/∂X_k|`, which vanishes at an exact minimizer.
    pub optimizer: f64,
}

/// Residual of the optimality condition of `sum_j c_j W2²(a_j, ρ) + F(ρ)`
/// tested with `xi`.
pub fn el_residual_general(
    rho: &QuantileMeasure,
    anchors: &[(f64, &QuantileMeasure)],
    spec: &EnergySpec,
    xi: &TestVectorField,
) -> Result<ElResidual> {
    for (_, a) in anchors {
        transport::w2_squared(rho, a)?;
    }
    let x = rho.positions();
    let n = x.len();
    let delta = level_step(n);
    let w = trapezoid_weights(n);
    let mids: Vec<f64> = x.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect();

    let mut transport_part = 0.0;
    let mut grad = vec![0.0; n];
    for &(c, a) in anchors {
        let y = a.positions();
        for i in 0..n {
            let t = 2.0 * c * w[i] * (x[i] - y[i]);
            transport_part += xi.value(x[i]) * t;
            grad[i] += t;
        }
    }

    let mut density_part = 0.0;
    if let Some(InternalEnergy { m }) = spec.internal {
        if let Some(index) = rho.first_zero_gap() {
            return Err(Error::SingularMeasure { index });
        }
        for (i, p) in x.windows(2).enumerate() {
            let g = p[1] - p[0];
            density_part -= xi.derivative(mids[i]) * (delta / g).powf(m) * g;
        }
    }
    if let Some(v) = &spec.external {
        density_part += delta * mids.iter().map(|&y| xi.value(y) * v.derivative(y)).sum::<f64>();
    }
    if let Some(kernel) = &spec.interaction {
        for &yi in &mids {
            let conv: f64 = mids.iter().map(|&yj| delta * kernel.derivative(yi - yj)).sum();
            density_part += delta * xi.value(yi) * conv;
        }
    }

    energy::accumulate_gradient(x, spec, &mut grad);
    let virtual_work: f64 = x.iter().zip(&grad).map(|(&xk, g)| xi.value(xk) * g).sum();
    Ok(ElResidual {
        residual: (density_part + transport_part).abs(),
        optimizer: virtual_work.abs(),
    })
}

/// Residual of the BDF2 optimality condition at `ρ^k` given `ρ^{k-1}`,
/// `ρ^{k-2}`.
pub fn el_residual(
    rho_k: &QuantileMeasure,
    rho_km1: &QuantileMeasure,
    rho_km2: &QuantileMeasure,
    tau: f64,
    spec: &EnergySpec,
    xi: &TestVectorField,
) -> Result<f64> {
    el_residual_general(rho_k, &[(1.0 / tau, rho_km1), (-0.25 / tau, rho_km2)], spec, xi).map(|r| r.residual)
}

/// Initial-data constants `(d3, d4)`: the smallest values with
/// `W2²(ρ^-1, ρ^0) <= d3 τ` and `W2²(ρ^0, ρ_init) <= d3 τ`, and
/// `U_m(ρ^-1), U_m(ρ^0) <= d4` (clamped at 0). A JKO trajectory has
/// `ρ^-1 = ρ^0 = ρ_init`.
pub fn initial_data_constants(traj: &Trajectory, spec: &EnergySpec) -> Result<(f64, f64)> {
    let init = &traj.states[0];
    let rho0 = traj.state(0)?;
    let d3 = w2_squared(init, rho0)? / traj.tau;
    let d4 = match spec.m() {
        Some(m) => energy::internal(init, m)?.max(energy::internal(rho0, m)?).max(0.0),
        None => 0.0,
    };
    Ok((d3, d4))
}

/// Euler–Lagrange residual of step `k` of a trajectory (JKO or BDF2).
pub fn trajectory_el_residual(
    traj: &Trajectory,
    k: i64,
    spec: &EnergySpec,
    xi: &TestVectorField,
) -> Result<ElResidual> {
    if k < 1 {
        return Err(Error::IndexOutOfRange { k });
    }
    let rho = traj.state(k)?;
    let nu = traj.state(k - 1)?;
    let tau = traj.tau;
    match traj.scheme {
        Scheme::Jko => el_residual_general(rho, &[(0.5 / tau, nu)], spec, xi),
        Scheme::Bdf2 => el_residual_general(rho, &[(1.0 / tau, nu), (-0.25 / tau, traj.state(k - 2)?)], spec, xi),
    }
}

/// `‖ρ^m‖_BV` of the piecewise-constant density, extended by zero.
pub fn bv_norm(mu: &QuantileMeasure, m: f64) -> Result<f64> {
    if let Some(index) = mu.first_zero_gap() {
        return Err(Error::SingularMeasure { index });
    }
    let delta = mu.delta();
    let p: Vec<(f64, f64)> = mu.gaps().map(|g| ((delta / g).powf(m), g)).collect();
    let l1: f64 = p.iter().map(|(v, g)| v * g).sum();
    let jumps: f64 = p.windows(2).map(|q| (q[0].0 - q[1].0).abs()).sum();
    Ok(l1 + jumps + p[0].0 + p[p.len() - 1].0)
}

fn bv_rhs_factor(traj: &Trajectory, k: i64) -> Result<f64> {
    if k < 1 {
        return Err(Error::IndexOutOfRange { k });
    }
    let rho = traj.state(k)?;
    let prev2 = traj.state(k - 2).or_else(|_| traj.state(k - 1))?;
    Ok(1.0 + w2(rho, traj.state(k - 1)?)? / traj.tau + w2(rho, prev2)? / traj.tau)
}

/// `C (1 + W2(ρ^k, ρ^{k-1})/τ + W2(ρ^k, ρ^{k-2})/τ) - ‖(ρ^k)^m‖_BV`.
pub fn bv_step_bound_margin(traj: &Trajectory, k: i64, c: f64, m: f64) -> Result<f64> {
    let factor = bv_rhs_factor(traj, k)?;
    Ok(c * factor - bv_norm(traj.state(k)?, m)?)
}

/// Smallest `C` for which [`bv_step_bound_margin`] is non-negative at
/// every step.
pub fn minimal_bv_constant(traj: &Trajectory, m: f64) -> Result<f64> {
    let mut c: f64 = 0.0;
    for k in 1..=traj.last_step() {
        c = c.max(bv_norm(traj.state(k)?, m)? / bv_rhs_factor(traj, k)?);
    }
    Ok(c)
}

/// Space-time test function `ψ(t, x) = φ(t) b(x)` with analytic derivatives.
#[derive(Clone)]
pub struct TestBundle {
    phi: ScalarFn,
    phi_dot: ScalarFn,
    space: Option<TestVectorField>,
}

impl std::fmt::Debug for TestBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestBundle").field("space", &self.space).finish()
    }
}

impl TestBundle {
    /// `φ(t) b(x)`; `space = None` means `b ≡ 1`.
    pub fn separable(
        phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        phi_dot: impl Fn(f64) -> f64 + Send + Sync + 'static,
        space: Option<TestVectorField>,
    ) -> Self {
        Self {
            phi: Arc::new(phi),
            phi_dot: Arc::new(phi_dot),
            space,
        }
    }

    /// `(1 - t/T)³₊` times a bump; vanishes at `t = T` with two derivatives.
    pub fn bump(center: f64, radius: f64, horizon: f64) -> Self {
        Self::separable(
            move |t| (1.0 - t / horizon).max(0.0).powi(3),
            move |t| -3.0 / horizon * (1.0 - t / horizon).max(0.0).powi(2),
            Some(TestVectorField::bump(center, radius)),
        )
    }

    pub fn zero() -> Self {
        Self::separable(|_| 0.0, |_| 0.0, None)
    }

    fn space(&self, x: f64) -> (f64, f64, f64) {
        match &self.space {
            Some(b) => (b.value(x), b.derivative(x), b.second_derivative(x)),
            None => (1.0, 0.0, 0.0),
        }
    }
}

/// Spatial functionals of one state used by [`weak_form_residual`]:
/// `(∫ b ρ, ∫(-b'' ρ^m + b' V' ρ + b' (W' * ρ) ρ))`.
fn weak_space_terms(rho: &QuantileMeasure, spec: &EnergySpec, bundle: &TestBundle) -> Result<(f64, f64)> {
    let x = rho.positions();
    let delta = level_step(x.len());
    let mids: Vec<f64> = x.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect();
    let mass_term: f64 = mids.iter().map(|&y| delta * bundle.space(y).0).sum();
    let mut flux = 0.0;
    if let Some(InternalEnergy { m }) = spec.internal {
        if let Some(index) = rho.first_zero_gap() {
            return Err(Error::SingularMeasure { index });
        }
        for (i, p) in x.windows(2).enumerate() {
            let g = p[1] - p[0];
            flux -= bundle.space(mids[i]).2 * (delta / g).powf(m) * g;
        }
    }
    if let Some(v) = &spec.external {
        flux += mids
            .iter()
            .map(|&y| delta * bundle.space(y).1 * v.derivative(y))
            .sum::<f64>();
    }
    if let Some(kernel) = &spec.interaction {
        for &yi in &mids {
            let conv: f64 = mids.iter().map(|&yj| delta * kernel.derivative(yi - yj)).sum();
            flux += delta * bundle.space(yi).1 * conv;
        }
    }
    Ok((mass_term, flux))
}

/// `|∫∫ flux - ∫∫ ∂t ψ ρ̄ - ∫ ψ(0) ρ⁰|` for the piecewise-constant
/// interpolant `ρ̄(t) = ρ^k` on `(t_{k-1}, t_k]`, integrated up to `t_end`.
pub fn weak_form_residual(traj: &Trajectory, bundle: &TestBundle, t_end: f64, spec: &EnergySpec) -> Result<f64> {
    let gauss = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for (k, t_k, rho) in traj.solution() {
        let t_prev = if k == 0 { 0.0 } else { traj.time(k - 1) };
        let (a, b) = (t_prev.max(0.0), t_k.min(t_end));
        if b <= a {
            continue;
        }
        let (mass_term, flux) = weak_space_terms(rho, spec, bundle)?;
        let h = b - a;
        let phi: f64 = gauss.iter().map(|g| 0.5 * h * (bundle.phi)(a + g * h)).sum();
        let phi_dot: f64 = gauss.iter().map(|g| 0.5 * h * (bundle.phi_dot)(a + g * h)).sum();
        lhs += phi * flux;
        rhs += phi_dot * mass_term;
    }
    let (initial, _) = weak_space_terms(&traj.states[0], &EnergySpec::zero(), bundle)?;
    rhs += (bundle.phi)(0.0) * initial;
    Ok((lhs - rhs).abs())
}

/// Which checks [`diagnose`] runs and how they are asserted.
#[derive(Debug, Clone)]
pub struct DiagnoseOptions {
    pub fields: Vec<TestVectorField>,
    pub bundles: Vec<TestBundle>,
    /// Absolute bound on the Euler–Lagrange residual.
    pub el_tolerance: f64,
    /// Round-off allowance for the pure metric inequalities.
    pub metric_tolerance: f64,
    pub d2: f64,
}

impl DiagnoseOptions {
    /// Five bump fields and three bump bundles spread over the support of
    /// `traj`'s initial state.
    pub fn for_trajectory(traj: &Trajectory) -> Self {
        let x = traj.states[0].positions();
        let n = x.len();
        // central 90 % of the initial mass
        let lo = x[n / 20];
        let hi = x[n - 1 - n / 20];
        let width = (hi - lo).max(1e-3);
        let horizon = traj.final_time() + traj.tau;
        let radius = 0.35 * width;
        Self {
            fields: bump_basis(lo + 0.15 * width, hi - 0.15 * width, 5, radius),
            bundles: bump_basis(lo + 0.25 * width, hi - 0.25 * width, 3, 0.5 * width)
                .into_iter()
                .map(|f| {
                    let (a, b) = f.support;
                    TestBundle::bump(0.5 * (a + b), 0.5 * (b - a), horizon)
                })
                .collect(),
            el_tolerance: 1e-3,
            metric_tolerance: 1e-12,
            d2: 1.0,
        }
    }
}

/// Runs every check over a trajectory.
pub fn diagnose(traj: &Trajectory, spec: &EnergySpec, options: &DiagnoseOptions) -> Result<DiagnosticsReport> {
    let mut report = DiagnosticsReport::default();
    let last = traj.last_step();
    for k in 1..=last {
        let rho = traj.state(k)?;
        let nu = traj.state(k - 1)?;
        let f = energy::total(rho, spec)?;
        let margin = energy_dissipation_margin(traj, k, spec)?;
        report.check(
            "energy_dissipation",
            "almost-energy-diminishing",
            margin,
            dissipation_tolerance(traj.grad_tol, f),
            Location::Step(k),
        );

        let scale = 1.0 + rho.second_moment() + nu.second_moment();
        let eta = traj.state(k - 2).unwrap_or(nu);
        report.check(
            "triangle_binomial",
            "triangle-binomial",
            transport::check_triangle_binomial(rho, nu, eta)?,
            options.metric_tolerance * scale,
            Location::Step(k),
        );
        let (lower, upper) = transport::check_moment_distance_bound(rho, nu)?;
        report.check(
            "moment_distance_lower",
            "moment-distance",
            lower,
            options.metric_tolerance * scale,
            Location::Step(k),
        );
        report.check(
            "moment_distance_upper",
            "moment-distance",
            upper,
            options.metric_tolerance * scale,
            Location::Step(k),
        );

        for xi in &options.fields {
            let el = trajectory_el_residual(traj, k, spec, xi)?;
            report.check(
                "euler_lagrange",
                "discrete-euler-lagrange",
                options.el_tolerance - el.residual,
                0.0,
                Location::Step(k),
            );
        }
        if let Some(InternalEnergy { m }) = spec.internal {
            report.info(
                "carleman_floor",
                "entropy-floor",
                energy::carleman_floor(rho, m, options.d2)?,
                Location::Step(k),
            );
        }
    }

    let t_end = traj.final_time();
    report.extend(classical_bounds_report(traj, t_end, spec)?);
    if let Some(InternalEnergy { m }) = spec.internal {
        report.info(
            "minimal_bv_constant",
            "bv-step-bound",
            minimal_bv_constant(traj, m)?,
            Location::Run,
        );
    }
    for bundle in &options.bundles {
        report.info(
            "weak_form_residual",
            "weak-form",
            weak_form_residual(traj, bundle, t_end, spec)?,
            Location::Time(t_end),
        );
    }
    Ok(report)
}
