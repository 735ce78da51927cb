//! JKO and BDF2 minimizing-movement steps and the trajectory runner.
//!
//! A JKO step minimizes `(1/2τ) W2²(ν, ρ) + F(ρ)`. A BDF2 step minimizes the
//! penalization
//!
//! ```text
//! Ψ(τ, η, ν; ρ) = (1/τ) W2²(ν, ρ) - (1/4τ) W2²(η, ρ) + F(ρ).
//! ```
//!
//! Both are solved over quantile vectors. The two kinetic terms combine to
//! `(3/4τ) W2²((4ν - η)/3, ρ)` plus a constant, so Ψ is convex whenever `F`
//! is convex in the positions.

use serde::{Deserialize, Serialize};

use crate::energy::{self, EnergyParts, EnergySpec};
use crate::error::{Error, Result};
use crate::measure::{trapezoid_weights, DomainSpec, QuantileMeasure};
use crate::optimize::{self, Constraints, Minimum, Objective, SolverSettings};
use crate::transport::{w2_squared, w2_squared_raw};

/// Time-stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Jko,
    Bdf2,
}

/// How the BDF2 pair `(ρ^{-1}, ρ^0)` is built from `ρ⁰`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Initializer {
    /// `ρ^{-1} = ρ^0 = ρ⁰`, both at time 0.
    #[default]
    Duplicate,
    /// `ρ^{-1} = ρ⁰` at time 0 and `ρ^0` one JKO step later, at time `τ`.
    JkoSubstep,
}

/// `(12 d1 + 8 d2)^-1`, or `+inf` when both constants vanish.
pub fn tau_threshold(d1: f64, d2: f64) -> Result<f64> {
    if !(d1 >= 0.0 && d2 >= 0.0) || !d1.is_finite() || !d2.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "growth constants must be finite and non-negative (d1 = {d1}, d2 = {d2})"
        )));
    }
    let s = 12.0 * d1 + 8.0 * d2;
    Ok(if s == 0.0 { f64::INFINITY } else { 1.0 / s })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    pub tau: f64,
    pub tau_star: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d4: f64,
    pub grad_tol: f64,
    pub max_iters: usize,
    pub min_gap: f64,
    pub override_tau_guard: bool,
    /// Check the coercivity bound of Ψ at every optimizer iterate.
    pub monitor_lower_bound: bool,
    pub initializer: Initializer,
}

impl StepperConfig {
    /// Defaults for `spec`: `d1` from its potentials, `d2 = 1`, `τ*` from both.
    pub fn new(tau: f64, spec: &EnergySpec) -> Result<Self> {
        let d1 = spec.growth_constant();
        let d2 = 1.0;
        Ok(Self {
            tau,
            tau_star: tau_threshold(d1, d2)?,
            d1,
            d2,
            d3: 0.0,
            d4: 0.0,
            grad_tol: 1e-9,
            max_iters: 500,
            min_gap: 0.0,
            override_tau_guard: false,
            monitor_lower_bound: false,
            initializer: Initializer::Duplicate,
        })
    }

    pub fn with_grad_tol(mut self, grad_tol: f64) -> Self {
        self.grad_tol = grad_tol;
        self
    }

    pub fn with_initializer(mut self, initializer: Initializer) -> Self {
        self.initializer = initializer;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive and finite");
        }
        if !(self.grad_tol > 0.0) {
            return bad("grad_tol must be positive");
        }
        if self.max_iters < 1 {
            return bad("max_iters must be at least 1");
        }
        if !(self.min_gap >= 0.0 && self.min_gap.is_finite()) {
            return bad("min_gap must be finite and non-negative");
        }
        for (name, d) in [("d1", self.d1), ("d2", self.d2), ("d3", self.d3), ("d4", self.d4)] {
            if !(d >= 0.0 && d.is_finite()) {
                return bad(&format!("{name} must be finite and non-negative"));
            }
        }
        Ok(())
    }

    /// Refuses `τ >= τ*` unless the guard is overridden.
    pub fn check_tau_guard(&self) -> Result<()> {
        if self.tau >= self.tau_star && !self.override_tau_guard {
            return Err(Error::TauAboveThreshold {
                tau: self.tau,
                tau_star: self.tau_star,
            });
        }
        Ok(())
    }

    fn settings(&self) -> SolverSettings {
        SolverSettings {
            grad_tol: self.grad_tol,
            max_iters: self.max_iters,
            ..SolverSettings::default()
        }
    }
}

/// `Ψ(τ, η, ν; ρ)`.
pub fn penalization(
    tau: f64,
    eta: &QuantileMeasure,
    nu: &QuantileMeasure,
    rho: &QuantileMeasure,
    spec: &EnergySpec,
) -> Result<f64> {
    Ok(w2_squared(nu, rho)? / tau - w2_squared(eta, rho)? / (4.0 * tau) + energy::total(rho, spec)?)
}

/// Exact gradient of [`penalization`] with respect to the positions of `rho`.
pub fn penalization_gradient(
    tau: f64,
    eta: &QuantileMeasure,
    nu: &QuantileMeasure,
    rho: &QuantileMeasure,
    spec: &EnergySpec,
) -> Result<Vec<f64>> {
    check_pair(nu, rho)?;
    check_pair(eta, rho)?;
    let mut g = energy::gradient_total(rho, spec)?;
    let w = rho.weights();
    let (x, y, z) = (rho.positions(), nu.positions(), eta.positions());
    for i in 0..g.len() {
        g[i] += w[i] * (2.0 * (x[i] - y[i]) - 0.5 * (x[i] - z[i])) / tau;
    }
    Ok(g)
}

/// Coercivity bound of Ψ:
/// `(1/8τ - 3/2 d1 - d2) M2(ρ) - M2(ν)/τ - 3/4τ M2(η) - d2 - 3/2 d1`.
pub fn lower_bound(
    tau: f64,
    eta: &QuantileMeasure,
    nu: &QuantileMeasure,
    rho: &QuantileMeasure,
    d1: f64,
    d2: f64,
) -> f64 {
    lower_bound_raw(
        tau,
        eta.second_moment(),
        nu.second_moment(),
        rho.second_moment(),
        d1,
        d2,
    )
}

fn lower_bound_raw(tau: f64, m_eta: f64, m_nu: f64, m_rho: f64, d1: f64, d2: f64) -> f64 {
    (1.0 / (8.0 * tau) - 1.5 * d1 - d2) * m_rho - m_nu / tau - 0.75 * m_eta / tau - d2 - 1.5 * d1
}

/// Result of one minimizing-movement step.
#[derive(Debug, Clone)]
pub struct Step {
    pub measure: QuantileMeasure,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// `sum_j c_j W2²(anchor_j, ·) + F` on raw position vectors.
struct StepObjective<'a> {
    spec: &'a EnergySpec,
    anchors: Vec<(f64, &'a [f64])>,
    weights: Vec<f64>,
    lower: f64,
    upper: f64,
    min_gap: f64,
    kinetic_coef: f64,
}

impl<'a> StepObjective<'a> {
    fn new(spec: &'a EnergySpec, anchors: Vec<(f64, &'a [f64])>, n: usize, domain: DomainSpec, min_gap: f64) -> Self {
        let (lower, upper) = domain.bounds();
        let kinetic_coef = anchors.iter().map(|(c, _)| c).sum();
        Self {
            spec,
            anchors,
            weights: trapezoid_weights(n),
            lower,
            upper,
            min_gap,
            kinetic_coef,
        }
    }

    fn feasible(&self, x: &[f64]) -> bool {
        let n = x.len();
        if x.iter().any(|v| !v.is_finite()) || x[0] < self.lower || x[n - 1] > self.upper {
            return false;
        }
        if self.spec.internal.is_some() {
            x.windows(2).all(|p| p[1] - p[0] > 0.0 && p[1] - p[0] >= self.min_gap)
        } else {
            x.windows(2).all(|p| p[1] >= p[0])
        }
    }

    fn value(&self, x: &[f64]) -> Option<f64> {
        let mut g = vec![0.0; x.len()];
        self.value_grad(x, &mut g)
    }
}

impl Objective for StepObjective<'_> {
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> Option<f64> {
        if !self.feasible(x) {
            return None;
        }
        let mut f = 0.0;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for &(c, a) in &self.anchors {
            f += c * w2_squared_raw(x, a);
            for i in 0..x.len() {
                grad[i] += 2.0 * c * self.weights[i] * (x[i] - a[i]);
            }
        }
        if let Some(internal) = self.spec.internal {
            f += energy::internal_raw(x, internal.m);
        }
        if let Some(v) = &self.spec.external {
            f += energy::external_raw(x, v);
        }
        if let Some(w) = &self.spec.interaction {
            f += energy::interaction_raw(x, w);
        }
        energy::accumulate_gradient(x, self.spec, grad);
        (f.is_finite() && grad.iter().all(|g| g.is_finite())).then_some(f)
    }

    fn model_hessian(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (mut diag, off) = energy::hessian_bands(x, self.spec);
        for (d, w) in diag.iter_mut().zip(&self.weights) {
            *d += 2.0 * self.kinetic_coef * w;
        }
        let scale = diag.iter().fold(0.0f64, |m, d| m.max(*d));
        let ridge = if scale > 0.0 { 1e-12 * scale } else { 1.0 };
        for (d, w) in diag.iter_mut().zip(&self.weights) {
            *d += ridge * w.max(f64::MIN_POSITIVE);
        }
        (diag, off)
    }
}

/// Minimizes `objective` from `start`, choosing the solver by whether the
/// internal energy keeps the gaps open.
fn solve(
    objective: &StepObjective<'_>,
    start: Vec<f64>,
    domain: DomainSpec,
    cfg: &StepperConfig,
    monitor: &mut dyn FnMut(&[f64], f64) -> Result<()>,
) -> Result<Step> {
    let constraints = constraints(domain, cfg);
    let settings = cfg.settings();
    let min: Minimum = if objective.spec.internal.is_some() {
        optimize::lbfgs(objective, start, &constraints, &settings, monitor)?
    } else {
        optimize::projected_gradient(objective, start, &constraints, &settings, monitor)?
    };
    let measure = QuantileMeasure::from_raw_unchecked(min.x, domain);
    if !min.converged {
        return Err(Error::OptimizerDidNotConverge {
            iterations: min.iterations,
            grad_norm: min.grad_norm,
            best: Box::new(measure),
        });
    }
    Ok(Step {
        measure,
        objective: min.value,
        grad_norm: min.grad_norm,
        iterations: min.iterations,
    })
}

fn constraints(domain: DomainSpec, cfg: &StepperConfig) -> Constraints {
    let (lower, upper) = domain.bounds();
    Constraints {
        lower,
        upper,
        min_gap: cfg.min_gap,
    }
}

fn check_internal_start(nu: &QuantileMeasure, spec: &EnergySpec) -> Result<()> {
    if spec.internal.is_some() {
        if let Some(index) = nu.first_zero_gap() {
            return Err(Error::SingularMeasure { index });
        }
    }
    Ok(())
}

fn check_pair(a: &QuantileMeasure, b: &QuantileMeasure) -> Result<()> {
    w2_squared(a, b).map(|_| ())
}

/// One JKO step from `nu` with step `cfg.tau`, warm-started at `nu`.
pub fn jko_step(nu: &QuantileMeasure, spec: &EnergySpec, cfg: &StepperConfig) -> Result<Step> {
    cfg.validate()?;
    check_internal_start(nu, spec)?;
    let objective = StepObjective::new(
        spec,
        vec![(0.5 / cfg.tau, nu.positions())],
        nu.len(),
        nu.domain(),
        cfg.min_gap,
    );
    solve(
        &objective,
        nu.positions().to_vec(),
        nu.domain(),
        cfg,
        &mut |_, _| Ok(()),
    )
}

/// One BDF2 step from the pair `(eta, nu) = (ρ^{k-2}, ρ^{k-1})`.
pub fn bdf2_step(eta: &QuantileMeasure, nu: &QuantileMeasure, spec: &EnergySpec, cfg: &StepperConfig) -> Result<Step> {
    cfg.validate()?;
    cfg.check_tau_guard()?;
    check_pair(eta, nu)?;
    check_internal_start(nu, spec)?;
    let tau = cfg.tau;
    let domain = nu.domain();
    let objective = StepObjective::new(
        spec,
        vec![(1.0 / tau, nu.positions()), (-0.25 / tau, eta.positions())],
        nu.len(),
        domain,
        cfg.min_gap,
    );

    let extrapolated: Vec<f64> = nu
        .positions()
        .iter()
        .zip(eta.positions())
        .map(|(y, z)| y + (y - z) / 3.0)
        .collect();
    let uniform = vec![1.0; nu.len()];
    let predictor = optimize::project_monotone(&extrapolated, &uniform, &constraints(domain, cfg));
    let start = if objective.value(&predictor).is_some() {
        predictor
    } else {
        nu.positions().to_vec()
    };

    if cfg.monitor_lower_bound {
        let m_eta = eta.second_moment();
        let m_nu = nu.second_moment();
        let (d1, d2) = (cfg.d1, cfg.d2);
        let mut monitor = |x: &[f64], f: f64| {
            let m_rho = crate::measure::weighted_square_sum(x);
            let bound = lower_bound_raw(tau, m_eta, m_nu, m_rho, d1, d2);
            let slack = 1e-12 * (1.0 + f.abs() + bound.abs());
            if f < bound - slack {
                Err(Error::LowerBoundViolated { deficit: bound - f })
            } else {
                Ok(())
            }
        };
        solve(&objective, start, domain, cfg, &mut monitor)
    } else {
        solve(&objective, start, domain, cfg, &mut |_, _| Ok(()))
    }
}

/// Minimizes `F` alone (a discrete steady state), starting from `mu`.
pub fn minimize_energy(mu: &QuantileMeasure, spec: &EnergySpec, cfg: &StepperConfig) -> Result<Step> {
    cfg.validate()?;
    check_internal_start(mu, spec)?;
    let objective = StepObjective::new(spec, Vec::new(), mu.len(), mu.domain(), cfg.min_gap);
    solve(
        &objective,
        mu.positions().to_vec(),
        mu.domain(),
        cfg,
        &mut |_, _| Ok(()),
    )
}

/// Per-step bookkeeping of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub time: f64,
    /// `W2(ρ^{k-1}, ρ^k)`.
    pub w2_increment: f64,
    pub energy: EnergyParts,
    pub second_moment: f64,
    pub iterations: usize,
    /// Projected gradient sup-norm at the accepted minimizer.
    pub grad_norm: f64,
    /// Right side minus left side of the per-step energy inequality.
    pub dissipation_margin: f64,
}

/// Discrete solution `ρ^k` with per-step records.
///
/// For BDF2, `states[0]` is `ρ^{-1}` and `states[1]` is `ρ^0`; for JKO,
/// `states[0]` is `ρ^0`. Records start at `k = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub scheme: Scheme,
    pub tau: f64,
    pub grad_tol: f64,
    pub initializer: Initializer,
    pub states: Vec<QuantileMeasure>,
    pub records: Vec<StepRecord>,
}

impl Trajectory {
    fn first_index(&self) -> i64 {
        match self.scheme {
            Scheme::Jko => 0,
            Scheme::Bdf2 => -1,
        }
    }

    /// Time of `ρ^0`.
    pub fn time_offset(&self) -> f64 {
        match (self.scheme, self.initializer) {
            (Scheme::Bdf2, Initializer::JkoSubstep) => self.tau,
            _ => 0.0,
        }
    }

    /// `ρ^k` for `k` in `first..=last_step`.
    pub fn state(&self, k: i64) -> Result<&QuantileMeasure> {
        let idx = k - self.first_index();
        usize::try_from(idx)
            .ok()
            .and_then(|i| self.states.get(i))
            .ok_or(Error::IndexOutOfRange { k })
    }

    /// Time attached to `ρ^k`. For the substep initializer `ρ^{-1}` sits at 0.
    pub fn time(&self, k: i64) -> f64 {
        if k < 0 {
            return 0.0;
        }
        self.time_offset() + k as f64 * self.tau
    }

    /// Index of the last computed state.
    pub fn last_step(&self) -> i64 {
        self.states.len() as i64 - 1 + self.first_index()
    }

    pub fn last(&self) -> &QuantileMeasure {
        self.states.last().expect("trajectory holds at least one state")
    }

    pub fn final_time(&self) -> f64 {
        self.time(self.last_step())
    }

    /// `(k, t, ρ^k)` for every state from `ρ^0` on.
    pub fn solution(&self) -> impl Iterator<Item = (i64, f64, &QuantileMeasure)> + '_ {
        (0..=self.last_step()).map(move |k| (k, self.time(k), self.state(k).expect("index in range")))
    }
}

/// Number of steps needed to reach `t_end` from `offset` in steps of `tau`.
fn step_count(t_end: f64, offset: f64, tau: f64) -> usize {
    let steps = ((t_end - offset) / tau - 1e-9).ceil();
    if steps < 1.0 {
        if offset > 0.0 {
            0
        } else {
            1
        }
    } else {
        steps as usize
    }
}

/// Runs the scheme from `rho0` up to time `t_end`.
pub fn run(
    rho0: &QuantileMeasure,
    t_end: f64,
    scheme: Scheme,
    spec: &EnergySpec,
    cfg: &StepperConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    if !(t_end > 0.0) {
        return Err(Error::NonpositiveTime(t_end));
    }
    if scheme == Scheme::Bdf2 {
        cfg.check_tau_guard()?;
    }
    check_internal_start(rho0, spec)?;
    let tau = cfg.tau;
    let mut traj = Trajectory {
        scheme,
        tau,
        grad_tol: cfg.grad_tol,
        initializer: cfg.initializer,
        states: vec![rho0.clone()],
        records: Vec::new(),
    };
    let fail = |traj: Trajectory, source: Error| Error::RunFailed {
        completed: traj.records.len(),
        trajectory: Box::new(traj),
        source: Box::new(source),
    };

    if scheme == Scheme::Bdf2 {
        match cfg.initializer {
            Initializer::Duplicate => traj.states.push(rho0.clone()),
            Initializer::JkoSubstep => match jko_step(rho0, spec, cfg) {
                Ok(step) => traj.states.push(step.measure),
                Err(e) => return Err(fail(traj, e)),
            },
        }
    }
    let steps = step_count(t_end, traj.time_offset(), tau);

    let mut energy_prev = match energy::parts(traj.last(), spec) {
        Ok(p) => p.total(),
        Err(e) => return Err(fail(traj, e)),
    };
    let mut w2sq_prev = match scheme {
        Scheme::Bdf2 => w2_squared(&traj.states[0], &traj.states[1])?,
        Scheme::Jko => 0.0,
    };
    for k in 1..=steps {
        let n = traj.states.len();
        let result = match scheme {
            Scheme::Jko => jko_step(&traj.states[n - 1], spec, cfg),
            Scheme::Bdf2 => bdf2_step(&traj.states[n - 2], &traj.states[n - 1], spec, cfg),
        };
        let step = match result {
            Ok(step) => step,
            Err(e) => return Err(fail(traj, e)),
        };
        let parts = match energy::parts(&step.measure, spec) {
            Ok(p) => p,
            Err(e) => return Err(fail(traj, e)),
        };
        let w2sq = w2_squared_raw(traj.states[n - 1].positions(), step.measure.positions());
        let margin = match scheme {
            Scheme::Jko => energy_prev - parts.total() - w2sq / (2.0 * tau),
            Scheme::Bdf2 => energy_prev + w2sq_prev / (4.0 * tau) - parts.total() - w2sq / (2.0 * tau),
        };
        traj.records.push(StepRecord {
            k,
            time: traj.time(k as i64),
            w2_increment: w2sq.sqrt(),
            energy: parts,
            second_moment: step.measure.second_moment(),
            iterations: step.iterations,
            grad_norm: step.grad_norm,
            dissipation_margin: margin,
        });
        traj.states.push(step.measure);
        energy_prev = parts.total();
        w2sq_prev = w2sq;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::PotentialHandle;

    fn line(p: &[f64]) -> QuantileMeasure {
        QuantileMeasure::from_quantiles(p.to_vec(), DomainSpec::Line).unwrap()
    }

    fn cfg(tau: f64, spec: &EnergySpec) -> StepperConfig {
        StepperConfig::new(tau, spec).unwrap()
    }

    #[test]
    fn threshold_examples() {
        assert!((tau_threshold(1.0, 1.0).unwrap() - 0.05).abs() < 1e-15);
        assert!((tau_threshold(0.0, 0.125).unwrap() - 1.0).abs() < 1e-15);
        assert!(tau_threshold(0.0, 0.0).unwrap().is_infinite());
        assert!(tau_threshold(-1.0, 0.0).is_err());
    }

    #[test]
    fn penalization_examples() {
        let spec = EnergySpec::zero();
        let mu = line(&[0.0, 0.4, 1.0]);
        assert_eq!(penalization(0.1, &mu, &mu, &mu, &spec).unwrap(), 0.0);
        let zero = line(&[0.0, 0.0]);
        let one = line(&[1.0, 1.0]);
        let tau = 0.2;
        let got = penalization(tau, &zero, &zero, &one, &spec).unwrap();
        assert!((got - 0.75 / tau).abs() < 1e-14);
    }

    #[test]
    fn jko_with_zero_energy_is_identity() {
        let spec = EnergySpec::zero();
        let nu = line(&[-1.0, 0.0, 0.3, 2.0]);
        let step = jko_step(&nu, &spec, &cfg(0.1, &spec)).unwrap();
        assert_eq!(step.measure.positions(), nu.positions());
    }

    #[test]
    fn bdf2_with_zero_energy_extrapolates() {
        let spec = EnergySpec::zero();
        let eta = line(&[-1.0, 0.0, 0.5, 1.0]);
        let nu = line(&[-0.8, 0.1, 0.6, 1.3]);
        let step = bdf2_step(&eta, &nu, &spec, &cfg(0.01, &spec)).unwrap();
        for ((x, y), z) in step.measure.positions().iter().zip(nu.positions()).zip(eta.positions()) {
            assert!((x - (4.0 * y - z) / 3.0).abs() < 1e-10);
        }
        let same = bdf2_step(&nu, &nu, &spec, &cfg(0.01, &spec)).unwrap();
        assert_eq!(same.measure.positions(), nu.positions());
    }

    #[test]
    fn single_particle_quadratic_steps() {
        let spec = EnergySpec::zero().external(PotentialHandle::quadratic(1.0));
        let tau = 0.05;
        let c = cfg(tau, &spec);
        let x0 = 0.7;
        let jko = jko_step(&line(&[x0, x0]), &spec, &c).unwrap();
        for x in jko.measure.positions() {
            assert!((x - x0 / (1.0 + tau)).abs() < 1e-8);
        }
        let (y, z) = (0.6, 0.65);
        let bdf = bdf2_step(&line(&[z, z]), &line(&[y, y]), &spec, &c).unwrap();
        for x in bdf.measure.positions() {
            assert!((x - (4.0 * y - z) / (3.0 + 2.0 * tau)).abs() < 1e-8);
        }
    }

    #[test]
    fn heat_step_spreads_support() {
        let spec = EnergySpec::with_internal(1.0).unwrap();
        let nu = QuantileMeasure::from_quantiles((0..21).map(|i| i as f64 / 20.0).collect(), DomainSpec::Line).unwrap();
        let step = jko_step(&nu, &spec, &cfg(1e-3, &spec)).unwrap();
        let x = step.measure.positions();
        assert!(x[0] < 0.0 && x[20] > 1.0);
    }

    #[test]
    fn bounded_domain_keeps_uniform_fixed() {
        let spec = EnergySpec::with_internal(1.0).unwrap();
        let dom = DomainSpec::interval(0.0, 1.0).unwrap();
        let nu = QuantileMeasure::from_quantiles((0..11).map(|i| i as f64 / 10.0).collect(), dom).unwrap();
        let step = jko_step(&nu, &spec, &cfg(1e-2, &spec)).unwrap();
        for (a, b) in step.measure.positions().iter().zip(nu.positions()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tau_guard_refuses_large_steps() {
        let spec = EnergySpec::zero().external(PotentialHandle::quadratic(1.0));
        let c = cfg(1.0, &spec);
        let mu = line(&[0.0, 1.0]);
        assert!(matches!(
            bdf2_step(&mu, &mu, &spec, &c),
            Err(Error::TauAboveThreshold { .. })
        ));
        let mut over = c.clone();
        over.override_tau_guard = true;
        assert!(bdf2_step(&mu, &mu, &spec, &over).is_ok());
    }

    #[test]
    fn run_counts_steps_and_records() {
        let spec = EnergySpec::zero();
        let mu = line(&[0.0, 0.5, 1.0]);
        let c = cfg(0.1, &spec);
        let short = run(&mu, 0.05, Scheme::Bdf2, &spec, &c).unwrap();
        assert_eq!(short.records.len(), 1);
        assert_eq!(short.states.len(), 3);
        let jko = run(&mu, 0.35, Scheme::Jko, &spec, &c).unwrap();
        assert_eq!(jko.records.len(), 4);
        assert_eq!(jko.states.len(), 5);
        let bdf = run(&mu, 0.3, Scheme::Bdf2, &spec, &c).unwrap();
        assert_eq!(bdf.records.len(), 3);
        assert!(bdf.states.iter().all(|s| s.positions() == mu.positions()));
        assert!((bdf.final_time() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn substep_initializer_shifts_time() {
        let spec = EnergySpec::zero().external(PotentialHandle::quadratic(1.0));
        let c = cfg(0.0625, &spec).with_initializer(Initializer::JkoSubstep);
        let traj = run(&line(&[1.0, 1.0]), 1.0, Scheme::Bdf2, &spec, &c).unwrap();
        assert_eq!(traj.records.len(), 15);
        assert!((traj.final_time() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn failed_run_returns_partial_trajectory() {
        let spec = EnergySpec::with_internal(2.0).unwrap();
        let mu =
            QuantileMeasure::from_quantiles((0..30).map(|i| (i as f64 / 29.0).powi(3)).collect(), DomainSpec::Line)
                .unwrap();
        let mut c = cfg(1e-2, &spec);
        c.max_iters = 1;
        match run(&mu, 0.1, Scheme::Bdf2, &spec, &c) {
            Err(Error::RunFailed {
                completed,
                trajectory,
                source,
            }) => {
                assert_eq!(completed, trajectory.records.len());
                assert!(matches!(*source, Error::OptimizerDidNotConverge { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lower_bound_holds_along_iterates() {
        let spec = EnergySpec::with_internal(1.0)
            .unwrap()
            .external(PotentialHandle::quadratic(1.0));
        let mut c = cfg(0.01, &spec);
        c.monitor_lower_bound = true;
        let eta = QuantileMeasure::from_quantiles((0..40).map(|i| -1.0 + i as f64 / 20.0).collect(), DomainSpec::Line)
            .unwrap();
        let nu = eta.translated(0.05).unwrap();
        let step = bdf2_step(&eta, &nu, &spec, &c).unwrap();
        let psi = penalization(c.tau, &eta, &nu, &step.measure, &spec).unwrap();
        assert!(psi >= lower_bound(c.tau, &eta, &nu, &step.measure, c.d1, c.d2));
    }
}
