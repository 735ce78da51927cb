//! Minimizers for the per-step problems.
//!
//! Two solvers share one [`Objective`] interface:
//!
//! * [`lbfgs`]: limited-memory quasi-Newton descent whose initial inverse
//!   Hessian is the exact solve with a tridiagonal model Hessian supplied by
//!   the objective. Simple bounds are handled with an active set. Used when
//!   the internal energy keeps every gap open.
//! * [`projected_gradient`]: scaled gradient steps projected onto the cone of
//!   monotone vectors (weighted isotonic regression, then the box). Used when
//!   nothing prevents particles from colliding.

use std::collections::VecDeque;

/// A smooth objective on a convex set of position vectors.
pub trait Objective {
    /// Value and gradient at `x`, or `None` if `x` is infeasible.
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> Option<f64>;

    /// Positive definite tridiagonal model of the Hessian at `x`, as
    /// `(diagonal, off_diagonal)`.
    fn model_hessian(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Stop when the projected gradient sup-norm is `<= grad_tol * (1 + |f|)`.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// L-BFGS memory.
    pub memory: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            grad_tol: 1e-9,
            max_iters: 500,
            memory: 10,
        }
    }
}

/// Box and ordering constraints for [`projected_gradient`]; the lower and
/// upper bounds also drive the active set of [`lbfgs`].
#[derive(Debug, Clone, PartialEq)]
pub struct Constraints {
    pub lower: f64,
    pub upper: f64,
    /// Minimal spacing of consecutive coordinates (cone path only).
    pub min_gap: f64,
}

impl Constraints {
    pub fn unbounded() -> Self {
        Self {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            min_gap: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Called with every accepted iterate and its value; an error aborts.
pub type Monitor<'a, E> = &'a mut dyn FnMut(&[f64], f64) -> Result<(), E>;

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves the symmetric tridiagonal system `(diag, off) z = rhs` in place.
pub(crate) fn solve_tridiagonal(diag: &[f64], off: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut denom = diag[0];
    c[0] = if n > 1 { off[0] / denom } else { 0.0 };
    rhs[0] /= denom;
    for i in 1..n {
        denom = diag[i] - off[i - 1] * c[i - 1];
        if i + 1 < n {
            c[i] = off[i] / denom;
        }
        rhs[i] = (rhs[i] - off[i - 1] * rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// Tolerated objective increase attributed to round-off.
fn noise(f: f64) -> f64 {
    64.0 * f64::EPSILON * (1.0 + f.abs())
}

const ARMIJO: f64 = 1e-4;

/// Active-set L-BFGS with a tridiagonal initial Hessian.
///
/// Only the first coordinate may sit at `constraints.lower` and only the
/// last at `constraints.upper`; ordering is left to the objective (which
/// must report crossings as infeasible).
pub fn lbfgs<O: Objective, E>(
    objective: &O,
    x0: Vec<f64>,
    constraints: &Constraints,
    settings: &SolverSettings,
    monitor: Monitor<'_, E>,
) -> Result<Minimum, E> {
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut f = objective
        .value_grad(&x, &mut g)
        .expect("solver must start from a feasible point");
    monitor(&x, f)?;
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut active = [false; 2];
    let mut grad_norm = f64::INFINITY;
    let mut x_trial = vec![0.0; n];
    let mut g_trial = vec![0.0; n];

    for iter in 0..settings.max_iters {
        let new_active = [
            x[0] <= constraints.lower && g[0] > 0.0,
            x[n - 1] >= constraints.upper && g[n - 1] < 0.0,
        ];
        if new_active != active {
            memory.clear();
            active = new_active;
        }
        let is_active = |i: usize| (i == 0 && active[0]) || (i == n - 1 && active[1]);
        let mut pg = g.clone();
        for i in [0, n - 1] {
            if is_active(i) {
                pg[i] = 0.0;
            }
        }
        grad_norm = sup_norm(&pg);
        if grad_norm <= settings.grad_tol * (1.0 + f.abs()) {
            return Ok(Minimum {
                x,
                value: f,
                grad_norm,
                iterations: iter,
                converged: true,
            });
        }

        let (mut diag, mut off) = objective.model_hessian(&x);
        for i in [0, n - 1] {
            if is_active(i) {
                diag[i] = 1.0;
                if i > 0 {
                    off[i - 1] = 0.0;
                }
                if i + 1 < n {
                    off[i] = 0.0;
                }
            }
        }

        let mut direction = two_loop(&pg, &memory, &diag, &off);
        for i in [0, n - 1] {
            if is_active(i) {
                direction[i] = 0.0;
            }
        }
        let mut slope = dot(&pg, &direction);
        if !(slope < 0.0) {
            memory.clear();
            direction = two_loop(&pg, &memory, &diag, &off);
            slope = dot(&pg, &direction);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            for i in 0..n {
                x_trial[i] = x[i] + step * direction[i];
            }
            x_trial[0] = x_trial[0].max(constraints.lower);
            x_trial[n - 1] = x_trial[n - 1].min(constraints.upper);
            if let Some(ft) = objective.value_grad(&x_trial, &mut g_trial) {
                let decrease = dot(&g, &x_trial.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>());
                if ft <= f + ARMIJO * decrease.min(step * slope).min(0.0) + noise(f) && ft.is_finite() {
                    accepted = Some(ft);
                    break;
                }
            }
            step *= 0.5;
        }
        let Some(f_new) = accepted else {
            if memory.is_empty() {
                break;
            }
            memory.clear();
            continue;
        };

        let s: Vec<f64> = x_trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let mut y: Vec<f64> = g_trial.iter().zip(&g).map(|(a, b)| a - b).collect();
        for i in [0, n - 1] {
            if is_active(i) {
                y[i] = 0.0;
            }
        }
        let sy = dot(&s, &y);
        if sy > 1e-14 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if memory.len() == settings.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut x, &mut x_trial);
        std::mem::swap(&mut g, &mut g_trial);
        f = f_new;
        monitor(&x, f)?;
    }
    Ok(Minimum {
        x,
        value: f,
        grad_norm,
        iterations: settings.max_iters,
        converged: false,
    })
}

fn two_loop(grad: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, diag: &[f64], off: &[f64]) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    solve_tridiagonal(diag, off, &mut q);
    // Rescale the model by the most recent curvature pair.
    if let Some((s, y, _)) = memory.back() {
        let mut hy = y.clone();
        solve_tridiagonal(diag, off, &mut hy);
        let gamma = dot(s, y) / dot(y, &hy);
        if gamma.is_finite() && gamma > 0.0 {
            q.iter_mut().for_each(|v| *v *= gamma);
        }
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Weighted least-squares projection onto non-decreasing vectors
/// (pool-adjacent-violators).
pub fn isotonic_regression(values: &[f64], weights: &[f64]) -> Vec<f64> {
    // blocks of (mean, weight, length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (m2, w2, l2) = blocks[blocks.len() - 1];
            let (m1, w1, l1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let wt = w1 + w2;
            *blocks.last_mut().unwrap() = ((m1 * w1 + m2 * w2) / wt, wt, l1 + l2);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, l)| std::iter::repeat_n(m, l))
        .collect()
}

/// Projection onto `{lower <= x_1, x_{i+1} - x_i >= min_gap, x_N <= upper}`
/// in the metric `diag(weights)`.
pub fn project_monotone(x: &[f64], weights: &[f64], c: &Constraints) -> Vec<f64> {
    let shifted: Vec<f64> = x.iter().enumerate().map(|(i, v)| v - i as f64 * c.min_gap).collect();
    let iso = isotonic_regression(&shifted, weights);
    let n = x.len();
    let mut out: Vec<f64> = iso.iter().enumerate().map(|(i, v)| v + i as f64 * c.min_gap).collect();
    for v in out.iter_mut() {
        *v = v.clamp(c.lower, c.upper);
    }
    for i in 1..n {
        if out[i] < out[i - 1] {
            out[i] = out[i - 1];
        }
    }
    out
}

/// Scaled projected gradient on the monotone cone.
pub fn projected_gradient<O: Objective, E>(
    objective: &O,
    x0: Vec<f64>,
    constraints: &Constraints,
    settings: &SolverSettings,
    monitor: Monitor<'_, E>,
) -> Result<Minimum, E> {
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut f = objective
        .value_grad(&x, &mut g)
        .expect("solver must start from a feasible point");
    monitor(&x, f)?;
    let mut g_trial = vec![0.0; n];
    let mut grad_norm = f64::INFINITY;

    for iter in 0..settings.max_iters {
        let (diag, _) = objective.model_hessian(&x);
        let full: Vec<f64> = (0..n).map(|i| x[i] - g[i] / diag[i]).collect();
        let target = project_monotone(&full, &diag, constraints);
        let mapping: Vec<f64> = (0..n).map(|i| diag[i] * (x[i] - target[i])).collect();
        grad_norm = sup_norm(&mapping);
        if grad_norm <= settings.grad_tol * (1.0 + f.abs()) {
            return Ok(Minimum {
                x,
                value: f,
                grad_norm,
                iterations: iter,
                converged: true,
            });
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial_full: Vec<f64> = (0..n).map(|i| x[i] - step * g[i] / diag[i]).collect();
            let trial = project_monotone(&trial_full, &diag, constraints);
            if let Some(ft) = objective.value_grad(&trial, &mut g_trial) {
                let decrease: f64 = (0..n).map(|i| g[i] * (trial[i] - x[i])).sum();
                if ft.is_finite() && ft <= f + ARMIJO * decrease.min(0.0) + noise(f) {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((trial, ft)) = accepted else { break };
        x = trial;
        std::mem::swap(&mut g, &mut g_trial);
        f = ft;
        monitor(&x, f)?;
    }
    Ok(Minimum {
        x,
        value: f,
        grad_norm,
        iterations: settings.max_iters,
        converged: false,
    })
}
