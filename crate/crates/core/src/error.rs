use thiserror::Error;

use crate::measure::QuantileMeasure;
use crate::stepper::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("a quantile measure needs at least 2 positions, got {0}")]
    TooFewPoints(usize),

    #[error("positions decrease at index {index}: {left} > {right}")]
    NonMonotone { index: usize, left: f64, right: f64 },

    #[error("position {value} at index {index} lies outside the domain")]
    OutOfDomain { index: usize, value: f64 },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("density has mass {mass}, expected 1")]
    MassNotOne { mass: f64 },

    #[error("density is negative ({value}) at x = {x}")]
    NegativeDensity { x: f64, value: f64 },

    #[error("zero gap between positions {index} and {}", .index + 1)]
    ZeroGap { index: usize },

    #[error("measure is singular: zero gap at cell {index}")]
    SingularMeasure { index: usize },

    #[error("grid mismatch: {left} vs {right} quantile samples")]
    GridMismatch { left: usize, right: usize },

    #[error("measures live on different domain kinds")]
    DomainMismatch,

    #[error("interaction kernel must be symmetric (W(-x) = W(x))")]
    AsymmetricKernel,

    #[error("potential '{name}' violates its growth bound at x = {x}")]
    GrowthBoundViolated { name: String, x: f64 },

    #[error("invalid energy: {0}")]
    InvalidEnergy(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("time step {tau} is not below the admissible threshold tau* = {tau_star} = (12 d1 + 8 d2)^-1")]
    TauAboveThreshold { tau: f64, tau_star: f64 },

    #[error("optimizer did not converge after {iterations} iterations (gradient {grad_norm:e})")]
    OptimizerDidNotConverge {
        iterations: usize,
        grad_norm: f64,
        best: Box<QuantileMeasure>,
    },

    #[error("penalization fell below its coercivity bound by {deficit:e}")]
    LowerBoundViolated { deficit: f64 },

    #[error("step index {k} out of range")]
    IndexOutOfRange { k: i64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("time must be positive, got {0}")]
    NonpositiveTime(f64),

    #[error("trajectory stopped after {completed} steps: {source}")]
    RunFailed {
        completed: usize,
        trajectory: Box<Trajectory>,
        #[source]
        source: Box<Error>,
    },
}
