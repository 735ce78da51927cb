//! Variational BDF2 and JKO time stepping for the nonlinear Fokker–Planck
//! equation
//!
//! ```text
//! ∂t ρ = Δ(ρ^m) + div(ρ ∇V) + div(ρ ∇(W * ρ))
//! ```
//!
//! as a gradient flow in the L²-Wasserstein space over one space dimension.
//! Measures are stored by their quantile functions, which makes optimal
//! transport exact and mass conservation structural.

// NaN must fail validation, so `!(x > 0.0)` is intended.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod energy;
pub mod error;
pub mod measure;
pub mod optimize;
mod quadrature;
pub mod reference;
pub mod stepper;
pub mod transport;

pub use energy::{EnergyParts, EnergySpec, InternalEnergy, PotentialHandle};
pub use error::{Error, Result};
pub use measure::{DomainSpec, PiecewiseDensity, QuantileMeasure};
pub use stepper::{Initializer, Scheme, Step, StepRecord, StepperConfig, Trajectory};
pub use transport::{w2, w2_squared, MonotonePlan};
