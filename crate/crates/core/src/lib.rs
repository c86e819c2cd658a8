//! Continuous-time accelerated gradient flows generated by a damped
//! Euler-Lagrange system, together with the machinery to certify them:
//! Lyapunov functions, parameter-condition checkers, rate and integral
//! bounds, and a smoothing extension for nonsmooth objectives.
//!
//! The flow is integrated in first-order form over the pair `(x, z)` with
//! `z = x + e^{-alpha(t)} x'`:
//!
//! ```text
//! x' = e^alpha (z - x)
//! Hess h(z) z' = -(delta' + eta' - alpha' - e^alpha) [grad h(z) - grad h(x)] - e^{alpha - eta} grad f(x)
//! ```
//!
//! and certified by
//!
//! ```text
//! V(t) = e^nu ( e^eta D_h(x*, z) + f(x) - f(x*) )
//! ```
//!
//! Modules:
//!
//! - [`bregman`]: distance generators, objectives, Bregman divergences and sampled convexity checks
//! - [`schedules`]: damping families and the inequality systems their parameters must satisfy
//! - [`dynamics`]: state-equation right-hand sides and the fixed-step RK4 integrator
//! - [`lyapunov`]: Lyapunov values, monotonicity, rate bounds, integral estimates, rate fitting
//! - [`smoothing`]: smooth approximations of nonsmooth objectives and the smoothed flow
//! - [`problems`]: built-in test objectives with known minimizers
//! - [`cli`]: the config-driven experiment runner behind the `accel-flow` binary
//!
//! See the crate's `examples/` directory for one runnable program per capability.

pub mod bregman;
pub mod cli;
pub mod dynamics;
mod error;
pub mod lyapunov;
pub mod problems;
pub mod schedules;
pub mod smoothing;

pub use error::{Error, Result};

/// Dense column vector used for all states and gradients.
pub type Vector = nalgebra::DVector<f64>;
