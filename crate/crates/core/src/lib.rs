//! Stochastic optimization for non-convex finite sums whose smoothness grows
//! with the gradient norm.
//!
//! The main algorithm combines a variance-reduced gradient estimator with
//! periodic large-batch restarts ([`spider`]), an adaptively damped L-BFGS
//! approximation of the inverse Hessian ([`quasi_newton`]), and a clipped
//! stepsize rule that keeps the per-step displacement bounded even when the
//! gradient is large ([`optimizer`]). Baseline methods sharing the same
//! oracles live in [`baselines`]; synthetic problems and objective oracles in
//! [`objectives`].

pub mod baselines;
pub mod error;
pub mod linalg;
pub mod objectives;
pub mod optimizer;
pub mod quasi_newton;
pub mod rng;
pub mod spider;
pub mod trace;

pub use error::{Error, Result};
