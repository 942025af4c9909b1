//! Moment propagation for invariants of noise-driven dynamical systems.
//!
//! A scalar invariant `U` of the drift `f` obeys, under `dx = f dt + g dB` with
//! `dB ~ N(0, Q dt)`, the moment equations
//!
//! ```text
//! μ̇_U = E[tr(Gᵀ H_U G Q)]
//! Ṙ_U = 2 E[U tr(Gᵀ H_U G Q)] + E[U_sᵀ G Q Gᵀ U_s]
//! ```
//!
//! with `H_U = ½∂²U/∂x²`. This crate evaluates them for the torque-perturbed rigid body
//! (kinetic energy, closed under Gaussian closure) and the perturbed two-body problem
//! (squared angular momentum, bounded by eigenvalues of `Q`), and checks both against
//! Monte Carlo ensembles.

// Guards like `!(dt > 0.0)` are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod linalg;
pub mod noise;
pub mod ode;
pub mod report;
pub mod rigidbody;
pub mod sde;
pub mod stats;
pub mod twobody;

pub use error::{Error, Result};
