//! Averaging-based analysis of periodic solutions for `x' = eps * g(t, x, eps)`
//! with Lipschitz, possibly non-differentiable, right-hand sides.
//!
//! The crate computes the averaged function `g0(v) = ∫₀ᵀ g(τ, v, 0) dτ`,
//! certifies the checkable hypotheses behind existence, uniqueness and
//! asymptotic stability of T-periodic solutions near a zero of `g0`, and
//! verifies those conclusions by direct simulation of the period map.

pub mod averaging;
pub mod certify;
pub mod expr;
pub mod field;
pub mod linalg;
pub mod odeint;
pub mod orbit;
pub mod vdp;

pub use field::{FnField, LinearTestField, PeriodicField};
