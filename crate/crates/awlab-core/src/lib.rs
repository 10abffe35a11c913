//! Numerical laboratory for acoustic wave motion in an annulus whose outer
//! boundary is an elastic membrane.
//!
//! The interior velocity potential obeys `u_tt = c² Δu`; on the outer circle
//! the membrane displacement `v` obeys
//! `m v_tt = −ρ u_t + div_Γ(σ ∇_Γ v) − d v_t − k v − f`, coupled back through
//! the flux condition `∂_n u = v_t`, with a rigid inner circle (`∂_n u = 0`)
//! and the integral constraint `ρ∫u_t = (1/κ)∫v`.
//!
//! On top of the forward model the crate provides
//! * the backward (adjoint) system and its boundary observation,
//! * control synthesis by the Hilbert Uniqueness Method (conjugate gradient
//!   on the observation Gramian),
//! * numerical estimation of the observability constant,
//! * additive Q-Wiener boundary noise, moment bounds, a stationary-covariance
//!   oracle and mixing diagnostics.
//!
//! All discrete operators satisfy exact summation-by-parts identities, so the
//! energy ledger, the dissipativity identity and forward/backward duality hold
//! to round-off rather than to discretization accuracy.

pub mod adjoint;
pub mod dense;
pub mod error;
pub mod forward;
pub mod grid;
pub mod hum;
pub mod model;
pub mod stats;
pub mod stepper;
pub mod stochastic;

pub use error::CoreError;
pub use grid::{AnnulusGrid, BoundaryField, GeometricConditionReport, InteriorField};
pub use model::{EnergyBreakdown, PhysicalParams, StateVector};
