//! Steady-state bifurcation toolkit for the forced dissipative vorticity
//! equation `(∇×ψ)·∇(Δψ) = -κΔ(ψ - ψ*)` with `ψ* = cos x₂` on the channel
//! `[0, 2π/a] × [0, 2π]`.
//!
//! * [`spectral`]: even cosine fields, transforms and the dealiased advection term.
//! * [`critical`]: the critical Ekman number from the continued-fraction
//!   characteristic equation, cross-checked by a matrix eigenvalue oracle.
//! * [`linear`]: the critical eigenfunction and the linearized operator.
//! * [`steady`]: Newton solves, bifurcation detection and pseudo-arclength continuation.
//! * [`lagrangian`]: trajectories, flow gradients and the integral operator
//!   used to verify steady states independently.

pub mod critical;
pub mod error;
pub mod lagrangian;
pub mod linear;
pub mod spectral;
pub mod steady;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub use spectral::{AspectRatio, GridField, SpectralField};
