//! Detection of steady symmetry-breaking (pitchfork) bifurcations of
//! incompressible flow in planar contraction-expansion channels, using a
//! POD-Galerkin reduced-basis pipeline.
//!
//! The crate is organized around an offline/online split:
//!
//! * offline: full-order steady solves on a staggered grid produce snapshot
//!   velocity fields over a sampled (Reynolds number, expansion ratio)
//!   parameter set; an orthonormal divergence-free basis is extracted and the
//!   reduced operators (diffusion matrix, convection tensor, flow-rate
//!   vectors) are assembled and archived;
//! * online: a small dense fixed-point solver with mass-flow-rate constraints
//!   answers parameter queries in milliseconds, and an eigenvalue sweep of the
//!   reduced linearized convection operator brackets the critical Reynolds
//!   number where the symmetric solution loses stability.

pub mod basis;
pub mod error;
pub mod field;
pub mod fom;
pub mod geometry;
pub mod pipeline;
pub mod rom;
pub mod sampling;
pub mod stability;

pub use error::Error;
pub type Result<T> = std::result::Result<T, Error>;
