//! Numerical laboratory for semilinear stochastic transport equations
//! `du + b·∇u dt + F(t,x,u) dt + ∇u ∘ dB = 0` solved by stochastic
//! characteristics.
//!
//! The crate is organized around the solution representation
//! `u(t,x) = Z_t(y, f(y))` with `y = X_t^{-1}(x)`, where `X` is the
//! characteristic flow driven by a shared Brownian path and `Z` the reaction
//! flow along it:
//!
//! - [`fields`]: coefficients `b`, `F`, `f`, mollifier kernels, bump test
//!   functions, and their statistical validation.
//! - [`paths`]: reproducible Brownian paths with bridge refinement.
//! - [`characteristics`]: the flow `X`, its Jacobian, inverse, the reaction
//!   flow `Z`, and the composed solution field.
//! - [`weakform`]: Itô and Stratonovich weak-form residuals against test
//!   functions.
//! - [`commutator`]: the mollification commutator, its pairing along the
//!   flow, and the commutator-lemma bound.
//! - [`oracle`]: independent pathwise cross-check via a noise-removing
//!   coordinate shift and a semi-Lagrangian grid scheme.
//! - [`experiments`]: scenario registry, Monte Carlo drivers, CSV emitters.

pub mod characteristics;
pub mod commutator;
pub mod csv;
pub mod error;
pub mod experiments;
pub mod fields;
pub mod grid;
pub mod oracle;
pub mod paths;
pub mod weakform;

pub use error::{Result, StlError};
