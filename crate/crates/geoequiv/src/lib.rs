//! Numerical verification of geodesic equivalence and projective rigidity
//! for explicitly given pseudo-Riemannian metrics.
//!
//! The crate takes metrics in a small expression language (or from a built-in
//! catalog), computes curvature data through order-3 jet arithmetic, derives
//! the projective data of a metric pair, and evaluates the identities, ODEs,
//! and linear-algebra statements that govern geodesically equivalent Einstein
//! metrics — each as a numerical residual with an explicit tolerance.

pub mod equiv;
pub mod expr;
pub mod fields;
pub mod jets;
pub mod catalog;
pub mod metric;
pub mod rigidity;
pub mod tensor;
