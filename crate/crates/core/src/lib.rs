//! Convexification for a parabolic coefficient inverse problem.
//!
//! The crate simulates lateral-boundary and interior measurements of
//! `u_t = Δu + b·∇u − c(x)u` on `(A, B)² × (−T, T)`, rewrites the problem
//! for `w = ∂_t ln u` so the unknown coefficient drops out, and recovers
//! `c` by minimizing a Carleman-weighted Tikhonov-like functional that is
//! strictly convex on bounded sets.

pub mod carleman;
pub mod error;
pub mod formats;
pub mod forward;
pub mod grid;
pub mod inverse;
pub mod phantoms;
pub mod pipeline;
pub mod noise;
pub mod transform;

pub use error::{Error, Result};
pub use grid::{Axis, Rank, ScalarField, SpaceTimeGrid};
