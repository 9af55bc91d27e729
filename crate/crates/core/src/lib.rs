//! Distributed adaptive coverage control for differential-drive robots.
//!
//! Agents partition a convex domain into Voronoi cells, estimate an unknown
//! density `φ(q) = K(q)ᵀa` online from point measurements, and steer toward
//! generalized centroids of their cells. Estimates are shared with Voronoi
//! neighbors through an undirected or a per-parameter directed consensus
//! term.
//!
//! The [`harness`] module runs whole scenarios; the lower modules expose the
//! geometric and control primitives on their own.

pub mod adaptation;
pub mod control;
pub mod cost;
pub mod density;
pub mod dynamics;
pub mod exec;
pub mod geometry;
pub mod harness;
pub mod verify;

pub use exec::Execution;
pub use geometry::Point;
