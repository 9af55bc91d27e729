//! Planar geometry: the convex domain, its Voronoi partition, the Delaunay
//! neighbor graph, and quadrature over cells.

mod polygon;
mod quadrature;
mod voronoi;

use thiserror::Error;

pub use polygon::ConvexPolygon;
pub use quadrature::{build_quadrature, build_quadrature_refined, QuadratureRule, QuadratureSpec, MAX_ORDER};
pub use voronoi::{
    compute_voronoi, compute_voronoi_with, delaunay_graph, is_connected, VoronoiCell, COINCIDENT_TOL,
    DOMAIN_TOL, SHARED_EDGE_TOL,
};

/// A point or displacement in the plane, meters.
pub type Point = nalgebra::Vector2<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("agents {first} and {second} coincide")]
    DegenerateConfiguration { first: usize, second: usize },
    #[error("agent {agent} at ({x}, {y}) is outside the domain")]
    OutsideDomain { agent: usize, x: f64, y: f64 },
    #[error("quadrature order {0} is outside 1..=10")]
    InvalidOrder(usize),
    #[error("no agents given")]
    NoAgents,
    #[error("Voronoi cell of agent {0} is empty")]
    EmptyCell(usize),
}
