use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use serde::{Deserialize, Serialize};

use super::{ConvexPolygon, GeometryError, Point};

pub const MAX_ORDER: usize = 10;

/// Weighted nodes for integrating over one polygon.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    points: Vec<Point>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Point, f64)> + '_ {
        self.points.iter().zip(self.weights.iter().copied())
    }

    /// Sum of weights, i.e. the polygon area.
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate<F: FnMut(&Point) -> f64>(&self, mut f: F) -> f64 {
        self.iter().map(|(q, w)| w * f(q)).sum()
    }
}

/// Polynomial order and optional refinement of the fan triangles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSpec {
    /// Polynomial exactness per triangle, 1..=10.
    pub order: usize,
    /// Fan triangles are split uniformly until no edge exceeds this (m).
    /// `None` keeps the bare fan.
    #[serde(default)]
    pub max_edge: Option<f64>,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            order: 6,
            max_edge: Some(0.1),
        }
    }
}

impl QuadratureSpec {
    pub fn build(&self, polygon: &ConvexPolygon) -> Result<QuadratureRule, GeometryError> {
        build_quadrature_refined(polygon, self.order, self.max_edge)
    }
}

/// Fan triangulation from the polygon centroid with a collapsed
/// Gauss–Legendre rule of the requested exactness on every triangle.
pub fn build_quadrature(polygon: &ConvexPolygon, order: usize) -> Result<QuadratureRule, GeometryError> {
    build_quadrature_refined(polygon, order, None)
}

pub fn build_quadrature_refined(
    polygon: &ConvexPolygon,
    order: usize,
    max_edge: Option<f64>,
) -> Result<QuadratureRule, GeometryError> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(GeometryError::InvalidOrder(order));
    }
    if let Some(h) = max_edge {
        if !(h > 0.0 && h.is_finite()) {
            return Err(GeometryError::InvalidPolygon(format!("max_edge must be positive, got {h}")));
        }
    }
    let reference = reference_triangle_rule(order);
    let c = polygon.centroid();
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (a, b) in polygon.edges() {
        let area = 0.5 * (a - c).perp(&(b - c));
        if area <= 0.0 {
            continue;
        }
        let longest = (a - c).norm().max((b - c).norm()).max((b - a).norm());
        let m = match max_edge {
            Some(h) => ((longest / h).ceil() as usize).max(1),
            None => 1,
        };
        for_each_subtriangle(c, a, b, m, |p0, p1, p2| {
            let e1 = p1 - p0;
            let e2 = p2 - p0;
            let jac = e1.perp(&e2);
            for &(x, y, w) in &reference {
                points.push(p0 + e1 * x + e2 * y);
                weights.push(w * jac);
            }
        });
    }
    Ok(QuadratureRule { points, weights })
}

/// Splits triangle (a, b, c) into m² congruent pieces.
fn for_each_subtriangle<F: FnMut(Point, Point, Point)>(a: Point, b: Point, c: Point, m: usize, mut f: F) {
    let e1 = (b - a) / m as f64;
    let e2 = (c - a) / m as f64;
    let at = |i: usize, j: usize| a + e1 * i as f64 + e2 * j as f64;
    for i in 0..m {
        for j in 0..m - i {
            f(at(i, j), at(i + 1, j), at(i, j + 1));
            if i + j + 1 < m {
                f(at(i + 1, j), at(i + 1, j + 1), at(i, j + 1));
            }
        }
    }
}

/// Nodes `(x, y, w)` on the reference triangle {x, y ≥ 0, x + y ≤ 1}, weights
/// summing to 1/2. Uses the Duffy map x = u, y = (1-u)v with Jacobian (1-u),
/// so a degree-d polynomial needs exactness d+1 in u and d in v.
fn reference_triangle_rule(order: usize) -> Vec<(f64, f64, f64)> {
    let nu = (order + 3) / 2;
    let nv = (order + 2) / 2;
    let gu = unit_interval_rule(nu);
    let gv = unit_interval_rule(nv);
    let mut out = Vec::with_capacity(nu * nv);
    for &(u, wu) in &gu {
        for &(v, wv) in &gv {
            out.push((u, (1.0 - u) * v, wu * wv * (1.0 - u)));
        }
    }
    out
}

fn unit_interval_rule(n: usize) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(NonZeroUsize::new(n).expect("n >= 1"));
    rule.iter()
        .map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w))
        .collect()
}
