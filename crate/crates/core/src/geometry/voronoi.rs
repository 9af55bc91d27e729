use crate::adaptation::ConsensusGraph;
use crate::exec::{self, Execution};

use super::{ConvexPolygon, GeometryError, Point};

/// Minimum separation between agents, meters.
pub const COINCIDENT_TOL: f64 = 1e-9;
/// Shared edges at or below this length do not make two agents neighbors.
pub const SHARED_EDGE_TOL: f64 = 1e-9;
/// Slack for "inside the domain" checks on agent positions.
pub const DOMAIN_TOL: f64 = 1e-9;

/// One agent's Voronoi region clipped to the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiCell {
    pub owner: usize,
    pub polygon: ConvexPolygon,
    /// `(agent, shared edge length)` for every Voronoi neighbor, sorted by agent.
    pub neighbors: Vec<(usize, f64)>,
}

impl VoronoiCell {
    pub fn shared_edge(&self, other: usize) -> f64 {
        self.neighbors
            .iter()
            .find(|(j, _)| *j == other)
            .map_or(0.0, |(_, l)| *l)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum EdgeLabel {
    Domain,
    Bisector(usize),
}

/// Polygon whose edge `k` (from vertex `k` to `k+1`) remembers which
/// constraint produced it.
struct LabeledPolygon {
    vertices: Vec<Point>,
    labels: Vec<EdgeLabel>,
}

impl LabeledPolygon {
    fn clip(&self, origin: &Point, normal: &Point, label: EdgeLabel) -> LabeledPolygon {
        let n = self.vertices.len();
        let mut vertices = Vec::with_capacity(n + 1);
        let mut labels = Vec::with_capacity(n + 1);
        let side: Vec<f64> = self.vertices.iter().map(|v| normal.dot(&(v - origin))).collect();
        for i in 0..n {
            let j = (i + 1) % n;
            let (a, b) = (self.vertices[i], self.vertices[j]);
            let (sa, sb) = (side[i], side[j]);
            match (sa <= 0.0, sb <= 0.0) {
                (true, true) => {
                    vertices.push(a);
                    labels.push(self.labels[i]);
                }
                (true, false) => {
                    vertices.push(a);
                    labels.push(self.labels[i]);
                    vertices.push(a + (b - a) * (sa / (sa - sb)));
                    labels.push(label);
                }
                (false, true) => {
                    vertices.push(a + (b - a) * (sa / (sa - sb)));
                    labels.push(self.labels[i]);
                }
                (false, false) => {}
            }
        }
        LabeledPolygon { vertices, labels }.dedup()
    }

    fn dedup(self) -> LabeledPolygon {
        let n = self.vertices.len();
        if n == 0 {
            return self;
        }
        let mut vertices = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let next = self.vertices[(i + 1) % n];
            // a zero-length edge vanishes; the next vertex keeps its own label
            if (self.vertices[i] - next).norm() <= 1e-14 && n > 1 {
                continue;
            }
            vertices.push(self.vertices[i]);
            labels.push(self.labels[i]);
        }
        LabeledPolygon { vertices, labels }
    }
}

/// Voronoi partition of `domain` generated by `positions`, each cell built by
/// clipping the domain against the bisector half-planes of every other agent.
pub fn compute_voronoi(
    positions: &[Point],
    domain: &ConvexPolygon,
) -> Result<Vec<VoronoiCell>, GeometryError> {
    compute_voronoi_with(positions, domain, Execution::default())
}

pub fn compute_voronoi_with(
    positions: &[Point],
    domain: &ConvexPolygon,
    execution: Execution,
) -> Result<Vec<VoronoiCell>, GeometryError> {
    validate_sites(positions, domain)?;
    let n = positions.len();
    let domain_labeled = LabeledPolygon {
        vertices: domain.vertices().to_vec(),
        labels: vec![EdgeLabel::Domain; domain.vertices().len()],
    };

    let raw: Vec<(LabeledPolygon, Vec<f64>)> = exec::map_indexed(execution, n, |i| {
        let pi = positions[i];
        let mut poly = LabeledPolygon {
            vertices: domain_labeled.vertices.clone(),
            labels: domain_labeled.labels.clone(),
        };
        for (j, pj) in positions.iter().enumerate() {
            if j == i {
                continue;
            }
            let mid = (pi + pj) * 0.5;
            let normal = pj - pi;
            poly = poly.clip(&mid, &normal, EdgeLabel::Bisector(j));
            if poly.vertices.len() < 3 {
                break;
            }
        }
        let mut lengths = vec![0.0; n];
        let m = poly.vertices.len();
        for k in 0..m {
            if let EdgeLabel::Bisector(j) = poly.labels[k] {
                lengths[j] += (poly.vertices[(k + 1) % m] - poly.vertices[k]).norm();
            }
        }
        (poly, lengths)
    });

    let mut cells = Vec::with_capacity(n);
    for (i, (poly, _)) in raw.iter().enumerate() {
        let polygon = ConvexPolygon::from_clipped(poly.vertices.clone())
            .ok_or(GeometryError::EmptyCell(i))?;
        // Each pair uses the mean of both views so that lengths are exactly
        // symmetric; the views agree up to rounding.
        let neighbors = (0..n)
            .filter(|&j| j != i)
            .filter_map(|j| {
                let l = 0.5 * (raw[i].1[j] + raw[j].1[i]);
                (l > SHARED_EDGE_TOL).then_some((j, l))
            })
            .collect();
        cells.push(VoronoiCell {
            owner: i,
            polygon,
            neighbors,
        });
    }
    Ok(cells)
}

fn validate_sites(positions: &[Point], domain: &ConvexPolygon) -> Result<(), GeometryError> {
    if positions.is_empty() {
        return Err(GeometryError::NoAgents);
    }
    for (i, p) in positions.iter().enumerate() {
        if !p.x.is_finite() || !p.y.is_finite() || !domain.contains(p, DOMAIN_TOL) {
            return Err(GeometryError::OutsideDomain { agent: i, x: p.x, y: p.y });
        }
    }
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            if (positions[i] - positions[j]).norm() <= COINCIDENT_TOL {
                return Err(GeometryError::DegenerateConfiguration { first: i, second: j });
            }
        }
    }
    Ok(())
}

/// Undirected Delaunay graph weighted by shared Voronoi edge length.
pub fn delaunay_graph(cells: &[VoronoiCell]) -> ConsensusGraph {
    let n = cells.len();
    let mut weights = nalgebra::DMatrix::zeros(n, n);
    for cell in cells {
        for &(j, l) in &cell.neighbors {
            weights[(cell.owner, j)] = l;
        }
    }
    ConsensusGraph::Undirected { weights }
}

/// Whether the Delaunay graph of `cells` is connected (BFS from agent 0).
pub fn is_connected(cells: &[VoronoiCell]) -> bool {
    let n = cells.len();
    if n == 0 {
        return true;
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for &(j, _) in &cells[i].neighbors {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}
