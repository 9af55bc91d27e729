use serde::{Deserialize, Serialize};

use super::{GeometryError, Point};

/// Relative tolerance used for convexity and containment tests.
const REL_EPS: f64 = 1e-12;

/// A strictly convex polygon with counter-clockwise vertices (meters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct ConvexPolygon {
    vertices: Vec<Point>,
}

impl ConvexPolygon {
    /// Validates and builds a polygon. Clockwise input is reoriented.
    pub fn new(mut vertices: Vec<Point>) -> Result<Self, GeometryError> {
        if vertices.len() < 3 {
            return Err(GeometryError::InvalidPolygon(format!(
                "need at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
            return Err(GeometryError::InvalidPolygon("non-finite vertex".into()));
        }
        let signed = signed_area(&vertices);
        if signed.abs() <= 0.0 || !signed.is_finite() {
            return Err(GeometryError::InvalidPolygon("zero area".into()));
        }
        if signed < 0.0 {
            vertices.reverse();
        }
        let n = vertices.len();
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            let e1 = b - a;
            let e2 = c - b;
            let cross = e1.perp(&e2);
            if cross <= REL_EPS * e1.norm() * e2.norm() {
                return Err(GeometryError::InvalidPolygon(format!(
                    "not strictly convex at vertex {}",
                    (i + 1) % n
                )));
            }
        }
        Ok(Self { vertices })
    }

    /// Axis-aligned rectangle `[min.x, max.x] × [min.y, max.y]`.
    pub fn rectangle(min: Point, max: Point) -> Result<Self, GeometryError> {
        Self::new(vec![
            min,
            Point::new(max.x, min.y),
            max,
            Point::new(min.x, max.y),
        ])
    }

    /// Output of half-plane clipping. Drops repeated vertices but does not
    /// re-check strict convexity, since clipped cells can carry nearly
    /// collinear vertices where a bisector passes through a corner.
    pub(crate) fn from_clipped(vertices: Vec<Point>) -> Option<Self> {
        let mut out: Vec<Point> = Vec::with_capacity(vertices.len());
        for v in vertices {
            if out.last().is_none_or(|l| (l - v).norm() > 1e-12) {
                out.push(v);
            }
        }
        while out.len() > 1 && (out[0] - out[out.len() - 1]).norm() <= 1e-12 {
            out.pop();
        }
        if out.len() < 3 || signed_area(&out) <= 0.0 {
            return None;
        }
        Some(Self { vertices: out })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    /// Iterator over directed edges `(v_k, v_{k+1})`.
    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    /// Area centroid.
    pub fn centroid(&self) -> Point {
        let mut acc = Point::zeros();
        let mut twice_area = 0.0;
        // Shift to the first vertex to limit cancellation.
        let o = self.vertices[0];
        for (a, b) in self.edges() {
            let (a, b) = (a - o, b - o);
            let cross = a.perp(&b);
            twice_area += cross;
            acc += (a + b) * cross;
        }
        o + acc / (3.0 * twice_area)
    }

    /// Length of the longest side, used as a size scale for tolerances.
    pub fn diameter_bound(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices[1..] {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Signed distance-like margin: the largest outward offset of `p` over
    /// all edge lines (≤ 0 inside).
    pub fn outside_margin(&self, p: &Point) -> f64 {
        self.edges()
            .map(|(a, b)| {
                let e = b - a;
                // outward normal for a CCW polygon is (e.y, -e.x)
                let n = Point::new(e.y, -e.x) / e.norm();
                n.dot(&(p - a))
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Closed containment with an absolute tolerance in meters.
    pub fn contains(&self, p: &Point, tol: f64) -> bool {
        self.outside_margin(p) <= tol
    }

    /// Euclidean projection onto the polygon (identity for interior points).
    pub fn project(&self, p: &Point) -> Point {
        if self.outside_margin(p) <= 0.0 {
            return *p;
        }
        let mut best = *p;
        let mut best_d = f64::INFINITY;
        for (a, b) in self.edges() {
            let e = b - a;
            let t = ((p - a).dot(&e) / e.norm_squared()).clamp(0.0, 1.0);
            let c = a + e * t;
            let d = (p - c).norm_squared();
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        best
    }

    /// Keeps the part of the polygon where `normal · (q - origin) <= 0`.
    pub fn clip_half_plane(&self, origin: &Point, normal: &Point) -> Option<ConvexPolygon> {
        let n = self.vertices.len();
        let side: Vec<f64> = self.vertices.iter().map(|v| normal.dot(&(v - origin))).collect();
        let mut out = Vec::with_capacity(n + 1);
        for i in 0..n {
            let j = (i + 1) % n;
            let (a, b) = (self.vertices[i], self.vertices[j]);
            let (sa, sb) = (side[i], side[j]);
            if sa <= 0.0 {
                out.push(a);
            }
            if (sa <= 0.0) != (sb <= 0.0) {
                let t = sa / (sa - sb);
                out.push(a + (b - a) * t);
            }
        }
        Self::from_clipped(out)
    }
}

impl TryFrom<Vec<[f64; 2]>> for ConvexPolygon {
    type Error = GeometryError;

    fn try_from(v: Vec<[f64; 2]>) -> Result<Self, Self::Error> {
        Self::new(v.into_iter().map(|[x, y]| Point::new(x, y)).collect())
    }
}

impl From<ConvexPolygon> for Vec<[f64; 2]> {
    fn from(p: ConvexPolygon) -> Self {
        p.vertices.iter().map(|v| [v.x, v.y]).collect()
    }
}

pub(crate) fn signed_area(vertices: &[Point]) -> f64 {
    let n = vertices.len();
    let o = vertices[0];
    let mut twice = 0.0;
    for i in 0..n {
        let a = vertices[i] - o;
        let b = vertices[(i + 1) % n] - o;
        twice += a.perp(&b);
    }
    0.5 * twice
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> ConvexPolygon {
        ConvexPolygon::rectangle(Point::new(0.0, 0.0), Point::new(1.0, 1.0)).unwrap()
    }

    #[test]
    fn area_and_centroid_of_square() {
        let sq = unit_square();
        assert!((sq.area() - 1.0).abs() < 1e-15);
        assert!((sq.centroid() - Point::new(0.5, 0.5)).norm() < 1e-15);
    }

    #[test]
    fn clockwise_input_is_reoriented() {
        let cw = ConvexPolygon::new(vec![
            Point::new(0.0, 0.0),
            Point::new(0.0, 1.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 0.0),
        ])
        .unwrap();
        assert!(cw.area() > 0.0);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(ConvexPolygon::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)]).is_err());
        let collinear = vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(2.0, 0.0)];
        assert!(ConvexPolygon::new(collinear).is_err());
        // reflex vertex
        let dart = vec![
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(1.0, 0.5),
            Point::new(1.0, 2.0),
        ];
        assert!(ConvexPolygon::new(dart).is_err());
    }

    #[test]
    fn projection_lands_on_boundary() {
        let sq = unit_square();
        assert_eq!(sq.project(&Point::new(0.3, 0.4)), Point::new(0.3, 0.4));
        assert!((sq.project(&Point::new(1.5, 0.5)) - Point::new(1.0, 0.5)).norm() < 1e-15);
        assert!((sq.project(&Point::new(2.0, 2.0)) - Point::new(1.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn clipping_halves_the_square() {
        let sq = unit_square();
        let half = sq
            .clip_half_plane(&Point::new(0.5, 0.0), &Point::new(1.0, 0.0))
            .unwrap();
        assert!((half.area() - 0.5).abs() < 1e-15);
        assert!(sq
            .clip_half_plane(&Point::new(-1.0, 0.0), &Point::new(1.0, 0.0))
            .is_none());
    }
}
