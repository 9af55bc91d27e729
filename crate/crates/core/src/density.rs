//! Linearly parameterized density φ(q) = K(q)ᵀa, agent sensing functions and
//! the aggregate agent density f_P.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::geometry::{ConvexPolygon, Point};

/// Gaussian radial basis functions K(q) with `K_j(q) = exp(-|q - c_j|² / s_j²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSet {
    pub centers: Vec<[f64; 2]>,
    pub widths: Vec<f64>,
}

impl BasisSet {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn center(&self, j: usize) -> Point {
        Point::new(self.centers[j][0], self.centers[j][1])
    }

    #[inline]
    pub fn eval_component(&self, j: usize, q: &Point) -> f64 {
        let d2 = (q - self.center(j)).norm_squared();
        (-d2 / (self.widths[j] * self.widths[j])).exp()
    }

    /// Writes K(q) into `out` (length p).
    #[inline]
    pub fn eval_into(&self, q: &Point, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.eval_component(j, q);
        }
    }

    pub fn eval(&self, q: &Point) -> DVector<f64> {
        DVector::from_fn(self.len(), |j, _| self.eval_component(j, q))
    }

    /// Σ_j K_j(q) a_j without allocating.
    #[inline]
    pub fn dot(&self, q: &Point, params: &DVector<f64>) -> f64 {
        (0..self.len()).map(|j| self.eval_component(j, q) * params[j]).sum()
    }
}

/// Parameter vector `a` or an agent estimate `â_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector(pub DVector<f64>);

impl ParameterVector {
    pub fn from_slice(values: &[f64]) -> Self {
        Self(DVector::from_column_slice(values))
    }

    pub fn constant(p: usize, value: f64) -> Self {
        Self(DVector::from_element(p, value))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min_component(&self) -> f64 {
        self.0.min()
    }

    pub fn respects_lower_bound(&self, a_min: f64) -> bool {
        self.0.iter().all(|&v| v >= a_min)
    }
}

/// φ(q) = K(q)ᵀ a.
pub fn eval_phi(basis: &BasisSet, params: &ParameterVector, q: &Point) -> f64 {
    basis.dot(q, &params.0)
}

/// Non-increasing agent sensing quality as a function of distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SensingFunction {
    /// `A exp(-x²/σ²)`
    Gaussian { amplitude: f64, width: f64 },
    /// `A` for `x <= r`, else 0
    Constant {
        #[serde(default = "one")]
        amplitude: f64,
        range: f64,
    },
    /// `M/r⁴ (x² - r²)²` for `x < r`, else 0
    Quartic { peak: f64, range: f64 },
    /// `A exp(-1 / (1 - (x/r)²))` for `x < r`, else 0
    Bump { amplitude: f64, range: f64 },
}

fn one() -> f64 {
    1.0
}

impl Default for SensingFunction {
    fn default() -> Self {
        SensingFunction::Gaussian {
            amplitude: 1.0,
            width: 1.0,
        }
    }
}

impl SensingFunction {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            SensingFunction::Gaussian { amplitude, width } => amplitude * (-(x * x) / (width * width)).exp(),
            SensingFunction::Constant { amplitude, range } => {
                if x <= range {
                    amplitude
                } else {
                    0.0
                }
            }
            SensingFunction::Quartic { peak, range } => {
                if x < range {
                    let r2 = range * range;
                    let t = x * x - r2;
                    peak / (r2 * r2) * t * t
                } else {
                    0.0
                }
            }
            SensingFunction::Bump { amplitude, range } => {
                if x < range {
                    let s = x / range;
                    amplitude * (-1.0 / (1.0 - s * s)).exp()
                } else {
                    0.0
                }
            }
        }
    }

    pub fn is_limited_range(&self) -> bool {
        !matches!(self, SensingFunction::Gaussian { .. })
    }

    /// `(A, σ)` for the Gaussian kind.
    pub fn gaussian_params(&self) -> Option<(f64, f64)> {
        match *self {
            SensingFunction::Gaussian { amplitude, width } => Some((amplitude, width)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(format!("sensing.{name} must be positive, got {v}"))
            }
        };
        match *self {
            SensingFunction::Gaussian { amplitude, width } => {
                positive("amplitude", amplitude)?;
                positive("width", width)
            }
            SensingFunction::Constant { amplitude, range } | SensingFunction::Bump { amplitude, range } => {
                positive("amplitude", amplitude)?;
                positive("range", range)
            }
            SensingFunction::Quartic { peak, range } => {
                positive("peak", peak)?;
                positive("range", range)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AggregateMode {
    #[default]
    Max,
    Sum,
}

/// `f_P(q) = γ · max_i f_i(|p_i - q|)` or `γ · Σ_i f_i(|p_i - q|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateSpec {
    pub mode: AggregateMode,
    pub scale: f64,
}

pub fn eval_aggregate(spec: &AggregateSpec, sensing: &[SensingFunction], positions: &[Point], q: &Point) -> f64 {
    debug_assert_eq!(sensing.len(), positions.len());
    let values = sensing.iter().zip(positions).map(|(f, p)| f.eval((p - q).norm()));
    let combined = match spec.mode {
        AggregateMode::Max => values.fold(0.0, f64::max),
        AggregateMode::Sum => values.sum(),
    };
    spec.scale * combined
}

/// Minimum of φ over an `n × n` grid spanning the domain's bounding box
/// (points outside the domain skipped). Used as the lower bound β.
pub fn grid_lower_bound(basis: &BasisSet, params: &ParameterVector, domain: &ConvexPolygon, n: usize) -> f64 {
    let (lo, hi) = domain.bounding_box();
    let mut min = f64::INFINITY;
    for ix in 0..n {
        for iy in 0..n {
            let q = Point::new(
                lo.x + (hi.x - lo.x) * ix as f64 / (n - 1) as f64,
                lo.y + (hi.y - lo.y) * iy as f64 / (n - 1) as f64,
            );
            if domain.contains(&q, 1e-12) {
                min = min.min(eval_phi(basis, params, &q));
            }
        }
    }
    min
}
