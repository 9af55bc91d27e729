//! Coverage costs and the generalized centroids that their gradients are
//! built from.
//!
//! For Gaussian sensing `f(x) = A exp(-x²/σ²)` and max aggregation with
//! scale γ, the L² cost `d₂ = Σ_i ∫_{V_i} |φ - γ f(|p_i - q|)|² dq` has
//!
//! ```text
//! ∂d₂/∂p_i = (4γA/σ²) (M_i p_i - L_i),
//! λ_i(q)   = e_i(q) [φ(q) - γA e_i(q)],   e_i(q) = exp(-|p_i - q|²/σ²),
//! ```
//!
//! with `M_i = ∫ λ_i`, `L_i = ∫ q λ_i` over the cell. Boundary terms from the
//! moving cells cancel because the integrand is continuous across shared
//! edges.

use nalgebra::DVector;
use thiserror::Error;

use crate::density::{eval_aggregate, AggregateMode, AggregateSpec, BasisSet, ParameterVector, SensingFunction};
use crate::geometry::{compute_voronoi, ConvexPolygon, GeometryError, Point, QuadratureRule, QuadratureSpec, VoronoiCell};

/// Masses below this have no usable centroid.
pub const ZERO_MASS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("cell of agent {agent} has near-zero mass {mass:e}")]
    ZeroMass { agent: usize, mass: f64 },
    #[error("aggregate density is {value:e} at ({x}, {y}); KL divergence needs it positive")]
    NonPositiveAggregate { value: f64, x: f64, y: f64 },
    #[error("closed-form gradient requires Gaussian sensing")]
    NonGaussianSensing,
}

/// Everything needed to evaluate a coverage cost for a set of positions.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageModel {
    pub domain: ConvexPolygon,
    pub basis: BasisSet,
    pub true_params: ParameterVector,
    pub sensing: SensingFunction,
    pub aggregate: AggregateSpec,
    pub quadrature: QuadratureSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightVariant {
    TrueLambda,
    EstimatedLambda,
    PlainPhi,
    EstimatedPhi,
}

impl WeightVariant {
    pub fn is_lambda(self) -> bool {
        matches!(self, WeightVariant::TrueLambda | WeightVariant::EstimatedLambda)
    }
}

/// Weight used for a cell's generalized mass and centroid. `params` is the
/// true `a` for the true variants and the agent's `â_i` otherwise.
#[derive(Debug, Clone, Copy)]
pub struct WeightFunction<'a> {
    pub variant: WeightVariant,
    pub basis: &'a BasisSet,
    pub params: &'a DVector<f64>,
    /// Sensing amplitude A (λ variants only).
    pub amplitude: f64,
    /// Sensing width σ (λ variants only).
    pub width: f64,
    /// Aggregate scale γ (λ variants only).
    pub gamma: f64,
}

impl<'a> WeightFunction<'a> {
    pub fn lambda(
        basis: &'a BasisSet,
        params: &'a DVector<f64>,
        amplitude: f64,
        width: f64,
        gamma: f64,
        estimated: bool,
    ) -> Self {
        Self {
            variant: if estimated {
                WeightVariant::EstimatedLambda
            } else {
                WeightVariant::TrueLambda
            },
            basis,
            params,
            amplitude,
            width,
            gamma,
        }
    }

    pub fn phi(basis: &'a BasisSet, params: &'a DVector<f64>, estimated: bool) -> Self {
        Self {
            variant: if estimated {
                WeightVariant::EstimatedPhi
            } else {
                WeightVariant::PlainPhi
            },
            basis,
            params,
            amplitude: 1.0,
            width: 1.0,
            gamma: 0.0,
        }
    }

    /// Lambda weight for the model's (Gaussian) sensing function.
    pub fn model_lambda(model: &'a CoverageModel, params: &'a DVector<f64>, estimated: bool) -> Result<Self, CostError> {
        let (amplitude, width) = model.sensing.gaussian_params().ok_or(CostError::NonGaussianSensing)?;
        Ok(Self::lambda(&model.basis, params, amplitude, width, model.aggregate.scale, estimated))
    }
}

/// Weight function value at `q` for the cell owned by the agent at `owner`.
#[inline]
pub fn eval_lambda(owner: &Point, weight: &WeightFunction<'_>, q: &Point) -> f64 {
    let phi = weight.basis.dot(q, weight.params);
    if weight.variant.is_lambda() {
        let e = (-(owner - q).norm_squared() / (weight.width * weight.width)).exp();
        e * (phi - weight.gamma * weight.amplitude * e)
    } else {
        phi
    }
}

/// Generalized mass, moment and centroid of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellStatistics {
    pub mass: f64,
    pub moment: Point,
    pub centroid: Point,
}

impl CellStatistics {
    pub fn from_mass_moment(agent: usize, mass: f64, moment: Point) -> Result<Self, CostError> {
        if !(mass.abs() >= ZERO_MASS) {
            return Err(CostError::ZeroMass { agent, mass });
        }
        Ok(Self {
            mass,
            moment,
            centroid: moment / mass,
        })
    }
}

pub fn cell_statistics(
    cell: &VoronoiCell,
    owner: &Point,
    weight: &WeightFunction<'_>,
    quadrature: &QuadratureSpec,
) -> Result<CellStatistics, CostError> {
    let rule = quadrature.build(&cell.polygon)?;
    cell_statistics_with_rule(cell.owner, &rule, owner, weight)
}

pub fn cell_statistics_with_rule(
    agent: usize,
    rule: &QuadratureRule,
    owner: &Point,
    weight: &WeightFunction<'_>,
) -> Result<CellStatistics, CostError> {
    let mut mass = 0.0;
    let mut moment = Point::zeros();
    for (q, w) in rule.iter() {
        let l = w * eval_lambda(owner, weight, q);
        mass += l;
        moment += q * l;
    }
    CellStatistics::from_mass_moment(agent, mass, moment)
}

/// The aggregate density restricted to cell `i`: for max aggregation with a
/// shared sensing function only the owner contributes.
#[inline]
fn aggregate_on_cell(model: &CoverageModel, positions: &[Point], owner: usize, q: &Point) -> f64 {
    match model.aggregate.mode {
        AggregateMode::Max => model.aggregate.scale * model.sensing.eval((positions[owner] - q).norm()),
        AggregateMode::Sum => {
            let sensing = vec![model.sensing; positions.len()];
            eval_aggregate(&model.aggregate, &sensing, positions, q)
        }
    }
}

/// `d₂(φ, f_P)` evaluated cell by cell.
pub fn cost_d2(model: &CoverageModel, positions: &[Point]) -> Result<f64, CostError> {
    let cells = compute_voronoi(positions, &model.domain)?;
    cost_d2_on_cells(model, positions, &cells)
}

pub fn cost_d2_on_cells(model: &CoverageModel, positions: &[Point], cells: &[VoronoiCell]) -> Result<f64, CostError> {
    let mut total = 0.0;
    for cell in cells {
        let rule = model.quadrature.build(&cell.polygon)?;
        total += rule.integrate(|q| {
            let r = model.basis.dot(q, &model.true_params.0) - aggregate_on_cell(model, positions, cell.owner, q);
            r * r
        });
    }
    Ok(total)
}

/// Locational optimization cost `H = Σ_i ∫_{V_i} |p_i - q|² φ(q) dq`.
pub fn cost_locational(model: &CoverageModel, positions: &[Point]) -> Result<f64, CostError> {
    let cells = compute_voronoi(positions, &model.domain)?;
    let mut total = 0.0;
    for cell in &cells {
        let rule = model.quadrature.build(&cell.polygon)?;
        let p = positions[cell.owner];
        total += rule.integrate(|q| (p - q).norm_squared() * model.basis.dot(q, &model.true_params.0));
    }
    Ok(total)
}

/// `d_KL(φ, f_P) = ∫ φ log(φ / f_P)`.
pub fn cost_kl(model: &CoverageModel, positions: &[Point]) -> Result<f64, CostError> {
    let cells = compute_voronoi(positions, &model.domain)?;
    let sensing = vec![model.sensing; positions.len()];
    let mut total = 0.0;
    for cell in &cells {
        let rule = model.quadrature.build(&cell.polygon)?;
        for (q, w) in rule.iter() {
            let fp = eval_aggregate(&model.aggregate, &sensing, positions, q);
            if !(fp > 0.0) {
                return Err(CostError::NonPositiveAggregate { value: fp, x: q.x, y: q.y });
            }
            let phi = model.basis.dot(q, &model.true_params.0);
            if phi > 0.0 {
                total += w * phi * (phi / fp).ln();
            }
        }
    }
    Ok(total)
}

/// Closed-form gradient `(4γA/σ²)(M p_i - L)` for agent `agent` using a
/// λ-type weight (true or estimated).
pub fn grad_d2(
    agent: usize,
    cells: &[VoronoiCell],
    positions: &[Point],
    weight: &WeightFunction<'_>,
    quadrature: &QuadratureSpec,
) -> Result<Point, CostError> {
    let cell = cells.iter().find(|c| c.owner == agent).expect("agent has a cell");
    let rule = quadrature.build(&cell.polygon)?;
    Ok(grad_d2_with_rule(&rule, &positions[agent], weight))
}

pub fn grad_d2_with_rule(rule: &QuadratureRule, position: &Point, weight: &WeightFunction<'_>) -> Point {
    let mut mass = 0.0;
    let mut moment = Point::zeros();
    for (q, w) in rule.iter() {
        let l = w * eval_lambda(position, weight, q);
        mass += l;
        moment += q * l;
    }
    gradient_scale(weight) * (position * mass - moment)
}

/// `4γA/σ²`.
pub fn gradient_scale(weight: &WeightFunction<'_>) -> f64 {
    4.0 * weight.gamma * weight.amplitude / (weight.width * weight.width)
}
