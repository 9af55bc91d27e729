//! Scenario documents (TOML), built-in presets, dotted-key overrides and
//! validation into a runnable [`Scenario`].

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptation::{AdaptationGains, ConsensusMode};
use crate::control::{ControllerSpec, ControllerVariant};
use crate::cost::CoverageModel;
use crate::density::{grid_lower_bound, AggregateMode, AggregateSpec, BasisSet, ParameterVector, SensingFunction};
use crate::dynamics::{AgentPose, VelocityLimits};
use crate::geometry::{ConvexPolygon, Point, QuadratureSpec, COINCIDENT_TOL, DOMAIN_TOL, MAX_ORDER};

/// Grid resolution for the density lower bound β.
pub const BETA_GRID: usize = 200;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid override `{key}`: {message}")]
    Override { key: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    /// Simulated time, s.
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub consensus: ConsensusMode,
    #[serde(default = "default_controller")]
    pub controller: ControllerVariant,
    /// Every component of â(0).
    #[serde(default = "default_initial_estimate")]
    pub initial_estimate: f64,
    #[serde(default = "default_a_min")]
    pub a_min: f64,
    /// Std of additive Gaussian noise on point measurements of φ.
    #[serde(default)]
    pub measurement_noise_std: f64,
    pub domain: DomainConfig,
    pub agents: AgentsConfig,
    pub density: DensityConfig,
    #[serde(default)]
    pub sensing: SensingFunction,
    #[serde(default)]
    pub aggregate: AggregateConfig,
    #[serde(default)]
    pub gains: GainsConfig,
    #[serde(default)]
    pub rates: RatesConfig,
    #[serde(default)]
    pub limits: VelocityLimits,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
}

fn default_name() -> String {
    "custom".into()
}
fn default_controller() -> ControllerVariant {
    ControllerVariant::DiffDriveL2
}
fn default_initial_estimate() -> f64 {
    10.0
}
fn default_a_min() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub vertices: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentsConfig {
    pub count: usize,
    /// `[x, y, θ]` per agent; drawn from the seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poses: Option<Vec<[f64; 3]>>,
    /// Minimum spacing of randomly drawn positions, m.
    #[serde(default = "default_min_separation")]
    pub min_separation: f64,
    /// Offset of the tracked center point from the wheel axis, m.
    #[serde(default = "default_d")]
    pub d: f64,
}

fn default_min_separation() -> f64 {
    0.2
}
fn default_d() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    pub centers: Vec<[f64; 2]>,
    pub widths: Vec<f64>,
    pub true_params: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaKeyword {
    Beta,
}

/// Aggregate scale γ: a number, or `"beta"` for the grid lower bound of φ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaSetting {
    Value(f64),
    Keyword(GammaKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateConfig {
    #[serde(default)]
    pub mode: AggregateMode,
    #[serde(default = "default_gamma")]
    pub gamma: GammaSetting,
}

fn default_gamma() -> GammaSetting {
    GammaSetting::Keyword(GammaKeyword::Beta)
}

impl Default for AggregateConfig {
    fn default() -> Self {
        Self {
            mode: AggregateMode::Max,
            gamma: default_gamma(),
        }
    }
}

/// Γ as `c` (meaning `c·I`) or a full matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AdaptGain {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GainsConfig {
    pub k1: f64,
    pub kp: f64,
    pub k2: f64,
    pub adapt_gain: AdaptGain,
    pub gamma_meas: f64,
    pub zeta: f64,
    pub alpha: f64,
}

impl Default for GainsConfig {
    fn default() -> Self {
        Self {
            k1: 0.1,
            kp: 1.0,
            k2: 1.0,
            adapt_gain: AdaptGain::Scalar(0.1),
            gamma_meas: 2.0,
            zeta: 1.0,
            alpha: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatesConfig {
    pub control_hz: f64,
    pub dynamics_hz: f64,
    /// Localization feed rate; poses are exact when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position_hz: Option<f64>,
}

impl Default for RatesConfig {
    fn default() -> Self {
        Self {
            control_hz: 10.0,
            dynamics_hz: 100.0,
            position_hz: None,
        }
    }
}

/// Name and one-line description of every built-in preset.
pub const PRESETS: &[(&str, &str)] = &[
    (
        "table1",
        "5 differential-drive robots on [-2,2]², two Gaussian bases a=(85,30), L2 controller, 120 s",
    ),
    (
        "single_agent",
        "one single-integrator agent, symmetric density at the origin, true-λ centroid, 60 s",
    ),
];

pub fn preset(name: &str) -> Result<ScenarioConfig, ScenarioError> {
    match name {
        "table1" => Ok(table1()),
        "single_agent" => Ok(single_agent()),
        _ => Err(ScenarioError::UnknownPreset(name.to_string())),
    }
}

fn square_domain(h: f64) -> DomainConfig {
    DomainConfig {
        vertices: vec![[-h, -h], [h, -h], [h, h], [-h, h]],
    }
}

fn table1() -> ScenarioConfig {
    ScenarioConfig {
        name: "table1".into(),
        duration: 120.0,
        seed: 0,
        consensus: ConsensusMode::None,
        controller: ControllerVariant::DiffDriveL2,
        initial_estimate: 10.0,
        a_min: 0.1,
        measurement_noise_std: 0.0,
        domain: square_domain(2.0),
        agents: AgentsConfig {
            count: 5,
            poses: None,
            min_separation: default_min_separation(),
            d: 0.05,
        },
        density: DensityConfig {
            centers: vec![[1.0, 0.98], [1.0, -0.8]],
            widths: vec![0.6, 0.3],
            true_params: vec![85.0, 30.0],
        },
        sensing: SensingFunction::Gaussian {
            amplitude: 1.0,
            width: 1.0,
        },
        aggregate: AggregateConfig::default(),
        gains: GainsConfig::default(),
        rates: RatesConfig::default(),
        limits: VelocityLimits::default(),
        quadrature: QuadratureSpec::default(),
    }
}

fn single_agent() -> ScenarioConfig {
    ScenarioConfig {
        name: "single_agent".into(),
        duration: 60.0,
        controller: ControllerVariant::SingleIntegratorL2,
        agents: AgentsConfig {
            count: 1,
            poses: Some(vec![[1.2, -0.7, 0.0]]),
            min_separation: default_min_separation(),
            d: 0.05,
        },
        density: DensityConfig {
            centers: vec![[0.0, 0.0]],
            widths: vec![2.0],
            true_params: vec![10.0],
        },
        ..table1()
    }
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    toml::from_str(text).map_err(|e| ScenarioError::Parse(e.message().to_string()))
}

pub fn load_config_file(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

pub fn config_to_toml(config: &ScenarioConfig) -> String {
    toml::to_string(config).expect("scenario config serializes")
}

/// Applies `key.path=value` overrides. The value is read as a TOML literal
/// (number, bool, array, inline table) and falls back to a bare string.
pub fn apply_overrides<S: AsRef<str>>(config: &ScenarioConfig, overrides: &[S]) -> Result<ScenarioConfig, ScenarioError> {
    let mut tree = toml::Value::try_from(config).expect("scenario config serializes");
    let mut current = config.clone();
    for raw in overrides {
        let raw = raw.as_ref();
        let (key, value) = raw.split_once('=').ok_or_else(|| ScenarioError::Override {
            key: raw.to_string(),
            message: "expected key=value".into(),
        })?;
        let key = key.trim();
        let override_err = |message: String| ScenarioError::Override {
            key: key.to_string(),
            message,
        };
        let path: Vec<&str> = key.split('.').collect();
        if path.iter().any(|s| s.is_empty()) {
            return Err(override_err("empty key segment".into()));
        }
        let parsed = parse_literal(value.trim());
        let mut node = &mut tree;
        for (depth, segment) in path.iter().enumerate() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| override_err(format!("`{}` is not a section", path[..depth].join("."))))?;
            if depth + 1 == path.len() {
                table.insert(segment.to_string(), parsed.clone());
                break;
            }
            node = table
                .entry(segment.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        }
        current = tree.clone().try_into().map_err(|e: toml::de::Error| override_err(e.message().to_string()))?;
    }
    Ok(current)
}

fn parse_literal(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(value.to_string())),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

/// A validated, ready-to-run scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: CoverageModel,
    pub controller: ControllerSpec,
    pub gains: AdaptationGains,
    pub consensus: ConsensusMode,
    pub initial_poses: Vec<AgentPose>,
    pub initial_estimate: DVector<f64>,
    pub a_min: f64,
    pub noise_std: f64,
    pub limits: VelocityLimits,
    /// Grid minimum of the true φ.
    pub beta: f64,
    pub control_dt: f64,
    pub substeps: usize,
    /// Dynamics sub-steps between localization samples; `None` for exact poses.
    pub position_every: Option<usize>,
    pub n_ticks: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn n_agents(&self) -> usize {
        self.initial_poses.len()
    }

    pub fn n_params(&self) -> usize {
        self.model.basis.len()
    }

    pub fn true_params(&self) -> &DVector<f64> {
        &self.model.true_params.0
    }
}

pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    Scenario::from_config(parse_config(text)?)
}

fn positive(field: &str, v: f64) -> Result<(), ScenarioError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive, got {v}")))
    }
}

fn integer_ratio(num: f64, den: f64) -> Option<usize> {
    let r = num / den;
    let k = r.round();
    ((r - k).abs() < 1e-9 * r.max(1.0) && k >= 1.0).then_some(k as usize)
}

impl Scenario {
    pub fn from_config(config: ScenarioConfig) -> Result<Self, ScenarioError> {
        let c = &config;
        if !(c.duration >= 0.0 && c.duration.is_finite()) {
            return Err(invalid("duration", format!("must be nonnegative, got {}", c.duration)));
        }
        let domain_pts: Vec<Point> = c.domain.vertices.iter().map(|v| Point::new(v[0], v[1])).collect();
        let domain = ConvexPolygon::new(domain_pts).map_err(|e| invalid("domain.vertices", e.to_string()))?;

        let p = c.density.centers.len();
        if p == 0 {
            return Err(invalid("density.centers", "at least one basis function is required"));
        }
        if c.density.widths.len() != p {
            return Err(invalid("density.widths", format!("expected {p} entries, got {}", c.density.widths.len())));
        }
        if c.density.true_params.len() != p {
            return Err(invalid(
                "density.true_params",
                format!("expected {p} entries, got {}", c.density.true_params.len()),
            ));
        }
        for w in &c.density.widths {
            positive("density.widths", *w)?;
        }
        if c.density.centers.iter().flatten().any(|x| !x.is_finite()) {
            return Err(invalid("density.centers", "must be finite"));
        }
        if !(c.a_min >= 0.0 && c.a_min.is_finite()) {
            return Err(invalid("a_min", format!("must be nonnegative, got {}", c.a_min)));
        }
        for a in &c.density.true_params {
            if !(*a >= c.a_min && a.is_finite()) {
                return Err(invalid("density.true_params", format!("{a} is below a_min = {}", c.a_min)));
            }
        }
        if !(c.initial_estimate >= c.a_min && c.initial_estimate.is_finite()) {
            return Err(invalid(
                "initial_estimate",
                format!("{} is below a_min = {}", c.initial_estimate, c.a_min),
            ));
        }
        if !(c.measurement_noise_std >= 0.0 && c.measurement_noise_std.is_finite()) {
            return Err(invalid("measurement_noise_std", "must be nonnegative"));
        }
        c.sensing.validate().map_err(|m| invalid("sensing", m))?;
        if !(1..=MAX_ORDER).contains(&c.quadrature.order) {
            return Err(invalid("quadrature.order", format!("must be in 1..={MAX_ORDER}")));
        }
        if let Some(h) = c.quadrature.max_edge {
            positive("quadrature.max_edge", h)?;
        }
        positive("limits.u_max", c.limits.u_max)?;
        positive("limits.omega_max", c.limits.omega_max)?;

        let basis = BasisSet {
            centers: c.density.centers.clone(),
            widths: c.density.widths.clone(),
        };
        let true_params = ParameterVector::from_slice(&c.density.true_params);
        let beta = grid_lower_bound(&basis, &true_params, &domain, BETA_GRID);
        let gamma = match c.aggregate.gamma {
            GammaSetting::Keyword(GammaKeyword::Beta) => beta,
            GammaSetting::Value(v) => {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(invalid("aggregate.gamma", format!("must be nonnegative, got {v}")));
                }
                v
            }
        };
        if c.controller.is_l2() {
            if c.sensing.gaussian_params().is_none() {
                return Err(invalid("sensing.kind", "L2 controllers need Gaussian sensing"));
            }
            if c.aggregate.mode != AggregateMode::Max {
                return Err(invalid("aggregate.mode", "L2 controllers need max aggregation"));
            }
            if gamma > beta {
                return Err(invalid(
                    "aggregate.gamma",
                    format!("{gamma} exceeds the density lower bound {beta:e}; the L2 weight could turn negative"),
                ));
            }
        }

        let controller = ControllerSpec {
            variant: c.controller,
            k1: c.gains.k1,
            kp: c.gains.kp,
            d: c.agents.d,
        };
        controller.validate().map_err(|m| {
            let field = m.split_whitespace().next().unwrap_or("gains").to_string();
            invalid(&field, m)
        })?;

        let gamma_mat = match &c.gains.adapt_gain {
            AdaptGain::Scalar(s) => DMatrix::identity(p, p) * *s,
            AdaptGain::Matrix(rows) => {
                if rows.len() != p || rows.iter().any(|r| r.len() != p) {
                    return Err(invalid("gains.adapt_gain", format!("must be {p}x{p}")));
                }
                DMatrix::from_fn(p, p, |i, j| rows[i][j])
            }
        };
        let gains = AdaptationGains {
            gamma: gamma_mat,
            k2: c.gains.k2,
            gamma_meas: c.gains.gamma_meas,
            zeta: c.gains.zeta,
            alpha: c.gains.alpha,
        };
        gains.validate().map_err(|m| {
            let field = if m.starts_with("gains.") {
                m.split_whitespace().next().unwrap_or("gains").to_string()
            } else {
                "gains.adapt_gain".to_string()
            };
            invalid(&field, m)
        })?;

        positive("rates.control_hz", c.rates.control_hz)?;
        positive("rates.dynamics_hz", c.rates.dynamics_hz)?;
        let substeps = integer_ratio(c.rates.dynamics_hz, c.rates.control_hz)
            .ok_or_else(|| invalid("rates.dynamics_hz", "must be an integer multiple of rates.control_hz"))?;
        let position_every = match c.rates.position_hz {
            None => None,
            Some(hz) => {
                positive("rates.position_hz", hz)?;
                Some(
                    integer_ratio(c.rates.dynamics_hz, hz)
                        .ok_or_else(|| invalid("rates.position_hz", "must divide rates.dynamics_hz"))?,
                )
            }
        };

        if c.agents.count == 0 {
            return Err(invalid("agents.count", "at least one agent is required"));
        }
        let initial_poses = match &c.agents.poses {
            Some(poses) => {
                if poses.len() != c.agents.count {
                    return Err(invalid(
                        "agents.poses",
                        format!("expected {} poses, got {}", c.agents.count, poses.len()),
                    ));
                }
                poses.iter().map(|q| AgentPose::new(q[0], q[1], q[2])).collect::<Vec<_>>()
            }
            None => random_poses(&domain, c.agents.count, c.agents.min_separation, c.seed)
                .ok_or_else(|| invalid("agents.min_separation", "cannot place agents with this spacing"))?,
        };
        for (i, pose) in initial_poses.iter().enumerate() {
            if ![pose.x, pose.y, pose.theta].iter().all(|v| v.is_finite()) {
                return Err(invalid("agents.poses", format!("pose of agent {i} is not finite")));
            }
            if !domain.contains(&pose.position(), DOMAIN_TOL) {
                return Err(invalid(
                    "agents.poses",
                    format!("agent {i} at ({}, {}) is outside the domain", pose.x, pose.y),
                ));
            }
            for (j, other) in initial_poses.iter().enumerate().take(i) {
                if (pose.position() - other.position()).norm() <= COINCIDENT_TOL {
                    return Err(invalid("agents.poses", format!("agents {j} and {i} coincide")));
                }
            }
        }

        let n_ticks = (c.duration * c.rates.control_hz).round() as usize;
        let model = CoverageModel {
            domain,
            basis,
            true_params,
            sensing: c.sensing,
            aggregate: AggregateSpec {
                mode: c.aggregate.mode,
                scale: gamma,
            },
            quadrature: c.quadrature,
        };
        Ok(Scenario {
            model,
            controller,
            gains,
            consensus: c.consensus,
            initial_poses,
            initial_estimate: DVector::from_element(p, c.initial_estimate),
            a_min: c.a_min,
            noise_std: c.measurement_noise_std,
            limits: c.limits,
            beta,
            control_dt: 1.0 / c.rates.control_hz,
            substeps,
            position_every,
            n_ticks,
            seed: c.seed,
            config,
        })
    }
}

/// Uniform positions inside the domain with pairwise spacing, uniform
/// headings. Deterministic in `seed`.
pub fn random_poses(domain: &ConvexPolygon, n: usize, min_separation: f64, seed: u64) -> Option<Vec<AgentPose>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = domain.bounding_box();
    let mut poses: Vec<AgentPose> = Vec::with_capacity(n);
    let mut attempts = 0;
    while poses.len() < n {
        attempts += 1;
        if attempts > 100_000 {
            return None;
        }
        let p = Point::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y));
        if !domain.contains(&p, 0.0) || poses.iter().any(|q| (q.position() - p).norm() < min_separation) {
            continue;
        }
        let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        poses.push(AgentPose::new(p.x, p.y, theta));
    }
    Some(poses)
}
