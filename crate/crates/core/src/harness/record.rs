//! Per-step run records and their CSV / JSON-lines export.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DVector;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::dynamics::{AgentPose, VelocityCommand};
use crate::geometry::Point;

/// Event counts for one control step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counters {
    /// Agents whose command was scaled down to the limits.
    pub n_saturated: usize,
    /// Domain projections during the following dynamics, plus estimate
    /// clamps at `a_min`.
    pub n_clamped: usize,
    /// Agents whose controller centroid was undefined.
    pub n_zero_mass: usize,
    /// Agents whose controller centroid lay outside their cell.
    pub n_centroid_outside: usize,
}

/// Quantities kept for auditing but not exported.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    /// Minimum over agents and quadrature nodes of the true-parameter λ weight.
    pub min_true_lambda: f64,
    /// Agents whose true-λ centroid lay outside their cell.
    pub true_centroid_outside: usize,
    /// `max_i ‖Λᵢ a - λ_fᵢ‖∞`.
    pub filter_residual: f64,
    pub delaunay_connected: bool,
    /// Per-parameter digraphs checked / found without a rooted tree.
    pub rooted_tree_checked: usize,
    pub rooted_tree_failures: usize,
    /// `Σ_α â^αᵀ L^α â^α` of the consensus graph in use.
    pub consensus_quadratic_form: f64,
    pub projection_clamps: usize,
    pub domain_clamps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSample {
    pub t: f64,
    pub poses: Vec<AgentPose>,
    /// Issued commands. For the single integrator `u`/`omega` hold the x/y
    /// velocity components.
    pub commands: Vec<VelocityCommand>,
    pub estimates: Vec<DVector<f64>>,
    /// Controller target per agent, `None` when the cell had no mass.
    pub centroids: Vec<Option<Point>>,
    pub e_p: f64,
    pub e_v: f64,
    /// `‖âᵢ - a‖₂` per agent.
    pub param_errors: Vec<f64>,
    pub disagreement: f64,
    /// d₂ for L2 controllers, H for locational optimization.
    pub cost: f64,
    pub lyapunov: f64,
    pub counters: Counters,
    pub diagnostics: Diagnostics,
}

impl StepSample {
    pub fn mean_param_error(&self) -> f64 {
        self.param_errors.iter().sum::<f64>() / self.param_errors.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub scenario: String,
    pub n_agents: usize,
    pub n_params: usize,
    pub control_dt: f64,
    pub samples: Vec<StepSample>,
}

impl RunRecord {
    pub fn first(&self) -> Option<&StepSample> {
        self.samples.first()
    }

    pub fn last(&self) -> Option<&StepSample> {
        self.samples.last()
    }

    /// Steps `k → k+1` with no saturation or clamp at `k` where
    /// `V_{k+1} - V_k > tol·|V_k|`. Returns `(checked, violations)`.
    pub fn lyapunov_audit(&self, tol: f64) -> (usize, usize) {
        let mut checked = 0;
        let mut violations = 0;
        for w in self.samples.windows(2) {
            let c = w[0].counters;
            if c.n_saturated > 0 || c.n_clamped > 0 {
                continue;
            }
            checked += 1;
            if w[1].lyapunov - w[0].lyapunov > tol * w[0].lyapunov.abs() {
                violations += 1;
            }
        }
        (checked, violations)
    }
}

/// e_p = Σ‖pᵢ - Cᵢ‖ over agents with a defined centroid.
pub fn position_error(poses: &[AgentPose], centroids: &[Option<Point>]) -> f64 {
    poses
        .iter()
        .zip(centroids)
        .filter_map(|(p, c)| c.map(|c| (p.position() - c).norm()))
        .sum()
}

/// e_v = Σ‖(u, ω)‖.
pub fn velocity_error(commands: &[VelocityCommand]) -> f64 {
    commands.iter().map(VelocityCommand::norm).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    JsonLines,
}

impl ExportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ExportFormat::Csv => "csv",
            ExportFormat::JsonLines => "jsonl",
        }
    }
}

#[derive(Debug, Error)]
#[error("cannot write {path}: {source}")]
pub struct ExportError {
    pub path: String,
    #[source]
    pub source: std::io::Error,
}

pub const COUNTER_COLUMNS: [&str; 4] = ["n_saturated", "n_clamped", "n_zero_mass", "n_centroid_outside"];

pub fn column_names(n_agents: usize, n_params: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    for i in 0..n_agents {
        for f in ["x", "y", "theta", "u", "omega"] {
            cols.push(format!("{f}_{i}"));
        }
    }
    for i in 0..n_agents {
        for j in 0..n_params {
            cols.push(format!("a_hat_{i}_{j}"));
        }
    }
    for f in ["e_p", "e_v", "disagreement", "cost", "V"] {
        cols.push(f.to_string());
    }
    cols.extend(COUNTER_COLUMNS.iter().map(|s| s.to_string()));
    cols
}

fn real_values(s: &StepSample) -> Vec<f64> {
    let mut v = vec![s.t];
    for (pose, cmd) in s.poses.iter().zip(&s.commands) {
        v.extend([pose.x, pose.y, pose.theta, cmd.u, cmd.omega]);
    }
    for est in &s.estimates {
        v.extend(est.iter().copied());
    }
    v.extend([s.e_p, s.e_v, s.disagreement, s.cost, s.lyapunov]);
    v
}

fn counter_values(c: &Counters) -> [usize; 4] {
    [c.n_saturated, c.n_clamped, c.n_zero_mass, c.n_centroid_outside]
}

pub fn to_csv(record: &RunRecord) -> String {
    let mut out = column_names(record.n_agents, record.n_params).join(",");
    out.push('\n');
    for s in &record.samples {
        let mut first = true;
        for x in real_values(s) {
            if !first {
                out.push(',');
            }
            first = false;
            write!(out, "{x:.8e}").unwrap();
        }
        for c in counter_values(&s.counters) {
            write!(out, ",{c}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn to_jsonl(record: &RunRecord) -> String {
    let names = column_names(record.n_agents, record.n_params);
    let mut out = String::new();
    for s in &record.samples {
        let mut obj = Map::new();
        let reals = real_values(s);
        let counters = counter_values(&s.counters);
        for (name, x) in names.iter().zip(reals.iter()) {
            obj.insert(name.clone(), Value::from(*x));
        }
        for (name, c) in names[reals.len()..].iter().zip(counters) {
            obj.insert(name.clone(), Value::from(c));
        }
        out.push_str(&serde_json::to_string(&obj).expect("finite values serialize"));
        out.push('\n');
    }
    out
}

pub fn export(record: &RunRecord, format: ExportFormat, path: &Path) -> Result<(), ExportError> {
    let text = match format {
        ExportFormat::Csv => to_csv(record),
        ExportFormat::JsonLines => to_jsonl(record),
    };
    let err = |source| ExportError {
        path: path.display().to_string(),
        source,
    };
    let mut file = std::fs::File::create(path).map_err(err)?;
    file.write_all(text.as_bytes()).map_err(err)
}
