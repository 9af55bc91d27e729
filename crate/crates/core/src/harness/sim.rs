//! Fixed-rate closed-loop simulation.
//!
//! Each control tick: snapshot poses, build the Voronoi partition, integrate
//! per-agent cell statistics (in parallel), compute commands, record metrics,
//! update estimates and filters against the same snapshot, then integrate
//! the dynamics with the commands held until the next tick.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use super::record::{position_error, velocity_error, Counters, Diagnostics, RunRecord, StepSample};
use super::scenario::Scenario;
use crate::adaptation::{
    apply_projection, build_directed_graphs, compute_b, consensus_disagreement, rooted_tree_check, update_filters,
    ConsensusGraph, ConsensusMode, FilterState,
};
use crate::control::{control_diff_drive, control_single_integrator, ControllerVariant};
use crate::cost::{CellStatistics, CostError};
use crate::dynamics::{clamp_to_domain, s_matrix, saturate, step_diff_drive, AgentPose, VelocityCommand};
use crate::exec::{self, Execution};
use crate::geometry::{compute_voronoi_with, delaunay_graph, is_connected, Point, VoronoiCell};

/// Tolerance for "centroid inside its cell".
const CONTAINMENT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
#[error("step {step} (t = {t} s): {source}")]
pub struct SimError {
    pub step: usize,
    pub t: f64,
    #[source]
    pub source: CostError,
}

/// What one agent learns from integrating over its own cell.
#[derive(Debug, Clone)]
struct CellPass {
    target: Option<Point>,
    target_outside: bool,
    true_centroid_outside: bool,
    min_true_lambda: f64,
    cost: f64,
    /// `∫ w K (q - p)ᵀ`, p×2.
    coupling: DMatrix<f64>,
    k_at_p: DVector<f64>,
}

fn cell_pass(scenario: &Scenario, cell: &VoronoiCell, position: &Point, a_hat: &DVector<f64>) -> Result<CellPass, CostError> {
    let model = &scenario.model;
    let rule = model.quadrature.build(&cell.polygon)?;
    let p = model.basis.len();
    let a = &model.true_params.0;
    let variant = scenario.controller.variant;
    let gaussian = if variant.is_l2() { model.sensing.gaussian_params() } else { None };
    let gamma = model.aggregate.scale;

    let mut k = vec![0.0; p];
    let mut mass_true = 0.0;
    let mut moment_true = Point::zeros();
    let mut mass_est = 0.0;
    let mut moment_est = Point::zeros();
    let mut min_true = f64::INFINITY;
    let mut cost = 0.0;
    let mut coupling = DMatrix::zeros(p, 2);
    for (q, w) in rule.iter() {
        model.basis.eval_into(q, &mut k);
        let phi: f64 = k.iter().zip(a.iter()).map(|(x, y)| x * y).sum();
        let phi_hat: f64 = k.iter().zip(a_hat.iter()).map(|(x, y)| x * y).sum();
        let r = q - position;
        let r2 = r.norm_squared();
        let (true_w, est_w, coupling_w, cost_density) = match gaussian {
            Some((amp, sigma)) => {
                let e = (-r2 / (sigma * sigma)).exp();
                let resid = phi - gamma * amp * e;
                (e * resid, e * (phi_hat - gamma * amp * e), e, resid * resid)
            }
            None => (phi, phi_hat, 1.0, r2 * phi),
        };
        min_true = min_true.min(true_w);
        mass_true += w * true_w;
        moment_true += q * (w * true_w);
        mass_est += w * est_w;
        moment_est += q * (w * est_w);
        cost += w * cost_density;
        for (j, kj) in k.iter().enumerate() {
            let f = w * coupling_w * kj;
            coupling[(j, 0)] += f * r.x;
            coupling[(j, 1)] += f * r.y;
        }
    }
    let true_c = CellStatistics::from_mass_moment(cell.owner, mass_true, moment_true).ok().map(|s| s.centroid);
    let est_c = CellStatistics::from_mass_moment(cell.owner, mass_est, moment_est).ok().map(|s| s.centroid);
    let target = match variant {
        ControllerVariant::SingleIntegratorL2 => true_c,
        ControllerVariant::DiffDriveL2 | ControllerVariant::DiffDriveLocopt => est_c,
    };
    let outside = |c: Option<Point>| c.is_some_and(|c| !cell.polygon.contains(&c, CONTAINMENT_TOL));
    Ok(CellPass {
        target,
        target_outside: outside(target),
        true_centroid_outside: outside(true_c),
        min_true_lambda: min_true,
        cost,
        coupling,
        k_at_p: model.basis.eval(position),
    })
}

/// Command, center-point velocity `S v` and saturation flag for one agent.
fn command(scenario: &Scenario, pose: &AgentPose, target: Option<&Point>) -> (VelocityCommand, Matrix2<f64>, Vector2<f64>, bool) {
    let spec = &scenario.controller;
    let pos = pose.position();
    match spec.variant {
        ControllerVariant::SingleIntegratorL2 => {
            let mut u = control_single_integrator(&pos, target, spec.kp);
            let speed = u.norm();
            let hit = speed > scenario.limits.u_max;
            if hit {
                u *= scenario.limits.u_max / speed;
            }
            (VelocityCommand { u: u.x, omega: u.y }, Matrix2::identity(), u, hit)
        }
        ControllerVariant::DiffDriveL2 | ControllerVariant::DiffDriveLocopt => {
            let raw = control_diff_drive(&pos, pose.theta, target, spec.k1, spec.d);
            let (cmd, hit) = saturate(raw, &scenario.limits);
            (cmd, s_matrix(pose.theta, spec.d), Vector2::new(cmd.u, cmd.omega), hit)
        }
    }
}

/// Integrates one agent over a control period. Returns the final pose, the
/// last localization sample taken during the period (if any) and the number
/// of domain clamps.
fn advance(
    scenario: &Scenario,
    pose: AgentPose,
    cmd: VelocityCommand,
    substep_offset: usize,
) -> (AgentPose, Option<AgentPose>, usize) {
    let dt = scenario.control_dt / scenario.substeps as f64;
    let mut pose = pose;
    let mut feed = None;
    let mut clamps = 0;
    for s in 0..scenario.substeps {
        pose = match scenario.controller.variant {
            ControllerVariant::SingleIntegratorL2 => {
                let p = crate::dynamics::step_single_integrator(pose.position(), Point::new(cmd.u, cmd.omega), dt);
                AgentPose { x: p.x, y: p.y, theta: pose.theta }
            }
            _ => step_diff_drive(pose, cmd, scenario.controller.d, dt),
        };
        if clamp_to_domain(&mut pose, &scenario.model.domain) {
            clamps += 1;
        }
        if let Some(every) = scenario.position_every {
            if (substep_offset + s + 1) % every == 0 {
                feed = Some(pose);
            }
        }
    }
    (pose, feed, clamps)
}

pub fn run(scenario: &Scenario) -> Result<RunRecord, SimError> {
    run_with(scenario, Execution::default())
}

pub fn run_with(scenario: &Scenario, execution: Execution) -> Result<RunRecord, SimError> {
    let n = scenario.n_agents();
    let model = &scenario.model;
    let a = model.true_params.0.clone();
    let gamma_inv = scenario
        .gains
        .gamma
        .clone()
        .try_inverse()
        .expect("validated adaptation gain is invertible");

    let mut poses = scenario.initial_poses.clone();
    let mut feed = poses.clone();
    let mut estimates = vec![scenario.initial_estimate.clone(); n];
    let mut filters = vec![FilterState::zeros(scenario.n_params()); n];
    let mut noise_rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    noise_rng.set_stream(1);
    let noise = (scenario.noise_std > 0.0).then(|| Normal::new(0.0, scenario.noise_std).expect("validated std"));

    let mut samples = Vec::with_capacity(scenario.n_ticks + 1);
    for k in 0..=scenario.n_ticks {
        let t = k as f64 * scenario.control_dt;
        let fail = |source: CostError| SimError { step: k, t, source };
        let positions: Vec<Point> = feed.iter().map(AgentPose::position).collect();
        let cells = compute_voronoi_with(&positions, &model.domain, execution).map_err(|e| fail(e.into()))?;
        let passes: Vec<CellPass> = exec::map_indexed(execution, n, |i| {
            cell_pass(scenario, &cells[i], &positions[i], &estimates[i])
        })
        .into_iter()
        .collect::<Result<_, _>>()
        .map_err(fail)?;

        let mut counters = Counters::default();
        let mut commands = Vec::with_capacity(n);
        let mut center_velocity = Vec::with_capacity(n);
        for (i, pass) in passes.iter().enumerate() {
            let (cmd, s, v, hit) = command(scenario, &feed[i], pass.target.as_ref());
            counters.n_saturated += hit as usize;
            counters.n_zero_mass += pass.target.is_none() as usize;
            counters.n_centroid_outside += pass.target_outside as usize;
            commands.push(cmd);
            center_velocity.push((s, v));
        }

        let graph = match scenario.consensus {
            ConsensusMode::None => ConsensusGraph::None,
            ConsensusMode::Undirected => delaunay_graph(&cells),
            ConsensusMode::Directed => build_directed_graphs(&cells, &model.basis, &positions),
        };
        let connected = is_connected(&cells);
        let tree = if connected {
            rooted_tree_check(&graph, &model.basis, &positions)
        } else {
            if scenario.consensus != ConsensusMode::None {
                log::warn!("t = {:.2}: Delaunay graph is disconnected", t);
            }
            Vec::new()
        };

        let cost: f64 = passes.iter().map(|p| p.cost).sum();
        let adaptation_energy: f64 = estimates
            .iter()
            .map(|e| {
                let err = e - &a;
                0.5 * err.dot(&(&gamma_inv * &err))
            })
            .sum();
        let centroids: Vec<Option<Point>> = passes.iter().map(|p| p.target).collect();
        let mut diagnostics = Diagnostics {
            min_true_lambda: passes.iter().map(|p| p.min_true_lambda).fold(f64::INFINITY, f64::min),
            true_centroid_outside: passes.iter().filter(|p| p.true_centroid_outside).count(),
            filter_residual: filters.iter().map(|f| f.residual(&a).amax()).fold(0.0, f64::max),
            delaunay_connected: connected,
            rooted_tree_checked: tree.len(),
            rooted_tree_failures: tree.iter().filter(|ok| !**ok).count(),
            consensus_quadratic_form: graph.quadratic_form(&estimates),
            projection_clamps: 0,
            domain_clamps: 0,
        };
        let mut sample = StepSample {
            t,
            poses: poses.clone(),
            commands: commands.clone(),
            estimates: estimates.clone(),
            centroids: centroids.clone(),
            e_p: position_error(&poses, &centroids),
            e_v: velocity_error(&commands),
            param_errors: estimates.iter().map(|e| (e - &a).norm()).collect(),
            disagreement: consensus_disagreement(&estimates),
            cost,
            lyapunov: cost + adaptation_energy,
            counters,
            diagnostics: diagnostics.clone(),
        };

        if k == scenario.n_ticks {
            samples.push(sample);
            break;
        }

        // adaptation against the snapshot of this tick
        let dt = scenario.control_dt;
        let mut next_estimates = Vec::with_capacity(n);
        for i in 0..n {
            let consensus = graph.consensus_term(i, &estimates);
            let (s, v) = &center_velocity[i];
            let b = compute_b(&passes[i].coupling, s, v, &filters[i], &estimates[i], &consensus, &scenario.gains);
            let (next, clamped) = apply_projection(&estimates[i], &b, &scenario.gains.gamma, scenario.a_min, dt);
            diagnostics.projection_clamps += clamped as usize;
            next_estimates.push(next);
        }
        for (i, filter) in filters.iter_mut().enumerate() {
            let k_at_p = &passes[i].k_at_p;
            let mut phi_meas = k_at_p.dot(&a);
            if let Some(dist) = &noise {
                phi_meas += dist.sample(&mut noise_rng);
            }
            *filter = update_filters(filter, k_at_p, phi_meas, scenario.gains.alpha, dt);
        }
        estimates = next_estimates;

        let offset = k * scenario.substeps;
        let moved = exec::map_indexed(execution, n, |i| advance(scenario, poses[i], commands[i], offset));
        for (i, (pose, sample, clamps)) in moved.into_iter().enumerate() {
            poses[i] = pose;
            match (scenario.position_every, sample) {
                (None, _) => feed[i] = pose,
                (Some(_), Some(s)) => feed[i] = s,
                (Some(_), None) => {}
            }
            diagnostics.domain_clamps += clamps;
        }
        counters.n_clamped = diagnostics.domain_clamps + diagnostics.projection_clamps;
        sample.counters = counters;
        sample.diagnostics = diagnostics;
        samples.push(sample);
    }

    Ok(RunRecord {
        scenario: scenario.config.name.clone(),
        n_agents: n,
        n_params: scenario.n_params(),
        control_dt: scenario.control_dt,
        samples,
    })
}
