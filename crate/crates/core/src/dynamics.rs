//! Differential-drive kinematics of the tracked center point, which sits a
//! distance `d` ahead of the wheel axis:
//!
//! ```text
//! [ẋ; ẏ] = S(θ, d) [u; ω],   θ̇ = ω,   S = [cos θ, -d sin θ; sin θ, d cos θ]
//! ```

use std::f64::consts::PI;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::geometry::{ConvexPolygon, Point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl AgentPose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VelocityCommand {
    pub u: f64,
    pub omega: f64,
}

impl VelocityCommand {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn norm(&self) -> f64 {
        self.u.hypot(self.omega)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocityLimits {
    pub u_max: f64,
    pub omega_max: f64,
}

impl Default for VelocityLimits {
    fn default() -> Self {
        Self {
            u_max: 0.22,
            omega_max: 2.84,
        }
    }
}

/// Wraps to (-π, π].
pub fn wrap_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let wrapped = theta - 2.0 * PI * ((theta - PI) / (2.0 * PI)).ceil();
    if wrapped <= -PI {
        wrapped + 2.0 * PI
    } else {
        wrapped
    }
}

pub fn s_matrix(theta: f64, d: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -d * s, s, d * c)
}

/// Closed-form inverse; `det S = d`.
pub fn s_matrix_inverse(theta: f64, d: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, s, -s / d, c / d)
}

/// Scales the whole command down so both limits hold; the heading of the
/// center-point velocity is kept. Returns whether scaling was needed.
pub fn saturate(cmd: VelocityCommand, limits: &VelocityLimits) -> (VelocityCommand, bool) {
    let mut scale: f64 = 1.0;
    if cmd.u.abs() > limits.u_max {
        scale = scale.min(limits.u_max / cmd.u.abs());
    }
    if cmd.omega.abs() > limits.omega_max {
        scale = scale.min(limits.omega_max / cmd.omega.abs());
    }
    if scale < 1.0 {
        let out = VelocityCommand {
            u: (cmd.u * scale).clamp(-limits.u_max, limits.u_max),
            omega: (cmd.omega * scale).clamp(-limits.omega_max, limits.omega_max),
        };
        (out, true)
    } else {
        (cmd, false)
    }
}

fn pose_rate(theta: f64, cmd: &VelocityCommand, d: f64) -> [f64; 3] {
    let (s, c) = theta.sin_cos();
    [
        cmd.u * c - d * cmd.omega * s,
        cmd.u * s + d * cmd.omega * c,
        cmd.omega,
    ]
}

/// One RK4 step with the command held over `dt`.
pub fn step_diff_drive(pose: AgentPose, cmd: VelocityCommand, d: f64, dt: f64) -> AgentPose {
    // heading is unwrapped during the step, wrapped once at the end
    let k1 = pose_rate(pose.theta, &cmd, d);
    let k2 = pose_rate(pose.theta + 0.5 * dt * k1[2], &cmd, d);
    let k3 = pose_rate(pose.theta + 0.5 * dt * k2[2], &cmd, d);
    let k4 = pose_rate(pose.theta + dt * k3[2], &cmd, d);
    let inc = |i: usize| dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    AgentPose {
        x: pose.x + inc(0),
        y: pose.y + inc(1),
        theta: wrap_angle(pose.theta + inc(2)),
    }
}

pub fn step_single_integrator(position: Point, u: Point, dt: f64) -> Point {
    position + u * dt
}

/// Projects the pose's position onto the domain. Returns true if it moved.
pub fn clamp_to_domain(pose: &mut AgentPose, domain: &ConvexPolygon) -> bool {
    let p = pose.position();
    if domain.contains(&p, 0.0) {
        return false;
    }
    let q = domain.project(&p);
    pose.x = q.x;
    pose.y = q.y;
    true
}
