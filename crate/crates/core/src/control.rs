//! Per-agent control laws. All are stateless.

use serde::{Deserialize, Serialize};

use crate::dynamics::{s_matrix_inverse, VelocityCommand};
use crate::geometry::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerVariant {
    /// `ṗ = u`, `u = -K_p (p - C)` with the true-λ centroid.
    SingleIntegratorL2,
    /// Feedback-linearized unicycle toward the estimated λ centroid.
    DiffDriveL2,
    /// Same, toward the estimated φ-weighted centroid.
    DiffDriveLocopt,
}

impl ControllerVariant {
    pub fn is_diff_drive(self) -> bool {
        !matches!(self, ControllerVariant::SingleIntegratorL2)
    }

    pub fn is_l2(self) -> bool {
        !matches!(self, ControllerVariant::DiffDriveLocopt)
    }

    pub fn name(self) -> &'static str {
        match self {
            ControllerVariant::SingleIntegratorL2 => "single_integrator_l2",
            ControllerVariant::DiffDriveL2 => "diff_drive_l2",
            ControllerVariant::DiffDriveLocopt => "diff_drive_locopt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerSpec {
    pub variant: ControllerVariant,
    /// k₁ for the unicycle laws.
    pub k1: f64,
    /// K_p for the single integrator.
    pub kp: f64,
    /// Offset of the tracked point ahead of the wheel axis.
    pub d: f64,
}

impl ControllerSpec {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("gains.k1", self.k1), ("gains.kp", self.kp), ("agents.d", self.d)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// `u = -K_p (p - C)`; a missing centroid yields zero velocity.
pub fn control_single_integrator(position: &Point, centroid: Option<&Point>, kp: f64) -> Point {
    match centroid {
        Some(c) => -(position - c) * kp,
        None => Point::zeros(),
    }
}

/// `v = -k₁ S(θ, d)⁻¹ (p - Ĉ)`, unsaturated.
pub fn control_diff_drive(position: &Point, theta: f64, centroid: Option<&Point>, k1: f64, d: f64) -> VelocityCommand {
    let Some(c) = centroid else {
        return VelocityCommand::zero();
    };
    let v = -(s_matrix_inverse(theta, d) * (position - c)) * k1;
    VelocityCommand { u: v.x, omega: v.y }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::s_matrix;
    use proptest::prelude::*;

    #[test]
    fn zero_error_zero_command() {
        let p = Point::new(0.3, 0.1);
        assert_eq!(control_single_integrator(&p, Some(&p), 2.0), Point::zeros());
        assert_eq!(control_diff_drive(&p, 1.0, Some(&p), 0.1, 0.05), VelocityCommand::zero());
        assert_eq!(control_diff_drive(&p, 1.0, None, 0.1, 0.05), VelocityCommand::zero());
    }

    #[test]
    fn proportional_law() {
        let u = control_single_integrator(&Point::new(0.2, 0.0), Some(&Point::zeros()), 1.0);
        assert_eq!(u, Point::new(-0.2, 0.0));
    }

    #[test]
    fn table_gain_example() {
        let c = control_diff_drive(&Point::new(0.1, 0.0), 0.0, Some(&Point::zeros()), 0.1, 0.05);
        assert!((c.u + 0.01).abs() < 1e-15);
        assert_eq!(c.omega, 0.0);
    }

    proptest! {
        #[test]
        fn feedback_linearization_identity(
            x in -2.0..2.0f64, y in -2.0..2.0f64, cx in -2.0..2.0f64, cy in -2.0..2.0f64,
            theta in -4.0..4.0f64, d in 0.01..0.5f64, k1 in 0.01..5.0f64,
        ) {
            let p = Point::new(x, y);
            let c = Point::new(cx, cy);
            let cmd = control_diff_drive(&p, theta, Some(&c), k1, d);
            let pdot = s_matrix(theta, d) * nalgebra::Vector2::new(cmd.u, cmd.omega);
            let target = -(p - c) * k1;
            prop_assert!((pdot - target).norm() < 1e-12 * (1.0 + cmd.norm()));
        }
    }
}
