use super::config::EstimationNoiseConfig;
use crate::geometry::Pose2D;
use crate::rng::CounterRng;

/// Rigid motion of the robot over one step, expressed in the frame it started from.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Motion {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
    /// Yaw rate during the step (rad/s).
    pub omega: f64,
}

impl Motion {
    pub fn between(from: &Pose2D, to: &Pose2D, omega: f64) -> Self {
        let (dx, dy, dtheta) = from.relative(to);
        Self { dx, dy, dtheta, omega }
    }

    pub fn distance(&self) -> f64 {
        libm::hypot(self.dx, self.dy)
    }
}

/// Advances the estimated pose by the true motion plus Gaussian drift and
/// draws tracking loss with hazard `p0 + k |omega|`.
///
/// Four normals and one uniform are drawn per call regardless of configuration.
pub fn estimation_step(
    noise: &EstimationNoiseConfig,
    pose_true: &Pose2D,
    prev_est: &Pose2D,
    motion: &Motion,
    rng: &mut CounterRng,
) -> (Pose2D, bool) {
    let nx = rng.normal();
    let ny = rng.normal();
    let nt = rng.normal();
    let _spare = rng.normal();
    let hazard = (noise.loss_p0 + noise.loss_k * motion.omega.abs()).clamp(0.0, 1.0);
    let lost = rng.next_f64() < hazard;

    if noise.is_drift_free() {
        return (*pose_true, lost);
    }
    let pos_std = noise.sigma_pos * motion.distance();
    let theta_std = noise.sigma_theta * motion.dtheta.abs();
    let est = prev_est.compose(motion.dx + pos_std * nx, motion.dy + pos_std * ny, motion.dtheta + theta_std * nt);
    (est, lost)
}
