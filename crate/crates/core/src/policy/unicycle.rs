use serde::{Deserialize, Serialize};

use crate::sim::WheelCommand;

/// Base motor commands from the unicycle controller; always on the unit circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnicycleCommand {
    pub v_l: f64,
    pub v_r: f64,
}

/// Steers toward a target at heading error `alpha` (positive = target to the left).
///
/// `v_l = (cos a - sin a) / sqrt(2)`, `v_r = (cos a + sin a) / sqrt(2)`.
pub fn unicycle_base(alpha: f64) -> UnicycleCommand {
    let (s, c) = (libm::sin(alpha), libm::cos(alpha));
    let k = core::f64::consts::FRAC_1_SQRT_2;
    UnicycleCommand { v_l: (c - s) * k, v_r: (c + s) * k }
}

/// Learned correction to the base command, each component in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ResidualAction {
    pub dv_l: f64,
    pub dv_r: f64,
}

impl ResidualAction {
    pub fn new(dv_l: f64, dv_r: f64) -> Self {
        Self { dv_l: dv_l.clamp(-1.0, 1.0), dv_r: dv_r.clamp(-1.0, 1.0) }
    }
}

/// Adds the residual scaled by `beta` and clamps to the wheel command range.
pub fn compose(base: UnicycleCommand, residual: ResidualAction, beta: f64) -> WheelCommand {
    let r = ResidualAction::new(residual.dv_l, residual.dv_r);
    WheelCommand::new(base.v_l + beta * r.dv_l, base.v_r + beta * r.dv_r)
}
