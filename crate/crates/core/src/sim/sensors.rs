use alloc::vec::Vec;

use super::config::CameraModel;
use crate::env::World;
use crate::geometry::{wrap_angle, Pose2D, Vec2};

/// Normalized floor-boundary row per image column (column 0 is the left image edge).
///
/// Each column casts a planar ray at its azimuth; the hit distance `d` projects
/// through a level pinhole camera at height `h` to row `c_y + f h / (d cos phi)`.
pub fn boundary_observation(world: &World, pose: &Pose2D, camera: &CameraModel) -> Vec<f64> {
    let f = camera.focal();
    let rows = camera.rows as f64;
    (0..camera.columns)
        .map(|u| {
            let phi = camera.column_azimuth(u);
            let d = world.raycast(pose.position(), pose.theta - phi, camera.max_range).min(camera.max_range);
            let depth = d * libm::cos(phi);
            let v = if depth <= 0.0 { rows } else { camera.cy() + f * camera.height / depth };
            v.clamp(0.0, rows) / rows
        })
        .collect()
}

/// Azimuth of ray `i` of `n`, from `+hfov/2` (left) to `-hfov/2` (right).
pub fn ray_azimuth(i: usize, n: usize, hfov: f64) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    hfov / 2.0 - hfov * i as f64 / (n - 1) as f64
}

/// Depth of `n_rays` planar rays, normalized by `max_range`.
pub fn depth_rays_observation(world: &World, pose: &Pose2D, n_rays: usize, hfov: f64, max_range: f64) -> Vec<f64> {
    (0..n_rays)
        .map(|i| {
            let theta = pose.theta + ray_azimuth(i, n_rays, hfov);
            world.raycast(pose.position(), theta, max_range).min(max_range) / max_range
        })
        .collect()
}

/// Distance to the goal and heading error in `(-pi, pi]`; the heading error is
/// zero when the robot sits exactly on the goal.
pub fn goal_features(pose_est: &Pose2D, goal: Vec2) -> (f64, f64) {
    let d = goal - pose_est.position();
    let dist = d.norm();
    if dist == 0.0 {
        return (0.0, 0.0);
    }
    (dist, wrap_angle(libm::atan2(d.y, d.x) - pose_est.theta))
}
