use super::*;
use crate::env::{generate_layout, GenConfig, LayoutConstraints, Obstacle};
use crate::geometry::{Rect, Vec2};
use core::f64::consts::PI;

fn room(w: f64, h: f64, start: Pose2D, goal: Vec2) -> LayoutSpec {
    LayoutSpec {
        seed: 0,
        rooms: vec![Rect::new(Vec2::new(0.0, 0.0), Vec2::new(w, h))],
        doors: vec![],
        obstacles: vec![],
        start_pose: start,
        goal_position: goal,
        constraints: LayoutConstraints::default(),
    }
}

fn quiet() -> SimConfig {
    SimConfig::default().noiseless()
}

#[test]
fn reset_goal_distance_and_alpha() {
    let l = room(8.0, 8.0, Pose2D::new(1.0, 4.0, 0.0), Vec2::new(5.0, 4.0));
    let (s, obs) = SimState::reset(&l, &quiet(), 1).unwrap();
    assert_eq!(s.step, 0);
    assert_eq!((s.wheel_speed_l, s.wheel_speed_r), (0.0, 0.0));
    assert!((obs.goal_distance() as f64 - 4.0 / 10.0).abs() < 1e-7);
    assert_eq!(obs.alpha(), 0.0);
    // history zero-padded: only the last frame is populated
    let fl = obs.frame.len();
    assert_eq!(obs.stacked.len(), 5 * fl);
    assert!(obs.stacked[..4 * fl].iter().all(|v| *v == 0.0));
    assert_eq!(&obs.stacked[4 * fl..], obs.frame.as_slice());
}

#[test]
fn reset_is_deterministic() {
    let l = generate_layout(&GenConfig::default(), 5).unwrap();
    let (_, a) = SimState::reset(&l, &SimConfig::default(), 3).unwrap();
    let (_, b) = SimState::reset(&l, &SimConfig::default(), 3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn colliding_start_is_invalid() {
    let mut l = room(8.0, 8.0, Pose2D::new(1.0, 4.0, 0.0), Vec2::new(5.0, 4.0));
    l.obstacles.push(Obstacle::Cylinder { center: Vec2::new(1.1, 4.0), radius: 0.2 });
    assert_eq!(SimState::reset(&l, &quiet(), 0).err(), Some(SimError::InvalidLayout));
}

#[test]
fn straight_command_moves_straight() {
    let l = room(8.0, 8.0, Pose2D::new(1.0, 4.0, 0.0), Vec2::new(7.0, 4.0));
    let cfg = quiet();
    let (mut s, _) = SimState::reset(&l, &cfg, 0).unwrap();
    s.step(WheelCommand::new(1.0, 1.0)).unwrap();
    let expected = cfg.v_max * cfg.lag_factor() * cfg.dt;
    assert!((s.pose_true.x - 1.0 - expected).abs() < 1e-12);
    assert_eq!(s.pose_true.y, 4.0);
    assert_eq!(s.pose_true.theta, 0.0);
}

#[test]
fn opposite_wheels_rotate_in_place() {
    let l = room(8.0, 8.0, Pose2D::new(4.0, 4.0, 0.0), Vec2::new(7.0, 7.0));
    let mut cfg = quiet();
    cfg.max_steps = 10_000;
    let (mut s, _) = SimState::reset(&l, &cfg, 0).unwrap();
    for _ in 0..60 {
        s.step(WheelCommand::new(1.0, -1.0)).unwrap();
    }
    let omega = (s.wheel_speed_r - s.wheel_speed_l) / cfg.wheel_base;
    // hand computation: -2 * 0.5 / 0.15
    assert!((omega - (-6.666_666_666_666_667)).abs() < 1e-6, "{omega}");
    assert!((s.pose_true.x - 4.0).abs() < 1e-9 && (s.pose_true.y - 4.0).abs() < 1e-9);
    let before = s.pose_true.theta;
    s.step(WheelCommand::new(1.0, -1.0)).unwrap();
    assert!((crate::geometry::wrap_angle(s.pose_true.theta - before) - omega * cfg.dt).abs() < 1e-6);
}

#[test]
fn near_goal_is_goal_reached() {
    let l = room(8.0, 8.0, Pose2D::new(4.75, 4.0, 0.0), Vec2::new(5.0, 4.0));
    let (mut s, _) = SimState::reset(&l, &quiet(), 0).unwrap();
    let (_, ev) = s.step(WheelCommand::STOP).unwrap();
    assert_eq!(ev, StepEvent::GoalReached);
    assert_eq!(s.step(WheelCommand::STOP).err(), Some(SimError::EpisodeEnded));
}

#[test]
fn zero_commands_keep_pose_fixed() {
    let l = generate_layout(&GenConfig::default(), 9).unwrap();
    let mut cfg = SimConfig::default();
    cfg.estimation.loss_p0 = 0.0;
    cfg.estimation.loss_k = 0.0;
    let (mut s, _) = SimState::reset(&l, &cfg, 4).unwrap();
    let start = s.pose_true;
    for _ in 0..200 {
        let (_, ev) = s.step(WheelCommand::STOP).unwrap();
        assert_eq!(s.pose_true, start);
        if ev.is_terminal() {
            assert_eq!(ev, StepEvent::Timeout);
            break;
        }
    }
}

#[test]
fn timeout_at_max_steps() {
    let l = room(8.0, 8.0, Pose2D::new(1.0, 1.0, 0.0), Vec2::new(6.0, 6.0));
    let mut cfg = quiet();
    cfg.max_steps = 3;
    let (mut s, _) = SimState::reset(&l, &cfg, 0).unwrap();
    assert_eq!(s.step(WheelCommand::STOP).unwrap().1, StepEvent::None);
    assert_eq!(s.step(WheelCommand::STOP).unwrap().1, StepEvent::None);
    assert_eq!(s.step(WheelCommand::STOP).unwrap().1, StepEvent::Timeout);
    assert_eq!(s.ended, Some(StopReason::Timeout));
}

#[test]
fn collision_outranks_goal() {
    let l = room(8.0, 8.0, Pose2D::new(1.0, 4.0, 0.0), Vec2::new(5.0, 4.0));
    let (mut s, _) = SimState::reset(&l, &quiet(), 0).unwrap();
    s.pose_true = Pose2D::new(5.0, 4.0, 0.0);
    s.contact = true;
    assert_eq!(s.check_termination(), Some(StopReason::Collision));
    s.contact = false;
    s.tracking_lost = true;
    assert_eq!(s.check_termination(), Some(StopReason::GoalReached));
    s.pose_true = Pose2D::new(2.0, 4.0, 0.0);
    assert_eq!(s.check_termination(), Some(StopReason::TrackingLost));
}

#[test]
fn driving_into_wall_collides() {
    let l = room(3.0, 3.0, Pose2D::new(1.0, 1.5, 0.0), Vec2::new(1.0, 2.9));
    let (mut s, _) = SimState::reset(&l, &quiet(), 0).unwrap();
    let mut last = StepEvent::None;
    for _ in 0..200 {
        let (_, ev) = s.step(WheelCommand::new(1.0, 1.0)).unwrap();
        last = ev;
        if ev.is_terminal() {
            break;
        }
    }
    assert_eq!(last, StepEvent::Collision);
    assert!(s.pose_true.x <= 3.0 - s.config.robot_radius + 1e-9);
}

#[test]
fn boundary_frontal_wall_matches_pinhole() {
    let l = room(10.0, 10.0, Pose2D::new(8.0, 5.0, 0.0), Vec2::new(1.0, 5.0));
    let cfg = quiet();
    let (s, _) = SimState::reset(&l, &cfg, 0).unwrap();
    let b = boundary_observation(&s.world, &s.pose_true, &cfg.camera);
    assert_eq!(b.len(), 64);
    // hand value: (16 + 45.71 * 0.25 / 2) / 32
    assert!((b[32] - 0.6786).abs() <= 1.0 / 32.0, "{}", b[32]);
    assert!((b[31] - 0.6786).abs() <= 1.0 / 32.0);
}

#[test]
fn boundary_open_space_is_horizon_minimum() {
    let l = room(30.0, 30.0, Pose2D::new(15.0, 15.0, 0.0), Vec2::new(1.0, 1.0));
    let cam = CameraModel::default();
    let (s, _) = SimState::reset(&l, &quiet(), 0).unwrap();
    let b = boundary_observation(&s.world, &s.pose_true, &cam);
    let expected = (cam.cy() + cam.focal() * cam.height / cam.max_range) / cam.rows as f64;
    assert!((b[32] - expected).abs() < 1e-4);
    assert!(b.iter().all(|v| *v >= expected - 1e-12));
}

#[test]
fn boundary_touching_obstacle_clamps() {
    let l = room(10.0, 10.0, Pose2D::new(5.0, 5.0, 0.0), Vec2::new(1.0, 1.0));
    let (s, _) = SimState::reset(&l, &quiet(), 0).unwrap();
    let mut world = s.world.clone();
    world.obstacles.push(Obstacle::Box { center: Vec2::new(5.3, 5.0), half_extents: Vec2::new(0.3, 1.0) });
    let b = boundary_observation(&world, &s.pose_true, &CameraModel::default());
    assert!(b.iter().all(|v| *v == 1.0));
}

#[test]
fn boundary_decreases_with_wall_distance() {
    let cam = CameraModel::default();
    let mut prev = f64::INFINITY;
    // below ~0.72 m the boundary row leaves the image and clamps
    for i in 4..=24 {
        let d = 0.2 * i as f64;
        let l = room(d + 1.0, 4.0, Pose2D::new(1.0, 2.0, 0.0), Vec2::new(0.2, 0.2));
        let (s, _) = SimState::reset(&l, &quiet(), 0).unwrap();
        let v = boundary_observation(&s.world, &s.pose_true, &cam)[32];
        assert!(v < prev, "d={d}");
        prev = v;
    }
}

#[test]
fn depth_rays_cases() {
    let l = room(30.0, 30.0, Pose2D::new(15.0, 15.0, 0.0), Vec2::new(1.0, 1.0));
    let (s, _) = SimState::reset(&l, &quiet(), 0).unwrap();
    let r = depth_rays_observation(&s.world, &s.pose_true, 11, 70f64.to_radians(), 5.0);
    assert_eq!(r.len(), 11);
    assert!(r.iter().all(|v| *v == 1.0));
    let l = room(5.0, 6.0, Pose2D::new(2.5, 3.0, 0.0), Vec2::new(1.0, 1.0));
    let (s, _) = SimState::reset(&l, &quiet(), 0).unwrap();
    let r = depth_rays_observation(&s.world, &s.pose_true, 11, 70f64.to_radians(), 5.0);
    assert!((r[5] - 0.5).abs() < 1e-12);
}

#[test]
fn goal_feature_cases() {
    let p = Pose2D::new(0.0, 0.0, 0.0);
    assert_eq!(goal_features(&p, Vec2::new(1.0, 0.0)), (1.0, 0.0));
    let (d, a) = goal_features(&p, Vec2::new(0.0, 1.0));
    assert!((d - 1.0).abs() < 1e-12 && (a - PI / 2.0).abs() < 1e-12);
    assert_eq!(goal_features(&p, Vec2::new(0.0, 0.0)), (0.0, 0.0));
    let behind = Pose2D::new(0.0, 0.0, 0.0);
    let (_, a) = goal_features(&behind, Vec2::new(-1.0, 0.0));
    assert_eq!(a, PI);
}

#[test]
fn zero_noise_estimate_tracks_truth() {
    let l = generate_layout(&GenConfig::default(), 12).unwrap();
    let mut cfg = SimConfig::default();
    cfg.estimation = EstimationNoiseConfig::zero();
    let (mut s, _) = SimState::reset(&l, &cfg, 2).unwrap();
    let mut rng = CounterRng::new(5);
    while !s.is_ended() {
        s.step(WheelCommand::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0))).unwrap();
        assert_eq!(s.pose_est, s.pose_true);
    }
}

#[test]
fn certain_hazard_loses_tracking_immediately() {
    let l = room(8.0, 8.0, Pose2D::new(1.0, 4.0, 0.0), Vec2::new(6.0, 4.0));
    let mut cfg = quiet();
    cfg.estimation.loss_p0 = 1.0;
    let (mut s, _) = SimState::reset(&l, &cfg, 0).unwrap();
    let (_, ev) = s.step(WheelCommand::new(0.5, 0.5)).unwrap();
    assert_eq!(ev, StepEvent::TrackingLost);
}

/// Monte-Carlo check of the drift model: straight 1 m legs in 20 steps.
#[test]
fn drift_is_unbiased_and_grows_with_distance() {
    let noise = EstimationNoiseConfig { sigma_pos: 0.05, sigma_theta: 0.0, loss_p0: 0.0, loss_k: 0.0 };
    let mut rng = CounterRng::new(77);
    let trials = 500;
    let mut err_short = Vec::new();
    let mut err_long = Vec::new();
    for _ in 0..trials {
        let mut truth = Pose2D::new(0.0, 0.0, 0.0);
        let mut est = truth;
        for step in 1..=20 {
            let next = Pose2D::new(truth.x + 0.05, 0.0, 0.0);
            let m = Motion::between(&truth, &next, 0.0);
            est = estimation_step(&noise, &next, &est, &m, &mut rng).0;
            truth = next;
            if step == 5 {
                err_short.push(est.y - truth.y);
            }
        }
        err_long.push(est.y - truth.y);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let std = |v: &[f64]| {
        let m = mean(v);
        libm::sqrt(v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64)
    };
    // per-step std 0.05 * 0.05 m; after k steps std = 0.0025 sqrt(k)
    let (s5, s20) = (std(&err_short), std(&err_long));
    assert!(mean(&err_long).abs() < 3.0 * s20 / libm::sqrt(trials as f64));
    assert!((s5 / (0.0025 * libm::sqrt(5.0)) - 1.0).abs() < 0.15, "{s5}");
    assert!((s20 / (0.0025 * libm::sqrt(20.0)) - 1.0).abs() < 0.15, "{s20}");
    assert!(s20 > s5);
}

#[test]
fn episodes_are_deterministic_with_noise() {
    let l = generate_layout(&GenConfig::default(), 21).unwrap();
    let run = || {
        let (mut s, _) = SimState::reset(&l, &SimConfig::default(), 8).unwrap();
        let mut rng = CounterRng::new(1);
        let mut poses = Vec::new();
        while !s.is_ended() {
            s.step(WheelCommand::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0))).unwrap();
            poses.push((s.pose_true, s.pose_est));
        }
        poses
    };
    assert_eq!(run(), run());
}

#[test]
fn task_space_target_ahead_drives_forward() {
    let l = room(8.0, 8.0, Pose2D::new(1.0, 4.0, 0.0), Vec2::new(7.0, 4.0));
    let (mut s, _) = SimState::reset(&l, &quiet(), 0).unwrap();
    s.step_task_space(1.0, 0.0, 0.0).unwrap();
    assert!(s.pose_true.x > 1.0);
    assert!(s.pose_true.theta.abs() < 1e-12);
}

#[test]
fn observations_stay_bounded() {
    let mut rng = CounterRng::new(3);
    for seed in 0..30 {
        let l = generate_layout(&GenConfig::default(), seed).unwrap();
        for cfg in [SimConfig::default(), {
            let mut c = SimConfig::default();
            c.observation.features = FeatureKind::DepthRays { n_rays: 11 };
            c
        }] {
            let (mut s, mut obs) = SimState::reset(&l, &cfg, seed).unwrap();
            loop {
                assert!((0.0..=1.0).contains(&obs.goal_distance()));
                assert!(obs.alpha().is_finite());
                assert!(obs.features().iter().all(|v| (0.0..=1.0).contains(v)));
                if s.is_ended() {
                    break;
                }
                obs = s.step(WheelCommand::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0))).unwrap().0;
            }
        }
    }
}
