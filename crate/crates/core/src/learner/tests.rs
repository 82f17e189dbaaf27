use super::sac::{actor_loss_and_grad, build_actor, critic_loss_and_grad, td_targets};
use super::*;
use crate::episode::{Controller, EpisodeFooter, EpisodeHeader, EpisodeLog, StepRecord};
use crate::geometry::{Pose2D, Vec2};
use crate::policy::mlp::{Activation, Dense, Mlp};
use crate::policy::{unicycle_base, ActionSpec, ObsSpec};
use crate::rng::CounterRng;
use crate::sim::{FeatureKind, SimConfig, StepEvent, StopReason};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use proptest::prelude::*;

fn spec() -> ObsSpec {
    let mut c = SimConfig::default();
    c.observation.features = FeatureKind::DepthRays { n_rays: 11 };
    ObsSpec::from_sim(&c)
}

fn synthetic_log(distances: &[f64], reason: StopReason) -> EpisodeLog {
    let spec = spec();
    let n = distances.len();
    let steps = distances
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let last = i + 1 == n;
            StepRecord {
                t: i as u32,
                time_ms: 100 * i as u64,
                obs: (0..spec.frame_len()).map(|k| ((i + k) % 7) as f32 / 7.0).collect(),
                action: (!last).then_some([0.1, -0.2]),
                command: (!last).then_some([0.5, 0.4]),
                pose_est: Pose2D::new(0.0, 0.0, 0.0),
                pose_true: None,
                goal_distance: d,
                alpha: 0.0,
                event: if last { StepEvent::from(reason) } else { StepEvent::None },
            }
        })
        .collect();
    EpisodeLog {
        header: EpisodeHeader {
            worker_id: String::from("w1"),
            request_id: String::from("r1"),
            policy_id: Some(1),
            layout_seed: 3,
            sim_config_digest: String::from("x"),
            start_time_ms: 0,
            controller: Controller::Policy,
            obs_spec: spec,
            dt: 0.1,
            start_pose: Pose2D::new(0.0, 0.0, 0.0),
            goal: Vec2::new(3.0, 0.0),
            start_goal_distance: 3.0,
        },
        steps,
        footer: EpisodeFooter { stop_reason: reason, step_count: n as u32, duration_s: 0.1 * (n - 1) as f64, wall_duration_s: 0.0 },
    }
}

#[test]
fn goal_reward_on_last_step() {
    let t = assign_rewards(&synthetic_log(&[3.0, 2.5, 2.0], StopReason::GoalReached), &RewardConfig::default()).unwrap();
    let last = t.steps.last().unwrap();
    assert!((last.reward as f64 - (0.5 - 0.01 + 5.0)).abs() < 1e-6);
    assert_eq!(last.step_type, StepType::Last);
    assert_eq!(last.discount, 0.0);
    assert_eq!(t.steps[0].step_type, StepType::First);
    assert_eq!(t.steps[1].discount, 0.99f32);
}

#[test]
fn sparse_collision_rewards() {
    let t = assign_rewards(&synthetic_log(&[3.0, 2.9, 2.8], StopReason::Collision), &RewardConfig::sparse()).unwrap();
    let r: Vec<f32> = t.steps.iter().map(|s| s.reward).collect();
    assert_eq!(r, vec![0.0, 0.0, -1.0]);
}

#[test]
fn dense_progress_reward() {
    let t = assign_rewards(&synthetic_log(&[2.0, 1.9, 1.8], StopReason::Timeout), &RewardConfig::default()).unwrap();
    assert!((t.steps[1].reward - 0.09).abs() < 1e-6);
}

#[test]
fn malformed_log_rejected() {
    let mut log = synthetic_log(&[3.0, 2.0], StopReason::Timeout);
    log.steps[1].obs.pop();
    assert!(matches!(assign_rewards(&log, &RewardConfig::default()), Err(LearnerError::MalformedLog(_))));
    log.steps.clear();
    assert!(matches!(assign_rewards(&log, &RewardConfig::default()), Err(LearnerError::MalformedLog(_))));
}

const REASONS: [StopReason; 6] = [
    StopReason::GoalReached,
    StopReason::Collision,
    StopReason::TrackingLost,
    StopReason::Timeout,
    StopReason::UserStop,
    StopReason::UserCancel,
];

#[test]
fn sparse_returns_are_the_terminal_constants() {
    let mut rng = CounterRng::new(5);
    for _ in 0..1000 {
        let n = 1 + rng.below(40);
        let d: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 8.0)).collect();
        let reason = REASONS[rng.below(REASONS.len())];
        let t = assign_rewards(&synthetic_log(&d, reason), &RewardConfig::sparse()).unwrap();
        let expected = match reason {
            StopReason::GoalReached => 5.0,
            StopReason::Collision => -1.0,
            StopReason::TrackingLost => -0.5,
            _ => 0.0,
        };
        assert_eq!(t.episode_return(), expected);
    }
}

#[test]
fn push_counts_and_done_mask() {
    let t = assign_rewards(&synthetic_log(&[3.0, 2.9, 2.8, 2.7, 2.6], StopReason::Timeout), &RewardConfig::default()).unwrap();
    let mut buf = ReplayBuffer::new(spec().input_len(), 2, 100);
    assert_eq!(buf.push_trajectory(&t).unwrap(), 4);
    let done: Vec<bool> = buf.iter().map(|tr| tr.done).collect();
    assert_eq!(done, vec![false, false, false, true]);
    let first = buf.iter().next().unwrap();
    assert_eq!(first.obs, t.steps[0].obs);
    assert_eq!(first.next_obs, t.steps[1].obs);
    assert_eq!(first.reward, t.steps[1].reward);
}

#[test]
fn fifo_eviction() {
    let mut buf = ReplayBuffer::new(1, 1, 3);
    for i in 0..4 {
        buf.push_transition(&[i as f32], &[0.0], i as f32, &[0.0], false);
    }
    let r: Vec<f32> = buf.iter().map(|t| t.reward).collect();
    assert_eq!(r, vec![1.0, 2.0, 3.0]);
    assert_eq!(buf.len(), 3);
    assert_eq!(buf.total_pushed(), 4);
}

#[test]
fn sampling_contracts() {
    let mut buf = ReplayBuffer::new(1, 1, 10);
    assert_eq!(buf.sample(4, &mut CounterRng::new(0)), Err(LearnerError::EmptyBuffer));
    buf.push_transition(&[7.0], &[0.5], 1.0, &[8.0], true);
    let b = buf.sample(4, &mut CounterRng::new(0)).unwrap();
    assert_eq!(b.obs, vec![7.0; 4]);
    assert_eq!(b.done, vec![1.0; 4]);
    for i in 1..10 {
        buf.push_transition(&[i as f32], &[0.0], 0.0, &[0.0], false);
    }
    assert_eq!(buf.sample(64, &mut CounterRng::new(3)).unwrap(), buf.sample(64, &mut CounterRng::new(3)).unwrap());
}

#[test]
fn sampling_is_uniform() {
    let mut buf = ReplayBuffer::new(1, 1, 10);
    for i in 0..10 {
        buf.push_transition(&[i as f32], &[0.0], 0.0, &[0.0], false);
    }
    let mut rng = CounterRng::new(11);
    let mut counts = [0usize; 10];
    let draws = 1_000_000;
    let b = buf.sample(draws, &mut rng).unwrap();
    for o in b.obs {
        counts[o as usize] += 1;
    }
    let expected = draws as f64 / 10.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 9 degrees of freedom; 27.88 is the 0.999 quantile
    assert!(chi2 < 27.88, "chi2 {chi2}");
    for c in counts {
        assert!((c as f64 / draws as f64 - 0.1).abs() <= 0.01);
    }
}

#[test]
fn spill_roundtrip() {
    let mut buf = ReplayBuffer::new(2, 2, 3);
    for i in 0..5 {
        let f = i as f32;
        buf.push_transition(&[f, -f], &[0.1 * f, 0.2], f, &[f + 1.0, 0.0], i == 4);
    }
    let bytes = buf.to_bytes();
    let back = ReplayBuffer::from_bytes(&bytes).unwrap();
    assert_eq!(back, buf);
    assert!(back.iter().eq(buf.iter()));
    assert!(ReplayBuffer::from_bytes(&bytes[..bytes.len() - 1]).is_err());
}

proptest! {
    #[test]
    fn replay_conservation(lens in proptest::collection::vec(1usize..12, 1..20), cap in 1usize..40) {
        let mut buf = ReplayBuffer::new(spec().input_len(), 2, cap);
        let mut total = 0usize;
        for (k, &n) in lens.iter().enumerate() {
            let d: Vec<f64> = (0..n).map(|i| 5.0 - 0.1 * (i + k) as f64).collect();
            let t = assign_rewards(&synthetic_log(&d, StopReason::Timeout), &RewardConfig::default()).unwrap();
            total += buf.push_trajectory(&t).unwrap();
        }
        prop_assert_eq!(buf.total_pushed() as usize, total);
        prop_assert_eq!(buf.len(), total.min(cap));
    }

    #[test]
    fn polyak_contracts(tau in 0.001f32..1.0, seed in 0u64..1000) {
        let mut rng = CounterRng::new(seed);
        let online = Mlp::new(3, &[5, 1], &[Activation::Relu, Activation::Linear], &mut rng);
        let mut target = Mlp::new(3, &[5, 1], &[Activation::Relu, Activation::Linear], &mut rng);
        let before = target.param_distance(&online);
        target.polyak_update(&online, tau);
        let after = target.param_distance(&online);
        prop_assert!(after <= (1.0 - tau as f64) * before * (1.0 + 1e-5) + 1e-7);
    }

    #[test]
    fn stop_rule_matches_window_scan(seq in proptest::collection::vec(proptest::bool::weighted(0.8), 0..260)) {
        let rule = FinetuneRule::default();
        let brute = (1..=seq.len()).find(|&n| n >= 200 || (n >= 10 && seq[n - 10..n].iter().all(|&s| s)));
        prop_assert_eq!(rule.stop_episode(&seq), brute);
        if let Some(n) = brute {
            prop_assert!(rule.should_stop(&seq[..n]));
            prop_assert!((1..n).all(|m| !rule.should_stop(&seq[..m])));
        }
    }
}

#[test]
fn polyak_tau_one_copies() {
    let mut rng = CounterRng::new(2);
    let online = Mlp::new(3, &[4, 1], &[Activation::Relu, Activation::Linear], &mut rng);
    let mut target = Mlp::new(3, &[4, 1], &[Activation::Relu, Activation::Linear], &mut rng);
    target.polyak_update(&online, 1.0);
    assert_eq!(target, online);
}

#[test]
fn stop_rule_cases() {
    let rule = FinetuneRule::default();
    let mut seq = vec![false; 40];
    seq.extend([true; 10]);
    seq.extend([false; 30]);
    assert_eq!(rule.stop_episode(&seq), Some(50));
    let alt: Vec<bool> = (0..300).map(|i| i % 10 != 0).collect();
    assert_eq!(rule.stop_episode(&alt), Some(200));
    assert_eq!(rule.stop_episode(&[true; 9]), None);
}

fn random_batch(obs_dim: usize, act_dim: usize, n: usize, seed: u64) -> Batch {
    let mut rng = CounterRng::new(seed);
    let mut v = |k: usize| (0..k).map(|_| rng.uniform(-1.0, 1.0) as f32).collect::<Vec<f32>>();
    Batch {
        len: n,
        obs: v(n * obs_dim),
        action: v(n * act_dim),
        reward: v(n),
        next_obs: v(n * obs_dim),
        done: (0..n).map(|i| (i % 3 == 0) as u8 as f32).collect(),
    }
}

#[test]
fn zero_discount_target_is_reward() {
    let mut rng = CounterRng::new(4);
    let actor = Mlp::new(3, &[8, 4], &[Activation::Tanh, Activation::Linear], &mut rng);
    let t1 = Mlp::new(5, &[8, 1], &[Activation::Relu, Activation::Linear], &mut rng);
    let t2 = Mlp::new(5, &[8, 1], &[Activation::Relu, Activation::Linear], &mut rng);
    let batch = random_batch(3, 2, 32, 9);
    let eps: Vec<f32> = (0..64).map(|_| rng.normal() as f32).collect();
    let y = td_targets(0.0, 0.7, &actor, &t1, &t2, &batch, &eps);
    assert_eq!(y, batch.reward);
}

/// Two-parameter critic `Q(a) = w a + b` with no observation input.
fn toy_critic(w: f32, b: f32) -> Mlp {
    Mlp { layers: vec![Dense { input: 1, output: 1, activation: Activation::Linear, weights: vec![w], bias: vec![b] }] }
}

/// Two-parameter actor: mean and log-std biases with no observation input.
fn toy_actor(mean: f32, log_std: f32) -> Mlp {
    Mlp { layers: vec![Dense { input: 0, output: 2, activation: Activation::Linear, weights: vec![], bias: vec![mean, log_std] }] }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-3)
}

#[test]
fn critic_gradient_matches_finite_differences() {
    let n = 16;
    let batch = random_batch(0, 1, n, 21);
    let (w, b) = (0.7f32, -0.3f32);
    let (_, g, _) = critic_loss_and_grad(&toy_critic(w, b), &[], &batch.action, &batch.reward, n);
    let analytic: Vec<f64> = g.iter().map(|v| *v as f64).collect();
    let h = 1e-2f32;
    let loss = |w: f32, b: f32| critic_loss_and_grad(&toy_critic(w, b), &[], &batch.action, &batch.reward, n).0;
    let fd_w = (loss(w + h, b) - loss(w - h, b)) / ((w + h) as f64 - (w - h) as f64);
    let fd_b = (loss(w, b + h) - loss(w, b - h)) / ((b + h) as f64 - (b - h) as f64);
    assert!(rel_close(analytic[0], fd_w, 1e-4), "{} vs {fd_w}", analytic[0]);
    assert!(rel_close(analytic[1], fd_b, 1e-4), "{} vs {fd_b}", analytic[1]);
}

#[test]
fn actor_gradient_matches_finite_differences() {
    let n = 16;
    let mut rng = CounterRng::new(8);
    let eps: Vec<f32> = (0..n).map(|_| rng.normal() as f32).collect();
    let (c1, c2) = (toy_critic(1.3, 0.2), toy_critic(-0.4, 0.1));
    for &(mean, log_std, alpha) in &[(0.2f32, -0.5f32, 0.3f64), (-0.6, 0.1, 1.0), (0.0, -1.2, 0.05)] {
        let step = actor_loss_and_grad(&toy_actor(mean, log_std), &c1, &c2, &[], &eps, alpha, n);
        let analytic: Vec<f64> = step.grads.iter().map(|v| *v as f64).collect();
        let loss = |m: f32, s: f32| actor_loss_and_grad(&toy_actor(m, s), &c1, &c2, &[], &eps, alpha, n).loss;
        let h = 2e-3f32;
        let fd_m = (loss(mean + h, log_std) - loss(mean - h, log_std)) / ((mean + h) as f64 - (mean - h) as f64);
        let fd_s = (loss(mean, log_std + h) - loss(mean, log_std - h)) / ((log_std + h) as f64 - (log_std - h) as f64);
        assert!(rel_close(analytic[0], fd_m, 1e-4), "mean: {} vs {fd_m}", analytic[0]);
        assert!(rel_close(analytic[1], fd_s, 1e-4), "log_std: {} vs {fd_s}", analytic[1]);
    }
}

#[test]
fn sac_update_runs_and_reports() {
    let cfg = SacConfig { hidden: vec![16, 16], batch_size: 32, ..SacConfig::default() };
    let mut agent = SacAgent::new(cfg, 3, 2, 1).unwrap();
    let batch = random_batch(3, 2, 32, 2);
    let first = agent.update(&batch).unwrap();
    let mut last = first;
    for _ in 0..300 {
        last = agent.update(&batch).unwrap();
    }
    assert_eq!(last.update, 301);
    assert!(last.critic1_loss < first.critic1_loss);
    assert!(last.alpha < first.alpha || last.entropy < -agent.target_entropy() + 1.0);
}

#[test]
fn sac_config_validation() {
    assert!(SacAgent::new(SacConfig { gamma: 1.0, ..SacConfig::default() }, 3, 2, 0).is_err());
    assert!(SacAgent::new(SacConfig { tau: 0.0, ..SacConfig::default() }, 3, 2, 0).is_err());
}

#[test]
fn bc_memorizes_single_pair() {
    let mut rng = CounterRng::new(1);
    let actor = super::sac::build_mlp(4, &[32, 32], 4, Activation::Relu, &mut rng);
    let mut bc = BcTrainer::new(actor, 1e-3);
    bc.add(&[0.3, -0.2, 0.9, 0.1], &[0.6, -0.4]).unwrap();
    for _ in 0..2000 {
        bc.full_batch_step().unwrap();
    }
    assert!(bc.dataset_loss() < 1e-6, "{}", bc.dataset_loss());
}

#[test]
fn bc_zero_init_zero_demo() {
    let actor = build_actor(4, 2, &[8], &mut CounterRng::new(0));
    let mut bc = BcTrainer::new(actor, 1e-3);
    bc.add(&[1.0, 2.0, 3.0, 4.0], &[0.0, 0.0]).unwrap();
    assert_eq!(bc.dataset_loss(), 0.0);
}

/// Solves the normal equations `X^T X w = X^T y` by Gaussian elimination.
fn least_squares(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let d = x[0].len();
    let mut a = vec![vec![0.0; d + 1]; d];
    for (row, &t) in x.iter().zip(y) {
        for i in 0..d {
            for j in 0..d {
                a[i][j] += row[i] * row[j];
            }
            a[i][d] += row[i] * t;
        }
    }
    for c in 0..d {
        let p = (c..d).max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap()).unwrap();
        a.swap(c, p);
        for r in 0..d {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=d {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    (0..d).map(|i| a[i][d] / a[i][i]).collect()
}

#[test]
fn bc_linear_head_matches_least_squares() {
    // realizable targets tanh(x . w* + b*); least squares on atanh(targets) recovers w*, b*
    let mut rng = CounterRng::new(31);
    let true_w = [0.4, -0.7, 0.25];
    let true_b = 0.1;
    let actor = Mlp { layers: vec![Dense::zeros(3, 2, Activation::Linear)] };
    let mut bc = BcTrainer::new(actor, 1e-2);
    let mut design = Vec::new();
    let mut z = Vec::new();
    for _ in 0..64 {
        let x: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let pre: f64 = x.iter().zip(true_w).map(|(a, b)| a * b).sum::<f64>() + true_b;
        let xf: Vec<f32> = x.iter().map(|v| *v as f32).collect();
        let t = libm::tanh(pre) as f32;
        bc.add(&xf, &[t]).unwrap();
        let mut row: Vec<f64> = xf.iter().map(|v| *v as f64).collect();
        row.push(1.0);
        design.push(row);
        z.push(libm::atanh(t as f64));
    }
    let oracle = least_squares(&design, &z);
    for i in 0..6000 {
        if i == 4000 {
            bc.set_lr(1e-3);
        }
        bc.full_batch_step().unwrap();
    }
    let layer = &bc.actor.layers[0];
    for j in 0..3 {
        assert!((layer.weights[j] as f64 - oracle[j]).abs() < 1e-3, "w{j}: {} vs {}", layer.weights[j], oracle[j]);
    }
    assert!((layer.bias[0] as f64 - oracle[3]).abs() < 1e-3);
}

#[test]
fn publish_ids_and_idempotence() {
    let spec = spec();
    let actor = build_actor(spec.input_len(), 2, &[8], &mut CounterRng::new(0));
    let mut p = Publisher::new();
    let a = p.publish(spec, ActionSpec::Residual { beta: 0.5 }, &actor).unwrap();
    let again = p.publish(spec, ActionSpec::Residual { beta: 0.5 }, &actor).unwrap();
    assert_eq!(a.content_hash, again.content_hash);
    assert_eq!(a.policy_id, again.policy_id);
    let mut changed = actor.clone();
    changed.layers[0].bias[0] += 0.5;
    let b = p.publish(spec, ActionSpec::Residual { beta: 0.5 }, &changed).unwrap();
    assert!(b.policy_id > a.policy_id);
    // the initial policy is the unicycle controller
    let obs = crate::sim::Observation { frame: vec![0.3; spec.frame_len()], stacked: vec![0.3; spec.input_len()] };
    let d = crate::policy::decide(&a, &obs, crate::policy::Sampling::Deterministic).unwrap();
    let base = unicycle_base(0.3f32 as f64);
    assert_eq!((d.command.tau_l, d.command.tau_r), (base.v_l, base.v_r));
}
