//! Running one episode in the simulator and recording its log.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::env::{EnvError, LayoutSpec};
use crate::episode::{Controller, EpisodeHeader, EpisodeLog, EpisodeRecorder, StepRecord};
use crate::expert::ExpertPlanner;
use crate::policy::{actor, to_command, ActionSpec, Mlp, ObsSpec, PolicySnapshot, Sampling, SnapshotError};
use crate::rng::CounterRng;
use crate::sim::{goal_features, Observation, SimConfig, SimError, SimState, StepEvent, StopReason, WheelCommand};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RolloutError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Policy(#[from] SnapshotError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Chooses a command each step. `action` is the actor-space action, recorded in the log.
pub trait Driver {
    fn act(&mut self, obs: &Observation, state: &SimState) -> Result<([f64; 2], WheelCommand), RolloutError>;
}

/// An actor head (optionally stochastic) composed with the action mapping.
pub struct ActorDriver<'a> {
    pub actor: &'a Mlp,
    pub action_spec: ActionSpec,
    pub rng: Option<&'a mut CounterRng>,
}

impl<'a> ActorDriver<'a> {
    pub fn deterministic(snapshot: &'a PolicySnapshot) -> Self {
        Self { actor: &snapshot.actor, action_spec: snapshot.action_spec, rng: None }
    }

    pub fn stochastic(snapshot: &'a PolicySnapshot, rng: &'a mut CounterRng) -> Self {
        Self { actor: &snapshot.actor, action_spec: snapshot.action_spec, rng: Some(rng) }
    }
}

impl Driver for ActorDriver<'_> {
    fn act(&mut self, obs: &Observation, _state: &SimState) -> Result<([f64; 2], WheelCommand), RolloutError> {
        if obs.stacked.len() != self.actor.input_width() {
            return Err(SnapshotError::SpecMismatch { actor: self.actor.input_width(), spec: obs.stacked.len() }.into());
        }
        let sampling = match self.rng.as_deref_mut() {
            Some(r) => Sampling::Stochastic(r),
            None => Sampling::Deterministic,
        };
        let (a, _) = actor::act(self.actor, &obs.stacked, sampling).map_err(SnapshotError::from)?;
        let action = [a[0] as f64, a[1] as f64];
        Ok((action, to_command(&self.action_spec, obs.alpha() as f64, action)))
    }
}

/// Uniform random actions in `[-1, 1]^2`.
pub struct RandomDriver<'a> {
    pub action_spec: ActionSpec,
    pub rng: &'a mut CounterRng,
}

impl Driver for RandomDriver<'_> {
    fn act(&mut self, obs: &Observation, _state: &SimState) -> Result<([f64; 2], WheelCommand), RolloutError> {
        let action = [self.rng.uniform(-1.0, 1.0), self.rng.uniform(-1.0, 1.0)];
        Ok((action, to_command(&self.action_spec, obs.alpha() as f64, action)))
    }
}

/// Pure unicycle controller on the estimated heading error (zero residual).
pub struct UnicycleDriver;

impl Driver for UnicycleDriver {
    fn act(&mut self, obs: &Observation, _state: &SimState) -> Result<([f64; 2], WheelCommand), RolloutError> {
        Ok(([0.0; 2], to_command(&ActionSpec::Residual { beta: 0.0 }, obs.alpha() as f64, [0.0; 2])))
    }
}

/// Scripted planner with access to the true pose.
pub struct ExpertDriver {
    pub planner: ExpertPlanner,
}

impl Driver for ExpertDriver {
    fn act(&mut self, _obs: &Observation, state: &SimState) -> Result<([f64; 2], WheelCommand), RolloutError> {
        let c = self.planner.command(&state.pose_true);
        Ok(([c.tau_l, c.tau_r], c))
    }
}

/// Fixed wheel commands, one per step; zero once exhausted.
pub struct ScriptedDriver {
    pub commands: Vec<[f64; 2]>,
    pub next: usize,
}

impl Driver for ScriptedDriver {
    fn act(&mut self, _obs: &Observation, _state: &SimState) -> Result<([f64; 2], WheelCommand), RolloutError> {
        let c = self.commands.get(self.next).copied().unwrap_or([0.0; 2]);
        self.next += 1;
        Ok((c, WheelCommand::new(c[0], c[1])))
    }
}

/// Header fields that do not come from the simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutMeta {
    pub worker_id: String,
    pub request_id: String,
    pub policy_id: Option<u64>,
    pub controller: Controller,
    pub start_time_ms: u64,
    /// Include ground-truth poses in the records.
    pub record_true_pose: bool,
}

impl Default for RolloutMeta {
    fn default() -> Self {
        Self {
            worker_id: String::from("local"),
            request_id: String::from("local"),
            policy_id: None,
            controller: Controller::Policy,
            start_time_ms: 0,
            record_true_pose: true,
        }
    }
}

/// Final state of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub stop_reason: StopReason,
    /// True distance to the goal at the last step (m).
    pub final_goal_distance: f64,
    pub steps: u32,
    pub layout_seed: u64,
}

impl EpisodeOutcome {
    pub fn success(&self) -> bool {
        self.stop_reason == StopReason::GoalReached
    }
}

/// Hex SHA-256 of the canonical JSON form of a simulator config.
pub fn sim_config_digest(config: &SimConfig) -> String {
    let bytes = serde_json::to_vec(config).expect("config serialization is infallible");
    crate::policy::hex32(&crate::policy::sha256(&bytes))
}

fn record(state: &SimState, obs: &Observation, t: u32, meta: &RolloutMeta, event: StepEvent) -> StepRecord {
    let (goal_distance, alpha) = goal_features(&state.pose_est, state.goal());
    StepRecord {
        t,
        time_ms: meta.start_time_ms + libm::round(t as f64 * state.config.dt * 1000.0) as u64,
        obs: obs.frame.clone(),
        action: None,
        command: None,
        pose_est: state.pose_est,
        pose_true: meta.record_true_pose.then_some(state.pose_true),
        goal_distance,
        alpha,
        event,
    }
}

/// Step-by-step episode driver that records as it goes.
pub struct EpisodeRunner {
    state: SimState,
    obs: Observation,
    rec: EpisodeRecorder,
    meta: RolloutMeta,
    event: StepEvent,
    layout_seed: u64,
}

impl EpisodeRunner {
    pub fn start(layout: &LayoutSpec, config: &SimConfig, sim_seed: u64, meta: &RolloutMeta) -> Result<Self, RolloutError> {
        let (state, obs) = SimState::reset(layout, config, sim_seed)?;
        let header = EpisodeHeader {
            worker_id: meta.worker_id.clone(),
            request_id: meta.request_id.clone(),
            policy_id: meta.policy_id,
            layout_seed: layout.seed,
            sim_config_digest: sim_config_digest(config),
            start_time_ms: meta.start_time_ms,
            controller: meta.controller,
            obs_spec: ObsSpec::from_sim(config),
            dt: config.dt,
            start_pose: layout.start_pose,
            goal: layout.goal_position,
            start_goal_distance: layout.start_goal_distance(),
        };
        Ok(Self { state, obs, rec: EpisodeRecorder::new(header), meta: meta.clone(), event: StepEvent::None, layout_seed: layout.seed })
    }

    pub fn observation(&self) -> &Observation {
        &self.obs
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    /// Event produced by the latest step.
    pub fn last_event(&self) -> StepEvent {
        self.event
    }

    pub fn ended(&self) -> Option<StopReason> {
        self.state.ended
    }

    /// Records the current state with `action` and `cmd`, then advances the simulator.
    pub fn step(&mut self, action: [f64; 2], cmd: WheelCommand) -> Result<StepEvent, RolloutError> {
        let mut r = record(&self.state, &self.obs, self.state.step, &self.meta, self.event);
        r.action = Some(action);
        r.command = Some([cmd.tau_l, cmd.tau_r]);
        self.rec.record_step(r);
        let (o, e) = self.state.step(cmd)?;
        self.obs = o;
        self.event = e;
        Ok(e)
    }

    /// Appends the final record. `stop` ends a running episode with a user stop reason;
    /// it is ignored once the simulator has terminated on its own.
    pub fn finish(self, stop: Option<StopReason>, wall_duration_s: f64) -> (EpisodeLog, EpisodeOutcome) {
        let mut rec = self.rec;
        rec.record_step(record(&self.state, &self.obs, self.state.step, &self.meta, self.event));
        let reason = self.state.ended.or(stop).unwrap_or(StopReason::UserStop);
        let outcome = EpisodeOutcome {
            stop_reason: reason,
            final_goal_distance: self.state.goal_distance_true(),
            steps: self.state.step,
            layout_seed: self.layout_seed,
        };
        (rec.finish(reason, wall_duration_s), outcome)
    }
}

/// Runs one episode to termination; `N` simulator steps give `N + 1` records.
pub fn rollout(
    layout: &LayoutSpec,
    config: &SimConfig,
    sim_seed: u64,
    driver: &mut dyn Driver,
    meta: &RolloutMeta,
) -> Result<(EpisodeLog, EpisodeOutcome), RolloutError> {
    let mut runner = EpisodeRunner::start(layout, config, sim_seed, meta)?;
    while runner.ended().is_none() {
        let (action, cmd) = driver.act(&runner.obs, &runner.state)?;
        runner.step(action, cmd)?;
    }
    Ok(runner.finish(None, 0.0))
}

/// Mismatch found by [`replay_check`]; `MismatchAt(i)` names the simulator step
/// (the command of record `i`) after which poses diverge.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReplayMismatch {
    #[error("logged and replayed poses diverge at step {0}")]
    MismatchAt(u32),
    #[error("log lacks commands or poses needed for replay")]
    Incomplete,
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Re-simulates the logged commands and compares poses to `tol`.
pub fn replay_check(log: &EpisodeLog, layout: &LayoutSpec, config: &SimConfig, sim_seed: u64, tol: f64) -> Result<(), ReplayMismatch> {
    let (mut state, _) = SimState::reset(layout, config, sim_seed)?;
    let close = |a: &crate::geometry::Pose2D, b: &crate::geometry::Pose2D| {
        (a.x - b.x).abs() <= tol && (a.y - b.y).abs() <= tol && crate::geometry::wrap_angle(a.theta - b.theta).abs() <= tol
    };
    let first = log.steps.first().ok_or(ReplayMismatch::Incomplete)?;
    if !close(&state.pose_est, &first.pose_est) {
        return Err(ReplayMismatch::MismatchAt(0));
    }
    // step i applies the command of record i and must land on record i + 1
    for (i, pair) in log.steps.windows(2).enumerate() {
        let c = pair[0].command.ok_or(ReplayMismatch::Incomplete)?;
        let next = &pair[1];
        if state.is_ended() {
            return Err(ReplayMismatch::MismatchAt(i as u32));
        }
        state.step(WheelCommand::new(c[0], c[1]))?;
        if !close(&state.pose_est, &next.pose_est) || next.pose_true.is_some_and(|p| !close(&state.pose_true, &p)) {
            return Err(ReplayMismatch::MismatchAt(i as u32));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_layout, sample_eval_suite};
    use crate::eval::run_suite_with;
    use crate::train::suites;

    fn empty_layout() -> LayoutSpec {
        generate_layout(&suites::empty_room(), 7).unwrap()
    }

    fn scripted(n: usize, seed: u64) -> Vec<[f64; 2]> {
        let mut rng = CounterRng::new(seed);
        (0..n).map(|_| [rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0)]).collect()
    }

    #[test]
    fn n_steps_give_n_plus_one_records() {
        let layout = empty_layout();
        let cfg = SimConfig::default();
        let (log, out) = rollout(&layout, &cfg, 3, &mut UnicycleDriver, &RolloutMeta::default()).unwrap();
        assert_eq!(log.steps.len(), out.steps as usize + 1);
        assert!(log.steps[..log.steps.len() - 1].iter().all(|r| r.command.is_some()));
        assert!(log.steps.last().unwrap().command.is_none());
        assert_eq!(log.footer.stop_reason, out.stop_reason);
        assert!(log.validate(2.0).is_empty());
        for (i, r) in log.steps.iter().enumerate() {
            assert_eq!(r.t as usize, i);
            let (d, a) = goal_features(&r.pose_est, layout.goal_position);
            assert_eq!((r.goal_distance, r.alpha), (d, a));
        }
        let back = EpisodeLog::from_jsonl(&log.to_jsonl()).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn zero_noise_log_replays() {
        let layout = empty_layout();
        let cfg = SimConfig::default().noiseless();
        let mut d = ScriptedDriver { commands: scripted(60, 1), next: 0 };
        let (log, _) = rollout(&layout, &cfg, 5, &mut d, &RolloutMeta::default()).unwrap();
        assert!(log.steps.len() > 10);
        assert_eq!(replay_check(&log, &layout, &cfg, 5, 1e-9), Ok(()));
    }

    #[test]
    fn perturbed_action_mismatches_at_that_step() {
        let layout = empty_layout();
        let cfg = SimConfig::default().noiseless();
        let mut d = ScriptedDriver { commands: scripted(60, 2), next: 0 };
        let (mut log, _) = rollout(&layout, &cfg, 5, &mut d, &RolloutMeta::default()).unwrap();
        let c = log.steps[7].command.as_mut().unwrap();
        c[0] -= 0.1;
        assert_eq!(replay_check(&log, &layout, &cfg, 5, 1e-9), Err(ReplayMismatch::MismatchAt(7)));
    }

    #[test]
    fn noisy_log_replays_with_same_seed() {
        let layout = empty_layout();
        let cfg = SimConfig::default();
        let mut d = ScriptedDriver { commands: scripted(80, 3), next: 0 };
        let (log, _) = rollout(&layout, &cfg, 11, &mut d, &RolloutMeta::default()).unwrap();
        assert_eq!(replay_check(&log, &layout, &cfg, 11, 1e-9), Ok(()));
        assert!(matches!(replay_check(&log, &layout, &cfg, 12, 1e-9), Err(ReplayMismatch::MismatchAt(_))));
    }

    #[test]
    fn log_without_commands_is_incomplete() {
        let layout = empty_layout();
        let cfg = SimConfig::default().noiseless();
        let mut d = ScriptedDriver { commands: scripted(20, 4), next: 0 };
        let (mut log, _) = rollout(&layout, &cfg, 5, &mut d, &RolloutMeta::default()).unwrap();
        log.steps[3].command = None;
        assert_eq!(replay_check(&log, &layout, &cfg, 5, 1e-9), Err(ReplayMismatch::Incomplete));
    }

    fn straight_line_free(layout: &LayoutSpec, radius: f64) -> bool {
        // sample the swept disc along the segment against every obstacle and wall
        let world = crate::env::World::new(layout);
        let (a, b) = (layout.start_pose.position(), layout.goal_position);
        (0..=200).all(|k| {
            let p = a + (b - a) * (k as f64 / 200.0);
            !world.disc_collides(p, radius)
        })
    }

    #[test]
    fn unicycle_solves_empty_rooms() {
        let cfg = SimConfig::default().noiseless();
        let suite = sample_eval_suite(&suites::empty_room(), 20, 100).unwrap();
        assert!(suite.iter().all(|l| straight_line_free(l, cfg.robot_radius)));
        let (r, _) = run_suite_with(&suite, 10, &cfg, 1, |_| UnicycleDriver).unwrap();
        assert_eq!(r.sr, 100.0);
        assert_eq!(r.cr, 0.0);
    }

    #[test]
    fn unicycle_fails_blocked_lines() {
        let cfg = SimConfig::default();
        let suite = sample_eval_suite(&suites::blocked_line(), 20, 9_000_000).unwrap();
        assert!(suite.iter().all(|l| !straight_line_free(l, cfg.robot_radius)));
        let (r, _) = run_suite_with(&suite, 10, &cfg, 1, |_| UnicycleDriver).unwrap();
        assert!(r.sr <= 10.0, "sr {}", r.sr);
    }

    #[test]
    fn expert_reaches_goals_around_obstacles() {
        let cfg = SimConfig::default().noiseless();
        let suite = sample_eval_suite(&suites::blocked_line(), 10, 500).unwrap();
        let (r, _) = run_suite_with(&suite, 2, &cfg, 1, |l| ExpertDriver { planner: ExpertPlanner::new(l, cfg.robot_radius, 0.1) }).unwrap();
        assert!(r.sr >= 90.0, "sr {}", r.sr);
        assert_eq!(r.cr, 0.0);
    }

    #[test]
    fn expert_path_length_is_at_least_straight_line() {
        let layout = generate_layout(&suites::blocked_line(), 3).unwrap();
        let p = ExpertPlanner::new(&layout, 0.12, 0.1);
        let start = layout.start_pose.position();
        let len = p.path_length(start).unwrap();
        assert!(len + 0.1 >= start.distance(layout.goal_position));
    }

    #[test]
    fn suite_runs_are_deterministic_and_leave_policy_untouched() {
        let cfg = SimConfig::default();
        let obs = ObsSpec::from_sim(&cfg);
        let mut rng = CounterRng::new(9);
        let actor = crate::policy::init_actor(obs.input_len(), &[16, 16], crate::policy::Activation::Relu, &mut rng);
        let snap = PolicySnapshot::new(1, obs, ActionSpec::Residual { beta: 0.5 }, actor).unwrap();
        let hash = snap.hash_hex();
        let suite = sample_eval_suite(&suites::light_clutter(), 3, 40).unwrap();
        let a = crate::eval::run_suite(&snap, &suite, 2, &cfg, 4).unwrap();
        let b = crate::eval::run_suite(&snap, &suite, 2, &cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(snap.hash_hex(), hash);
    }
}
