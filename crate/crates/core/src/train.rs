//! In-process training drivers: simulated pretraining, online finetuning,
//! behavior cloning from scripted demonstrations, and the layout-count ablation.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::env::{generate_layout, EnvError, GenConfig, LayoutSpec};
use crate::episode::{Controller, EpisodeLog};
use crate::eval::{run_suite, MetricsReport};
use crate::expert::ExpertPlanner;
use crate::learner::sac::build_mlp;
use crate::learner::{
    assign_rewards, BcConfig, BcTrainer, FinetuneRule, LearnerError, Publisher, ReplayBuffer, RewardConfig, SacAgent,
    SacConfig, SacDiagnostics,
};
use crate::policy::{Activation, ActionSpec, ObsSpec, PolicySnapshot};
use crate::rng::{mix64, CounterRng};
use crate::rollout::{rollout, ActorDriver, EpisodeOutcome, ExpertDriver, RandomDriver, RolloutError, RolloutMeta};
use crate::sim::{SimConfig, StopReason};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub sim: SimConfig,
    pub gen: GenConfig,
    /// Train on layouts `layout_seed_base .. layout_seed_base + pool_size`; a fresh
    /// layout per episode when absent.
    pub pool_size: Option<usize>,
    pub layout_seed_base: u64,
    pub episodes: usize,
    pub sac: SacConfig,
    pub reward: RewardConfig,
    /// Residual gain.
    pub beta: f64,
    pub replay_capacity: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            gen: GenConfig::default(),
            pool_size: None,
            layout_seed_base: 0,
            episodes: 1000,
            sac: SacConfig::default(),
            reward: RewardConfig::default(),
            beta: 0.5,
            replay_capacity: ReplayBuffer::DEFAULT_CAPACITY,
            seed: 0,
        }
    }
}

/// Per-episode training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    pub layout_seed: u64,
    pub stop_reason: StopReason,
    pub steps: u32,
    pub episode_return: f64,
    pub env_steps: u64,
    pub updates: u64,
    pub diagnostics: Option<SacDiagnostics>,
}

/// SAC agent, replay buffer, and the bookkeeping between them.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub agent: SacAgent,
    pub buffer: ReplayBuffer,
    pub reward: RewardConfig,
    pub obs_spec: ObsSpec,
    pub action_spec: ActionSpec,
    rng: CounterRng,
    env_steps: u64,
    pending_updates: f64,
}

impl Trainer {
    pub fn new(sim: &SimConfig, sac: SacConfig, reward: RewardConfig, beta: f64, capacity: usize, seed: u64) -> Result<Self, TrainError> {
        let obs_spec = ObsSpec::from_sim(sim);
        let agent = SacAgent::new(sac, obs_spec.input_len(), ActionSpec::DIM, seed)?;
        Ok(Self::from_agent(agent, obs_spec, ActionSpec::Residual { beta }, reward, capacity, seed))
    }

    pub fn from_agent(agent: SacAgent, obs_spec: ObsSpec, action_spec: ActionSpec, reward: RewardConfig, capacity: usize, seed: u64) -> Self {
        let buffer = ReplayBuffer::new(agent.obs_dim, agent.act_dim, capacity.max(1));
        Self {
            agent,
            buffer,
            reward,
            obs_spec,
            action_spec,
            rng: CounterRng::new(seed).split(20),
            env_steps: 0,
            pending_updates: 0.0,
        }
    }

    /// Continues training from a published policy.
    pub fn from_snapshot(snapshot: &PolicySnapshot, sac: SacConfig, reward: RewardConfig, capacity: usize, seed: u64) -> Result<Self, TrainError> {
        let agent = SacAgent::with_actor(sac, snapshot.actor.clone(), ActionSpec::DIM, seed)?;
        Ok(Self::from_agent(agent, snapshot.obs_spec, snapshot.action_spec, reward, capacity, seed))
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    /// Restores the step counter of a checkpointed trainer.
    pub fn set_env_steps(&mut self, env_steps: u64) {
        self.env_steps = env_steps;
    }

    pub fn in_warmup(&self) -> bool {
        (self.env_steps as usize) < self.agent.config.warmup_steps
    }

    /// Runs one collection episode: random actions during warmup, then the stochastic actor.
    pub fn collect(&mut self, layout: &LayoutSpec, sim: &SimConfig, meta: &RolloutMeta) -> Result<(EpisodeLog, EpisodeOutcome), TrainError> {
        let sim_seed = self.rng.next_u64();
        let mut policy_rng = self.rng.split(sim_seed);
        let result = if self.in_warmup() {
            let mut d = RandomDriver { action_spec: self.action_spec, rng: &mut policy_rng };
            rollout(layout, sim, sim_seed, &mut d, meta)?
        } else {
            let mut d = ActorDriver { actor: &self.agent.actor, action_spec: self.action_spec, rng: Some(&mut policy_rng) };
            rollout(layout, sim, sim_seed, &mut d, meta)?
        };
        Ok(result)
    }

    /// Rewards and stores one log; returns `(transitions, episode return)`.
    pub fn ingest(&mut self, log: &EpisodeLog) -> Result<(usize, f64), TrainError> {
        let traj = assign_rewards(log, &self.reward)?;
        let n = self.buffer.push_trajectory(&traj)?;
        self.env_steps += n as u64;
        self.pending_updates += self.agent.config.grad_steps_per_env_step * n as f64;
        Ok((n, traj.episode_return()))
    }

    /// Runs the gradient steps owed for ingested experience once warmup is over.
    pub fn train_pending(&mut self) -> Result<Option<SacDiagnostics>, TrainError> {
        if self.in_warmup() || self.buffer.is_empty() {
            self.pending_updates = 0.0;
            return Ok(None);
        }
        let mut last = None;
        while self.pending_updates >= 1.0 {
            let batch = self.buffer.sample(self.agent.config.batch_size, &mut self.rng)?;
            last = Some(self.agent.update(&batch)?);
            self.pending_updates -= 1.0;
        }
        Ok(last)
    }

    pub fn publish(&self, publisher: &mut Publisher) -> Result<PolicySnapshot, TrainError> {
        Ok(publisher.publish(self.obs_spec, self.action_spec, &self.agent.actor)?)
    }

    /// Current actor as a snapshot with the given id.
    pub fn snapshot(&self, policy_id: u64) -> Result<PolicySnapshot, TrainError> {
        Ok(PolicySnapshot::new(policy_id, self.obs_spec, self.action_spec, self.agent.actor.clone()).map_err(LearnerError::from)?)
    }

    /// Collect, ingest, and train on one episode.
    pub fn episode(&mut self, index: usize, layout: &LayoutSpec, sim: &SimConfig) -> Result<(EpisodeStats, EpisodeOutcome), TrainError> {
        let meta = RolloutMeta { record_true_pose: false, ..RolloutMeta::default() };
        let (log, outcome) = self.collect(layout, sim, &meta)?;
        let (_, ret) = self.ingest(&log)?;
        let diagnostics = self.train_pending()?;
        Ok((
            EpisodeStats {
                episode: index,
                layout_seed: layout.seed,
                stop_reason: outcome.stop_reason,
                steps: outcome.steps,
                episode_return: ret,
                env_steps: self.env_steps,
                updates: self.agent.updates(),
                diagnostics,
            },
            outcome,
        ))
    }
}

/// First `n` layouts that generate successfully from seeds `base, base + 1, ..`.
pub fn layout_pool(gen: &GenConfig, base: u64, n: usize) -> Result<Vec<LayoutSpec>, TrainError> {
    let mut out = Vec::with_capacity(n);
    let mut s = base;
    while out.len() < n {
        match generate_layout(gen, s) {
            Ok(l) => out.push(l),
            Err(EnvError::GenerationFailed { .. }) if s - base < 100 * n as u64 + 100 => {}
            Err(e) => return Err(e.into()),
        }
        s += 1;
    }
    Ok(out)
}

/// Cycles through a fixed layout pool or generates a fresh layout per episode.
pub struct LayoutSource {
    gen: GenConfig,
    base: u64,
    pool: Option<Vec<LayoutSpec>>,
    rng: CounterRng,
    next_fresh: u64,
}

impl LayoutSource {
    pub fn new(gen: &GenConfig, base: u64, pool_size: Option<usize>, seed: u64) -> Result<Self, TrainError> {
        let pool = match pool_size {
            Some(0) => return Err(TrainError::InvalidArgument("pool size must be at least 1")),
            Some(n) => Some(layout_pool(gen, base, n)?),
            None => None,
        };
        Ok(Self { gen: gen.clone(), base, pool, rng: CounterRng::new(seed).split(30), next_fresh: 0 })
    }

    pub fn next_layout(&mut self) -> Result<LayoutSpec, TrainError> {
        match &self.pool {
            Some(p) => Ok(p[self.rng.below(p.len())].clone()),
            None => loop {
                // seeds whose generation fails are skipped
                let s = self.base + self.next_fresh;
                self.next_fresh += 1;
                match generate_layout(&self.gen, s) {
                    Ok(l) => return Ok(l),
                    Err(EnvError::GenerationFailed { .. }) if self.next_fresh < u32::MAX as u64 => continue,
                    Err(e) => return Err(e.into()),
                }
            },
        }
    }
}

/// Simulated pretraining; `on_episode` sees every episode's stats.
pub fn pretrain(cfg: &TrainConfig, mut on_episode: impl FnMut(&EpisodeStats, &Trainer)) -> Result<Trainer, TrainError> {
    let mut trainer = Trainer::new(&cfg.sim, cfg.sac.clone(), cfg.reward, cfg.beta, cfg.replay_capacity, cfg.seed)?;
    let mut layouts = LayoutSource::new(&cfg.gen, cfg.layout_seed_base, cfg.pool_size, cfg.seed)?;
    for i in 0..cfg.episodes {
        let layout = layouts.next_layout()?;
        let (stats, _) = trainer.episode(i, &layout, &cfg.sim)?;
        on_episode(&stats, &trainer);
    }
    Ok(trainer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    /// Success of each training episode, in order.
    pub successes: Vec<bool>,
    pub stopped_at: usize,
    pub stats: Vec<EpisodeStats>,
}

/// Online finetuning on one layout until `rule` stops it.
pub fn finetune(trainer: &mut Trainer, layout: &LayoutSpec, sim: &SimConfig, rule: FinetuneRule) -> Result<FinetuneRecord, TrainError> {
    let mut successes = Vec::new();
    let mut stats = Vec::new();
    while !rule.should_stop(&successes) {
        let (s, outcome) = trainer.episode(successes.len(), layout, sim)?;
        successes.push(outcome.success());
        stats.push(s);
    }
    Ok(FinetuneRecord { stopped_at: successes.len(), successes, stats })
}

/// `count` successful scripted demonstrations, cycling through `layouts`; gives up
/// after `3 * count` attempts.
pub fn collect_demonstrations(layouts: &[LayoutSpec], sim: &SimConfig, count: usize, seed: u64) -> Result<Vec<EpisodeLog>, TrainError> {
    if layouts.is_empty() {
        return Err(TrainError::InvalidArgument("no demonstration layouts"));
    }
    let meta = RolloutMeta { controller: Controller::Expert, record_true_pose: true, ..RolloutMeta::default() };
    let mut logs = Vec::with_capacity(count);
    let mut planners: BTreeMap<usize, ExpertPlanner> = BTreeMap::new();
    let mut attempt = 0usize;
    while logs.len() < count {
        if attempt >= 3 * count {
            return Err(TrainError::InvalidArgument("expert failed too often to collect demonstrations"));
        }
        let li = attempt % layouts.len();
        let layout = &layouts[li];
        let planner = planners.entry(li).or_insert_with(|| ExpertPlanner::new(layout, sim.robot_radius, 0.1)).clone();
        let mut d = ExpertDriver { planner };
        let (log, outcome) = rollout(layout, sim, mix64(seed ^ attempt as u64), &mut d, &meta)?;
        if outcome.success() {
            logs.push(log);
        }
        attempt += 1;
    }
    Ok(logs)
}

/// Behavior cloning of wheel commands end to end; returns a direct-action policy.
pub fn bc_train(demos: &[EpisodeLog], cfg: &BcConfig, seed: u64) -> Result<(PolicySnapshot, Vec<f64>), TrainError> {
    let first = demos.first().ok_or(TrainError::InvalidArgument("no demonstrations"))?;
    let obs_spec = first.header.obs_spec;
    let mut rng = CounterRng::new(seed);
    let actor = build_mlp(obs_spec.input_len(), &cfg.hidden, 2 * ActionSpec::DIM, Activation::Relu, &mut rng.split(1));
    let mut bc = BcTrainer::new(actor, cfg.lr);
    for log in demos {
        if log.header.obs_spec != obs_spec {
            return Err(LearnerError::MalformedLog("mixed observation specs".into()).into());
        }
        let traj = assign_rewards(log, &RewardConfig::default())?;
        for s in &traj.steps[..traj.steps.len().saturating_sub(1)] {
            bc.add(&s.obs, &s.command)?;
        }
    }
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        losses.push(bc.epoch(cfg.batch_size, &mut rng)?);
    }
    let snap = PolicySnapshot::new(1, obs_spec, ActionSpec::Direct, bc.actor).map_err(LearnerError::from)?;
    Ok((snap, losses))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub pool_size: usize,
    pub seed: u64,
    pub report: MetricsReport,
}

/// Trains one policy per (pool size, seed) at the same episode budget, each pool
/// drawn from its own seed base, and evaluates all on `suite`.
pub fn ablation_layout_count(
    pool_sizes: &[usize],
    base: &TrainConfig,
    seeds: &[u64],
    suite: &[LayoutSpec],
    trials: usize,
    eval_seed: u64,
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>, TrainError> {
    if pool_sizes.is_empty() || pool_sizes.contains(&0) {
        return Err(TrainError::InvalidArgument("pool sizes must be positive"));
    }
    if pool_sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(TrainError::InvalidArgument("pool sizes must be ascending"));
    }
    let mut rows = Vec::new();
    for (k, &size) in pool_sizes.iter().enumerate() {
        for &seed in seeds {
            let cfg = TrainConfig {
                pool_size: Some(size),
                layout_seed_base: base.layout_seed_base + 1_000_000 * (k as u64 + 1),
                seed,
                ..base.clone()
            };
            let trainer = pretrain(&cfg, |_, _| {})?;
            let snap = trainer.snapshot(1)?;
            let report = run_suite(&snap, suite, trials, &cfg.sim, eval_seed)?;
            let row = AblationRow { pool_size: size, seed, report };
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Median SR per pool size, in pool order.
pub fn median_sr_by_pool(rows: &[AblationRow]) -> Vec<(usize, f64)> {
    let mut by: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows {
        by.entry(r.pool_size).or_default().push(r.report.sr);
    }
    by.into_iter()
        .map(|(k, mut v)| {
            v.sort_by(f64::total_cmp);
            let m = if v.len() % 2 == 1 { v[v.len() / 2] } else { 0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2]) };
            (k, m)
        })
        .collect()
}

/// Whether `values` never drop by more than `slack` from one entry to the next.
pub fn non_decreasing_within(values: &[f64], slack: f64) -> bool {
    values.windows(2).all(|w| w[1] + slack >= w[0])
}

/// Suite configs used for evaluation.
pub mod suites {
    use super::*;
    use crate::env::{Range, StartHeading};

    /// One room, no obstacles, goal in plain view.
    pub fn empty_room() -> GenConfig {
        GenConfig {
            room_count_range: Range { lo: 1, hi: 1 },
            room_size_range: Range { lo: 4.5, hi: 6.0 },
            obstacle_count_range: Range { lo: 0, hi: 0 },
            start_heading: StartHeading::FaceGoal,
            min_start_goal_distance: 2.5,
            ..GenConfig::default()
        }
    }

    /// One room with a single obstacle astride the start-goal segment.
    pub fn blocked_line() -> GenConfig {
        GenConfig {
            room_count_range: Range { lo: 1, hi: 1 },
            room_size_range: Range { lo: 5.0, hi: 6.0 },
            obstacle_count_range: Range { lo: 0, hi: 0 },
            blocking_obstacle_prob: 1.0,
            start_heading: StartHeading::FaceGoal,
            min_start_goal_distance: 3.0,
            ..GenConfig::default()
        }
    }

    /// One or two rooms with up to two small obstacles.
    pub fn light_clutter() -> GenConfig {
        GenConfig {
            room_count_range: Range { lo: 1, hi: 2 },
            room_size_range: Range { lo: 4.0, hi: 6.0 },
            obstacle_count_range: Range { lo: 0, hi: 2 },
            obstacle_size_range: Range { lo: 0.2, hi: 0.4 },
            ..GenConfig::default()
        }
    }

    /// Training mix for pretraining: one or two rooms, scattered obstacles, and a
    /// blocking obstacle in most layouts.
    pub fn pretraining() -> GenConfig {
        GenConfig {
            room_count_range: Range { lo: 1, hi: 2 },
            room_size_range: Range { lo: 4.0, hi: 6.0 },
            obstacle_count_range: Range { lo: 0, hi: 2 },
            blocking_obstacle_prob: 0.7,
            ..GenConfig::default()
        }
    }

    pub fn layouts(gen: &GenConfig, n: usize, seed: u64) -> Result<Vec<LayoutSpec>, EnvError> {
        crate::env::sample_eval_suite(gen, n, seed)
    }
}
