#![allow(dead_code)]

pub mod crash_harness;

use fleetnav::api::{CreateRequest, Role};
use fleetnav::client::FleetClient;
use fleetnav::server::{ServerConfig, ServerHandle};
use fleetnav::store::{Store, StoreConfig};
use fleetnav_core::env::generate_layout;
use fleetnav_core::episode::{Controller, EpisodeLog};
use fleetnav_core::policy::{ActionSpec, ObsSpec, PolicySnapshot};
use fleetnav_core::protocol::{RecordingRequest, TaskDescriptor};
use fleetnav_core::rng::CounterRng;
use fleetnav_core::rollout::{rollout, RolloutMeta, UnicycleDriver};
use fleetnav_core::sim::SimConfig;
use fleetnav_core::train::suites;

pub const PASSWORD: &str = "correct horse";

/// Small-network snapshot that parses and hashes like a real one.
pub fn snapshot(id: u64, seed: u64) -> PolicySnapshot {
    let sim = SimConfig::default();
    let obs = ObsSpec::from_sim(&sim);
    let actor = fleetnav_core::learner::sac::build_actor(obs.input_len(), 2, &[8], &mut CounterRng::new(seed));
    PolicySnapshot::new(id, obs, ActionSpec::Residual { beta: 0.5 }, actor).unwrap()
}

pub fn task(seed: u64) -> TaskDescriptor {
    TaskDescriptor { gen_config: Some(suites::empty_room()), ..TaskDescriptor::policy_episode(seed) }
}

/// A valid log for `req`, driven by the unicycle controller in a noiseless sim.
pub fn episode_for(req: &RecordingRequest, worker_id: &str) -> EpisodeLog {
    let gen = req.task.gen_config.clone().unwrap_or_else(suites::empty_room);
    let layout = generate_layout(&gen, req.task.layout_seed).unwrap();
    let meta = RolloutMeta {
        worker_id: worker_id.into(),
        request_id: req.request_id.clone(),
        policy_id: req.policy_id,
        controller: Controller::Policy,
        start_time_ms: 0,
        record_true_pose: true,
    };
    rollout(&layout, &SimConfig::default().noiseless(), 7, &mut UnicycleDriver, &meta).unwrap().0
}

pub fn open_store(dir: &std::path::Path) -> Store {
    Store::open(dir, StoreConfig::default()).unwrap()
}

pub struct Fleet {
    pub server: ServerHandle,
    pub dir: tempfile::TempDir,
}

impl Fleet {
    pub fn start(workers: usize) -> Self {
        Self::start_with(workers, |_| {})
    }

    pub fn start_with(workers: usize, tweak: impl FnOnce(&mut ServerConfig)) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ServerConfig::new(dir.path().join("server"));
        tweak(&mut cfg);
        let server = ServerHandle::spawn(cfg, "127.0.0.1:0".parse().unwrap()).unwrap();
        {
            let mut s = server.state.store();
            s.add_account("learner", PASSWORD, Role::Learner).unwrap();
            for i in 0..workers {
                s.add_account(&format!("w{i}"), PASSWORD, Role::Worker).unwrap();
            }
        }
        Self { server, dir }
    }

    pub fn client(&self, user: &str) -> FleetClient {
        let mut c = FleetClient::new(&self.server.url()).unwrap();
        c.login(user, PASSWORD).unwrap();
        c
    }

    /// Publishes a policy and posts `n` policy requests on empty-room layouts.
    pub fn seed_requests(&self, n: usize) -> Vec<RecordingRequest> {
        let learner = self.client("learner");
        learner.publish_policy(snapshot(1, 1).to_bytes()).unwrap();
        (0..n)
            .map(|i| learner.create_request(&CreateRequest { task: task(100 + i as u64), policy_id: None, permitted_workers: vec![] }).unwrap())
            .collect()
    }
}
