use serde::{Deserialize, Serialize};

use super::LearnerError;
use crate::policy::{ActionSpec, Mlp, ObsSpec, PolicySnapshot};

/// Assigns increasing policy ids. Publishing unchanged weights returns the previous
/// snapshot, so retries are idempotent by content hash.
#[derive(Debug, Clone, Default)]
pub struct Publisher {
    last: Option<PolicySnapshot>,
}

impl Publisher {
    pub fn new() -> Self {
        Self::default()
    }

    /// Continues numbering after an already-published snapshot.
    pub fn resume(last: PolicySnapshot) -> Self {
        Self { last: Some(last) }
    }

    pub fn last(&self) -> Option<&PolicySnapshot> {
        self.last.as_ref()
    }

    pub fn publish(&mut self, obs_spec: ObsSpec, action_spec: ActionSpec, actor: &Mlp) -> Result<PolicySnapshot, LearnerError> {
        if let Some(prev) = &self.last {
            if prev.obs_spec == obs_spec && prev.action_spec == action_spec && prev.actor == *actor {
                return Ok(prev.clone());
            }
        }
        let id = self.last.as_ref().map_or(1, |p| p.policy_id + 1);
        let snap = PolicySnapshot::new(id, obs_spec, action_spec, actor.clone())?;
        self.last = Some(snap.clone());
        Ok(snap)
    }
}

/// Stop when the last `window` episodes all succeeded or after `max_episodes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneRule {
    pub window: usize,
    pub max_episodes: usize,
}

impl Default for FinetuneRule {
    fn default() -> Self {
        Self { window: 10, max_episodes: 200 }
    }
}

impl FinetuneRule {
    /// Whether training stops after the episodes in `successes`.
    pub fn should_stop(&self, successes: &[bool]) -> bool {
        let n = successes.len();
        n >= self.max_episodes || (n >= self.window && successes[n - self.window..].iter().all(|&s| s))
    }

    /// 1-based episode at which an outcome sequence stops, if it does.
    pub fn stop_episode(&self, successes: &[bool]) -> Option<usize> {
        let mut run = 0;
        for (i, &s) in successes.iter().enumerate() {
            run = if s { run + 1 } else { 0 };
            if run >= self.window || i + 1 >= self.max_episodes {
                return Some(i + 1);
            }
        }
        None
    }
}
