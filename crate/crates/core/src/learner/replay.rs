use alloc::vec::Vec;

use super::{LearnerError, Trajectory};
use crate::rng::CounterRng;

const SPILL_MAGIC: &[u8; 4] = b"FNRB";
const SPILL_VERSION: u32 = 1;

/// One stored transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f32>,
    pub action: Vec<f32>,
    pub reward: f32,
    pub next_obs: Vec<f32>,
    pub done: bool,
}

/// A sampled minibatch in row-major struct-of-arrays layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub len: usize,
    pub obs: Vec<f32>,
    pub action: Vec<f32>,
    pub reward: Vec<f32>,
    pub next_obs: Vec<f32>,
    /// 1.0 on transitions into a terminal step.
    pub done: Vec<f32>,
}

/// Fixed-capacity FIFO ring of transitions with uniform sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    obs_dim: usize,
    act_dim: usize,
    capacity: usize,
    len: usize,
    /// Slot the next push writes.
    head: usize,
    pushed: u64,
    obs: Vec<f32>,
    action: Vec<f32>,
    reward: Vec<f32>,
    next_obs: Vec<f32>,
    done: Vec<f32>,
}

impl ReplayBuffer {
    pub const DEFAULT_CAPACITY: usize = 1_000_000;

    pub fn new(obs_dim: usize, act_dim: usize, capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            obs_dim,
            act_dim,
            capacity,
            len: 0,
            head: 0,
            pushed: 0,
            obs: Vec::new(),
            action: Vec::new(),
            reward: Vec::new(),
            next_obs: Vec::new(),
            done: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    /// Transitions pushed over the buffer's lifetime, evicted ones included.
    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push_transition(&mut self, obs: &[f32], action: &[f32], reward: f32, next_obs: &[f32], done: bool) {
        assert_eq!(obs.len(), self.obs_dim);
        assert_eq!(next_obs.len(), self.obs_dim);
        assert_eq!(action.len(), self.act_dim);
        let (od, ad) = (self.obs_dim, self.act_dim);
        if self.len < self.capacity {
            self.obs.extend_from_slice(obs);
            self.action.extend_from_slice(action);
            self.reward.push(reward);
            self.next_obs.extend_from_slice(next_obs);
            self.done.push(if done { 1.0 } else { 0.0 });
            self.len += 1;
        } else {
            let i = self.head;
            self.obs[i * od..(i + 1) * od].copy_from_slice(obs);
            self.action[i * ad..(i + 1) * ad].copy_from_slice(action);
            self.reward[i] = reward;
            self.next_obs[i * od..(i + 1) * od].copy_from_slice(next_obs);
            self.done[i] = if done { 1.0 } else { 0.0 };
        }
        self.head = (self.head + 1) % self.capacity;
        self.pushed += 1;
    }

    /// Appends the `N - 1` transitions of an `N`-step trajectory; returns the count.
    pub fn push_trajectory(&mut self, traj: &Trajectory) -> Result<usize, LearnerError> {
        let steps = &traj.steps;
        for s in steps {
            if s.obs.len() != self.obs_dim {
                return Err(LearnerError::ShapeMismatch { expected: self.obs_dim, got: s.obs.len() });
            }
        }
        if self.act_dim != 2 {
            return Err(LearnerError::ShapeMismatch { expected: 2, got: self.act_dim });
        }
        let n = steps.len().saturating_sub(1);
        for k in 0..n {
            let (s, next) = (&steps[k], &steps[k + 1]);
            let done = k + 1 == steps.len() - 1;
            self.push_transition(&s.obs, &s.action, next.reward, &next.obs, done);
        }
        Ok(n)
    }

    /// Oldest-first view of the stored transitions.
    pub fn iter(&self) -> impl Iterator<Item = Transition> + '_ {
        let start = if self.len < self.capacity { 0 } else { self.head };
        (0..self.len).map(move |k| self.get((start + k) % self.capacity))
    }

    fn get(&self, i: usize) -> Transition {
        let (od, ad) = (self.obs_dim, self.act_dim);
        Transition {
            obs: self.obs[i * od..(i + 1) * od].to_vec(),
            action: self.action[i * ad..(i + 1) * ad].to_vec(),
            reward: self.reward[i],
            next_obs: self.next_obs[i * od..(i + 1) * od].to_vec(),
            done: self.done[i] != 0.0,
        }
    }

    /// Uniform sample with replacement.
    pub fn sample(&self, batch: usize, rng: &mut CounterRng) -> Result<Batch, LearnerError> {
        if self.len == 0 {
            return Err(LearnerError::EmptyBuffer);
        }
        let (od, ad) = (self.obs_dim, self.act_dim);
        let mut out = Batch {
            len: batch,
            obs: Vec::with_capacity(batch * od),
            action: Vec::with_capacity(batch * ad),
            reward: Vec::with_capacity(batch),
            next_obs: Vec::with_capacity(batch * od),
            done: Vec::with_capacity(batch),
        };
        for _ in 0..batch {
            let i = rng.below(self.len);
            out.obs.extend_from_slice(&self.obs[i * od..(i + 1) * od]);
            out.action.extend_from_slice(&self.action[i * ad..(i + 1) * ad]);
            out.reward.push(self.reward[i]);
            out.next_obs.extend_from_slice(&self.next_obs[i * od..(i + 1) * od]);
            out.done.push(self.done[i]);
        }
        Ok(out)
    }

    /// Binary spill: magic, version, dims, capacity, len, head, pushed, then the
    /// stored records as little-endian f32 in slot order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + self.len * (2 * self.obs_dim + self.act_dim + 2) * 4);
        out.extend_from_slice(SPILL_MAGIC);
        out.extend_from_slice(&SPILL_VERSION.to_le_bytes());
        for v in [self.obs_dim, self.act_dim, self.capacity, self.len, self.head] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        out.extend_from_slice(&self.pushed.to_le_bytes());
        for arr in [&self.obs, &self.action, &self.reward, &self.next_obs, &self.done] {
            for v in arr.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LearnerError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != SPILL_MAGIC {
            return Err(LearnerError::Spill("bad magic"));
        }
        if r.u32()? != SPILL_VERSION {
            return Err(LearnerError::Spill("unsupported version"));
        }
        let obs_dim = r.u64()? as usize;
        let act_dim = r.u64()? as usize;
        let capacity = r.u64()? as usize;
        let len = r.u64()? as usize;
        let head = r.u64()? as usize;
        let pushed = r.u64()?;
        if capacity == 0 || len > capacity || head >= capacity {
            return Err(LearnerError::Spill("inconsistent header"));
        }
        let obs = r.f32s(len * obs_dim)?;
        let action = r.f32s(len * act_dim)?;
        let reward = r.f32s(len)?;
        let next_obs = r.f32s(len * obs_dim)?;
        let done = r.f32s(len)?;
        if r.pos != bytes.len() {
            return Err(LearnerError::Spill("trailing bytes"));
        }
        Ok(Self { obs_dim, act_dim, capacity, len, head, pushed, obs, action, reward, next_obs, done })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], LearnerError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(LearnerError::Spill("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, LearnerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, LearnerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, LearnerError> {
        let raw = self.take(n.checked_mul(4).ok_or(LearnerError::Spill("truncated"))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}
