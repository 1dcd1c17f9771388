//! Fixed-capacity FIFO replay storage.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    obs: Vec<f64>,
    next_obs: Vec<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
    /// Slot the next insert overwrites.
    head: usize,
    len: usize,
}

/// A sampled minibatch; observations are row-major `len x obs_dim`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub obs: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub dones: Vec<bool>,
}

/// (obs, action, reward, next_obs, done) borrowed from the buffer.
pub type StoredTransition<'a> = (&'a [f64], usize, f64, &'a [f64], bool);

impl Batch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize) -> Result<Self> {
        if capacity == 0 || obs_dim == 0 {
            return Err(Error::usage("replay capacity and observation size must be positive"));
        }
        Ok(Self {
            capacity,
            obs_dim,
            obs: vec![0.0; capacity * obs_dim],
            next_obs: vec![0.0; capacity * obs_dim],
            actions: vec![0; capacity],
            rewards: vec![0.0; capacity],
            dones: vec![false; capacity],
            head: 0,
            len: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, obs: &[f64], action: usize, reward: f64, next_obs: &[f64], done: bool) -> Result<()> {
        if obs.len() != self.obs_dim || next_obs.len() != self.obs_dim {
            return Err(Error::usage(format!(
                "transition observation has {} values, buffer expects {}",
                obs.len(),
                self.obs_dim
            )));
        }
        let i = self.head;
        let d = self.obs_dim;
        self.obs[i * d..(i + 1) * d].copy_from_slice(obs);
        self.next_obs[i * d..(i + 1) * d].copy_from_slice(next_obs);
        self.actions[i] = action;
        self.rewards[i] = reward;
        self.dones[i] = done;
        self.head = (self.head + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Ok(())
    }

    /// Storage slot of the `k`-th oldest stored transition.
    fn slot(&self, k: usize) -> usize {
        (self.head + self.capacity - self.len + k) % self.capacity
    }

    /// Transition `k` counted from the oldest.
    pub fn get(&self, k: usize) -> Option<StoredTransition<'_>> {
        if k >= self.len {
            return None;
        }
        let i = self.slot(k);
        let d = self.obs_dim;
        Some((
            &self.obs[i * d..(i + 1) * d],
            self.actions[i],
            self.rewards[i],
            &self.next_obs[i * d..(i + 1) * d],
            self.dones[i],
        ))
    }

    /// Uniform sample of `n` distinct transitions (all of them if fewer are stored).
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Batch {
        let n = n.min(self.len);
        let d = self.obs_dim;
        let mut b = Batch {
            obs: Vec::with_capacity(n * d),
            actions: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            next_obs: Vec::with_capacity(n * d),
            dones: Vec::with_capacity(n),
        };
        for k in index::sample(rng, self.len, n) {
            let (o, a, r, no, done) = self.get(k).expect("index within size");
            b.obs.extend_from_slice(o);
            b.actions.push(a);
            b.rewards.push(r);
            b.next_obs.extend_from_slice(no);
            b.dones.push(done);
        }
        b
    }
}
