//! Value-based learning: a small Q-network trained from replay with a
//! periodically synchronised target network and ε-greedy exploration.

pub mod checkpoint;
pub mod mlp;
pub mod replay;
pub mod train;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::seeding;
use crate::skills::cadence::{SkillAgent, Transition};
use crate::skills::SkillId;
use crate::state::{NormMode, RunningStats};

pub use checkpoint::Checkpoint;
pub use mlp::{clip_grad_norm, huber_loss_grad, loss_and_grad, Adam, Mlp};
pub use replay::{Batch, ReplayBuffer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub gamma: f64,
    /// Gradient updates happen every `train_freq` decision steps.
    pub train_freq: u64,
    pub gradient_steps: u32,
    /// Hard target sync period, in decision steps.
    pub target_update: u64,
    pub learning_starts: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of the budget over which ε decays linearly.
    pub eps_fraction: f64,
    pub hidden: Vec<usize>,
    /// Fixed replay capacity; `None` means a third of the budget, rounded up.
    pub buffer_size: Option<usize>,
    pub max_grad_norm: f64,
    pub eval_every: u64,
    pub eval_episodes: u32,
    pub eval_eps: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            batch_size: 256,
            gamma: 0.99,
            train_freq: 4,
            gradient_steps: 1,
            target_update: 10_000,
            learning_starts: 1_000,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_fraction: 0.1,
            hidden: vec![64, 64],
            buffer_size: None,
            max_grad_norm: 10.0,
            eval_every: 1_000,
            eval_episodes: 5,
            eval_eps: 0.05,
        }
    }
}

pub const E2E_BUFFER: usize = 100_000;

impl DqnConfig {
    pub const KEYS: &'static [&'static str] = &[
        "dqn.lr",
        "dqn.batch_size",
        "dqn.gamma",
        "dqn.train_freq",
        "dqn.gradient_steps",
        "dqn.target_update",
        "dqn.learning_starts",
        "dqn.eps_start",
        "dqn.eps_end",
        "dqn.eps_fraction",
        "dqn.hidden",
        "dqn.buffer_size",
        "dqn.max_grad_norm",
        "dqn.eval_every",
        "dqn.eval_episodes",
        "dqn.eval_eps",
    ];

    pub fn for_skill(skill: SkillId) -> Self {
        let mut c = Self::default();
        if skill == SkillId::E2e {
            c.buffer_size = Some(E2E_BUFFER);
        }
        c
    }

    pub fn buffer_capacity(&self, budget: u64) -> usize {
        self.buffer_size.unwrap_or_else(|| budget.div_ceil(3).max(1) as usize)
    }

    pub fn apply(&mut self, kv: &KvConfig) -> Result<()> {
        macro_rules! read {
            ($key:literal, $field:ident, f64) => {
                if let Some(v) = kv.get_f64($key)? {
                    self.$field = v;
                }
            };
            ($key:literal, $field:ident, $t:ty) => {
                if let Some(v) = kv.get_u64($key)? {
                    self.$field = v as $t;
                }
            };
        }
        read!("dqn.lr", lr, f64);
        read!("dqn.batch_size", batch_size, usize);
        read!("dqn.gamma", gamma, f64);
        read!("dqn.train_freq", train_freq, u64);
        read!("dqn.gradient_steps", gradient_steps, u32);
        read!("dqn.target_update", target_update, u64);
        read!("dqn.learning_starts", learning_starts, u64);
        read!("dqn.eps_start", eps_start, f64);
        read!("dqn.eps_end", eps_end, f64);
        read!("dqn.eps_fraction", eps_fraction, f64);
        read!("dqn.max_grad_norm", max_grad_norm, f64);
        read!("dqn.eval_every", eval_every, u64);
        read!("dqn.eval_episodes", eval_episodes, u32);
        read!("dqn.eval_eps", eval_eps, f64);
        if let Some(v) = kv.get_u64("dqn.buffer_size")? {
            self.buffer_size = Some(v as usize);
        }
        if let Some(h) = kv.get_str("dqn.hidden") {
            self.hidden = h
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::config(format!("dqn.hidden: cannot parse `{h}`")))?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.lr > 0.0
            && self.batch_size > 0
            && self.train_freq > 0
            && self.gradient_steps > 0
            && self.target_update > 0
            && self.max_grad_norm > 0.0
            && self.eval_every > 0
            && self.hidden.iter().all(|&h| h > 0)
            && self.buffer_size != Some(0);
        if !positive {
            return Err(Error::config("dqn settings must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("dqn.gamma must lie in [0, 1]"));
        }
        for (name, e) in [("eps_start", self.eps_start), ("eps_end", self.eps_end), ("eval_eps", self.eval_eps)] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::config(format!("dqn.{name} must lie in [0, 1]")));
            }
        }
        if !(self.eps_fraction > 0.0 && self.eps_fraction <= 1.0) {
            return Err(Error::config("dqn.eps_fraction must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let hidden: Vec<String> = self.hidden.iter().map(usize::to_string).collect();
        let mut out = vec![
            ("dqn.lr", self.lr.to_string()),
            ("dqn.batch_size", self.batch_size.to_string()),
            ("dqn.gamma", self.gamma.to_string()),
            ("dqn.train_freq", self.train_freq.to_string()),
            ("dqn.gradient_steps", self.gradient_steps.to_string()),
            ("dqn.target_update", self.target_update.to_string()),
            ("dqn.learning_starts", self.learning_starts.to_string()),
            ("dqn.eps_start", self.eps_start.to_string()),
            ("dqn.eps_end", self.eps_end.to_string()),
            ("dqn.eps_fraction", self.eps_fraction.to_string()),
            ("dqn.hidden", hidden.join(",")),
            ("dqn.max_grad_norm", self.max_grad_norm.to_string()),
            ("dqn.eval_every", self.eval_every.to_string()),
            ("dqn.eval_episodes", self.eval_episodes.to_string()),
            ("dqn.eval_eps", self.eval_eps.to_string()),
        ];
        if let Some(b) = self.buffer_size {
            out.push(("dqn.buffer_size", b.to_string()));
        }
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn layer_sizes(&self, skill: SkillId) -> Vec<usize> {
        let mut s = vec![skill.obs_dim()];
        s.extend(&self.hidden);
        s.push(skill.action_count());
        s
    }
}

/// Hex sha256 of a canonical `key = value` rendering.
pub fn config_hash(pairs: &[(String, String)]) -> String {
    let mut sorted: Vec<_> = pairs.to_vec();
    sorted.sort();
    let mut h = Sha256::new();
    for (k, v) in sorted {
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(v.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Linear decay from `start` to `end` over the first `fraction` of `budget` steps.
pub fn epsilon_at(step: u64, budget: u64, start: f64, end: f64, fraction: f64) -> f64 {
    let span = (fraction * budget as f64).max(1.0);
    let progress = step as f64 / span;
    if progress >= 1.0 {
        return end;
    }
    start + (end - start) * progress
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Uniform action with probability `eps`, otherwise the greedy one. `obs` must
/// already be normalized. With `eps == 0` no randomness is consumed.
pub fn act_epsilon_greedy<R: Rng>(net: &Mlp, obs: &[f64], eps: f64, rng: &mut R) -> Result<usize> {
    if eps > 0.0 && rng.gen::<f64>() < eps {
        return Ok(rng.gen_range(0..net.output_dim()));
    }
    Ok(argmax(&net.forward(obs)?))
}

/// `y = r + γ (1 − done) max_a Q_target(s', a)`; `next_obs` is normalized, row-major.
pub fn td_targets(rewards: &[f64], next_obs: &[f64], dones: &[bool], target: &Mlp, gamma: f64) -> Result<Vec<f64>> {
    let n = rewards.len();
    if dones.len() != n {
        return Err(Error::usage("rewards and done flags differ in length"));
    }
    let q = target.forward_batch(next_obs, n)?;
    let k = target.output_dim();
    Ok(rewards
        .iter()
        .zip(dones)
        .zip(q.outputs().chunks_exact(k))
        .map(|((&r, &d), row)| if d { r } else { r + gamma * row.iter().copied().fold(f64::NEG_INFINITY, f64::max) })
        .collect())
}

/// The learning agent for one skill.
#[derive(Debug, Clone)]
pub struct DqnLearner {
    skill: SkillId,
    config: DqnConfig,
    budget: u64,
    online: Mlp,
    target: Mlp,
    adam: Adam,
    replay: ReplayBuffer,
    stats: RunningStats,
    rng: ChaCha8Rng,
    steps: u64,
    updates: u64,
    eps_start: f64,
    last_loss: f64,
}

impl DqnLearner {
    pub fn new(skill: SkillId, config: DqnConfig, budget: u64, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = seeding::stream(seed, &format!("init/{skill}"));
        let online = Mlp::new(&config.layer_sizes(skill), &mut init)?;
        let replay = ReplayBuffer::new(config.buffer_capacity(budget), skill.obs_dim())?;
        Ok(Self {
            skill,
            budget,
            target: online.clone(),
            adam: Adam::new(online.params().len(), config.lr),
            online,
            replay,
            stats: RunningStats::new(skill.obs_dim()),
            rng: seeding::stream(seed, &format!("learn/{skill}")),
            steps: 0,
            updates: 0,
            eps_start: config.eps_start,
            last_loss: 0.0,
            config,
        })
    }

    /// Continues training from a checkpoint with a fresh replay buffer and
    /// the exploration schedule restarted at `eps_start`.
    pub fn warm_start(ckpt: &Checkpoint, config: DqnConfig, budget: u64, seed: u64, eps_start: f64) -> Result<Self> {
        let mut l = Self::new(ckpt.skill, config, budget, seed)?;
        if ckpt.net.sizes() != l.online.sizes() {
            return Err(Error::Integrity(format!(
                "checkpoint layer sizes {:?} do not match the configured {:?}",
                ckpt.net.sizes(),
                l.online.sizes()
            )));
        }
        l.online = ckpt.net.clone();
        l.target = ckpt.net.clone();
        l.stats = ckpt.stats.clone();
        if let Some(adam) = &ckpt.adam {
            l.adam = adam.clone();
            l.adam.lr = l.config.lr;
        }
        l.eps_start = eps_start;
        Ok(l)
    }

    pub fn skill(&self) -> SkillId {
        self.skill
    }

    pub fn config(&self) -> &DqnConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn last_loss(&self) -> f64 {
        self.last_loss
    }

    pub fn online(&self) -> &Mlp {
        &self.online
    }

    pub fn target(&self) -> &Mlp {
        &self.target
    }

    pub fn stats(&self) -> &RunningStats {
        &self.stats
    }

    pub fn adam(&self) -> &Adam {
        &self.adam
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn epsilon(&self) -> f64 {
        epsilon_at(self.steps, self.budget, self.eps_start, self.config.eps_end, self.config.eps_fraction)
    }

    /// Read-only copy of the current policy for evaluation.
    pub fn snapshot(&self, eps: f64, seed: u64) -> GreedyPolicy {
        GreedyPolicy::new(self.skill, self.online.clone(), self.stats.clone(), eps, seed)
    }

    fn train_step(&mut self) -> Result<()> {
        let mut b = self.replay.sample(self.config.batch_size, &mut self.rng);
        let dim = self.skill.obs_dim();
        for row in b.obs.chunks_exact_mut(dim).chain(b.next_obs.chunks_exact_mut(dim)) {
            self.stats.apply(row)?;
        }
        let y = td_targets(&b.rewards, &b.next_obs, &b.dones, &self.target, self.config.gamma)?;
        let (loss, mut grads) = loss_and_grad(&self.online, &b.obs, &b.actions, &y)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("{} loss became {loss} after {} updates", self.skill, self.updates)));
        }
        clip_grad_norm(&mut grads, self.config.max_grad_norm);
        self.adam.step(self.online.params_mut(), &grads);
        if !self.online.all_finite() {
            return Err(Error::Numerical(format!(
                "{} parameters became non-finite after {} updates",
                self.skill, self.updates
            )));
        }
        self.updates += 1;
        self.last_loss = loss;
        Ok(())
    }
}

impl SkillAgent for DqnLearner {
    fn select(&mut self, skill: SkillId, obs: &[f64]) -> Result<usize> {
        check_skill(self.skill, skill)?;
        let x = self.stats.normalize(obs, NormMode::Train)?;
        let eps = self.epsilon();
        act_epsilon_greedy(&self.online, &x, eps, &mut self.rng)
    }

    fn observe(&mut self, skill: SkillId, t: &Transition) -> Result<()> {
        check_skill(self.skill, skill)?;
        if !t.reward.is_finite() {
            return Err(Error::Numerical(format!("{skill} received reward {}", t.reward)));
        }
        self.replay.push(&t.obs, t.action, t.reward, &t.next_obs, t.done)?;
        self.steps += 1;
        if self.steps > self.config.learning_starts && self.steps.is_multiple_of(self.config.train_freq) {
            for _ in 0..self.config.gradient_steps {
                self.train_step()?;
            }
        }
        if self.steps.is_multiple_of(self.config.target_update) {
            self.target = self.online.clone();
        }
        Ok(())
    }
}

fn check_skill(own: SkillId, asked: SkillId) -> Result<()> {
    if own != asked {
        return Err(Error::usage(format!("{own} agent asked to act for {asked}")));
    }
    Ok(())
}

/// A fixed network acting ε-greedily with frozen normalization.
#[derive(Debug, Clone)]
pub struct GreedyPolicy {
    skill: SkillId,
    net: Mlp,
    stats: RunningStats,
    eps: f64,
    rng: ChaCha8Rng,
}

impl GreedyPolicy {
    pub fn new(skill: SkillId, net: Mlp, stats: RunningStats, eps: f64, seed: u64) -> Self {
        Self { skill, net, stats, eps, rng: seeding::stream(seed, &format!("act/{skill}")) }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, eps: f64, seed: u64) -> Self {
        Self::new(ckpt.skill, ckpt.net.clone(), ckpt.stats.clone(), eps, seed)
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    /// Restarts the exploration stream.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = seeding::stream(seed, &format!("act/{}", self.skill));
    }

    pub fn stats(&self) -> &RunningStats {
        &self.stats
    }

    /// Q-values for a raw observation.
    pub fn q_values(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let mut x = obs.to_vec();
        self.stats.apply(&mut x)?;
        self.net.forward(&x)
    }
}

impl SkillAgent for GreedyPolicy {
    fn select(&mut self, skill: SkillId, obs: &[f64]) -> Result<usize> {
        check_skill(self.skill, skill)?;
        let mut x = obs.to_vec();
        self.stats.apply(&mut x)?;
        act_epsilon_greedy(&self.net, &x, self.eps, &mut self.rng)
    }
}

/// Uniform over the skill's action set.
#[derive(Debug, Clone)]
pub struct RandomAgent {
    rng: ChaCha8Rng,
}

impl RandomAgent {
    pub fn new(seed: u64) -> Self {
        Self { rng: seeding::stream(seed, "random-policy") }
    }

    pub fn reseed(&mut self, seed: u64) {
        *self = Self::new(seed);
    }
}

impl SkillAgent for RandomAgent {
    fn select(&mut self, skill: SkillId, _obs: &[f64]) -> Result<usize> {
        Ok(self.rng.gen_range(0..skill.action_count()))
    }
}
