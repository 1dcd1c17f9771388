//! Training loop: runs cadence episodes in which some skills learn and the
//! rest act from frozen checkpoints, are random, or stay idle.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arena::{ArenaConfig, Outcome, WorldState};
use crate::error::{Error, Result};
use crate::qlearn::{Checkpoint, DqnConfig, DqnLearner, GreedyPolicy, RandomAgent};
use crate::rewards::RewardWeights;
use crate::seeding;
use crate::skills::cadence::{run_episode, EpisodeResult, EpisodeSpec, SkillAgent, Transition};
use crate::skills::SkillId;
use crate::summary::mean_ci95;

/// What drives one skill slot during an episode.
#[derive(Debug, Clone)]
pub enum Slot {
    Learner(Box<DqnLearner>),
    Policy(GreedyPolicy),
    Random(RandomAgent),
    Idle,
}

impl Slot {
    pub fn is_idle(&self) -> bool {
        matches!(self, Slot::Idle)
    }

    /// Evaluation stand-in: learners become read-only snapshots.
    fn for_eval(&self, eps: f64, seed: u64) -> Slot {
        match self {
            Slot::Learner(l) => Slot::Policy(l.snapshot(eps, seed)),
            other => other.clone(),
        }
    }
}

impl SkillAgent for Slot {
    fn select(&mut self, skill: SkillId, obs: &[f64]) -> Result<usize> {
        match self {
            Slot::Learner(l) => l.select(skill, obs),
            Slot::Policy(p) => p.select(skill, obs),
            Slot::Random(r) => r.select(skill, obs),
            Slot::Idle => Ok(skill.idle_index()),
        }
    }

    fn observe(&mut self, skill: SkillId, t: &Transition) -> Result<()> {
        match self {
            Slot::Learner(l) => l.observe(skill, t),
            _ => Ok(()),
        }
    }
}

/// An ordered assignment of slots to skills.
#[derive(Debug, Clone, Default)]
pub struct Lineup {
    pub slots: Vec<(SkillId, Slot)>,
}

impl Lineup {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, skill: SkillId, slot: Slot) -> Self {
        self.set(skill, slot);
        self
    }

    pub fn set(&mut self, skill: SkillId, slot: Slot) {
        match self.slots.iter_mut().find(|(k, _)| *k == skill) {
            Some(entry) => entry.1 = slot,
            None => {
                self.slots.push((skill, slot));
                self.slots.sort_by_key(|(k, _)| *k);
            }
        }
    }

    pub fn get(&self, skill: SkillId) -> Option<&Slot> {
        self.slots.iter().find(|(k, _)| *k == skill).map(|(_, s)| s)
    }

    /// Frozen policies for every checkpoint, acting ε-greedily.
    pub fn from_checkpoints<'a>(ckpts: impl IntoIterator<Item = &'a Checkpoint>, eps: f64, seed: u64) -> Self {
        let mut l = Self::new();
        for c in ckpts {
            l.set(c.skill, Slot::Policy(GreedyPolicy::from_checkpoint(c, eps, seed)));
        }
        l
    }

    pub fn take_learner(&mut self, skill: SkillId) -> Option<DqnLearner> {
        let entry = self.slots.iter_mut().find(|(k, _)| *k == skill)?;
        match std::mem::replace(&mut entry.1, Slot::Idle) {
            Slot::Learner(l) => Some(*l),
            other => {
                entry.1 = other;
                None
            }
        }
    }

    /// Runs one episode. Idle slots are left out so they never consume queries.
    pub fn run(&mut self, world: WorldState, spec: &EpisodeSpec) -> Result<EpisodeResult> {
        let mut agents: Vec<(SkillId, &mut dyn SkillAgent)> = self
            .slots
            .iter_mut()
            .filter(|(k, s)| !s.is_idle() || *k == spec.driver)
            .map(|(k, s)| (*k, s as &mut dyn SkillAgent))
            .collect();
        run_episode(world, &mut agents, spec)
    }

    /// Restarts every action stream from `seed`, one derived stream per skill.
    pub fn reseed(&mut self, seed: u64) {
        for (k, s) in self.slots.iter_mut() {
            let sub = seeding::derive_seed(seed, k.as_str());
            match s {
                Slot::Policy(p) => p.reseed(sub),
                Slot::Random(r) => r.reseed(sub),
                Slot::Learner(_) | Slot::Idle => {}
            }
        }
    }

    /// Copy in which learners are replaced by read-only snapshots.
    pub fn for_eval(&self, eps: f64, seed: u64) -> Lineup {
        Lineup { slots: self.slots.iter().map(|(k, s)| (*k, s.for_eval(eps, seed))).collect() }
    }
}

/// One evaluation point on a learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: u64,
    pub return_mean: f64,
    pub return_ci95: f64,
    pub ep_len_mean: f64,
    pub win_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricsFormat {
    Csv,
    Json,
}

impl std::str::FromStr for MetricsFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(Error::usage(format!("unknown metrics format `{s}` (csv or json)"))),
        }
    }
}

impl MetricsFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Json => "json",
        }
    }
}

pub fn write_metrics(path: &Path, rows: &[MetricRow], format: MetricsFormat) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let bytes = match format {
        MetricsFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
            }
            if rows.is_empty() {
                w.write_record(["step", "return_mean", "return_ci95", "ep_len_mean", "win_rate"])
                    .map_err(|e| Error::Format(e.to_string()))?;
            }
            w.into_inner().map_err(|e| Error::Format(e.to_string()))?
        }
        MetricsFormat::Json => {
            let mut v = serde_json::to_vec_pretty(rows).map_err(|e| Error::Format(e.to_string()))?;
            v.push(b'\n');
            v
        }
    };
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Reads a metrics file written by [`write_metrics`], choosing the format by extension.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    if path.extension().is_some_and(|e| e == "json") {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        return serde_json::from_slice(&bytes).map_err(|e| Error::Format(e.to_string()));
    }
    read_metrics_csv(path)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{other:?}")),
    })?;
    r.deserialize().map(|row| row.map_err(|e| Error::Format(e.to_string()))).collect()
}

/// Everything a training stage needs besides its lineup.
#[derive(Debug, Clone)]
pub struct StageSpec {
    /// Skill whose decision steps count against budget and horizon, and whose
    /// return is logged.
    pub driver: SkillId,
    pub budget: u64,
    pub horizon: u32,
    /// Template for episodes; its seed is replaced per episode.
    pub arena: ArenaConfig,
    pub weights: RewardWeights,
    pub config: DqnConfig,
    pub seed: u64,
    /// Worker threads for the periodic evaluations.
    pub jobs: usize,
}

/// Outcome of one evaluation episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub index: usize,
    pub seed: u64,
    pub outcome: Outcome,
    pub ticks: u64,
    pub driver_steps: u32,
    pub returns: BTreeMap<SkillId, f64>,
    pub player_hp: f64,
    pub boss_hp: f64,
}

impl EpisodeSummary {
    pub fn won(&self) -> bool {
        self.outcome == Outcome::BossDefeated
    }
}

/// Summary of a batch of evaluation episodes of one lineup.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalBatch {
    pub returns: Vec<f64>,
    pub lengths: Vec<f64>,
    pub wins: usize,
}

impl EvalBatch {
    pub fn from_episodes(driver: SkillId, episodes: &[EpisodeSummary]) -> Self {
        Self {
            returns: episodes.iter().map(|e| e.returns.get(&driver).copied().unwrap_or(0.0)).collect(),
            lengths: episodes.iter().map(|e| e.driver_steps as f64).collect(),
            wins: episodes.iter().filter(|e| e.won()).count(),
        }
    }

    pub fn row(&self, step: u64) -> MetricRow {
        let (return_mean, return_ci95) = mean_ci95(&self.returns);
        let n = self.returns.len().max(1) as f64;
        MetricRow {
            step,
            return_mean,
            return_ci95,
            ep_len_mean: crate::summary::mean(&self.lengths),
            win_rate: self.wins as f64 / n,
        }
    }
}

/// Where and how long evaluation episodes run.
#[derive(Debug, Clone)]
pub struct EvalSetup {
    /// Template; its seed is replaced per episode.
    pub arena: ArenaConfig,
    pub driver: SkillId,
    pub horizon: u32,
    pub weights: RewardWeights,
    pub episodes: u32,
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    pub jobs: usize,
}

/// Runs the evaluation episodes of `setup`. Every episode gets its own arena
/// seed and reseeds the lineup's action streams, so episodes are independent
/// and may run in any order.
pub fn run_eval_episodes(lineup: &Lineup, setup: &EvalSetup) -> Result<Vec<EpisodeSummary>> {
    if lineup.slots.iter().any(|(_, s)| matches!(s, Slot::Learner(_))) {
        return Err(Error::usage("evaluation lineups cannot contain learners"));
    }
    let mut seeds = seeding::stream(setup.seed, "eval-episodes");
    let seeds: Vec<u64> = (0..setup.episodes).map(|_| seeds.gen()).collect();
    let one = |index: usize| -> Result<EpisodeSummary> {
        let seed = seeds[index];
        let mut l = lineup.clone();
        l.reseed(seed);
        let spec = EpisodeSpec {
            arena: ArenaConfig { seed, ..setup.arena.clone() },
            driver: setup.driver,
            horizon: setup.horizon,
            weights: setup.weights.clone(),
            record: false,
        };
        let r = l.run(WorldState::reset(&spec.arena)?, &spec)?;
        Ok(EpisodeSummary {
            index,
            seed,
            outcome: r.outcome,
            ticks: r.ticks,
            driver_steps: r.driver_steps,
            returns: r.returns,
            player_hp: r.final_world.player.hp,
            boss_hp: r.final_world.boss.hp,
        })
    };
    if setup.jobs <= 1 {
        return (0..seeds.len()).map(one).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(setup.jobs)
        .build()
        .map_err(|e| Error::usage(format!("cannot start {} workers: {e}", setup.jobs)))?;
    pool.install(|| (0..seeds.len()).into_par_iter().map(one).collect())
}

/// Runs `episodes` episodes of `lineup` with episode seeds drawn from `seed`.
pub fn evaluate_lineup(
    lineup: &Lineup,
    arena: &ArenaConfig,
    driver: SkillId,
    horizon: u32,
    weights: &RewardWeights,
    episodes: u32,
    seed: u64,
) -> Result<EvalBatch> {
    let setup = EvalSetup { arena: arena.clone(), driver, horizon, weights: weights.clone(), episodes, seed, jobs: 1 };
    Ok(EvalBatch::from_episodes(driver, &run_eval_episodes(lineup, &setup)?))
}

/// Trains every learner slot of `lineup` until the driver has taken `budget`
/// decision steps, evaluating every `eval_every` steps. The trained learners
/// stay in the lineup.
pub fn train_stage(lineup: &mut Lineup, spec: &StageSpec) -> Result<Vec<MetricRow>> {
    if !matches!(lineup.get(spec.driver), Some(s) if !s.is_idle()) {
        return Err(Error::usage(format!("driver {} has no agent", spec.driver)));
    }
    let mut episode_seeds = seeding::stream(spec.seed, &format!("train-episodes/{}", spec.driver));
    let mut metrics = Vec::new();
    let mut used = 0u64;
    let mut next_eval = spec.config.eval_every;
    let mut eval_index = 0u64;
    while used < spec.budget {
        let horizon = (spec.budget - used).min(spec.horizon as u64) as u32;
        let ep = EpisodeSpec {
            arena: ArenaConfig { seed: episode_seeds.gen(), ..spec.arena.clone() },
            driver: spec.driver,
            horizon,
            weights: spec.weights.clone(),
            record: false,
        };
        let r = lineup.run(WorldState::reset(&ep.arena)?, &ep)?;
        used += r.driver_steps as u64;
        if r.driver_steps == 0 {
            return Err(Error::usage("episode ended before the driver acted"));
        }
        while used >= next_eval {
            let eval_seed = seeding::derive_seed(spec.seed, &format!("eval/{}/{eval_index}", spec.driver));
            let ev = lineup.for_eval(spec.config.eval_eps, eval_seed);
            let setup = EvalSetup {
                arena: spec.arena.clone(),
                driver: spec.driver,
                horizon: spec.horizon,
                weights: spec.weights.clone(),
                episodes: spec.config.eval_episodes,
                seed: eval_seed,
                jobs: spec.jobs,
            };
            let batch = EvalBatch::from_episodes(spec.driver, &run_eval_episodes(&ev, &setup)?);
            metrics.push(batch.row(next_eval));
            next_eval += spec.config.eval_every;
            eval_index += 1;
        }
    }
    Ok(metrics)
}

/// Result of training one skill against frozen upstream checkpoints.
#[derive(Debug, Clone)]
pub struct TrainedSkill {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricRow>,
}

/// Trains `skill` alone: `upstream` act frozen, every other skill idles.
pub fn train_skill(
    skill: SkillId,
    upstream: &[Checkpoint],
    spec: &StageSpec,
    config_hash: &str,
) -> Result<TrainedSkill> {
    if spec.driver != skill {
        return Err(Error::usage("a single-skill stage is driven by the skill itself"));
    }
    let mut lineup = Lineup::from_checkpoints(upstream, spec.config.eval_eps, spec.seed);
    if lineup.get(skill).is_some() {
        return Err(Error::usage(format!("{skill} is both frozen and learning")));
    }
    let learner = DqnLearner::new(skill, spec.config.clone(), spec.budget, spec.seed)?;
    lineup.set(skill, Slot::Learner(Box::new(learner)));
    let metrics = train_stage(&mut lineup, spec)?;
    let learner = lineup.take_learner(skill).expect("learner slot kept");
    let parents: BTreeMap<String, String> = upstream.iter().map(|c| (c.skill.to_string(), c.hash())).collect();
    Ok(TrainedSkill { checkpoint: Checkpoint::from_learner(&learner, config_hash.to_string(), parents), metrics })
}
