//! Evaluation designs: win rates with randomized skills, phase-2 transfer,
//! the monolithic baseline, and DODGE episode-length diagnostics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arena::{ArenaConfig, Phase, SpawnMode};
use crate::curriculum::{RunConfig, StagePlan, STAGE_ORDER};
use crate::error::{Error, Result};
use crate::qlearn::train::{
    read_metrics, run_eval_episodes, train_skill, EpisodeSummary, EvalBatch, EvalSetup, Lineup, MetricRow, Slot,
};
use crate::qlearn::{Checkpoint, GreedyPolicy, RandomAgent};
use crate::rewards::RewardWeights;
use crate::skills::SkillId;
use crate::summary::{mean, mean_ci95, moving_average};

pub const DEFAULT_EPISODES: u32 = 25;
pub const EVAL_EPS: f64 = 0.05;
/// Window of the smoothed curve columns.
pub const CURVE_WINDOW: usize = 10;

/// What acts for one skill during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Trained,
    Random,
    Idle,
}

#[derive(Debug, Clone)]
pub struct EvalSpec {
    /// Phase, spawn and termination of the episodes; the seed is per episode.
    pub arena: ArenaConfig,
    pub episodes: u32,
    /// Each seed runs `episodes` episodes.
    pub seeds: Vec<u64>,
    pub sources: BTreeMap<SkillId, Source>,
    pub driver: SkillId,
    pub horizon: u32,
    pub weights: RewardWeights,
    pub eps: f64,
    pub jobs: usize,
}

impl EvalSpec {
    /// All five skills trained, HA driving, fixed spawn.
    pub fn composed(base: &ArenaConfig, phase: Phase, spawn: SpawnMode, episodes: u32, seed: u64) -> Self {
        Self {
            arena: ArenaConfig { phase, spawn_mode: spawn, ends_on_outcome: true, ..base.clone() },
            episodes,
            seeds: vec![seed],
            sources: STAGE_ORDER.iter().map(|&k| (k, Source::Trained)).collect(),
            driver: SkillId::Ha,
            horizon: StagePlan::default_for(SkillId::Ha).horizon,
            weights: RewardWeights::default(),
            eps: EVAL_EPS,
            jobs: 1,
        }
    }

    /// [`EvalSpec::composed`] with a run's arena, reward weights, evaluation
    /// ε, HA horizon and worker count.
    pub fn composed_for(cfg: &RunConfig, phase: Phase, spawn: SpawnMode, episodes: u32, seed: u64) -> Result<Self> {
        let mut spec = Self::composed(&cfg.arena, phase, spawn, episodes, seed);
        spec.weights = cfg.weights.clone();
        spec.eps = cfg.dqn(SkillId::Ha)?.eval_eps;
        spec.horizon = cfg.plan.stage(SkillId::Ha).map(|s| s.horizon).unwrap_or(spec.horizon);
        spec.jobs = cfg.jobs;
        Ok(spec)
    }

    /// Settings of a training stage, with `skill` acting from `source` and
    /// its upstream skills trained.
    pub fn for_stage(cfg: &RunConfig, skill: SkillId, source: Source, episodes: u32, seed: u64) -> Result<Self> {
        let stage = cfg.plan.stage(skill).ok_or_else(|| Error::usage(format!("no stage for {skill}")))?;
        let mut sources: BTreeMap<SkillId, Source> =
            STAGE_ORDER.iter().take_while(|&&k| k != skill).map(|&k| (k, Source::Trained)).collect();
        if skill == SkillId::E2e {
            sources.clear();
        }
        sources.insert(skill, source);
        Ok(Self {
            arena: stage.arena(&cfg.arena),
            episodes,
            seeds: vec![seed],
            sources,
            driver: skill,
            horizon: stage.horizon,
            weights: cfg.weights.clone(),
            eps: cfg.dqn(skill)?.eval_eps,
            jobs: cfg.jobs,
        })
    }

    pub fn with_source(mut self, skill: SkillId, source: Source) -> Self {
        self.sources.insert(skill, source);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.seeds.is_empty() {
            return Err(Error::usage("evaluation needs at least one episode and one seed"));
        }
        if !self.sources.contains_key(&self.driver) {
            return Err(Error::usage(format!("driver {} has no source", self.driver)));
        }
        if self.sources.contains_key(&SkillId::E2e) && self.sources.len() > 1 {
            return Err(Error::usage("the end-to-end policy cannot be combined with modular skills"));
        }
        Ok(())
    }

    fn lineup(&self, ckpts: &BTreeMap<SkillId, Checkpoint>) -> Result<Lineup> {
        let mut l = Lineup::new();
        for (&k, &src) in &self.sources {
            let slot = match src {
                Source::Trained => {
                    let c = ckpts
                        .get(&k)
                        .ok_or_else(|| Error::MissingArtifact(PathBuf::from(format!("checkpoints/{k}.ckpt"))))?;
                    Slot::Policy(GreedyPolicy::from_checkpoint(c, self.eps, 0))
                }
                Source::Random => Slot::Random(RandomAgent::new(0)),
                Source::Idle => Slot::Idle,
            };
            l.set(k, slot);
        }
        Ok(l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub ci95: f64,
}

impl Interval {
    pub fn of(xs: &[f64]) -> Self {
        let (mean, ci95) = mean_ci95(xs);
        Self { mean, ci95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub phase: u8,
    pub spawn: String,
    pub driver: SkillId,
    pub episodes_per_seed: u32,
    pub seeds: Vec<u64>,
    pub sources: BTreeMap<SkillId, Source>,
    pub wins: usize,
    pub episodes: usize,
    pub win_rate: f64,
    /// Win rate of each evaluation seed, in `seeds` order.
    pub seed_win_rates: Vec<f64>,
    pub returns: BTreeMap<SkillId, Interval>,
    /// Decision steps of the driver.
    pub episode_length: Interval,
    pub episode_ticks: f64,
    #[serde(skip)]
    pub log: Vec<(u64, EpisodeSummary)>,
}

impl EvalReport {
    pub fn batch(&self) -> EvalBatch {
        let eps: Vec<EpisodeSummary> = self.log.iter().map(|(_, e)| e.clone()).collect();
        EvalBatch::from_episodes(self.driver, &eps)
    }

    pub fn driver_returns(&self) -> Vec<f64> {
        self.log.iter().map(|(_, e)| e.returns.get(&self.driver).copied().unwrap_or(0.0)).collect()
    }

    /// Per-episode rows: one line per episode with outcome and every skill's return.
    pub fn episodes_csv(&self) -> String {
        let skills: Vec<SkillId> = self.sources.keys().copied().collect();
        let mut out = String::from("eval_seed,episode,arena_seed,outcome,won,ticks,driver_steps,player_hp,boss_hp");
        for k in &skills {
            let _ = write!(out, ",return_{k}");
        }
        out.push('\n');
        for (seed, e) in &self.log {
            let _ = write!(
                out,
                "{seed},{},{},{},{},{},{},{},{}",
                e.index,
                e.seed,
                e.outcome,
                u8::from(e.won()),
                e.ticks,
                e.driver_steps,
                e.player_hp,
                e.boss_hp
            );
            for k in &skills {
                let _ = write!(out, ",{}", e.returns.get(k).copied().unwrap_or(0.0));
            }
            out.push('\n');
        }
        out
    }

    /// Writes `<name>.csv` (episodes) and `<name>.json` (summary) under `dir`.
    pub fn write(&self, dir: &Path, name: &str) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(format!("{name}.csv"));
        std::fs::write(&csv, self.episodes_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join(format!("{name}.json"));
        let mut bytes = serde_json::to_vec_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        bytes.push(b'\n');
        std::fs::write(&json, bytes).map_err(|e| Error::io(&json, e))?;
        Ok((csv, json))
    }
}

/// Builds a report from episodes, in any order: episodes are sorted by
/// (seed position, index) first, so the summary never depends on the order
/// in which they finished.
pub fn aggregate(spec: &EvalSpec, mut log: Vec<(u64, EpisodeSummary)>) -> EvalReport {
    let pos = |s: u64| spec.seeds.iter().position(|&x| x == s).unwrap_or(usize::MAX);
    log.sort_by_key(|(s, e)| (pos(*s), e.index));
    let returns = spec
        .sources
        .keys()
        .map(|&k| {
            let xs: Vec<f64> = log.iter().map(|(_, e)| e.returns.get(&k).copied().unwrap_or(0.0)).collect();
            (k, Interval::of(&xs))
        })
        .collect();
    let lengths: Vec<f64> = log.iter().map(|(_, e)| e.driver_steps as f64).collect();
    let ticks: Vec<f64> = log.iter().map(|(_, e)| e.ticks as f64).collect();
    let wins = log.iter().filter(|(_, e)| e.won()).count();
    let seed_win_rates = spec
        .seeds
        .iter()
        .map(|&s| {
            let of_seed: Vec<&EpisodeSummary> = log.iter().filter(|(x, _)| *x == s).map(|(_, e)| e).collect();
            of_seed.iter().filter(|e| e.won()).count() as f64 / of_seed.len().max(1) as f64
        })
        .collect();
    EvalReport {
        phase: spec.arena.phase.number(),
        spawn: spec.arena.spawn_mode.to_string(),
        driver: spec.driver,
        episodes_per_seed: spec.episodes,
        seeds: spec.seeds.clone(),
        sources: spec.sources.clone(),
        wins,
        episodes: log.len(),
        win_rate: wins as f64 / log.len().max(1) as f64,
        seed_win_rates,
        returns,
        episode_length: Interval::of(&lengths),
        episode_ticks: mean(&ticks),
        log,
    }
}

/// Runs the spec's episodes. Checkpoints and their statistics are only read.
pub fn evaluate(spec: &EvalSpec, ckpts: &BTreeMap<SkillId, Checkpoint>) -> Result<EvalReport> {
    spec.validate()?;
    let lineup = spec.lineup(ckpts)?;
    let mut log = Vec::new();
    for &seed in &spec.seeds {
        let setup = EvalSetup {
            arena: spec.arena.clone(),
            driver: spec.driver,
            horizon: spec.horizon,
            weights: spec.weights.clone(),
            episodes: spec.episodes,
            seed,
            jobs: spec.jobs,
        };
        log.extend(run_eval_episodes(&lineup, &setup)?.into_iter().map(|e| (seed, e)));
    }
    Ok(aggregate(spec, log))
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub ha: Source,
    pub dodge: Source,
    pub report: EvalReport,
}

impl AblationRow {
    pub fn label(&self) -> String {
        let name = |s: Source| match s {
            Source::Trained => "trained",
            Source::Random => "random",
            Source::Idle => "idle",
        };
        format!("ha_{}_dodge_{}", name(self.ha), name(self.dodge))
    }
}

/// The four HA/DODGE settings: both trained, HA trained with random DODGE,
/// random HA with DODGE trained, both random. Every other skill stays trained.
pub fn ablation_table(base: &EvalSpec, ckpts: &BTreeMap<SkillId, Checkpoint>) -> Result<Vec<AblationRow>> {
    use Source::{Random, Trained};
    [(Trained, Trained), (Trained, Random), (Random, Trained), (Random, Random)]
        .into_iter()
        .map(|(ha, dodge)| {
            let spec = base.clone().with_source(SkillId::Ha, ha).with_source(SkillId::Dodge, dodge);
            Ok(AblationRow { ha, dodge, report: evaluate(&spec, ckpts)? })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TransferReport {
    pub zero_shot_mid: EvalReport,
    pub zero_shot_long: EvalReport,
    pub finetuned: Option<EvalReport>,
}

/// Phase-1 policies on phase 2 from both fixed spawns, and the fine-tuned set
/// from mid range when given.
pub fn transfer_eval(
    base: &EvalSpec,
    phase1: &BTreeMap<SkillId, Checkpoint>,
    finetuned: Option<&BTreeMap<SkillId, Checkpoint>>,
) -> Result<TransferReport> {
    let at = |spawn: SpawnMode| {
        let mut s = base.clone();
        s.arena.phase = Phase::Two;
        s.arena.spawn_mode = spawn;
        s
    };
    Ok(TransferReport {
        zero_shot_mid: evaluate(&at(SpawnMode::FixedMidRange), phase1)?,
        zero_shot_long: evaluate(&at(SpawnMode::FixedLongRange), phase1)?,
        finetuned: finetuned.map(|c| evaluate(&at(SpawnMode::FixedMidRange), c)).transpose()?,
    })
}

/// Learning curve with trailing moving averages of return and length.
pub fn curve_csv(rows: &[MetricRow], window: usize) -> String {
    let ret: Vec<f64> = rows.iter().map(|r| r.return_mean).collect();
    let len: Vec<f64> = rows.iter().map(|r| r.ep_len_mean).collect();
    let ret_ma = moving_average(&ret, window);
    let len_ma = moving_average(&len, window);
    let mut out = format!("step,return_mean,return_ci95,ep_len_mean,win_rate,return_ma{window},ep_len_ma{window}\n");
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.step, r.return_mean, r.return_ci95, r.ep_len_mean, r.win_rate, ret_ma[i], len_ma[i]
        );
    }
    out
}

/// Compares the first and last quarters of a curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlateauCheck {
    pub first_quarter: Interval,
    pub last_quarter: Interval,
    /// Last-quarter mean lies within the wider of the two 95% half-widths of
    /// the first-quarter mean.
    pub plateau: bool,
    /// Last-quarter mean exceeds the first-quarter mean by more than that width.
    pub rising: bool,
}

pub fn plateau_check(values: &[f64]) -> Result<PlateauCheck> {
    let q = values.len() / 4;
    if q == 0 {
        return Err(Error::usage("a plateau check needs at least four curve points"));
    }
    let first = Interval::of(&values[..q]);
    let last = Interval::of(&values[values.len() - q..]);
    let tol = first.ci95.max(last.ci95);
    Ok(PlateauCheck {
        first_quarter: first,
        last_quarter: last,
        plateau: (last.mean - first.mean).abs() <= tol,
        rising: last.mean - first.mean > tol,
    })
}

#[derive(Debug, Clone)]
pub struct E2eBaseline {
    pub checkpoint: Checkpoint,
    pub curve: Vec<MetricRow>,
    pub report: EvalReport,
    pub length_plateau: PlateauCheck,
}

/// Trains the 16-action monolithic policy on the plan's E2E stage for
/// `budget` decision steps and evaluates it like the composed agent.
pub fn e2e_baseline(cfg: &RunConfig, budget: u64, seed: u64, episodes: u32) -> Result<E2eBaseline> {
    let mut stage = cfg.plan.e2e.clone();
    stage.budget = budget;
    let spec = cfg.stage_spec(&stage, seed)?;
    let trained = train_skill(SkillId::E2e, &[], &spec, &cfg.hash())?;
    e2e_summary(cfg, trained.checkpoint, trained.metrics, episodes, seed)
}

/// Final evaluation and plateau check of an already trained E2E policy.
pub fn e2e_summary(
    cfg: &RunConfig,
    checkpoint: Checkpoint,
    curve: Vec<MetricRow>,
    episodes: u32,
    seed: u64,
) -> Result<E2eBaseline> {
    if checkpoint.skill != SkillId::E2e {
        return Err(Error::usage(format!("expected an e2e checkpoint, got {}", checkpoint.skill)));
    }
    let ckpts = BTreeMap::from([(SkillId::E2e, checkpoint.clone())]);
    let eval = EvalSpec::for_stage(cfg, SkillId::E2e, Source::Trained, episodes, seed)?;
    let report = evaluate(&eval, &ckpts)?;
    let lengths: Vec<f64> = curve.iter().map(|r| r.ep_len_mean).collect();
    Ok(E2eBaseline { length_plateau: plateau_check(&lengths)?, checkpoint, curve, report })
}

impl E2eBaseline {
    /// Writes the smoothed curve, the evaluation report and the plateau check.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let curve = dir.join("e2e_curve.csv");
        std::fs::write(&curve, curve_csv(&self.curve, CURVE_WINDOW)).map_err(|e| Error::io(&curve, e))?;
        self.report.write(&dir.join("reports"), "e2e_eval")?;
        let plateau = dir.join("e2e_plateau.json");
        let bytes = serde_json::to_vec_pretty(&self.length_plateau).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(&plateau, bytes).map_err(|e| Error::io(&plateau, e))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DodgeDiagnostics {
    /// (training step, mean evaluation episode length) from the DODGE stage.
    pub curve: Vec<(u64, f64)>,
    pub trained_length: Interval,
    pub random_length: Interval,
    /// `trained_length.mean / random_length.mean`.
    pub ratio: f64,
}

/// Episode lengths of the final DODGE policy against a uniform random DODGE,
/// both in the DODGE stage's setting (upstream trained, HA idle, so no
/// healing), on the same episode seeds.
pub fn dodge_diagnostics(
    cfg: &RunConfig,
    ckpts: &BTreeMap<SkillId, Checkpoint>,
    dodge_metrics: Option<&Path>,
    episodes: u32,
    seed: u64,
) -> Result<DodgeDiagnostics> {
    let trained = evaluate(&EvalSpec::for_stage(cfg, SkillId::Dodge, Source::Trained, episodes, seed)?, ckpts)?;
    let random = evaluate(&EvalSpec::for_stage(cfg, SkillId::Dodge, Source::Random, episodes, seed)?, ckpts)?;
    let curve = match dodge_metrics {
        Some(p) => read_metrics(p)?.into_iter().map(|r| (r.step, r.ep_len_mean)).collect(),
        None => Vec::new(),
    };
    let ratio = trained.episode_length.mean / random.episode_length.mean;
    Ok(DodgeDiagnostics { curve, trained_length: trained.episode_length, random_length: random.episode_length, ratio })
}

/// Final return of a trained skill against a uniform random policy in the
/// same slot, on the same episode seeds.
#[derive(Debug, Clone, Serialize)]
pub struct BaselineComparison {
    pub skill: SkillId,
    pub trained: Interval,
    pub random: Interval,
    /// Gap in units of the wider 95% half-width.
    pub margin_in_ci: f64,
}

pub fn compare_with_random(
    cfg: &RunConfig,
    ckpts: &BTreeMap<SkillId, Checkpoint>,
    skill: SkillId,
    episodes: u32,
    seed: u64,
) -> Result<BaselineComparison> {
    let trained = evaluate(&EvalSpec::for_stage(cfg, skill, Source::Trained, episodes, seed)?, ckpts)?;
    let random = evaluate(&EvalSpec::for_stage(cfg, skill, Source::Random, episodes, seed)?, ckpts)?;
    let t = trained.returns[&skill];
    let r = random.returns[&skill];
    let width = t.ci95.max(r.ci95);
    let gap = t.mean - r.mean;
    Ok(BaselineComparison {
        skill,
        trained: t,
        random: r,
        margin_in_ci: if width > 0.0 {
            gap / width
        } else if gap > 0.0 {
            f64::INFINITY
        } else {
            0.0
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arena::Outcome;

    fn episode(index: usize, won: bool, ret: f64) -> EpisodeSummary {
        EpisodeSummary {
            index,
            seed: index as u64,
            outcome: if won { Outcome::BossDefeated } else { Outcome::PlayerDead },
            ticks: 10,
            driver_steps: 5,
            returns: BTreeMap::from([(SkillId::Ha, ret)]),
            player_hp: 50.0,
            boss_hp: 600.0,
        }
    }

    #[test]
    fn win_rate_is_exact_fraction() {
        let spec = EvalSpec::composed(&ArenaConfig::default(), Phase::One, SpawnMode::FixedMidRange, 4, 1);
        let log: Vec<_> = (0..4).map(|i| (1, episode(i, i == 2, i as f64))).collect();
        let r = aggregate(&spec, log);
        assert_eq!(r.wins, 1);
        assert_eq!(r.win_rate, 0.25);
        assert_eq!(r.returns[&SkillId::Ha].mean, 1.5);
    }

    #[test]
    fn aggregation_ignores_episode_order() {
        let spec = EvalSpec::composed(&ArenaConfig::default(), Phase::One, SpawnMode::FixedMidRange, 6, 3);
        let log: Vec<_> = (0..6).map(|i| (3, episode(i, i % 2 == 0, (i * i) as f64))).collect();
        let mut shuffled = log.clone();
        shuffled.reverse();
        shuffled.swap(1, 4);
        let a = aggregate(&spec, log);
        let b = aggregate(&spec, shuffled);
        assert_eq!(a, b);
        assert_eq!(a.episodes_csv(), b.episodes_csv());
    }

    #[test]
    fn plateau_uses_quarters() {
        let flat = [5.0, 6.0, 5.0, 6.0, 5.0, 6.0, 5.0, 6.0];
        assert!(plateau_check(&flat).unwrap().plateau);
        let rising: Vec<f64> = (0..20).map(|i| i as f64 * 10.0).collect();
        let r = plateau_check(&rising).unwrap();
        assert!(!r.plateau && r.rising);
        let falling: Vec<f64> = rising.iter().rev().copied().collect();
        let f = plateau_check(&falling).unwrap();
        assert!(!f.plateau && !f.rising);
        assert!(plateau_check(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn missing_checkpoint_is_reported() {
        let spec = EvalSpec::composed(&ArenaConfig::default(), Phase::One, SpawnMode::FixedMidRange, 1, 1);
        assert!(matches!(evaluate(&spec, &BTreeMap::new()), Err(Error::MissingArtifact(_))));
    }
}
