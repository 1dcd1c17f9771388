//! Dependency-ordered training of the skill graph, phase-2 fine-tuning of the
//! phase-sensitive skills, and the run manifests that tie the artifacts
//! together.
//!
//! A run directory holds `config.cfg` (the resolved settings), `manifest.json`,
//! `checkpoints/<skill>.ckpt`, `metrics/<stage>.<csv|json>` and, when enabled,
//! `trajectories/<stage>.csv`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::arena::{ArenaConfig, Phase, SpawnMode, WorldState};
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::qlearn::checkpoint::hash_bytes;
use crate::qlearn::train::{train_skill, train_stage, write_metrics, Lineup, MetricsFormat, Slot, StageSpec};
use crate::qlearn::{config_hash, Checkpoint, DqnConfig, DqnLearner};
use crate::rewards::RewardWeights;
use crate::seeding;
use crate::skills::cadence::EpisodeSpec;
use crate::skills::SkillId;
use crate::trajectory::TrajectoryDump;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.cfg";

/// Fixed training order of the skill graph.
pub const STAGE_ORDER: [SkillId; 5] = SkillId::MODULAR;

/// Settings of one training stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    pub skill: SkillId,
    pub budget: u64,
    pub horizon: u32,
    pub spawn: SpawnMode,
    pub phase: Phase,
    /// Upstream skills run to the horizon even after death or a kill.
    pub ends_on_outcome: bool,
}

impl StagePlan {
    pub fn default_for(skill: SkillId) -> Self {
        let (budget, horizon, spawn) = match skill {
            SkillId::Cam => (20_000, 128, SpawnMode::Randomized),
            SkillId::Lock => (20_000, 64, SpawnMode::Randomized),
            SkillId::Move => (20_000, 128, SpawnMode::Randomized),
            SkillId::Dodge => (60_000, 512, SpawnMode::FixedMidRange),
            SkillId::Ha => (60_000, 1024, SpawnMode::FixedMidRange),
            SkillId::E2e => (150_000, 2048, SpawnMode::FixedMidRange),
        };
        Self {
            skill,
            budget,
            horizon,
            spawn,
            phase: Phase::One,
            ends_on_outcome: matches!(skill, SkillId::Dodge | SkillId::Ha | SkillId::E2e),
        }
    }

    /// Arena template for this stage's episodes.
    pub fn arena(&self, base: &ArenaConfig) -> ArenaConfig {
        ArenaConfig { phase: self.phase, spawn_mode: self.spawn, ends_on_outcome: self.ends_on_outcome, ..base.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetunePlan {
    pub skills: Vec<SkillId>,
    pub phase: Phase,
    pub budget: u64,
    /// Counted in decision steps of the HA skill, which drives the stage.
    pub horizon: u32,
    pub spawn: SpawnMode,
    pub eps_start: f64,
}

impl Default for FinetunePlan {
    fn default() -> Self {
        Self {
            skills: vec![SkillId::Dodge, SkillId::Ha],
            phase: Phase::Two,
            budget: 30_000,
            horizon: 1024,
            spawn: SpawnMode::FixedMidRange,
            eps_start: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumPlan {
    pub stages: Vec<StagePlan>,
    pub finetune: FinetunePlan,
    /// The monolithic comparison agent.
    pub e2e: StagePlan,
    /// Record one evaluation episode per stage for the replay audit.
    pub dump_trajectories: bool,
}

impl Default for CurriculumPlan {
    fn default() -> Self {
        Self {
            stages: STAGE_ORDER.iter().map(|&k| StagePlan::default_for(k)).collect(),
            finetune: FinetunePlan::default(),
            e2e: StagePlan::default_for(SkillId::E2e),
            dump_trajectories: true,
        }
    }
}

const STAGE_FIELDS: [&str; 5] = ["budget", "horizon", "spawn", "phase", "ends_on_outcome"];
const FINETUNE_FIELDS: [&str; 6] = ["skills", "phase", "budget", "horizon", "spawn", "eps_start"];

impl CurriculumPlan {
    pub fn keys() -> Vec<String> {
        let mut keys = vec!["plan.dump_trajectories".to_string()];
        for k in SkillId::ALL {
            keys.extend(STAGE_FIELDS.iter().map(|f| format!("plan.{k}.{f}")));
        }
        keys.extend(FINETUNE_FIELDS.iter().map(|f| format!("plan.finetune.{f}")));
        keys
    }

    pub fn apply(&mut self, kv: &KvConfig) -> Result<()> {
        for stage in self.stages.iter_mut().chain(std::iter::once(&mut self.e2e)) {
            let key = |f: &str| format!("plan.{}.{f}", stage.skill);
            if let Some(v) = kv.get_u64(&key("budget"))? {
                stage.budget = v;
            }
            if let Some(v) = kv.get_u64(&key("horizon"))? {
                stage.horizon =
                    u32::try_from(v).map_err(|_| Error::config(format!("{} is too large", key("horizon"))))?;
            }
            if let Some(v) = kv.get_str(&key("spawn")) {
                stage.spawn = v.parse()?;
            }
            if let Some(v) = kv.get_u64(&key("phase"))? {
                stage.phase = Phase::from_number(v)?;
            }
            if let Some(v) = kv.get_bool(&key("ends_on_outcome"))? {
                stage.ends_on_outcome = v;
            }
        }
        let ft = &mut self.finetune;
        if let Some(v) = kv.get_str("plan.finetune.skills") {
            ft.skills = parse_skill_list(v).map_err(|e| Error::config(format!("plan.finetune.skills: {e}")))?;
        }
        if let Some(v) = kv.get_u64("plan.finetune.phase")? {
            ft.phase = Phase::from_number(v)?;
        }
        if let Some(v) = kv.get_u64("plan.finetune.budget")? {
            ft.budget = v;
        }
        if let Some(v) = kv.get_u64("plan.finetune.horizon")? {
            ft.horizon = u32::try_from(v).map_err(|_| Error::config("plan.finetune.horizon is too large"))?;
        }
        if let Some(v) = kv.get_str("plan.finetune.spawn") {
            ft.spawn = v.parse()?;
        }
        if let Some(v) = kv.get_f64("plan.finetune.eps_start")? {
            ft.eps_start = v;
        }
        if let Some(v) = kv.get_bool("plan.dump_trajectories")? {
            self.dump_trajectories = v;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let order: Vec<SkillId> = self.stages.iter().map(|s| s.skill).collect();
        if order != STAGE_ORDER {
            return Err(Error::config(format!("stage order must be cam, lock, move, dodge, ha; got {order:?}")));
        }
        for s in self.stages.iter().chain(std::iter::once(&self.e2e)) {
            if s.budget == 0 || s.horizon == 0 {
                return Err(Error::config(format!("plan.{}: budget and horizon must be positive", s.skill)));
            }
        }
        let ft = &self.finetune;
        if ft.skills.is_empty() || ft.skills.iter().any(|k| !matches!(k, SkillId::Dodge | SkillId::Ha)) {
            return Err(Error::config("plan.finetune.skills may only list dodge and ha"));
        }
        if ft.budget == 0 || ft.horizon == 0 {
            return Err(Error::config("plan.finetune: budget and horizon must be positive"));
        }
        if !(0.0..=1.0).contains(&ft.eps_start) {
            return Err(Error::config("plan.finetune.eps_start must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut out = vec![("plan.dump_trajectories".to_string(), self.dump_trajectories.to_string())];
        for s in self.stages.iter().chain(std::iter::once(&self.e2e)) {
            let k = s.skill;
            out.push((format!("plan.{k}.budget"), s.budget.to_string()));
            out.push((format!("plan.{k}.horizon"), s.horizon.to_string()));
            out.push((format!("plan.{k}.spawn"), s.spawn.to_string()));
            out.push((format!("plan.{k}.phase"), s.phase.to_string()));
            out.push((format!("plan.{k}.ends_on_outcome"), s.ends_on_outcome.to_string()));
        }
        let ft = &self.finetune;
        let skills: Vec<&str> = ft.skills.iter().map(|k| k.as_str()).collect();
        out.push(("plan.finetune.skills".into(), skills.join(",")));
        out.push(("plan.finetune.phase".into(), ft.phase.to_string()));
        out.push(("plan.finetune.budget".into(), ft.budget.to_string()));
        out.push(("plan.finetune.horizon".into(), ft.horizon.to_string()));
        out.push(("plan.finetune.spawn".into(), ft.spawn.to_string()));
        out.push(("plan.finetune.eps_start".into(), ft.eps_start.to_string()));
        out
    }

    pub fn stage(&self, skill: SkillId) -> Option<&StagePlan> {
        if skill == SkillId::E2e {
            return Some(&self.e2e);
        }
        self.stages.iter().find(|s| s.skill == skill)
    }

    /// Every budget multiplied by `factor` (at least one step each).
    pub fn scaled(&self, factor: f64) -> Self {
        let scale = |b: u64| ((b as f64 * factor).round() as u64).max(1);
        let mut p = self.clone();
        for s in p.stages.iter_mut().chain(std::iter::once(&mut p.e2e)) {
            s.budget = scale(s.budget);
        }
        p.finetune.budget = scale(p.finetune.budget);
        p
    }

    /// Decision steps of the phase-1 curriculum.
    pub fn total_budget(&self) -> u64 {
        self.stages.iter().map(|s| s.budget).sum()
    }
}

/// Parses `dodge,ha` style lists; duplicates are rejected.
pub fn parse_skill_list(s: &str) -> Result<Vec<SkillId>> {
    let mut out: Vec<SkillId> = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let k: SkillId = part.parse()?;
        if out.contains(&k) {
            return Err(Error::usage(format!("skill `{k}` listed twice")));
        }
        out.push(k);
    }
    Ok(out)
}

/// Everything a run is configured by: one flat key/value file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub plan: CurriculumPlan,
    /// Arena radius and tick length; phase, spawn and termination come from
    /// the plan.
    pub arena: ArenaConfig,
    pub weights: RewardWeights,
    /// `dqn.*` overrides applied on top of each skill's defaults.
    pub dqn_overrides: KvConfig,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            plan: CurriculumPlan::default(),
            arena: ArenaConfig::default(),
            weights: RewardWeights::default(),
            dqn_overrides: KvConfig::default(),
            jobs: 1,
        }
    }
}

impl RunConfig {
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let mut known: Vec<&str> = Vec::new();
        known.extend(ArenaConfig::KEYS);
        known.extend(DqnConfig::KEYS);
        known.extend(RewardWeights::KEYS);
        let plan_keys = CurriculumPlan::keys();
        known.extend(plan_keys.iter().map(String::as_str));
        kv.check_known(&known)?;

        let mut c = Self::default();
        c.arena.apply(kv)?;
        c.weights.apply(kv)?;
        c.plan.apply(kv)?;
        let overrides: Vec<(String, String)> = kv
            .keys()
            .filter(|k| k.starts_with("dqn."))
            .map(|k| (k.to_string(), kv.get_str(k).unwrap_or_default().to_string()))
            .collect();
        c.dqn_overrides = KvConfig::from_pairs(overrides);
        c.dqn(SkillId::Ha)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&KvConfig::load(path)?)
    }

    pub fn dqn(&self, skill: SkillId) -> Result<DqnConfig> {
        let mut c = DqnConfig::for_skill(skill);
        c.apply(&self.dqn_overrides)?;
        Ok(c)
    }

    /// Resolved settings, every key spelled out.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> =
            self.arena.to_kv().into_iter().filter(|(k, _)| k == "arena.radius" || k == "arena.tick_seconds").collect();
        let mut dqn = DqnConfig::default();
        dqn.apply(&self.dqn_overrides).expect("overrides were validated");
        out.extend(dqn.to_kv());
        out.extend(self.weights.to_kv());
        out.extend(self.plan.to_kv());
        out
    }

    pub fn render(&self) -> String {
        KvConfig::from_pairs(self.to_kv()).render()
    }

    pub fn hash(&self) -> String {
        config_hash(&self.to_kv())
    }

    pub fn stage_spec(&self, stage: &StagePlan, seed: u64) -> Result<StageSpec> {
        Ok(StageSpec {
            driver: stage.skill,
            budget: stage.budget,
            horizon: stage.horizon,
            arena: stage.arena(&self.arena),
            weights: self.weights.clone(),
            config: self.dqn(stage.skill)?,
            seed,
            jobs: self.jobs,
        })
    }
}

/// A file in the run directory and its content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    /// Skills trained in this stage.
    pub skills: Vec<SkillId>,
    pub phase: u8,
    pub spawn: String,
    pub budget: u64,
    pub horizon: u32,
    /// Frozen checkpoints as loaded when the stage started.
    pub frozen_before: BTreeMap<SkillId, String>,
    /// The same files re-hashed after the stage; equal to `frozen_before`.
    pub frozen_after: BTreeMap<SkillId, String>,
    pub checkpoints: BTreeMap<SkillId, Artifact>,
    pub metrics: Artifact,
    pub trajectory: Option<Artifact>,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParentRun {
    pub dir: String,
    pub manifest_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// `curriculum` or `finetune`.
    pub kind: String,
    pub seed: u64,
    pub config: Artifact,
    pub config_hash: String,
    pub stages: Vec<StageRecord>,
    /// Latest checkpoint of every skill, keyed by skill.
    pub checkpoints: BTreeMap<SkillId, Artifact>,
    pub parent: Option<ParentRun>,
    pub complete: bool,
    pub error: Option<String>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn path(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = Self::path(dir);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> Result<String> {
        let path = Self::path(dir);
        let mut bytes = serde_json::to_vec_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        bytes.push(b'\n');
        std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        Ok(hash_bytes(&bytes))
    }

    /// Checks that every referenced file exists and matches its hash.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        let mut all = vec![&self.config];
        all.extend(self.checkpoints.values());
        for s in &self.stages {
            all.extend(s.checkpoints.values());
            all.push(&s.metrics);
            all.extend(s.trajectory.as_ref());
        }
        for a in all {
            verify_artifact(dir, a)?;
        }
        Ok(())
    }

    /// Loads the latest checkpoint of `skill`, checking it against the manifest.
    pub fn load_checkpoint(&self, dir: &Path, skill: SkillId) -> Result<Checkpoint> {
        let a = self
            .checkpoints
            .get(&skill)
            .ok_or_else(|| Error::MissingArtifact(dir.join("checkpoints").join(format!("{skill}.ckpt"))))?;
        let ckpt = Checkpoint::load_verified(&dir.join(&a.path), &a.sha256)?;
        if ckpt.skill != skill {
            return Err(Error::Integrity(format!("{} holds a {} checkpoint", a.path, ckpt.skill)));
        }
        Ok(ckpt)
    }

    pub fn load_checkpoints(&self, dir: &Path) -> Result<BTreeMap<SkillId, Checkpoint>> {
        self.checkpoints.keys().map(|&k| Ok((k, self.load_checkpoint(dir, k)?))).collect()
    }

    fn require_complete(&self, dir: &Path) -> Result<()> {
        if !self.complete {
            return Err(Error::usage(format!("run in {} did not complete", dir.display())));
        }
        Ok(())
    }
}

fn verify_artifact(dir: &Path, a: &Artifact) -> Result<()> {
    let path = dir.join(&a.path);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let got = hash_bytes(&bytes);
    if got != a.sha256 {
        return Err(Error::Integrity(format!("{} hashes to {got}, manifest records {}", path.display(), a.sha256)));
    }
    Ok(())
}

fn write_artifact(dir: &Path, rel: &str, bytes: &[u8]) -> Result<Artifact> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(Artifact { path: rel.to_string(), sha256: hash_bytes(bytes) })
}

fn checkpoint_rel(skill: SkillId) -> String {
    format!("checkpoints/{skill}.ckpt")
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hash_bytes(&bytes))
}

/// Records one evaluation episode of `lineup` as a trajectory dump.
fn dump_episode(lineup: &Lineup, spec: &StageSpec, seed: u64, dir: &Path, name: &str) -> Result<Artifact> {
    let mut ev = lineup.for_eval(spec.config.eval_eps, seed);
    ev.reseed(seed);
    let ep = EpisodeSpec {
        arena: ArenaConfig { seed, ..spec.arena.clone() },
        driver: spec.driver,
        horizon: spec.horizon,
        weights: spec.weights.clone(),
        record: true,
    };
    let r = ev.run(WorldState::reset(&ep.arena)?, &ep)?;
    let dump = TrajectoryDump::from_episode(&ep.arena, &r)?;
    write_artifact(dir, &format!("trajectories/{name}.csv"), dump.to_text().as_bytes())
}

fn metrics_artifact(
    dir: &Path,
    name: &str,
    rows: &[crate::qlearn::train::MetricRow],
    format: MetricsFormat,
) -> Result<Artifact> {
    let rel = format!("metrics/{name}.{}", format.extension());
    let path = dir.join(&rel);
    write_metrics(&path, rows, format)?;
    Ok(Artifact { path: rel, sha256: hash_file(&path)? })
}

/// Options shared by the pipeline entry points.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub seed: u64,
    pub metrics_format: MetricsFormat,
}

/// Trains the five skills in dependency order. Stage k loads every earlier
/// checkpoint from disk, verified against the manifest, and runs it frozen;
/// skills after k idle. The manifest is rewritten after every stage, so a
/// failed run leaves a partial manifest with `complete = false`.
pub fn run_curriculum(cfg: &RunConfig, opts: &RunOptions) -> Result<RunManifest> {
    cfg.plan.validate()?;
    let dir = &opts.out;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let started = Instant::now();
    let mut m = RunManifest {
        kind: "curriculum".into(),
        seed: opts.seed,
        config: write_artifact(dir, CONFIG_FILE, cfg.render().as_bytes())?,
        config_hash: cfg.hash(),
        stages: Vec::new(),
        checkpoints: BTreeMap::new(),
        parent: None,
        complete: false,
        error: None,
        wall_clock_seconds: 0.0,
    };
    m.save(dir)?;
    for stage in &cfg.plan.stages {
        if let Err(e) = run_stage(cfg, opts, stage, &mut m) {
            m.error = Some(e.to_string());
            m.wall_clock_seconds = started.elapsed().as_secs_f64();
            m.save(dir)?;
            return Err(e);
        }
        m.wall_clock_seconds = started.elapsed().as_secs_f64();
        m.save(dir)?;
    }
    m.complete = true;
    m.save(dir)?;
    Ok(m)
}

fn run_stage(cfg: &RunConfig, opts: &RunOptions, stage: &StagePlan, m: &mut RunManifest) -> Result<()> {
    let dir = &opts.out;
    let started = Instant::now();
    let upstream: Vec<Checkpoint> = m.checkpoints.keys().map(|&k| m.load_checkpoint(dir, k)).collect::<Result<_>>()?;
    let frozen_before: BTreeMap<SkillId, String> = m.checkpoints.iter().map(|(k, a)| (*k, a.sha256.clone())).collect();

    let spec = cfg.stage_spec(stage, opts.seed)?;
    let trained = train_skill(stage.skill, &upstream, &spec, &m.config_hash)?;
    let name = stage.skill.to_string();
    let ckpt = write_artifact(dir, &checkpoint_rel(stage.skill), &trained.checkpoint.to_bytes())?;
    let metrics = metrics_artifact(dir, &name, &trained.metrics, opts.metrics_format)?;
    let trajectory = if cfg.plan.dump_trajectories {
        let lineup =
            Lineup::from_checkpoints(upstream.iter().chain(Some(&trained.checkpoint)), spec.config.eval_eps, opts.seed);
        Some(dump_episode(&lineup, &spec, seeding::derive_seed(opts.seed, &format!("dump/{name}")), dir, &name)?)
    } else {
        None
    };
    let frozen_after = m
        .checkpoints
        .iter()
        .map(|(k, a)| Ok((*k, hash_file(&dir.join(&a.path))?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    if frozen_after != frozen_before {
        return Err(Error::Integrity(format!("a frozen checkpoint changed during the {name} stage")));
    }
    m.checkpoints.insert(stage.skill, ckpt.clone());
    m.stages.push(StageRecord {
        name,
        skills: vec![stage.skill],
        phase: stage.phase.number(),
        spawn: stage.spawn.to_string(),
        budget: stage.budget,
        horizon: stage.horizon,
        frozen_before,
        frozen_after,
        checkpoints: BTreeMap::from([(stage.skill, ckpt)]),
        metrics,
        trajectory,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    });
    Ok(())
}

/// Adapts the phase-sensitive skills of a finished phase-1 run to the plan's
/// fine-tune phase. The listed skills restart from their phase-1 checkpoints
/// with fresh replay and ε restarting at `plan.finetune.eps_start`, and learn
/// together in the cadence loop with HA as the driver; every other skill runs
/// frozen. The new run directory receives byte copies of the frozen
/// checkpoints so it stands on its own.
pub fn finetune_phase2(phase1_dir: &Path, cfg: &RunConfig, opts: &RunOptions) -> Result<RunManifest> {
    cfg.plan.validate()?;
    let parent = RunManifest::load(phase1_dir)?;
    parent.require_complete(phase1_dir)?;
    parent.verify(phase1_dir)?;
    let ft = &cfg.plan.finetune;
    let dir = &opts.out;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let started = Instant::now();

    let mut m = RunManifest {
        kind: "finetune".into(),
        seed: opts.seed,
        config: write_artifact(dir, CONFIG_FILE, cfg.render().as_bytes())?,
        config_hash: cfg.hash(),
        stages: Vec::new(),
        checkpoints: BTreeMap::new(),
        parent: Some(ParentRun {
            dir: phase1_dir.display().to_string(),
            manifest_sha256: hash_file(&RunManifest::path(phase1_dir))?,
        }),
        complete: false,
        error: None,
        wall_clock_seconds: 0.0,
    };

    let result = (|| -> Result<()> {
        let all = parent.load_checkpoints(phase1_dir)?;
        let seed = seeding::derive_seed(opts.seed, "finetune");
        let eval_eps = cfg.dqn(SkillId::Ha)?.eval_eps;
        let mut lineup = Lineup::new();
        let mut frozen_before = BTreeMap::new();
        for (&k, c) in &all {
            if ft.skills.contains(&k) {
                let learner = DqnLearner::warm_start(c, cfg.dqn(k)?, ft.budget, seed, ft.eps_start)?;
                lineup.set(k, Slot::Learner(Box::new(learner)));
            } else {
                let a = write_artifact(
                    dir,
                    &checkpoint_rel(k),
                    &std::fs::read(phase1_dir.join(&parent.checkpoints[&k].path))
                        .map_err(|e| Error::io(phase1_dir, e))?,
                )?;
                if a.sha256 != parent.checkpoints[&k].sha256 {
                    return Err(Error::Integrity(format!("copy of the {k} checkpoint differs from its source")));
                }
                frozen_before.insert(k, a.sha256.clone());
                m.checkpoints.insert(k, a);
                lineup.set(k, Slot::Policy(crate::qlearn::GreedyPolicy::from_checkpoint(c, eval_eps, seed)));
            }
        }
        for k in &ft.skills {
            if !all.contains_key(k) {
                return Err(Error::MissingArtifact(phase1_dir.join(checkpoint_rel(*k))));
            }
        }
        let stage = StagePlan {
            skill: SkillId::Ha,
            budget: ft.budget,
            horizon: ft.horizon,
            spawn: ft.spawn,
            phase: ft.phase,
            ends_on_outcome: true,
        };
        let spec = cfg.stage_spec(&stage, seed)?;
        let rows = train_stage(&mut lineup, &spec)?;

        let frozen_hashes: BTreeMap<String, String> =
            frozen_before.iter().map(|(k, h)| (k.to_string(), h.clone())).collect();
        let mut tuned = Vec::new();
        let mut checkpoints = BTreeMap::new();
        for &k in &ft.skills {
            let learner = lineup.take_learner(k).expect("learner slot kept");
            let mut parents = frozen_hashes.clone();
            parents.insert("init".into(), parent.checkpoints[&k].sha256.clone());
            let ckpt = Checkpoint::from_learner(&learner, m.config_hash.clone(), parents);
            let a = write_artifact(dir, &checkpoint_rel(k), &ckpt.to_bytes())?;
            checkpoints.insert(k, a.clone());
            m.checkpoints.insert(k, a);
            lineup.set(k, Slot::Policy(crate::qlearn::GreedyPolicy::from_checkpoint(&ckpt, eval_eps, seed)));
            tuned.push(ckpt);
        }
        let metrics = metrics_artifact(dir, "finetune", &rows, opts.metrics_format)?;
        let trajectory = if cfg.plan.dump_trajectories {
            Some(dump_episode(&lineup, &spec, seeding::derive_seed(opts.seed, "dump/finetune"), dir, "finetune")?)
        } else {
            None
        };
        let frozen_after = frozen_before
            .keys()
            .map(|k| Ok((*k, hash_file(&dir.join(&m.checkpoints[k].path))?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        m.stages.push(StageRecord {
            name: "finetune".into(),
            skills: ft.skills.clone(),
            phase: ft.phase.number(),
            spawn: ft.spawn.to_string(),
            budget: ft.budget,
            horizon: ft.horizon,
            frozen_before,
            frozen_after,
            checkpoints,
            metrics,
            trajectory,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
        });
        Ok(())
    })();
    m.wall_clock_seconds = started.elapsed().as_secs_f64();
    if let Err(e) = result {
        m.error = Some(e.to_string());
        m.save(dir)?;
        return Err(e);
    }
    m.complete = true;
    m.save(dir)?;
    Ok(m)
}

/// Trains one skill against the frozen upstream checkpoints of `upstream_dir`
/// (none for the end-to-end policy). Upstream files are copied into the new
/// run directory.
pub fn train_single(
    cfg: &RunConfig,
    opts: &RunOptions,
    skill: SkillId,
    upstream_dir: Option<&Path>,
    budget: Option<u64>,
) -> Result<RunManifest> {
    let mut stage = cfg.plan.stage(skill).cloned().expect("every skill has a stage");
    if let Some(b) = budget {
        stage.budget = b;
    }
    let needed: Vec<SkillId> = if skill == SkillId::E2e {
        Vec::new()
    } else {
        STAGE_ORDER.iter().copied().take_while(|&k| k != skill).collect()
    };
    let parent = match (upstream_dir, needed.is_empty()) {
        (_, true) => None,
        (None, false) => {
            return Err(Error::usage(format!("training {skill} needs --load with its upstream checkpoints")))
        }
        (Some(d), false) => {
            let m = RunManifest::load(d)?;
            m.verify(d)?;
            Some((d, m))
        }
    };
    let dir = &opts.out;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let started = Instant::now();
    let mut m = RunManifest {
        kind: "train".into(),
        seed: opts.seed,
        config: write_artifact(dir, CONFIG_FILE, cfg.render().as_bytes())?,
        config_hash: cfg.hash(),
        stages: Vec::new(),
        checkpoints: BTreeMap::new(),
        parent: match &parent {
            Some((d, _)) => {
                Some(ParentRun { dir: d.display().to_string(), manifest_sha256: hash_file(&RunManifest::path(d))? })
            }
            None => None,
        },
        complete: false,
        error: None,
        wall_clock_seconds: 0.0,
    };
    if let Some((d, pm)) = &parent {
        for &k in &needed {
            let src = pm.checkpoints.get(&k).ok_or_else(|| Error::MissingArtifact(d.join(checkpoint_rel(k))))?;
            let bytes = std::fs::read(d.join(&src.path)).map_err(|e| Error::io(d.join(&src.path), e))?;
            m.checkpoints.insert(k, write_artifact(dir, &checkpoint_rel(k), &bytes)?);
        }
    }
    let result = run_stage(cfg, opts, &stage, &mut m);
    m.wall_clock_seconds = started.elapsed().as_secs_f64();
    if let Err(e) = result {
        m.error = Some(e.to_string());
        m.save(dir)?;
        return Err(e);
    }
    m.complete = true;
    m.save(dir)?;
    Ok(m)
}

/// Loads a run directory's manifest and checks every artifact.
pub fn open_run(dir: &Path) -> Result<(RunManifest, BTreeMap<SkillId, Checkpoint>)> {
    let m = RunManifest::load(dir)?;
    m.require_complete(dir)?;
    m.verify(dir)?;
    let ckpts = m.load_checkpoints(dir)?;
    Ok((m, ckpts))
}

/// Reads the configuration a run directory was produced with.
pub fn run_config(dir: &Path) -> Result<RunConfig> {
    RunConfig::load(&dir.join(CONFIG_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_plan_matches_documented_values() {
        let p = CurriculumPlan::default();
        let h: Vec<u32> = p.stages.iter().map(|s| s.horizon).collect();
        assert_eq!(h, vec![128, 64, 128, 512, 1024]);
        assert_eq!(p.e2e.horizon, 2048);
        assert_eq!(p.total_budget(), 180_000);
        assert_eq!(p.finetune.skills, vec![SkillId::Dodge, SkillId::Ha]);
        assert!(p.stages[..3].iter().all(|s| !s.ends_on_outcome));
    }

    #[test]
    fn plan_keys_round_trip() {
        let kv = KvConfig::parse("plan.cam.budget = 500\nplan.finetune.skills = ha\nplan.e2e.horizon = 99\n").unwrap();
        let mut p = CurriculumPlan::default();
        p.apply(&kv).unwrap();
        assert_eq!(p.stages[0].budget, 500);
        assert_eq!(p.finetune.skills, vec![SkillId::Ha]);
        assert_eq!(p.e2e.horizon, 99);
        let mut q = CurriculumPlan::default();
        q.apply(&KvConfig::from_pairs(p.to_kv())).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn finetune_cannot_touch_upstream() {
        let mut p = CurriculumPlan::default();
        let kv = KvConfig::parse("plan.finetune.skills = dodge,move\n").unwrap();
        assert!(matches!(p.apply(&kv), Err(Error::Config(_))));
    }

    #[test]
    fn run_config_rejects_unknown_keys() {
        let kv = KvConfig::parse("plan.cam.budgett = 5\n").unwrap();
        assert!(matches!(RunConfig::from_kv(&kv), Err(Error::Config(_))));
        let kv = KvConfig::parse("dqn.lr = 0.001\nrewards.ha_hit = 10\n").unwrap();
        let c = RunConfig::from_kv(&kv).unwrap();
        assert_eq!(c.dqn(SkillId::Cam).unwrap().lr, 0.001);
        let again = RunConfig::from_kv(&KvConfig::parse(&c.render()).unwrap()).unwrap();
        assert_eq!(again.hash(), c.hash());
    }
}
