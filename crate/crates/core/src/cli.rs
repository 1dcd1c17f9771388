//! Command-line front end. Every failure ends in one stderr line of the form
//! `error kind=<kind> code=<n>: <message>` and the matching exit status.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::arena::{Phase, SpawnMode, CLOSE_RANGE};
use crate::curriculum::{self, parse_skill_list, RunConfig, RunManifest, RunOptions};
use crate::error::{Error, Result};
use crate::evalharness::{self, EvalReport, EvalSpec, Source};
use crate::qlearn::train::{read_metrics, MetricsFormat};
use crate::qlearn::Checkpoint;
use crate::skills::{hold_duration, is_impulse, SkillId};
use crate::state::{feature_indices, FEATURE_NAMES, GLOBAL_DIM};
use crate::trajectory::{replay_audit, AuditOutcome, TrajectoryDump};

#[derive(Debug, Parser)]
#[command(name = "skillgraph", version, about = "Train, evaluate and audit skill-graph combat agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Flat `key = value` config file (arena., dqn., plan., rewards. keys)
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Master seed of the run
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,

    /// Output directory
    #[arg(long, global = true, value_name = "DIR", env = "SKILLGRAPH_OUT")]
    pub out: Option<PathBuf>,

    /// Metrics file format (csv or json)
    #[arg(long, global = true, default_value = "csv", value_parser = parse_format)]
    pub metrics_format: MetricsFormat,

    /// Worker threads for evaluation episodes
    #[arg(long, global = true, default_value_t = 1, env = "SKILLGRAPH_JOBS")]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one skill against frozen upstream checkpoints
    Train(TrainArgs),
    /// Train cam, lock, move, dodge and ha in order
    Curriculum,
    /// Fine-tune the phase-sensitive skills of a finished run on phase 2
    Finetune(FinetuneArgs),
    /// Evaluate the composed agent (or the end-to-end policy)
    Eval(EvalArgs),
    /// Evaluate with some skills replaced by uniform random policies
    Ablate(AblateArgs),
    /// Zero-shot phase-2 evaluation, fine-tuning, and fine-tuned evaluation
    Transfer(TransferArgs),
    /// Train and evaluate the monolithic 16-action baseline
    E2eBaseline(E2eArgs),
    /// Episode length of the trained DODGE against a random DODGE
    DodgeDiag(DodgeDiagArgs),
    /// List every skill's actions with hold durations
    DescribeActions(DescribeActionsArgs),
    /// List the state features and per-skill observations
    DescribeEnv,
    /// Re-simulate a trajectory dump and compare it bit for bit
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Skill to train: cam, lock, move, dodge, ha or e2e
    #[arg(long, value_parser = parse_skill)]
    pub skill: SkillId,
    /// Run directory holding the upstream checkpoints
    #[arg(long, value_name = "DIR")]
    pub load: Option<PathBuf>,
    /// Decision-step budget [default: the plan's budget for the skill]
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Phase-1 run directory
    #[arg(long, value_name = "DIR")]
    pub load: PathBuf,
    /// Skills to adapt, comma separated (dodge, ha) [default: the plan's list]
    #[arg(long, value_name = "LIST")]
    pub skills: Option<String>,
    /// Decision-step budget [default: the plan's fine-tune budget]
    #[arg(long)]
    pub steps: Option<u64>,
    /// Phase to adapt to
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub phase: u8,
}

#[derive(Debug, Args)]
pub struct EvalTarget {
    /// Run directory with the checkpoints
    #[arg(long, value_name = "DIR")]
    pub load: PathBuf,
    /// Boss phase
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub phase: u8,
    /// Player spawn: mid, long or random
    #[arg(long, default_value = "mid", value_parser = parse_spawn)]
    pub spawn: SpawnMode,
    /// Episodes per evaluation
    #[arg(long, default_value_t = evalharness::DEFAULT_EPISODES)]
    pub episodes: u32,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub target: EvalTarget,
    /// Evaluate the composed agent (ha) or the end-to-end policy (e2e)
    #[arg(long, default_value = "ha", value_parser = parse_skill)]
    pub skill: SkillId,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub target: EvalTarget,
    /// Skills to randomize, comma separated [default: the four ha/dodge settings]
    #[arg(long, value_name = "LIST")]
    pub randomize: Option<String>,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    /// Phase-1 run directory
    #[arg(long, value_name = "DIR")]
    pub load: PathBuf,
    /// Fine-tune budget [default: the plan's fine-tune budget]
    #[arg(long)]
    pub steps: Option<u64>,
    /// Episodes per evaluation
    #[arg(long, default_value_t = evalharness::DEFAULT_EPISODES)]
    pub episodes: u32,
}

#[derive(Debug, Args)]
pub struct E2eArgs {
    /// Decision-step budget [default: the plan's e2e budget]
    #[arg(long)]
    pub steps: Option<u64>,
    /// Episodes of the final evaluation
    #[arg(long, default_value_t = evalharness::DEFAULT_EPISODES)]
    pub episodes: u32,
}

#[derive(Debug, Args)]
pub struct DodgeDiagArgs {
    /// Run directory with the dodge checkpoint
    #[arg(long, value_name = "DIR")]
    pub load: PathBuf,
    /// Episodes per policy
    #[arg(long, default_value_t = evalharness::DEFAULT_EPISODES)]
    pub episodes: u32,
}

#[derive(Debug, Args)]
pub struct DescribeActionsArgs {
    /// Only this skill
    #[arg(long, value_parser = parse_skill)]
    pub skill: Option<SkillId>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Trajectory dump
    pub path: PathBuf,
    /// Fail unless the dump was recorded with this seed
    #[arg(long = "expect-seed")]
    pub expect_seed: Option<u64>,
}

fn parse_skill(s: &str) -> std::result::Result<SkillId, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_spawn(s: &str) -> std::result::Result<SpawnMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_format(s: &str) -> std::result::Result<MetricsFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parses `argv`, runs the command, prints its summary to stdout, and returns
/// the exit status.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            let msg = first.trim_start_matches("error: ");
            eprintln!("error kind=usage code=2: {msg}");
            return 2;
        }
    };
    match run(&cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            0
        }
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error kind={} code={}: {msg}", e.kind(), e.exit_code());
            e.exit_code()
        }
    }
}

fn require_out(cli: &Cli) -> Result<&Path> {
    cli.out.as_deref().ok_or_else(|| Error::usage("--out is required for this command"))
}

fn resolve_config(cli: &Cli, load: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match (&cli.config, load) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(dir)) => curriculum::run_config(dir)?,
        (None, None) => RunConfig::default(),
    };
    if cli.jobs == 0 {
        return Err(Error::usage("--jobs must be at least 1"));
    }
    cfg.jobs = cli.jobs;
    Ok(cfg)
}

fn options(cli: &Cli) -> Result<RunOptions> {
    Ok(RunOptions { out: require_out(cli)?.to_path_buf(), seed: cli.seed, metrics_format: cli.metrics_format })
}

fn manifest_lines(dir: &Path, m: &RunManifest) -> Vec<String> {
    let mut out = vec![format!("run={} kind={} config_hash={}", dir.display(), m.kind, m.config_hash)];
    for (k, a) in &m.checkpoints {
        out.push(format!("checkpoint skill={k} path={} sha256={}", a.path, a.sha256));
    }
    for s in &m.stages {
        out.push(format!("metrics stage={} path={}", s.name, s.metrics.path));
    }
    out
}

fn report_line(name: &str, r: &EvalReport) -> String {
    format!(
        "report={name} phase={} spawn={} episodes={} win_rate={:.4} return_mean={:.4} return_ci95={:.4} ep_len_mean={:.2}",
        r.phase,
        r.spawn,
        r.episodes,
        r.win_rate,
        r.returns[&r.driver].mean,
        r.returns[&r.driver].ci95,
        r.episode_length.mean
    )
}

fn write_report(cli: &Cli, name: &str, r: &EvalReport) -> Result<()> {
    if let Some(out) = &cli.out {
        r.write(&out.join("reports"), name)?;
    }
    Ok(())
}

fn eval_base(cli: &Cli, cfg: &RunConfig, t: &EvalTarget) -> Result<EvalSpec> {
    if t.episodes == 0 {
        return Err(Error::usage("--episodes must be at least 1"));
    }
    EvalSpec::composed_for(cfg, Phase::from_number(t.phase.into())?, t.spawn, t.episodes, cli.seed)
}

fn load_run(dir: &Path) -> Result<BTreeMap<SkillId, Checkpoint>> {
    Ok(curriculum::open_run(dir)?.1)
}

pub fn run(cli: &Cli) -> Result<Vec<String>> {
    match &cli.command {
        Command::Train(a) => {
            let opts = options(cli)?;
            let cfg = resolve_config(cli, None)?;
            let m = curriculum::train_single(&cfg, &opts, a.skill, a.load.as_deref(), a.steps)?;
            Ok(manifest_lines(&opts.out, &m))
        }
        Command::Curriculum => {
            let opts = options(cli)?;
            let cfg = resolve_config(cli, None)?;
            let m = curriculum::run_curriculum(&cfg, &opts)?;
            Ok(manifest_lines(&opts.out, &m))
        }
        Command::Finetune(a) => {
            let opts = options(cli)?;
            let mut cfg = resolve_config(cli, Some(&a.load))?;
            if let Some(list) = &a.skills {
                cfg.plan.finetune.skills = parse_skill_list(list)?;
            }
            if let Some(s) = a.steps {
                cfg.plan.finetune.budget = s;
            }
            cfg.plan.finetune.phase = Phase::from_number(a.phase.into())?;
            cfg.plan.validate().map_err(|e| Error::usage(e.to_string()))?;
            let m = curriculum::finetune_phase2(&a.load, &cfg, &opts)?;
            Ok(manifest_lines(&opts.out, &m))
        }
        Command::Eval(a) => {
            let cfg = resolve_config(cli, Some(&a.target.load))?;
            let ckpts = load_run(&a.target.load)?;
            let spec = match a.skill {
                SkillId::Ha => eval_base(cli, &cfg, &a.target)?,
                SkillId::E2e => {
                    let mut s = EvalSpec::for_stage(&cfg, SkillId::E2e, Source::Trained, a.target.episodes, cli.seed)?;
                    s.arena.phase = Phase::from_number(a.target.phase.into())?;
                    s.arena.spawn_mode = a.target.spawn;
                    s
                }
                other => return Err(Error::usage(format!("eval drives ha or e2e, not {other}"))),
            };
            let r = evalharness::evaluate(&spec, &ckpts)?;
            write_report(cli, "eval", &r)?;
            Ok(vec![report_line("eval", &r)])
        }
        Command::Ablate(a) => {
            let randomized = match &a.randomize {
                Some(list) => Some(parse_skill_list(list)?),
                None => None,
            };
            if let Some(list) = &randomized {
                if list.contains(&SkillId::E2e) {
                    return Err(Error::usage("e2e cannot be randomized inside the composed agent"));
                }
            }
            let cfg = resolve_config(cli, Some(&a.target.load))?;
            let ckpts = load_run(&a.target.load)?;
            let base = eval_base(cli, &cfg, &a.target)?;
            match randomized {
                Some(list) => {
                    let spec = list.iter().fold(base, |s, &k| s.with_source(k, Source::Random));
                    let r = evalharness::evaluate(&spec, &ckpts)?;
                    let name = format!("ablate_{}", list.iter().map(|k| k.as_str()).collect::<Vec<_>>().join("_"));
                    write_report(cli, &name, &r)?;
                    Ok(vec![report_line(&name, &r)])
                }
                None => {
                    let rows = evalharness::ablation_table(&base, &ckpts)?;
                    let mut lines = Vec::new();
                    for row in &rows {
                        write_report(cli, &row.label(), &row.report)?;
                        lines.push(report_line(&row.label(), &row.report));
                    }
                    Ok(lines)
                }
            }
        }
        Command::Transfer(a) => {
            let opts = options(cli)?;
            let mut cfg = resolve_config(cli, Some(&a.load))?;
            if let Some(s) = a.steps {
                cfg.plan.finetune.budget = s;
            }
            if a.episodes == 0 {
                return Err(Error::usage("--episodes must be at least 1"));
            }
            let phase1 = load_run(&a.load)?;
            let m = curriculum::finetune_phase2(&a.load, &cfg, &opts)?;
            let tuned = m.load_checkpoints(&opts.out)?;
            let target =
                EvalTarget { load: a.load.clone(), phase: 2, spawn: SpawnMode::FixedMidRange, episodes: a.episodes };
            let base = eval_base(cli, &cfg, &target)?;
            let t = evalharness::transfer_eval(&base, &phase1, Some(&tuned))?;
            let mut lines = manifest_lines(&opts.out, &m);
            for (name, r) in [
                ("zero_shot_mid", Some(&t.zero_shot_mid)),
                ("zero_shot_long", Some(&t.zero_shot_long)),
                ("finetuned_mid", t.finetuned.as_ref()),
            ] {
                if let Some(r) = r {
                    write_report(cli, name, r)?;
                    lines.push(report_line(name, r));
                }
            }
            Ok(lines)
        }
        Command::E2eBaseline(a) => {
            let opts = options(cli)?;
            let cfg = resolve_config(cli, None)?;
            if a.episodes == 0 || a.steps == Some(0) {
                return Err(Error::usage("--steps and --episodes must be at least 1"));
            }
            let m = curriculum::train_single(&cfg, &opts, SkillId::E2e, None, a.steps)?;
            let ckpt = m.load_checkpoint(&opts.out, SkillId::E2e)?;
            let curve = read_metrics(&opts.out.join(&m.stages[0].metrics.path))?;
            let b = evalharness::e2e_summary(&cfg, ckpt, curve, a.episodes, cli.seed)?;
            b.write(&opts.out)?;
            let p = &b.length_plateau;
            Ok(vec![
                report_line("e2e_eval", &b.report),
                format!(
                    "plateau first_quarter_len={:.2} last_quarter_len={:.2} tolerance={:.2} plateau={} rising={}",
                    p.first_quarter.mean,
                    p.last_quarter.mean,
                    p.first_quarter.ci95.max(p.last_quarter.ci95),
                    p.plateau,
                    p.rising
                ),
            ])
        }
        Command::DodgeDiag(a) => {
            if a.episodes == 0 {
                return Err(Error::usage("--episodes must be at least 1"));
            }
            let cfg = resolve_config(cli, Some(&a.load))?;
            let (m, ckpts) = curriculum::open_run(&a.load)?;
            let metrics = m.stages.iter().find(|s| s.name == "dodge").map(|s| a.load.join(&s.metrics.path));
            let d = evalharness::dodge_diagnostics(&cfg, &ckpts, metrics.as_deref(), a.episodes, cli.seed)?;
            if let Some(out) = &cli.out {
                std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
                let path = out.join("dodge_diag.json");
                let bytes = serde_json::to_vec_pretty(&d).map_err(|e| Error::Format(e.to_string()))?;
                std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            }
            let mut lines: Vec<String> =
                d.curve.iter().map(|(s, l)| format!("curve step={s} ep_len_mean={l:.2}")).collect();
            lines.push(format!(
                "dodge trained_len={:.2} random_len={:.2} ratio={:.3}",
                d.trained_length.mean, d.random_length.mean, d.ratio
            ));
            Ok(lines)
        }
        Command::DescribeActions(a) => {
            let skills: Vec<SkillId> = match a.skill {
                Some(k) => vec![k],
                None => SkillId::ALL.to_vec(),
            };
            let mut lines = Vec::new();
            for k in skills {
                lines.push(format!("{k}: {} actions", k.action_count()));
                for (i, label) in k.action_labels().iter().enumerate() {
                    let (full, empty) = (hold_duration(k, i, 1), hold_duration(k, i, 0));
                    let hold =
                        if full == empty { format!("{full}") } else { format!("{full} ({empty} with an empty flask)") };
                    let kind = if is_impulse(k, i) { "press" } else { "held" };
                    lines.push(format!("  {i:>2} {label:<14} {kind:<5} hold_ticks={hold}"));
                }
            }
            Ok(lines)
        }
        Command::DescribeEnv => {
            let mut lines = vec![format!("global state: {GLOBAL_DIM} features")];
            for (i, name) in FEATURE_NAMES.iter().enumerate() {
                lines.push(format!("  {i:>2} {name}"));
            }
            for k in SkillId::ALL {
                let names: Vec<&str> = feature_indices(k).iter().map(|&i| FEATURE_NAMES[i]).collect();
                lines.push(format!("{k}: obs_dim={} actions={} [{}]", k.obs_dim(), k.action_count(), names.join(", ")));
            }
            lines.push(format!(
                "boss hp {} (phase 1 ends below {}, phase 2 below {}); close range {CLOSE_RANGE}",
                crate::arena::BOSS_HP_MAX,
                crate::arena::PHASE1_FLOOR,
                crate::arena::PHASE2_FLOOR
            ));
            Ok(lines)
        }
        Command::Replay(a) => {
            let dump = TrajectoryDump::load(&a.path)?;
            match replay_audit(&dump, a.expect_seed)? {
                AuditOutcome::Pass { ticks } => Ok(vec![format!("replay=pass ticks={ticks} seed={}", dump.arena.seed)]),
                AuditOutcome::Diverged { tick, feature, recorded, replayed } => Err(Error::Integrity(format!(
                    "replay diverged at tick {tick}: feature {} recorded {recorded} replayed {replayed}",
                    FEATURE_NAMES[feature]
                ))),
            }
        }
    }
}
