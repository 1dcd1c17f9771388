use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use skillgraph::curriculum::RunManifest;

const TINY: &str = "\
plan.cam.budget = 1500
plan.lock.budget = 1500
plan.move.budget = 1500
plan.dodge.budget = 2000
plan.ha.budget = 2000
plan.finetune.budget = 1500
plan.e2e.budget = 2000
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_skillgraph"));
    c.env_remove("SKILLGRAPH_OUT").env_remove("SKILLGRAPH_JOBS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A finished tiny curriculum shared by the tests that need checkpoints.
fn tiny_run() -> &'static (tempfile::TempDir, PathBuf, PathBuf) {
    static RUN: OnceLock<(tempfile::TempDir, PathBuf, PathBuf)> = OnceLock::new();
    RUN.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tmp.path().join("tiny.cfg");
        std::fs::write(&cfg, TINY).unwrap();
        let out = tmp.path().join("run");
        let o = run(&["curriculum", "--config", cfg.to_str().unwrap(), "--seed", "7", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        (tmp, cfg, out)
    })
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let dest = to.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &dest);
        } else {
            std::fs::copy(e.path(), dest).unwrap();
        }
    }
}

fn assert_error_line(o: &Output, kind: &str, exit: i32) {
    assert_eq!(code(o), exit, "{}", stderr(o));
    let err = stderr(o);
    let line = err.trim_end();
    assert!(!line.contains('\n'), "error spans several lines: {line}");
    assert!(line.starts_with(&format!("error kind={kind} code={exit}: ")), "{line}");
}

/// A flag and the default its help text must show, if any.
type Flag = (&'static str, Option<&'static str>);

#[test]
fn help_lists_every_flag_with_defaults() {
    let top = stdout(&run(&["--help"]));
    for cmd in [
        "train",
        "curriculum",
        "finetune",
        "eval",
        "ablate",
        "transfer",
        "e2e-baseline",
        "dodge-diag",
        "describe-actions",
        "describe-env",
        "replay",
    ] {
        assert!(top.contains(cmd), "top-level help misses {cmd}");
    }
    let global = [
        ("--config", None),
        ("--seed", Some("[default: 1]")),
        ("--out", None),
        ("--metrics-format", Some("[default: csv]")),
        ("--jobs", Some("[default: 1]")),
    ];
    let per_command: &[(&str, &[Flag])] = &[
        ("train", &[("--skill", None), ("--load", None), ("--steps", Some("[default: the plan's budget"))]),
        (
            "finetune",
            &[
                ("--load", None),
                ("--skills", Some("[default: the plan's list]")),
                ("--steps", Some("[default:")),
                ("--phase", Some("[default: 2]")),
            ],
        ),
        (
            "eval",
            &[
                ("--load", None),
                ("--phase", Some("[default: 1]")),
                ("--spawn", Some("[default: mid]")),
                ("--episodes", Some("[default: 25]")),
                ("--skill", Some("[default: ha]")),
            ],
        ),
        (
            "ablate",
            &[
                ("--randomize", Some("[default:")),
                ("--episodes", Some("[default: 25]")),
                ("--phase", Some("[default: 1]")),
            ],
        ),
        ("transfer", &[("--load", None), ("--steps", Some("[default:")), ("--episodes", Some("[default: 25]"))]),
        ("e2e-baseline", &[("--steps", Some("[default:")), ("--episodes", Some("[default: 25]"))]),
        ("dodge-diag", &[("--load", None), ("--episodes", Some("[default: 25]"))]),
        ("replay", &[("--expect-seed", None)]),
    ];
    for (cmd, flags) in per_command {
        let o = run(&[cmd, "--help"]);
        assert_eq!(code(&o), 0);
        let help = stdout(&o);
        for (flag, default) in global.iter().chain(flags.iter()) {
            let line = help
                .lines()
                .skip_while(|l| !l.trim_start().starts_with(flag) && !l.contains(&format!(", {flag}")))
                .take(3)
                .collect::<Vec<_>>()
                .join(" ");
            assert!(!line.is_empty(), "`{cmd} --help` misses {flag}");
            if let Some(d) = default {
                assert!(line.contains(d), "`{cmd} --help` shows no default for {flag}: {line}");
            }
        }
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_error_line(&run(&["eval", "--bogus"]), "usage", 2);
    assert_error_line(&run(&["eval", "--load", "x", "--phase", "3"]), "usage", 2);
    assert_error_line(&run(&["curriculum"]), "usage", 2);
}

#[test]
fn missing_checkpoint_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let nowhere = tmp.path().join("nothing-here");
    assert_error_line(&run(&["eval", "--load", nowhere.to_str().unwrap()]), "missing_artifact", 3);

    let (_, _, out) = tiny_run();
    let copy = tmp.path().join("copy");
    copy_dir(out, &copy);
    std::fs::remove_file(copy.join("checkpoints/dodge.ckpt")).unwrap();
    assert_error_line(&run(&["eval", "--load", copy.to_str().unwrap()]), "missing_artifact", 3);
}

#[test]
fn malformed_config_exits_6() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    for body in ["plan.cam.budgett = 10\n", "dqn.lr = fast\n", "this line has no equals sign\n", "arena.phase = 3\n"] {
        let cfg = tmp.path().join("bad.cfg");
        std::fs::write(&cfg, body).unwrap();
        let o = run(&["curriculum", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_error_line(&o, "config", 6);
        assert!(!out.join("manifest.json").exists(), "config error after work started");
    }
}

#[test]
fn describe_commands_print_tables() {
    let o = run(&["describe-actions"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    for (skill, n) in [("cam", 5), ("lock", 2), ("move", 9), ("dodge", 2), ("ha", 3), ("e2e", 16)] {
        assert!(text.contains(&format!("{skill}: {n} actions")), "{text}");
    }
    let o = run(&["describe-env"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("global state: 25 features"));
}

#[test]
fn curriculum_writes_a_self_contained_run() {
    let (_, _, out) = tiny_run();
    let m = RunManifest::load(out).unwrap();
    assert!(m.complete);
    assert_eq!(m.checkpoints.len(), 5);
    m.verify(out).unwrap();
    assert!(out.join("config.cfg").exists());

    // Evaluation finds its config in the run directory.
    let o = run(&["eval", "--load", out.to_str().unwrap(), "--episodes", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("win_rate="));

    let o =
        run(&["ablate", "--randomize", "dodge,ha", "--episodes", "3", "--phase", "1", "--load", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("report=ablate_dodge_ha") && stdout(&o).contains("win_rate="));
}

#[test]
fn transfer_writes_three_reports() {
    let (tmp, _, out) = tiny_run();
    let p2 = tmp.path().join("p2");
    let o = bin()
        .args(["transfer", "--load", out.to_str().unwrap(), "--episodes", "3"])
        .env("SKILLGRAPH_OUT", &p2)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for name in ["zero_shot_mid", "zero_shot_long", "finetuned_mid"] {
        assert!(stdout(&o).contains(&format!("report={name}")), "{}", stdout(&o));
        assert!(p2.join("reports").join(format!("{name}.json")).exists());
    }
    RunManifest::load(&p2).unwrap().verify(&p2).unwrap();
}

#[test]
fn replay_audits_every_dump() {
    let (tmp, _, out) = tiny_run();
    let m = RunManifest::load(out).unwrap();
    let dumps: Vec<PathBuf> =
        m.stages.iter().filter_map(|s| s.trajectory.as_ref()).map(|a| out.join(&a.path)).collect();
    assert_eq!(dumps.len(), 5);
    for d in &dumps {
        let o = run(&["replay", d.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stdout(&o).starts_with("replay=pass"));
    }

    let dump = skillgraph::trajectory::TrajectoryDump::load(&dumps[4]).unwrap();
    let o = run(&["replay", dumps[4].to_str().unwrap(), "--expect-seed", &(dump.arena.seed + 1).to_string()]);
    assert_error_line(&o, "integrity", 4);
    assert!(stderr(&o).contains("seed mismatch"));

    // Flip one movement key after the first tick whose change is visible.
    let text = std::fs::read_to_string(&dumps[4]).unwrap();
    let mut tampered = None;
    for k in 0..dump.ticks.len() - 1 {
        let mut d = dump.clone();
        d.ticks[k].action[2] = (d.ticks[k].action[2] + 1) % 9;
        if let Ok(skillgraph::trajectory::AuditOutcome::Diverged { tick, .. }) =
            skillgraph::trajectory::replay_audit(&d, None)
        {
            tampered = Some((d, tick));
            break;
        }
    }
    let (d, tick) = tampered.expect("no visible flip");
    let path = tmp.path().join("tampered.csv");
    d.save(&path).unwrap();
    assert_ne!(std::fs::read_to_string(&path).unwrap(), text);
    let o = run(&["replay", path.to_str().unwrap()]);
    assert_error_line(&o, "integrity", 4);
    assert!(stderr(&o).contains(&format!("diverged at tick {tick}")), "{}", stderr(&o));
}

#[test]
fn tampered_checkpoint_exits_4() {
    let (tmp, _, out) = tiny_run();
    let copy = tmp.path().join("tampered-run");
    copy_dir(out, &copy);
    let ckpt = copy.join("checkpoints/move.ckpt");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x01;
    std::fs::write(&ckpt, bytes).unwrap();
    assert_error_line(&run(&["eval", "--load", copy.to_str().unwrap(), "--episodes", "1"]), "integrity", 4);
    assert_error_line(
        &run(&[
            "train",
            "--skill",
            "dodge",
            "--load",
            copy.to_str().unwrap(),
            "--steps",
            "10",
            "--out",
            tmp.path().join("t").to_str().unwrap(),
        ]),
        "integrity",
        4,
    );
}
