//! Plain-text trajectory dumps and the replay audit that re-simulates them.
//!
//! A dump starts with the arena settings as `key = value` lines (the episode
//! seed included), followed by a CSV table with one row per tick: the five
//! composite slot indices that were applied and the 25 state features seen
//! before the tick. Floats are written in shortest round-trip form, so a
//! parsed dump holds exactly the recorded bits.

use std::fmt::Write as _;
use std::path::Path;

use crate::arena::{ArenaConfig, WorldState};
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::skills::cadence::EpisodeResult;
use crate::skills::CompositeAction;
use crate::state::{derive_features, GlobalState, GLOBAL_DIM};

const TITLE: &str = "# skillgraph trajectory v1";
const SLOTS: [&str; 5] = ["cam", "lock", "move", "dodge", "ha"];

#[derive(Debug, Clone, PartialEq)]
pub struct DumpTick {
    pub tick: u64,
    pub action: [usize; 5],
    pub state: GlobalState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDump {
    pub arena: ArenaConfig,
    pub ticks: Vec<DumpTick>,
}

/// Result of re-simulating a dump.
#[derive(Debug, Clone, PartialEq)]
pub enum AuditOutcome {
    Pass {
        ticks: usize,
    },
    /// First tick whose replayed state differs from the recorded one.
    Diverged {
        tick: u64,
        feature: usize,
        recorded: f64,
        replayed: f64,
    },
}

impl AuditOutcome {
    pub fn passed(&self) -> bool {
        matches!(self, AuditOutcome::Pass { .. })
    }
}

impl TrajectoryDump {
    /// Builds a dump from an episode run with `record` on.
    pub fn from_episode(arena: &ArenaConfig, r: &EpisodeResult) -> Result<Self> {
        if r.trajectory.len() as u64 != r.ticks {
            return Err(Error::usage("episode was not recorded"));
        }
        Ok(Self {
            arena: arena.clone(),
            ticks: r
                .trajectory
                .iter()
                .map(|t| DumpTick { tick: t.tick, action: t.composite.decompose(), state: t.state })
                .collect(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(TITLE);
        out.push('\n');
        out.push_str(&KvConfig::from_pairs(self.arena.to_kv()).render());
        out.push_str("tick");
        for s in SLOTS {
            out.push(',');
            out.push_str(s);
        }
        for i in 0..GLOBAL_DIM {
            let _ = write!(out, ",s{i}");
        }
        out.push('\n');
        for t in &self.ticks {
            let _ = write!(out, "{}", t.tick);
            for a in t.action {
                let _ = write!(out, ",{a}");
            }
            for x in t.state.0 {
                let _ = write!(out, ",{x}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Format(format!("trajectory: {msg}"));
        let mut lines = text.lines();
        if lines.next() != Some(TITLE) {
            return Err(bad("missing title line".into()));
        }
        let mut header = String::new();
        let mut found_table = false;
        for line in lines.by_ref() {
            if line.starts_with("tick,") {
                found_table = true;
                break;
            }
            header.push_str(line);
            header.push('\n');
        }
        if !found_table {
            return Err(bad("missing tick table".into()));
        }
        let mut arena = ArenaConfig::default();
        arena.apply(&KvConfig::parse(&header)?)?;

        let width = 1 + SLOTS.len() + GLOBAL_DIM;
        let mut ticks = Vec::new();
        for (n, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != width {
                return Err(bad(format!("row {n} has {} cells, expected {width}", cells.len())));
            }
            let tick = cells[0].parse().map_err(|_| bad(format!("row {n}: bad tick")))?;
            let mut action = [0usize; 5];
            for (slot, cell) in action.iter_mut().zip(&cells[1..6]) {
                *slot = cell.parse().map_err(|_| bad(format!("row {n}: bad action `{cell}`")))?;
            }
            let mut state = [0.0; GLOBAL_DIM];
            for (x, cell) in state.iter_mut().zip(&cells[6..]) {
                *x = cell.parse().map_err(|_| bad(format!("row {n}: bad feature `{cell}`")))?;
            }
            ticks.push(DumpTick { tick, action, state: GlobalState(state) });
        }
        Ok(Self { arena, ticks })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn first_difference(a: &GlobalState, b: &GlobalState) -> Option<usize> {
    (0..GLOBAL_DIM).find(|&i| a.0[i].to_bits() != b.0[i].to_bits())
}

/// Re-simulates the recorded actions from the recorded seed and compares every
/// state bit for bit. A differing initial state, or a seed other than
/// `expected_seed`, is reported as a seed mismatch error.
pub fn replay_audit(dump: &TrajectoryDump, expected_seed: Option<u64>) -> Result<AuditOutcome> {
    if let Some(seed) = expected_seed {
        if seed != dump.arena.seed {
            return Err(Error::Integrity(format!(
                "seed mismatch: dump was recorded with seed {}, expected {seed}",
                dump.arena.seed
            )));
        }
    }
    let mut world = WorldState::reset(&dump.arena)?;
    for (n, t) in dump.ticks.iter().enumerate() {
        let now = derive_features(&world);
        if let Some(i) = first_difference(&t.state, &now) {
            if n == 0 {
                return Err(Error::Integrity(format!(
                    "seed mismatch: seed {} does not reproduce the recorded initial state",
                    dump.arena.seed
                )));
            }
            return Ok(AuditOutcome::Diverged { tick: t.tick, feature: i, recorded: t.state.0[i], replayed: now.0[i] });
        }
        if world.outcome.is_terminal() {
            return Err(Error::Integrity(format!("dump continues past the end of the episode at tick {}", t.tick)));
        }
        world.step(&CompositeAction::from_indices(t.action)?)?;
    }
    Ok(AuditOutcome::Pass { ticks: dump.ticks.len() })
}
