//! Deterministic emulation of concurrently running skills.
//!
//! Every skill holds its last action for the action's hold duration on a
//! shared tick clock. On a tick where a skill's hold has expired it is queried
//! again from the current global state. The composite applied each tick merges
//! the most recent output of every skill: held controls (movement, camera)
//! repeat for the whole hold, key presses fire only on the first tick.
//!
//! A skill's transition spans from one of its decision ticks to the next.

use std::collections::BTreeMap;

use crate::arena::{ArenaConfig, Outcome, StepEvents, WorldState};
use crate::error::{Error, Result};
use crate::rewards::{skill_reward, RewardWeights, StepContext, TickDelta};
use crate::skills::{held_action, ActionTiming, CompositeAction, MoveAction, SkillId};
use crate::state::{derive_features, project, GlobalState};

/// One closed decision step of a skill. Observations are raw (unnormalized).
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// True only for real termination; horizon truncation bootstraps.
    pub done: bool,
    pub ticks: u32,
}

/// Anything that can drive one skill slot.
pub trait SkillAgent {
    fn select(&mut self, skill: SkillId, obs: &[f64]) -> Result<usize>;

    /// Receives each closed transition of the skill this agent drives.
    fn observe(&mut self, _skill: SkillId, _t: &Transition) -> Result<()> {
        Ok(())
    }
}

/// Always idle.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdleAgent;

impl SkillAgent for IdleAgent {
    fn select(&mut self, skill: SkillId, _obs: &[f64]) -> Result<usize> {
        Ok(skill.idle_index())
    }
}

/// Replays a fixed action for every query.
#[derive(Debug, Clone, Copy)]
pub struct ConstantAgent(pub usize);

impl SkillAgent for ConstantAgent {
    fn select(&mut self, skill: SkillId, _obs: &[f64]) -> Result<usize> {
        if self.0 >= skill.action_count() {
            return Err(Error::usage(format!("action {} out of range for {skill}", self.0)));
        }
        Ok(self.0)
    }
}

/// Episode limits and bookkeeping options.
#[derive(Debug, Clone)]
pub struct EpisodeSpec {
    pub arena: ArenaConfig,
    /// Skill whose decision steps count against `horizon`.
    pub driver: SkillId,
    pub horizon: u32,
    pub weights: RewardWeights,
    pub record: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub tick: u64,
    /// Global state before the tick was applied.
    pub state: GlobalState,
    pub composite: CompositeAction,
    pub events: StepEvents,
    pub delta: TickDelta,
    /// Skills queried on this tick and the action each picked.
    pub decisions: Vec<(SkillId, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub outcome: Outcome,
    pub ticks: u64,
    pub driver_steps: u32,
    pub returns: BTreeMap<SkillId, f64>,
    pub decisions: BTreeMap<SkillId, u64>,
    pub final_world: WorldState,
    pub trajectory: Vec<TickRecord>,
}

impl EpisodeResult {
    pub fn won(&self) -> bool {
        self.outcome == Outcome::BossDefeated
    }

    pub fn skill_return(&self, skill: SkillId) -> f64 {
        self.returns.get(&skill).copied().unwrap_or(0.0)
    }
}

struct Track {
    skill: SkillId,
    hold_left: u32,
    action: usize,
    fresh: bool,
    open: Option<OpenSpan>,
    decisions: u64,
    ret: f64,
}

struct OpenSpan {
    obs: Vec<f64>,
    delta: TickDelta,
    sideways: bool,
    ticks: u32,
}

fn is_sideways(m: MoveAction) -> bool {
    matches!(m, MoveAction::Left | MoveAction::Right)
}

impl Track {
    fn close(
        &mut self,
        end: &GlobalState,
        done: bool,
        weights: &RewardWeights,
        agent: &mut dyn SkillAgent,
    ) -> Result<()> {
        if let Some(span) = self.open.take() {
            let next_obs = project(end, self.skill).features;
            let reward =
                skill_reward(self.skill, &StepContext { delta: &span.delta, end, sideways: span.sideways }, weights);
            self.ret += reward;
            let t = Transition { obs: span.obs, action: self.action, reward, next_obs, done, ticks: span.ticks };
            agent.observe(self.skill, &t)?;
        }
        Ok(())
    }
}

/// Runs one episode from `world` with one agent per enabled skill. Skills not
/// listed contribute idle without being queried.
pub fn run_episode(
    mut world: WorldState,
    agents: &mut [(SkillId, &mut dyn SkillAgent)],
    spec: &EpisodeSpec,
) -> Result<EpisodeResult> {
    if world.outcome.is_terminal() {
        return Err(Error::usage("episode started from a terminal world"));
    }
    if spec.horizon == 0 {
        return Err(Error::usage("horizon must be positive"));
    }
    let mut seen = Vec::new();
    for (k, _) in agents.iter() {
        if seen.contains(k) {
            return Err(Error::usage(format!("skill {k} enabled twice")));
        }
        seen.push(*k);
    }
    if !seen.contains(&spec.driver) {
        return Err(Error::usage(format!("driver skill {} is not enabled", spec.driver)));
    }

    let timing = ActionTiming::new(spec.arena.tick_seconds);
    let mut tracks: Vec<Track> = agents
        .iter()
        .map(|(skill, _)| Track {
            skill: *skill,
            hold_left: 0,
            action: skill.idle_index(),
            fresh: false,
            open: None,
            decisions: 0,
            ret: 0.0,
        })
        .collect();
    let driver_slot = tracks.iter().position(|t| t.skill == spec.driver).expect("checked above");

    let mut gs = derive_features(&world);
    let mut trajectory = Vec::new();
    let mut driver_steps = 0u32;

    loop {
        if tracks[driver_slot].hold_left == 0 && driver_steps >= spec.horizon {
            for (track, (_, agent)) in tracks.iter_mut().zip(agents.iter_mut()) {
                track.close(&gs, false, &spec.weights, &mut **agent)?;
            }
            world.outcome = Outcome::Truncated;
            break;
        }

        let mut decided = Vec::new();
        for (track, (_, agent)) in tracks.iter_mut().zip(agents.iter_mut()) {
            if track.hold_left > 0 {
                continue;
            }
            track.close(&gs, false, &spec.weights, &mut **agent)?;
            let obs = project(&gs, track.skill).features;
            let action = agent.select(track.skill, &obs)?;
            if action >= track.skill.action_count() {
                return Err(Error::usage(format!("agent for {} returned action {action}", track.skill)));
            }
            track.action = action;
            track.hold_left = timing.hold_ticks(track.skill, action, world.estus_remaining);
            track.fresh = true;
            track.decisions += 1;
            track.open = Some(OpenSpan { obs, delta: TickDelta::default(), sideways: false, ticks: 0 });
            decided.push((track.skill, action));
        }
        if decided.iter().any(|(k, _)| *k == spec.driver) {
            driver_steps += 1;
        }

        let mut composite = CompositeAction::idle();
        for track in &tracks {
            let idx = if track.fresh { track.action } else { held_action(track.skill, track.action) };
            composite.set(track.skill, idx)?;
        }

        let events = world.step(&composite)?;
        let next = derive_features(&world);
        let delta = TickDelta::between(
            &gs,
            &next,
            world.outcome == Outcome::PlayerDead,
            world.outcome == Outcome::BossDefeated,
        );
        for track in tracks.iter_mut() {
            if let Some(span) = track.open.as_mut() {
                span.delta.accumulate(&delta);
                span.sideways |= is_sideways(composite.movement);
                span.ticks += 1;
            }
            track.hold_left -= 1;
            track.fresh = false;
        }
        if spec.record {
            trajectory.push(TickRecord {
                tick: world.tick - 1,
                state: gs,
                composite,
                events,
                delta,
                decisions: decided,
            });
        }
        gs = next;

        if world.outcome.is_terminal() {
            for (track, (_, agent)) in tracks.iter_mut().zip(agents.iter_mut()) {
                track.close(&gs, true, &spec.weights, &mut **agent)?;
            }
            break;
        }
    }

    Ok(EpisodeResult {
        outcome: world.outcome,
        ticks: world.tick,
        driver_steps,
        returns: tracks.iter().map(|t| (t.skill, t.ret)).collect(),
        decisions: tracks.iter().map(|t| (t.skill, t.decisions)).collect(),
        final_world: world,
        trajectory,
    })
}
