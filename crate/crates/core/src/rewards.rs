//! Shaped per-skill rewards.
//!
//! All functions are pure. The DODGE and HA terms are evaluated over one
//! decision step of the skill: the deltas are summed over the ticks the step
//! spans, the terminal flags are raised if the episode ended inside it, and the
//! state terms (alive bonus, stamina indicator) are taken once at its end.

use serde::{Deserialize, Serialize};

use crate::arena::{Phase, BOSS_HP_MAX, PLAYER_DAMAGE};
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::skills::SkillId;
use crate::state::GlobalState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub cam_eps: f64,
    pub cam_align_bonus: bool,
    pub move_lambda: f64,
    pub move_circling: bool,
    pub move_d_min: f64,
    pub dodge_alive: f64,
    pub dodge_dmg: f64,
    pub dodge_dead: f64,
    pub dodge_eps: f64,
    pub ha_dmg: f64,
    pub ha_hit: f64,
    pub ha_dead: f64,
    pub ha_success: f64,
    /// Adds `-1[stamina < ha_eps]` to HA. Off by default.
    pub ha_stamina_penalty: bool,
    pub ha_eps: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            cam_eps: 0.6,
            cam_align_bonus: true,
            move_lambda: 0.1,
            move_circling: false,
            move_d_min: 3.0,
            dodge_alive: 0.02,
            dodge_dmg: 5.0,
            dodge_dead: 5.0,
            dodge_eps: 0.05,
            ha_dmg: 5.0,
            ha_hit: 15.0,
            ha_dead: 5.0,
            ha_success: 5.0,
            ha_stamina_penalty: false,
            ha_eps: 0.05,
        }
    }
}

macro_rules! weight_keys {
    ($($field:ident : $kind:ident),+ $(,)?) => {
        impl RewardWeights {
            pub const KEYS: &'static [&'static str] = &[$(concat!("rewards.", stringify!($field))),+];

            pub fn apply(&mut self, kv: &KvConfig) -> Result<()> {
                $(weight_keys!(@read self, kv, $field, $kind);)+
                Ok(())
            }

            pub fn to_kv(&self) -> Vec<(String, String)> {
                vec![$((concat!("rewards.", stringify!($field)).to_string(), self.$field.to_string())),+]
            }
        }
    };
    (@read $s:ident, $kv:ident, $field:ident, f64) => {
        if let Some(v) = $kv.get_f64(concat!("rewards.", stringify!($field)))? {
            if !v.is_finite() {
                return Err(Error::config(concat!("rewards.", stringify!($field), " must be finite")));
            }
            $s.$field = v;
        }
    };
    (@read $s:ident, $kv:ident, $field:ident, bool) => {
        if let Some(v) = $kv.get_bool(concat!("rewards.", stringify!($field)))? {
            $s.$field = v;
        }
    };
}

weight_keys!(
    cam_eps: f64,
    cam_align_bonus: bool,
    move_lambda: f64,
    move_circling: bool,
    move_d_min: f64,
    dodge_alive: f64,
    dodge_dmg: f64,
    dodge_dead: f64,
    dodge_eps: f64,
    ha_dmg: f64,
    ha_hit: f64,
    ha_dead: f64,
    ha_success: f64,
    ha_stamina_penalty: bool,
    ha_eps: f64,
);

/// Change of the combat variables over one tick (or summed over a span).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TickDelta {
    pub dh: f64,
    pub dhe: f64,
    pub dsigma: f64,
    pub destus: f64,
    pub agent_dead: bool,
    pub enemy_dead: bool,
}

impl TickDelta {
    pub fn between(prev: &GlobalState, next: &GlobalState, agent_dead: bool, enemy_dead: bool) -> Self {
        Self {
            dh: next.hp() - prev.hp(),
            dhe: next.boss_hp() - prev.boss_hp(),
            dsigma: next.stamina() - prev.stamina(),
            destus: next.estus() - prev.estus(),
            agent_dead,
            enemy_dead,
        }
    }

    pub fn accumulate(&mut self, other: &TickDelta) {
        self.dh += other.dh;
        self.dhe += other.dhe;
        self.dsigma += other.dsigma;
        self.destus += other.destus;
        self.agent_dead |= other.agent_dead;
        self.enemy_dead |= other.enemy_dead;
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

pub fn reward_cam(alpha: f64, w: &RewardWeights) -> f64 {
    let bonus = if w.cam_align_bonus { indicator(alpha < w.cam_eps) } else { 0.0 };
    -alpha + bonus
}

pub fn reward_lock(lock_on: bool) -> f64 {
    indicator(lock_on) - indicator(!lock_on)
}

/// `sideways` reports whether the step was a lateral move (only read when the
/// circling bonus is enabled).
pub fn reward_move(d: f64, sideways: bool, w: &RewardWeights) -> f64 {
    let bonus = if w.move_circling { indicator(d < w.move_d_min && sideways) } else { 0.0 };
    -w.move_lambda * d + bonus
}

pub fn reward_dodge(delta: &TickDelta, sigma: f64, w: &RewardWeights) -> f64 {
    w.dodge_alive + w.dodge_dmg * delta.dh - w.dodge_dead * indicator(delta.agent_dead) - indicator(sigma < w.dodge_eps)
}

pub fn reward_ha(delta: &TickDelta, w: &RewardWeights) -> f64 {
    w.ha_dmg * delta.dh - w.ha_hit * delta.dhe - w.ha_dead * indicator(delta.agent_dead)
        + w.ha_success * indicator(delta.enemy_dead)
}

/// Stamina-aware HA variant, used when `ha_stamina_penalty` is set.
pub fn reward_ha_with_stamina(delta: &TickDelta, sigma: f64, w: &RewardWeights) -> f64 {
    let penalty = if w.ha_stamina_penalty { indicator(sigma < w.ha_eps) } else { 0.0 };
    reward_ha(delta, w) - penalty
}

pub fn reward_e2e(delta: &TickDelta, w: &RewardWeights) -> f64 {
    reward_ha(delta, w)
}

/// What a skill's reward needs from one closed decision step.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub delta: &'a TickDelta,
    pub end: &'a GlobalState,
    pub sideways: bool,
}

pub fn skill_reward(skill: SkillId, ctx: &StepContext<'_>, w: &RewardWeights) -> f64 {
    match skill {
        SkillId::Cam => reward_cam(ctx.end.angle(), w),
        SkillId::Lock => reward_lock(ctx.end.lock_on()),
        SkillId::Move => reward_move(ctx.end.distance(), ctx.sideways, w),
        SkillId::Dodge => reward_dodge(ctx.delta, ctx.end.stamina(), w),
        SkillId::Ha => reward_ha_with_stamina(ctx.delta, ctx.end.stamina(), w),
        SkillId::E2e => reward_e2e(ctx.delta, w),
    }
}

/// Per-episode DODGE return when every one of `horizon` steps is survived
/// without damage or exhaustion.
pub fn dodge_return_max(horizon: u32, w: &RewardWeights) -> f64 {
    w.dodge_alive * horizon as f64
}

/// Per-episode HA return when every point of boss hp the phase allows is
/// dealt without taking damage: the last blow can overshoot the floor by at
/// most one maximal player hit.
pub fn ha_return_max(phase: Phase, w: &RewardWeights) -> f64 {
    let overshoot = PLAYER_DAMAGE.1 as f64;
    let drop = phase.starting_boss_hp() - (phase.boss_floor() - overshoot).max(0.0);
    w.ha_hit * drop / BOSS_HP_MAX + w.ha_success
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn camera_examples() {
        let w = RewardWeights::default();
        close(reward_cam(0.0, &w), 1.0);
        close(reward_cam(PI, &w), -PI);
        close(reward_cam(0.5, &w), 0.5);
        close(reward_cam(0.6, &w), -0.6);
    }

    #[test]
    fn lock_and_move_examples() {
        let w = RewardWeights::default();
        close(reward_lock(true), 1.0);
        close(reward_lock(false), -1.0);
        close((0..7).map(|_| reward_lock(true)).sum(), 7.0);
        close(reward_move(5.0, false, &w), -0.5);
        close(reward_move(0.0, true, &w), 0.0);
        close(reward_move(10.0, false, &w), -1.0);
        let circ = RewardWeights { move_circling: true, ..w };
        close(reward_move(2.0, true, &circ), 0.8);
        close(reward_move(2.0, false, &circ), -0.2);
    }

    #[test]
    fn dodge_examples() {
        let w = RewardWeights::default();
        close(reward_dodge(&TickDelta::default(), 0.5, &w), 0.02);
        let hit = TickDelta { dh: -0.1, ..Default::default() };
        close(reward_dodge(&hit, 0.5, &w), -0.48);
        let death = TickDelta { dh: -0.06, agent_dead: true, ..Default::default() };
        close(reward_dodge(&death, 0.01, &w), 0.02 - 5.0 * 0.06 - 5.0 - 1.0);
    }

    #[test]
    fn ha_examples() {
        let w = RewardWeights::default();
        close(reward_ha(&TickDelta { dhe: -0.04, ..Default::default() }, &w), 0.6);
        close(reward_ha(&TickDelta { dh: 0.6, ..Default::default() }, &w), 3.0);
        let win = TickDelta { dhe: -0.03, enemy_dead: true, ..Default::default() };
        close(reward_ha(&win, &w), 5.45);
        close(reward_e2e(&TickDelta::default(), &w), 0.0);
        close(reward_e2e(&win, &w), reward_ha(&win, &w));
    }

    #[test]
    fn accumulated_linear_terms_sum() {
        let a = TickDelta { dh: -0.1, dhe: -0.02, ..Default::default() };
        let b = TickDelta { dh: 0.3, dhe: -0.04, enemy_dead: true, ..Default::default() };
        let mut span = a;
        span.accumulate(&b);
        let w = RewardWeights::default();
        let per_tick = reward_ha(&a, &w) + reward_ha(&b, &w);
        close(reward_ha(&span, &w), per_tick);
    }

    #[test]
    fn weights_from_config() {
        let mut w = RewardWeights::default();
        let kv = KvConfig::parse("rewards.ha_hit = 20\nrewards.cam_align_bonus = false\n").unwrap();
        w.apply(&kv).unwrap();
        assert_eq!(w.ha_hit, 20.0);
        assert!(!w.cam_align_bonus);
        assert_eq!(RewardWeights::KEYS.len(), w.to_kv().len());
    }
}
