//! Skill identities, their discrete action sets, the composition operator that
//! merges per-skill outputs into one control signal, and action hold timings.

pub mod cadence;

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkillId {
    Cam,
    Lock,
    Move,
    Dodge,
    Ha,
    E2e,
}

impl SkillId {
    /// The five composable skills in curriculum order.
    pub const MODULAR: [SkillId; 5] = [SkillId::Cam, SkillId::Lock, SkillId::Move, SkillId::Dodge, SkillId::Ha];
    pub const ALL: [SkillId; 6] =
        [SkillId::Cam, SkillId::Lock, SkillId::Move, SkillId::Dodge, SkillId::Ha, SkillId::E2e];

    pub fn as_str(self) -> &'static str {
        match self {
            SkillId::Cam => "cam",
            SkillId::Lock => "lock",
            SkillId::Move => "move",
            SkillId::Dodge => "dodge",
            SkillId::Ha => "ha",
            SkillId::E2e => "e2e",
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            SkillId::Cam => 7,
            SkillId::Lock => 2,
            SkillId::Move => 6,
            SkillId::Dodge => 7,
            SkillId::Ha => 11,
            SkillId::E2e => 25,
        }
    }

    pub fn action_count(self) -> usize {
        self.action_labels().len()
    }

    pub fn action_labels(self) -> &'static [&'static str] {
        match self {
            SkillId::Cam => &["cam_up", "cam_down", "cam_left", "cam_right", "idle"],
            SkillId::Lock => &["toggle_lock", "idle"],
            SkillId::Move => &[
                "forward",
                "back",
                "left",
                "right",
                "forward_left",
                "forward_right",
                "back_left",
                "back_right",
                "idle",
            ],
            SkillId::Dodge => &["dodge", "idle"],
            SkillId::Ha => &["light_attack", "heal", "idle"],
            SkillId::E2e => &[
                "forward",
                "back",
                "left",
                "right",
                "forward_dodge",
                "back_dodge",
                "left_dodge",
                "right_dodge",
                "cam_up",
                "cam_down",
                "cam_left",
                "cam_right",
                "toggle_lock",
                "light_attack",
                "heal",
                "idle",
            ],
        }
    }

    pub fn idle_index(self) -> usize {
        self.action_count() - 1
    }

    pub fn action_set(self) -> ActionSet {
        ActionSet { skill: self, labels: self.action_labels() }
    }
}

impl fmt::Display for SkillId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SkillId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SkillId::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::usage(format!("unknown skill `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionSet {
    pub skill: SkillId,
    pub labels: &'static [&'static str],
}

impl ActionSet {
    pub fn size(&self) -> usize {
        self.labels.len()
    }
}

macro_rules! indexed_enum {
    ($name:ident { $($(#[$meta:meta])* $variant:ident),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
        pub enum $name {
            $($(#[$meta])* $variant,)+
        }

        impl $name {
            pub const VARIANTS: &'static [$name] = &[$($name::$variant,)+];

            pub fn index(self) -> usize {
                self as usize
            }

            pub fn from_index(i: usize) -> Option<Self> {
                Self::VARIANTS.get(i).copied()
            }
        }
    };
}

indexed_enum!(CamAction {
    Up,
    Down,
    Left,
    Right,
    #[default]
    Idle
});
indexed_enum!(LockAction {
    Toggle,
    #[default]
    Idle
});
indexed_enum!(MoveAction {
    Forward,
    Back,
    Left,
    Right,
    ForwardLeft,
    ForwardRight,
    BackLeft,
    BackRight,
    #[default]
    Idle,
});
indexed_enum!(DodgeAction {
    Dodge,
    #[default]
    Idle
});
indexed_enum!(CombatAction {
    Attack,
    Heal,
    #[default]
    Idle
});

impl MoveAction {
    /// Heading relative to the camera yaw, or `None` for idle.
    pub fn relative_angle(self) -> Option<f64> {
        Some(match self {
            MoveAction::Forward => 0.0,
            MoveAction::Back => PI,
            MoveAction::Left => FRAC_PI_2,
            MoveAction::Right => -FRAC_PI_2,
            MoveAction::ForwardLeft => FRAC_PI_4,
            MoveAction::ForwardRight => -FRAC_PI_4,
            MoveAction::BackLeft => 3.0 * FRAC_PI_4,
            MoveAction::BackRight => -3.0 * FRAC_PI_4,
            MoveAction::Idle => return None,
        })
    }
}

/// The merged control signal: one slot per control subspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct CompositeAction {
    pub camera: CamAction,
    pub lock: LockAction,
    pub movement: MoveAction,
    pub dodge: DodgeAction,
    pub combat: CombatAction,
}

impl CompositeAction {
    pub fn idle() -> Self {
        Self::default()
    }

    pub fn is_idle(&self) -> bool {
        *self == Self::idle()
    }

    /// Writes the slot(s) owned by `skill`. E2E actions may fill two slots.
    pub fn set(&mut self, skill: SkillId, index: usize) -> Result<()> {
        let bad = || Error::usage(format!("action {index} out of range for skill {skill}"));
        match skill {
            SkillId::Cam => self.camera = CamAction::from_index(index).ok_or_else(bad)?,
            SkillId::Lock => self.lock = LockAction::from_index(index).ok_or_else(bad)?,
            SkillId::Move => self.movement = MoveAction::from_index(index).ok_or_else(bad)?,
            SkillId::Dodge => self.dodge = DodgeAction::from_index(index).ok_or_else(bad)?,
            SkillId::Ha => self.combat = CombatAction::from_index(index).ok_or_else(bad)?,
            SkillId::E2e => {
                let decoded = decode_e2e(index).ok_or_else(bad)?;
                self.camera = decoded.camera;
                self.lock = decoded.lock;
                self.movement = decoded.movement;
                self.dodge = decoded.dodge;
                self.combat = decoded.combat;
            }
        }
        Ok(())
    }

    /// Action index of each modular skill's slot, in [`SkillId::MODULAR`] order.
    pub fn decompose(&self) -> [usize; 5] {
        [self.camera.index(), self.lock.index(), self.movement.index(), self.dodge.index(), self.combat.index()]
    }

    pub fn from_indices(idx: [usize; 5]) -> Result<Self> {
        let mut c = Self::idle();
        for (skill, i) in SkillId::MODULAR.into_iter().zip(idx) {
            c.set(skill, i)?;
        }
        Ok(c)
    }

    pub fn encode(&self) -> String {
        let [a, b, c, d, e] = self.decompose();
        format!("{a}{b}{c}{d}{e}")
    }
}

/// Fills each slot from the most recent output of the skill that owns it.
/// Skills absent from `latest` contribute idle.
pub fn compose<I>(latest: I) -> Result<CompositeAction>
where
    I: IntoIterator<Item = (SkillId, usize)>,
{
    let mut out = CompositeAction::idle();
    for (skill, index) in latest {
        out.set(skill, index)?;
    }
    Ok(out)
}

const CARDINALS: [MoveAction; 4] = [MoveAction::Forward, MoveAction::Back, MoveAction::Left, MoveAction::Right];
const CAMS: [CamAction; 4] = [CamAction::Up, CamAction::Down, CamAction::Left, CamAction::Right];

pub fn decode_e2e(index: usize) -> Option<CompositeAction> {
    let mut c = CompositeAction::idle();
    match index {
        0..=3 => c.movement = CARDINALS[index],
        4..=7 => {
            c.movement = CARDINALS[index - 4];
            c.dodge = DodgeAction::Dodge;
        }
        8..=11 => c.camera = CAMS[index - 8],
        12 => c.lock = LockAction::Toggle,
        13 => c.combat = CombatAction::Attack,
        14 => c.combat = CombatAction::Heal,
        15 => {}
        _ => return None,
    }
    Some(c)
}

/// Inverse of [`decode_e2e`] on its image; `None` for composites the monolithic
/// policy cannot express.
pub fn encode_e2e(c: &CompositeAction) -> Option<usize> {
    (0..SkillId::E2e.action_count()).find(|&i| decode_e2e(i).as_ref() == Some(c))
}

/// Real-time delay of each action kind, converted to ticks by [`ActionTiming`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionTiming {
    pub tick_seconds: f64,
}

impl Default for ActionTiming {
    fn default() -> Self {
        Self { tick_seconds: 0.1 }
    }
}

pub const DEFAULT_DELAY: f64 = 0.1;
pub const DODGE_DELAY: f64 = 0.5;
pub const ATTACK_DELAY: f64 = 0.2;
pub const HEAL_DELAY: f64 = 0.3;
pub const EMPTY_HEAL_DELAY: f64 = 0.5;

impl ActionTiming {
    pub fn new(tick_seconds: f64) -> Self {
        Self { tick_seconds }
    }

    fn ticks(&self, seconds: f64) -> u32 {
        ((seconds / self.tick_seconds).round() as u32).max(1)
    }

    /// Seconds the action occupies before its skill is queried again.
    pub fn delay_seconds(skill: SkillId, index: usize, estus: u32) -> f64 {
        let heal = if estus > 0 { HEAL_DELAY } else { EMPTY_HEAL_DELAY };
        match (skill, index) {
            (SkillId::Dodge, 0) => DODGE_DELAY,
            (SkillId::Ha, 0) => ATTACK_DELAY,
            (SkillId::Ha, 1) => heal,
            (SkillId::E2e, 4..=7) => DODGE_DELAY,
            (SkillId::E2e, 13) => ATTACK_DELAY,
            (SkillId::E2e, 14) => heal,
            _ => DEFAULT_DELAY,
        }
    }

    pub fn hold_ticks(&self, skill: SkillId, index: usize, estus: u32) -> u32 {
        self.ticks(Self::delay_seconds(skill, index, estus))
    }
}

/// Hold duration in ticks at the default 0.1 s tick.
pub fn hold_duration(skill: SkillId, index: usize, estus: u32) -> u32 {
    ActionTiming::default().hold_ticks(skill, index, estus)
}

/// Whether the action is a one-shot key press (consumed on its first tick) as
/// opposed to a held control that repeats until the skill's next decision.
pub fn is_impulse(skill: SkillId, index: usize) -> bool {
    matches!(
        (skill, index),
        (SkillId::Lock, 0) | (SkillId::Dodge, 0) | (SkillId::Ha, 0 | 1) | (SkillId::E2e, 4..=7 | 12..=14)
    )
}

/// The action a skill's slot shows on a tick after its first one within a hold:
/// held controls repeat and key presses read idle.
pub fn held_action(skill: SkillId, index: usize) -> usize {
    match (skill, index) {
        (SkillId::E2e, 4..=7) => index - 4,
        _ if is_impulse(skill, index) => skill.idle_index(),
        _ => index,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubAction {
    pub skill: SkillId,
    pub index: usize,
    pub hold_ticks: u32,
}
