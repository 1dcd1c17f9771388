//! Deterministic tick-based two-phase boss arena.
//!
//! The boss stands at the arena centre at reset and the player spawns at a
//! distance chosen by [`SpawnMode`]. All randomness (spawn angle, camera yaw,
//! boss attack selection, damage rolls) is drawn from a ChaCha stream that
//! lives inside the [`WorldState`], so cloning a world clones its future.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::skills::{CamAction, CombatAction, CompositeAction, DodgeAction, LockAction, MoveAction};

pub const BOSS_HP_MAX: f64 = 1037.0;
/// Phase 1 ends (boss defeated) once boss hp drops below this; phase 2 starts here.
pub const PHASE1_FLOOR: f64 = 622.0;
pub const PHASE2_FLOOR: f64 = 60.0;
pub const PLAYER_HP_MAX: f64 = 100.0;
pub const STAMINA_MAX: f64 = 100.0;
pub const DEATH_RATIO: f64 = 0.05;

pub const ATTACK_COST: f64 = 20.0;
pub const DODGE_COST: f64 = 25.0;
pub const STAMINA_REGEN: f64 = 8.0;
pub const HEAL_FRACTION: f64 = 0.6;

pub const ATTACK_TICKS: u32 = 4;
/// Tick (0-based, within the swing) on which the player's blow lands.
pub const ATTACK_HIT_TICK: u32 = 1;
pub const PLAYER_REACH: f64 = 2.5;
pub const PLAYER_CONE: f64 = 0.7;
pub const PLAYER_DAMAGE: (u32, u32) = (30, 50);

pub const DODGE_TICKS: u32 = 5;
/// Invulnerable ticks of a dodge, 0-based (ticks 2..=4 counting from one).
pub const IFRAME_FIRST: u32 = 1;
pub const IFRAME_LAST: u32 = 3;
pub const ROLL_SPEED: f64 = 0.3;

pub const HEAL_TICKS: u32 = 3;
pub const EMPTY_FLASK_TICKS: u32 = 5;
pub const HEAL_APPLY_TICK: u32 = 2;

pub const MOVE_SPEED: f64 = 0.3;
pub const CAM_STEP: f64 = 0.1;
pub const PITCH_LIMIT: f64 = 0.6;

pub const LOCK_MAX_ANGLE: f64 = 0.6;
pub const LOCK_ACQUIRE_DIST: f64 = 12.0;
pub const LOCK_DROP_DIST: f64 = 14.0;

/// Centre-to-centre distance the two bodies cannot get closer than.
pub const BODY_SEPARATION: f64 = 1.2;
pub const BOSS_SPEED: f64 = 0.03;
pub const BOSS_TURN_RATE: f64 = 0.25;
/// Distance below which the boss counts as fighting at close range.
pub const CLOSE_RANGE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpawnMode {
    FixedMidRange,
    FixedLongRange,
    Randomized,
}

impl SpawnMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SpawnMode::FixedMidRange => "mid",
            SpawnMode::FixedLongRange => "long",
            SpawnMode::Randomized => "random",
        }
    }
}

impl fmt::Display for SpawnMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpawnMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mid" | "fixed_mid_range" => Ok(SpawnMode::FixedMidRange),
            "long" | "fixed_long_range" => Ok(SpawnMode::FixedLongRange),
            "random" | "randomized" => Ok(SpawnMode::Randomized),
            other => Err(Error::config(format!("unknown spawn mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    One,
    Two,
}

impl Phase {
    pub fn number(self) -> u8 {
        match self {
            Phase::One => 1,
            Phase::Two => 2,
        }
    }

    pub fn from_number(n: u64) -> Result<Self> {
        match n {
            1 => Ok(Phase::One),
            2 => Ok(Phase::Two),
            other => Err(Error::config(format!("phase must be 1 or 2, got {other}"))),
        }
    }

    pub fn starting_boss_hp(self) -> f64 {
        match self {
            Phase::One => BOSS_HP_MAX,
            Phase::Two => PHASE1_FLOOR,
        }
    }

    pub fn starting_estus(self) -> u32 {
        match self {
            Phase::One => 1,
            Phase::Two => 2,
        }
    }

    pub fn boss_floor(self) -> f64 {
        match self {
            Phase::One => PHASE1_FLOOR,
            Phase::Two => PHASE2_FLOOR,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArenaConfig {
    pub arena_radius: f64,
    pub tick_seconds: f64,
    pub phase: Phase,
    pub spawn_mode: SpawnMode,
    pub seed: u64,
    /// When false, death and boss defeat do not end the episode; it only
    /// stops at the horizon (upstream skills train this way).
    pub ends_on_outcome: bool,
}

impl Default for ArenaConfig {
    fn default() -> Self {
        Self {
            arena_radius: 10.0,
            tick_seconds: 0.1,
            phase: Phase::One,
            spawn_mode: SpawnMode::FixedMidRange,
            seed: 0,
            ends_on_outcome: true,
        }
    }
}

impl ArenaConfig {
    pub const KEYS: &'static [&'static str] =
        &["arena.radius", "arena.tick_seconds", "arena.phase", "arena.spawn", "arena.seed", "arena.ends_on_outcome"];

    pub fn new(phase: Phase, spawn_mode: SpawnMode, seed: u64) -> Self {
        Self { phase, spawn_mode, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.arena_radius > 0.0 && self.arena_radius.is_finite()) {
            return Err(Error::config("arena.radius must be > 0"));
        }
        if !(self.tick_seconds > 0.0 && self.tick_seconds.is_finite()) {
            return Err(Error::config("arena.tick_seconds must be > 0"));
        }
        if self.arena_radius * 0.4 <= BODY_SEPARATION {
            return Err(Error::config("arena.radius too small for a mid-range spawn"));
        }
        Ok(())
    }

    /// Reads `arena.*` keys, leaving unspecified fields at their current value.
    pub fn apply(&mut self, kv: &KvConfig) -> Result<()> {
        if let Some(v) = kv.get_f64("arena.radius")? {
            self.arena_radius = v;
        }
        if let Some(v) = kv.get_f64("arena.tick_seconds")? {
            self.tick_seconds = v;
        }
        if let Some(v) = kv.get_u64("arena.phase")? {
            self.phase = Phase::from_number(v)?;
        }
        if let Some(v) = kv.get_str("arena.spawn") {
            self.spawn_mode = v.parse()?;
        }
        if let Some(v) = kv.get_u64("arena.seed")? {
            self.seed = v;
        }
        if let Some(v) = kv.get_bool("arena.ends_on_outcome")? {
            self.ends_on_outcome = v;
        }
        self.validate()
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("arena.radius".into(), self.arena_radius.to_string()),
            ("arena.tick_seconds".into(), self.tick_seconds.to_string()),
            ("arena.phase".into(), self.phase.to_string()),
            ("arena.spawn".into(), self.spawn_mode.to_string()),
            ("arena.seed".into(), self.seed.to_string()),
            ("arena.ends_on_outcome".into(), self.ends_on_outcome.to_string()),
        ]
    }

    /// Player-to-boss distance of a fixed spawn.
    pub fn spawn_distance(&self) -> Option<f64> {
        match self.spawn_mode {
            SpawnMode::FixedMidRange => Some(0.4 * self.arena_radius),
            SpawnMode::FixedLongRange => Some(0.8 * self.arena_radius),
            SpawnMode::Randomized => None,
        }
    }
}

/// One boss move.
#[derive(Debug, Clone, PartialEq)]
pub struct BossAttack {
    pub name: &'static str,
    pub anim_id: u32,
    pub windup_ticks: u32,
    pub active_ticks: u32,
    pub recovery_ticks: u32,
    pub reach: f64,
    pub cone_half_angle: f64,
    pub damage: (f64, f64),
    /// Selection band on player distance, `[min, max)`.
    pub select_range: (f64, f64),
    pub weight: f64,
    /// Distance covered per active tick (lunges close the gap).
    pub lunge_speed: f64,
}

impl BossAttack {
    pub fn total_ticks(&self) -> u32 {
        self.windup_ticks + self.active_ticks + self.recovery_ticks
    }

    pub fn is_active(&self, elapsed: u32) -> bool {
        elapsed >= self.windup_ticks && elapsed < self.windup_ticks + self.active_ticks
    }
}

/// Per-phase attack table plus the selection rule parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BossBehavior {
    pub attacks: Vec<BossAttack>,
    /// Weight of choosing to pause instead of attacking.
    pub wait_weight: f64,
    pub wait_ticks: u32,
    /// Multiplier on attack weights when the player is within [`CLOSE_RANGE`].
    pub close_range_scale: f64,
}

const PHASE2_DAMAGE_SCALE: f64 = 1.6;

fn phase1_attacks() -> Vec<BossAttack> {
    vec![
        BossAttack {
            name: "swipe",
            anim_id: 1,
            windup_ticks: 4,
            active_ticks: 1,
            recovery_ticks: 6,
            reach: 2.8,
            cone_half_angle: 1.2,
            damage: (12.0, 18.0),
            select_range: (0.0, 3.0),
            weight: 3.0,
            lunge_speed: 0.0,
        },
        BossAttack {
            name: "combo",
            anim_id: 2,
            windup_ticks: 6,
            active_ticks: 3,
            recovery_ticks: 8,
            reach: 3.0,
            cone_half_angle: 0.9,
            damage: (20.0, 28.0),
            select_range: (0.0, 3.5),
            weight: 2.0,
            lunge_speed: 0.0,
        },
        BossAttack {
            name: "overhead",
            anim_id: 3,
            windup_ticks: 8,
            active_ticks: 2,
            recovery_ticks: 10,
            reach: 3.2,
            cone_half_angle: 0.5,
            damage: (32.0, 44.0),
            select_range: (0.0, 4.0),
            weight: 1.5,
            lunge_speed: 0.0,
        },
    ]
}

impl BossBehavior {
    pub fn for_phase(phase: Phase) -> Self {
        match phase {
            Phase::One => Self { attacks: phase1_attacks(), wait_weight: 1.0, wait_ticks: 5, close_range_scale: 1.0 },
            Phase::Two => {
                let mut attacks: Vec<BossAttack> = phase1_attacks()
                    .into_iter()
                    .map(|mut a| {
                        a.damage = (a.damage.0 * PHASE2_DAMAGE_SCALE, a.damage.1 * PHASE2_DAMAGE_SCALE);
                        a
                    })
                    .collect();
                attacks.push(BossAttack {
                    name: "lunge",
                    anim_id: 4,
                    windup_ticks: 6,
                    active_ticks: 3,
                    recovery_ticks: 8,
                    reach: 2.8,
                    cone_half_angle: 0.8,
                    damage: (30.0, 40.0),
                    select_range: (5.0, f64::INFINITY),
                    weight: 4.0,
                    lunge_speed: 1.6,
                });
                Self { attacks, wait_weight: 2.0, wait_ticks: 10, close_range_scale: 0.5 }
            }
        }
    }

    pub fn attack_by_anim(&self, anim_id: u32) -> Option<&BossAttack> {
        self.attacks.iter().find(|a| a.anim_id == anim_id)
    }

    /// Selection weights of (each attack, pause) at player distance `d`.
    pub fn selection_weights(&self, d: f64) -> (Vec<f64>, f64) {
        let close = d < CLOSE_RANGE;
        let weights = self
            .attacks
            .iter()
            .map(|a| {
                if d >= a.select_range.0 && d < a.select_range.1 {
                    if close {
                        a.weight * self.close_range_scale
                    } else {
                        a.weight
                    }
                } else {
                    0.0
                }
            })
            .collect();
        (weights, self.wait_weight)
    }

    /// Probability that a selection at distance `d` starts an attack (as opposed to
    /// pausing or walking).
    pub fn attack_probability(&self, d: f64) -> f64 {
        let (w, wait) = self.selection_weights(d);
        let total: f64 = w.iter().sum();
        if total == 0.0 {
            0.0
        } else {
            total / (total + wait)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntityState {
    pub position: [f64; 3],
    pub orientation: f64,
    pub hp: f64,
    pub hp_max: f64,
    pub stamina: f64,
    pub stamina_max: f64,
    pub anim_id: u32,
    pub anim_progress: f64,
}

impl EntityState {
    pub fn hp_ratio(&self) -> f64 {
        self.hp / self.hp_max
    }

    pub fn stamina_ratio(&self) -> f64 {
        if self.stamina_max > 0.0 {
            self.stamina / self.stamina_max
        } else {
            0.0
        }
    }
}

pub mod anim {
    pub const PLAYER_IDLE: u32 = 0;
    pub const PLAYER_MOVE: u32 = 1;
    pub const PLAYER_ATTACK: u32 = 2;
    pub const PLAYER_DODGE: u32 = 3;
    pub const PLAYER_HEAL: u32 = 4;
    pub const PLAYER_EMPTY_FLASK: u32 = 5;
    pub const BOSS_IDLE: u32 = 0;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Ongoing,
    PlayerDead,
    BossDefeated,
    Truncated,
}

impl Outcome {
    pub fn is_terminal(self) -> bool {
        self != Outcome::Ongoing
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Ongoing => "ongoing",
            Outcome::PlayerDead => "player_dead",
            Outcome::BossDefeated => "boss_defeated",
            Outcome::Truncated => "truncated",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlayerAction {
    Free,
    Attack {
        elapsed: u32,
    },
    Dodge {
        elapsed: u32,
        heading: f64,
    },
    Heal {
        elapsed: u32,
    },
    /// Drinking from an empty flask: no effect, but the player is committed.
    EmptyFlask {
        elapsed: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BossAction {
    Idle { ticks_left: u32 },
    Attack { index: usize, elapsed: u32, landed: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub player: EntityState,
    pub boss: EntityState,
    pub camera_dir: [f64; 3],
    pub camera_yaw: f64,
    pub camera_pitch: f64,
    pub lock_on: bool,
    pub estus_remaining: u32,
    pub tick: u64,
    pub phase: Phase,
    pub outcome: Outcome,
    pub player_action: PlayerAction,
    pub boss_action: BossAction,
    pub arena_radius: f64,
    pub seed: u64,
    pub ends_on_outcome: bool,
    rng: ChaCha8Rng,
}

/// Everything that happened during one tick.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepEvents {
    pub damage_taken: f64,
    pub damage_dealt: f64,
    pub healed: f64,
    pub dodge_started: bool,
    pub attack_started: bool,
    pub heal_started: bool,
    pub empty_flask: bool,
    pub lock_toggled: bool,
    pub lock_dropped: bool,
    /// Boss attack whose active window overlapped the player but was i-framed.
    pub iframe_avoid: bool,
    pub boss_attack_started: Option<u32>,
}

impl StepEvents {
    /// Compact text form used in trajectory dumps.
    pub fn encode(&self) -> String {
        let mut parts = Vec::new();
        if self.damage_taken > 0.0 {
            parts.push(format!("hit:{}", self.damage_taken));
        }
        if self.damage_dealt > 0.0 {
            parts.push(format!("dealt:{}", self.damage_dealt));
        }
        if self.healed > 0.0 {
            parts.push(format!("heal:{}", self.healed));
        }
        if self.dodge_started {
            parts.push("dodge".into());
        }
        if self.attack_started {
            parts.push("attack".into());
        }
        if self.heal_started {
            parts.push("drink".into());
        }
        if self.empty_flask {
            parts.push("empty".into());
        }
        if self.lock_toggled {
            parts.push("toggle".into());
        }
        if self.lock_dropped {
            parts.push("drop".into());
        }
        if self.iframe_avoid {
            parts.push("iframe".into());
        }
        if let Some(id) = self.boss_attack_started {
            parts.push(format!("boss:{id}"));
        }
        parts.join("|")
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut x = (a + PI).rem_euclid(2.0 * PI) - PI;
    if x < -PI {
        x = -PI;
    }
    x
}

fn planar_dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2) + (b[2] - a[2]).powi(2)).sqrt()
}

fn heading(from: [f64; 3], to: [f64; 3]) -> f64 {
    (to[1] - from[1]).atan2(to[0] - from[0])
}

fn camera_vector(yaw: f64, pitch: f64) -> [f64; 3] {
    let c = [pitch.cos() * yaw.cos(), pitch.cos() * yaw.sin(), pitch.sin()];
    let n = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
    [c[0] / n, c[1] / n, c[2] / n]
}

fn turn_towards(current: f64, target: f64, max_step: f64) -> f64 {
    let diff = wrap_angle(target - current);
    wrap_angle(current + diff.clamp(-max_step, max_step))
}

fn clamp_to_disc(p: &mut [f64; 3], radius: f64) {
    let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
    if r > radius {
        p[0] *= radius / r;
        p[1] *= radius / r;
    }
    p[2] = 0.0;
}

impl WorldState {
    /// Fresh episode for `config`.
    pub fn reset(config: &ArenaConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let r = config.arena_radius;

        let spawn_angle = rng.gen_range(-PI..PI);
        let dist = match config.spawn_distance() {
            Some(d) => d,
            None => {
                let lo = (BODY_SEPARATION + 0.3) / r;
                let u: f64 = rng.gen_range(lo * lo..1.0);
                u.sqrt() * r
            }
        };
        let player_pos = [dist * spawn_angle.cos(), dist * spawn_angle.sin(), 0.0];
        let yaw = rng.gen_range(-PI..PI);
        let pitch = match config.spawn_mode {
            SpawnMode::Randomized => rng.gen_range(-0.5..0.5),
            _ => 0.0,
        };
        let boss_pos = [0.0, 0.0, 0.0];

        let phase = config.phase;
        let mut world = WorldState {
            player: EntityState {
                position: player_pos,
                orientation: wrap_angle(yaw),
                hp: PLAYER_HP_MAX,
                hp_max: PLAYER_HP_MAX,
                stamina: STAMINA_MAX,
                stamina_max: STAMINA_MAX,
                anim_id: anim::PLAYER_IDLE,
                anim_progress: 0.0,
            },
            boss: EntityState {
                position: boss_pos,
                orientation: heading(boss_pos, player_pos),
                hp: phase.starting_boss_hp(),
                hp_max: BOSS_HP_MAX,
                stamina: 0.0,
                stamina_max: 0.0,
                anim_id: anim::BOSS_IDLE,
                anim_progress: 0.0,
            },
            camera_dir: camera_vector(yaw, pitch),
            camera_yaw: wrap_angle(yaw),
            camera_pitch: pitch,
            lock_on: false,
            estus_remaining: phase.starting_estus(),
            tick: 0,
            phase,
            outcome: Outcome::Ongoing,
            player_action: PlayerAction::Free,
            boss_action: BossAction::Idle { ticks_left: 3 },
            arena_radius: r,
            seed: config.seed,
            ends_on_outcome: config.ends_on_outcome,
            rng,
        };
        world.refresh_anims();
        Ok(world)
    }

    pub fn distance(&self) -> f64 {
        planar_dist(self.player.position, self.boss.position)
    }

    pub fn behavior(&self) -> BossBehavior {
        BossBehavior::for_phase(self.phase)
    }

    /// Camera-to-target angle, recomputed from positions and camera direction.
    pub fn camera_angle(&self) -> f64 {
        let d = self.distance();
        if d == 0.0 {
            return FRAC_PI_2;
        }
        let dir = [
            (self.boss.position[0] - self.player.position[0]) / d,
            (self.boss.position[1] - self.player.position[1]) / d,
            (self.boss.position[2] - self.player.position[2]) / d,
        ];
        let c = self.camera_dir;
        let cn = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        let cos = (c[0] * dir[0] + c[1] * dir[1] + c[2] * dir[2]) / cn;
        cos.clamp(-1.0, 1.0).acos()
    }

    pub fn player_invulnerable(&self) -> bool {
        matches!(self.player_action, PlayerAction::Dodge { elapsed, .. }
            if (IFRAME_FIRST..=IFRAME_LAST).contains(&elapsed))
    }

    pub fn player_busy(&self) -> bool {
        !matches!(self.player_action, PlayerAction::Free)
    }

    /// Advances the world by one tick.
    pub fn step(&mut self, action: &CompositeAction) -> Result<StepEvents> {
        if self.outcome.is_terminal() {
            return Err(Error::usage(format!("step called on a finished episode ({})", self.outcome)));
        }
        let behavior = self.behavior();
        let mut ev = StepEvents::default();

        self.apply_camera(action.camera);
        if action.lock == LockAction::Toggle {
            self.toggle_lock(&mut ev);
        }

        self.start_player_action(action, &mut ev);
        let moving = self.advance_player(action.movement, &mut ev);

        // The player's action clock advances only after the boss has resolved its
        // tick, so i-frames and animation locks are seen by this tick's attacks.
        self.advance_boss(&behavior, &mut ev);
        let exerting = matches!(self.player_action, PlayerAction::Attack { .. } | PlayerAction::Dodge { .. });
        self.advance_player_clock();
        if !exerting {
            self.player.stamina = (self.player.stamina + STAMINA_REGEN).min(self.player.stamina_max);
        }

        self.enforce_geometry();
        if self.lock_on && self.distance() > LOCK_DROP_DIST {
            self.lock_on = false;
            ev.lock_dropped = true;
        }
        self.update_camera_and_facing();
        self.tick += 1;
        self.refresh_player_anim(moving);
        self.refresh_boss_anim(&behavior);
        if self.ends_on_outcome {
            self.outcome = check_termination(self);
        }
        Ok(ev)
    }

    fn apply_camera(&mut self, cam: CamAction) {
        if self.lock_on {
            return;
        }
        match cam {
            CamAction::Up => self.camera_pitch = (self.camera_pitch + CAM_STEP).min(PITCH_LIMIT),
            CamAction::Down => self.camera_pitch = (self.camera_pitch - CAM_STEP).max(-PITCH_LIMIT),
            CamAction::Left => self.camera_yaw = wrap_angle(self.camera_yaw + CAM_STEP),
            CamAction::Right => self.camera_yaw = wrap_angle(self.camera_yaw - CAM_STEP),
            CamAction::Idle => {}
        }
        self.camera_dir = camera_vector(self.camera_yaw, self.camera_pitch);
    }

    fn toggle_lock(&mut self, ev: &mut StepEvents) {
        if self.lock_on {
            self.lock_on = false;
            ev.lock_toggled = true;
        } else if self.camera_angle() < LOCK_MAX_ANGLE && self.distance() < LOCK_ACQUIRE_DIST {
            self.lock_on = true;
            ev.lock_toggled = true;
        }
    }

    fn move_heading(&self, m: MoveAction) -> Option<f64> {
        m.relative_angle().map(|rel| wrap_angle(self.camera_yaw + rel))
    }

    fn start_player_action(&mut self, action: &CompositeAction, ev: &mut StepEvents) {
        if self.player_busy() {
            return;
        }
        let p = &mut self.player;
        if action.dodge == DodgeAction::Dodge && p.stamina > 0.0 {
            let heading = match action.movement.relative_angle() {
                Some(rel) => wrap_angle(self.camera_yaw + rel),
                None => wrap_angle(p.orientation + PI),
            };
            p.stamina = (p.stamina - DODGE_COST).max(0.0);
            self.player_action = PlayerAction::Dodge { elapsed: 0, heading };
            ev.dodge_started = true;
            return;
        }
        match action.combat {
            CombatAction::Heal if self.estus_remaining > 0 => {
                self.player_action = PlayerAction::Heal { elapsed: 0 };
                ev.heal_started = true;
            }
            CombatAction::Heal => {
                self.player_action = PlayerAction::EmptyFlask { elapsed: 0 };
                ev.empty_flask = true;
            }
            CombatAction::Attack if p.stamina > 0.0 => {
                p.stamina = (p.stamina - ATTACK_COST).max(0.0);
                self.player_action = PlayerAction::Attack { elapsed: 0 };
                ev.attack_started = true;
            }
            _ => {}
        }
    }

    /// Runs this tick of the player's current action. Returns whether the player walked.
    fn advance_player(&mut self, movement: MoveAction, ev: &mut StepEvents) -> bool {
        match self.player_action {
            PlayerAction::Free => {
                if let Some(h) = self.move_heading(movement) {
                    self.player.position[0] += MOVE_SPEED * h.cos();
                    self.player.position[1] += MOVE_SPEED * h.sin();
                    if !self.lock_on {
                        self.player.orientation = h;
                    }
                    return true;
                }
                false
            }
            PlayerAction::Attack { elapsed } => {
                if elapsed == ATTACK_HIT_TICK {
                    let d = self.distance();
                    let to_boss = heading(self.player.position, self.boss.position);
                    let off = wrap_angle(to_boss - self.player.orientation).abs();
                    if d < PLAYER_REACH && off < PLAYER_CONE {
                        let (lo, hi) = PLAYER_DAMAGE;
                        let dmg = self.rng.gen_range(lo..=hi) as f64;
                        let before = self.boss.hp;
                        self.boss.hp = (self.boss.hp - dmg).max(0.0);
                        ev.damage_dealt += before - self.boss.hp;
                    }
                }
                false
            }
            PlayerAction::Dodge { heading, .. } => {
                self.player.position[0] += ROLL_SPEED * heading.cos();
                self.player.position[1] += ROLL_SPEED * heading.sin();
                false
            }
            PlayerAction::Heal { elapsed } => {
                if elapsed == HEAL_APPLY_TICK && self.estus_remaining > 0 {
                    let before = self.player.hp;
                    self.player.hp = (self.player.hp + HEAL_FRACTION * self.player.hp_max).min(self.player.hp_max);
                    self.estus_remaining -= 1;
                    ev.healed = self.player.hp - before;
                }
                false
            }
            PlayerAction::EmptyFlask { .. } => false,
        }
    }

    fn advance_player_clock(&mut self) {
        self.player_action = match self.player_action {
            PlayerAction::Free => PlayerAction::Free,
            PlayerAction::Attack { elapsed } if elapsed + 1 < ATTACK_TICKS => {
                PlayerAction::Attack { elapsed: elapsed + 1 }
            }
            PlayerAction::Dodge { elapsed, heading } if elapsed + 1 < DODGE_TICKS => {
                PlayerAction::Dodge { elapsed: elapsed + 1, heading }
            }
            PlayerAction::Heal { elapsed } if elapsed + 1 < HEAL_TICKS => PlayerAction::Heal { elapsed: elapsed + 1 },
            PlayerAction::EmptyFlask { elapsed } if elapsed + 1 < EMPTY_FLASK_TICKS => {
                PlayerAction::EmptyFlask { elapsed: elapsed + 1 }
            }
            _ => PlayerAction::Free,
        };
    }

    fn choose_boss_action(&mut self, behavior: &BossBehavior) -> BossAction {
        let d = self.distance();
        let (weights, wait) = behavior.selection_weights(d);
        let total: f64 = weights.iter().sum();
        if total == 0.0 {
            return BossAction::Idle { ticks_left: 1 };
        }
        let mut x = self.rng.gen::<f64>() * (total + wait);
        for (i, w) in weights.iter().enumerate() {
            if x < *w {
                return BossAction::Attack { index: i, elapsed: 0, landed: false };
            }
            x -= w;
        }
        BossAction::Idle { ticks_left: behavior.wait_ticks }
    }

    fn advance_boss(&mut self, behavior: &BossBehavior, ev: &mut StepEvents) {
        let target = heading(self.boss.position, self.player.position);
        match self.boss_action {
            BossAction::Idle { ticks_left } => {
                self.boss.orientation = turn_towards(self.boss.orientation, target, BOSS_TURN_RATE);
                let d = self.distance();
                if d > BODY_SEPARATION + 0.8 {
                    let step = BOSS_SPEED.min(d - BODY_SEPARATION);
                    self.boss.position[0] += step * target.cos();
                    self.boss.position[1] += step * target.sin();
                }
                self.boss_action = if ticks_left <= 1 {
                    let next = self.choose_boss_action(behavior);
                    if let BossAction::Attack { index, .. } = next {
                        ev.boss_attack_started = Some(behavior.attacks[index].anim_id);
                    }
                    next
                } else {
                    BossAction::Idle { ticks_left: ticks_left - 1 }
                };
            }
            BossAction::Attack { index, elapsed, mut landed } => {
                let atk = &behavior.attacks[index];
                if elapsed < atk.windup_ticks {
                    self.boss.orientation = turn_towards(self.boss.orientation, target, BOSS_TURN_RATE);
                }
                if atk.is_active(elapsed) {
                    if atk.lunge_speed > 0.0 {
                        let d = self.distance();
                        let step = atk.lunge_speed.min((d - BODY_SEPARATION).max(0.0));
                        let h = self.boss.orientation;
                        self.boss.position[0] += step * h.cos();
                        self.boss.position[1] += step * h.sin();
                        clamp_to_disc(&mut self.boss.position, self.arena_radius);
                    }
                    if !landed && self.in_attack_zone(atk) {
                        if self.player_invulnerable() {
                            ev.iframe_avoid = true;
                        } else {
                            let dmg = self.rng.gen_range(atk.damage.0..=atk.damage.1).round();
                            let before = self.player.hp;
                            self.player.hp = (self.player.hp - dmg).max(0.0);
                            ev.damage_taken += before - self.player.hp;
                            landed = true;
                        }
                    }
                }
                let next = elapsed + 1;
                self.boss_action = if next >= atk.total_ticks() {
                    let n = self.choose_boss_action(behavior);
                    if let BossAction::Attack { index, .. } = n {
                        ev.boss_attack_started = Some(behavior.attacks[index].anim_id);
                    }
                    n
                } else {
                    BossAction::Attack { index, elapsed: next, landed }
                };
            }
        }
    }

    /// Whether the player stands inside `atk`'s reach and cone right now.
    pub fn in_attack_zone(&self, atk: &BossAttack) -> bool {
        let d = self.distance();
        if d >= atk.reach {
            return false;
        }
        let to_player = heading(self.boss.position, self.player.position);
        wrap_angle(to_player - self.boss.orientation).abs() <= atk.cone_half_angle
    }

    fn enforce_geometry(&mut self) {
        clamp_to_disc(&mut self.player.position, self.arena_radius);
        clamp_to_disc(&mut self.boss.position, self.arena_radius);
        let d = self.distance();
        if d < BODY_SEPARATION {
            let (ux, uy) = if d > 1e-12 {
                (
                    (self.player.position[0] - self.boss.position[0]) / d,
                    (self.player.position[1] - self.boss.position[1]) / d,
                )
            } else {
                let h = self.boss.orientation;
                (h.cos(), h.sin())
            };
            self.player.position[0] = self.boss.position[0] + BODY_SEPARATION * ux;
            self.player.position[1] = self.boss.position[1] + BODY_SEPARATION * uy;
            clamp_to_disc(&mut self.player.position, self.arena_radius);
            // Pinned against the wall: slide the boss instead.
            if self.distance() < BODY_SEPARATION - 1e-9 {
                let d = self.distance().max(1e-12);
                let (vx, vy) = (
                    (self.boss.position[0] - self.player.position[0]) / d,
                    (self.boss.position[1] - self.player.position[1]) / d,
                );
                self.boss.position[0] = self.player.position[0] + BODY_SEPARATION * vx;
                self.boss.position[1] = self.player.position[1] + BODY_SEPARATION * vy;
            }
        }
    }

    fn update_camera_and_facing(&mut self) {
        if self.lock_on {
            let h = heading(self.player.position, self.boss.position);
            self.camera_yaw = h;
            self.camera_pitch = 0.0;
            self.camera_dir = camera_vector(h, 0.0);
            if !matches!(self.player_action, PlayerAction::Attack { .. }) {
                self.player.orientation = h;
            }
        }
        let c = self.camera_dir;
        let n = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        self.camera_dir = [c[0] / n, c[1] / n, c[2] / n];
    }

    fn refresh_player_anim(&mut self, moving: bool) {
        let (id, progress) = match self.player_action {
            PlayerAction::Free if moving => (anim::PLAYER_MOVE, 0.0),
            PlayerAction::Free => (anim::PLAYER_IDLE, 0.0),
            PlayerAction::Attack { elapsed } => (anim::PLAYER_ATTACK, elapsed as f64 / ATTACK_TICKS as f64),
            PlayerAction::Dodge { elapsed, .. } => (anim::PLAYER_DODGE, elapsed as f64 / DODGE_TICKS as f64),
            PlayerAction::Heal { elapsed } => (anim::PLAYER_HEAL, elapsed as f64 / HEAL_TICKS as f64),
            PlayerAction::EmptyFlask { elapsed } => {
                (anim::PLAYER_EMPTY_FLASK, elapsed as f64 / EMPTY_FLASK_TICKS as f64)
            }
        };
        self.player.anim_id = id;
        self.player.anim_progress = progress;
    }

    fn refresh_boss_anim(&mut self, behavior: &BossBehavior) {
        match self.boss_action {
            BossAction::Idle { .. } => {
                self.boss.anim_id = anim::BOSS_IDLE;
                self.boss.anim_progress = 0.0;
            }
            BossAction::Attack { index, elapsed, .. } => {
                let atk = &behavior.attacks[index];
                self.boss.anim_id = atk.anim_id;
                self.boss.anim_progress = elapsed as f64 / atk.total_ticks() as f64;
            }
        }
    }

    fn refresh_anims(&mut self) {
        let behavior = self.behavior();
        self.refresh_player_anim(false);
        self.refresh_boss_anim(&behavior);
    }
}

/// Terminal classification of a world; truncation is decided by the episode driver.
pub fn check_termination(world: &WorldState) -> Outcome {
    if world.outcome == Outcome::Truncated {
        return Outcome::Truncated;
    }
    if world.player.hp_ratio() < DEATH_RATIO {
        return Outcome::PlayerDead;
    }
    if world.boss.hp < world.phase.boss_floor() {
        return Outcome::BossDefeated;
    }
    Outcome::Ongoing
}
