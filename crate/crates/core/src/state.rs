//! The 25-feature global state and its per-skill projections.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::arena::WorldState;
use crate::error::{Error, Result};
use crate::skills::SkillId;

pub const GLOBAL_DIM: usize = 25;

/// Positions of each feature inside [`GlobalState`].
pub mod idx {
    pub const BOSS_ANIM: usize = 0;
    pub const BOSS_PROGRESS: usize = 1;
    pub const PLAYER_ANIM: usize = 2;
    pub const PLAYER_PROGRESS: usize = 3;
    pub const STAMINA: usize = 4;
    pub const HP: usize = 5;
    pub const BOSS_HP: usize = 6;
    pub const BOSS_ORIENT: usize = 7;
    pub const PLAYER_ORIENT: usize = 8;
    pub const ESTUS: usize = 9;
    pub const DIST: usize = 10;
    pub const DIR: usize = 11;
    pub const CAMERA: usize = 14;
    pub const PLAYER_POS: usize = 17;
    pub const BOSS_POS: usize = 20;
    pub const ANGLE: usize = 23;
    pub const LOCK: usize = 24;
}

pub const FEATURE_NAMES: [&str; GLOBAL_DIM] = [
    "boss_anim",
    "boss_anim_progress",
    "player_anim",
    "player_anim_progress",
    "stamina",
    "hp",
    "boss_hp",
    "boss_orientation",
    "player_orientation",
    "estus",
    "distance",
    "dir_x",
    "dir_y",
    "dir_z",
    "cam_x",
    "cam_y",
    "cam_z",
    "player_x",
    "player_y",
    "player_z",
    "boss_x",
    "boss_y",
    "boss_z",
    "camera_angle",
    "lock_on",
];

/// Canonical world snapshot every skill observation is projected from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalState(pub [f64; GLOBAL_DIM]);

impl GlobalState {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self) -> f64 {
        self.0[idx::DIST]
    }

    pub fn angle(&self) -> f64 {
        self.0[idx::ANGLE]
    }

    pub fn hp(&self) -> f64 {
        self.0[idx::HP]
    }

    pub fn boss_hp(&self) -> f64 {
        self.0[idx::BOSS_HP]
    }

    pub fn stamina(&self) -> f64 {
        self.0[idx::STAMINA]
    }

    pub fn lock_on(&self) -> bool {
        self.0[idx::LOCK] > 0.5
    }

    pub fn estus(&self) -> f64 {
        self.0[idx::ESTUS]
    }

    pub fn vec3(&self, at: usize) -> [f64; 3] {
        [self.0[at], self.0[at + 1], self.0[at + 2]]
    }
}

/// Camera-to-target angle from a camera vector and a unit direction.
pub fn camera_target_angle(camera: [f64; 3], dir: [f64; 3]) -> f64 {
    let norm = (camera[0] * camera[0] + camera[1] * camera[1] + camera[2] * camera[2]).sqrt();
    if norm == 0.0 || dir == [0.0; 3] {
        return FRAC_PI_2;
    }
    let dot = camera[0] * dir[0] + camera[1] * dir[1] + camera[2] * dir[2];
    (dot / norm).clamp(-1.0, 1.0).acos()
}

/// Builds the global state. Coincident entities get a zero direction and a
/// camera angle of pi/2.
pub fn derive_features(world: &WorldState) -> GlobalState {
    let p = world.player.position;
    let e = world.boss.position;
    let delta = [e[0] - p[0], e[1] - p[1], e[2] - p[2]];
    let d = (delta[0] * delta[0] + delta[1] * delta[1] + delta[2] * delta[2]).sqrt();
    let dir = if d > 0.0 { [delta[0] / d, delta[1] / d, delta[2] / d] } else { [0.0; 3] };
    let c = world.camera_dir;
    let alpha = camera_target_angle(c, dir);

    let mut s = [0.0; GLOBAL_DIM];
    s[idx::BOSS_ANIM] = world.boss.anim_id as f64;
    s[idx::BOSS_PROGRESS] = world.boss.anim_progress;
    s[idx::PLAYER_ANIM] = world.player.anim_id as f64;
    s[idx::PLAYER_PROGRESS] = world.player.anim_progress;
    s[idx::STAMINA] = world.player.stamina_ratio();
    s[idx::HP] = world.player.hp_ratio();
    s[idx::BOSS_HP] = world.boss.hp_ratio();
    s[idx::BOSS_ORIENT] = world.boss.orientation;
    s[idx::PLAYER_ORIENT] = world.player.orientation;
    s[idx::ESTUS] = world.estus_remaining as f64;
    s[idx::DIST] = d;
    s[idx::DIR..idx::DIR + 3].copy_from_slice(&dir);
    s[idx::CAMERA..idx::CAMERA + 3].copy_from_slice(&c);
    s[idx::PLAYER_POS..idx::PLAYER_POS + 3].copy_from_slice(&p);
    s[idx::BOSS_POS..idx::BOSS_POS + 3].copy_from_slice(&e);
    s[idx::ANGLE] = alpha;
    s[idx::LOCK] = if world.lock_on { 1.0 } else { 0.0 };
    GlobalState(s)
}

const CAM_FEATURES: [usize; 7] = [11, 12, 13, 14, 15, 16, idx::ANGLE];
const LOCK_FEATURES: [usize; 2] = [idx::ANGLE, idx::LOCK];
const MOVE_FEATURES: [usize; 6] = [17, 18, 19, 20, 21, 22];
const DODGE_FEATURES: [usize; 7] =
    [idx::BOSS_ANIM, idx::BOSS_PROGRESS, idx::BOSS_ORIENT, idx::PLAYER_ORIENT, idx::STAMINA, idx::HP, idx::DIST];
const HA_FEATURES: [usize; 11] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

/// Global-state indices that make up `skill`'s observation, in order.
pub fn feature_indices(skill: SkillId) -> &'static [usize] {
    const ALL: [usize; GLOBAL_DIM] = {
        let mut a = [0; GLOBAL_DIM];
        let mut i = 0;
        while i < GLOBAL_DIM {
            a[i] = i;
            i += 1;
        }
        a
    };
    match skill {
        SkillId::Cam => &CAM_FEATURES,
        SkillId::Lock => &LOCK_FEATURES,
        SkillId::Move => &MOVE_FEATURES,
        SkillId::Dodge => &DODGE_FEATURES,
        SkillId::Ha => &HA_FEATURES,
        SkillId::E2e => &ALL,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkillObservation {
    pub skill: SkillId,
    pub features: Vec<f64>,
}

pub fn project(state: &GlobalState, skill: SkillId) -> SkillObservation {
    let features = feature_indices(skill).iter().map(|&i| state.0[i]).collect();
    SkillObservation { skill, features }
}

/// Looks a skill up by name before projecting; the string form used by
/// replay files and the C interface.
pub fn project_named(state: &GlobalState, skill: &str) -> Result<SkillObservation> {
    Ok(project(state, skill.parse()?))
}

pub const NORM_EPS: f64 = 1e-8;
pub const NORM_CLIP: f64 = 10.0;

/// Per-feature running mean and variance (Welford).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: f64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Update the statistics with the observation first.
    Train,
    /// Statistics are read-only.
    Frozen,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        Self { count: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, x: &[f64]) -> Result<()> {
        self.check_dim(x.len())?;
        self.count += 1.0;
        for ((m, m2), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *m;
            *m += delta / self.count;
            *m2 += delta * (v - *m);
        }
        Ok(())
    }

    /// Population variance; 1 before any sample so unseen stats leave inputs unscaled.
    pub fn variance(&self, i: usize) -> f64 {
        if self.count > 0.0 {
            self.m2[i] / self.count
        } else {
            1.0
        }
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::usage(format!("observation has {n} features, statistics track {}", self.dim())));
        }
        Ok(())
    }

    /// Normalizes `x` in place with the current statistics.
    pub fn apply(&self, x: &mut [f64]) -> Result<()> {
        self.check_dim(x.len())?;
        for (i, v) in x.iter_mut().enumerate() {
            let z = (*v - self.mean[i]) / (self.variance(i) + NORM_EPS).sqrt();
            *v = z.clamp(-NORM_CLIP, NORM_CLIP);
        }
        Ok(())
    }

    pub fn normalize(&mut self, x: &[f64], mode: NormMode) -> Result<Vec<f64>> {
        if mode == NormMode::Train {
            self.update(x)?;
        }
        let mut out = x.to_vec();
        self.apply(&mut out)?;
        Ok(out)
    }
}

pub fn normalize_obs(obs: &SkillObservation, stats: &mut RunningStats, mode: NormMode) -> Result<SkillObservation> {
    Ok(SkillObservation { skill: obs.skill, features: stats.normalize(&obs.features, mode)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arena::{ArenaConfig, Phase, SpawnMode, WorldState};

    fn world_at(p: [f64; 3], e: [f64; 3]) -> WorldState {
        let mut w = WorldState::reset(&ArenaConfig::new(Phase::One, SpawnMode::FixedMidRange, 3)).unwrap();
        w.player.position = p;
        w.boss.position = e;
        w
    }

    #[test]
    fn distance_and_direction_hand_example() {
        let s = derive_features(&world_at([0.0; 3], [3.0, 4.0, 0.0]));
        assert_eq!(s.distance(), 5.0);
        assert!((s.0[idx::DIR] - 0.6).abs() < 1e-15);
        assert!((s.0[idx::DIR + 1] - 0.8).abs() < 1e-15);
        assert_eq!(s.0[idx::DIR + 2], 0.0);
    }

    #[test]
    fn aligned_and_orthogonal_camera() {
        let mut w = world_at([0.0; 3], [3.0, 4.0, 0.0]);
        w.camera_dir = [0.6, 0.8, 0.0];
        assert!(derive_features(&w).angle().abs() < 1e-7);
        w.camera_dir = [-0.8, 0.6, 0.0];
        assert!((derive_features(&w).angle() - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn coincident_entities() {
        let s = derive_features(&world_at([1.0, 1.0, 0.0], [1.0, 1.0, 0.0]));
        assert_eq!(s.distance(), 0.0);
        assert_eq!(s.vec3(idx::DIR), [0.0; 3]);
        assert_eq!(s.angle(), FRAC_PI_2);
    }

    #[test]
    fn projection_dims_and_contents() {
        let w = world_at([1.0, 2.0, 0.0], [-2.0, 0.5, 0.0]);
        let s = derive_features(&w);
        let dims: Vec<usize> = SkillId::ALL.iter().map(|&k| project(&s, k).features.len()).collect();
        assert_eq!(dims, vec![7, 2, 6, 7, 11, 25]);
        for k in SkillId::ALL {
            assert_eq!(project(&s, k).features.len(), k.obs_dim());
        }
        assert_eq!(project(&s, SkillId::Lock).features, vec![s.angle(), 0.0]);
        assert_eq!(project(&s, SkillId::E2e).features, s.0.to_vec());
        assert_eq!(project(&s, SkillId::Move).features, vec![1.0, 2.0, 0.0, -2.0, 0.5, 0.0]);
        assert!(project_named(&s, "jump").is_err());
    }

    #[test]
    fn normalization_examples() {
        let mut stats = RunningStats { count: 4.0, mean: vec![2.0], m2: vec![4.0 * 9.0] };
        let frozen = stats.clone();
        let out = stats.normalize(&[5.0], NormMode::Frozen).unwrap();
        assert!((out[0] - 3.0 / (9.0f64 + 1e-8).sqrt()).abs() < 1e-12);
        assert_eq!(stats, frozen);

        let out = stats.normalize(&[2.0 + 40.0 * 3.0], NormMode::Frozen).unwrap();
        assert_eq!(out[0], 10.0);
        let out = stats.normalize(&[2.0 - 40.0 * 3.0], NormMode::Frozen).unwrap();
        assert_eq!(out[0], -10.0);
    }

    #[test]
    fn constant_stream_normalizes_to_zero() {
        let mut stats = RunningStats::new(2);
        let mut last = vec![];
        for _ in 0..50 {
            last = stats.normalize(&[3.5, -1.0], NormMode::Train).unwrap();
        }
        assert_eq!(last, vec![0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_is_usage_error() {
        let mut stats = RunningStats::new(3);
        assert!(matches!(stats.normalize(&[1.0], NormMode::Train), Err(Error::Usage(_))));
    }

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 4.0, -2.0, 7.5, 0.25, 3.0];
        let mut stats = RunningStats::new(1);
        for x in xs {
            stats.update(&[x]).unwrap();
        }
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!((stats.mean[0] - mean).abs() < 1e-12);
        assert!((stats.variance(0) - var).abs() < 1e-12);
    }
}
