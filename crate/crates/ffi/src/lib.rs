//! C interface to the simulator and to trained skill policies.
//!
//! Every function returns an [`SgStatus`]; results come back through out
//! pointers. On failure the message is kept per thread and read with
//! [`sg_last_error`]. Handles are opaque and owned by the caller, who frees
//! them with the matching `_free` function. Panics never cross the boundary;
//! they surface as [`SgStatus::Internal`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use skillgraph::arena::{ArenaConfig, Outcome, Phase, SpawnMode, WorldState};
use skillgraph::qlearn::{Checkpoint, GreedyPolicy};
use skillgraph::skills::cadence::SkillAgent;
use skillgraph::skills::{CompositeAction, SkillId};
use skillgraph::state::{derive_features, feature_indices, GLOBAL_DIM};
use skillgraph::Error;

/// Status codes; the non-zero values match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgStatus {
    Ok = 0,
    /// Bad argument: null pointer, wrong length, out-of-range id.
    Usage = 2,
    /// A file is missing or unreadable.
    Missing = 3,
    /// Hash mismatch or malformed file.
    Integrity = 4,
    Numerical = 5,
    Config = 6,
    /// A panic inside the library.
    Internal = 70,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgSkill {
    Cam = 0,
    Lock = 1,
    Move = 2,
    Dodge = 3,
    Ha = 4,
    E2e = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgSpawn {
    Mid = 0,
    Long = 1,
    Random = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgOutcome {
    Ongoing = 0,
    PlayerDead = 1,
    BossDefeated = 2,
    Truncated = 3,
}

/// Width of the global state vector.
pub const SG_STATE_DIM: usize = 25;
const _: () = assert!(SG_STATE_DIM == GLOBAL_DIM);
/// Slots of a composite action: camera, lock, move, dodge, heal/attack.
pub const SG_ACTION_SLOTS: usize = 5;

/// A running boss fight.
pub struct SgWorld {
    world: WorldState,
}

/// A trained skill acting ε-greedily from a checkpoint.
pub struct SgPolicy {
    skill: SkillId,
    policy: GreedyPolicy,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SgStatus {
    match e {
        Error::Usage(_) => SgStatus::Usage,
        Error::Config(_) => SgStatus::Config,
        Error::MissingArtifact(_) | Error::Io { .. } => SgStatus::Missing,
        Error::Integrity(_) | Error::Format(_) => SgStatus::Integrity,
        Error::Numerical(_) => SgStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), Error>) -> SgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SgStatus::Ok,
        Ok(Err(e)) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            SgStatus::Internal
        }
    }
}

fn null(what: &str) -> Error {
    Error::usage(format!("{what} is null"))
}

fn skill_of(s: SgSkill) -> SkillId {
    match s {
        SgSkill::Cam => SkillId::Cam,
        SgSkill::Lock => SkillId::Lock,
        SgSkill::Move => SkillId::Move,
        SgSkill::Dodge => SkillId::Dodge,
        SgSkill::Ha => SkillId::Ha,
        SgSkill::E2e => SkillId::E2e,
    }
}

fn sg_skill(s: SkillId) -> SgSkill {
    match s {
        SkillId::Cam => SgSkill::Cam,
        SkillId::Lock => SgSkill::Lock,
        SkillId::Move => SgSkill::Move,
        SkillId::Dodge => SgSkill::Dodge,
        SkillId::Ha => SgSkill::Ha,
        SkillId::E2e => SgSkill::E2e,
    }
}

fn outcome_of(o: Outcome) -> SgOutcome {
    match o {
        Outcome::Ongoing => SgOutcome::Ongoing,
        Outcome::PlayerDead => SgOutcome::PlayerDead,
        Outcome::BossDefeated => SgOutcome::BossDefeated,
        Outcome::Truncated => SgOutcome::Truncated,
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Error> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Error> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn write<T>(p: *mut T, value: T, what: &str) -> Result<(), Error> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(value);
    Ok(())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Error> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Error::usage(format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Observation width of `skill`.
///
/// # Safety
/// `out` must be null or point to writable memory for one `size_t`.
#[no_mangle]
pub unsafe extern "C" fn sg_skill_obs_dim(skill: SgSkill, out: *mut usize) -> SgStatus {
    guard(|| write(out, skill_of(skill).obs_dim(), "out"))
}

/// Number of discrete actions of `skill`.
///
/// # Safety
/// `out` must be null or point to writable memory for one `size_t`.
#[no_mangle]
pub unsafe extern "C" fn sg_skill_action_count(skill: SgSkill, out: *mut usize) -> SgStatus {
    guard(|| write(out, skill_of(skill).action_count(), "out"))
}

/// Copies `skill`'s observation out of a global state vector.
///
/// # Safety
/// `state` must hold `state_len` doubles and `out` room for `out_len`.
#[no_mangle]
pub unsafe extern "C" fn sg_project(
    skill: SgSkill,
    state: *const f64,
    state_len: usize,
    out: *mut f64,
    out_len: usize,
) -> SgStatus {
    guard(|| {
        let k = skill_of(skill);
        if state_len != GLOBAL_DIM || out_len != k.obs_dim() {
            return Err(Error::usage(format!(
                "{k}: expected state length {GLOBAL_DIM} and output length {}, got {state_len} and {out_len}",
                k.obs_dim()
            )));
        }
        let s = slice(state, state_len, "state")?;
        let o = slice_mut(out, out_len, "out")?;
        for (dst, &i) in o.iter_mut().zip(feature_indices(k)) {
            *dst = s[i];
        }
        Ok(())
    })
}

/// Starts a fight. `phase` is 1 or 2.
///
/// # Safety
/// `out` must be null or point to writable memory for one pointer.
#[no_mangle]
pub unsafe extern "C" fn sg_world_new(phase: u8, spawn: SgSpawn, seed: u64, out: *mut *mut SgWorld) -> SgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spawn = match spawn {
            SgSpawn::Mid => SpawnMode::FixedMidRange,
            SgSpawn::Long => SpawnMode::FixedLongRange,
            SgSpawn::Random => SpawnMode::Randomized,
        };
        let phase = Phase::from_number(phase.into()).map_err(|e| Error::usage(e.to_string()))?;
        let world = WorldState::reset(&ArenaConfig::new(phase, spawn, seed))?;
        out.write(Box::into_raw(Box::new(SgWorld { world })));
        Ok(())
    })
}

/// Frees a world; null is ignored.
///
/// # Safety
/// `world` must be null or a handle from [`sg_world_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sg_world_free(world: *mut SgWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// Advances one tick. `actions` holds one index per slot (camera, lock, move,
/// dodge, heal/attack); the outcome after the tick goes to `outcome`.
///
/// # Safety
/// `world` must be a live handle, `actions` must hold 5 values, and `outcome`
/// must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn sg_world_step(
    world: *mut SgWorld,
    actions: *const usize,
    outcome: *mut SgOutcome,
) -> SgStatus {
    guard(|| {
        let w = world.as_mut().ok_or_else(|| null("world"))?;
        let a = slice(actions, SG_ACTION_SLOTS, "actions")?;
        let composite = CompositeAction::from_indices([a[0], a[1], a[2], a[3], a[4]])?;
        w.world.step(&composite)?;
        if !outcome.is_null() {
            outcome.write(outcome_of(w.world.outcome));
        }
        Ok(())
    })
}

/// Writes the 25 global state features.
///
/// # Safety
/// `world` must be a live handle and `out` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sg_world_state(world: *const SgWorld, out: *mut f64, len: usize) -> SgStatus {
    guard(|| {
        let w = world.as_ref().ok_or_else(|| null("world"))?;
        if len != GLOBAL_DIM {
            return Err(Error::usage(format!("state buffer must hold {GLOBAL_DIM} values, got {len}")));
        }
        slice_mut(out, len, "out")?.copy_from_slice(&derive_features(&w.world).0);
        Ok(())
    })
}

/// Ticks elapsed and the current outcome; either out pointer may be null.
///
/// # Safety
/// `world` must be a live handle; non-null out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_world_status(world: *const SgWorld, tick: *mut u64, outcome: *mut SgOutcome) -> SgStatus {
    guard(|| {
        let w = world.as_ref().ok_or_else(|| null("world"))?;
        if !tick.is_null() {
            tick.write(w.world.tick);
        }
        if !outcome.is_null() {
            outcome.write(outcome_of(w.world.outcome));
        }
        Ok(())
    })
}

/// Loads a checkpoint file. When `sha256` is non-null the file must hash to
/// that lowercase hex digest. `eps` is the exploration rate and `seed` seeds
/// its random stream.
///
/// # Safety
/// `path` (and `sha256` when given) must be NUL-terminated strings; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_policy_load(
    path: *const c_char,
    sha256: *const c_char,
    eps: f64,
    seed: u64,
    out: *mut *mut SgPolicy,
) -> SgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::usage(format!("eps must lie in [0, 1], got {eps}")));
        }
        let path = Path::new(str_arg(path, "path")?);
        let ckpt = if sha256.is_null() {
            Checkpoint::load(path)?
        } else {
            Checkpoint::load_verified(path, str_arg(sha256, "sha256")?)?
        };
        let policy = GreedyPolicy::from_checkpoint(&ckpt, eps, seed);
        out.write(Box::into_raw(Box::new(SgPolicy { skill: ckpt.skill, policy })));
        Ok(())
    })
}

/// Frees a policy; null is ignored.
///
/// # Safety
/// `policy` must be null or a handle from [`sg_policy_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sg_policy_free(policy: *mut SgPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// The skill a policy acts for.
///
/// # Safety
/// `policy` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sg_policy_skill(policy: *const SgPolicy, out: *mut SgSkill) -> SgStatus {
    guard(|| {
        let p = policy.as_ref().ok_or_else(|| null("policy"))?;
        write(out, sg_skill(p.skill), "out")
    })
}

/// Picks an action from a 25-feature global state; the policy projects it to
/// its own observation.
///
/// # Safety
/// `policy` must be a live handle, `state` must hold `len` doubles, and
/// `action` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_policy_act(
    policy: *mut SgPolicy,
    state: *const f64,
    len: usize,
    action: *mut usize,
) -> SgStatus {
    guard(|| {
        let p = policy.as_mut().ok_or_else(|| null("policy"))?;
        if len != GLOBAL_DIM {
            return Err(Error::usage(format!("state must hold {GLOBAL_DIM} values, got {len}")));
        }
        let s = slice(state, len, "state")?;
        let obs: Vec<f64> = feature_indices(p.skill).iter().map(|&i| s[i]).collect();
        let a = p.policy.select(p.skill, &obs)?;
        write(action, a, "action")
    })
}

/// Q-values of every action for a 25-feature global state.
///
/// # Safety
/// `policy` must be a live handle, `state` must hold `len` doubles and `out`
/// must have room for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sg_policy_q_values(
    policy: *const SgPolicy,
    state: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> SgStatus {
    guard(|| {
        let p = policy.as_ref().ok_or_else(|| null("policy"))?;
        if len != GLOBAL_DIM || out_len != p.skill.action_count() {
            return Err(Error::usage(format!(
                "expected state length {GLOBAL_DIM} and output length {}, got {len} and {out_len}",
                p.skill.action_count()
            )));
        }
        let s = slice(state, len, "state")?;
        let obs: Vec<f64> = feature_indices(p.skill).iter().map(|&i| s[i]).collect();
        slice_mut(out, out_len, "out")?.copy_from_slice(&p.policy.q_values(&obs)?);
        Ok(())
    })
}
