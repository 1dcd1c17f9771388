//! Checks shared by the focused test files and the acceptance run.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skillgraph::arena::{
    check_termination, ArenaConfig, BossAction, BossBehavior, Outcome, Phase, PlayerAction, SpawnMode, WorldState,
    CLOSE_RANGE, DEATH_RATIO, HEAL_APPLY_TICK, IFRAME_FIRST, IFRAME_LAST,
};
use skillgraph::qlearn::mlp::{loss_and_grad, Mlp};
use skillgraph::rewards::*;
use skillgraph::skills::{decode_e2e, encode_e2e, CompositeAction, SkillId};
use skillgraph::state::{feature_indices, project, GlobalState, GLOBAL_DIM};

pub fn random_action(rng: &mut impl Rng) -> CompositeAction {
    let mut idx = [0usize; 5];
    for (slot, skill) in idx.iter_mut().zip(SkillId::MODULAR) {
        *slot = rng.gen_range(0..skill.action_count());
    }
    CompositeAction::from_indices(idx).unwrap()
}

/// Tallies from a random-action sweep, used by the phase comparison.
#[derive(Debug, Default, Clone)]
pub struct SweepStats {
    pub ticks: u64,
    pub episodes: u64,
    pub hits: Vec<f64>,
    pub iframe_checks: u64,
    /// Boss decisions taken with the player inside close range, and how many
    /// of them were attacks.
    pub close_decisions: u64,
    pub close_attacks: u64,
}

fn boss_decides(w: &WorldState, behavior: &BossBehavior) -> bool {
    match w.boss_action {
        BossAction::Idle { ticks_left } => ticks_left <= 1,
        BossAction::Attack { index, elapsed, .. } => elapsed + 1 >= behavior.attacks[index].total_ticks(),
    }
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Plays `ticks` random-action ticks in `phase`, restarting finished episodes,
/// and checks conservation, geometry, i-frames and termination after every
/// tick. Returns the first violation as an error message.
pub fn invariant_sweep(phase: Phase, ticks: u64, seed: u64) -> Result<SweepStats, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let behavior = BossBehavior::for_phase(phase);
    let mut stats = SweepStats::default();
    let mut episode_seed = seed.wrapping_mul(1_000_003);
    let mut w = WorldState::reset(&ArenaConfig::new(phase, SpawnMode::Randomized, episode_seed)).unwrap();
    while stats.ticks < ticks {
        if w.outcome.is_terminal() {
            stats.episodes += 1;
            episode_seed += 1;
            w = WorldState::reset(&ArenaConfig::new(phase, SpawnMode::Randomized, episode_seed)).unwrap();
        }
        let a = random_action(&mut rng);
        let before = w.clone();
        let ev = w.step(&a).map_err(|e| e.to_string())?;
        stats.ticks += 1;
        let t = w.tick;

        // Conservation.
        if w.boss.hp > before.boss.hp {
            return Err(format!("tick {t}: boss hp rose {} -> {}", before.boss.hp, w.boss.hp));
        }
        if w.estus_remaining > before.estus_remaining {
            return Err(format!("tick {t}: estus rose"));
        }
        let drank = before.estus_remaining - w.estus_remaining;
        let applies = matches!(before.player_action, PlayerAction::Heal { elapsed } if elapsed == HEAL_APPLY_TICK);
        if drank > 1 || (drank == 1) != applies {
            return Err(format!("tick {t}: estus fell by {drank}"));
        }
        if w.player.hp > before.player.hp && drank != 1 {
            return Err(format!("tick {t}: player hp rose without a heal"));
        }
        let expected_hp = before.player.hp + ev.healed - ev.damage_taken;
        if (w.player.hp - expected_hp).abs() > 1e-9 {
            return Err(format!("tick {t}: hp {} does not match events ({expected_hp})", w.player.hp));
        }

        // Geometry.
        for (name, p) in [("player", w.player.position), ("boss", w.boss.position)] {
            if (p[0] * p[0] + p[1] * p[1]).sqrt() > w.arena_radius + 1e-9 {
                return Err(format!("tick {t}: {name} left the arena at {p:?}"));
            }
        }
        if (norm(w.camera_dir) - 1.0).abs() > 1e-9 {
            return Err(format!("tick {t}: camera norm {}", norm(w.camera_dir)));
        }

        // Termination thresholds.
        let expected = if w.player.hp_ratio() < DEATH_RATIO {
            Outcome::PlayerDead
        } else if w.boss.hp < phase.boss_floor() {
            Outcome::BossDefeated
        } else {
            Outcome::Ongoing
        };
        if w.outcome != expected {
            return Err(format!("tick {t}: outcome {} but state says {expected}", w.outcome));
        }

        // I-frames: a roll inside its window takes nothing, and the same roll
        // one tick later in its animation takes a normal hit.
        if let PlayerAction::Dodge { elapsed, heading } = before.player_action {
            if (IFRAME_FIRST..=IFRAME_LAST).contains(&elapsed) && ev.damage_taken > 0.0 {
                return Err(format!("tick {t}: hit for {} during i-frames", ev.damage_taken));
            }
            if ev.iframe_avoid {
                let BossAction::Attack { index, .. } = before.boss_action else {
                    return Err(format!("tick {t}: i-frame event without a boss attack"));
                };
                let (lo, hi) = behavior.attacks[index].damage;
                let mut shifted = before.clone();
                shifted.player_action = PlayerAction::Dodge { elapsed: IFRAME_LAST + 1, heading };
                let ev2 = shifted.step(&a).map_err(|e| e.to_string())?;
                let dmg = ev2.damage_taken;
                let capped = shifted.player.hp == 0.0;
                if !(dmg > 0.0 && dmg <= hi.round() && (dmg >= lo.round() || capped)) {
                    return Err(format!("tick {t}: shifted roll took {dmg}, expected [{lo}, {hi}]"));
                }
                stats.iframe_checks += 1;
            }
        }

        if ev.damage_taken > 0.0 && w.player.hp > 0.0 {
            stats.hits.push(ev.damage_taken);
        }
        if boss_decides(&before, &behavior) && before.distance() < CLOSE_RANGE {
            stats.close_decisions += 1;
            if ev.boss_attack_started.is_some() {
                stats.close_attacks += 1;
            }
        }
    }
    Ok(stats)
}

/// Boundary cases of the death and phase-end thresholds.
pub fn termination_thresholds() -> Result<(), String> {
    for phase in [Phase::One, Phase::Two] {
        let mut w = WorldState::reset(&ArenaConfig::new(phase, SpawnMode::FixedMidRange, 3)).unwrap();
        let floor = phase.boss_floor();
        let cases = [
            (DEATH_RATIO * w.player.hp_max, floor, Outcome::Ongoing),
            (DEATH_RATIO * w.player.hp_max - 1e-9, floor, Outcome::PlayerDead),
            (50.0, floor - 1e-9, Outcome::BossDefeated),
            (50.0, floor + 1.0, Outcome::Ongoing),
        ];
        for (hp, boss_hp, want) in cases {
            w.player.hp = hp;
            w.boss.hp = boss_hp;
            let got = check_termination(&w);
            if got != want {
                return Err(format!("phase {phase}: hp {hp}, boss {boss_hp} gave {got}, expected {want}"));
            }
        }
    }
    Ok(())
}

/// Phase 2 must hit harder per landed blow and attack less at close range.
pub fn phase_dominance(p1: &SweepStats, p2: &SweepStats) -> Result<(f64, f64, f64, f64), String> {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let rate = |s: &SweepStats| s.close_attacks as f64 / s.close_decisions.max(1) as f64;
    let (d1, d2) = (mean(&p1.hits), mean(&p2.hits));
    let (r1, r2) = (rate(p1), rate(p2));
    if p1.hits.is_empty() || p2.hits.is_empty() || p1.close_decisions == 0 || p2.close_decisions == 0 {
        return Err("sweep produced no hits or no close-range decisions".into());
    }
    if d2 <= d1 {
        return Err(format!("mean hit phase 2 {d2:.2} <= phase 1 {d1:.2}"));
    }
    if r2 >= r1 {
        return Err(format!("close-range attack rate phase 2 {r2:.3} >= phase 1 {r1:.3}"));
    }
    Ok((d1, d2, r1, r2))
}

/// Largest elementwise relative error between analytic and central-difference
/// gradients of the mean Huber loss, over `nets` random networks and batches.
/// Entries whose gradients are both below 1e-6 in magnitude are compared on the
/// 1e-6 scale, where central differences are dominated by rounding.
pub fn gradient_check(nets: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for n in 0..nets {
        let skill = SkillId::ALL[n % SkillId::ALL.len()];
        let sizes = [skill.obs_dim(), 64, 64, skill.action_count()];
        let mut net = Mlp::new(&sizes, &mut rng).unwrap();
        let batch = rng.gen_range(4..=16);
        let obs: Vec<f64> = (0..batch * sizes[0]).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let actions: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..sizes[3])).collect();
        // Residuals spread over both Huber branches, away from the switch at 1.
        let q = net.forward_batch(&obs, batch).unwrap();
        let targets: Vec<f64> = actions
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let off = if rng.gen_bool(0.5) { rng.gen_range(0.05..0.8) } else { rng.gen_range(1.3..4.0) };
                q.outputs()[i * sizes[3] + a] + if rng.gen_bool(0.5) { off } else { -off }
            })
            .collect();
        let (_, analytic) = loss_and_grad(&net, &obs, &actions, &targets).unwrap();
        for (k, &g) in analytic.iter().enumerate() {
            let orig = net.params()[k];
            net.params_mut()[k] = orig + h;
            let (up, _) = loss_and_grad(&net, &obs, &actions, &targets).unwrap();
            net.params_mut()[k] = orig - h;
            let (down, _) = loss_and_grad(&net, &obs, &actions, &targets).unwrap();
            net.params_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let scale = g.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((g - numeric).abs() / scale);
        }
    }
    worst
}

pub const OBS_DIMS: [(SkillId, usize, usize); 6] = [
    (SkillId::Cam, 7, 5),
    (SkillId::Lock, 2, 2),
    (SkillId::Move, 6, 9),
    (SkillId::Dodge, 7, 2),
    (SkillId::Ha, 11, 3),
    (SkillId::E2e, 25, 16),
];

/// Observation widths, action-set sizes and the monolithic action table.
pub fn projection_suite() -> Result<(), String> {
    let mut state = [0.0; GLOBAL_DIM];
    for (i, x) in state.iter_mut().enumerate() {
        *x = i as f64 + 0.5;
    }
    let g = GlobalState(state);
    for (skill, dim, actions) in OBS_DIMS {
        let obs = project(&g, skill);
        if obs.features.len() != dim || skill.obs_dim() != dim {
            return Err(format!("{skill}: observation width {} (expected {dim})", obs.features.len()));
        }
        for (x, &i) in obs.features.iter().zip(feature_indices(skill)) {
            if *x != state[i] {
                return Err(format!("{skill}: feature {i} not copied"));
            }
        }
        if skill.action_count() != actions || skill.action_set().size() != actions {
            return Err(format!("{skill}: {} actions (expected {actions})", skill.action_count()));
        }
    }
    let mut seen = std::collections::HashSet::new();
    for i in 0..16 {
        let c = decode_e2e(i).ok_or(format!("e2e action {i} does not decode"))?;
        if encode_e2e(&c) != Some(i) {
            return Err(format!("e2e action {i} does not round trip"));
        }
        seen.insert(c);
    }
    if seen.len() != 16 || decode_e2e(16).is_some() {
        return Err("e2e table is not a bijection on 0..16".into());
    }
    Ok(())
}

/// Hand-worked reward values; returns how many were checked.
pub fn reward_examples() -> Result<usize, String> {
    use std::f64::consts::PI;
    let w = RewardWeights::default();
    let d = |dh: f64, dhe: f64, agent_dead: bool, enemy_dead: bool| TickDelta {
        dh,
        dhe,
        agent_dead,
        enemy_dead,
        ..Default::default()
    };
    let win = d(0.0, -0.03, false, true);
    let cases: Vec<(&str, f64, f64)> = vec![
        ("cam aligned", reward_cam(0.0, &w), 1.0),
        ("cam opposite", reward_cam(PI, &w), -PI),
        ("cam inside bonus", reward_cam(0.5, &w), 0.5),
        ("lock on", reward_lock(true), 1.0),
        ("lock off", reward_lock(false), -1.0),
        ("lock sum of 7", (0..7).map(|_| reward_lock(true)).sum(), 7.0),
        ("move d=5", reward_move(5.0, false, &w), -0.5),
        ("move d=0", reward_move(0.0, false, &w), 0.0),
        ("move d=10", reward_move(10.0, false, &w), -1.0),
        ("dodge idle", reward_dodge(&TickDelta::default(), 0.5, &w), 0.02),
        ("dodge hit", reward_dodge(&d(-0.1, 0.0, false, false), 0.5, &w), -0.48),
        ("dodge death", reward_dodge(&d(-0.06, 0.0, true, false), 0.01, &w), 0.02 - 5.0 * 0.06 - 5.0 - 1.0),
        ("ha clean hit", reward_ha(&d(0.0, -0.04, false, false), &w), 0.6),
        ("ha heal", reward_ha(&d(0.6, 0.0, false, false), &w), 3.0),
        ("ha win", reward_ha(&win, &w), 5.45),
        ("e2e zero", reward_e2e(&TickDelta::default(), &w), 0.0),
        ("e2e clean hit", reward_e2e(&d(0.0, -0.04, false, false), &w), 0.6),
        ("e2e win", reward_e2e(&win, &w), 5.45),
    ];
    for (name, got, want) in &cases {
        if (got - want).abs() >= 1e-9 {
            return Err(format!("{name}: {got} != {want}"));
        }
    }
    Ok(cases.len())
}

/// Pointwise equality of the end-to-end and heal-attack rewards.
pub fn e2e_matches_ha(samples: usize, seed: u64) -> Result<(), String> {
    let w = RewardWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let delta = TickDelta {
            dh: rng.gen_range(-1.0..1.0),
            dhe: -rng.gen_range(0.0..1.0),
            dsigma: rng.gen_range(-1.0..1.0),
            destus: -(rng.gen_range(0..2) as f64),
            agent_dead: rng.gen_bool(0.1),
            enemy_dead: rng.gen_bool(0.1),
        };
        let (a, b) = (reward_e2e(&delta, &w), reward_ha(&delta, &w));
        if a.to_bits() != b.to_bits() {
            return Err(format!("{delta:?}: e2e {a} vs ha {b}"));
        }
    }
    Ok(())
}

/// Analytic episode-return maxima for DODGE (at its 512-step horizon) and HA.
pub fn return_scales() -> (f64, f64) {
    let w = RewardWeights::default();
    (dodge_return_max(512, &w), ha_return_max(Phase::Two, &w).max(ha_return_max(Phase::One, &w)))
}
