//! Two-phase boss-combat simulator and a skill-graph reinforcement-learning
//! pipeline: five narrow skills trained in dependency order, composed at run
//! time, ablated by randomization, and selectively fine-tuned after the boss
//! changes phase.

pub mod arena;
pub mod cli;
pub mod config;
pub mod curriculum;
pub mod error;
pub mod evalharness;
pub mod qlearn;
pub mod rewards;
pub mod seeding;
pub mod skills;
pub mod state;
pub mod summary;
pub mod trajectory;

pub use error::{Error, Result};
