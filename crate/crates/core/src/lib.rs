//! Adversarial reward-collecting grid game with three agents: epsilon-greedy
//! tabular Q-learning, deep Q-learning on a small from-scratch network, and
//! online re-planning against an estimated adversary model with an exact
//! time-expanded path solver.

pub mod config;
pub mod deep_q;
pub mod error;
pub mod grid_env;
pub mod harness;
pub mod neural;
pub mod online_opt;
pub mod oracles;
pub mod seeding;
pub mod tabular_q;

pub use error::{Error, Result};
pub use grid_env::{Action, AdversarySpec, Cell, GameConfig, GameState, Movement, Status, StepOutcome};
