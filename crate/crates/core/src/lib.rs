//! Tabular option discovery from the successor representation.
//!
//! The crate covers gridworld MDPs and their solvers, the successor
//! representation and its spectral bases, eigenoptions, covering options,
//! covering eigenoptions, the option keyboard, and the evaluation metrics
//! used to compare them.

pub mod discovery;
pub mod error;
pub mod evaluation;
pub mod grid;
pub mod keyboard;
pub mod learn;
pub mod mdp;
pub mod online;
pub mod option;
pub mod rng;
pub mod rollout;
pub mod solve;
pub mod spectral;
pub mod sr;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{parse_grid, Cell, GridSpec};
pub use mdp::{build_mdp, induced_transition_matrix, Action, Policy, TabularMDP};
