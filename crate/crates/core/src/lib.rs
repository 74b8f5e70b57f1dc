//! Tabular-MDP laboratory for preference-based RL with labeler capability beliefs.
//!
//! The crate is organized bottom-up:
//!
//! * [`mdp`] – finite MDPs, policies, trajectories and the two reference environments.
//! * [`solvers`] – exact dynamic programming (optimal, ε-greedy-class, policy evaluation,
//!   discounted occupancy and the performance-difference identity).
//! * [`preference`] – segment scoring, the partial-return / regret / belief preference
//!   models and synthetic dataset generation.
//! * [`cpl`] – Contrastive Preference Learning over a softmax tabular policy.
//! * [`bound`] – normative-ideal post-training policies, belief perturbations and the
//!   disagreement bound checks.
//! * [`stats`] – Kruskal–Wallis, Dunn–Bonferroni and Cliff's delta for ordinal data.

pub mod bound;
pub mod cpl;
pub mod error;
pub mod mdp;
pub mod preference;
pub mod rng;
pub mod solvers;
pub mod stats;
pub mod table;

pub use error::{Error, Result};
pub use mdp::{GridCoord, Policy, Segment, TabularMdp, Trajectory, Transition};
pub use preference::{Alpha, BeliefSpec, PreferenceDataset, PreferencePair, Side};
pub use solvers::ValueTables;
pub use table::SaTable;

/// Default convergence tolerance for the exact solvers.
pub const DEFAULT_TOL: f64 = 1e-10;
