//! Offline goal-conditioned policy learning from distance distributions.
//!
//! The pipeline learns the distribution of time-step distances between
//! states and hindsight goals from unlabeled trajectories, turns it into a
//! soft-minimum distance estimate, and trains a goal-conditioned policy by
//! exponentiated-advantage weighted imitation. The [`oracle`] module holds
//! exact tabular solvers used to verify the learning rules on small
//! deterministic environments.

pub mod config;
pub mod datagen;
pub mod distance;
pub mod error;
pub mod eval;
pub mod mdp;
pub mod nn;
pub mod numerics;
pub mod oracle;
pub mod pipeline;
pub mod policy;
pub mod relabel;

pub use error::{Error, Result};
pub use mdp::{Action, Goal, MdpSpec, State};
