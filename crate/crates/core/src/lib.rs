//! Bioenergetic fish-growth simulation with feeding and water-quality
//! controllers: bang-bang, PID, sampled receding-horizon MPC, tabular
//! Q-learning and an MPC-driven Q-learning hybrid.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classical;
pub mod growth;
pub mod mpc;
pub mod profile;
pub mod qlearning;
pub mod rlmpc;
pub mod rng;
pub mod sim;

pub use growth::{EnvState, GrowthError, GrowthParams, SimState, StockingPolicy};
pub use profile::{Ambient, EnvProfile};
pub use sim::{simulate, ControlAction, Controller, Plant, Record, Reference, SimConfig, SimError, Trajectory};
