//! Multi-operator RAN slicing: a weighted proportional-fair resource
//! allocation library with closed-form per-station splits, exact and
//! greedy association solvers, a budgeted semi-online adjustment for user
//! dynamics, a sectorized cellular channel model, and the experiment
//! drivers of a desk-scale simulator.

pub mod allocation;
pub mod analysis;
pub mod channel;
pub mod error;
pub mod model;
pub mod scenario;
pub mod solvers;
pub mod testing;
pub mod verify;

pub use error::{Error, Result};
