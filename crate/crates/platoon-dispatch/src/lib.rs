//! Threshold dispatching for truck platoons at a highway staging station.
//!
//! Trucks queue at a station in discrete time slots and can leave either by
//! joining a passing platoon (free) or as a solo dispatch (premium `kappa`).
//! Holding costs one unit per queued truck per slot. This crate provides:
//!
//! - [`model`]: slot-level dynamics, costs, and the threshold decision rule;
//! - [`dp`]: finite-horizon and discounted value iteration on a truncated
//!   queue, with policy structure diagnostics;
//! - [`steady_state`]: stationary distribution and long-run average cost of
//!   a threshold policy in closed form, with a linear-algebra cross-check,
//!   plus the optimal-threshold search;
//! - [`sim`]: seeded slot-by-slot simulation with replicated runs and
//!   confidence intervals;
//! - [`cli`]: the `platoon-dispatch` command-line interface.

pub mod cli;
pub mod dp;
pub mod error;
pub mod model;
pub mod sim;
pub mod steady_state;

pub use error::{Error, Result};
pub use model::{Action, ModelParams, QueueState, SlotEvent};
