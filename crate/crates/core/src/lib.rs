//! Joint training of a task ("forward") agent and a reset agent that learns to
//! return the system to its initial state from examples of initial states.

pub mod baselines;
pub mod buffer;
pub mod envs;
pub mod forward;
pub mod orchestrator;
pub mod reset;
mod error;
pub mod nn;

pub use error::{Error, Result};
