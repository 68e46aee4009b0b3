//! Backprop-free local Q-learning.
//!
//! Networks are stacks of independently trained cells. Each cell reads the
//! observation, the layer below and the previous-step activation of the
//! layer above, and learns its own Q estimate from a TD loss whose
//! gradient never leaves the cell.

pub mod cells;
pub mod envs;
pub mod error;
pub mod harness;
pub mod learner;
pub mod linalg;
pub mod network;

pub use error::{Error, Result};
