//! TD learning: replay, exploration schedule, per-cell losses, the
//! optimizer, and the agents that tie them to a network.

mod agent;
mod dqn;
mod local;
mod optim;
mod replay;

pub use agent::{build_agent, Agent, AgentKind, TrainOutcome, TrainStats};
pub use dqn::{dqn_grad_check, DqnAgent, DqnCache, DqnNet, DQN_PARAM_NAMES};
pub use local::{locality_check, LocalAgent, LocalityReport};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use replay::{ReplayBuffer, Transition};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    #[serde(default = "one")]
    pub start: f64,
    #[serde(default = "eps_end")]
    pub end: f64,
    #[serde(default = "exploration_fraction")]
    pub exploration_fraction: f64,
    /// Length of the run the fraction refers to.
    #[serde(default = "total_steps")]
    pub total_steps: u64,
}

fn one() -> f64 {
    1.0
}

fn eps_end() -> f64 {
    0.01
}

fn exploration_fraction() -> f64 {
    0.1
}

fn total_steps() -> u64 {
    4_000_000
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: one(),
            end: eps_end(),
            exploration_fraction: exploration_fraction(),
            total_steps: total_steps(),
        }
    }
}

impl EpsilonSchedule {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.start) || !unit(self.end) || !unit(self.exploration_fraction) {
            return Err(Error::Config(
                "epsilon start, end and exploration_fraction must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Step at which the decay reaches `end`.
    pub fn decay_steps(&self) -> f64 {
        self.exploration_fraction * self.total_steps as f64
    }

    pub fn epsilon_at(&self, step: u64) -> f64 {
        let span = self.decay_steps();
        let s = step as f64;
        if s >= span {
            return self.end;
        }
        self.start + (self.end - self.start) * (s / span)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    #[serde(default = "gamma")]
    pub gamma: f64,
    #[serde(default = "batch_size")]
    pub batch_size: usize,
    #[serde(default = "learning_starts")]
    pub learning_starts: u64,
    #[serde(default = "one_u64")]
    pub train_frequency: u64,
    #[serde(default = "target_sync_interval")]
    pub target_sync_interval: u64,
    #[serde(default = "buffer_capacity")]
    pub buffer_capacity: usize,
    /// Clip rewards to `[-1, 1]` before storing them.
    #[serde(default)]
    pub reward_clip: bool,
    /// Update cells on the worker pool instead of one after another.
    #[serde(default = "yes")]
    pub parallel_cells: bool,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

fn gamma() -> f64 {
    0.99
}

fn batch_size() -> usize {
    512
}

fn learning_starts() -> u64 {
    50_000
}

fn one_u64() -> u64 {
    1
}

fn target_sync_interval() -> u64 {
    1_000
}

fn buffer_capacity() -> usize {
    100_000
}

fn yes() -> bool {
    true
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            gamma: gamma(),
            batch_size: batch_size(),
            learning_starts: learning_starts(),
            train_frequency: one_u64(),
            target_sync_interval: target_sync_interval(),
            buffer_capacity: buffer_capacity(),
            reward_clip: false,
            parallel_cells: true,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("learner.gamma must be in [0, 1), got {}", self.gamma)));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err(Error::Config("learner.batch_size and buffer_capacity must be positive".into()));
        }
        if self.batch_size > self.buffer_capacity {
            return Err(Error::Config(format!(
                "learner.batch_size {} exceeds buffer_capacity {}",
                self.batch_size, self.buffer_capacity
            )));
        }
        if self.train_frequency == 0 || self.target_sync_interval == 0 {
            return Err(Error::Config(
                "learner.train_frequency and target_sync_interval must be positive".into(),
            ));
        }
        self.optimizer.validate()
    }
}

/// `r + γ·max_q`, or `r` at episode end.
pub fn td_target<T: Real>(reward: T, gamma: T, max_q: T, done: bool) -> T {
    if done {
        reward
    } else {
        reward + gamma * max_q
    }
}

/// Squared TD error and its derivative with respect to `q`.
pub fn loss_and_grad<T: Real>(q: T, target: T) -> (T, T) {
    let diff = target - q;
    (diff * diff, -T::lit(2.0) * diff)
}

/// Batch mean of squared TD errors and the per-sample gradients of that mean.
pub fn batch_loss_and_grad<T: Real>(q: &[T], targets: &[T]) -> (T, Vec<T>) {
    let n = T::from_usize(q.len().max(1)).unwrap();
    let mut total = T::zero();
    let grads = q
        .iter()
        .zip(targets)
        .map(|(&q, &t)| {
            let (l, g) = loss_and_grad(q, t);
            total += l;
            g / n
        })
        .collect();
    (total / n, grads)
}
