use serde::{Deserialize, Serialize};

use super::{DqnAgent, LearnerConfig, LocalAgent};
use crate::envs::EnvSpec;
use crate::error::Result;
use crate::linalg::{Matrix, Real, SeededRng};
use crate::network::NetworkConfig;

/// Which learner drives the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    /// A stack of locally trained cells (AD or ARQ).
    #[default]
    Cells,
    /// Fully connected network trained end to end.
    Dqn,
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cells => "cells",
            Self::Dqn => "dqn",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainStats {
    /// Mean TD loss per cell; a single entry for DQN.
    pub losses: Vec<f64>,
    /// Mean online Q of the replayed state-action pairs, averaged over cells.
    pub mean_q: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainOutcome {
    Trained(TrainStats),
    Skipped(String),
}

pub trait Agent<T: Real>: Send {
    fn label(&self) -> String;

    /// Clear any per-episode state.
    fn begin_episode(&mut self);

    /// Epsilon-greedy action for `obs`; advances the per-episode state.
    fn act(&mut self, obs: &[T], epsilon: f64, rng: &mut SeededRng) -> Result<usize>;

    /// Store the transition that follows the last `act`.
    fn observe(&mut self, action: usize, reward: f64, next_obs: &[T], done: bool) -> Result<()>;

    fn buffer_len(&self) -> usize;

    fn train_step(&mut self, rng: &mut SeededRng) -> Result<TrainOutcome>;

    fn sync_target(&mut self);

    /// Number of loss heads reported by `train_step`.
    fn heads(&self) -> usize;

    fn param_count(&self) -> usize;

    /// Online then target weights, in checkpoint order.
    fn matrices(&self) -> Vec<&Matrix<T>>;

    fn load_matrices(&mut self, mats: &[Matrix<f32>]) -> Result<()>;
}

pub fn build_agent<T: Real>(
    kind: AgentKind,
    network: &NetworkConfig,
    learner: &LearnerConfig,
    spec: &EnvSpec,
    rng: &mut SeededRng,
) -> Result<Box<dyn Agent<T>>> {
    learner.validate()?;
    Ok(match kind {
        AgentKind::Cells => Box::new(LocalAgent::<T>::new(network.clone(), learner.clone(), spec, rng)?),
        AgentKind::Dqn => Box::new(DqnAgent::<T>::new(&network.layer_hidden_dims, learner.clone(), spec, rng)?),
    })
}

pub(crate) fn stored_reward(reward: f64, clip: bool) -> f64 {
    if clip {
        reward.clamp(-1.0, 1.0)
    } else {
        reward
    }
}
