//! Deterministic, seedable environments.
//!
//! The two grid games reproduce MinAtar 1.0.15 step for step, including
//! sticky actions, the difficulty ramp and numpy's Mersenne Twister stream.
//! The point-mass task exercises bang-bang action codes.

mod breakout;
pub mod fixtures;
mod minatar;
mod mt19937;
mod point_mass;
mod space_invaders;

pub use breakout::Breakout;
pub use minatar::{MinAtar, MINATAR_ACTIONS, MINATAR_DEFAULT_STICKY_PROB};
pub use mt19937::Mt19937;
pub use point_mass::{PointMass, PointMassConfig};
pub use space_invaders::SpaceInvaders;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SeededRng;

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub obs_dim: usize,
    pub n_actions: usize,
    /// Row `a` is the vector appended to a cell input for action `a`.
    pub action_codes: Vec<Vec<f64>>,
    /// Inclusive bounds on the per-step reward.
    pub reward_range: (f64, f64),
}

impl EnvSpec {
    pub fn action_dim(&self) -> usize {
        self.action_codes.first().map_or(0, Vec::len)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Start a new episode. `Some(seed)` restarts the environment's random
    /// stream first; `None` continues it.
    fn reset(&mut self, seed: Option<u64>) -> Vec<f64>;

    /// Advance one tick. Errors once the episode has finished.
    fn step(&mut self, action: usize) -> Result<Step>;
}

/// Environment selection and its tunables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    /// `breakout`, `space_invaders` or `point_mass`.
    pub name: String,
    #[serde(default = "default_sticky")]
    pub sticky_action_prob: f64,
    #[serde(default = "default_true")]
    pub difficulty_ramping: bool,
    #[serde(default)]
    pub point_mass: PointMassConfig,
}

fn default_sticky() -> f64 {
    MINATAR_DEFAULT_STICKY_PROB
}

fn default_true() -> bool {
    true
}

impl EnvConfig {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_string(),
            sticky_action_prob: MINATAR_DEFAULT_STICKY_PROB,
            difficulty_ramping: true,
            point_mass: PointMassConfig::default(),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Environment>> {
        if !(0.0..=1.0).contains(&self.sticky_action_prob) {
            return Err(Error::Config(format!(
                "env.sticky_action_prob must be in [0, 1], got {}",
                self.sticky_action_prob
            )));
        }
        Ok(match self.name.as_str() {
            "breakout" => Box::new(MinAtar::new(Breakout::default(), self.sticky_action_prob)),
            "space_invaders" => Box::new(MinAtar::new(
                SpaceInvaders::new(self.difficulty_ramping),
                self.sticky_action_prob,
            )),
            "point_mass" => Box::new(PointMass::new(self.point_mass.clone())?),
            other => {
                return Err(Error::Config(format!(
                    "unknown env `{other}` (expected breakout, space_invaders or point_mass)"
                )))
            }
        })
    }
}

/// All `2^k` sign vectors in `{-1, +1}^k`, lexicographic with `-1 < +1`.
pub fn bang_bang_actions(k: usize) -> Result<Vec<Vec<f64>>> {
    if k == 0 || k > 16 {
        return Err(Error::InvalidInput(format!(
            "bang-bang action dimensionality must be in 1..=16, got {k}"
        )));
    }
    Ok((0..1usize << k)
        .map(|i| {
            (0..k)
                .map(|j| if (i >> (k - 1 - j)) & 1 == 1 { 1.0 } else { -1.0 })
                .collect()
        })
        .collect())
}

pub fn one_hot_codes(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Summary of episode returns. `std` is the population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnStats {
    pub episodes: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl ReturnStats {
    pub fn from_returns(returns: &[f64]) -> Self {
        let n = returns.len().max(1) as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        Self {
            episodes: returns.len(),
            mean,
            std: var.sqrt(),
            min: returns.iter().copied().fold(f64::INFINITY, f64::min),
            max: returns.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Mean and spread of returns under a uniform-random policy.
pub fn random_policy_baseline(env: &mut dyn Environment, episodes: usize, seed: u64) -> Result<ReturnStats> {
    if episodes == 0 {
        return Err(Error::InvalidInput("episodes must be at least 1".into()));
    }
    let n_actions = env.spec().n_actions;
    let mut rng = SeededRng::with_stream(seed, 7);
    let mut returns = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        env.reset(if ep == 0 { Some(seed) } else { None });
        let mut total = 0.0;
        loop {
            let step = env.step(rng.below(n_actions))?;
            total += step.reward;
            if step.done {
                break;
            }
        }
        returns.push(total);
    }
    Ok(ReturnStats::from_returns(&returns))
}
