use serde::{Deserialize, Serialize};

use super::{bang_bang_actions, EnvSpec, Environment, Step};
use crate::error::{Error, Result};
use crate::linalg::SeededRng;

/// A `k`-dimensional point mass pushed by bang-bang forces toward a target
/// inside the box `[-1, 1]^k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointMassConfig {
    pub k: usize,
    pub dt: f64,
    pub horizon: usize,
}

impl Default for PointMassConfig {
    fn default() -> Self {
        Self {
            k: 2,
            dt: 0.05,
            horizon: 200,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PointMass {
    cfg: PointMassConfig,
    spec: EnvSpec,
    rng: SeededRng,
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub target: Vec<f64>,
    pub steps: usize,
    done: bool,
}

impl PointMass {
    pub fn new(cfg: PointMassConfig) -> Result<Self> {
        if cfg.horizon == 0 || !(cfg.dt > 0.0) {
            return Err(Error::Config("point_mass needs horizon > 0 and dt > 0".into()));
        }
        let codes = bang_bang_actions(cfg.k)?;
        let k = cfg.k;
        Ok(Self {
            spec: EnvSpec {
                name: "point_mass".into(),
                obs_dim: 3 * k,
                n_actions: codes.len(),
                action_codes: codes,
                reward_range: (0.0, 1.0),
            },
            cfg,
            rng: SeededRng::new(0),
            position: vec![0.0; k],
            velocity: vec![0.0; k],
            target: vec![0.0; k],
            steps: 0,
            done: true,
        })
    }

    /// Arena diagonal; a distance this large earns nothing.
    pub fn max_distance(&self) -> f64 {
        2.0 * (self.cfg.k as f64).sqrt()
    }

    pub fn distance(&self) -> f64 {
        self.position
            .iter()
            .zip(&self.target)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            .sqrt()
    }

    fn observation(&self) -> Vec<f64> {
        let mut obs = Vec::with_capacity(self.spec.obs_dim);
        obs.extend_from_slice(&self.position);
        obs.extend_from_slice(&self.velocity);
        obs.extend_from_slice(&self.target);
        obs
    }

    /// Apply an explicit force vector (components in `{-1, +1}`).
    pub fn push(&mut self, force: &[f64]) -> Result<Step> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let dt = self.cfg.dt;
        for ((p, v), f) in self.position.iter_mut().zip(&mut self.velocity).zip(force) {
            *v += dt * f;
            *p += dt * *v;
        }
        self.steps += 1;
        self.done = self.steps >= self.cfg.horizon;
        let reward = (1.0 - self.distance() / self.max_distance()).max(0.0);
        Ok(Step {
            obs: self.observation(),
            reward,
            done: self.done,
        })
    }
}

impl Environment for PointMass {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: Option<u64>) -> Vec<f64> {
        if let Some(s) = seed {
            self.rng = SeededRng::new(s);
        }
        let k = self.cfg.k;
        self.position = (0..k).map(|_| self.rng.uniform_in(-1.0, 1.0)).collect();
        self.velocity = vec![0.0; k];
        self.target = (0..k).map(|_| self.rng.uniform_in(-1.0, 1.0)).collect();
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        if action >= self.spec.n_actions {
            return Err(Error::InvalidInput(format!(
                "action {action} out of range for {} actions",
                self.spec.n_actions
            )));
        }
        let force = self.spec.action_codes[action].clone();
        self.push(&force)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alternating_force_drifts_by_dt_squared_per_pair() {
        let mut env = PointMass::new(PointMassConfig::default()).unwrap();
        env.reset(Some(4));
        let start = env.position.clone();
        let dt = 0.05;
        // action 3 is (+1, +1), action 0 is (-1, -1)
        env.step(3).unwrap();
        env.step(0).unwrap();
        for (p, s) in env.position.iter().zip(&start) {
            assert!(((p - s) - dt * dt).abs() < 1e-15);
        }
        assert!(env.velocity.iter().all(|v| v.abs() < 1e-15));
        // velocity never exceeds dt; displacement after n pairs is n·dt²
        for _ in 0..9 {
            env.step(3).unwrap();
            assert!(env.velocity.iter().all(|v| (v - dt).abs() < 1e-15));
            env.step(0).unwrap();
        }
        for (p, s) in env.position.iter().zip(&start) {
            assert!(((p - s) - 10.0 * dt * dt).abs() < 1e-13);
        }
    }

    #[test]
    fn rewards_nonnegative_and_episode_ends_at_horizon() {
        let mut env = PointMass::new(PointMassConfig {
            horizon: 50,
            ..PointMassConfig::default()
        })
        .unwrap();
        env.reset(Some(1));
        let mut n = 0;
        loop {
            let s = env.step(1).unwrap();
            n += 1;
            assert!((0.0..=1.0).contains(&s.reward));
            if s.done {
                break;
            }
        }
        assert_eq!(n, 50);
        assert!(env.step(0).is_err());
    }

    #[test]
    fn reset_is_seeded() {
        let mut a = PointMass::new(PointMassConfig::default()).unwrap();
        let mut b = PointMass::new(PointMassConfig::default()).unwrap();
        assert_eq!(a.reset(Some(9)), b.reset(Some(9)));
        assert_eq!(a.spec().n_actions, 4);
        assert_eq!(a.spec().obs_dim, 6);
    }
}
