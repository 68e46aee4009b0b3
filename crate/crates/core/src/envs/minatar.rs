use super::mt19937::Mt19937;
use super::{one_hot_codes, EnvSpec, Environment, Step};
use crate::error::{Error, Result};

pub const GRID: usize = 10;

/// MinAtar exposes the full action set `n l u r d f` for every game.
pub const MINATAR_ACTIONS: usize = 6;
pub const MINATAR_DEFAULT_STICKY_PROB: f64 = 0.1;

pub(crate) const ACT_LEFT: usize = 1;
pub(crate) const ACT_RIGHT: usize = 3;
pub(crate) const ACT_FIRE: usize = 5;

pub type Grid = [[bool; GRID]; GRID];

/// Game rules without the sticky-action wrapper.
pub trait GridGame: Send {
    const NAME: &'static str;
    const CHANNELS: usize;
    /// Largest reward a single tick can produce.
    const MAX_REWARD: f64;

    fn reset(&mut self, rng: &mut Mt19937);

    /// One tick. Returns the reward and whether the episode ended.
    fn act(&mut self, action: usize) -> (u32, bool);

    /// Fill `out` (channel-major, `CHANNELS × 10 × 10`) with 0/1 cells.
    fn render(&self, out: &mut [u8]);
}

#[inline]
pub(crate) fn set(out: &mut [u8], channel: usize, row: usize, col: usize) {
    out[channel * GRID * GRID + row * GRID + col] = 1;
}

pub(crate) fn paint(out: &mut [u8], channel: usize, grid: &Grid) {
    for (r, row) in grid.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if v {
                set(out, channel, r, c);
            }
        }
    }
}

pub(crate) fn count(grid: &Grid) -> usize {
    grid.iter().flatten().filter(|&&v| v).count()
}

/// Sticky-action wrapper sharing one random stream with the game, as in
/// the reference `Environment` class.
#[derive(Debug)]
pub struct MinAtar<G> {
    game: G,
    rng: Mt19937,
    sticky_action_prob: f64,
    last_action: usize,
    done: bool,
    spec: EnvSpec,
    frame: Vec<u8>,
}

impl<G: GridGame> MinAtar<G> {
    pub fn new(mut game: G, sticky_action_prob: f64) -> Self {
        let mut rng = Mt19937::new(0);
        game.reset(&mut rng);
        let obs_dim = G::CHANNELS * GRID * GRID;
        Self {
            game,
            rng,
            sticky_action_prob,
            last_action: 0,
            done: false,
            spec: EnvSpec {
                name: G::NAME.to_string(),
                obs_dim,
                n_actions: MINATAR_ACTIONS,
                action_codes: one_hot_codes(MINATAR_ACTIONS),
                reward_range: (0.0, G::MAX_REWARD),
            },
            frame: vec![0; obs_dim],
        }
    }

    /// Current observation as 0/1 bytes, channel-major.
    pub fn frame(&mut self) -> &[u8] {
        self.frame.iter_mut().for_each(|v| *v = 0);
        self.game.render(&mut self.frame);
        &self.frame
    }

    fn observation(&mut self) -> Vec<f64> {
        self.frame().iter().map(|&v| v as f64).collect()
    }

    pub fn game(&self) -> &G {
        &self.game
    }
}

impl<G: GridGame> Environment for MinAtar<G> {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    /// Seeds are truncated to 32 bits, as numpy requires.
    fn reset(&mut self, seed: Option<u64>) -> Vec<f64> {
        if let Some(s) = seed {
            self.rng = Mt19937::new(s as u32);
            self.last_action = 0;
        }
        self.game.reset(&mut self.rng);
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        if action >= MINATAR_ACTIONS {
            return Err(Error::InvalidInput(format!(
                "action {action} out of range for {MINATAR_ACTIONS} actions"
            )));
        }
        let action = if self.rng.next_f64() < self.sticky_action_prob {
            self.last_action
        } else {
            action
        };
        self.last_action = action;
        let (reward, done) = self.game.act(action);
        self.done = done;
        Ok(Step {
            obs: self.observation(),
            reward: reward as f64,
            done,
        })
    }
}
