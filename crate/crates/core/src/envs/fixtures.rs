//! Recorded trajectories for replay checks.
//!
//! A fixture is a plain text file:
//!
//! ```text
//! game breakout
//! seed 3
//! sticky 0.1
//! reset 9f2c...
//! step 4 0 0 81aa...
//! step 1 1 0 0c3e...
//! ```
//!
//! Every `reset` line after the first continues the random stream. Digests
//! are FNV-1a 64 over the 0/1 observation bytes.

use std::fmt::Write as _;
use std::path::Path;

use super::{EnvConfig, Environment};
use crate::error::{Error, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn obs_digest(obs: &[f64]) -> u64 {
    obs.iter().fold(FNV_OFFSET, |h, &v| (h ^ (v as u8) as u64).wrapping_mul(FNV_PRIME))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Event {
    Reset { digest: u64 },
    Step { action: usize, reward: f64, done: bool, digest: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fixture {
    pub game: String,
    pub seed: u64,
    pub sticky_action_prob: f64,
    pub events: Vec<Event>,
}

impl Fixture {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut game = None;
        let mut seed = None;
        let mut sticky = None;
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| format!("line {}: {what}: `{line}`", i + 1);
            let f: Vec<&str> = line.split_whitespace().collect();
            let hex = |s: &str| u64::from_str_radix(s, 16).map_err(|_| bad("bad digest"));
            match (f[0], f.len()) {
                ("game", 2) => game = Some(f[1].to_string()),
                ("seed", 2) => seed = Some(f[1].parse().map_err(|_| bad("bad seed"))?),
                ("sticky", 2) => sticky = Some(f[1].parse().map_err(|_| bad("bad sticky prob"))?),
                ("reset", 2) => events.push(Event::Reset { digest: hex(f[1])? }),
                ("step", 5) => events.push(Event::Step {
                    action: f[1].parse().map_err(|_| bad("bad action"))?,
                    reward: f[2].parse().map_err(|_| bad("bad reward"))?,
                    done: match f[3] {
                        "0" => false,
                        "1" => true,
                        _ => return Err(bad("done must be 0 or 1")),
                    },
                    digest: hex(f[4])?,
                }),
                _ => return Err(bad("unrecognised line")),
            }
        }
        if !matches!(events.first(), Some(Event::Reset { .. })) {
            return Err("fixture must start with a reset line".into());
        }
        Ok(Self {
            game: game.ok_or("missing `game` line")?,
            seed: seed.ok_or("missing `seed` line")?,
            sticky_action_prob: sticky.ok_or("missing `sticky` line")?,
            events,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|msg| Error::Fixture {
            path: path.to_path_buf(),
            msg,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "game {}\nseed {}\nsticky {}\n",
            self.game, self.seed, self.sticky_action_prob
        );
        for e in &self.events {
            match e {
                Event::Reset { digest } => writeln!(s, "reset {digest:016x}"),
                Event::Step { action, reward, done, digest } => {
                    writeln!(s, "step {action} {reward} {} {digest:016x}", *done as u8)
                }
            }
            .unwrap();
        }
        s
    }

    pub fn steps(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, Event::Step { .. })).count()
    }

    fn env(&self) -> Result<Box<dyn Environment>> {
        EnvConfig {
            sticky_action_prob: self.sticky_action_prob,
            ..EnvConfig::named(&self.game)
        }
        .build()
    }

    /// Replay the recorded actions and return the first mismatch, if any.
    pub fn verify(&self) -> Result<Option<Mismatch>> {
        let mut env = self.env()?;
        let mut first = true;
        for (index, event) in self.events.iter().enumerate() {
            let (expected, got) = match event {
                Event::Reset { .. } => {
                    let obs = env.reset(if first { Some(self.seed) } else { None });
                    first = false;
                    (event.clone(), Event::Reset { digest: obs_digest(&obs) })
                }
                Event::Step { action, .. } => {
                    let s = env.step(*action)?;
                    let got = Event::Step {
                        action: *action,
                        reward: s.reward,
                        done: s.done,
                        digest: obs_digest(&s.obs),
                    };
                    (event.clone(), got)
                }
            };
            if expected != got {
                return Ok(Some(Mismatch { index, expected, got }));
            }
        }
        Ok(None)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub index: usize,
    pub expected: Event,
    pub got: Event,
}

/// Record a trajectory from a fixed action list, resetting after each
/// episode ends.
pub fn record(game: &str, seed: u64, sticky_action_prob: f64, actions: &[usize]) -> Result<Fixture> {
    let mut fx = Fixture {
        game: game.to_string(),
        seed,
        sticky_action_prob,
        events: Vec::new(),
    };
    let mut env = fx.env()?;
    let obs = env.reset(Some(seed));
    fx.events.push(Event::Reset { digest: obs_digest(&obs) });
    for &action in actions {
        let s = env.step(action)?;
        fx.events.push(Event::Step {
            action,
            reward: s.reward,
            done: s.done,
            digest: obs_digest(&s.obs),
        });
        if s.done {
            let obs = env.reset(None);
            fx.events.push(Event::Reset { digest: obs_digest(&obs) });
        }
    }
    Ok(fx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(obs_digest(&[]), 0xcbf2_9ce4_8422_2325);
        // FNV-1a 64 of the single byte 0x00 and of "a" (0x61)
        assert_eq!(obs_digest(&[0.0]), 0xaf63_bd4c_8601_b7df);
        assert_eq!(obs_digest(&[97.0]), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn round_trip_and_self_verify() {
        let actions: Vec<usize> = (0..120).map(|i| (i * 7 + 3) % 6).collect();
        let fx = record("breakout", 2, 0.1, &actions).unwrap();
        let back = Fixture::parse(&fx.to_text()).unwrap();
        assert_eq!(back, fx);
        assert_eq!(back.verify().unwrap(), None);
    }

    #[test]
    fn tampered_fixture_reports_mismatch() {
        let actions = vec![5; 30];
        let mut fx = record("space_invaders", 1, 0.1, &actions).unwrap();
        if let Event::Step { digest, .. } = &mut fx.events[4] {
            *digest ^= 1;
        }
        let m = fx.verify().unwrap().unwrap();
        assert_eq!(m.index, 4);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = Fixture::parse("game breakout\nseed 1\nsticky 0.1\nreset zz\n").unwrap_err();
        assert!(err.contains("line 4"), "{err}");
        assert!(Fixture::parse("game breakout\nseed 1\nsticky 0.1\n").is_err());
    }
}
