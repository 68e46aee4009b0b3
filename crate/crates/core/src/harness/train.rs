use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{hex, Precision, RunConfig};
use crate::envs::{Environment, ReturnStats};
use crate::error::{Error, Result};
use crate::learner::{build_agent, Agent, TrainOutcome};
use crate::linalg::{Real, SeededRng};
use crate::network::{read_checkpoint, write_checkpoint, Checkpoint};

/// Episodes averaged for the reported score.
pub const SUMMARY_WINDOW: usize = 100;

const STREAM_INIT: u64 = 0;
const STREAM_ACT: u64 = 1;
const STREAM_REPLAY: u64 = 2;
const STREAM_EVAL: u64 = 3;

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Record {
    Episode {
        digest: String,
        seed: u64,
        step: u64,
        episode: u64,
        #[serde(rename = "return")]
        ret: f64,
        length: u64,
        epsilon: f64,
        wall_time: f64,
    },
    Train {
        digest: String,
        seed: u64,
        step: u64,
        train_steps: u64,
        /// Mean loss per cell since the previous train record.
        losses: Vec<f64>,
        mean_q: f64,
        epsilon: f64,
        wall_time: f64,
    },
}

impl Record {
    /// Same record with the wall clock zeroed, for determinism checks.
    pub fn without_wall_time(mut self) -> Self {
        match &mut self {
            Record::Episode { wall_time, .. } | Record::Train { wall_time, .. } => *wall_time = 0.0,
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub digest: String,
    pub seed: u64,
    pub total_steps: u64,
    pub train_steps: u64,
    pub episodes: u64,
    /// Mean return of the last (up to) 100 episodes; `None` without any
    /// finished episode.
    pub last_100_mean: Option<f64>,
    pub last_100_episodes: usize,
    pub param_count: usize,
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub digest: String,
    pub name: String,
    pub seeds: Vec<SeedSummary>,
    /// Mean and population std over seeds of `last_100_mean`.
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl RunSummary {
    pub fn from_seeds(cfg: &RunConfig, seeds: Vec<SeedSummary>) -> Self {
        let scores: Vec<f64> = seeds.iter().filter_map(|s| s.last_100_mean).collect();
        let (mean, std) = if scores.len() == seeds.len() && !scores.is_empty() {
            let s = ReturnStats::from_returns(&scores);
            (Some(s.mean), Some(s.std))
        } else {
            (None, None)
        };
        Self {
            digest: cfg.digest_hex(),
            name: cfg.name.clone(),
            seeds,
            mean,
            std,
        }
    }
}

pub fn last_window_mean(returns: &[f64]) -> Option<f64> {
    let tail = &returns[returns.len().saturating_sub(SUMMARY_WINDOW)..];
    (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
}

/// Read every record of a metrics file.
pub fn read_metrics(path: &Path) -> Result<Vec<Record>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::InvalidInput(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn seed_dir(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(format!("seed-{seed}"))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("summary serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn to_real<T: Real>(obs: &[f64]) -> Vec<T> {
    obs.iter().map(|&v| T::lit(v)).collect()
}

fn save_checkpoint<T: Real>(agent: &dyn Agent<T>, digest: [u8; 32], step: u64, path: &Path) -> Result<()> {
    write_checkpoint(path, &Checkpoint::new(digest, step, &agent.matrices()))
}

struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    fn create(path: PathBuf) -> Result<Self> {
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            out: BufWriter::new(file),
            path,
        })
    }

    fn write(&mut self, record: &Record) -> Result<()> {
        serde_json::to_writer(&mut self.out, record).expect("records serialize");
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// One seed of a run: acting, learning, metrics and checkpoints under `dir`.
pub fn train_seed<T: Real>(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<SeedSummary> {
    create_dir(&dir.join("checkpoints"))?;
    let digest = cfg.digest();
    let digest_hex = hex(&digest);
    let clock = Instant::now();

    let mut env = cfg.env.build()?;
    let spec = env.spec().clone();
    let mut init_rng = SeededRng::with_stream(seed, STREAM_INIT);
    let mut act_rng = SeededRng::with_stream(seed, STREAM_ACT);
    let mut replay_rng = SeededRng::with_stream(seed, STREAM_REPLAY);
    let mut agent = build_agent::<T>(cfg.agent, &cfg.network, &cfg.learner, &spec, &mut init_rng)?;
    let mut metrics = MetricsWriter::create(dir.join("metrics.jsonl"))?;

    let learner = &cfg.learner;
    let mut obs = to_real::<T>(&env.reset(Some(seed)));
    agent.begin_episode();
    let mut returns = Vec::new();
    let (mut ep_return, mut ep_len) = (0.0, 0u64);
    let mut train_steps = 0u64;
    let mut loss_acc = vec![0.0; agent.heads()];
    let (mut q_acc, mut acc_n) = (0.0, 0u64);

    for step in 0..cfg.total_steps {
        let t = step + 1;
        let epsilon = cfg.epsilon.epsilon_at(step);
        let action = agent.act(&obs, epsilon, &mut act_rng)?;
        let s = env.step(action)?;
        let next = to_real::<T>(&s.obs);
        agent.observe(action, s.reward, &next, s.done)?;
        ep_return += s.reward;
        ep_len += 1;
        obs = next;

        if t > learner.learning_starts && t % learner.train_frequency == 0 {
            if let TrainOutcome::Trained(stats) = agent.train_step(&mut replay_rng)? {
                train_steps += 1;
                for (a, l) in loss_acc.iter_mut().zip(&stats.losses) {
                    *a += l;
                }
                q_acc += stats.mean_q;
                acc_n += 1;
                if train_steps % cfg.log_interval == 0 {
                    let n = acc_n as f64;
                    metrics.write(&Record::Train {
                        digest: digest_hex.clone(),
                        seed,
                        step: t,
                        train_steps,
                        losses: loss_acc.iter().map(|l| l / n).collect(),
                        mean_q: q_acc / n,
                        epsilon,
                        wall_time: clock.elapsed().as_secs_f64(),
                    })?;
                    loss_acc.iter_mut().for_each(|l| *l = 0.0);
                    q_acc = 0.0;
                    acc_n = 0;
                }
            }
        }
        if t > learner.learning_starts && t % learner.target_sync_interval == 0 {
            agent.sync_target();
        }

        if s.done {
            returns.push(ep_return);
            metrics.write(&Record::Episode {
                digest: digest_hex.clone(),
                seed,
                step: t,
                episode: returns.len() as u64,
                ret: ep_return,
                length: ep_len,
                epsilon,
                wall_time: clock.elapsed().as_secs_f64(),
            })?;
            ep_return = 0.0;
            ep_len = 0;
            obs = to_real::<T>(&env.reset(None));
            agent.begin_episode();
        }
        if t % cfg.checkpoint_interval == 0 {
            save_checkpoint(agent.as_ref(), digest, t, &dir.join(format!("checkpoints/step-{t}.ckpt")))?;
        }
    }
    metrics.finish()?;
    save_checkpoint(agent.as_ref(), digest, cfg.total_steps, &dir.join("final.ckpt"))?;

    let summary = SeedSummary {
        digest: digest_hex,
        seed,
        total_steps: cfg.total_steps,
        train_steps,
        episodes: returns.len() as u64,
        last_100_mean: last_window_mean(&returns),
        last_100_episodes: returns.len().min(SUMMARY_WINDOW),
        param_count: agent.param_count(),
        wall_time: clock.elapsed().as_secs_f64(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Every seed of `cfg`, written under its run directory.
pub fn train(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let run_dir = cfg.run_dir();
    create_dir(&run_dir)?;
    let cfg_path = run_dir.join("config.toml");
    let header = format!("# digest {}\n", cfg.digest_hex());
    std::fs::write(&cfg_path, header + &cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;

    let one = |seed: u64| -> Result<SeedSummary> {
        let dir = seed_dir(&run_dir, seed);
        match cfg.precision {
            Precision::F32 => train_seed::<f32>(cfg, seed, &dir),
            Precision::F64 => train_seed::<f64>(cfg, seed, &dir),
        }
    };
    let seeds = if cfg.parallel_seeds {
        std::thread::scope(|s| {
            let handles: Vec<_> = cfg.seeds.iter().map(|&seed| s.spawn(move || one(seed))).collect();
            handles.into_iter().map(|h| h.join().expect("seed thread panicked")).collect::<Result<Vec<_>>>()
        })
    } else {
        cfg.seeds.iter().map(|&seed| one(seed)).collect::<Result<Vec<_>>>()
    }?;
    let summary = RunSummary::from_seeds(cfg, seeds);
    write_json(&run_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub digest: String,
    pub seed: u64,
    pub epsilon: f64,
    /// Episodes cut at the step cap.
    pub truncated: usize,
    pub returns: Vec<f64>,
    pub stats: ReturnStats,
}

/// Load `checkpoint` into an agent built from `cfg`, refusing a digest mismatch.
pub fn load_agent<T: Real>(cfg: &RunConfig, checkpoint: &Path, seed: u64) -> Result<(Box<dyn Agent<T>>, Box<dyn Environment>)> {
    let ckpt = read_checkpoint(checkpoint)?;
    if ckpt.digest != cfg.digest() {
        return Err(Error::Checkpoint(format!(
            "{} was written by config {} but the given config resolves to {}",
            checkpoint.display(),
            ckpt.digest_hex(),
            cfg.digest_hex()
        )));
    }
    let env = cfg.env.build()?;
    let mut init_rng = SeededRng::with_stream(seed, STREAM_INIT);
    let mut agent = build_agent::<T>(cfg.agent, &cfg.network, &cfg.learner, env.spec(), &mut init_rng)?;
    agent.load_matrices(&ckpt.matrices)?;
    Ok((agent, env))
}

/// Epsilon-greedy rollouts of a checkpoint; episodes longer than
/// `max_steps` are cut and counted as truncated.
pub fn evaluate(
    cfg: &RunConfig,
    checkpoint: &Path,
    episodes: usize,
    epsilon: f64,
    seed: u64,
    max_steps: u64,
) -> Result<EvalReport> {
    if episodes == 0 || !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidInput("eval needs episodes >= 1 and epsilon in [0, 1]".into()));
    }
    match cfg.precision {
        Precision::F32 => evaluate_as::<f32>(cfg, checkpoint, episodes, epsilon, seed, max_steps),
        Precision::F64 => evaluate_as::<f64>(cfg, checkpoint, episodes, epsilon, seed, max_steps),
    }
}

fn evaluate_as<T: Real>(
    cfg: &RunConfig,
    checkpoint: &Path,
    episodes: usize,
    epsilon: f64,
    seed: u64,
    max_steps: u64,
) -> Result<EvalReport> {
    let (mut agent, mut env) = load_agent::<T>(cfg, checkpoint, seed)?;
    let mut rng = SeededRng::with_stream(seed, STREAM_EVAL);
    let mut returns = Vec::with_capacity(episodes);
    let mut truncated = 0;
    for ep in 0..episodes {
        let mut obs = to_real::<T>(&env.reset(if ep == 0 { Some(seed) } else { None }));
        agent.begin_episode();
        let mut total = 0.0;
        let mut len = 0;
        loop {
            let a = agent.act(&obs, epsilon, &mut rng)?;
            let s = env.step(a)?;
            total += s.reward;
            len += 1;
            if s.done {
                break;
            }
            if len >= max_steps {
                truncated += 1;
                break;
            }
            obs = to_real::<T>(&s.obs);
        }
        returns.push(total);
    }
    Ok(EvalReport {
        digest: cfg.digest_hex(),
        seed,
        epsilon,
        truncated,
        stats: ReturnStats::from_returns(&returns),
        returns,
    })
}
