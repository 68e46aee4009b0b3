use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Precision, RunConfig};
use crate::error::{Error, Result};
use crate::learner::{AgentKind, LocalAgent};
use crate::linalg::{Real, SeededRng};
use crate::network::{read_checkpoint, select_action, QReadout, TemporalState, Weights};

pub const DEFAULT_TOP_K: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronRow {
    /// Index within the per-action readout of the first layer.
    pub neuron: usize,
    /// Root-mean-square activation per action over the visited states.
    pub rms: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InspectTable {
    pub digest: String,
    pub seed: u64,
    pub states: usize,
    pub rows: Vec<NeuronRow>,
}

impl InspectTable {
    pub fn to_csv(&self) -> String {
        let n_actions = self.rows.first().map_or(0, |r| r.rms.len());
        let mut out = format!("# digest {} seed {} states {}\nneuron", self.digest, self.seed, self.states);
        for a in 0..n_actions {
            out.push_str(&format!(",action_{a}"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.neuron.to_string());
            for v in &r.rms {
                out.push_str(&format!(",{v:.9e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Roll the policy out for `states` steps and rank first-layer readout
/// neurons by their RMS activity averaged over actions.
pub fn inspect(cfg: &RunConfig, checkpoint: &Path, states: usize, top_k: usize, epsilon: f64, seed: u64) -> Result<InspectTable> {
    if cfg.agent != AgentKind::Cells {
        return Err(Error::InvalidInput("inspect needs a cell network, not the DQN baseline".into()));
    }
    if states == 0 || top_k == 0 {
        return Err(Error::InvalidInput("states and top_k must be positive".into()));
    }
    match cfg.precision {
        Precision::F32 => inspect_as::<f32>(cfg, checkpoint, states, top_k, epsilon, seed),
        Precision::F64 => inspect_as::<f64>(cfg, checkpoint, states, top_k, epsilon, seed),
    }
}

fn inspect_as<T: Real>(cfg: &RunConfig, checkpoint: &Path, states: usize, top_k: usize, epsilon: f64, seed: u64) -> Result<InspectTable> {
    let ckpt = read_checkpoint(checkpoint)?;
    if ckpt.digest != cfg.digest() {
        return Err(Error::Checkpoint(format!(
            "{} does not belong to config {}",
            checkpoint.display(),
            cfg.digest_hex()
        )));
    }
    let mut env = cfg.env.build()?;
    let spec = env.spec().clone();
    let mut rng = SeededRng::with_stream(seed, 0);
    let mut agent = LocalAgent::<T>::new(cfg.network.clone(), cfg.learner.clone(), &spec, &mut rng)?;
    agent.net.load_matrices(&ckpt.matrices)?;
    let net = &agent.net;
    let cell0 = &net.cells()[0].config;
    let width = cell0.group_len();
    let n_actions = spec.n_actions;

    let mut sq = vec![vec![0.0f64; width]; n_actions];
    let mut act_rng = SeededRng::with_stream(seed, 3);
    let mut obs: Vec<T> = env.reset(Some(seed)).iter().map(|&v| T::lit(v)).collect();
    let mut state: TemporalState<T> = net.initial_state();
    for _ in 0..states {
        let acts = net.sweep(Weights::Online, &obs, &state.topdown(), None)?;
        for (i, a) in acts[0].actions.iter().enumerate() {
            for (s, &y) in sq[*a].iter_mut().zip(acts[0].readout_for(i, cell0)) {
                *s += y.to_f64_lossy().powi(2);
            }
        }
        state = TemporalState {
            h: acts.iter().map(|a| a.hidden.h.clone()).collect(),
        };
        let q = QReadout::combine(acts.into_iter().map(|a| a.q).collect(), net.config.ensemble);
        let step = env.step(select_action(&q, epsilon, &mut act_rng))?;
        obs = if step.done {
            state = net.initial_state();
            env.reset(None)
        } else {
            step.obs
        }
        .iter()
        .map(|&v| T::lit(v))
        .collect();
    }

    let rms: Vec<Vec<f64>> = sq
        .iter()
        .map(|per| per.iter().map(|s| (s / states as f64).sqrt()).collect())
        .collect();
    let mut order: Vec<usize> = (0..width).collect();
    let score = |j: usize| rms.iter().map(|r| r[j]).sum::<f64>();
    order.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
    let rows = order
        .into_iter()
        .take(top_k)
        .map(|j| NeuronRow {
            neuron: j,
            rms: rms.iter().map(|r| r[j]).collect(),
        })
        .collect();
    Ok(InspectTable {
        digest: cfg.digest_hex(),
        seed,
        states,
        rows,
    })
}
