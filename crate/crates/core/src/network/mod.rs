//! A stack of cells with skip connections from the observation and
//! one-step top-down connections from the layer above.
//!
//! Layer `l` at time `t` reads `concat(obs_t, h_t^{l-1}, h_{t-1}^{l+1})`.
//! The bottom layer has no `h^{l-1}` and the top layer no `h^{l+1}`.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cells::{ActionCodes, Cell, CellActivations, CellConfig, CellKind, ConditioningMode, GoodnessKind};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Real, SeededRng};

/// How per-cell Q vectors combine into the vector used for acting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    #[default]
    Mean,
    TopCellOnly,
}

impl std::fmt::Display for EnsembleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mean => "mean",
            Self::TopCellOnly => "top_cell_only",
        })
    }
}

impl std::str::FromStr for EnsembleMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Self::Mean),
            "top_cell_only" => Ok(Self::TopCellOnly),
            other => Err(format!("unknown ensemble `{other}` (expected mean or top_cell_only)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default = "default_hidden")]
    pub layer_hidden_dims: Vec<usize>,
    /// ARQ readout width `d` per layer; ignored by AD cells.
    #[serde(default = "default_readout")]
    pub readout_dims: Vec<usize>,
    #[serde(default = "default_kind")]
    pub cell_kind: CellKind,
    #[serde(default = "default_goodness")]
    pub goodness: GoodnessKind,
    #[serde(default = "default_conditioning")]
    pub conditioning: ConditioningMode,
    #[serde(default)]
    pub ensemble: EnsembleMode,
}

pub const GRID_HIDDEN_DIMS: [usize; 3] = [400, 200, 200];
pub const CONTINUOUS_HIDDEN_DIMS: [usize; 3] = [128, 96, 96];
pub const DEFAULT_READOUT_DIM: usize = 64;

fn default_hidden() -> Vec<usize> {
    GRID_HIDDEN_DIMS.to_vec()
}

fn default_readout() -> Vec<usize> {
    vec![DEFAULT_READOUT_DIM; 3]
}

fn default_kind() -> CellKind {
    CellKind::Arq
}

fn default_goodness() -> GoodnessKind {
    GoodnessKind::Rms
}

fn default_conditioning() -> ConditioningMode {
    ConditioningMode::Input
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            layer_hidden_dims: default_hidden(),
            readout_dims: default_readout(),
            cell_kind: default_kind(),
            goodness: default_goodness(),
            conditioning: default_conditioning(),
            ensemble: EnsembleMode::Mean,
        }
    }
}

impl NetworkConfig {
    pub fn depth(&self) -> usize {
        self.layer_hidden_dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_hidden_dims.is_empty() {
            return Err(Error::Config("network.layer_hidden_dims must not be empty".into()));
        }
        if self.readout_dims.len() != self.layer_hidden_dims.len() {
            return Err(Error::Config(format!(
                "network.readout_dims has {} entries but there are {} layers",
                self.readout_dims.len(),
                self.layer_hidden_dims.len()
            )));
        }
        Ok(())
    }

    /// Per-layer cell shapes for an environment with the given observation
    /// width and action codes of width `action_dim`.
    pub fn cell_configs(&self, obs_dim: usize, n_actions: usize, action_dim: usize) -> Result<Vec<CellConfig>> {
        self.validate()?;
        let dims = &self.layer_hidden_dims;
        let configs: Vec<CellConfig> = (0..dims.len())
            .map(|l| CellConfig {
                obs_dim,
                below_dim: if l == 0 { 0 } else { dims[l - 1] },
                above_dim: dims.get(l + 1).copied().unwrap_or(0),
                n_actions,
                action_dim,
                hidden_dim: dims[l],
                readout_dim: self.readout_dims[l],
                goodness: self.goodness,
                conditioning: self.conditioning,
                kind: self.cell_kind,
            })
            .collect();
        for c in &configs {
            c.validate()?;
        }
        Ok(configs)
    }

    pub fn param_count(&self, obs_dim: usize, n_actions: usize, action_dim: usize) -> Result<usize> {
        Ok(self
            .cell_configs(obs_dim, n_actions, action_dim)?
            .iter()
            .map(CellConfig::param_count)
            .sum())
    }
}

/// Hidden activations of every layer from the previous step.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalState<T> {
    pub h: Vec<Vec<T>>,
}

impl<T: Real> TemporalState<T> {
    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            h: dims.iter().map(|&d| vec![T::zero(); d]).collect(),
        }
    }

    /// Top-down input each layer takes from this state; empty for the top.
    pub fn topdown(&self) -> Vec<Vec<T>> {
        (0..self.h.len())
            .map(|l| self.h.get(l + 1).cloned().unwrap_or_default())
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.h.iter().flatten().all(|&v| v == T::zero())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QReadout<T> {
    pub per_cell: Vec<Vec<T>>,
    pub ensemble: Vec<T>,
}

impl<T: Real> QReadout<T> {
    pub fn combine(per_cell: Vec<Vec<T>>, mode: EnsembleMode) -> Self {
        let ensemble = match mode {
            EnsembleMode::TopCellOnly => per_cell.last().cloned().unwrap_or_default(),
            EnsembleMode::Mean => {
                let n = T::from_usize(per_cell.len()).unwrap();
                let mut acc = vec![T::zero(); per_cell.first().map_or(0, Vec::len)];
                for q in &per_cell {
                    for (a, &v) in acc.iter_mut().zip(q) {
                        *a += v;
                    }
                }
                acc.into_iter().map(|v| v / n).collect()
            }
        };
        Self { per_cell, ensemble }
    }
}

/// Result of one acting step.
#[derive(Clone, Debug)]
pub struct ActOutput<T> {
    pub q: QReadout<T>,
    pub state: TemporalState<T>,
    /// Top-down inputs consumed at this step, one per layer.
    pub snapshot: Vec<Vec<T>>,
}

/// Selects the online or the target weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weights {
    Online,
    Target,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Real>(q: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy choice over the ensemble Q vector.
pub fn select_action<T: Real>(q: &QReadout<T>, epsilon: f64, rng: &mut SeededRng) -> usize {
    let n = q.ensemble.len();
    if rng.uniform() < epsilon {
        rng.below(n)
    } else {
        argmax(&q.ensemble)
    }
}

#[derive(Clone, Debug)]
pub struct Network<T> {
    pub config: NetworkConfig,
    cells: Vec<Cell<T>>,
    target: Vec<Cell<T>>,
}

impl<T: Real> Network<T> {
    /// Build with fresh weights. `action_codes` has one row per action.
    pub fn init(config: NetworkConfig, obs_dim: usize, action_codes: &[Vec<f64>], rng: &mut SeededRng) -> Result<Self> {
        let codes = ActionCodes::<T>::from_rows(action_codes)?;
        let cfgs = config.cell_configs(obs_dim, codes.n_actions(), codes.dim())?;
        let cells = cfgs
            .into_iter()
            .map(|c| Cell::init(c, codes.clone(), rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            target: cells.clone(),
            cells,
        })
    }

    pub fn depth(&self) -> usize {
        self.cells.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.cells[0].config.obs_dim
    }

    pub fn n_actions(&self) -> usize {
        self.cells[0].config.n_actions
    }

    pub fn cells(&self) -> &[Cell<T>] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [Cell<T>] {
        &mut self.cells
    }

    pub fn target_cells(&self) -> &[Cell<T>] {
        &self.target
    }

    fn weights(&self, which: Weights) -> &[Cell<T>] {
        match which {
            Weights::Online => &self.cells,
            Weights::Target => &self.target,
        }
    }

    pub fn param_count(&self) -> usize {
        self.cells.iter().map(|c| c.config.param_count()).sum()
    }

    pub fn initial_state(&self) -> TemporalState<T> {
        TemporalState::zeros(&self.config.layer_hidden_dims)
    }

    /// Hard copy of the online weights into the target network.
    pub fn sync_target(&mut self) {
        for (t, c) in self.target.iter_mut().zip(&self.cells) {
            t.params.clone_from(&c.params);
        }
    }

    fn check_topdown(&self, topdown: &[Vec<T>]) -> Result<()> {
        if topdown.len() != self.depth() {
            return Err(Error::shape("top-down snapshot layers", self.depth(), topdown.len()));
        }
        for (l, (td, c)) in topdown.iter().zip(&self.cells).enumerate() {
            if td.len() != c.config.above_dim {
                return Err(Error::shape(
                    "top-down snapshot",
                    format!("{} at layer {l}", c.config.above_dim),
                    td.len(),
                ));
            }
        }
        Ok(())
    }

    /// Bottom-up sweep with the given top-down inputs. `actions = None`
    /// scores every action.
    pub fn sweep(
        &self,
        which: Weights,
        obs: &[T],
        topdown: &[Vec<T>],
        actions: Option<&[usize]>,
    ) -> Result<Vec<CellActivations<T>>> {
        if obs.len() != self.obs_dim() {
            return Err(Error::shape("observation", self.obs_dim(), obs.len()));
        }
        self.check_topdown(topdown)?;
        let all: Vec<usize>;
        let actions = match actions {
            Some(a) => a,
            None => {
                all = (0..self.n_actions()).collect();
                &all
            }
        };
        let mut out: Vec<CellActivations<T>> = Vec::with_capacity(self.depth());
        for (l, cell) in self.weights(which).iter().enumerate() {
            let below: &[T] = out.last().map_or(&[], |a| &a.hidden.h);
            let mut x = Vec::with_capacity(cell.config.input_dim());
            x.extend_from_slice(obs);
            x.extend_from_slice(below);
            x.extend_from_slice(&topdown[l]);
            out.push(cell.forward_actions(&x, actions)?);
        }
        Ok(out)
    }

    /// One acting step from `state`.
    pub fn act_forward(&self, state: &TemporalState<T>, obs: &[T]) -> Result<ActOutput<T>> {
        let snapshot = state.topdown();
        let acts = self.sweep(Weights::Online, obs, &snapshot, None)?;
        let next = TemporalState {
            h: acts.iter().map(|a| a.hidden.h.clone()).collect(),
        };
        let per_cell = acts.into_iter().map(|a| a.q).collect();
        Ok(ActOutput {
            q: QReadout::combine(per_cell, self.config.ensemble),
            state: next,
            snapshot,
        })
    }

    /// Per-cell Q vectors over every action, caches discarded.
    pub fn q_all(&self, which: Weights, obs: &[T], topdown: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
        Ok(self.sweep(which, obs, topdown, None)?.into_iter().map(|a| a.q).collect())
    }

    /// Replay pass: for each sample, activations scoring only its action,
    /// with top-down inputs taken from the stored snapshots.
    pub fn train_forward(
        &self,
        which: Weights,
        samples: &[(&[T], &[Vec<T>], usize)],
    ) -> Result<Vec<Vec<CellActivations<T>>>> {
        samples
            .par_iter()
            .map(|&(obs, topdown, a)| self.sweep(which, obs, topdown, Some(&[a])))
            .collect()
    }

    /// Online then target matrices, each cell in `w_h, w_att1, w_att2` order.
    pub fn matrices(&self) -> Vec<&Matrix<T>> {
        self.cells
            .iter()
            .chain(&self.target)
            .flat_map(|c| c.params.matrices())
            .collect()
    }

    pub fn load_matrices(&mut self, mats: &[Matrix<f32>]) -> Result<()> {
        let expected: Vec<(usize, usize)> = self.matrices().iter().map(|m| m.shape()).collect();
        let found: Vec<(usize, usize)> = mats.iter().map(|m| m.shape()).collect();
        if expected != found {
            return Err(Error::Checkpoint(format!(
                "matrix shapes {found:?} do not match the network {expected:?}"
            )));
        }
        let mut it = mats.iter();
        for cell in self.cells.iter_mut().chain(self.target.iter_mut()) {
            for m in cell.params.matrices_mut() {
                *m = it.next().unwrap().cast();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::one_hot_codes;

    fn small(kind: CellKind, conditioning: ConditioningMode) -> NetworkConfig {
        NetworkConfig {
            layer_hidden_dims: vec![6, 5, 4],
            readout_dims: vec![3, 3, 3],
            cell_kind: kind,
            goodness: GoodnessKind::Rms,
            conditioning,
            ensemble: EnsembleMode::Mean,
        }
    }

    fn net(kind: CellKind, conditioning: ConditioningMode) -> Network<f64> {
        let mut rng = SeededRng::new(1);
        Network::init(small(kind, conditioning), 7, &one_hot_codes(3), &mut rng).unwrap()
    }

    fn obs(seed: u64) -> Vec<f64> {
        let mut rng = SeededRng::new(seed);
        (0..7).map(|_| rng.uniform_in(-1.0, 1.0)).collect()
    }

    #[test]
    fn cell_shapes_follow_the_stack() {
        let cfgs = small(CellKind::Arq, ConditioningMode::Input).cell_configs(7, 3, 3).unwrap();
        assert_eq!(
            cfgs.iter().map(|c| (c.below_dim, c.above_dim, c.input_dim())).collect::<Vec<_>>(),
            vec![(0, 5, 12), (6, 4, 17), (5, 0, 12)]
        );
    }

    #[test]
    fn first_step_uses_zero_topdown() {
        let n = net(CellKind::Arq, ConditioningMode::Input);
        let s0 = n.initial_state();
        assert!(s0.is_zero());
        let out = n.act_forward(&s0, &obs(0)).unwrap();
        assert!(out.snapshot.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(out.snapshot.iter().map(Vec::len).collect::<Vec<_>>(), vec![5, 4, 0]);
        assert!(!out.state.is_zero());
        // second step consumes the first step's activations
        let out2 = n.act_forward(&out.state, &obs(1)).unwrap();
        assert_eq!(out2.snapshot[0], out.state.h[1]);
        assert_eq!(out2.snapshot[1], out.state.h[2]);
    }

    #[test]
    fn zero_weights_give_zero_q() {
        for kind in [CellKind::Ad, CellKind::Arq] {
            let mut n = net(kind, ConditioningMode::Output);
            for c in n.cells_mut() {
                for m in c.params.matrices_mut() {
                    m.fill(0.0);
                }
            }
            let out = n.act_forward(&n.initial_state(), &obs(2)).unwrap();
            assert!(out.q.ensemble.iter().all(|&q| q == 0.0));
        }
    }

    #[test]
    fn replay_reproduces_acting_q() {
        for kind in [CellKind::Ad, CellKind::Arq] {
            for cond in [ConditioningMode::Input, ConditioningMode::Output] {
                let n = net(kind, cond);
                let mut state = n.initial_state();
                for t in 0..4 {
                    let o = obs(t);
                    let out = n.act_forward(&state, &o).unwrap();
                    for a in 0..3 {
                        let replay = n.train_forward(Weights::Online, &[(&o, &out.snapshot, a)]).unwrap();
                        for (l, acts) in replay[0].iter().enumerate() {
                            assert_eq!(acts.q[0].to_bits(), out.q.per_cell[l][a].to_bits());
                        }
                    }
                    state = out.state;
                }
            }
        }
    }

    #[test]
    fn ensemble_modes() {
        let per_cell = vec![vec![1.0, 2.0], vec![3.0, 0.0], vec![2.0, 4.0]];
        let mean = QReadout::combine(per_cell.clone(), EnsembleMode::Mean);
        assert_eq!(mean.ensemble, vec![2.0, 2.0]);
        let top = QReadout::combine(per_cell, EnsembleMode::TopCellOnly);
        assert_eq!(top.ensemble, vec![2.0, 4.0]);
    }

    #[test]
    fn greedy_and_ties() {
        let mut rng = SeededRng::new(0);
        let q = QReadout::combine(vec![vec![0.1, 0.9, 0.3]], EnsembleMode::Mean);
        assert_eq!(select_action(&q, 0.0, &mut rng), 1);
        let tie = QReadout::combine(vec![vec![0.5, 0.5]], EnsembleMode::Mean);
        assert_eq!(select_action(&tie, 0.0, &mut rng), 0);
    }

    #[test]
    fn target_tracks_sync_only() {
        let mut n = net(CellKind::Arq, ConditioningMode::Input);
        let o = obs(3);
        let td = n.initial_state().topdown();
        let init = n.q_all(Weights::Target, &o, &td).unwrap();
        assert_eq!(init, n.q_all(Weights::Online, &o, &td).unwrap());
        n.cells_mut()[1].params.w_h.scale(0.5);
        assert_eq!(n.q_all(Weights::Target, &o, &td).unwrap(), init);
        n.sync_target();
        assert_eq!(
            n.q_all(Weights::Target, &o, &td).unwrap(),
            n.q_all(Weights::Online, &o, &td).unwrap()
        );
    }

    #[test]
    fn shape_errors() {
        let n = net(CellKind::Arq, ConditioningMode::Input);
        let st = n.initial_state();
        assert!(n.act_forward(&st, &[0.0; 6]).is_err());
        let bad = vec![vec![0.0; 5], vec![0.0; 3], vec![]];
        assert!(n.train_forward(Weights::Online, &[(&obs(0), &bad, 0)]).is_err());
    }
}
