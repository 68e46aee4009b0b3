use rayon::prelude::*;

use super::agent::stored_reward;
use super::{batch_loss_and_grad, td_target, Agent, LearnerConfig, Optimizer, ReplayBuffer, TrainOutcome, TrainStats, Transition};
use crate::cells::{hidden_kink, Cell, CellActivations, CellGrads, DiffScheme, GradCheckReport, ParamCheck, PARAM_NAMES};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Real, SeededRng};
use crate::network::{argmax, select_action, Network, NetworkConfig, QReadout, TemporalState, Weights};

/// A cell network with its replay buffer and one optimizer per cell.
pub struct LocalAgent<T> {
    pub net: Network<T>,
    pub learner: LearnerConfig,
    optimizers: Vec<Optimizer<T>>,
    buffer: ReplayBuffer<Transition<T>>,
    state: TemporalState<T>,
    pending: Option<(Vec<T>, Vec<Vec<T>>)>,
    /// Q readout of the most recent `act`.
    pub last_q: Option<QReadout<T>>,
}

impl<T: Real> LocalAgent<T> {
    pub fn new(config: NetworkConfig, learner: LearnerConfig, spec: &EnvSpec, rng: &mut SeededRng) -> Result<Self> {
        let net = Network::init(config, spec.obs_dim, &spec.action_codes, rng)?;
        Ok(Self::from_network(net, learner))
    }

    pub fn from_network(net: Network<T>, learner: LearnerConfig) -> Self {
        let optimizers = net
            .cells()
            .iter()
            .map(|c| {
                let shapes: Vec<_> = c.params.matrices().iter().map(|m| m.shape()).collect();
                Optimizer::new(learner.optimizer.clone(), &shapes)
            })
            .collect();
        Self {
            state: net.initial_state(),
            buffer: ReplayBuffer::new(learner.buffer_capacity),
            net,
            learner,
            optimizers,
            pending: None,
            last_q: None,
        }
    }

    pub fn state(&self) -> &TemporalState<T> {
        &self.state
    }

    pub fn buffer(&self) -> &ReplayBuffer<Transition<T>> {
        &self.buffer
    }

    pub fn push(&mut self, t: Transition<T>) {
        self.buffer.push(t);
    }

    /// Per-cell TD loss on a fixed batch, without updating anything.
    pub fn losses(&self, batch: &[&Transition<T>]) -> Result<Vec<f64>> {
        let (acts, max_next) = replay_pass(&self.net, batch)?;
        Ok((0..self.net.depth())
            .map(|l| {
                let (q, targets) = cell_targets(l, &acts, &max_next, batch, self.learner.gamma);
                batch_loss_and_grad(&q, &targets).0.to_f64_lossy()
            })
            .collect())
    }

    /// One update on an explicit batch.
    pub fn train_on(&mut self, batch: &[&Transition<T>]) -> Result<TrainStats> {
        let (acts, max_next) = replay_pass(&self.net, batch)?;
        let gamma = self.learner.gamma;
        let update = |(l, (cell, opt)): (usize, (&mut Cell<T>, &mut Optimizer<T>))| -> Result<(f64, f64)> {
            let (q, targets) = cell_targets(l, &acts, &max_next, batch, gamma);
            let (loss, grads) = cell_grads(cell, l, &acts, &q, &targets)?;
            let mut params = cell.params.matrices_mut();
            opt.step(&mut params, &grads.matrices()).map_err(|k| Error::NonFiniteGradient {
                cell: l,
                param: PARAM_NAMES[k],
            })?;
            let mean_q = q.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / q.len() as f64;
            Ok((loss.to_f64_lossy(), mean_q))
        };
        let cells = self.net.cells_mut().iter_mut().zip(self.optimizers.iter_mut()).enumerate();
        let results: Vec<(f64, f64)> = if self.learner.parallel_cells {
            cells.collect::<Vec<_>>().into_par_iter().map(update).collect::<Result<_>>()?
        } else {
            cells.map(update).collect::<Result<_>>()?
        };
        let depth = results.len() as f64;
        Ok(TrainStats {
            losses: results.iter().map(|r| r.0).collect(),
            mean_q: results.iter().map(|r| r.1).sum::<f64>() / depth,
        })
    }
}

/// Online activations for the stored actions and, per sample and cell,
/// the target network's max Q at the next state.
fn replay_pass<T: Real>(
    net: &Network<T>,
    batch: &[&Transition<T>],
) -> Result<(Vec<Vec<CellActivations<T>>>, Vec<Vec<T>>)> {
    let samples: Vec<(&[T], &[Vec<T>], usize)> = batch
        .iter()
        .map(|t| (t.obs.as_slice(), t.topdown.as_slice(), t.action))
        .collect();
    let acts = net.train_forward(Weights::Online, &samples)?;
    let max_next = batch
        .par_iter()
        .map(|t| {
            if t.done {
                return Ok(vec![T::zero(); net.depth()]);
            }
            let q = net.q_all(Weights::Target, &t.next_obs, &t.next_topdown)?;
            Ok(q.iter().map(|q| q[argmax(q)]).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((acts, max_next))
}

/// Replayed Q values of cell `l` and their TD targets.
fn cell_targets<T: Real>(
    l: usize,
    acts: &[Vec<CellActivations<T>>],
    max_next: &[Vec<T>],
    batch: &[&Transition<T>],
    gamma: f64,
) -> (Vec<T>, Vec<T>) {
    let q = acts.iter().map(|a| a[l].q[0]).collect();
    let targets = batch
        .iter()
        .zip(max_next)
        .map(|(t, m)| td_target(T::lit(t.reward), T::lit(gamma), m[l], t.done))
        .collect();
    (q, targets)
}

/// Mean TD loss of cell `l` and its gradient; the cell inputs are constants.
fn cell_grads<T: Real>(
    cell: &Cell<T>,
    l: usize,
    acts: &[Vec<CellActivations<T>>],
    q: &[T],
    targets: &[T],
) -> Result<(T, CellGrads<T>)> {
    let (loss, dq) = batch_loss_and_grad(q, targets);
    let mut grads = CellGrads::zeros(&cell.config);
    for (a, &d) in acts.iter().zip(&dq) {
        cell.backward_into(&a[l], &[d], &mut grads)?;
    }
    Ok((loss, grads))
}

/// Gradient checks proving each cell learns from its own loss alone.
#[derive(Clone, Debug)]
pub struct LocalityReport {
    /// One finite-difference check per cell, inputs and targets held fixed.
    pub cells: Vec<GradCheckReport>,
    /// Gradient blocks produced, with their shapes, per cell.
    pub grad_shapes: Vec<Vec<(usize, usize)>>,
    /// True when cell `l`'s gradient has exactly cell `l`'s parameter shapes
    /// and there is one block per cell.
    pub structure_ok: bool,
}

impl LocalityReport {
    pub fn passed(&self) -> bool {
        self.structure_ok && self.cells.iter().all(GradCheckReport::passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.cells.iter().map(GradCheckReport::max_rel_err).fold(0.0, f64::max)
    }
}

/// For every cell, compare the gradient the learner would apply with
/// central differences of that cell's own batch loss, where the cell
/// inputs (observation, activity of the layer below, top-down snapshot)
/// and the TD targets are frozen at their replay values.
pub fn locality_check(
    net: &Network<f64>,
    batch: &[&Transition<f64>],
    gamma: f64,
    scheme: DiffScheme,
) -> Result<LocalityReport> {
    let (acts, max_next) = replay_pass(net, batch)?;
    let mut reports = Vec::with_capacity(net.depth());
    let mut grad_shapes = Vec::with_capacity(net.depth());
    let mut structure_ok = true;
    for (l, cell) in net.cells().iter().enumerate() {
        let (q, targets) = cell_targets(l, &acts, &max_next, batch, gamma);
        let (_, grads) = cell_grads(cell, l, &acts, &q, &targets)?;
        let shapes: Vec<_> = grads.matrices().iter().map(|m| m.shape()).collect();
        let own: Vec<_> = cell.params.matrices().iter().map(|m| m.shape()).collect();
        structure_ok &= shapes == own;
        grad_shapes.push(shapes);

        let inputs: Vec<(&[f64], usize)> = acts
            .iter()
            .zip(batch)
            .map(|(a, t)| (a[l].hidden.x.as_slice(), t.action))
            .collect();
        let pre: Vec<&[f64]> = acts.iter().map(|a| a[l].hidden.pre.as_slice()).collect();
        let xs: Vec<&[f64]> = inputs.iter().map(|&(x, _)| x).collect();
        let cols = cell.config.input_dim();
        let mut probe = cell.clone();
        let mut params = Vec::with_capacity(3);
        for (k, name) in PARAM_NAMES.iter().enumerate() {
            let loss_at = |i: usize, delta: f64| {
                let orig = probe.params.matrices()[k].as_slice()[i];
                probe.params.matrices_mut()[k].as_mut_slice()[i] = orig + delta;
                let q: Vec<f64> = inputs
                    .iter()
                    .map(|&(x, a)| probe.forward_actions(x, &[a]).expect("shapes validated").q[0])
                    .collect();
                probe.params.matrices_mut()[k].as_mut_slice()[i] = orig;
                batch_loss_and_grad(&q, &targets).0
            };
            let check = ParamCheck::compare_with_kinks(*name, scheme, grads.matrices()[k], loss_at, |i| {
                k == 0 && hidden_kink(&pre, &xs, cols, i)
            });
            params.push(check);
        }
        reports.push(GradCheckReport {
            label: format!("cell {l}"),
            params,
        });
    }
    structure_ok &= grad_shapes.len() == net.depth();
    Ok(LocalityReport {
        cells: reports,
        grad_shapes,
        structure_ok,
    })
}

impl<T: Real> Agent<T> for LocalAgent<T> {
    fn label(&self) -> String {
        let c = &self.net.config;
        format!("{}-{}-{}", c.cell_kind, c.goodness, c.conditioning)
    }

    fn begin_episode(&mut self) {
        self.state = self.net.initial_state();
        self.pending = None;
    }

    fn act(&mut self, obs: &[T], epsilon: f64, rng: &mut SeededRng) -> Result<usize> {
        let out = self.net.act_forward(&self.state, obs)?;
        let action = select_action(&out.q, epsilon, rng);
        self.state = out.state;
        self.pending = Some((obs.to_vec(), out.snapshot));
        self.last_q = Some(out.q);
        Ok(action)
    }

    fn observe(&mut self, action: usize, reward: f64, next_obs: &[T], done: bool) -> Result<()> {
        let (obs, topdown) = self
            .pending
            .take()
            .ok_or_else(|| Error::InvalidInput("observe called without a preceding act".into()))?;
        self.buffer.push(Transition {
            obs,
            action,
            reward: stored_reward(reward, self.learner.reward_clip),
            next_obs: next_obs.to_vec(),
            done,
            topdown,
            next_topdown: self.state.topdown(),
        });
        Ok(())
    }

    fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    fn train_step(&mut self, rng: &mut SeededRng) -> Result<TrainOutcome> {
        let n = self.learner.batch_size;
        if self.buffer.len() < n {
            return Ok(TrainOutcome::Skipped(format!(
                "buffer holds {} transitions, batch needs {n}",
                self.buffer.len()
            )));
        }
        let idx = self.buffer.sample_indices(n, rng);
        let batch: Vec<Transition<T>> = idx.iter().map(|&i| self.buffer.get(i).clone()).collect();
        let refs: Vec<&Transition<T>> = batch.iter().collect();
        Ok(TrainOutcome::Trained(self.train_on(&refs)?))
    }

    fn sync_target(&mut self) {
        self.net.sync_target();
    }

    fn heads(&self) -> usize {
        self.net.depth()
    }

    fn param_count(&self) -> usize {
        self.net.param_count()
    }

    fn matrices(&self) -> Vec<&Matrix<T>> {
        self.net.matrices()
    }

    fn load_matrices(&mut self, mats: &[Matrix<f32>]) -> Result<()> {
        self.net.load_matrices(mats)
    }
}
