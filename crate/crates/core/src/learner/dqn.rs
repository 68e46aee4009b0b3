use rayon::prelude::*;

use super::agent::stored_reward;
use super::{batch_loss_and_grad, td_target, Agent, LearnerConfig, Optimizer, ReplayBuffer, TrainOutcome, TrainStats, Transition};
use crate::cells::{DiffScheme, GradCheckReport, ParamCheck, GRAD_CHECK_STEP};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::linalg::{axpy, Matrix, Real, SeededRng};
use crate::network::{argmax, QReadout};

/// Names of the two matrices of every layer, in storage order.
pub const DQN_PARAM_NAMES: [&str; 2] = ["weight", "bias"];

/// Samples per gradient-accumulation chunk. Chunks are summed in order,
/// so the result does not depend on the thread count.
const GRAD_CHUNK: usize = 64;

/// Fully connected ReLU network with a linear Q head.
#[derive(Clone, Debug, PartialEq)]
pub struct DqnNet<T> {
    /// `[w_1, b_1, w_2, b_2, ...]`; biases are `1 × n` matrices.
    pub params: Vec<Matrix<T>>,
}

#[derive(Clone, Debug)]
pub struct DqnCache<T> {
    /// Input to every layer; `inputs[0]` is the observation.
    pub inputs: Vec<Vec<T>>,
    /// Pre-activations of every layer.
    pub pre: Vec<Vec<T>>,
    pub q: Vec<T>,
}

impl<T: Real> DqnNet<T> {
    pub fn init(obs_dim: usize, hidden: &[usize], n_actions: usize, rng: &mut SeededRng) -> Result<Self> {
        if obs_dim == 0 || n_actions == 0 || hidden.contains(&0) {
            return Err(Error::Config("DQN dimensions must be positive".into()));
        }
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(n_actions);
        let mut params = Vec::with_capacity(2 * (dims.len() - 1));
        for w in dims.windows(2) {
            params.push(Matrix::init_uniform(rng, w[1], w[0]));
            params.push(Matrix::zeros(1, w[1]));
        }
        Ok(Self { params })
    }

    pub fn layers(&self) -> usize {
        self.params.len() / 2
    }

    pub fn obs_dim(&self) -> usize {
        self.params[0].cols()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Matrix::len).sum()
    }

    pub fn forward(&self, obs: &[T]) -> Result<DqnCache<T>> {
        if obs.len() != self.obs_dim() {
            return Err(Error::shape("DQN observation", self.obs_dim(), obs.len()));
        }
        let n = self.layers();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut x = obs.to_vec();
        for l in 0..n {
            let mut z = self.params[2 * l].matvec(&x)?;
            axpy(T::one(), self.params[2 * l + 1].as_slice(), &mut z);
            let next = if l + 1 < n {
                z.iter().map(|&v| v.max(T::zero())).collect()
            } else {
                z.clone()
            };
            inputs.push(std::mem::replace(&mut x, next));
            pre.push(z);
        }
        Ok(DqnCache { inputs, pre, q: x })
    }

    pub fn q_values(&self, obs: &[T]) -> Result<Vec<T>> {
        Ok(self.forward(obs)?.q)
    }

    /// Accumulate the gradient of `Σ_a dl_dq[a]·q[a]` into `grads`.
    pub fn backward_into(&self, cache: &DqnCache<T>, dl_dq: &[T], grads: &mut [Matrix<T>]) -> Result<()> {
        if dl_dq.len() != cache.q.len() {
            return Err(Error::shape("DQN dL/dQ", cache.q.len(), dl_dq.len()));
        }
        let mut delta = dl_dq.to_vec();
        for l in (0..self.layers()).rev() {
            grads[2 * l].add_outer(T::one(), &delta, &cache.inputs[l])?;
            axpy(T::one(), &delta, grads[2 * l + 1].as_mut_slice());
            if l > 0 {
                let mut back = self.params[2 * l].matvec_t(&delta)?;
                for (b, &z) in back.iter_mut().zip(&cache.pre[l - 1]) {
                    if z <= T::zero() {
                        *b = T::zero();
                    }
                }
                delta = back;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> Vec<Matrix<T>> {
        self.params.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect()
    }
}

/// Batch TD loss and its gradient, summed over fixed-size chunks.
fn batch_grads<T: Real>(
    net: &DqnNet<T>,
    caches: &[DqnCache<T>],
    actions: &[usize],
    targets: &[T],
) -> Result<(T, Vec<T>, Vec<Matrix<T>>)> {
    let q: Vec<T> = caches.iter().zip(actions).map(|(c, &a)| c.q[a]).collect();
    let (loss, dq) = batch_loss_and_grad(&q, targets);
    let n_actions = caches.first().map_or(0, |c| c.q.len());
    let partial: Vec<Vec<Matrix<T>>> = caches
        .par_chunks(GRAD_CHUNK)
        .zip(actions.par_chunks(GRAD_CHUNK))
        .zip(dq.par_chunks(GRAD_CHUNK))
        .map(|((cs, acts), ds)| {
            let mut g = net.zero_grads();
            for ((c, &a), &d) in cs.iter().zip(acts).zip(ds) {
                let mut upstream = vec![T::zero(); n_actions];
                upstream[a] = d;
                net.backward_into(c, &upstream, &mut g)?;
            }
            Ok(g)
        })
        .collect::<Result<_>>()?;
    let mut grads = net.zero_grads();
    for g in partial {
        for (acc, p) in grads.iter_mut().zip(&g) {
            acc.add_assign(p)?;
        }
    }
    Ok((loss, q, grads))
}

/// Full-network gradient check on a random batch.
pub fn dqn_grad_check(
    obs_dim: usize,
    hidden: &[usize],
    n_actions: usize,
    batch: usize,
    seed: u64,
    scheme: DiffScheme,
) -> Result<GradCheckReport> {
    let mut rng = SeededRng::new(seed);
    let mut net = DqnNet::<f64>::init(obs_dim, hidden, n_actions, &mut rng)?;
    // nonzero biases so the bias gradients are exercised away from zero
    for l in 0..net.layers() {
        for b in net.params[2 * l + 1].as_mut_slice() {
            *b = rng.uniform_in(-0.1, 0.1);
        }
    }
    let obs: Vec<Vec<f64>> = (0..batch)
        .map(|_| (0..obs_dim).map(|_| rng.uniform_in(-1.0, 1.0)).collect())
        .collect();
    let actions: Vec<usize> = (0..batch).map(|_| rng.below(n_actions)).collect();
    let targets: Vec<f64> = (0..batch).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let caches = obs.iter().map(|o| net.forward(o)).collect::<Result<Vec<_>>>()?;
    let (_, _, grads) = batch_grads(&net, &caches, &actions, &targets)?;
    let mut probe = net.clone();
    let mut params = Vec::with_capacity(grads.len());
    for (k, g) in grads.iter().enumerate() {
        let name = format!("layer {} {}", k / 2, DQN_PARAM_NAMES[k % 2]);
        let mut pattern_probe = net.clone();
        let mut pattern_at = |i: usize, delta: f64| -> Vec<bool> {
            let orig = pattern_probe.params[k].as_slice()[i];
            pattern_probe.params[k].as_mut_slice()[i] = orig + delta;
            let p = activation_pattern(&pattern_probe, &obs);
            pattern_probe.params[k].as_mut_slice()[i] = orig;
            p
        };
        let base_pattern = activation_pattern(&net, &obs);
        // any ReLU switching inside the stencil makes the loss non-smooth there
        let kinks: Vec<bool> = (0..g.len())
            .map(|i| pattern_at(i, GRAD_CHECK_STEP) != base_pattern || pattern_at(i, -GRAD_CHECK_STEP) != base_pattern)
            .collect();
        params.push(ParamCheck::compare_with_kinks(name, scheme, g, |i, delta| {
            let orig = probe.params[k].as_slice()[i];
            probe.params[k].as_mut_slice()[i] = orig + delta;
            let q: Vec<f64> = obs
                .iter()
                .zip(&actions)
                .map(|(o, &a)| probe.forward(o).expect("shapes validated").q[a])
                .collect();
            probe.params[k].as_mut_slice()[i] = orig;
            batch_loss_and_grad(&q, &targets).0
        }, |i| kinks[i]));
    }
    Ok(GradCheckReport {
        label: format!("dqn seed {seed}"),
        params,
    })
}

fn activation_pattern(net: &DqnNet<f64>, obs: &[Vec<f64>]) -> Vec<bool> {
    let hidden = net.layers() - 1;
    obs.iter()
        .flat_map(|o| {
            let c = net.forward(o).expect("shapes validated");
            c.pre.into_iter().take(hidden).flatten().map(|v| v > 0.0).collect::<Vec<_>>()
        })
        .collect()
}

/// End-to-end DQN with the same replay, target and schedule machinery.
pub struct DqnAgent<T> {
    pub net: DqnNet<T>,
    target: DqnNet<T>,
    pub learner: LearnerConfig,
    optimizer: Optimizer<T>,
    buffer: ReplayBuffer<Transition<T>>,
    pending: Option<Vec<T>>,
    pub last_q: Option<QReadout<T>>,
}

impl<T: Real> DqnAgent<T> {
    pub fn new(hidden: &[usize], learner: LearnerConfig, spec: &EnvSpec, rng: &mut SeededRng) -> Result<Self> {
        let net = DqnNet::init(spec.obs_dim, hidden, spec.n_actions, rng)?;
        Ok(Self::from_net(net, learner))
    }

    pub fn from_net(net: DqnNet<T>, learner: LearnerConfig) -> Self {
        let shapes: Vec<_> = net.params.iter().map(Matrix::shape).collect();
        Self {
            target: net.clone(),
            optimizer: Optimizer::new(learner.optimizer.clone(), &shapes),
            buffer: ReplayBuffer::new(learner.buffer_capacity),
            net,
            learner,
            pending: None,
            last_q: None,
        }
    }

    pub fn target(&self) -> &DqnNet<T> {
        &self.target
    }

    pub fn push(&mut self, t: Transition<T>) {
        self.buffer.push(t);
    }

    pub fn losses(&self, batch: &[&Transition<T>]) -> Result<Vec<f64>> {
        let (caches, targets) = self.replay_pass(batch)?;
        let q: Vec<T> = caches.iter().zip(batch).map(|(c, t)| c.q[t.action]).collect();
        Ok(vec![batch_loss_and_grad(&q, &targets).0.to_f64_lossy()])
    }

    fn replay_pass(&self, batch: &[&Transition<T>]) -> Result<(Vec<DqnCache<T>>, Vec<T>)> {
        let gamma = T::lit(self.learner.gamma);
        batch
            .par_iter()
            .map(|t| {
                let cache = self.net.forward(&t.obs)?;
                let max_next = if t.done {
                    T::zero()
                } else {
                    let q = self.target.q_values(&t.next_obs)?;
                    q[argmax(&q)]
                };
                Ok((cache, td_target(T::lit(t.reward), gamma, max_next, t.done)))
            })
            .collect::<Result<Vec<_>>>()
            .map(|v| v.into_iter().unzip())
    }

    pub fn train_on(&mut self, batch: &[&Transition<T>]) -> Result<TrainStats> {
        let (caches, targets) = self.replay_pass(batch)?;
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
        let (loss, q, grads) = batch_grads(&self.net, &caches, &actions, &targets)?;
        let mut params: Vec<&mut Matrix<T>> = self.net.params.iter_mut().collect();
        let grad_refs: Vec<&Matrix<T>> = grads.iter().collect();
        self.optimizer
            .step(&mut params, &grad_refs)
            .map_err(|k| Error::NonFiniteGradient {
                cell: k / 2,
                param: DQN_PARAM_NAMES[k % 2],
            })?;
        Ok(TrainStats {
            losses: vec![loss.to_f64_lossy()],
            mean_q: q.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / q.len() as f64,
        })
    }
}

impl<T: Real> Agent<T> for DqnAgent<T> {
    fn label(&self) -> String {
        "dqn".into()
    }

    fn begin_episode(&mut self) {
        self.pending = None;
    }

    fn act(&mut self, obs: &[T], epsilon: f64, rng: &mut SeededRng) -> Result<usize> {
        let q = QReadout::combine(vec![self.net.q_values(obs)?], Default::default());
        let action = crate::network::select_action(&q, epsilon, rng);
        self.pending = Some(obs.to_vec());
        self.last_q = Some(q);
        Ok(action)
    }

    fn observe(&mut self, action: usize, reward: f64, next_obs: &[T], done: bool) -> Result<()> {
        let obs = self
            .pending
            .take()
            .ok_or_else(|| Error::InvalidInput("observe called without a preceding act".into()))?;
        self.buffer.push(Transition {
            obs,
            action,
            reward: stored_reward(reward, self.learner.reward_clip),
            next_obs: next_obs.to_vec(),
            done,
            topdown: Vec::new(),
            next_topdown: Vec::new(),
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
        self.target.params.clone_from(&self.net.params);
    }

    fn heads(&self) -> usize {
        1
    }

    fn param_count(&self) -> usize {
        self.net.param_count()
    }

    fn matrices(&self) -> Vec<&Matrix<T>> {
        self.net.params.iter().chain(&self.target.params).collect()
    }

    fn load_matrices(&mut self, mats: &[Matrix<f32>]) -> Result<()> {
        let expected: Vec<_> = self.matrices().iter().map(|m| m.shape()).collect();
        let found: Vec<_> = mats.iter().map(Matrix::shape).collect();
        if expected != found {
            return Err(Error::Checkpoint(format!(
                "matrix shapes {found:?} do not match the DQN {expected:?}"
            )));
        }
        let n = self.net.params.len();
        for (dst, src) in self.net.params.iter_mut().zip(&mats[..n]) {
            *dst = src.cast();
        }
        for (dst, src) in self.target.params.iter_mut().zip(&mats[n..]) {
            *dst = src.cast();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..3 {
            let r = dqn_grad_check(5, &[7, 6, 4], 3, 4, seed, DiffScheme::Central).unwrap();
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn zero_weights_zero_q() {
        let mut rng = SeededRng::new(0);
        let mut net = DqnNet::<f64>::init(4, &[5, 5, 5], 3, &mut rng).unwrap();
        for m in &mut net.params {
            m.fill(0.0);
        }
        assert_eq!(net.q_values(&[1.0, -1.0, 0.5, 2.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn param_count() {
        let mut rng = SeededRng::new(0);
        let net = DqnNet::<f32>::init(400, &[400, 200, 200], 6, &mut rng).unwrap();
        assert_eq!(net.param_count(), 400 * 400 + 400 + 400 * 200 + 200 + 200 * 200 + 200 + 200 * 6 + 6);
    }
}
