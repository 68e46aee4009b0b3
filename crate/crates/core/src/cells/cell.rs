use super::goodness::{goodness, goodness_grad_into};
use super::{CellConfig, CellKind, ConditioningMode};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, layernorm_backward_into, layernorm_in_place, Matrix, Real, SeededRng};

pub const PARAM_NAMES: [&str; 3] = ["w_h", "w_att1", "w_att2"];

/// The three trainable matrices of a cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellParams<T> {
    /// `hidden_dim × input_dim`
    pub w_h: Matrix<T>,
    /// `hidden_dim × attn_input_dim`
    pub w_att1: Matrix<T>,
    /// `readout_rows × attn_input_dim`
    pub w_att2: Matrix<T>,
}

impl<T: Real> CellParams<T> {
    pub fn zeros(cfg: &CellConfig) -> Self {
        Self {
            w_h: Matrix::zeros(cfg.hidden_dim, cfg.input_dim()),
            w_att1: Matrix::zeros(cfg.hidden_dim, cfg.attn_input_dim()),
            w_att2: Matrix::zeros(cfg.readout_rows(), cfg.attn_input_dim()),
        }
    }

    pub fn init(cfg: &CellConfig, rng: &mut SeededRng) -> Self {
        Self {
            w_h: Matrix::init_uniform(rng, cfg.hidden_dim, cfg.input_dim()),
            w_att1: Matrix::init_uniform(rng, cfg.hidden_dim, cfg.attn_input_dim()),
            w_att2: Matrix::init_uniform(rng, cfg.readout_rows(), cfg.attn_input_dim()),
        }
    }

    pub fn matrices(&self) -> [&Matrix<T>; 3] {
        [&self.w_h, &self.w_att1, &self.w_att2]
    }

    pub fn matrices_mut(&mut self) -> [&mut Matrix<T>; 3] {
        [&mut self.w_h, &mut self.w_att1, &mut self.w_att2]
    }

    pub fn check_shapes(&self, cfg: &CellConfig) -> Result<()> {
        let want = CellParams::<T>::zeros(cfg);
        for ((name, got), want) in PARAM_NAMES.iter().zip(self.matrices()).zip(want.matrices()) {
            if got.shape() != want.shape() {
                return Err(Error::Shape {
                    op: "cell params",
                    expected: format!("{name} {:?}", want.shape()),
                    found: format!("{:?}", got.shape()),
                });
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> CellParams<U> {
        CellParams {
            w_h: self.w_h.cast(),
            w_att1: self.w_att1.cast(),
            w_att2: self.w_att2.cast(),
        }
    }
}

/// Gradients for exactly one cell's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct CellGrads<T> {
    pub w_h: Matrix<T>,
    pub w_att1: Matrix<T>,
    pub w_att2: Matrix<T>,
}

impl<T: Real> CellGrads<T> {
    pub fn zeros(cfg: &CellConfig) -> Self {
        let p = CellParams::zeros(cfg);
        Self {
            w_h: p.w_h,
            w_att1: p.w_att1,
            w_att2: p.w_att2,
        }
    }

    pub fn matrices(&self) -> [&Matrix<T>; 3] {
        [&self.w_h, &self.w_att1, &self.w_att2]
    }

    pub fn matrices_mut(&mut self) -> [&mut Matrix<T>; 3] {
        [&mut self.w_h, &mut self.w_att1, &mut self.w_att2]
    }

    pub fn clear(&mut self) {
        for m in self.matrices_mut() {
            m.fill(T::zero());
        }
    }

    pub fn is_zero(&self) -> bool {
        self.matrices().iter().all(|m| m.as_slice().iter().all(|&x| x == T::zero()))
    }
}

/// Row `a` holds the code appended to the attention input for action `a`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionCodes<T> {
    codes: Matrix<T>,
}

impl<T: Real> ActionCodes<T> {
    pub fn one_hot(n_actions: usize) -> Self {
        Self {
            codes: Matrix::identity(n_actions),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidInput("action codes must be a non-empty rectangular table".into()));
        }
        Ok(Self {
            codes: Matrix::from_fn(rows.len(), dim, |i, j| T::lit(rows[i][j])),
        })
    }

    #[inline]
    pub fn code(&self, action: usize) -> &[T] {
        self.codes.row(action)
    }

    pub fn n_actions(&self) -> usize {
        self.codes.rows()
    }

    pub fn dim(&self) -> usize {
        self.codes.cols()
    }

    pub fn cast<U: Real>(&self) -> ActionCodes<U> {
        ActionCodes {
            codes: self.codes.cast(),
        }
    }
}

/// Action-agnostic part of a forward pass.
#[derive(Clone, Debug)]
pub struct HiddenCache<T> {
    /// Cell input, without any action code.
    pub x: Vec<T>,
    /// `w_h · x`
    pub pre: Vec<T>,
    /// `layernorm(relu(pre))`
    pub h: Vec<T>,
    pub inv_std: T,
}

/// Intermediates for one attention pass.
#[derive(Clone, Debug)]
pub struct CandidateCache<T> {
    /// Action whose code was appended, `None` under output conditioning.
    pub action: Option<usize>,
    pub z1: Vec<T>,
    pub z2: Vec<T>,
    /// `tanh(z2 z1ᵀ)`
    pub tanh: Matrix<T>,
    /// Row-normalized `tanh`.
    pub attn: Matrix<T>,
    pub row_inv_std: Vec<T>,
    /// `attn · h`
    pub y: Vec<T>,
}

/// Everything the backward pass needs.
#[derive(Clone, Debug)]
pub struct CellActivations<T> {
    pub hidden: HiddenCache<T>,
    /// Actions scored, aligned with `q`.
    pub actions: Vec<usize>,
    pub candidates: Vec<CandidateCache<T>>,
    pub q: Vec<T>,
}

impl<T: Real> CellActivations<T> {
    /// Readout vector scoring `q[i]`.
    pub fn readout_for(&self, i: usize, cfg: &CellConfig) -> &[T] {
        match cfg.conditioning {
            ConditioningMode::Input => &self.candidates[i].y,
            ConditioningMode::Output => {
                let g = cfg.group_len();
                let a = self.actions[i];
                &self.candidates[0].y[a * g..(a + 1) * g]
            }
        }
    }
}

/// One locally trained unit.
#[derive(Clone, Debug)]
pub struct Cell<T> {
    pub config: CellConfig,
    pub params: CellParams<T>,
    codes: ActionCodes<T>,
}

impl<T: Real> Cell<T> {
    pub fn new(config: CellConfig, codes: ActionCodes<T>, params: CellParams<T>) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        if codes.n_actions() != config.n_actions {
            return Err(Error::shape("action codes", config.n_actions, codes.n_actions()));
        }
        if config.conditioning == ConditioningMode::Input && codes.dim() != config.action_dim {
            return Err(Error::shape("action code width", config.action_dim, codes.dim()));
        }
        Ok(Self { config, params, codes })
    }

    pub fn init(config: CellConfig, codes: ActionCodes<T>, rng: &mut SeededRng) -> Result<Self> {
        let params = CellParams::init(&config, rng);
        Self::new(config, codes, params)
    }

    pub fn codes(&self) -> &ActionCodes<T> {
        &self.codes
    }

    /// Hidden activation `layernorm(relu(w_h · x))`.
    pub fn hidden(&self, x: &[T]) -> Result<HiddenCache<T>> {
        if x.len() != self.config.input_dim() {
            return Err(Error::shape("cell input", self.config.input_dim(), x.len()));
        }
        let pre = self.params.w_h.matvec_cols(0, x);
        let mut h: Vec<T> = pre.iter().map(|&v| v.max(T::zero())).collect();
        let inv_std = layernorm_in_place(&mut h);
        Ok(HiddenCache {
            x: x.to_vec(),
            pre,
            h,
            inv_std,
        })
    }

    /// Q values for every action.
    pub fn forward(&self, x: &[T]) -> Result<CellActivations<T>> {
        let all: Vec<usize> = (0..self.config.n_actions).collect();
        self.forward_actions(x, &all)
    }

    /// Q values for the listed actions only.
    pub fn forward_actions(&self, x: &[T], actions: &[usize]) -> Result<CellActivations<T>> {
        let hidden = self.hidden(x)?;
        self.readout(hidden, actions)
    }

    pub fn q_values(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.forward(x)?.q)
    }

    /// Attention readout on top of a precomputed hidden activation.
    pub fn readout(&self, hidden: HiddenCache<T>, actions: &[usize]) -> Result<CellActivations<T>> {
        let cfg = &self.config;
        if hidden.x.len() != cfg.input_dim() || hidden.h.len() != cfg.hidden_dim {
            return Err(Error::shape(
                "hidden cache",
                format!("x {} / h {}", cfg.input_dim(), cfg.hidden_dim),
                format!("x {} / h {}", hidden.x.len(), hidden.h.len()),
            ));
        }
        if let Some(&bad) = actions.iter().find(|&&a| a >= cfg.n_actions) {
            return Err(Error::InvalidInput(format!(
                "action {bad} out of range for {} actions",
                cfg.n_actions
            )));
        }
        let n_x = cfg.input_dim();
        let base1 = self.params.w_att1.matvec_cols(0, &hidden.x);
        let base2 = self.params.w_att2.matvec_cols(0, &hidden.x);

        let (candidates, q) = match cfg.conditioning {
            ConditioningMode::Input => {
                let mut candidates = Vec::with_capacity(actions.len());
                let mut q = Vec::with_capacity(actions.len());
                for &a in actions {
                    let code = self.codes.code(a);
                    let z1 = add_action_columns(&self.params.w_att1, &base1, n_x, code);
                    let z2 = add_action_columns(&self.params.w_att2, &base2, n_x, code);
                    let c = attend(Some(a), z1, z2, &hidden.h);
                    q.push(self.score(&c.y));
                    candidates.push(c);
                }
                (candidates, q)
            }
            ConditioningMode::Output => {
                let c = attend(None, base1, base2, &hidden.h);
                let g = cfg.group_len();
                let q = actions.iter().map(|&a| self.score(&c.y[a * g..(a + 1) * g])).collect();
                (vec![c], q)
            }
        };
        Ok(CellActivations {
            hidden,
            actions: actions.to_vec(),
            candidates,
            q,
        })
    }

    #[inline]
    fn score(&self, group: &[T]) -> T {
        match self.config.kind {
            CellKind::Ad => group[0],
            CellKind::Arq => goodness(group, self.config.goodness),
        }
    }

    fn score_grad_into(&self, group: &[T], upstream: T, out: &mut [T]) {
        match self.config.kind {
            CellKind::Ad => out[0] += upstream,
            CellKind::Arq => {
                let mut tmp = vec![T::zero(); group.len()];
                goodness_grad_into(group, self.config.goodness, upstream, &mut tmp);
                for (o, t) in out.iter_mut().zip(tmp) {
                    *o += t;
                }
            }
        }
    }

    /// Gradient of `Σ_i dl_dq[i] · q[i]` with respect to this cell's parameters.
    pub fn backward(&self, acts: &CellActivations<T>, dl_dq: &[T]) -> Result<CellGrads<T>> {
        let mut grads = CellGrads::zeros(&self.config);
        self.backward_into(acts, dl_dq, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Cell::backward`] but accumulates into `grads`.
    pub fn backward_into(&self, acts: &CellActivations<T>, dl_dq: &[T], grads: &mut CellGrads<T>) -> Result<()> {
        let cfg = &self.config;
        if dl_dq.len() != acts.q.len() {
            return Err(Error::shape("backward dL/dQ", acts.q.len(), dl_dq.len()));
        }
        let expected_candidates = match cfg.conditioning {
            ConditioningMode::Input => acts.actions.len(),
            ConditioningMode::Output => 1,
        };
        if acts.candidates.len() != expected_candidates
            || acts.hidden.x.len() != cfg.input_dim()
            || acts.hidden.h.len() != cfg.hidden_dim
        {
            return Err(Error::shape(
                "backward cache",
                format!("{expected_candidates} candidate(s) for input {}", cfg.input_dim()),
                format!("{} candidate(s) for input {}", acts.candidates.len(), acts.hidden.x.len()),
            ));
        }

        let n_x = cfg.input_dim();
        let d_h = cfg.hidden_dim;
        let rows = cfg.readout_rows();
        let g = cfg.group_len();
        let x = &acts.hidden.x;
        let h = &acts.hidden.h;

        let mut dh = vec![T::zero(); d_h];
        let mut dz1_sum = vec![T::zero(); d_h];
        let mut dz2_sum = vec![T::zero(); rows];
        let mut dy = vec![T::zero(); rows];
        let mut scratch = vec![T::zero(); d_h];

        for (ci, cand) in acts.candidates.iter().enumerate() {
            dy.iter_mut().for_each(|v| *v = T::zero());
            match cfg.conditioning {
                ConditioningMode::Input => {
                    if dl_dq[ci] == T::zero() {
                        continue;
                    }
                    self.score_grad_into(&cand.y, dl_dq[ci], &mut dy);
                }
                ConditioningMode::Output => {
                    for (&a, &dq) in acts.actions.iter().zip(dl_dq) {
                        if dq != T::zero() {
                            let r = a * g..(a + 1) * g;
                            self.score_grad_into(&cand.y[r.clone()], dq, &mut dy[r]);
                        }
                    }
                }
            }

            let mut dz1 = vec![T::zero(); d_h];
            let mut dz2 = vec![T::zero(); rows];
            for r in 0..rows {
                let dyr = dy[r];
                if dyr == T::zero() {
                    continue;
                }
                let attn_r = cand.attn.row(r);
                axpy(dyr, attn_r, &mut dh);
                // d attn_r = dyr · h, pushed back through the row normalization.
                layernorm_backward_into(attn_r, cand.row_inv_std[r], h, &mut scratch);
                let t_r = cand.tanh.row(r);
                for (s, &t) in scratch.iter_mut().zip(t_r) {
                    *s = dyr * *s * (T::one() - t * t);
                }
                dz2[r] = dot(&scratch, &cand.z1);
                axpy(cand.z2[r], &scratch, &mut dz1);
            }

            if let Some(a) = cand.action {
                let code = self.codes.code(a);
                grads.w_att1.add_outer_cols(T::one(), &dz1, n_x, code);
                grads.w_att2.add_outer_cols(T::one(), &dz2, n_x, code);
            }
            axpy(T::one(), &dz1, &mut dz1_sum);
            axpy(T::one(), &dz2, &mut dz2_sum);
        }

        grads.w_att1.add_outer_cols(T::one(), &dz1_sum, 0, x);
        grads.w_att2.add_outer_cols(T::one(), &dz2_sum, 0, x);

        let mut dpre = vec![T::zero(); d_h];
        layernorm_backward_into(h, acts.hidden.inv_std, &dh, &mut dpre);
        for (d, &p) in dpre.iter_mut().zip(&acts.hidden.pre) {
            if p <= T::zero() {
                *d = T::zero();
            }
        }
        grads.w_h.add_outer_cols(T::one(), &dpre, 0, x);
        Ok(())
    }
}

/// `base + w[:, start..] · code`
fn add_action_columns<T: Real>(w: &Matrix<T>, base: &[T], start: usize, code: &[T]) -> Vec<T> {
    base.iter()
        .enumerate()
        .map(|(i, &b)| b + dot(&w.row(i)[start..start + code.len()], code))
        .collect()
}

fn attend<T: Real>(action: Option<usize>, z1: Vec<T>, z2: Vec<T>, h: &[T]) -> CandidateCache<T> {
    let rows = z2.len();
    let cols = z1.len();
    let mut tanh = Matrix::zeros(rows, cols);
    for (r, &z2r) in z2.iter().enumerate() {
        for (dst, &z1c) in tanh.row_mut(r).iter_mut().zip(&z1) {
            *dst = (z2r * z1c).tanh();
        }
    }
    let mut attn = tanh.clone();
    let mut row_inv_std = Vec::with_capacity(rows);
    let mut y = Vec::with_capacity(rows);
    for r in 0..rows {
        row_inv_std.push(layernorm_in_place(attn.row_mut(r)));
        y.push(dot(attn.row(r), h));
    }
    CandidateCache {
        action,
        z1,
        z2,
        tanh,
        attn,
        row_inv_std,
        y,
    }
}
