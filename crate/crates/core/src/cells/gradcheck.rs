use serde::{Deserialize, Serialize};

use super::{ActionCodes, Cell, CellConfig, CellGrads, PARAM_NAMES};
use crate::error::Result;
use crate::linalg::{Matrix, SeededRng};

/// Central-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-4;
/// Maximum tolerated relative error.
pub const GRAD_CHECK_TOL: f64 = 1e-4;
/// Magnitude below which relative error degrades to absolute error.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;
/// Rounding error of one loss evaluation, in units of `ε·|loss|`.
pub const LOSS_ROUNDING_ULPS: f64 = 4.0;

/// How the numeric derivative is formed from loss evaluations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiffScheme {
    /// `(f(+h) − f(−h)) / 2h`
    #[default]
    Central,
    /// Richardson combination of central differences at `h` and `h/2`,
    /// cancelling the `h²` truncation term.
    Extrapolated,
}

impl DiffScheme {
    pub fn derivative(self, h: f64, mut loss_at: impl FnMut(f64) -> f64) -> f64 {
        let mut central = |h: f64| (loss_at(h) - loss_at(-h)) / (2.0 * h);
        match self {
            Self::Central => central(h),
            Self::Extrapolated => {
                let coarse = central(h);
                let fine = central(h / 2.0);
                (4.0 * fine - coarse) / 3.0
            }
        }
    }
}

impl std::fmt::Display for DiffScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Central => "central",
            Self::Extrapolated => "extrapolated",
        })
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_with_floor(analytic, numeric, GRAD_CHECK_FLOOR)
}

pub fn relative_error_with_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Floor for the relative error at a loss of magnitude `loss`: the larger of
/// [`GRAD_CHECK_FLOOR`] and the magnitude at which rounding in the loss,
/// amplified by the difference quotient, would alone reach the tolerance.
pub fn rounding_floor(scheme: DiffScheme, loss: f64) -> f64 {
    // the extrapolated quotient weighs evaluations by 4/3 at h/2 and 1/3 at h
    let gain = match scheme {
        DiffScheme::Central => 1.0,
        DiffScheme::Extrapolated => 3.0,
    };
    let noise = gain * LOSS_ROUNDING_ULPS * f64::EPSILON * loss.abs() / GRAD_CHECK_STEP;
    GRAD_CHECK_FLOOR.max(noise / GRAD_CHECK_TOL)
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Denominator floor used for this parameter.
    pub floor: f64,
    /// Coordinates of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    /// Every coordinate above tolerance.
    pub failures: Vec<(usize, usize)>,
    /// Coordinates whose stencil straddles a ReLU kink; compared but not
    /// held to the tolerance.
    pub kinks: Vec<(usize, usize)>,
}

impl ParamCheck {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn worst_unset(&self) -> bool {
        self.analytic == 0.0 && self.numeric == 0.0 && self.max_rel_err == 0.0
    }

    /// Compare `analytic` against central differences. `loss_at(i, delta)`
    /// must return the loss with flat entry `i` shifted by `delta`.
    pub fn compare(
        name: impl Into<String>,
        scheme: DiffScheme,
        analytic: &Matrix<f64>,
        loss_at: impl FnMut(usize, f64) -> f64,
    ) -> Self {
        Self::compare_with_kinks(name, scheme, analytic, loss_at, |_| false)
    }

    /// As [`compare`](Self::compare), with `crosses_kink(i)` true for entries
    /// whose `±h` stencil moves some ReLU input across zero.
    pub fn compare_with_kinks(
        name: impl Into<String>,
        scheme: DiffScheme,
        analytic: &Matrix<f64>,
        mut loss_at: impl FnMut(usize, f64) -> f64,
        crosses_kink: impl Fn(usize) -> bool,
    ) -> Self {
        let h = GRAD_CHECK_STEP;
        let floor = if analytic.is_empty() { GRAD_CHECK_FLOOR } else { rounding_floor(scheme, loss_at(0, 0.0)) };
        let mut check = ParamCheck {
            name: name.into(),
            max_rel_err: 0.0,
            floor,
            worst: (0, 0),
            analytic: 0.0,
            numeric: 0.0,
            failures: Vec::new(),
            kinks: Vec::new(),
        };
        for (i, &a) in analytic.as_slice().iter().enumerate() {
            let coords = (i / analytic.cols(), i % analytic.cols());
            if crosses_kink(i) {
                check.kinks.push(coords);
                continue;
            }
            let numeric = scheme.derivative(h, |d| loss_at(i, d));
            let err = relative_error_with_floor(a, numeric, floor);
            // NaN must count as a failure, so compare negated.
            if !(err <= check.max_rel_err) || check.worst_unset() {
                check.max_rel_err = if err.is_nan() { f64::INFINITY } else { err };
                check.worst = coords;
                check.analytic = a;
                check.numeric = numeric;
            }
            if !(err < GRAD_CHECK_TOL) {
                check.failures.push(coords);
            }
        }
        check
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub label: String,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(ParamCheck::passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn kinks(&self) -> usize {
        self.params.iter().map(|p| p.kinks.len()).sum()
    }
}

/// True when shifting `w_h[row, col]` by up to `±h` can flip the sign of
/// the ReLU input `pre[row]` for one of the cell inputs `xs`.
pub fn hidden_kink(pre: &[&[f64]], xs: &[&[f64]], cols: usize, flat: usize) -> bool {
    let (row, col) = (flat / cols, flat % cols);
    pre.iter()
        .zip(xs)
        .any(|(p, x)| p[row].abs() <= GRAD_CHECK_STEP * x[col].abs())
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{}: {}", self.label, if self.passed() { "pass" } else { "FAIL" })?;
        for p in &self.params {
            write!(
                f,
                "  {:<10} max rel err {:.3e} at {:?} (analytic {:.6e}, numeric {:.6e})",
                p.name, p.max_rel_err, p.worst, p.analytic, p.numeric
            )?;
            if !p.failures.is_empty() {
                write!(f, ", {} failing entries, first {:?}", p.failures.len(), p.failures[0])?;
            }
            if !p.kinks.is_empty() {
                write!(f, ", {} kink entries skipped", p.kinks.len())?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Check `grads` against central differences of `Σ_i dl_dq[i] · q[i]`,
/// with `x` held fixed.
pub fn check_cell_gradients(
    cell: &Cell<f64>,
    x: &[f64],
    actions: &[usize],
    dl_dq: &[f64],
    grads: &CellGrads<f64>,
    scheme: DiffScheme,
) -> Result<GradCheckReport> {
    // Validate inputs once so the closures below cannot fail.
    cell.forward_actions(x, actions)?;
    let pre = cell.hidden(x)?.pre;
    let mut probe = cell.clone();
    let mut params = Vec::with_capacity(3);
    for (k, name) in PARAM_NAMES.iter().enumerate() {
        let loss_at = |i: usize, delta: f64| {
            let orig = probe.params.matrices()[k].as_slice()[i];
            probe.params.matrices_mut()[k].as_mut_slice()[i] = orig + delta;
            let q = probe.forward_actions(x, actions).expect("validated").q;
            probe.params.matrices_mut()[k].as_mut_slice()[i] = orig;
            q.iter().zip(dl_dq).map(|(q, w)| q * w).sum()
        };
        let cols = cell.config.input_dim();
        let check = ParamCheck::compare_with_kinks(*name, scheme, grads.matrices()[k], loss_at, |i| {
            k == 0 && hidden_kink(&[&pre], &[x], cols, i)
        });
        params.push(check);
    }
    let c = &cell.config;
    Ok(GradCheckReport {
        label: format!("{}-{}-{}", c.kind, c.goodness, c.conditioning),
        params,
    })
}

/// Random cell of the given shape, random input and upstream gradient,
/// analytic backward compared to central differences.
pub fn grad_check(config: &CellConfig, seed: u64, scheme: DiffScheme) -> Result<GradCheckReport> {
    let mut rng = SeededRng::new(seed);
    let codes = if config.action_dim == config.n_actions {
        ActionCodes::one_hot(config.n_actions)
    } else {
        let rows: Vec<Vec<f64>> = (0..config.n_actions)
            .map(|_| {
                (0..config.action_dim)
                    .map(|_| if rng.uniform() < 0.5 { -1.0 } else { 1.0 })
                    .collect()
            })
            .collect();
        ActionCodes::from_rows(&rows)?
    };
    let cell = Cell::<f64>::init(config.clone(), codes, &mut rng)?;
    let x: Vec<f64> = (0..config.input_dim()).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let actions: Vec<usize> = (0..config.n_actions).collect();
    let dl_dq: Vec<f64> = actions.iter().map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let acts = cell.forward_actions(&x, &actions)?;
    let grads = cell.backward(&acts, &dl_dq)?;
    let mut report = check_cell_gradients(&cell, &x, &actions, &dl_dq, &grads, scheme)?;
    report.label = format!("{} seed {seed}", report.label);
    Ok(report)
}
