//! Locally trained cells.
//!
//! A cell owns three matrices: `w_h` maps its input to a hidden vector,
//! `w_att1` and `w_att2` produce the two factors of an attention matrix
//! that reads the hidden vector out. An AD cell emits one value per action
//! directly; an ARQ cell emits a `d`-dimensional vector per action
//! candidate and reduces it with a goodness statistic.
//!
//! Gradients computed here never leave the cell: the cell input is a
//! constant as far as [`Cell::backward`] is concerned.

mod cell;
mod goodness;
mod gradcheck;

pub use cell::{ActionCodes, CandidateCache, Cell, CellActivations, CellGrads, CellParams, HiddenCache, PARAM_NAMES};
pub use goodness::{goodness, goodness_grad, goodness_grad_into, GoodnessKind};
pub use gradcheck::{
    check_cell_gradients, grad_check, hidden_kink, relative_error_with_floor, rounding_floor, DiffScheme, relative_error, GradCheckReport, ParamCheck, GRAD_CHECK_FLOOR,
    GRAD_CHECK_STEP, GRAD_CHECK_TOL, LOSS_ROUNDING_ULPS,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where the candidate action enters a cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditioningMode {
    /// The action code is appended to the attention input; one pass per candidate.
    Input,
    /// The readout has one slot (or group) per action; one pass per state.
    Output,
}

impl std::fmt::Display for ConditioningMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Input => "input",
            Self::Output => "output",
        })
    }
}

impl std::str::FromStr for ConditioningMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "input" => Ok(Self::Input),
            "output" => Ok(Self::Output),
            other => Err(format!("unknown conditioning `{other}` (expected input or output)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    /// Artificial-dopamine cell: the attention readout is the Q value.
    Ad,
    /// Goodness readout over a `d`-dimensional attention output.
    Arq,
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Ad => "ad",
            Self::Arq => "arq",
        })
    }
}

impl std::str::FromStr for CellKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ad" => Ok(Self::Ad),
            "arq" => Ok(Self::Arq),
            other => Err(format!("unknown cell kind `{other}` (expected ad or arq)")),
        }
    }
}

/// Shape and behaviour of a single cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub obs_dim: usize,
    /// Width of the hidden vector of the layer below (0 for the bottom layer).
    pub below_dim: usize,
    /// Width of the previous-step hidden vector of the layer above (0 for the top layer).
    pub above_dim: usize,
    pub n_actions: usize,
    /// Length of one action code (one-hot: `n_actions`; bang-bang: `k`).
    pub action_dim: usize,
    pub hidden_dim: usize,
    /// ARQ readout width `d`. Ignored by AD cells.
    pub readout_dim: usize,
    pub goodness: GoodnessKind,
    pub conditioning: ConditioningMode,
    pub kind: CellKind,
}

impl CellConfig {
    /// Width of the cell input before any action code is appended.
    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.below_dim + self.above_dim
    }

    /// Width of the attention input.
    pub fn attn_input_dim(&self) -> usize {
        match self.conditioning {
            ConditioningMode::Input => self.input_dim() + self.action_dim,
            ConditioningMode::Output => self.input_dim(),
        }
    }

    /// Number of rows of `w_att2` (and of the attention matrix).
    pub fn readout_rows(&self) -> usize {
        match (self.kind, self.conditioning) {
            (CellKind::Ad, ConditioningMode::Output) => self.n_actions,
            (CellKind::Ad, ConditioningMode::Input) => 1,
            (CellKind::Arq, ConditioningMode::Input) => self.readout_dim,
            (CellKind::Arq, ConditioningMode::Output) => self.n_actions * self.readout_dim,
        }
    }

    /// Length of the slice of the readout that scores one action.
    pub fn group_len(&self) -> usize {
        match self.kind {
            CellKind::Ad => 1,
            CellKind::Arq => self.readout_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        let attn = self.attn_input_dim();
        self.hidden_dim * self.input_dim() + self.hidden_dim * attn + self.readout_rows() * attn
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim() == 0 {
            return Err(Error::Config("cell input dimension must be positive".into()));
        }
        if self.n_actions == 0 {
            return Err(Error::Config("n_actions must be positive".into()));
        }
        if self.hidden_dim < 2 {
            return Err(Error::Config(format!(
                "hidden_dim must be at least 2 for layer normalization, got {}",
                self.hidden_dim
            )));
        }
        if self.kind == CellKind::Arq && self.readout_dim == 0 {
            return Err(Error::Config("ARQ readout_dim must be positive".into()));
        }
        if self.conditioning == ConditioningMode::Input && self.action_dim == 0 {
            return Err(Error::Config("input conditioning needs a positive action_dim".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> CellConfig {
        CellConfig {
            obs_dim: 4,
            below_dim: 3,
            above_dim: 2,
            n_actions: 3,
            action_dim: 3,
            hidden_dim: 5,
            readout_dim: 6,
            goodness: GoodnessKind::Rms,
            conditioning: ConditioningMode::Input,
            kind: CellKind::Arq,
        }
    }

    #[test]
    fn dims_per_variant() {
        let c = base();
        assert_eq!(c.input_dim(), 9);
        assert_eq!(c.attn_input_dim(), 12);
        assert_eq!(c.readout_rows(), 6);
        let ad_out = CellConfig {
            kind: CellKind::Ad,
            conditioning: ConditioningMode::Output,
            ..base()
        };
        assert_eq!(ad_out.readout_rows(), 3);
        assert_eq!(ad_out.attn_input_dim(), 9);
        let ad_in = CellConfig { kind: CellKind::Ad, ..base() };
        assert_eq!(ad_in.readout_rows(), 1);
        let arq_out = CellConfig {
            conditioning: ConditioningMode::Output,
            ..base()
        };
        assert_eq!(arq_out.readout_rows(), 18);
        assert_eq!(arq_out.param_count(), 5 * 9 + 5 * 9 + 18 * 9);
    }

    #[test]
    fn validation() {
        assert!(base().validate().is_ok());
        let empty = CellConfig {
            obs_dim: 0,
            below_dim: 0,
            above_dim: 0,
            ..base()
        };
        assert!(empty.validate().is_err());
        assert!(CellConfig { hidden_dim: 1, ..base() }.validate().is_err());
    }
}
