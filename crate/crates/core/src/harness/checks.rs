use serde::Serialize;

use crate::cells::{
    grad_check, CellConfig, CellKind, ConditioningMode, DiffScheme, GoodnessKind, GradCheckReport,
};
use crate::envs::{bang_bang_actions, one_hot_codes};
use crate::error::Result;
use crate::learner::{dqn_grad_check, locality_check, Transition};
use crate::linalg::SeededRng;
use crate::network::{EnsembleMode, Network, NetworkConfig};

pub const KINDS: [CellKind; 2] = [CellKind::Ad, CellKind::Arq];
pub const CONDITIONINGS: [ConditioningMode; 2] = [ConditioningMode::Input, ConditioningMode::Output];

/// Pass count and worst error for one family of checks.
#[derive(Clone, Debug, Serialize)]
pub struct FamilyResult {
    pub label: String,
    pub passed: usize,
    pub total: usize,
    pub max_rel_err: f64,
    /// Entries skipped because their stencil straddles a ReLU kink.
    pub kinks: usize,
    /// Printed reports of the failing draws.
    pub failures: Vec<String>,
}

impl FamilyResult {
    fn new(label: String) -> Self {
        Self {
            label,
            passed: 0,
            total: 0,
            max_rel_err: 0.0,
            kinks: 0,
            failures: Vec::new(),
        }
    }

    fn add(&mut self, r: &GradCheckReport) {
        self.total += 1;
        self.max_rel_err = self.max_rel_err.max(r.max_rel_err());
        self.kinks += r.kinks();
        if r.passed() {
            self.passed += 1;
        } else {
            self.failures.push(r.to_string());
        }
    }

    pub fn ok(&self) -> bool {
        self.passed == self.total
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub scheme: DiffScheme,
    pub families: Vec<FamilyResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.families.iter().all(FamilyResult::ok)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.families.iter().map(|f| f.max_rel_err).fold(0.0, f64::max)
    }

    pub fn failing_draws(&self) -> usize {
        self.families.iter().map(|f| f.total - f.passed).sum()
    }

    pub fn total_draws(&self) -> usize {
        self.families.iter().map(|f| f.total).sum()
    }

    pub fn kinks(&self) -> usize {
        self.families.iter().map(|f| f.kinks).sum()
    }
}

impl std::fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for fam in &self.families {
            writeln!(
                f,
                "{:<26} {:>3}/{:<3} max rel err {:.2e}",
                fam.label, fam.passed, fam.total, fam.max_rel_err
            )?;
            if fam.kinks > 0 {
                writeln!(f, "{:<26} {} kink entries skipped", "", fam.kinks)?;
            }
        }
        Ok(())
    }
}

/// Random cell shape with one-hot or bang-bang action codes.
pub fn random_cell_config(kind: CellKind, goodness: GoodnessKind, conditioning: ConditioningMode, rng: &mut SeededRng) -> CellConfig {
    let (n_actions, action_dim) = if rng.uniform() < 0.5 {
        let n = 2 + rng.below(4);
        (n, n)
    } else {
        let k = 1 + rng.below(3);
        (1 << k, k)
    };
    CellConfig {
        obs_dim: 1 + rng.below(8),
        below_dim: rng.below(7),
        above_dim: rng.below(7),
        n_actions,
        action_dim,
        hidden_dim: 2 + rng.below(11),
        readout_dim: 1 + rng.below(8),
        goodness,
        conditioning,
        kind,
    }
}

/// Every cell variant plus the DQN network, `per_family` random draws each.
pub fn gradient_suite(per_family: usize, seed: u64, scheme: DiffScheme) -> Result<SuiteReport> {
    let mut families = Vec::new();
    let mut shapes = SeededRng::with_stream(seed, 11);
    for kind in KINDS {
        for goodness in GoodnessKind::ALL {
            for cond in CONDITIONINGS {
                let mut fam = FamilyResult::new(format!("{kind}-{goodness}-{cond}"));
                for i in 0..per_family {
                    let cfg = random_cell_config(kind, goodness, cond, &mut shapes);
                    fam.add(&grad_check(&cfg, seed * 1_000 + i as u64, scheme)?);
                }
                families.push(fam);
            }
        }
    }
    let mut fam = FamilyResult::new("dqn".into());
    for i in 0..per_family {
        let obs_dim = 1 + shapes.below(8);
        let hidden: Vec<usize> = (0..1 + shapes.below(3)).map(|_| 1 + shapes.below(8)).collect();
        let n_actions = 2 + shapes.below(5);
        let batch = 1 + shapes.below(6);
        fam.add(&dqn_grad_check(obs_dim, &hidden, n_actions, batch, seed * 1_000 + i as u64, scheme)?);
    }
    families.push(fam);
    Ok(SuiteReport { scheme, families })
}

/// Random 3-layer network and batch with random stored top-down inputs.
pub fn random_locality_case(
    kind: CellKind,
    conditioning: ConditioningMode,
    goodness: GoodnessKind,
    seed: u64,
) -> Result<(Network<f64>, Vec<Transition<f64>>)> {
    let mut rng = SeededRng::new(seed);
    let obs_dim = 2 + rng.below(6);
    let codes = if rng.uniform() < 0.5 {
        one_hot_codes(2 + rng.below(4))
    } else {
        bang_bang_actions(1 + rng.below(3))?
    };
    let dims: Vec<usize> = (0..3).map(|_| 2 + rng.below(9)).collect();
    let config = NetworkConfig {
        readout_dims: (0..3).map(|_| 1 + rng.below(6)).collect(),
        layer_hidden_dims: dims.clone(),
        cell_kind: kind,
        goodness,
        conditioning,
        ensemble: EnsembleMode::Mean,
    };
    let mut net = Network::<f64>::init(config, obs_dim, &codes, &mut rng)?;
    // a target that differs from the online weights
    let mut other = Network::<f64>::init(net.config.clone(), obs_dim, &codes, &mut rng)?;
    net.cells_mut().swap_with_slice(other.cells_mut());
    let topdown = |rng: &mut SeededRng| -> Vec<Vec<f64>> {
        (0..3)
            .map(|l| (0..dims.get(l + 1).copied().unwrap_or(0)).map(|_| rng.uniform_in(-1.0, 1.0)).collect())
            .collect()
    };
    let batch_size = 2 + rng.below(5);
    let batch = (0..batch_size)
        .map(|_| Transition {
            obs: (0..obs_dim).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
            action: rng.below(codes.len()),
            reward: rng.uniform_in(-1.0, 1.0),
            next_obs: (0..obs_dim).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
            done: rng.uniform() < 0.25,
            topdown: topdown(&mut rng),
            next_topdown: topdown(&mut rng),
        })
        .collect();
    Ok((net, batch))
}

/// Locality checks over every cell variant, `per_family` networks each.
pub fn locality_suite(per_family: usize, seed: u64, scheme: DiffScheme) -> Result<SuiteReport> {
    let mut families = Vec::new();
    for kind in KINDS {
        for cond in CONDITIONINGS {
            for goodness in GoodnessKind::ALL {
                let mut fam = FamilyResult::new(format!("locality {kind}-{goodness}-{cond}"));
                for i in 0..per_family {
                    let (net, batch) = random_locality_case(kind, cond, goodness, seed * 1_000 + i as u64)?;
                    let refs: Vec<&Transition<f64>> = batch.iter().collect();
                    let report = locality_check(&net, &refs, 0.99, scheme)?;
                    fam.total += 1;
                    fam.max_rel_err = fam.max_rel_err.max(report.max_rel_err());
                    fam.kinks += report.cells.iter().map(GradCheckReport::kinks).sum::<usize>();
                    if report.passed() {
                        fam.passed += 1;
                    } else {
                        let cells: Vec<String> = report.cells.iter().map(|c| c.to_string()).collect();
                        fam.failures.push(format!(
                            "structure ok {}, shapes {:?}\n{}",
                            report.structure_ok,
                            report.grad_shapes,
                            cells.join("")
                        ));
                    }
                }
                families.push(fam);
                if kind == CellKind::Ad {
                    break;
                }
            }
        }
    }
    Ok(SuiteReport { scheme, families })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_cover_every_variant() {
        let g = gradient_suite(1, 0, DiffScheme::Extrapolated).unwrap();
        assert_eq!(g.families.len(), 17);
        assert!(g.passed(), "{g}");
        let l = locality_suite(1, 0, DiffScheme::Extrapolated).unwrap();
        assert_eq!(l.families.len(), 2 + 8);
        assert!(l.passed(), "{l}");
    }

    #[test]
    fn random_shapes_are_valid() {
        let mut rng = SeededRng::new(1);
        for _ in 0..200 {
            let c = random_cell_config(CellKind::Arq, GoodnessKind::Var, ConditioningMode::Input, &mut rng);
            c.validate().unwrap();
        }
    }
}
