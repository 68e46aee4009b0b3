use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{apply_override, RunConfig};
use super::train::{train, RunSummary};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::network::NetworkConfig;

/// Largest accepted relative gap between matched parameter counts.
pub const PARAM_MATCH_TOL: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    /// `key=value` overrides on top of the base config.
    #[serde(default)]
    pub set: Vec<String>,
}

/// Width sweep comparing two cell families at equal parameter counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleStudy {
    /// Multipliers applied to the base hidden dims of the reference family.
    pub ratios: Vec<f64>,
    pub reference: Variant,
    /// Family whose hidden dims are solved so its parameter count matches
    /// the reference at each ratio.
    pub matched: Variant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationPlan {
    pub name: String,
    /// Base run config, relative to the plan file.
    pub base: PathBuf,
    pub seeds: Vec<u64>,
    /// Overrides shared by every variant.
    #[serde(default)]
    pub set: Vec<String>,
    #[serde(default)]
    pub variants: Vec<Variant>,
    #[serde(default)]
    pub scale: Option<ScaleStudy>,
}

/// A variant resolved to a full config.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannedRun {
    pub variant: String,
    pub config: RunConfig,
    pub param_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub param_count: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub digest: String,
}

impl AblationPlan {
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: AblationPlan = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(".")).join(&plan.base);
        Ok((plan, base))
    }

    /// Resolve every variant against `base` (already read from disk as TOML),
    /// with `extra` overrides applied last.
    pub fn resolve(&self, base: &toml::Value, extra: &[String]) -> Result<Vec<PlannedRun>> {
        if self.seeds.is_empty() {
            return Err(Error::Config(format!("plan `{}` lists no seeds", self.name)));
        }
        let seeds = format!("seeds={:?}", self.seeds);
        let build = |variant: &str, sets: &[&[String]]| -> Result<RunConfig> {
            let mut v = base.clone();
            for s in sets.iter().copied().flatten().chain(extra) {
                apply_override(&mut v, s)?;
            }
            apply_override(&mut v, &seeds)?;
            apply_override(&mut v, &format!("name=\"{}-{variant}\"", self.name))?;
            RunConfig::from_value(v).map_err(|e| Error::Config(format!("plan `{}` variant `{variant}`: {e}", self.name)))
        };
        let mut runs = Vec::new();
        for var in &self.variants {
            let config = build(&var.name, &[&self.set, &var.set])?;
            runs.push(planned(var.name.clone(), config)?);
        }
        if let Some(scale) = &self.scale {
            let shell = build(&scale.reference.name, &[&self.set, &scale.reference.set])?;
            let spec = shell.env.build()?.spec().clone();
            for &ratio in &scale.ratios {
                if !(ratio > 0.0) {
                    return Err(Error::Config(format!("scale ratio must be positive, got {ratio}")));
                }
                let dims = scaled_dims(&shell.network.layer_hidden_dims, ratio);
                let dims_set = format!("network.layer_hidden_dims={dims:?}");
                let name = format!("{}-{ratio}x", scale.reference.name);
                let reference = build(&name, &[&self.set, &scale.reference.set, &[dims_set]])?;
                let target = network_params(&reference.network, &spec)?;
                let matched_shell = build(&scale.matched.name, &[&self.set, &scale.matched.set])?;
                let m_dims = match_param_count(&matched_shell.network, &dims, &spec, target)?;
                let m_set = format!("network.layer_hidden_dims={m_dims:?}");
                let m_name = format!("{}-{ratio}x", scale.matched.name);
                let matched = build(&m_name, &[&self.set, &scale.matched.set, &[m_set]])?;
                runs.push(planned(name, reference)?);
                runs.push(planned(m_name, matched)?);
            }
        }
        if runs.is_empty() {
            return Err(Error::Config(format!("plan `{}` has no variants", self.name)));
        }
        Ok(runs)
    }
}

fn planned(variant: String, config: RunConfig) -> Result<PlannedRun> {
    let spec = config.env.build()?.spec().clone();
    let param_count = match config.agent {
        crate::learner::AgentKind::Cells => network_params(&config.network, &spec)?,
        crate::learner::AgentKind::Dqn => dqn_params(&config.network.layer_hidden_dims, &spec),
    };
    Ok(PlannedRun {
        variant,
        config,
        param_count,
    })
}

pub fn network_params(net: &NetworkConfig, spec: &EnvSpec) -> Result<usize> {
    net.param_count(spec.obs_dim, spec.n_actions, spec.action_dim())
}

pub fn dqn_params(hidden: &[usize], spec: &EnvSpec) -> usize {
    let mut widths = vec![spec.obs_dim];
    widths.extend_from_slice(hidden);
    widths.push(spec.n_actions);
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

pub fn scaled_dims(dims: &[usize], ratio: f64) -> Vec<usize> {
    dims.iter().map(|&d| ((d as f64 * ratio).round() as usize).max(2)).collect()
}

/// Hidden dims of the form `round(base · f)` whose parameter count is
/// closest to `target`, found by bisection on `f` followed by a local scan.
pub fn match_param_count(net: &NetworkConfig, base: &[usize], spec: &EnvSpec, target: usize) -> Result<Vec<usize>> {
    let count = |f: f64| -> Result<(usize, Vec<usize>)> {
        let dims = scaled_dims(base, f);
        let cfg = NetworkConfig {
            layer_hidden_dims: dims.clone(),
            ..net.clone()
        };
        Ok((network_params(&cfg, spec)?, dims))
    };
    let (mut lo, mut hi) = (1e-3, 1.0);
    while count(hi)?.0 < target {
        hi *= 2.0;
        if hi > 1e4 {
            return Err(Error::Config("parameter target out of reach".into()));
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if count(mid)?.0 < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let gap = |n: usize| (n as f64 - target as f64).abs() / target as f64;
    let (mut best_n, mut best) = count(hi)?;
    // rounding makes the count a step function; try single-unit nudges too
    for l in 0..best.len() {
        for delta in [-1i64, 1] {
            let mut dims = best.clone();
            dims[l] = (dims[l] as i64 + delta).max(2) as usize;
            let cfg = NetworkConfig {
                layer_hidden_dims: dims.clone(),
                ..net.clone()
            };
            let n = network_params(&cfg, spec)?;
            if gap(n) < gap(best_n) {
                best_n = n;
                best = dims;
            }
        }
    }
    if gap(best_n) >= PARAM_MATCH_TOL {
        return Err(Error::Config(format!(
            "could not match {target} parameters within 1% (closest {best_n} with dims {best:?})"
        )));
    }
    Ok(best)
}

/// Run every planned variant, each as an independent training run.
pub fn run_plan(runs: &[PlannedRun]) -> Result<Vec<AblationRow>> {
    runs.iter()
        .map(|r| {
            let summary: RunSummary = train(&r.config)?;
            Ok(AblationRow {
                variant: r.variant.clone(),
                param_count: r.param_count,
                mean: summary.mean,
                std: summary.std,
                digest: summary.digest,
            })
        })
        .collect()
}

/// Markdown table: variant, parameters, mean ± std of the last-100 return.
pub fn format_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("| variant | params | last-100 return |\n|---|---:|---:|\n");
    for r in rows {
        let score = match (r.mean, r.std) {
            (Some(m), Some(s)) => format!("{m:.2} ± {s:.2}"),
            _ => "n/a".into(),
        };
        out.push_str(&format!("| {} | {} | {score} |\n", r.variant, r.param_count));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{CellKind, ConditioningMode};
    use crate::envs::EnvConfig;

    #[test]
    fn dqn_param_formula() {
        let spec = EnvConfig::named("breakout").build().unwrap().spec().clone();
        assert_eq!(dqn_params(&[10], &spec), 400 * 10 + 10 + 10 * 6 + 6);
    }

    #[test]
    fn matching_lands_within_one_percent() {
        let spec = EnvConfig::named("breakout").build().unwrap().spec().clone();
        let arq = NetworkConfig::default();
        let ad = NetworkConfig {
            cell_kind: CellKind::Ad,
            conditioning: ConditioningMode::Output,
            ..NetworkConfig::default()
        };
        for ratio in [0.5, 1.0, 1.5, 2.0] {
            let dims = scaled_dims(&arq.layer_hidden_dims, ratio);
            let target = network_params(&NetworkConfig { layer_hidden_dims: dims.clone(), ..arq.clone() }, &spec).unwrap();
            let m = match_param_count(&ad, &dims, &spec, target).unwrap();
            let n = network_params(&NetworkConfig { layer_hidden_dims: m, ..ad.clone() }, &spec).unwrap();
            assert!((n as f64 - target as f64).abs() / (target as f64) < PARAM_MATCH_TOL);
        }
    }
}
