use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::learner::{AgentKind, EpsilonSchedule, LearnerConfig};
use crate::network::NetworkConfig;

/// Overrides the default output root.
pub const OUT_DIR_ENV: &str = "ARQ_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "runs";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl TryFrom<u32> for Precision {
    type Error = String;

    fn try_from(bits: u32) -> std::result::Result<Self, String> {
        match bits {
            32 => Ok(Self::F32),
            64 => Ok(Self::F64),
            other => Err(format!("precision must be 32 or 64, got {other}")),
        }
    }
}

impl From<Precision> for u32 {
    fn from(p: Precision) -> u32 {
        match p {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", u32::from(*self))
    }
}

/// Everything one training run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Directory name under the output root.
    #[serde(default)]
    pub name: String,
    pub env: EnvConfig,
    #[serde(default)]
    pub agent: AgentKind,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub epsilon: EpsilonSchedule,
    pub total_steps: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "checkpoint_interval")]
    pub checkpoint_interval: u64,
    /// Train-step metrics are written every this many train steps.
    #[serde(default = "log_interval")]
    pub log_interval: u64,
    /// Run seeds on separate threads instead of one after another.
    #[serde(default)]
    pub parallel_seeds: bool,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn checkpoint_interval() -> u64 {
    100_000
}

fn log_interval() -> u64 {
    1_000
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: toml::Value) -> Result<Self> {
        let cfg: RunConfig = value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read `path` and apply `key=value` overrides before validation.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut value: toml::Value =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.learner.validate()?;
        self.epsilon.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        if self.checkpoint_interval == 0 || self.log_interval == 0 {
            return Err(Error::Config("checkpoint_interval and log_interval must be positive".into()));
        }
        if self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("name `{}` must not contain path separators", self.name)));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of the config, with the seed list and
    /// output location blanked so that every seed of a run shares it.
    pub fn digest(&self) -> [u8; 32] {
        let mut canonical = self.clone();
        canonical.seeds.clear();
        canonical.out_dir = None;
        canonical.parallel_seeds = false;
        let json = serde_json::to_vec(&canonical).expect("run config always serializes");
        Sha256::digest(&json).into()
    }

    pub fn digest_hex(&self) -> String {
        hex(&self.digest())
    }

    /// Output root: the config's `out_dir`, else `$ARQ_OUT_DIR`, else `runs`.
    pub fn out_root(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    /// `<root>/<name or digest prefix>`
    pub fn run_dir(&self) -> PathBuf {
        let name = if self.name.is_empty() {
            self.digest_hex()[..12].to_string()
        } else {
            self.name.clone()
        };
        self.out_root().join(name)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parse an override value as a TOML literal, falling back to a bare string.
fn parse_literal(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Apply one `dotted.key=value` override, creating tables as needed.
pub fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` has an empty segment")));
    }
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{}` is not a table", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), parse_literal(raw.trim()));
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    unreachable!("loop returns on the last segment")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "total_steps = 10\n[env]\nname = \"breakout\"\n";

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.network.layer_hidden_dims, vec![400, 200, 200]);
        assert_eq!(cfg.learner.batch_size, 512);
        assert_eq!(cfg.seeds, vec![0]);
        assert_eq!(cfg.precision, Precision::F32);
        assert_eq!(cfg.checkpoint_interval, 100_000);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml(&format!("{MINIMAL}colour = 3\n")).unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
        let err = RunConfig::from_toml(&format!("{MINIMAL}[learner]\nbatch = 3\n")).unwrap_err();
        assert!(err.to_string().contains("batch"), "{err}");
    }

    #[test]
    fn precision_must_be_32_or_64() {
        assert!(RunConfig::from_toml(&format!("precision = 64\n{MINIMAL}")).is_ok());
        let err = RunConfig::from_toml(&format!("precision = 16\n{MINIMAL}")).unwrap_err();
        assert!(err.to_string().contains("32 or 64"), "{err}");
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let mut v: toml::Value = toml::from_str(MINIMAL).unwrap();
        apply_override(&mut v, "learner.optimizer.lr=0.01").unwrap();
        apply_override(&mut v, "network.cell_kind=ad").unwrap();
        apply_override(&mut v, "network.layer_hidden_dims=[8, 8, 8]").unwrap();
        apply_override(&mut v, "seeds=[1,2]").unwrap();
        let cfg = RunConfig::from_value(v).unwrap();
        assert_eq!(cfg.learner.optimizer.lr, 0.01);
        assert_eq!(cfg.network.cell_kind, crate::cells::CellKind::Ad);
        assert_eq!(cfg.network.layer_hidden_dims, vec![8, 8, 8]);
        assert_eq!(cfg.seeds, vec![1, 2]);
    }

    #[test]
    fn malformed_override() {
        let mut v: toml::Value = toml::from_str(MINIMAL).unwrap();
        assert!(apply_override(&mut v, "total_steps").is_err());
        assert!(apply_override(&mut v, "total_steps.x=1").is_err());
        assert!(apply_override(&mut v, "a..b=1").is_err());
    }

    #[test]
    fn digest_ignores_seeds_and_location_only() {
        let a = RunConfig::from_toml(MINIMAL).unwrap();
        let mut b = a.clone();
        b.seeds = vec![4, 5];
        b.out_dir = Some("/elsewhere".into());
        assert_eq!(a.digest(), b.digest());
        b.learner.gamma = 0.5;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest_hex().len(), 64);
    }

    #[test]
    fn round_trips_through_toml() {
        let a = RunConfig::from_toml(MINIMAL).unwrap();
        let b = RunConfig::from_toml(&a.to_toml()).unwrap();
        assert_eq!(a, b);
    }
}
