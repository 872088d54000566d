//! The resolved run configuration: a TOML file, then `--set` overrides, then
//! dedicated flags.

use std::path::Path;

use freemark_core::attacks::{FineTuneSpec, ForgedAlpha};
use freemark_core::experiment::{Bands, ExperimentPlan};
use freemark_core::host::HostConfig;
use freemark_core::keygen::{KeyGenConfig, DEFAULT_WATERMARK_BITS};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub host: HostConfig,
    pub keygen: KeyGenConfig,
    pub watermark_bits: usize,
    /// Verification threshold.
    pub theta: f64,
    pub finetune: FineTuneSpec,
    pub experiment: ExperimentSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            host: HostConfig::default(),
            keygen: KeyGenConfig::default(),
            watermark_bits: DEFAULT_WATERMARK_BITS,
            theta: 0.25,
            finetune: FineTuneSpec::default(),
            experiment: ExperimentSection::default(),
        }
    }
}

/// Experiment-only knobs; host, keygen, bits and theta come from the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub master_seed: u64,
    pub trials: usize,
    pub forged_count: usize,
    pub forged_alpha: ForgedAlpha,
    pub hyper_variants: usize,
    pub data_variants: usize,
    pub robust_eta: f64,
    pub eta_grid: Vec<f64>,
    pub overwrite_count: usize,
    pub bands: Bands,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let p = ExperimentPlan::default();
        Self {
            master_seed: p.master_seed,
            trials: p.trials,
            forged_count: p.forged_count,
            forged_alpha: p.forged_alpha,
            hyper_variants: p.hyper_variants,
            data_variants: p.data_variants,
            robust_eta: p.robust_eta,
            eta_grid: p.eta_grid,
            overwrite_count: p.overwrite_count,
            bands: p.bands,
        }
    }
}

impl Config {
    pub fn plan(&self) -> ExperimentPlan {
        let e = self.experiment.clone();
        ExperimentPlan {
            host: self.host.clone(),
            keygen: self.keygen.clone(),
            watermark_bits: self.watermark_bits,
            theta: self.theta,
            master_seed: e.master_seed,
            trials: e.trials,
            forged_count: e.forged_count,
            forged_alpha: e.forged_alpha,
            hyper_variants: e.hyper_variants,
            data_variants: e.data_variants,
            finetune: self.finetune.clone(),
            robust_eta: e.robust_eta,
            eta_grid: e.eta_grid,
            overwrite_count: e.overwrite_count,
            bands: e.bands,
        }
    }

    /// JSON echo written into every artifact.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot render config: {e}")))
    }
}

/// Reads `path` (if any), applies `key.path=value` overrides, then deserializes.
pub fn load(path: Option<&Path>, sets: &[String]) -> Result<Config, CliError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for set in sets {
        apply_override(&mut table, set)?;
    }
    Config::deserialize(toml::Value::Table(table)).map_err(|e| CliError::Config(e.to_string()))
}

fn apply_override(table: &mut toml::Table, set: &str) -> Result<(), CliError> {
    let (key, raw) = set
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{set}` is not KEY=VALUE")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.trim().split('.').collect();
    let leaf = parts.pop().filter(|s| !s.is_empty());
    let Some(leaf) = leaf else {
        return Err(CliError::Config(format!("override `{set}` has an empty key")));
    };
    let mut cur = table;
    for part in parts {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{set}`: `{part}` is not a table")))?;
    }
    cur.insert(leaf.to_string(), value);
    Ok(())
}
