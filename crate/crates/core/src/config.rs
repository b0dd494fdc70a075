//! TOML run configuration with dotted-key overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::PipelineConfig;
use crate::synth::SynthSpec;
use crate::training::{GridSpec, SplitSpec, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Probability cut-off for the multi-label heads.
    pub threshold: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_activities: usize,
    pub n_contexts: usize,
    pub instances_per_user: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    pub co_occurrence_rate: f64,
    pub context_damping: f64,
    pub holdout_pairs: Vec<(usize, usize)>,
    /// Length of a constant-label bout in written recordings.
    pub bout_s: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let s = SynthSpec::standard(4, 4, 2, 200, 0);
        Self {
            n_users: s.n_users,
            n_activities: s.n_activities,
            n_contexts: s.n_contexts,
            instances_per_user: s.instances_per_user,
            seed: 0,
            noise_sigma: s.noise_sigma,
            co_occurrence_rate: s.co_occurrence_rate,
            context_damping: s.context_damping,
            holdout_pairs: Vec::new(),
            bout_s: 6.0,
        }
    }
}

impl SynthConfig {
    pub fn spec(&self) -> SynthSpec {
        let mut s = SynthSpec::standard(self.n_users, self.n_activities, self.n_contexts, self.instances_per_user, self.seed);
        s.noise_sigma = self.noise_sigma;
        s.co_occurrence_rate = self.co_occurrence_rate;
        s.context_damping = self.context_damping;
        s.holdout_pairs = self.holdout_pairs.clone();
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub pipeline: PipelineConfig,
    pub split: SplitSpec,
    pub train: TrainConfig,
    pub grid: GridSpec,
    pub metrics: MetricsConfig,
    pub synth: SynthConfig,
}

/// Parses the right-hand side of an override as a TOML value, falling
/// back to a plain string.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `section.key=value` (any depth) to `table`.
pub fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `path` (if any), then applies overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| Error::parse(p, e))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::PairingScope;
    use crate::training::Ablation;

    #[test]
    fn defaults_round_trip() {
        let c = AppConfig::default();
        assert_eq!(c.train.batch_size, 128);
        assert_eq!(c.split.train, 0.6);
        assert_eq!(c.pipeline.window_s, 3.0);
        assert_eq!(c.train.loss_weights.alpha, 0.5);
        let text = c.to_toml().unwrap();
        assert_eq!(AppConfig::from_toml(&text).unwrap(), c);
        assert_eq!(AppConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn overrides_win() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[train]\nbatch_size = 64\nseed = 3\n[grid]\nalpha = [0.2]\n").unwrap();
        let over = vec![
            "train.seed=11".to_string(),
            "train.ablation=no_CL".to_string(),
            "train.loss_weights.gamma2=0.25".to_string(),
            "train.pairing_scope=activity".to_string(),
            "synth.holdout_pairs=[[1, 2]]".to_string(),
        ];
        let c = AppConfig::load(Some(&p), &over).unwrap();
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.train.seed, 11);
        assert_eq!(c.train.ablation, Ablation::NoCl);
        assert_eq!(c.train.loss_weights.gamma2, 0.25);
        assert_eq!(c.train.pairing_scope, PairingScope::Activity);
        assert_eq!(c.grid.alpha, vec![0.2]);
        assert_eq!(c.synth.holdout_pairs, vec![(1, 2)]);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(AppConfig::from_toml("[train]\nbatchsize = 3\n").is_err());
        assert!(AppConfig::load(None, &["nonsense".into()]).is_err());
        assert!(AppConfig::load(None, &["train.batch_size=-1".into()]).is_err());
    }

    #[test]
    fn synth_spec_follows_config() {
        let c = SynthConfig { noise_sigma: 0.7, holdout_pairs: vec![(0, 1)], ..Default::default() };
        let s = c.spec();
        assert_eq!(s.noise_sigma, 0.7);
        assert_eq!(s.holdout_pairs, vec![(0, 1)]);
        s.validate().unwrap();
    }
}
