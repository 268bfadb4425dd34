//! Run configuration: one TOML document with `stft`, `filter`, `scene` and
//! `metrics` tables plus top-level `variant` and `seed`.
//!
//! Keys may be written as tables or dotted (`filter.alpha = 0.9`). Absent
//! keys take their defaults; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adaptive::DraecConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricsConfig;
use crate::pipeline::{AlgorithmVariant, Estimator, Topology};
use crate::scene::SceneConfig;
use crate::stft::StftConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub variant: AlgorithmVariant,
    pub seed: u64,
    pub stft: StftConfig,
    pub filter: DraecConfig,
    pub scene: SceneConfig,
    pub metrics: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: AlgorithmVariant::new(Estimator::Kalman, Topology::Joint),
            seed: 0,
            stft: StftConfig::default(),
            filter: DraecConfig::default(),
            scene: SceneConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if i64::try_from(self.seed).is_err() {
            return Err(Error::config(
                "seed",
                "must not exceed 2^63 - 1 (TOML integers are signed)",
            ));
        }
        self.stft.validate()?;
        if self.stft.sample_rate_hz != 16_000 {
            return Err(Error::config(
                "stft.sample_rate_hz",
                "processing runs at 16000 Hz",
            ));
        }
        self.filter.validate()?;
        self.scene.validate()?;
        self.metrics.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        self.validate()?;
        toml::to_string(self).map_err(|e| Error::config("<config>", e.to_string()))
    }

    /// Parses a TOML document and validates it.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse {
            path: "<config>".into(),
            reason: e.message().to_string(),
        })?;
        Self::from_table(table, Path::new("<config>"))
    }

    fn from_table(table: toml::Table, origin: &Path) -> Result<Self> {
        let cfg: RunConfig =
            toml::Value::Table(table)
                .try_into()
                .map_err(|e: toml::de::Error| Error::Parse {
                    path: origin.to_path_buf(),
                    reason: e.message().to_string(),
                })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_override(item: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = item.split_once('=').ok_or_else(|| Error::Parse {
        path: "<override>".into(),
        reason: format!("expected key=value, got {item:?}"),
    })?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(Error::Parse {
            path: "<override>".into(),
            reason: format!("empty key in {item:?}"),
        });
    }
    // Bare words such as variant names are taken as strings.
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.split('.').map(str::to_string).collect(), value))
}

fn insert_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty key path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(path.join("."), format!("{p} is not a table")))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

/// Loads a configuration file (if given) and applies `key=value` overrides.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let (mut table, origin) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse {
                path: p.to_path_buf(),
                reason: e.message().to_string(),
            })?;
            (table, p.to_path_buf())
        }
        None => (toml::Table::new(), "<defaults>".into()),
    };
    for item in overrides {
        let (key, value) = parse_override(item)?;
        insert_path(&mut table, &key, value)?;
    }
    RunConfig::from_table(table, &origin)
}
