//! Experiment grids: the `ExperimentSpec` file format, command-line overrides
//! and the expansion into per-trial scene jobs.

use std::path::{Path, PathBuf};

use clap::Args;
use draec::config::{load_config, RunConfig};
use draec::pipeline::AlgorithmVariant;
use draec::scene::SceneConfig;
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult, ConfigArgs};

/// Grid over reverberation, echo level and interference presence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    /// Reverberation times in seconds; 0 is the anechoic, echo-only-room case.
    pub rt60: Vec<f64>,
    pub ser_db: Vec<f64>,
    /// Whether a cell includes the interfering talker.
    pub interference: Vec<bool>,
    /// Interference level when present.
    pub sir_db: f64,
    pub variants: Vec<String>,
    pub trials: usize,
    pub seed: u64,
    /// Scene length; path-change scenes are twice as long.
    pub duration_s: f64,
    pub path_change: bool,
    /// Adds an echo-only path-change run for ERLE tracking curves.
    pub tracking: bool,
    pub tracking_rt60: f64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            rt60: vec![0.0, 0.3, 0.6],
            ser_db: vec![0.0, -10.0, -20.0],
            interference: vec![false, true],
            sir_db: 0.0,
            variants: AlgorithmVariant::all()
                .iter()
                .map(|v| v.name().to_string())
                .collect(),
            trials: 1,
            seed: 0,
            duration_s: 8.0,
            path_change: false,
            tracking: true,
            tracking_rt60: 0.3,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> CliResult<Vec<AlgorithmVariant>> {
        let bad =
            |key: &str, reason: &str| CliError::usage("invalid_spec", format!("{key}: {reason}"));
        if self.rt60.is_empty() || self.ser_db.is_empty() || self.interference.is_empty() {
            return Err(bad(
                "rt60/ser_db/interference",
                "grid axes must not be empty",
            ));
        }
        if self
            .rt60
            .iter()
            .chain([&self.tracking_rt60])
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(bad("rt60", "values must be finite and non-negative"));
        }
        if self
            .ser_db
            .iter()
            .chain([&self.sir_db])
            .any(|v| !v.is_finite())
        {
            return Err(bad("ser_db/sir_db", "levels must be finite"));
        }
        if self.trials == 0 {
            return Err(bad("trials", "must be at least 1"));
        }
        if i64::try_from(self.seed).is_err() {
            return Err(bad("seed", "must not exceed 2^63 - 1"));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(bad("duration_s", "must be positive"));
        }
        if self.variants.is_empty() {
            return Err(bad("variants", "must not be empty"));
        }
        self.variants
            .iter()
            .map(|v| v.parse().map_err(CliError::config))
            .collect()
    }

    /// Grid cells in spec order: rt60 outermost, then SER, then interference.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &rt60 in &self.rt60 {
            for &ser_db in &self.ser_db {
                for &present in &self.interference {
                    cells.push(Cell {
                        rt60,
                        ser_db,
                        sir_db: present.then_some(self.sir_db),
                    });
                }
            }
        }
        cells
    }

    /// Every (cell, trial) pair with its scene seed. Seeds are consecutive
    /// from `seed` in job order.
    pub fn jobs(&self) -> Vec<Job> {
        let cells = self.cells();
        let mut jobs = Vec::with_capacity(cells.len() * self.trials);
        for (c, cell) in cells.into_iter().enumerate() {
            for trial in 0..self.trials {
                let index = jobs.len() as u64;
                jobs.push(Job {
                    cell_index: c,
                    trial,
                    cell,
                    seed: self.seed.wrapping_add(index) & i64::MAX as u64,
                });
            }
        }
        jobs
    }

    pub fn scene_config(&self, base: &SceneConfig, cell: &Cell) -> SceneConfig {
        SceneConfig {
            duration_s: self.duration_s,
            rt60: cell.rt60,
            ser_db: Some(cell.ser_db),
            sir_db: cell.sir_db,
            path_change: self.path_change,
            ..base.clone()
        }
    }

    /// Echo-only scene with an echo path change halfway through.
    pub fn tracking_config(&self, base: &SceneConfig) -> SceneConfig {
        SceneConfig {
            duration_s: self.duration_s,
            rt60: self.tracking_rt60,
            ser_db: None,
            sir_db: None,
            path_change: true,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub rt60: f64,
    pub ser_db: f64,
    pub sir_db: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct Job {
    pub cell_index: usize,
    pub trial: usize,
    pub cell: Cell,
    pub seed: u64,
}

/// Grid selection shared by `simulate` and `experiment`. Flags override the
/// spec file, which overrides the built-in defaults.
#[derive(Args, Clone, Default)]
pub struct GridArgs {
    /// Experiment spec file (TOML).
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    /// Reverberation times in seconds, comma separated.
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub rt60: Option<Vec<f64>>,
    /// Signal-to-echo ratios in dB, comma separated.
    #[arg(
        long,
        value_delimiter = ',',
        allow_negative_numbers = true,
        value_name = "LIST"
    )]
    pub ser: Option<Vec<f64>>,
    /// Interference presence per cell: any of `off`, `on`, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_presence, value_name = "LIST")]
    pub interference: Option<Vec<bool>>,
    /// Interference level in dB when present.
    #[arg(long, allow_negative_numbers = true, value_name = "DB")]
    pub sir: Option<f64>,
    /// Variants to run, comma separated (experiment only).
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub variants: Option<Vec<String>>,
    #[arg(long, value_name = "N")]
    pub trials: Option<usize>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Scene duration in seconds.
    #[arg(long, value_name = "SECONDS")]
    pub duration: Option<f64>,
    /// Concatenate two rooms to simulate an echo path change.
    #[arg(long)]
    pub path_change: bool,
}

fn parse_presence(s: &str) -> Result<bool, String> {
    match s {
        "on" | "present" | "true" => Ok(true),
        "off" | "absent" | "false" => Ok(false),
        _ => Err(format!("expected on or off, got {s:?}")),
    }
}

impl GridArgs {
    pub fn resolve(&self) -> CliResult<ExperimentSpec> {
        let mut spec = match &self.spec {
            Some(path) => read_spec(path)?,
            None => ExperimentSpec::default(),
        };
        if let Some(v) = &self.rt60 {
            spec.rt60 = v.clone();
        }
        if let Some(v) = &self.ser {
            spec.ser_db = v.clone();
        }
        if let Some(v) = &self.interference {
            spec.interference = v.clone();
        }
        if let Some(v) = self.sir {
            spec.sir_db = v;
        }
        if let Some(v) = &self.variants {
            spec.variants = v.clone();
        }
        if let Some(v) = self.trials {
            spec.trials = v;
        }
        if let Some(v) = self.seed {
            spec.seed = v;
        }
        if let Some(v) = self.duration {
            spec.duration_s = v;
        }
        spec.path_change |= self.path_change;
        spec.validate()?;
        Ok(spec)
    }
}

fn read_spec(path: &Path) -> CliResult<ExperimentSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage("io", format!("{}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::usage("parse", format!("{}: {}", path.display(), e.message())))
}

pub fn run_config(args: &ConfigArgs) -> CliResult<RunConfig> {
    load_config(args.config.as_deref(), &args.overrides).map_err(CliError::config)
}
