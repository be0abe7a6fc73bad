//! Run configuration: one TOML document with `[data]`, `[train]` and
//! `[eval]` tables. Dotted `key=value` overrides are applied on top of the
//! file before it is parsed.

use std::path::{Path, PathBuf};

use kidot_core::synth::DataConfig;
use kidot_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable naming the default output root.
pub const RUN_DIR_ENV: &str = "KIDOT_RUN_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Intensity range assumed by PSNR and SSIM.
    pub peak: f64,
    pub sliced_projections: usize,
    pub bootstrap_samples: usize,
    /// Grid of Tikhonov weights tried for the classical baseline.
    pub tikhonov_grid: Vec<f64>,
    pub baseline_steps: usize,
    pub baseline_step_size: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            peak: 1.0,
            sliced_projections: 200,
            bootstrap_samples: 1000,
            tikhonov_grid: vec![0.0, 0.01, 0.1, 1.0, 10.0],
            baseline_steps: 100,
            baseline_step_size: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Reads `path` (defaults when `None`) and applies `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut doc = toml::Table::try_from(RunConfig::default()).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(Error::io(p))?;
            let file: toml::Table = text
                .parse()
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            merge(&mut doc, file);
        }
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = doc
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Recursively overlays `top` onto `base`.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Sets `a.b.c = value`, parsing `value` as a TOML value and falling back
/// to a bare string.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let (last, path) = parts.split_last().expect("nonempty key");
    let mut table = doc;
    for p in path {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Output root: explicit flag, then the environment variable, then `runs`.
pub fn run_dir(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(RUN_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let cfg = RunConfig::load(
            None,
            &[
                "train.lambda=100".into(),
                "train.use_forward_operator=false".into(),
                "data.seed=7".into(),
                "data.modality.flip_fraction=0.1".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.lambda, 100.0);
        assert!(!cfg.train.use_forward_operator);
        assert_eq!(cfg.data.seed, 7);
        match cfg.data.modality {
            kidot_core::synth::Modality::Fourier { flip_fraction, .. } => assert_eq!(flip_fraction, 0.1),
            _ => panic!("modality changed"),
        }
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "[train]\nepochs = 3\n").unwrap();
        let cfg = RunConfig::load(Some(&p), &[]).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.gamma, 1e4);
        assert_eq!(cfg.data, DataConfig::default());
    }

    #[test]
    fn bad_overrides_are_rejected() {
        assert!(RunConfig::load(None, &["train.lambda".into()]).is_err());
        assert!(RunConfig::load(None, &["train.n_critic=0".into()]).is_err());
        assert!(RunConfig::load(None, &["train.lambda=\"x\"".into()]).is_err());
    }
}
