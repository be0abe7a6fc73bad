//! One-axis ablation sweeps.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::StoredDataset;
use crate::error::{Error, Result};
use crate::run::{train_and_evaluate, RunOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    /// Number of transport steps.
    Steps,
    Gamma,
    Lambda,
    /// A value of 0 keeps the data term in the transport update, anything
    /// else drops it.
    WithoutA,
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "N" | "steps" => Ok(Self::Steps),
            "gamma" => Ok(Self::Gamma),
            "lambda" => Ok(Self::Lambda),
            "without_A" | "without_a" => Ok(Self::WithoutA),
            _ => Err(Error::Config(format!(
                "unknown ablation axis `{s}` (expected N, gamma, lambda or without_A)"
            ))),
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Steps => "N",
            Self::Gamma => "gamma",
            Self::Lambda => "lambda",
            Self::WithoutA => "without_A",
        })
    }
}

impl AblationAxis {
    /// Values swept when none are given.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            Self::Steps => vec![6.0, 12.0, 18.0],
            Self::Gamma => vec![1.0, 1e2, 1e4],
            Self::Lambda => vec![0.1, 1.0, 100.0],
            Self::WithoutA => vec![0.0, 1.0],
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut cfg = base.clone();
        match self {
            Self::Steps => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(Error::Config(format!("N must be a positive integer, got {value}")));
                }
                cfg.train.steps = value as usize;
            }
            Self::Gamma => cfg.train.gamma = value,
            Self::Lambda => cfg.train.lambda = value,
            Self::WithoutA => cfg.train.use_forward_operator = value == 0.0,
        }
        cfg.train.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub axis: String,
    pub value: f64,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub l1_residual_mean: f64,
    pub sliced_w1: f64,
    pub epochs: usize,
}

impl AblationRow {
    fn new(axis: AblationAxis, value: f64, out: &RunOutput) -> Self {
        let r = &out.report;
        Self {
            axis: axis.to_string(),
            value,
            psnr_mean: r.psnr.mean,
            psnr_std: r.psnr.std,
            ssim_mean: r.ssim.mean,
            ssim_std: r.ssim.std,
            l1_residual_mean: r.l1_residual.mean,
            sliced_w1: r.sliced_w1,
            epochs: out.outcome.state.epoch,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationEntry {
    pub row: AblationRow,
    pub output: RunOutput,
}

/// Trains and evaluates one model per value, all with the seeds of `base`.
pub fn run_ablation(
    ds: &StoredDataset,
    base: &RunConfig,
    axis: AblationAxis,
    values: &[f64],
) -> Result<Vec<AblationEntry>> {
    if values.is_empty() {
        return Err(Error::Config("ablation needs at least one value".into()));
    }
    values
        .iter()
        .map(|&v| {
            let cfg = axis.apply(base, v)?;
            let output = train_and_evaluate(ds, &cfg)?;
            Ok(AblationEntry {
                row: AblationRow::new(axis, v, &output),
                output,
            })
        })
        .collect()
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(Error::io(path))
}
