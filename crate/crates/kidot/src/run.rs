//! Train-then-evaluate runs and their on-disk layout.
//!
//! A run directory holds `config.toml`, `checkpoint.kdt`, `history.csv`
//! and an `eval/` directory with `metrics.csv` and `report.toml`.

use std::fs;
use std::path::Path;

use kidot_core::training::{train, TrainHistory, TrainOutcome, TrainState};
use kidot_core::{Image, ParamVector};

use crate::checkpoint::save_checkpoint;
use crate::config::RunConfig;
use crate::dataset::StoredDataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate, write_history_csv, write_report, EvalReport};

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub outcome: TrainOutcome,
    pub report: EvalReport,
    pub reconstructions: Vec<Image>,
}

/// Reconstructs the validation set with `phi` and scores it.
pub fn evaluate_params(ds: &StoredDataset, cfg: &RunConfig, phi: &ParamVector) -> Result<(EvalReport, Vec<Image>)> {
    let flow = cfg.train.flow(&ds.fm_test);
    let pairs = &ds.data.validation;
    let recons = pairs
        .iter()
        .map(|(y, _)| flow.reconstruct(y, phi))
        .collect::<kidot_core::Result<Vec<_>>>()?;
    let report = evaluate(&recons, pairs, &ds.fm_test, &cfg.eval, cfg.train.seed)?;
    Ok((report, recons))
}

pub fn train_and_evaluate(ds: &StoredDataset, cfg: &RunConfig) -> Result<RunOutput> {
    let outcome = train(ds.problem(), &cfg.train)?;
    let (report, reconstructions) = evaluate_params(ds, cfg, &outcome.state.phi)?;
    Ok(RunOutput {
        outcome,
        report,
        reconstructions,
    })
}

/// Writes the config, checkpoint and history of a finished or failed run.
pub fn write_training(dir: &Path, cfg: &RunConfig, state: &TrainState, history: &TrainHistory) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let p = dir.join("config.toml");
    fs::write(&p, cfg.to_toml()?).map_err(Error::io(&p))?;
    save_checkpoint(&dir.join("checkpoint.kdt"), &cfg.train, state)?;
    write_history_csv(&dir.join("history.csv"), history)
}

pub fn write_run(dir: &Path, cfg: &RunConfig, out: &RunOutput) -> Result<()> {
    write_training(dir, cfg, &out.outcome.state, &out.outcome.history)?;
    write_report(&dir.join("eval"), &out.report)
}

/// Keeps the last good state of a failed run on disk, then passes the
/// error on.
pub fn salvage(dir: &Path, cfg: &RunConfig, err: Error) -> Error {
    if let Error::Training(f) = &err {
        if let Some(state) = &f.last_good {
            if let Err(e) = write_training(dir, cfg, state, &f.history) {
                return e;
            }
        }
    }
    err
}
