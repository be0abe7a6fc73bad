//! Per-sample metrics, reports, the classical baseline and CSV writers.

use std::fs;
use std::path::Path;

use kidot_core::metrics::{psnr, ssim};
use kidot_core::ot::{sliced_w1, PointCloud};
use kidot_core::training::{EpochRecord, TrainHistory};
use kidot_core::transport::{baseline_gradient_flow, Regularization, TransportPath};
use kidot_core::{ForwardModel, Image, Measurement};
use serde::{Deserialize, Serialize};

use crate::config::EvalConfig;
use crate::error::{Error, Result};
use crate::formats::{write_image_raw, write_pgm16};
use crate::stats::{mean, paired_ttest, std_dev, TTest};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub sample_id: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// `‖A x̂ − y‖₁`, the data misfit of the reconstruction.
    pub l1_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

impl Aggregate {
    pub fn of(xs: &[f64]) -> Self {
        Self {
            mean: mean(xs),
            std: std_dev(xs),
        }
    }
}

/// A paired t-test of this report's PSNR against a named competitor.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub against: String,
    pub test: TTest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub records: Vec<MetricRecord>,
    pub psnr: Aggregate,
    pub ssim: Aggregate,
    pub l1_residual: Aggregate,
    /// Sliced W1 between the reconstructions and the reference images.
    pub sliced_w1: f64,
    pub comparisons: Vec<Comparison>,
}

impl EvalReport {
    pub fn psnr_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.psnr).collect()
    }

    /// Adds a paired PSNR t-test against `other`.
    pub fn compare(&mut self, against: &str, other: &EvalReport) -> Result<()> {
        let test = paired_ttest(&self.psnr_values(), &other.psnr_values())?;
        self.comparisons.push(Comparison {
            against: against.into(),
            test,
        });
        Ok(())
    }
}

pub fn metric_record(
    sample_id: usize,
    x: &Image,
    y: &Measurement,
    truth: &Image,
    fm: &ForwardModel,
    peak: f64,
) -> Result<MetricRecord> {
    Ok(MetricRecord {
        sample_id,
        psnr: psnr(x, truth, peak)?,
        ssim: ssim(x, truth, peak)?,
        l1_residual: fm.apply(x)?.l1_distance(y)?,
    })
}

/// Scores `recons[i]` against `pairs[i]`.
pub fn evaluate(
    recons: &[Image],
    pairs: &[(Measurement, Image)],
    fm: &ForwardModel,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<EvalReport> {
    if recons.len() != pairs.len() || recons.is_empty() {
        return Err(Error::Config(format!(
            "{} reconstructions for {} reference pairs",
            recons.len(),
            pairs.len()
        )));
    }
    let records = recons
        .iter()
        .zip(pairs)
        .enumerate()
        .map(|(i, (x, (y, truth)))| metric_record(i, x, y, truth, fm, cfg.peak))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<Image> = pairs.iter().map(|(_, x)| x.clone()).collect();
    let sw = sliced_w1(
        &PointCloud::from_images(recons)?,
        &PointCloud::from_images(&refs)?,
        cfg.sliced_projections,
        seed,
    )?;
    Ok(report_from_records(records, sw))
}

pub fn report_from_records(records: Vec<MetricRecord>, sliced_w1: f64) -> EvalReport {
    let col = |f: fn(&MetricRecord) -> f64| Aggregate::of(&records.iter().map(f).collect::<Vec<_>>());
    EvalReport {
        psnr: col(|r| r.psnr),
        ssim: col(|r| r.ssim),
        l1_residual: col(|r| r.l1_residual),
        records,
        sliced_w1,
        comparisons: Vec::new(),
    }
}

/// The adjoint reconstruction `A* y` of every pair.
pub fn zero_filled(pairs: &[(Measurement, Image)], fm: &ForwardModel) -> Result<Vec<Image>> {
    Ok(pairs
        .iter()
        .map(|(y, _)| fm.adjoint(y))
        .collect::<kidot_core::Result<_>>()?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TikhonovTuning {
    pub lambda: f64,
    /// Mean PSNR for each grid value, in grid order.
    pub scores: Vec<(f64, f64)>,
    pub images: Vec<Image>,
}

/// Runs the Tikhonov gradient flow for every grid weight and keeps the
/// weight with the best mean PSNR on `pairs` (first one on ties).
pub fn tune_tikhonov(pairs: &[(Measurement, Image)], fm: &ForwardModel, cfg: &EvalConfig) -> Result<TikhonovTuning> {
    if cfg.tikhonov_grid.is_empty() {
        return Err(Error::Config("tikhonov grid is empty".into()));
    }
    let mut best: Option<(f64, f64, Vec<Image>)> = None;
    let mut scores = Vec::with_capacity(cfg.tikhonov_grid.len());
    for &lambda in &cfg.tikhonov_grid {
        let images = pairs
            .iter()
            .map(|(y, _)| {
                baseline_gradient_flow(
                    y,
                    fm,
                    Regularization::Tikhonov { lambda },
                    cfg.baseline_steps,
                    cfg.baseline_step_size,
                )
                .map(|r| r.image)
            })
            .collect::<kidot_core::Result<Vec<_>>>()?;
        let score = mean(
            &images
                .iter()
                .zip(pairs)
                .map(|(x, (_, t))| psnr(x, t, cfg.peak))
                .collect::<kidot_core::Result<Vec<_>>>()?,
        );
        scores.push((lambda, score));
        if best.as_ref().is_none_or(|(_, s, _)| score > *s) {
            best = Some((lambda, score, images));
        }
    }
    let (lambda, _, images) = best.expect("grid is nonempty");
    Ok(TikhonovTuning { lambda, scores, images })
}

pub fn write_metrics_csv(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(Error::io(path))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Serialize, Deserialize)]
struct HistoryRow {
    epoch: usize,
    generator_loss: f64,
    critic_loss: f64,
    path_cost: f64,
    supervised: f64,
    val_psnr: Option<f64>,
    val_ssim: Option<f64>,
    lipschitz: Option<f64>,
}

pub fn write_history_csv(path: &Path, history: &TrainHistory) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in &history.records {
        w.serialize(HistoryRow {
            epoch: r.epoch,
            generator_loss: r.generator_loss,
            critic_loss: r.critic_loss,
            path_cost: r.path_cost,
            supervised: r.supervised,
            val_psnr: r.val_psnr,
            val_ssim: r.val_ssim,
            lipschitz: r.lipschitz,
        })?;
    }
    w.flush().map_err(Error::io(path))
}

pub fn read_history_csv(path: &Path) -> Result<TrainHistory> {
    let mut r = csv::Reader::from_path(path)?;
    let mut history = TrainHistory::default();
    for row in r.deserialize() {
        let h: HistoryRow = row?;
        history.records.push(EpochRecord {
            epoch: h.epoch,
            generator_loss: h.generator_loss,
            critic_loss: h.critic_loss,
            path_cost: h.path_cost,
            supervised: h.supervised,
            val_psnr: h.val_psnr,
            val_ssim: h.val_ssim,
            lipschitz: h.lipschitz,
        });
    }
    Ok(history)
}

/// Summary written next to `metrics.csv`.
#[derive(Serialize)]
struct ReportSummary<'a> {
    samples: usize,
    psnr: Aggregate,
    ssim: Aggregate,
    l1_residual: Aggregate,
    sliced_w1: f64,
    comparisons: Vec<ComparisonRow<'a>>,
}

#[derive(Serialize)]
struct ComparisonRow<'a> {
    against: &'a str,
    t: f64,
    df: usize,
    p_value: f64,
    degenerate: bool,
}

pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    write_metrics_csv(&dir.join("metrics.csv"), &report.records)?;
    let summary = ReportSummary {
        samples: report.records.len(),
        psnr: report.psnr,
        ssim: report.ssim,
        l1_residual: report.l1_residual,
        sliced_w1: report.sliced_w1,
        comparisons: report
            .comparisons
            .iter()
            .map(|c| ComparisonRow {
                against: &c.against,
                t: c.test.t,
                df: c.test.df,
                p_value: c.test.p_value,
                degenerate: c.test.degenerate,
            })
            .collect(),
    };
    let p = dir.join("report.toml");
    let text = toml::to_string(&summary).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&p, text).map_err(Error::io(&p))
}

/// Writes each image as `<stem>_<i>.raw` and `<stem>_<i>.pgm`.
pub fn write_images(dir: &Path, stem: &str, images: &[Image]) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    for (i, x) in images.iter().enumerate() {
        write_image_raw(x, &dir.join(format!("{stem}_{i:03}.raw")))?;
        write_pgm16(x, &dir.join(format!("{stem}_{i:03}.pgm")))?;
    }
    Ok(())
}

/// Writes every path state plus `costs.csv` (`step,l1_residual`).
pub fn export_path(dir: &Path, path: &TransportPath) -> Result<()> {
    write_images(dir, "state", &path.states)?;
    let p = dir.join("costs.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["step", "l1_residual"])?;
    for (i, c) in path.step_costs.iter().enumerate() {
        w.write_record([i.to_string(), c.to_string()])?;
    }
    w.flush().map_err(Error::io(&p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use kidot_core::synth::{make_phantom, simulate_measurement, NoiseConfig, PhantomKind};

    fn pairs(k: usize) -> (ForwardModel, Vec<(Measurement, Image)>) {
        let fm = ForwardModel::identity(16);
        let v = (0..k)
            .map(|i| {
                let x = make_phantom(PhantomKind::Ellipses, 16, i as u64).unwrap();
                (fm.apply(&x).unwrap(), x)
            })
            .collect();
        (fm, v)
    }

    #[test]
    fn aggregates_match_records() {
        let (fm, p) = pairs(6);
        let noisy: Vec<Image> = p
            .iter()
            .enumerate()
            .map(|(i, (_, x))| {
                let y = simulate_measurement(x, &fm, &NoiseConfig::gaussian(0.02 * (i + 1) as f64), i as u64).unwrap();
                fm.adjoint(&y).unwrap()
            })
            .collect();
        let rep = evaluate(&noisy, &p, &fm, &EvalConfig::default(), 0).unwrap();
        let ps: Vec<f64> = rep.records.iter().map(|r| r.psnr).collect();
        assert!((rep.psnr.mean - ps.iter().sum::<f64>() / 6.0).abs() < 1e-12);
        assert!((rep.psnr.std - std_dev(&ps)).abs() < 1e-12);
        assert!(rep.sliced_w1 > 0.0);
    }

    #[test]
    fn metrics_csv_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let (fm, p) = pairs(3);
        let xs: Vec<Image> = p.iter().map(|(_, x)| x.clone()).collect();
        let rep = evaluate(&xs, &p, &fm, &EvalConfig::default(), 0).unwrap();
        let path = dir.path().join("metrics.csv");
        write_metrics_csv(&path, &rep.records).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "sample_id,psnr,ssim,l1_residual");
        assert_eq!(read_metrics_csv(&path).unwrap(), rep.records);
    }

    #[test]
    fn tikhonov_tuning_picks_zero_on_clean_identity() {
        let (fm, p) = pairs(2);
        let t = tune_tikhonov(&p, &fm, &EvalConfig::default()).unwrap();
        assert_eq!(t.lambda, 0.0);
        assert_eq!(t.scores.len(), 5);
    }
}
