//! Command line front end.
//!
//! Exit codes: 0 on success, 1 for usage and validation errors, 2 for
//! numerical failures (divergence, non-finite values, failed checks).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use kidot_core::training::{train_from, TrainHistory, TrainState};
use kidot_core::{Image, Measurement};

use crate::ablation::{run_ablation, write_ablation_csv, AblationAxis};
use crate::checkpoint::load_checkpoint_for;
use crate::checks::{adjoint_checks, generator_grad_check, straightline_cases};
use crate::config::{run_dir, RunConfig};
use crate::dataset::{load_dataset, save_dataset, StoredDataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, export_path, read_history_csv, tune_tikhonov, write_images, write_report, zero_filled};
use crate::formats::RawArray;
use crate::run::{evaluate_params, salvage, write_run, RunOutput};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "kidot",
    version,
    about = "Learned transport reconstruction for imaging inverse problems"
)]
pub struct Cli {
    /// TOML run configuration with [data], [train] and [eval] tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output root (default: $KIDOT_RUN_DIR, then ./runs).
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.lambda=100`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    GenData(GenData),
    /// Train a model and evaluate it on the validation set.
    Train(Train),
    /// Reconstruct measurements with a trained checkpoint.
    Reconstruct(Reconstruct),
    /// Score a checkpoint against the zero-filled and Tikhonov baselines.
    Eval(Eval),
    /// Check that every forward model matches its adjoint.
    CheckAdjoint(CheckAdjoint),
    /// Compare generator gradients with finite differences.
    CheckGrad(CheckGrad),
    /// Check that the optimal bounded-speed path is the straight segment.
    #[command(name = "check-theorem31")]
    CheckStraightLine(CheckStraightLine),
    /// Train one model per value along an ablation axis.
    Ablate(Ablate),
}

#[derive(Debug, Args)]
pub struct GenData {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default: <run-dir>/data).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArg {
    /// Dataset directory; generated from the config when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Train {
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from a checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Output directory (default: <run-dir>/train).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Reconstruct {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArg,
    /// Raw array of stacked measurements `[count, len]`; defaults to the
    /// validation measurements of the dataset.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Also write every intermediate state of each path.
    #[arg(long)]
    pub paths: bool,
    /// Output directory (default: <run-dir>/reconstruct).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Eval {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArg,
    /// Output directory (default: <run-dir>/eval).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckAdjoint {
    #[arg(long, value_delimiter = ',', default_values_t = vec![16, 32])]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CheckGrad {
    #[arg(long, default_value_t = 8)]
    pub side: usize,
    #[arg(long, default_value_t = 3)]
    pub steps: usize,
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct CheckStraightLine {
    #[arg(long)]
    pub dim: usize,
    /// Speed bound; endpoints are drawn at unit distance.
    #[arg(long = "M")]
    pub m: f64,
    /// Knot intervals.
    #[arg(long = "K", default_value_t = 32)]
    pub k: usize,
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    #[arg(long, default_value_t = 10)]
    pub cases: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct Ablate {
    /// N, gamma, lambda or without_A.
    #[arg(long)]
    pub axis: String,
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<f64>,
    #[command(flatten)]
    pub data: DataArg,
    /// Output directory (default: <run-dir>/ablation-<axis>).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_INVALID
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    let root = run_dir(cli.run_dir.as_deref());
    let load = |extra: Vec<String>| {
        let mut all = cli.overrides.clone();
        all.extend(extra);
        RunConfig::load(cli.config.as_deref(), &all)
    };
    match cli.command {
        Command::GenData(a) => {
            let cfg = load(a.seed.map(|s| format!("data.seed={s}")).into_iter().collect())?;
            let out = a.out.unwrap_or_else(|| root.join("data"));
            let ds = StoredDataset::generate(&cfg.data)?;
            save_dataset(&out, &ds)?;
            let c = cfg.data.counts;
            println!(
                "wrote {}: {} unpaired, {} clean, {} paired, {} validation",
                out.display(),
                c.unpaired,
                c.clean,
                c.paired,
                c.validation
            );
            Ok(EXIT_OK)
        }
        Command::Train(a) => {
            let mut extra = Vec::new();
            extra.extend(a.epochs.map(|e| format!("train.epochs={e}")));
            extra.extend(a.seed.map(|s| format!("train.seed={s}")));
            let cfg = load(extra)?;
            let (cfg, ds) = dataset_for(cfg, a.data.data.as_deref())?;
            let out = a.out.unwrap_or_else(|| root.join("train"));
            cmd_train(&cfg, &ds, a.resume.as_deref(), &out)
        }
        Command::Reconstruct(a) => {
            let cfg = load(Vec::new())?;
            let (cfg, ds) = dataset_for(cfg, a.data.data.as_deref())?;
            let out = a.out.clone().unwrap_or_else(|| root.join("reconstruct"));
            cmd_reconstruct(&cfg, &ds, &a, &out)
        }
        Command::Eval(a) => {
            let cfg = load(Vec::new())?;
            let (cfg, ds) = dataset_for(cfg, a.data.data.as_deref())?;
            let out = a.out.unwrap_or_else(|| root.join("eval"));
            cmd_eval(&cfg, &ds, &a.checkpoint, &out)
        }
        Command::CheckAdjoint(a) => {
            let mut ok = true;
            for r in adjoint_checks(&a.sizes, a.trials, a.seed)? {
                let pass = r.rel_error < a.tol;
                ok &= pass;
                println!(
                    "{:<15} n={:<3} rel_error={:.3e} {}",
                    r.model,
                    r.side,
                    r.rel_error,
                    verdict(pass)
                );
            }
            Ok(if ok { EXIT_OK } else { EXIT_NUMERICAL })
        }
        Command::CheckGrad(a) => {
            let mut ok = true;
            for seed in 0..a.seeds {
                let rep = generator_grad_check(a.side, a.steps, a.batch, seed, a.tol)?;
                ok &= rep.passed();
                println!(
                    "seed={seed} params={} max_rel_error={:.3e} {}",
                    rep.analytic.len(),
                    rep.max_abs_rel_err,
                    verdict(rep.passed())
                );
            }
            Ok(if ok { EXIT_OK } else { EXIT_NUMERICAL })
        }
        Command::CheckStraightLine(a) => {
            if a.m < 1.0 {
                return Err(Error::Config(format!(
                    "--M must be at least the endpoint distance 1, got {}",
                    a.m
                )));
            }
            let cases = straightline_cases(a.dim, a.m, a.k, a.iters, a.cases, a.seed)?;
            let worst = cases.iter().map(|c| c.solution.deviation).fold(0.0, f64::max);
            let violation = cases.iter().map(|c| c.solution.max_violation).fold(0.0, f64::max);
            let pass = worst < a.tol;
            println!(
                "dim={} M={} K={} cases={} max_deviation={worst:.3e} max_violation={violation:.3e} {}",
                a.dim,
                a.m,
                a.k,
                a.cases,
                verdict(pass)
            );
            Ok(if pass { EXIT_OK } else { EXIT_NUMERICAL })
        }
        Command::Ablate(a) => {
            let axis: AblationAxis = a.axis.parse()?;
            let cfg = load(Vec::new())?;
            let (cfg, ds) = dataset_for(cfg, a.data.data.as_deref())?;
            let values = if a.values.is_empty() {
                axis.default_values()
            } else {
                a.values
            };
            let out = a.out.unwrap_or_else(|| root.join(format!("ablation-{axis}")));
            let entries = run_ablation(&ds, &cfg, axis, &values)?;
            fs::create_dir_all(&out).map_err(Error::io(&out))?;
            for e in &entries {
                let c = axis.apply(&cfg, e.row.value)?;
                write_run(&out.join(format!("{axis}={}", e.row.value)), &c, &e.output)?;
                println!(
                    "{axis}={:<8} psnr={:.3}±{:.3} ssim={:.4} sliced_w1={:.4}",
                    e.row.value, e.row.psnr_mean, e.row.psnr_std, e.row.ssim_mean, e.row.sliced_w1
                );
            }
            let rows: Vec<_> = entries.into_iter().map(|e| e.row).collect();
            write_ablation_csv(&out.join("ablation.csv"), &rows)?;
            Ok(EXIT_OK)
        }
    }
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Loads `dir` (taking its data config) or generates data from `cfg`.
fn dataset_for(mut cfg: RunConfig, dir: Option<&Path>) -> Result<(RunConfig, StoredDataset)> {
    let ds = match dir {
        Some(d) => load_dataset(d)?,
        None => StoredDataset::generate(&cfg.data)?,
    };
    cfg.data = ds.config.clone();
    Ok((cfg, ds))
}

fn cmd_train(cfg: &RunConfig, ds: &StoredDataset, resume: Option<&Path>, out: &Path) -> Result<i32> {
    let (state, history) = match resume {
        Some(p) => {
            let state = load_checkpoint_for(p, &cfg.train)?;
            let hist_path = p.with_file_name("history.csv");
            let history = if hist_path.exists() {
                read_history_csv(&hist_path)?
            } else {
                TrainHistory::default()
            };
            (state, history)
        }
        None => (TrainState::init(&cfg.train)?, TrainHistory::default()),
    };
    let outcome = match train_from(ds.problem(), &cfg.train, state, history) {
        Ok(o) => o,
        Err(f) => return Err(salvage(out, cfg, f.into())),
    };
    let (report, reconstructions) = evaluate_params(ds, cfg, &outcome.state.phi)?;
    let run = RunOutput {
        outcome,
        report,
        reconstructions,
    };
    write_run(out, cfg, &run)?;
    let st = &run.outcome.state;
    println!(
        "trained {} epochs{}; validation psnr={:.3} ssim={:.4}; wrote {}",
        st.epoch,
        if st.stopped_early { " (stopped early)" } else { "" },
        run.report.psnr.mean,
        run.report.ssim.mean,
        out.display()
    );
    Ok(EXIT_OK)
}

fn read_measurements(path: &Path, ds: &StoredDataset) -> Result<Vec<Measurement>> {
    let a = RawArray::read(path)?;
    let fm = &ds.fm_test;
    let len = fm.zero_measurement().data().len();
    let (rows, cols) = fm.range_shape();
    let count = match a.shape.as_slice() {
        [l] if *l == len => 1,
        [c, l] if *l == len => *c,
        s => {
            return Err(Error::corrupt(
                path,
                format!("shape {s:?} does not hold measurements of length {len}"),
            ));
        }
    };
    a.data
        .chunks_exact(len)
        .take(count)
        .map(|c| Ok(Measurement::new(fm.kind(), rows, cols, c.to_vec())?))
        .collect()
}

fn cmd_reconstruct(cfg: &RunConfig, ds: &StoredDataset, a: &Reconstruct, out: &Path) -> Result<i32> {
    let phi = load_checkpoint_for(&a.checkpoint, &cfg.train)?.phi;
    let ys = match &a.input {
        Some(p) => read_measurements(p, ds)?,
        None => ds.data.validation.iter().map(|(y, _)| y.clone()).collect(),
    };
    let flow = cfg.train.flow(&ds.fm_test);
    let mut images: Vec<Image> = Vec::with_capacity(ys.len());
    for (i, y) in ys.iter().enumerate() {
        let path = flow.path(y, &phi)?;
        if a.paths {
            export_path(&out.join(format!("path_{i:03}")), &path)?;
        }
        images.push(path.endpoint().clone());
    }
    write_images(out, "recon", &images)?;
    println!("reconstructed {} measurements into {}", images.len(), out.display());
    Ok(EXIT_OK)
}

fn cmd_eval(cfg: &RunConfig, ds: &StoredDataset, checkpoint: &Path, out: &Path) -> Result<i32> {
    let phi = load_checkpoint_for(checkpoint, &cfg.train)?.phi;
    let pairs = &ds.data.validation;
    let fm = &ds.fm_test;
    let seed = cfg.train.seed;
    let (mut report, _) = evaluate_params(ds, cfg, &phi)?;
    let zf = evaluate(&zero_filled(pairs, fm)?, pairs, fm, &cfg.eval, seed)?;
    let tik = tune_tikhonov(pairs, fm, &cfg.eval)?;
    let tik_report = evaluate(&tik.images, pairs, fm, &cfg.eval, seed)?;
    report.compare("zero_filled", &zf)?;
    report.compare("tikhonov", &tik_report)?;
    write_report(out, &report)?;
    write_report(&out.join("baselines").join("zero_filled"), &zf)?;
    write_report(&out.join("baselines").join("tikhonov"), &tik_report)?;
    println!("{:<12} {:>8} {:>8} {:>10}", "method", "psnr", "ssim", "sliced_w1");
    for (name, r) in [("kidot", &report), ("zero_filled", &zf), ("tikhonov", &tik_report)] {
        println!(
            "{name:<12} {:>8.3} {:>8.4} {:>10.4}",
            r.psnr.mean, r.ssim.mean, r.sliced_w1
        );
    }
    println!("tikhonov weight {}", tik.lambda);
    for c in &report.comparisons {
        println!(
            "paired t-test vs {}: t={:.3} p={:.3e}",
            c.against, c.test.t, c.test.p_value
        );
    }
    Ok(EXIT_OK)
}
