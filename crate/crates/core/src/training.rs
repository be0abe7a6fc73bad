//! Losses, optimizer and the alternating critic/transport training loop.
//!
//! The critic ascends `C = mean φ(x_Q) − mean φ(T(y_P))`. The transport
//! network descends the matching saddle objective
//! `path cost + λ·C + γ·L_sup`, so both players share one objective.
//! [`loss_kidot`] reports the unpaired loss with the opposite critic sign
//! (`+λ φ(endpoint) − λ E_Q φ`), which is the same quantity as seen from
//! a critic whose potential is negated.

use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diff::{Loss, Tape, Var};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics;
use crate::nets::{clip_weights, estimate_lipschitz, init_critic, init_regularizer, CriticArch, RegularizerArch};
use crate::operators::{ForwardModel, Measurement};
use crate::ot::{dual_w1_estimate, PointCloud};
use crate::param::ParamVector;
use crate::rng;
use crate::synth::Dataset;
use crate::transport::Flow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the critic term.
    pub lambda: f64,
    /// Weight of the supervised term.
    pub gamma: f64,
    /// Euler steps of the transport path.
    pub steps: usize,
    pub lr_transport: f64,
    pub lr_critic: f64,
    pub n_critic: usize,
    pub clip_c: f64,
    pub batch: usize,
    pub epochs: usize,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub seed: u64,
    pub rms_rho: f64,
    pub rms_eps: f64,
    /// Keep the data-consistency term `A*(A I − y)` in the flow.
    pub use_forward_operator: bool,
    /// Stop after this many epochs without a validation PSNR improvement;
    /// 0 disables early stopping.
    pub patience: usize,
    pub regularizer: RegularizerArch,
    pub critic: CriticArch,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            gamma: 1e4,
            steps: 12,
            lr_transport: 1e-4,
            lr_critic: 2e-4,
            n_critic: 1,
            clip_c: 0.3,
            batch: 1,
            epochs: 30,
            lr_decay_every: 30,
            lr_decay_factor: 10.0,
            seed: 0,
            rms_rho: 0.9,
            rms_eps: 1e-8,
            use_forward_operator: true,
            patience: 10,
            regularizer: RegularizerArch::default(),
            critic: CriticArch::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64, name: &str| -> Result<()> {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(alloc::format!("{name} must be finite and nonnegative")));
            }
            Ok(())
        };
        let pos = |v: f64, name: &str| -> Result<()> {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(alloc::format!("{name} must be finite and positive")));
            }
            Ok(())
        };
        nonneg(self.lambda, "lambda")?;
        nonneg(self.gamma, "gamma")?;
        pos(self.lr_transport, "lr_transport")?;
        pos(self.lr_critic, "lr_critic")?;
        pos(self.clip_c, "clip_c")?;
        pos(self.lr_decay_factor, "lr_decay_factor")?;
        pos(self.rms_eps, "rms_eps")?;
        if !(self.rms_rho >= 0.0 && self.rms_rho < 1.0) {
            return Err(Error::invalid("rms_rho must lie in [0, 1)"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        if self.n_critic == 0 {
            return Err(Error::invalid("n_critic must be at least 1"));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch must be at least 1"));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::invalid("lr_decay_every must be at least 1"));
        }
        self.regularizer.validate()?;
        self.critic.validate()
    }

    /// The flow used for measurements acquired with `model`.
    pub fn flow<'a>(&'a self, model: &'a ForwardModel) -> Flow<'a> {
        Flow {
            model,
            arch: &self.regularizer,
            steps: self.steps,
            use_forward_operator: self.use_forward_operator,
        }
    }
}

/// Learning rates `(transport, critic)` for a zero-based epoch.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> (f64, f64) {
    let k = (epoch / cfg.lr_decay_every) as f64;
    let f = libm::pow(cfg.lr_decay_factor, k);
    (cfg.lr_transport / f, cfg.lr_critic / f)
}

/// RMSProp running second moment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub rho: f64,
    pub eps: f64,
    pub v: Vec<f64>,
}

impl RmsProp {
    pub fn new(len: usize, rho: f64, eps: f64) -> Self {
        Self {
            rho,
            eps,
            v: alloc::vec![0.0; len],
        }
    }

    /// `v ← ρv + (1−ρ)g²; p ← p − lr·g/(√v + ε)` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.v.len() || grads.len() != self.v.len() {
            return Err(Error::ShapeMismatch {
                what: "optimizer state",
                expected: self.v.len(),
                found: if params.len() != self.v.len() {
                    params.len()
                } else {
                    grads.len()
                },
            });
        }
        for ((p, v), &g) in params.iter_mut().zip(self.v.iter_mut()).zip(grads) {
            *v = self.rho * *v + (1.0 - self.rho) * g * g;
            *p -= lr * g / (libm::sqrt(*v) + self.eps);
        }
        Ok(())
    }
}

pub fn rmsprop_update(state: &RmsProp, params: &ParamVector, grads: &[f64], lr: f64) -> Result<(RmsProp, ParamVector)> {
    let mut s = state.clone();
    let mut values = params.values().to_vec();
    s.step(&mut values, grads, lr)?;
    Ok((s, params.with_values(values)?))
}

/// Samples drawn for one update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    /// Prospective measurements.
    pub unpaired: Vec<Measurement>,
    /// Clean reference images.
    pub clean: Vec<Image>,
    pub paired: Vec<(Measurement, Image)>,
}

/// Sign convention for the critic term of the transport objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticSign {
    /// `+λ mean φ(endpoint) − λ mean φ(x_Q)`
    Literal,
    /// `+λ mean φ(x_Q) − λ mean φ(endpoint)`, the training objective.
    Saddle,
}

/// The transport objective as a function of the regularizer parameters.
pub struct GeneratorLoss<'a> {
    pub cfg: &'a TrainConfig,
    /// Model of the unpaired (prospective) measurements.
    pub fm_unpaired: &'a ForwardModel,
    /// Model of the paired (retrospective) measurements.
    pub fm_paired: &'a ForwardModel,
    pub theta: &'a ParamVector,
    pub batch: &'a Batch,
    pub sign: CriticSign,
    pub lambda: f64,
    pub gamma: f64,
}

/// Scalar nodes of a recorded transport objective.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorTerms {
    pub path_cost: Option<Var>,
    pub critic_gap: Option<Var>,
    pub supervised: Option<Var>,
    pub total: Var,
}

fn mean_of(tape: &mut Tape<'_>, terms: &[Var]) -> Result<Var> {
    let s = tape.sum_scalars(terms)?;
    tape.scale(s, 1.0 / terms.len() as f64)
}

impl<'a> GeneratorLoss<'a> {
    /// Training objective with the configured weights.
    pub fn training(
        cfg: &'a TrainConfig,
        fm_unpaired: &'a ForwardModel,
        fm_paired: &'a ForwardModel,
        theta: &'a ParamVector,
        batch: &'a Batch,
    ) -> Self {
        Self {
            cfg,
            fm_unpaired,
            fm_paired,
            theta,
            batch,
            sign: CriticSign::Saddle,
            lambda: cfg.lambda,
            gamma: cfg.gamma,
        }
    }

    pub fn record(&self, tape: &mut Tape<'a>, phi: Var) -> Result<GeneratorTerms> {
        let cfg = self.cfg;
        let side = self.fm_unpaired.side();
        let net = cfg.regularizer.bind(tape, phi, side)?;
        let mut terms = Vec::new();

        let mut path_cost = None;
        let mut critic_gap = None;
        if !self.batch.unpaired.is_empty() {
            let flow = cfg.flow(self.fm_unpaired);
            let mut costs = Vec::with_capacity(self.batch.unpaired.len());
            let mut endpoints = Vec::with_capacity(self.batch.unpaired.len());
            for y in &self.batch.unpaired {
                self.fm_unpaired.check_measurement(y)?;
                let yv = tape.constant(y.data().to_vec())?;
                let nodes = flow.record(tape, &net, yv)?;
                let c = mean_of(tape, &nodes.costs)?;
                costs.push(c);
                endpoints.push(nodes.endpoint());
            }
            let pc = mean_of(tape, &costs)?;
            path_cost = Some(pc);
            terms.push(pc);
            if self.lambda != 0.0 {
                if self.batch.clean.is_empty() {
                    return Err(Error::invalid("critic term needs clean samples"));
                }
                let tv = tape.constant(self.theta.values().to_vec())?;
                let critic = cfg.critic.bind(tape, tv, side)?;
                let mut fp = Vec::with_capacity(endpoints.len());
                for &e in &endpoints {
                    fp.push(critic.apply(tape, e)?);
                }
                let mut fq = Vec::with_capacity(self.batch.clean.len());
                for x in &self.batch.clean {
                    let xv = tape.constant(x.data().to_vec())?;
                    fq.push(critic.apply(tape, xv)?);
                }
                let mp = mean_of(tape, &fp)?;
                let mq = mean_of(tape, &fq)?;
                let gap = match self.sign {
                    CriticSign::Literal => tape.sub(mp, mq)?,
                    CriticSign::Saddle => tape.sub(mq, mp)?,
                };
                critic_gap = Some(gap);
                terms.push(tape.scale(gap, self.lambda)?);
            }
        }

        let mut supervised = None;
        if self.gamma != 0.0 && !self.batch.paired.is_empty() {
            let flow = cfg.flow(self.fm_paired);
            let mut l1 = Vec::with_capacity(self.batch.paired.len());
            for (y, x) in &self.batch.paired {
                self.fm_paired.check_measurement(y)?;
                let yv = tape.constant(y.data().to_vec())?;
                let nodes = flow.record(tape, &net, yv)?;
                let xv = tape.constant(x.data().to_vec())?;
                let d = tape.sub(nodes.endpoint(), xv)?;
                let a = tape.abs_sum(d)?;
                l1.push(tape.scale(a, 1.0 / x.data().len() as f64)?);
            }
            let s = mean_of(tape, &l1)?;
            supervised = Some(s);
            terms.push(tape.scale(s, self.gamma)?);
        }

        if terms.is_empty() {
            return Err(Error::invalid("batch has neither unpaired nor paired samples"));
        }
        let total = tape.sum_scalars(&terms)?;
        Ok(GeneratorTerms {
            path_cost,
            critic_gap,
            supervised,
            total,
        })
    }
}

impl<'a> Loss<'a> for GeneratorLoss<'a> {
    fn build(&self, tape: &mut Tape<'a>, params: Var) -> Result<Var> {
        Ok(self.record(tape, params)?.total)
    }
}

fn eval_loss(loss: &GeneratorLoss<'_>, phi: &ParamVector) -> Result<f64> {
    phi.expect_layout(&loss.cfg.regularizer.layout()?, "regularizer")?;
    crate::diff::value(loss, phi.values())
}

/// `mean_P [path cost + λ φ(endpoint)] − λ mean_Q φ(x)`.
pub fn loss_kidot(
    phi: &ParamVector,
    theta: &ParamVector,
    batch_p: &[Measurement],
    batch_q: &[Image],
    fm: &ForwardModel,
    cfg: &TrainConfig,
) -> Result<f64> {
    if batch_p.is_empty() || batch_q.is_empty() {
        return Err(Error::invalid("loss needs nonempty batches"));
    }
    let batch = Batch {
        unpaired: batch_p.to_vec(),
        clean: batch_q.to_vec(),
        paired: Vec::new(),
    };
    let loss = GeneratorLoss {
        cfg,
        fm_unpaired: fm,
        fm_paired: fm,
        theta,
        batch: &batch,
        sign: CriticSign::Literal,
        lambda: cfg.lambda,
        gamma: 0.0,
    };
    eval_loss(&loss, phi)
}

/// Mean ℓ1 pixel error between endpoints and paired references.
pub fn loss_sup(
    phi: &ParamVector,
    paired: &[(Measurement, Image)],
    fm: &ForwardModel,
    cfg: &TrainConfig,
) -> Result<f64> {
    if paired.is_empty() {
        return Err(Error::invalid("supervised loss needs a nonempty batch"));
    }
    let flow = cfg.flow(fm);
    let mut total = 0.0;
    for (y, x) in paired {
        let e = flow.reconstruct(y, phi)?;
        total += metrics::l1_mean(&e, x)?;
    }
    Ok(total / paired.len() as f64)
}

/// Endpoints of the transport path for each measurement.
pub fn push_forward(phi: &ParamVector, ys: &[Measurement], fm: &ForwardModel, cfg: &TrainConfig) -> Result<Vec<Image>> {
    let flow = cfg.flow(fm);
    ys.iter().map(|y| flow.reconstruct(y, phi)).collect()
}

/// `mean_Q φ(x) − mean_P φ(T(y))`, the quantity the critic ascends.
pub fn critic_objective(
    theta: &ParamVector,
    phi: &ParamVector,
    batch_p: &[Measurement],
    batch_q: &[Image],
    fm: &ForwardModel,
    cfg: &TrainConfig,
) -> Result<f64> {
    let pushed = PointCloud::from_images(&push_forward(phi, batch_p, fm, cfg)?)?;
    let q = PointCloud::from_images(batch_q)?;
    dual_w1_estimate(&cfg.critic, theta, &pushed, &q)
}

/// The critic gap as a tape program in the critic parameters.
pub struct CriticLoss<'a> {
    pub arch: &'a CriticArch,
    pub pushed: &'a [Image],
    pub clean: &'a [Image],
}

impl<'a> Loss<'a> for CriticLoss<'a> {
    fn build(&self, tape: &mut Tape<'a>, params: Var) -> Result<Var> {
        let side = self.clean.first().map_or(0, Image::side);
        let critic = self.arch.bind(tape, params, side)?;
        let eval = |tape: &mut Tape<'a>, xs: &[Image]| -> Result<Var> {
            let mut vals = Vec::with_capacity(xs.len());
            for x in xs {
                let xv = tape.constant(x.data().to_vec())?;
                vals.push(critic.apply(tape, xv)?);
            }
            mean_of(tape, &vals)
        };
        let mq = eval(tape, self.clean)?;
        let mp = eval(tape, self.pushed)?;
        tape.sub(mq, mp)
    }
}

/// One ascent step on the critic gap followed by weight clipping.
/// Returns the gap before the step.
pub fn critic_step(
    theta: &mut ParamVector,
    opt: &mut RmsProp,
    arch: &CriticArch,
    pushed: &[Image],
    clean: &[Image],
    lr: f64,
    clip_c: f64,
) -> Result<f64> {
    if pushed.is_empty() || clean.is_empty() {
        return Err(Error::invalid("critic step needs nonempty batches"));
    }
    let loss = CriticLoss { arch, pushed, clean };
    let (gap, g) = crate::diff::value_and_grad(&loss, theta.values())?;
    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
    opt.step(theta.values_mut(), &neg, lr)?;
    if theta.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            op: "critic update",
            node: 0,
        });
    }
    *theta = clip_weights(theta, clip_c)?;
    Ok(gap)
}

/// Data and forward models seen by the trainer.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    /// Model of the paired (retrospective) measurements.
    pub fm_train: &'a ForwardModel,
    /// Model of the unpaired and validation (prospective) measurements.
    pub fm_test: &'a ForwardModel,
    pub data: &'a Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub generator_loss: f64,
    pub critic_loss: f64,
    pub path_cost: f64,
    pub supervised: f64,
    pub val_psnr: Option<f64>,
    pub val_ssim: Option<f64>,
    pub lipschitz: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub phi: ParamVector,
    pub theta: ParamVector,
    pub opt_phi: RmsProp,
    pub opt_theta: RmsProp,
    /// Completed epochs.
    pub epoch: usize,
    pub best_val_psnr: Option<f64>,
    /// Epochs since the last validation improvement.
    pub stale_epochs: usize,
    pub stopped_early: bool,
}

impl TrainState {
    pub fn init(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let phi = init_regularizer(&cfg.regularizer, cfg.seed)?;
        let theta = init_critic(&cfg.critic, cfg.seed)?;
        Ok(Self {
            opt_phi: RmsProp::new(phi.len(), cfg.rms_rho, cfg.rms_eps),
            opt_theta: RmsProp::new(theta.len(), cfg.rms_rho, cfg.rms_eps),
            phi,
            theta,
            epoch: 0,
            best_val_psnr: None,
            stale_epochs: 0,
            stopped_early: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub history: TrainHistory,
}

/// A failed run: the error plus the state at the start of the failing epoch.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{error}")]
pub struct TrainFailure {
    pub error: Error,
    pub last_good: Option<TrainState>,
    pub history: TrainHistory,
}

impl TrainFailure {
    fn new(error: Error) -> Box<Self> {
        Box::new(Self {
            error,
            last_good: None,
            history: TrainHistory::default(),
        })
    }
}

pub type TrainResult = core::result::Result<TrainOutcome, Box<TrainFailure>>;

/// Mean validation PSNR (peak 1) and SSIM (when the images fit the window).
pub fn validation_metrics(
    phi: &ParamVector,
    pairs: &[(Measurement, Image)],
    fm: &ForwardModel,
    cfg: &TrainConfig,
) -> Result<(f64, Option<f64>, Vec<Image>)> {
    if pairs.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    let flow = cfg.flow(fm);
    let mut psnr = 0.0;
    let mut ssim = Some(0.0);
    let mut recon = Vec::with_capacity(pairs.len());
    for (y, x) in pairs {
        let e = flow.reconstruct(y, phi)?;
        psnr += metrics::psnr(&e, x, 1.0)?;
        ssim = match (ssim, metrics::ssim(&e, x, 1.0)) {
            (Some(s), Ok(v)) => Some(s + v),
            _ => None,
        };
        recon.push(e);
    }
    let n = pairs.len() as f64;
    Ok((psnr / n, ssim.map(|s| s / n), recon))
}

fn draw<T: Clone>(r: &mut rng::Rng, pool: &[T], k: usize) -> Vec<T> {
    if pool.is_empty() {
        return Vec::new();
    }
    (0..k).map(|_| pool[r.random_range(0..pool.len())].clone()).collect()
}

fn batch_key(epoch: usize, iteration: usize, sub: usize) -> u64 {
    ((epoch as u64) << 32) | ((iteration as u64) << 8) | sub as u64
}

/// Outer iterations per epoch.
pub fn iterations_per_epoch(data: &Dataset, cfg: &TrainConfig) -> usize {
    let pool = if data.unpaired.is_empty() {
        data.paired.len()
    } else {
        data.unpaired.len()
    };
    pool.div_ceil(cfg.batch)
}

/// Trains from freshly initialized parameters.
pub fn train(problem: Problem<'_>, cfg: &TrainConfig) -> TrainResult {
    let state = TrainState::init(cfg).map_err(TrainFailure::new)?;
    train_from(problem, cfg, state, TrainHistory::default())
}

/// Continues training from `state` until `cfg.epochs` epochs are complete.
pub fn train_from(problem: Problem<'_>, cfg: &TrainConfig, state: TrainState, history: TrainHistory) -> TrainResult {
    let fail = |error: Error, last_good: Option<TrainState>, history: &TrainHistory| {
        Box::new(TrainFailure {
            error,
            last_good,
            history: history.clone(),
        })
    };
    if let Err(e) = check_problem(problem, cfg, &state) {
        return Err(fail(e, Some(state), &history));
    }
    let mut state = state;
    let mut history = history;
    while state.epoch < cfg.epochs && !state.stopped_early {
        match run_epoch(problem, cfg, &state) {
            Ok((next, record)) => {
                state = next;
                history.records.push(record);
            }
            Err(e) => return Err(fail(e, Some(state), &history)),
        }
    }
    Ok(TrainOutcome { state, history })
}

fn check_problem(problem: Problem<'_>, cfg: &TrainConfig, state: &TrainState) -> Result<()> {
    cfg.validate()?;
    let data = problem.data;
    if data.is_empty() {
        return Err(Error::invalid("dataset has no training samples"));
    }
    if problem.fm_train.side() != problem.fm_test.side() {
        return Err(Error::ShapeMismatch {
            what: "forward model side",
            expected: problem.fm_train.side(),
            found: problem.fm_test.side(),
        });
    }
    state.phi.expect_layout(&cfg.regularizer.layout()?, "regularizer")?;
    state.theta.expect_layout(&cfg.critic.layout()?, "critic")?;
    Ok(())
}

fn run_epoch(problem: Problem<'_>, cfg: &TrainConfig, start: &TrainState) -> Result<(TrainState, EpochRecord)> {
    let data = problem.data;
    let mut st = start.clone();
    let epoch = st.epoch;
    let (lr_t, lr_c) = lr_at_epoch(cfg, epoch);
    let iters = iterations_per_epoch(data, cfg);
    let critic_active = cfg.lambda != 0.0 && !data.unpaired.is_empty() && !data.clean.is_empty();
    let use_pairs = cfg.gamma != 0.0 && !data.paired.is_empty();
    let (mut gen_sum, mut critic_sum, mut cost_sum, mut sup_sum) = (0.0, 0.0, 0.0, 0.0);

    for it in 0..iters {
        if critic_active {
            for k in 0..cfg.n_critic {
                let mut r = rng::stream(cfg.seed, "critic-batch", batch_key(epoch, it, k));
                let ys = draw(&mut r, &data.unpaired, cfg.batch);
                let xs = draw(&mut r, &data.clean, cfg.batch);
                let pushed = push_forward(&st.phi, &ys, problem.fm_test, cfg)?;
                let gap = critic_step(
                    &mut st.theta,
                    &mut st.opt_theta,
                    &cfg.critic,
                    &pushed,
                    &xs,
                    lr_c,
                    cfg.clip_c,
                )?;
                if k + 1 == cfg.n_critic {
                    critic_sum += gap;
                }
            }
        }

        let mut r = rng::stream(cfg.seed, "generator-batch", batch_key(epoch, it, 0));
        let batch = Batch {
            unpaired: draw(&mut r, &data.unpaired, cfg.batch),
            clean: if critic_active {
                draw(&mut r, &data.clean, cfg.batch)
            } else {
                Vec::new()
            },
            paired: if use_pairs {
                draw(&mut r, &data.paired, cfg.batch)
            } else {
                Vec::new()
            },
        };
        let mut loss = GeneratorLoss::training(cfg, problem.fm_test, problem.fm_train, &st.theta, &batch);
        if !critic_active {
            loss.lambda = 0.0;
        }
        let mut tape = Tape::new();
        let p = tape.input(st.phi.values().to_vec())?;
        let terms = loss.record(&mut tape, p)?;
        let g = tape.gradient(terms.total, &[p])?;
        gen_sum += tape.scalar(terms.total);
        cost_sum += terms.path_cost.map_or(0.0, |v| tape.scalar(v));
        sup_sum += terms.supervised.map_or(0.0, |v| tape.scalar(v));
        st.opt_phi.step(st.phi.values_mut(), &g[0], lr_t)?;
        if let Some(i) = st.phi.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: "transport update",
                node: i,
            });
        }
    }

    let n = iters as f64;
    let mut record = EpochRecord {
        epoch,
        generator_loss: gen_sum / n,
        critic_loss: critic_sum / n,
        path_cost: cost_sum / n,
        supervised: sup_sum / n,
        val_psnr: None,
        val_ssim: None,
        lipschitz: None,
    };
    if !data.validation.is_empty() {
        let (psnr, ssim, recon) = validation_metrics(&st.phi, &data.validation, problem.fm_test, cfg)?;
        record.val_psnr = Some(psnr);
        record.val_ssim = ssim;
        let pairs: Vec<(Image, Image)> = recon
            .into_iter()
            .zip(&data.validation)
            .map(|(e, (_, x))| (e, x.clone()))
            .collect();
        record.lipschitz = estimate_lipschitz(&cfg.critic, &st.theta, &pairs).ok();
        if st.best_val_psnr.is_none_or(|b| psnr > b) {
            st.best_val_psnr = Some(psnr);
            st.stale_epochs = 0;
        } else {
            st.stale_epochs += 1;
            if cfg.patience > 0 && st.stale_epochs >= cfg.patience {
                st.stopped_early = true;
            }
        }
    }
    for v in [
        record.generator_loss,
        record.critic_loss,
        record.path_cost,
        record.supervised,
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                op: "epoch summary",
                node: epoch,
            });
        }
    }
    st.epoch += 1;
    Ok((st, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{check_grad, grad};
    use crate::operators::Mask;
    use crate::synth::{make_mask, make_phantom, simulate_measurement, DatasetCounts, NoiseConfig, PhantomKind};
    use alloc::vec;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            steps: 3,
            regularizer: RegularizerArch {
                channels: vec![1, 4, 1],
                kernel: 3,
            },
            critic: CriticArch {
                channels: vec![1, 4],
                kernel: 3,
            },
            ..TrainConfig::default()
        }
    }

    fn random_params(cfg: &TrainConfig, seed: u64) -> (ParamVector, ParamVector) {
        let mut r = rng::stream(seed, "test-params", 0);
        let mut phi = init_regularizer(&cfg.regularizer, seed).unwrap();
        phi.values_mut().iter_mut().for_each(|v| *v = r.random_range(-0.3..0.3));
        let mut theta = init_critic(&cfg.critic, seed).unwrap();
        theta
            .values_mut()
            .iter_mut()
            .for_each(|v| *v = r.random_range(-0.3..0.3));
        (phi, theta)
    }

    fn toy_batch(fm: &ForwardModel, n: usize, seed: u64) -> Batch {
        let img = |i: u64| make_phantom(PhantomKind::Blocks, n, seed * 100 + i).unwrap();
        let nc = NoiseConfig::gaussian(0.01);
        Batch {
            unpaired: (0..2)
                .map(|i| simulate_measurement(&img(i), fm, &nc, i).unwrap())
                .collect(),
            clean: (10..12).map(img).collect(),
            paired: (20..22)
                .map(|i| (simulate_measurement(&img(i), fm, &nc, i).unwrap(), img(i)))
                .collect(),
        }
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at_epoch(&cfg, 0), (1e-4, 2e-4));
        assert_eq!(lr_at_epoch(&cfg, 29), (1e-4, 2e-4));
        let (a, b) = lr_at_epoch(&cfg, 30);
        assert!((a - 1e-5).abs() < 1e-20 && (b - 2e-5).abs() < 1e-20);
    }

    #[test]
    fn rmsprop_limits() {
        let mut opt = RmsProp::new(2, 0.9, 1e-8);
        let mut p = vec![1.0, -2.0];
        opt.step(&mut p, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        let mut last = p.clone();
        let mut delta = 0.0;
        for _ in 0..500 {
            opt.step(&mut p, &[3.0, 3.0], 0.01).unwrap();
            delta = last[0] - p[0];
            last = p.clone();
        }
        assert!((delta - 0.01).abs() < 1e-9, "{delta}");
    }

    #[test]
    fn zero_everything_gives_zero_loss() {
        let cfg = small_cfg();
        let fm = ForwardModel::identity(8);
        let phi = ParamVector::zeros(cfg.regularizer.layout().unwrap());
        let theta = ParamVector::zeros(cfg.critic.layout().unwrap());
        let xs: Vec<Image> = (0..3)
            .map(|s| make_phantom(PhantomKind::Blocks, 8, s).unwrap())
            .collect();
        let ys: Vec<Measurement> = xs.iter().map(|x| fm.apply(x).unwrap()).collect();
        assert_eq!(loss_kidot(&phi, &theta, &ys, &xs, &fm, &cfg).unwrap(), 0.0);
        assert_eq!(critic_objective(&theta, &phi, &ys, &xs, &fm, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn lambda_zero_is_path_cost() {
        let mut cfg = small_cfg();
        cfg.lambda = 0.0;
        let fm = ForwardModel::fourier(make_mask(8, 2.0, 0.25, 1).unwrap());
        let (phi, theta) = random_params(&cfg, 2);
        let b = toy_batch(&fm, 8, 1);
        let l = loss_kidot(&phi, &theta, &b.unpaired, &b.clean, &fm, &cfg).unwrap();
        let flow = cfg.flow(&fm);
        let mean: f64 = b
            .unpaired
            .iter()
            .map(|y| crate::transport::path_cost(&flow.path(y, &phi).unwrap()))
            .sum::<f64>()
            / 2.0;
        assert!((l - mean).abs() < 1e-12);
    }

    #[test]
    fn kidot_loss_matches_recomputation() {
        let cfg = small_cfg();
        let fm = ForwardModel::fourier(make_mask(8, 2.0, 0.25, 1).unwrap());
        let (phi, theta) = random_params(&cfg, 3);
        let b = toy_batch(&fm, 8, 2);
        let flow = cfg.flow(&fm);
        let mut expect = 0.0;
        for y in &b.unpaired {
            let path = flow.path(y, &phi).unwrap();
            expect += crate::transport::path_cost(&path)
                + cfg.lambda * crate::nets::critic_apply(&cfg.critic, &theta, path.endpoint()).unwrap();
        }
        expect /= 2.0;
        let q: f64 = b
            .clean
            .iter()
            .map(|x| crate::nets::critic_apply(&cfg.critic, &theta, x).unwrap())
            .sum::<f64>()
            / 2.0;
        expect -= cfg.lambda * q;
        let l = loss_kidot(&phi, &theta, &b.unpaired, &b.clean, &fm, &cfg).unwrap();
        assert!((l - expect).abs() < 1e-12, "{l} vs {expect}");
    }

    #[test]
    fn supervised_loss_properties() {
        let cfg = small_cfg();
        let fm = ForwardModel::fourier(Mask::full(8));
        let phi = ParamVector::zeros(cfg.regularizer.layout().unwrap());
        let x = make_phantom(PhantomKind::Blocks, 8, 4).unwrap();
        let y = fm.apply(&x).unwrap();
        assert!(loss_sup(&phi, &[(y.clone(), x.clone())], &fm, &cfg).unwrap() < 1e-12);
        let shifted = Image::from_vec(8, x.data().iter().map(|v| v - 0.25).collect()).unwrap();
        assert!((loss_sup(&phi, &[(y, shifted)], &fm, &cfg).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn generator_gradients_check_out() {
        let cfg = small_cfg();
        let fm = ForwardModel::fourier(make_mask(8, 2.0, 0.25, 1).unwrap());
        let b = toy_batch(&fm, 8, 3);
        let (phi, theta) = random_params(&cfg, 5);
        for sign in [CriticSign::Literal, CriticSign::Saddle] {
            let mut loss = GeneratorLoss::training(&cfg, &fm, &fm, &theta, &b);
            loss.sign = sign;
            let report = check_grad(&loss, &phi, 1e-4).unwrap();
            assert!(report.passed(), "{:?}", report.max_abs_rel_err);
        }
    }

    #[test]
    fn term_isolation_in_gradients() {
        let cfg = small_cfg();
        let fm = ForwardModel::fourier(make_mask(8, 2.0, 0.25, 1).unwrap());
        let b = toy_batch(&fm, 8, 4);
        let (phi, theta) = random_params(&cfg, 6);
        let with = |lambda: f64, gamma: f64, batch: &Batch| {
            let mut l = GeneratorLoss::training(&cfg, &fm, &fm, &theta, batch);
            l.lambda = lambda;
            l.gamma = gamma;
            grad(&l, &phi).unwrap()
        };
        let no_critic = Batch {
            clean: Vec::new(),
            ..b.clone()
        };
        assert_eq!(with(0.0, cfg.gamma, &b), with(0.0, cfg.gamma, &no_critic));
        let no_pairs = Batch {
            paired: Vec::new(),
            ..b.clone()
        };
        assert_eq!(with(cfg.lambda, 0.0, &b), with(cfg.lambda, 0.0, &no_pairs));
    }

    #[test]
    fn small_step_descends() {
        let cfg = small_cfg();
        let fm = ForwardModel::fourier(make_mask(8, 2.0, 0.25, 1).unwrap());
        let b = toy_batch(&fm, 8, 5);
        let (phi, theta) = random_params(&cfg, 7);
        let loss = GeneratorLoss::training(&cfg, &fm, &fm, &theta, &b);
        let (v0, g) = crate::diff::value_and_grad(&loss, phi.values()).unwrap();
        let opt = RmsProp::new(phi.len(), 0.9, 1e-8);
        let (_, next) = rmsprop_update(&opt, &phi, &g, 1e-6).unwrap();
        let v1 = crate::diff::value(&loss, next.values()).unwrap();
        assert!(v1 <= v0, "{v1} > {v0}");
    }

    fn tiny_problem() -> (ForwardModel, ForwardModel, Dataset) {
        let cfg = crate::synth::DataConfig {
            side: 8,
            phantom: PhantomKind::Ellipses,
            counts: DatasetCounts {
                unpaired: 6,
                clean: 6,
                paired: 4,
                validation: 2,
            },
            modality: crate::synth::Modality::Fourier {
                acceleration: 2.0,
                center_fraction: 0.25,
                flip_fraction: 0.125,
                flip_granularity: Default::default(),
            },
            ..Default::default()
        };
        cfg.build().unwrap()
    }

    #[test]
    fn zero_epochs_return_initial_state() {
        let (a, b, ds) = tiny_problem();
        let mut cfg = small_cfg();
        cfg.epochs = 0;
        let out = train(
            Problem {
                fm_train: &a,
                fm_test: &b,
                data: &ds,
            },
            &cfg,
        )
        .unwrap();
        assert_eq!(out.state, TrainState::init(&cfg).unwrap());
        assert!(out.history.records.is_empty());
    }

    #[test]
    fn training_is_deterministic_clipped_and_resumable() {
        let (a, b, ds) = tiny_problem();
        let mut cfg = small_cfg();
        cfg.epochs = 3;
        cfg.batch = 2;
        cfg.lr_transport = 1e-3;
        let problem = Problem {
            fm_train: &a,
            fm_test: &b,
            data: &ds,
        };
        let one = train(problem, &cfg).unwrap();
        let two = train(problem, &cfg).unwrap();
        assert_eq!(one, two);
        assert_eq!(one.history.records.len(), 3);
        assert!(one.state.theta.values().iter().all(|v| v.abs() <= cfg.clip_c));

        let mut short = cfg.clone();
        short.epochs = 1;
        let first = train(problem, &short).unwrap();
        let resumed = train_from(problem, &cfg, first.state, first.history).unwrap();
        assert_eq!(resumed, one);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let (a, b, ds) = tiny_problem();
        let cfg = TrainConfig {
            n_critic: 0,
            ..small_cfg()
        };
        let err = train(
            Problem {
                fm_train: &a,
                fm_test: &b,
                data: &ds,
            },
            &cfg,
        )
        .unwrap_err();
        assert!(matches!(err.error, Error::InvalidArgument(_)));
    }
}
