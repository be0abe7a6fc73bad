//! Self-checks exposed on the command line: operator adjoints, generator
//! gradients and the straight-line optimality of the transport path.

use kidot_core::diff::{check_grad, GradReport};
use kidot_core::nets::{init_critic, init_regularizer, CriticArch, RegularizerArch};
use kidot_core::operators::adjoint_test;
use kidot_core::ot::{straightline_check, PathSolution};
use kidot_core::rng;
use kidot_core::synth::{make_mask, make_phantom, simulate_measurement, NoiseConfig, PhantomKind};
use kidot_core::training::{Batch, CriticSign, GeneratorLoss, TrainConfig};
use kidot_core::{ForwardModel, Mask};
use rand::Rng as _;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointResult {
    pub model: String,
    pub side: usize,
    pub rel_error: f64,
}

/// Masked-Fourier and Radon models of side `n`.
pub fn check_models(n: usize, seed: u64) -> Result<Vec<(String, ForwardModel)>> {
    let mask = make_mask(n, 4.0, 0.125, seed)?;
    let angles = n;
    let detectors = (n as f64 * std::f64::consts::SQRT_2).ceil() as usize;
    Ok(vec![
        ("fourier-masked".into(), ForwardModel::fourier(mask)),
        ("fourier-full".into(), ForwardModel::fourier(Mask::full(n))),
        (
            "radon".into(),
            kidot_core::operators::radon_build(n, angles, detectors)?,
        ),
    ])
}

pub fn adjoint_checks(sizes: &[usize], trials: usize, seed: u64) -> Result<Vec<AdjointResult>> {
    let mut out = Vec::new();
    for &n in sizes {
        for (name, fm) in check_models(n, seed)? {
            out.push(AdjointResult {
                model: name,
                side: n,
                rel_error: adjoint_test(&fm, trials, seed)?,
            });
        }
    }
    Ok(out)
}

/// Small networks used by the gradient check.
pub fn grad_check_config(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
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

/// Gradient check of the full generator objective (path cost, critic term
/// and weighted supervised term) on a random `side × side` instance.
pub fn generator_grad_check(side: usize, steps: usize, batch: usize, seed: u64, tol: f64) -> Result<GradReport> {
    let cfg = grad_check_config(steps);
    let fm = ForwardModel::fourier(make_mask(side, 2.0, 0.25, seed)?);
    let nc = NoiseConfig::gaussian(0.01);
    let img = |tag: &str, i: usize| make_phantom(PhantomKind::Ellipses, side, rng::stream_key(seed, tag, i as u64));
    let mut unpaired = Vec::new();
    let mut clean = Vec::new();
    let mut paired = Vec::new();
    for i in 0..batch {
        unpaired.push(simulate_measurement(
            &img("gc-unpaired", i)?,
            &fm,
            &nc,
            rng::stream_key(seed, "gc-noise-u", i as u64),
        )?);
        clean.push(img("gc-clean", i)?);
        let x = img("gc-paired", i)?;
        paired.push((
            simulate_measurement(&x, &fm, &nc, rng::stream_key(seed, "gc-noise-p", i as u64))?,
            x,
        ));
    }
    let b = Batch {
        unpaired,
        clean,
        paired,
    };
    let mut r = rng::stream(seed, "gc-params", 0);
    let mut phi = init_regularizer(&cfg.regularizer, seed)?;
    phi.values_mut().iter_mut().for_each(|v| *v = r.random_range(-0.3..0.3));
    let mut theta = init_critic(&cfg.critic, seed)?;
    theta
        .values_mut()
        .iter_mut()
        .for_each(|v| *v = r.random_range(-0.3..0.3));
    let mut loss = GeneratorLoss::training(&cfg, &fm, &fm, &theta, &b);
    loss.sign = CriticSign::Saddle;
    Ok(check_grad(&loss, &phi, tol)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StraightLineCase {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub solution: PathSolution,
}

/// Random endpoints with `‖x − y‖ = 1`, solved with speed bound `m`.
pub fn straightline_cases(
    dim: usize,
    m: f64,
    k: usize,
    iters: usize,
    cases: usize,
    seed: u64,
) -> Result<Vec<StraightLineCase>> {
    (0..cases)
        .map(|c| {
            let mut r = rng::stream(seed, "straightline-endpoints", c as u64);
            let y: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
            let mut d: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
            let nn = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            d.iter_mut().for_each(|v| *v /= nn);
            let x: Vec<f64> = y.iter().zip(&d).map(|(a, b)| a + b).collect();
            let solution = straightline_check(
                &y,
                &x,
                m,
                k,
                iters,
                rng::stream_key(seed, "straightline-solve", c as u64),
            )?;
            Ok(StraightLineCase { y, x, solution })
        })
        .collect()
}
