//! Forward-Euler transport path driven by the physics-guided flow
//!
//! ```text
//! I_{i+1} = I_i − (1/N) · ( A*(A I_i − y) + H_φ(I_i) )
//! ```
//!
//! starting from the zero-filled image `A* y`. The per-step cost is the
//! data-fidelity residual `‖y − A I_i‖₁` for states `0..N-1`; the critic
//! and supervision act on the endpoint `I_N`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Var};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nets::{BoundConvStack, RegularizerArch};
use crate::operators::{ForwardModel, Measurement};
use crate::param::ParamVector;

/// Abort once a state norm exceeds this multiple of the initial norm.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPath {
    pub states: Vec<Image>,
    pub step_costs: Vec<f64>,
}

impl TransportPath {
    pub fn n_steps(&self) -> usize {
        self.step_costs.len()
    }

    pub fn endpoint(&self) -> &Image {
        self.states.last().expect("path has at least one state")
    }
}

/// Mean of the per-step data-fidelity costs.
pub fn path_cost(path: &TransportPath) -> f64 {
    if path.step_costs.is_empty() {
        return 0.0;
    }
    path.step_costs.iter().sum::<f64>() / path.step_costs.len() as f64
}

/// Tape nodes of one recorded path.
pub struct PathNodes {
    pub states: Vec<Var>,
    pub costs: Vec<Var>,
}

impl PathNodes {
    pub fn endpoint(&self) -> Var {
        *self.states.last().expect("path has at least one state")
    }
}

/// One discretized flow: the model, the regularizer architecture, the
/// number of Euler steps and whether the data-consistency term is used.
#[derive(Debug, Clone, Copy)]
pub struct Flow<'a> {
    pub model: &'a ForwardModel,
    pub arch: &'a RegularizerArch,
    pub steps: usize,
    pub use_forward_operator: bool,
}

impl<'a> Flow<'a> {
    pub fn new(model: &'a ForwardModel, arch: &'a RegularizerArch, steps: usize) -> Self {
        Self {
            model,
            arch,
            steps,
            use_forward_operator: true,
        }
    }

    fn check(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("transport needs at least one step"));
        }
        Ok(())
    }

    /// Records the whole path for measurement node `y` on `tape`.
    pub fn record(&self, tape: &mut Tape<'a>, net: &BoundConvStack, y: Var) -> Result<PathNodes> {
        self.check()?;
        let dt = 1.0 / self.steps as f64;
        let s0 = tape.linear_adjoint(y, self.model)?;
        let limit = DIVERGENCE_FACTOR * norm(tape.value(s0)).max(1.0);
        let mut states = Vec::with_capacity(self.steps + 1);
        let mut costs = Vec::with_capacity(self.steps);
        states.push(s0);
        for i in 0..self.steps {
            let s = states[i];
            let step = |tape: &mut Tape<'a>| -> Result<(Var, Var)> {
                let ax = tape.linear(s, self.model)?;
                let resid = tape.sub(ax, y)?;
                let cost = tape.abs_sum(resid)?;
                let h = net.apply(tape, s, false)?;
                let velocity = if self.use_forward_operator {
                    let g = tape.linear_adjoint(resid, self.model)?;
                    tape.add(g, h)?
                } else {
                    h
                };
                Ok((cost, tape.axpy(s, -dt, velocity)?))
            };
            let (cost, next) = step(tape).map_err(|e| match e {
                Error::NonFinite { .. } => Error::Diverged {
                    step: i + 1,
                    norm: f64::NAN,
                },
                other => other,
            })?;
            let nn = norm(tape.value(next));
            if nn > limit {
                return Err(Error::Diverged { step: i + 1, norm: nn });
            }
            costs.push(cost);
            states.push(next);
        }
        Ok(PathNodes { states, costs })
    }

    pub fn path(&self, y: &Measurement, params: &ParamVector) -> Result<TransportPath> {
        self.model.check_measurement(y)?;
        params.expect_layout(&self.arch.layout()?, "regularizer")?;
        let mut tape = Tape::new();
        let p = tape.constant(params.values().to_vec())?;
        let net = self.arch.bind(&mut tape, p, self.model.side())?;
        let yv = tape.constant(y.data().to_vec())?;
        let nodes = self.record(&mut tape, &net, yv)?;
        let n = self.model.side();
        let states = nodes
            .states
            .iter()
            .map(|&s| Image::from_vec(n, tape.value(s).to_vec()))
            .collect::<Result<_>>()?;
        let step_costs = nodes.costs.iter().map(|&c| tape.scalar(c)).collect();
        Ok(TransportPath { states, step_costs })
    }

    pub fn reconstruct(&self, y: &Measurement, params: &ParamVector) -> Result<Image> {
        let mut path = self.path(y, params)?;
        Ok(path.states.pop().expect("nonempty path"))
    }

    /// A single Euler update from `state`.
    pub fn euler_step(&self, state: &Image, y: &Measurement, params: &ParamVector) -> Result<Image> {
        self.check()?;
        self.model.check_measurement(y)?;
        if state.side() != self.model.side() {
            return Err(Error::ShapeMismatch {
                what: "state side",
                expected: self.model.side(),
                found: state.side(),
            });
        }
        params.expect_layout(&self.arch.layout()?, "regularizer")?;
        let mut tape = Tape::new();
        let p = tape.constant(params.values().to_vec())?;
        let net = self.arch.bind(&mut tape, p, state.side())?;
        let s = tape.constant(state.data().to_vec())?;
        let yv = tape.constant(y.data().to_vec())?;
        let h = net.apply(&mut tape, s, false)?;
        let velocity = if self.use_forward_operator {
            let ax = tape.linear(s, self.model)?;
            let resid = tape.sub(ax, yv)?;
            let g = tape.linear_adjoint(resid, self.model)?;
            tape.add(g, h)?
        } else {
            h
        };
        let next = tape.axpy(s, -1.0 / self.steps as f64, velocity)?;
        Image::from_vec(state.side(), tape.value(next).to_vec())
    }
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

pub fn euler_step(
    state: &Image,
    y: &Measurement,
    fm: &ForwardModel,
    arch: &RegularizerArch,
    hphi: &ParamVector,
    steps: usize,
) -> Result<Image> {
    Flow::new(fm, arch, steps).euler_step(state, y, hphi)
}

pub fn transport_path(
    y: &Measurement,
    fm: &ForwardModel,
    arch: &RegularizerArch,
    hphi: &ParamVector,
    steps: usize,
) -> Result<TransportPath> {
    Flow::new(fm, arch, steps).path(y, hphi)
}

pub fn reconstruct(
    y: &Measurement,
    fm: &ForwardModel,
    arch: &RegularizerArch,
    hphi: &ParamVector,
    steps: usize,
) -> Result<Image> {
    Flow::new(fm, arch, steps).reconstruct(y, hphi)
}

/// Analytic regularizers for the classical baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularization {
    /// `λ‖x‖²`
    Tikhonov { lambda: f64 },
    /// `λ Σ sqrt(|∇x|² + ε²)` with forward differences.
    SmoothedTv { lambda: f64, eps: f64 },
}

impl Regularization {
    fn lambda(&self) -> f64 {
        match *self {
            Regularization::Tikhonov { lambda } | Regularization::SmoothedTv { lambda, .. } => lambda,
        }
    }

    fn value(&self, x: &Image) -> f64 {
        match *self {
            Regularization::Tikhonov { lambda } => lambda * x.data().iter().map(|v| v * v).sum::<f64>(),
            Regularization::SmoothedTv { lambda, eps } => {
                let n = x.side();
                let mut s = 0.0;
                for r in 0..n {
                    for c in 0..n {
                        let (gx, gy) = forward_diff(x, r, c);
                        s += libm::sqrt(gx * gx + gy * gy + eps * eps);
                    }
                }
                lambda * s
            }
        }
    }

    fn gradient(&self, x: &Image) -> Image {
        match *self {
            Regularization::Tikhonov { lambda } => x.scaled(2.0 * lambda),
            Regularization::SmoothedTv { lambda, eps } => {
                let n = x.side();
                let mut g = Image::zeros(n);
                for r in 0..n {
                    for c in 0..n {
                        let (gx, gy) = forward_diff(x, r, c);
                        let w = lambda / libm::sqrt(gx * gx + gy * gy + eps * eps);
                        // d/dx of sqrt(gx² + gy² + ε²), gx = x[r][c+1] − x[r][c]
                        if c + 1 < n {
                            g.data_mut()[r * n + c + 1] += w * gx;
                            g.data_mut()[r * n + c] -= w * gx;
                        }
                        if r + 1 < n {
                            g.data_mut()[(r + 1) * n + c] += w * gy;
                            g.data_mut()[r * n + c] -= w * gy;
                        }
                    }
                }
                g
            }
        }
    }
}

fn forward_diff(x: &Image, r: usize, c: usize) -> (f64, f64) {
    let n = x.side();
    let v = x.get(r, c);
    let gx = if c + 1 < n { x.get(r, c + 1) - v } else { 0.0 };
    let gy = if r + 1 < n { x.get(r + 1, c) - v } else { 0.0 };
    (gx, gy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub image: Image,
    /// Objective `‖Ax − y‖² + λR(x)` before each step and after the last.
    pub objective: Vec<f64>,
}

/// Gradient descent on `‖A x − y‖² + λR(x)` from the zero-filled image.
pub fn baseline_gradient_flow(
    y: &Measurement,
    fm: &ForwardModel,
    reg: Regularization,
    steps: usize,
    step_size: f64,
) -> Result<BaselineResult> {
    if !(reg.lambda() >= 0.0) {
        return Err(Error::invalid("regularization weight must be nonnegative"));
    }
    if steps == 0 {
        return Err(Error::invalid("baseline needs at least one step"));
    }
    if !(step_size > 0.0) {
        return Err(Error::invalid("step size must be positive"));
    }
    let mut x = fm.adjoint(y)?;
    let limit = DIVERGENCE_FACTOR * x.norm().max(1.0);
    let objective_at = |x: &Image| -> Result<(f64, Measurement)> {
        let mut r = fm.apply(x)?;
        for (a, b) in r.data_mut().iter_mut().zip(y.data()) {
            *a -= b;
        }
        let fit: f64 = r.data().iter().map(|v| v * v).sum();
        Ok((fit + reg.value(x), r))
    };
    let mut objective = Vec::with_capacity(steps + 1);
    for step in 0..steps {
        let (obj, resid) = objective_at(&x)?;
        objective.push(obj);
        let data_grad = fm.adjoint(&resid)?.scaled(2.0);
        let grad = data_grad.axpy(1.0, &reg.gradient(&x))?;
        x = x.axpy(-step_size, &grad)?;
        let nn = x.norm();
        if !nn.is_finite() || nn > limit {
            return Err(Error::Diverged {
                step: step + 1,
                norm: nn,
            });
        }
    }
    objective.push(objective_at(&x)?.0);
    Ok(BaselineResult { image: x, objective })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::init_regularizer;
    use crate::operators::Mask;
    use crate::synth::{make_mask, make_phantom, PhantomKind};
    use alloc::vec;

    fn zero_field() -> (RegularizerArch, ParamVector) {
        let arch = RegularizerArch::default();
        let p = init_regularizer(&arch, 0).unwrap();
        (arch, p)
    }

    #[test]
    fn identity_fixed_point() {
        let (arch, p) = zero_field();
        let fm = ForwardModel::identity(8);
        let s = make_phantom(PhantomKind::Blocks, 8, 1).unwrap();
        let y = fm.apply(&s).unwrap();
        assert_eq!(euler_step(&s, &y, &fm, &arch, &p, 5).unwrap(), s);
    }

    #[test]
    fn identity_single_step_lands_on_measurement() {
        let (arch, p) = zero_field();
        let fm = ForwardModel::identity(8);
        let s = make_phantom(PhantomKind::Blocks, 8, 1).unwrap();
        let target = make_phantom(PhantomKind::Ellipses, 8, 2).unwrap();
        let y = fm.apply(&target).unwrap();
        let next = euler_step(&s, &y, &fm, &arch, &p, 1).unwrap();
        assert!(next.distance(&target).unwrap() < 1e-15);
    }

    #[test]
    fn full_mask_path_stays_at_truth() {
        let (arch, p) = zero_field();
        let x = make_phantom(PhantomKind::Ellipses, 8, 3).unwrap();
        let fm = ForwardModel::fourier(Mask::full(8));
        let y = fm.apply(&x).unwrap();
        let path = transport_path(&y, &fm, &arch, &p, 4).unwrap();
        assert_eq!(path.states.len(), 5);
        for s in &path.states {
            assert!(s.distance(&x).unwrap() < 1e-12);
        }
        assert!(path.step_costs.iter().all(|&c| c < 1e-12));
    }

    #[test]
    fn default_steps_give_thirteen_states() {
        let (arch, p) = zero_field();
        let fm = ForwardModel::fourier(make_mask(16, 4.0, 0.125, 0).unwrap());
        let x = make_phantom(PhantomKind::Ellipses, 16, 3).unwrap();
        let path = transport_path(&fm.apply(&x).unwrap(), &fm, &arch, &p, 12).unwrap();
        assert_eq!(path.states.len(), 13);
        assert_eq!(path.step_costs.len(), 12);
    }

    #[test]
    fn path_cost_is_mean() {
        let path = TransportPath {
            states: vec![Image::zeros(2); 4],
            step_costs: vec![3.0, 2.0, 1.0],
        };
        assert_eq!(path_cost(&path), 2.0);
        let single = TransportPath {
            states: vec![Image::zeros(2); 2],
            step_costs: vec![4.0],
        };
        assert_eq!(path_cost(&single), 4.0);
    }

    #[test]
    fn zero_steps_rejected() {
        let (arch, p) = zero_field();
        let fm = ForwardModel::identity(8);
        let y = fm.zero_measurement();
        assert!(transport_path(&y, &fm, &arch, &p, 0).is_err());
    }

    #[test]
    fn divergent_flow_is_reported_with_step() {
        // an unnormalized Radon operator makes the explicit step unstable
        let arch = RegularizerArch::default();
        let p = init_regularizer(&arch, 0).unwrap();
        let fm = crate::operators::radon_build(16, 30, 23).unwrap();
        let x = make_phantom(PhantomKind::Ellipses, 16, 0).unwrap();
        let y = fm.apply(&x).unwrap();
        match transport_path(&y, &fm, &arch, &p, 6) {
            Err(Error::Diverged { step, .. }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn tikhonov_large_lambda_shrinks_to_zero() {
        let x = make_phantom(PhantomKind::Ellipses, 16, 3).unwrap();
        let fm = ForwardModel::fourier(make_mask(16, 4.0, 0.125, 0).unwrap());
        let y = fm.apply(&x).unwrap();
        let out = baseline_gradient_flow(&y, &fm, Regularization::Tikhonov { lambda: 1e4 }, 200, 1e-5).unwrap();
        assert!(out.image.norm() < 1e-3 * x.norm());
    }

    #[test]
    fn unregularized_full_mask_converges_to_truth() {
        let x = make_phantom(PhantomKind::Ellipses, 16, 3).unwrap();
        let fm = ForwardModel::fourier(Mask::full(16));
        let y = fm.apply(&x).unwrap();
        let out = baseline_gradient_flow(&y, &fm, Regularization::Tikhonov { lambda: 0.0 }, 20, 0.25).unwrap();
        assert!(out.image.distance(&x).unwrap() < 1e-10);
        assert!(out.objective.iter().all(|&v| v < 1e-25));
    }

    #[test]
    fn undersampled_objective_is_monotone() {
        let x = make_phantom(PhantomKind::Ellipses, 16, 4).unwrap();
        let fm = ForwardModel::fourier(make_mask(16, 4.0, 0.125, 2).unwrap());
        let y = crate::synth::simulate_measurement(&x, &fm, &crate::synth::NoiseConfig::gaussian(0.01), 1).unwrap();
        for reg in [
            Regularization::Tikhonov { lambda: 0.1 },
            Regularization::SmoothedTv { lambda: 0.01, eps: 0.1 },
        ] {
            let out = baseline_gradient_flow(&y, &fm, reg, 50, 0.5).unwrap();
            // allow for rounding once converged
            assert!(
                out.objective.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-14)),
                "{reg:?}"
            );
        }
    }

    #[test]
    fn tv_gradient_matches_finite_differences() {
        let x = make_phantom(PhantomKind::Blocks, 8, 5).unwrap();
        let reg = Regularization::SmoothedTv { lambda: 0.7, eps: 0.1 };
        let g = reg.gradient(&x);
        let h = 1e-6;
        for i in [0, 9, 27, 63] {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            let fd = (reg.value(&p) - reg.value(&m)) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-6, "{fd} vs {}", g.data()[i]);
        }
    }
}
