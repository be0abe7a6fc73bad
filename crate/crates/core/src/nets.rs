//! The learned regularizer field `H_φ` and the critic potential `φ_θ`.
//!
//! Both are small same-padded convolution stacks with `tanh` between
//! layers. The regularizer maps an image to an image; the critic ends in
//! a global average pool and an affine head producing one scalar.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diff::{ConvShape, Tape, Var};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::param::{ParamLayout, ParamVector};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegularizerArch {
    pub channels: Vec<usize>,
    pub kernel: usize,
}

impl Default for RegularizerArch {
    fn default() -> Self {
        Self {
            channels: vec![1, 16, 16, 1],
            kernel: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticArch {
    pub channels: Vec<usize>,
    pub kernel: usize,
}

impl Default for CriticArch {
    fn default() -> Self {
        Self {
            channels: vec![1, 16, 16],
            kernel: 3,
        }
    }
}

fn conv_layout(layout: &mut ParamLayout, channels: &[usize], kernel: usize) -> Result<()> {
    for (l, w) in channels.windows(2).enumerate() {
        layout.push(&format!("conv{l}.weight"), &[w[1], w[0], kernel, kernel])?;
        layout.push(&format!("conv{l}.bias"), &[w[1]])?;
    }
    Ok(())
}

fn check_kernel(kernel: usize) -> Result<()> {
    if kernel % 2 == 0 {
        return Err(Error::invalid("kernel size must be odd"));
    }
    Ok(())
}

impl RegularizerArch {
    pub fn validate(&self) -> Result<()> {
        check_kernel(self.kernel)?;
        if self.channels.len() < 2 || self.channels[0] != 1 || self.channels[self.channels.len() - 1] != 1 {
            return Err(Error::invalid("regularizer widths must start and end with 1"));
        }
        Ok(())
    }

    pub fn layout(&self) -> Result<ParamLayout> {
        self.validate()?;
        let mut layout = ParamLayout::new();
        conv_layout(&mut layout, &self.channels, self.kernel)?;
        Ok(layout)
    }

    /// Slices the parameter leaf into per-layer nodes once, so repeated
    /// applications along a path share them.
    pub fn bind(&self, tape: &mut Tape<'_>, params: Var, side: usize) -> Result<BoundConvStack> {
        bind_convs(tape, params, &self.channels, self.kernel, side, 0)
    }
}

impl CriticArch {
    pub fn validate(&self) -> Result<()> {
        check_kernel(self.kernel)?;
        if self.channels.len() < 2 || self.channels[0] != 1 {
            return Err(Error::invalid("critic widths must start with 1"));
        }
        Ok(())
    }

    pub fn layout(&self) -> Result<ParamLayout> {
        self.validate()?;
        let mut layout = ParamLayout::new();
        conv_layout(&mut layout, &self.channels, self.kernel)?;
        let last = self.channels[self.channels.len() - 1];
        layout.push("head.weight", &[last])?;
        layout.push("head.bias", &[1])?;
        Ok(layout)
    }

    pub fn bind(&self, tape: &mut Tape<'_>, params: Var, side: usize) -> Result<BoundCritic> {
        let convs = bind_convs(tape, params, &self.channels, self.kernel, side, 0)?;
        let layout = self.layout()?;
        let hw = layout.segment("head.weight").expect("head weight segment");
        let hb = layout.segment("head.bias").expect("head bias segment");
        let head_w = tape.slice(params, hw.offset, hw.len())?;
        let head_b = tape.slice(params, hb.offset, 1)?;
        Ok(BoundCritic { convs, head_w, head_b })
    }
}

fn bind_convs(
    tape: &mut Tape<'_>,
    params: Var,
    channels: &[usize],
    kernel: usize,
    side: usize,
    mut offset: usize,
) -> Result<BoundConvStack> {
    let mut layers = Vec::with_capacity(channels.len() - 1);
    for w in channels.windows(2) {
        let shape = ConvShape {
            c_in: w[0],
            c_out: w[1],
            side,
            kernel,
        };
        let weight = tape.slice(params, offset, shape.weight_len())?;
        offset += shape.weight_len();
        let bias = tape.slice(params, offset, shape.c_out)?;
        offset += shape.c_out;
        layers.push((weight, bias, shape));
    }
    Ok(BoundConvStack { layers })
}

/// Convolution layers whose weights live on a tape.
pub struct BoundConvStack {
    layers: Vec<(Var, Var, ConvShape)>,
}

impl BoundConvStack {
    /// Applies the stack; `tanh` follows every layer except the last
    /// unless `activate_last` is set.
    pub fn apply(&self, tape: &mut Tape<'_>, x: Var, activate_last: bool) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (l, &(w, b, shape)) in self.layers.iter().enumerate() {
            h = tape.conv2d(h, w, b, shape)?;
            if l < last || activate_last {
                h = tape.tanh(h)?;
            }
        }
        Ok(h)
    }
}

pub struct BoundCritic {
    convs: BoundConvStack,
    head_w: Var,
    head_b: Var,
}

impl BoundCritic {
    /// Scalar potential of a single-channel image node.
    pub fn apply(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let h = self.convs.apply(tape, x, true)?;
        let channels = tape.value(self.head_w).len();
        let pooled = tape.channel_mean(h, channels)?;
        let lin = tape.dot(pooled, self.head_w)?;
        tape.add(lin, self.head_b)
    }
}

pub fn hphi_apply(arch: &RegularizerArch, params: &ParamVector, x: &Image) -> Result<Image> {
    params.expect_layout(&arch.layout()?, "regularizer")?;
    let mut tape = Tape::new();
    let p = tape.constant(params.values().to_vec())?;
    let net = arch.bind(&mut tape, p, x.side())?;
    let xv = tape.constant(x.data().to_vec())?;
    let out = net.apply(&mut tape, xv, false)?;
    Image::from_vec(x.side(), tape.value(out).to_vec())
}

pub fn critic_apply(arch: &CriticArch, params: &ParamVector, x: &Image) -> Result<f64> {
    params.expect_layout(&arch.layout()?, "critic")?;
    let mut tape = Tape::new();
    let p = tape.constant(params.values().to_vec())?;
    let net = arch.bind(&mut tape, p, x.side())?;
    let xv = tape.constant(x.data().to_vec())?;
    let out = net.apply(&mut tape, xv)?;
    Ok(tape.scalar(out))
}

/// Critic values for many images sharing one parameter binding.
pub fn critic_apply_batch(arch: &CriticArch, params: &ParamVector, xs: &[Image]) -> Result<Vec<f64>> {
    params.expect_layout(&arch.layout()?, "critic")?;
    let Some(first) = xs.first() else {
        return Ok(Vec::new());
    };
    let mut tape = Tape::new();
    let p = tape.constant(params.values().to_vec())?;
    let net = arch.bind(&mut tape, p, first.side())?;
    xs.iter()
        .map(|x| {
            let xv = tape.constant(x.data().to_vec())?;
            let out = net.apply(&mut tape, xv)?;
            Ok(tape.scalar(out))
        })
        .collect()
}

fn init_convs(values: &mut [f64], layout: &ParamLayout, channels: &[usize], kernel: usize, r: &mut rng::Rng) {
    for (l, w) in channels.windows(2).enumerate() {
        let seg = layout.segment(&format!("conv{l}.weight")).expect("conv weight segment");
        let s = 1.0 / libm::sqrt((w[0] * kernel * kernel) as f64);
        for v in &mut values[seg.range()] {
            *v = r.random_range(-s..=s);
        }
    }
}

/// Uniform `±1/sqrt(fan_in)` weights, zero biases; the last layer starts at
/// zero so the initial field vanishes identically.
pub fn init_regularizer(arch: &RegularizerArch, seed: u64) -> Result<ParamVector> {
    let layout = arch.layout()?;
    let mut values = vec![0.0; layout.total_len()];
    let mut r = rng::stream(seed, "init-regularizer", 0);
    init_convs(&mut values, &layout, &arch.channels, arch.kernel, &mut r);
    let last = arch.channels.len() - 2;
    let seg = layout.segment(&format!("conv{last}.weight")).expect("last layer");
    values[seg.range()].fill(0.0);
    ParamVector::from_values(layout, values)
}

pub fn init_critic(arch: &CriticArch, seed: u64) -> Result<ParamVector> {
    let layout = arch.layout()?;
    let mut values = vec![0.0; layout.total_len()];
    let mut r = rng::stream(seed, "init-critic", 0);
    init_convs(&mut values, &layout, &arch.channels, arch.kernel, &mut r);
    let seg = layout.segment("head.weight").expect("head weight");
    let s = 1.0 / libm::sqrt(seg.len() as f64);
    for v in &mut values[seg.range()] {
        *v = r.random_range(-s..=s);
    }
    ParamVector::from_values(layout, values)
}

/// Clamps every coordinate to `[-c, c]`.
pub fn clip_weights(params: &ParamVector, c: f64) -> Result<ParamVector> {
    if !(c > 0.0) {
        return Err(Error::invalid("clip bound must be positive"));
    }
    let values = params.values().iter().map(|v| v.clamp(-c, c)).collect();
    params.with_values(values)
}

/// Largest observed difference quotient `|φ(a) − φ(b)| / ‖a − b‖₂`.
pub fn estimate_lipschitz(arch: &CriticArch, params: &ParamVector, pairs: &[(Image, Image)]) -> Result<f64> {
    let mut best: Option<f64> = None;
    for (a, b) in pairs {
        let d = a.distance(b)?;
        if d == 0.0 {
            continue;
        }
        let q = (critic_apply(arch, params, a)? - critic_apply(arch, params, b)?).abs() / d;
        best = Some(best.map_or(q, |m| m.max(q)));
    }
    best.ok_or_else(|| Error::invalid("every probe pair has identical members"))
}

/// Certified Lipschitz bound: product of per-layer operator-norm bounds
/// (`sqrt(max row sum · max column sum)` for each convolution), times
/// `1/side` for the average pool and `‖w_head‖₂` for the head.
pub fn lipschitz_upper_bound(arch: &CriticArch, params: &ParamVector, side: usize) -> Result<f64> {
    params.expect_layout(&arch.layout()?, "critic")?;
    let k2 = arch.kernel * arch.kernel;
    let mut bound = 1.0;
    for (l, w) in arch.channels.windows(2).enumerate() {
        let (c_in, c_out) = (w[0], w[1]);
        let wt = params.segment(&format!("conv{l}.weight")).expect("conv weight");
        let mut row = vec![0.0_f64; c_out];
        let mut col = vec![0.0_f64; c_in];
        for o in 0..c_out {
            for i in 0..c_in {
                let s: f64 = wt[(o * c_in + i) * k2..(o * c_in + i + 1) * k2]
                    .iter()
                    .map(|v| v.abs())
                    .sum();
                row[o] += s;
                col[i] += s;
            }
        }
        let rmax = row.iter().cloned().fold(0.0, f64::max);
        let cmax = col.iter().cloned().fold(0.0, f64::max);
        bound *= libm::sqrt(rmax * cmax);
    }
    let head = params.segment("head.weight").expect("head weight");
    let head_norm = libm::sqrt(head.iter().map(|v| v * v).sum());
    Ok(bound * head_norm / side as f64)
}
