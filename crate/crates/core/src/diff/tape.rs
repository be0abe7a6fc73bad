//! Tape-based reverse-mode differentiation over flat `f64` buffers.
//!
//! Every node stores its full value; operations are coarse-grained
//! (a whole convolution or forward-model application is one node), so
//! the tape for an unrolled transport path stays a few hundred nodes long.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A linear map with an exact adjoint, usable as a tape operation.
pub trait LinearMap {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;
    fn apply_into(&self, x: &[f64], out: &mut [f64]);
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]);
}

/// Geometry of a same-padded, stride-1 multi-channel 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub side: usize,
    pub kernel: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.kernel * self.kernel
    }
    fn input_len(&self) -> usize {
        self.c_in * self.side * self.side
    }
    fn output_len(&self) -> usize {
        self.c_out * self.side * self.side
    }
}

enum Op<'a> {
    Input,
    Constant,
    Slice {
        src: Var,
        offset: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Axpy {
        a: Var,
        alpha: f64,
        b: Var,
    },
    Tanh(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        shape: ConvShape,
    },
    ChannelMean {
        input: Var,
        channels: usize,
    },
    Dot(Var, Var),
    Sum(Var),
    AbsSum(Var),
    SumSq(Var),
    Linear {
        input: Var,
        map: &'a dyn LinearMap,
        adjoint: bool,
    },
}

impl Op<'_> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Constant => "constant",
            Op::Slice { .. } => "slice",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Axpy { .. } => "axpy",
            Op::Tanh(..) => "tanh",
            Op::Conv2d { .. } => "conv2d",
            Op::ChannelMean { .. } => "channel_mean",
            Op::Dot(..) => "dot",
            Op::Sum(..) => "sum",
            Op::AbsSum(..) => "abs_sum",
            Op::SumSq(..) => "sum_sq",
            Op::Linear { adjoint: false, .. } => "linear",
            Op::Linear { adjoint: true, .. } => "linear_adjoint",
        }
    }
}

struct Node<'a> {
    value: Vec<f64>,
    op: Op<'a>,
    needs_grad: bool,
}

/// Records operations; [`Tape::gradient`] runs the reverse sweep.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// Value of a length-one node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Vec<f64>, op: Op<'a>, needs_grad: bool) -> Result<Var> {
        let node = self.nodes.len();
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: op.name(), node });
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(node))
    }

    fn same_len(&self, a: Var, b: Var, what: &'static str) -> Result<usize> {
        let (la, lb) = (self.value(a).len(), self.value(b).len());
        if la != lb {
            return Err(Error::ShapeMismatch {
                what,
                expected: la,
                found: lb,
            });
        }
        Ok(la)
    }

    /// Leaf whose gradient is requested.
    pub fn input(&mut self, value: Vec<f64>) -> Result<Var> {
        self.push(value, Op::Input, true)
    }

    /// Leaf treated as a constant (no gradient flows into it).
    pub fn constant(&mut self, value: Vec<f64>) -> Result<Var> {
        self.push(value, Op::Constant, false)
    }

    pub fn slice(&mut self, src: Var, offset: usize, len: usize) -> Result<Var> {
        let s = self.value(src);
        if offset + len > s.len() {
            return Err(Error::ShapeMismatch {
                what: "slice bounds",
                expected: s.len(),
                found: offset + len,
            });
        }
        let value = s[offset..offset + len].to_vec();
        let ng = self.needs_grad(src);
        self.push(value, Op::Slice { src, offset }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "add operands")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let ng = self.needs_grad(a) || self.needs_grad(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "sub operands")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        let ng = self.needs_grad(a) || self.needs_grad(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "mul operands")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let ng = self.needs_grad(a) || self.needs_grad(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Result<Var> {
        let value = self.value(a).iter().map(|x| alpha * x).collect();
        let ng = self.needs_grad(a);
        self.push(value, Op::Scale(a, alpha), ng)
    }

    /// `a + alpha * b`.
    pub fn axpy(&mut self, a: Var, alpha: f64, b: Var) -> Result<Var> {
        self.same_len(a, b, "axpy operands")?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + alpha * y)
            .collect();
        let ng = self.needs_grad(a) || self.needs_grad(b);
        self.push(value, Op::Axpy { a, alpha, b }, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).iter().map(|&x| libm::tanh(x)).collect();
        let ng = self.needs_grad(a);
        self.push(value, Op::Tanh(a), ng)
    }

    /// Same-padded convolution with per-output-channel bias.
    ///
    /// Layouts: input `[c_in, side, side]`, weight `[c_out, c_in, k, k]`,
    /// bias `[c_out]`, output `[c_out, side, side]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, shape: ConvShape) -> Result<Var> {
        check_len(self.value(input).len(), shape.input_len(), "conv2d input")?;
        check_len(self.value(weight).len(), shape.weight_len(), "conv2d weight")?;
        check_len(self.value(bias).len(), shape.c_out, "conv2d bias")?;
        if shape.kernel % 2 == 0 {
            return Err(Error::invalid("convolution kernel must be odd"));
        }
        let mut out = vec![0.0; shape.output_len()];
        conv_forward(
            self.value(input),
            self.value(weight),
            self.value(bias),
            &shape,
            &mut out,
        );
        let ng = self.needs_grad(input) || self.needs_grad(weight) || self.needs_grad(bias);
        self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                shape,
            },
            ng,
        )
    }

    /// Mean over each of `channels` equal-length contiguous blocks.
    pub fn channel_mean(&mut self, input: Var, channels: usize) -> Result<Var> {
        let x = self.value(input);
        if channels == 0 || x.len() % channels != 0 {
            return Err(Error::ShapeMismatch {
                what: "channel_mean input",
                expected: channels,
                found: x.len(),
            });
        }
        let block = x.len() / channels;
        let value = x
            .chunks_exact(block)
            .map(|c| c.iter().sum::<f64>() / block as f64)
            .collect();
        let ng = self.needs_grad(input);
        self.push(value, Op::ChannelMean { input, channels }, ng)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "dot operands")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        let ng = self.needs_grad(a) || self.needs_grad(b);
        self.push(vec![value], Op::Dot(a, b), ng)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).iter().sum();
        let ng = self.needs_grad(a);
        self.push(vec![value], Op::Sum(a), ng)
    }

    /// ℓ1 norm. The subgradient at zero is taken as zero.
    pub fn abs_sum(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).iter().map(|x| x.abs()).sum();
        let ng = self.needs_grad(a);
        self.push(vec![value], Op::AbsSum(a), ng)
    }

    /// Squared ℓ2 norm.
    pub fn sum_sq(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).iter().map(|x| x * x).sum();
        let ng = self.needs_grad(a);
        self.push(vec![value], Op::SumSq(a), ng)
    }

    pub fn linear(&mut self, input: Var, map: &'a dyn LinearMap) -> Result<Var> {
        check_len(self.value(input).len(), map.input_len(), "linear map input")?;
        let mut out = vec![0.0; map.output_len()];
        map.apply_into(self.value(input), &mut out);
        let ng = self.needs_grad(input);
        self.push(
            out,
            Op::Linear {
                input,
                map,
                adjoint: false,
            },
            ng,
        )
    }

    pub fn linear_adjoint(&mut self, input: Var, map: &'a dyn LinearMap) -> Result<Var> {
        check_len(self.value(input).len(), map.output_len(), "adjoint map input")?;
        let mut out = vec![0.0; map.input_len()];
        map.adjoint_into(self.value(input), &mut out);
        let ng = self.needs_grad(input);
        self.push(
            out,
            Op::Linear {
                input,
                map,
                adjoint: true,
            },
            ng,
        )
    }

    /// Sums scalar nodes left to right.
    pub fn sum_scalars(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms.split_first().ok_or_else(|| Error::invalid("sum of zero terms"))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    /// Reverse sweep from scalar `output`; returns one gradient per `wrt`.
    pub fn gradient(&self, output: Var, wrt: &[Var]) -> Result<Vec<Vec<f64>>> {
        check_len(self.value(output).len(), 1, "gradient output")?;
        let mut adj: Vec<Vec<f64>> = (0..=output.0).map(|_| Vec::new()).collect();
        adj[output.0] = vec![1.0];

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || adj[idx].is_empty() {
                continue;
            }
            let g = core::mem::take(&mut adj[idx]);
            self.backprop(idx, &g, &mut adj)?;
            adj[idx] = g;
        }

        Ok(wrt
            .iter()
            .map(|v| {
                let a = adj.get(v.0).cloned().unwrap_or_default();
                if a.is_empty() {
                    vec![0.0; self.value(*v).len()]
                } else {
                    a
                }
            })
            .collect())
    }

    fn backprop(&self, idx: usize, g: &[f64], adj: &mut [Vec<f64>]) -> Result<()> {
        let node = &self.nodes[idx];
        match node.op {
            Op::Input | Op::Constant => {}
            Op::Slice { src, offset } => {
                if self.needs_grad(src) {
                    let a = slot(adj, src, self.value(src).len());
                    for (d, s) in a[offset..offset + g.len()].iter_mut().zip(g) {
                        *d += s;
                    }
                }
            }
            Op::Add(a, b) => {
                self.accumulate(adj, a, g, 1.0);
                self.accumulate(adj, b, g, 1.0);
            }
            Op::Sub(a, b) => {
                self.accumulate(adj, a, g, 1.0);
                self.accumulate(adj, b, g, -1.0);
            }
            Op::Mul(a, b) => {
                if self.needs_grad(a) {
                    let bv = self.value(b);
                    let da = slot(adj, a, g.len());
                    for ((d, gi), bi) in da.iter_mut().zip(g).zip(bv) {
                        *d += gi * bi;
                    }
                }
                if self.needs_grad(b) {
                    let av = self.value(a);
                    let db = slot(adj, b, g.len());
                    for ((d, gi), ai) in db.iter_mut().zip(g).zip(av) {
                        *d += gi * ai;
                    }
                }
            }
            Op::Scale(a, alpha) => self.accumulate(adj, a, g, alpha),
            Op::Axpy { a, alpha, b } => {
                self.accumulate(adj, a, g, 1.0);
                self.accumulate(adj, b, g, alpha);
            }
            Op::Tanh(a) => {
                if self.needs_grad(a) {
                    let y = &node.value;
                    let da = slot(adj, a, g.len());
                    for ((d, gi), yi) in da.iter_mut().zip(g).zip(y) {
                        *d += gi * (1.0 - yi * yi);
                    }
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                shape,
            } => {
                if self.needs_grad(input) {
                    let w = self.value(weight);
                    let dx = slot(adj, input, shape.input_len());
                    conv_backward_input(g, w, &shape, dx);
                }
                if self.needs_grad(weight) {
                    let x = self.value(input);
                    let dw = slot(adj, weight, shape.weight_len());
                    conv_backward_weight(g, x, &shape, dw);
                }
                if self.needs_grad(bias) {
                    let hw = shape.side * shape.side;
                    let db = slot(adj, bias, shape.c_out);
                    for (o, d) in db.iter_mut().enumerate() {
                        *d += g[o * hw..(o + 1) * hw].iter().sum::<f64>();
                    }
                }
            }
            Op::ChannelMean { input, channels } => {
                if self.needs_grad(input) {
                    let len = self.value(input).len();
                    let block = len / channels;
                    let dx = slot(adj, input, len);
                    for (c, chunk) in dx.chunks_exact_mut(block).enumerate() {
                        let s = g[c] / block as f64;
                        chunk.iter_mut().for_each(|d| *d += s);
                    }
                }
            }
            Op::Dot(a, b) => {
                let s = g[0];
                if self.needs_grad(a) {
                    let bv = self.value(b);
                    let da = slot(adj, a, bv.len());
                    for (d, bi) in da.iter_mut().zip(bv) {
                        *d += s * bi;
                    }
                }
                if self.needs_grad(b) {
                    let av = self.value(a);
                    let db = slot(adj, b, av.len());
                    for (d, ai) in db.iter_mut().zip(av) {
                        *d += s * ai;
                    }
                }
            }
            Op::Sum(a) => {
                if self.needs_grad(a) {
                    let len = self.value(a).len();
                    slot(adj, a, len).iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::AbsSum(a) => {
                if self.needs_grad(a) {
                    let av = self.value(a);
                    let da = slot(adj, a, av.len());
                    for (d, &x) in da.iter_mut().zip(av) {
                        *d += g[0] * sign(x);
                    }
                }
            }
            Op::SumSq(a) => {
                if self.needs_grad(a) {
                    let av = self.value(a);
                    let da = slot(adj, a, av.len());
                    for (d, &x) in da.iter_mut().zip(av) {
                        *d += 2.0 * g[0] * x;
                    }
                }
            }
            Op::Linear { input, map, adjoint } => {
                if self.needs_grad(input) {
                    let len = self.value(input).len();
                    let mut back = vec![0.0; len];
                    if adjoint {
                        map.apply_into(g, &mut back);
                    } else {
                        map.adjoint_into(g, &mut back);
                    }
                    let dx = slot(adj, input, len);
                    for (d, b) in dx.iter_mut().zip(&back) {
                        *d += b;
                    }
                }
            }
        }
        Ok(())
    }

    fn accumulate(&self, adj: &mut [Vec<f64>], target: Var, g: &[f64], alpha: f64) {
        if !self.needs_grad(target) {
            return;
        }
        let d = slot(adj, target, g.len());
        if alpha == 1.0 {
            for (di, gi) in d.iter_mut().zip(g) {
                *di += gi;
            }
        } else {
            for (di, gi) in d.iter_mut().zip(g) {
                *di += alpha * gi;
            }
        }
    }
}

fn slot(adj: &mut [Vec<f64>], v: Var, len: usize) -> &mut Vec<f64> {
    let a = &mut adj[v.0];
    if a.is_empty() {
        *a = vec![0.0; len];
    }
    a
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_len(found: usize, expected: usize, what: &'static str) -> Result<()> {
    if found != expected {
        return Err(Error::ShapeMismatch { what, expected, found });
    }
    Ok(())
}

/// Valid output range `[lo, hi)` along one axis for kernel offset `d`.
#[inline]
fn valid_range(n: usize, d: isize) -> (usize, usize) {
    if d >= 0 {
        (0, n.saturating_sub(d as usize))
    } else {
        ((-d) as usize, n)
    }
}

fn conv_forward(x: &[f64], w: &[f64], b: &[f64], s: &ConvShape, out: &mut [f64]) {
    let n = s.side;
    let hw = n * n;
    let k = s.kernel;
    let p = (k / 2) as isize;
    for o in 0..s.c_out {
        let out_o = &mut out[o * hw..(o + 1) * hw];
        out_o.fill(b[o]);
        for i in 0..s.c_in {
            let x_i = &x[i * hw..(i + 1) * hw];
            let w_oi = &w[(o * s.c_in + i) * k * k..(o * s.c_in + i + 1) * k * k];
            for ky in 0..k {
                let dy = ky as isize - p;
                let (y0, y1) = valid_range(n, dy);
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let (x0, x1) = valid_range(n, dx);
                    let wv = w_oi[ky * k + kx];
                    let len = x1 - x0;
                    for y in y0..y1 {
                        let src = ((y as isize + dy) as usize) * n + (x0 as isize + dx) as usize;
                        let dst = y * n + x0;
                        let orow = &mut out_o[dst..dst + len];
                        let irow = &x_i[src..src + len];
                        for (a, v) in orow.iter_mut().zip(irow) {
                            *a += wv * v;
                        }
                    }
                }
            }
        }
    }
}

fn conv_backward_input(g: &[f64], w: &[f64], s: &ConvShape, dx: &mut [f64]) {
    let n = s.side;
    let hw = n * n;
    let k = s.kernel;
    let p = (k / 2) as isize;
    for o in 0..s.c_out {
        let g_o = &g[o * hw..(o + 1) * hw];
        for i in 0..s.c_in {
            let dx_i = &mut dx[i * hw..(i + 1) * hw];
            let w_oi = &w[(o * s.c_in + i) * k * k..(o * s.c_in + i + 1) * k * k];
            for ky in 0..k {
                let dy = ky as isize - p;
                let (y0, y1) = valid_range(n, dy);
                for kx in 0..k {
                    let dxo = kx as isize - p;
                    let (x0, x1) = valid_range(n, dxo);
                    let wv = w_oi[ky * k + kx];
                    let len = x1 - x0;
                    for y in y0..y1 {
                        let src = ((y as isize + dy) as usize) * n + (x0 as isize + dxo) as usize;
                        let dst = y * n + x0;
                        let drow = &mut dx_i[src..src + len];
                        let grow = &g_o[dst..dst + len];
                        for (d, gv) in drow.iter_mut().zip(grow) {
                            *d += wv * gv;
                        }
                    }
                }
            }
        }
    }
}

fn conv_backward_weight(g: &[f64], x: &[f64], s: &ConvShape, dw: &mut [f64]) {
    let n = s.side;
    let hw = n * n;
    let k = s.kernel;
    let p = (k / 2) as isize;
    for o in 0..s.c_out {
        let g_o = &g[o * hw..(o + 1) * hw];
        for i in 0..s.c_in {
            let x_i = &x[i * hw..(i + 1) * hw];
            let base = (o * s.c_in + i) * k * k;
            for ky in 0..k {
                let dy = ky as isize - p;
                let (y0, y1) = valid_range(n, dy);
                for kx in 0..k {
                    let dxo = kx as isize - p;
                    let (x0, x1) = valid_range(n, dxo);
                    let len = x1 - x0;
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let src = ((y as isize + dy) as usize) * n + (x0 as isize + dxo) as usize;
                        let dst = y * n + x0;
                        let grow = &g_o[dst..dst + len];
                        let xrow = &x_i[src..src + len];
                        acc += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                    }
                    dw[base + ky * k + kx] += acc;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_has_derivative_two_p() {
        let mut t = Tape::new();
        let p = t.input(vec![3.0]).unwrap();
        let y = t.mul(p, p).unwrap();
        let s = t.sum(y).unwrap();
        let g = t.gradient(s, &[p]).unwrap();
        assert_eq!(g[0], vec![6.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut t = Tape::new();
        let p = t.input(vec![1.0, 2.0]).unwrap();
        let c = t.constant(vec![7.0]).unwrap();
        let g = t.gradient(c, &[p]).unwrap();
        assert_eq!(g[0], vec![0.0, 0.0]);
    }

    #[test]
    fn abs_subgradient_at_zero_is_zero() {
        let mut t = Tape::new();
        let p = t.input(vec![0.0, -2.0, 3.0]).unwrap();
        let s = t.abs_sum(p).unwrap();
        let g = t.gradient(s, &[p]).unwrap();
        assert_eq!(g[0], vec![0.0, -1.0, 1.0]);
    }

    #[test]
    fn non_finite_value_names_the_op() {
        let mut t = Tape::new();
        let p = t.input(vec![1e308]).unwrap();
        let q = t.scale(p, 10.0);
        assert_eq!(q, Err(Error::NonFinite { op: "scale", node: 1 }));
    }

    #[test]
    fn conv_identity_kernel_copies_input() {
        let shape = ConvShape {
            c_in: 1,
            c_out: 1,
            side: 4,
            kernel: 3,
        };
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let x: Vec<f64> = (0..16).map(f64::from).collect();
        let mut t = Tape::new();
        let xv = t.constant(x.clone()).unwrap();
        let wv = t.constant(w).unwrap();
        let bv = t.constant(vec![0.5]).unwrap();
        let y = t.conv2d(xv, wv, bv, shape).unwrap();
        let expect: Vec<f64> = x.iter().map(|v| v + 0.5).collect();
        assert_eq!(t.value(y), &expect[..]);
    }

    #[test]
    fn conv_shift_kernel_pads_with_zero() {
        // weight at (ky=1,kx=2) reads x[y][x+1]
        let shape = ConvShape {
            c_in: 1,
            c_out: 1,
            side: 3,
            kernel: 3,
        };
        let mut w = vec![0.0; 9];
        w[5] = 1.0;
        let x: Vec<f64> = (1..=9).map(f64::from).collect();
        let mut t = Tape::new();
        let xv = t.constant(x).unwrap();
        let wv = t.constant(w).unwrap();
        let bv = t.constant(vec![0.0]).unwrap();
        let y = t.conv2d(xv, wv, bv, shape).unwrap();
        assert_eq!(t.value(y), &[2.0, 3.0, 0.0, 5.0, 6.0, 0.0, 8.0, 9.0, 0.0]);
    }
}
