//! A small reverse-mode automatic differentiation tape.
//!
//! Every operation appends a node holding its value; [`Graph::backward`]
//! walks the tape in reverse. Nodes only carry gradient work when one of
//! their inputs does, so frozen parameters bound with [`Graph::constant`]
//! cost nothing in the backward pass.

mod kernels;

use crate::tensor::Tensor;
use kernels::ConvGeom;

#[cfg(test)]
pub(crate) use kernels::upsample2x;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Reshape(Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv2d { x: Var, w: Var, stride: usize, pad: usize },
    ChannelBias { x: Var, b: Var },
    LeakyRelu { x: Var, slope: f64, gain: f64 },
    Upsample2x(Var),
    AvgPool2x(Var),
    Concat(Vec<Var>),
    Modulate { w: Var, s: Var, eps: Option<f64> },
    NormalizeRms { x: Var, eps: f64 },
    MeanAbsDiff(Var, Var),
    RmsDiff(Var, Var),
    Softplus(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that required one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x * k);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, k), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let value = self.value(a).clone().reshaped(shape).expect("reshape: element count mismatch");
        let ng = self.needs(a);
        self.push(value, Op::Reshape(a), ng)
    }

    /// `w · x + b` for a vector `x` of shape `[in]` and `w` of shape `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xs = self.value(x);
        let ws = self.value(w);
        let (out, inp) = (ws.shape()[0], ws.shape()[1]);
        assert_eq!(xs.len(), inp, "linear: input has {} features, weight expects {}", xs.len(), inp);
        let mut y = vec![0.0; out];
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &ws.data()[o * inp..(o + 1) * inp];
            *yo = row.iter().zip(xs.data()).map(|(a, b)| a * b).sum();
        }
        if let Some(b) = b {
            for (yo, bo) in y.iter_mut().zip(self.value(b).data()) {
                *yo += bo;
            }
        }
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(Tensor::new(vec![out], y).unwrap(), Op::Linear { x, w, b }, ng)
    }

    fn conv_geom(&self, x: Var, w: Var, stride: usize, pad: usize) -> (ConvGeom, usize) {
        let xs = self.shape(x);
        let ws = self.shape(w);
        assert_eq!(xs.len(), 3, "conv2d: input must be [C,H,W]");
        assert_eq!(ws.len(), 4, "conv2d: weight must be [O,C,k,k]");
        assert_eq!(xs[0], ws[1], "conv2d: input has {} channels, weight expects {}", xs[0], ws[1]);
        assert_eq!(ws[2], ws[3], "conv2d: kernel must be square");
        let g = ConvGeom { channels: xs[0], height: xs[1], width: xs[2], kernel: ws[2], stride, pad };
        (g, ws[0])
    }

    /// Zero-padded 2-D cross-correlation without bias.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Var {
        let (g, o) = self.conv_geom(x, w, stride, pad);
        let out = kernels::conv2d_forward(self.value(x).data(), self.value(w).data(), o, &g);
        let value = Tensor::new(vec![o, g.out_height(), g.out_width()], out).unwrap();
        let ng = self.needs(x) || self.needs(w);
        self.push(value, Op::Conv2d { x, w, stride, pad }, ng)
    }

    /// Adds `b[c]` to every element of channel `c`.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Var {
        let c = self.shape(x)[0];
        assert_eq!(self.value(b).len(), c, "channel_bias: bias length mismatch");
        let mut value = self.value(x).clone();
        let plane = value.len() / c;
        let bias = self.value(b).data().to_vec();
        for (chunk, bv) in value.data_mut().chunks_mut(plane).zip(bias) {
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        let ng = self.needs(x) || self.needs(b);
        self.push(value, Op::ChannelBias { x, b }, ng)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64, gain: f64) -> Var {
        let value = self.value(x).map(|v| gain * if v > 0.0 { v } else { slope * v });
        let ng = self.needs(x);
        self.push(value, Op::LeakyRelu { x, slope, gain }, ng)
    }

    pub fn upsample2x(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let out = kernels::upsample2x(self.value(x).data(), s[0], s[1], s[2]);
        let value = Tensor::new(vec![s[0], 2 * s[1], 2 * s[2]], out).unwrap();
        let ng = self.needs(x);
        self.push(value, Op::Upsample2x(x), ng)
    }

    pub fn avg_pool2x(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert!(s[1] % 2 == 0 && s[2] % 2 == 0, "avg_pool2x: odd spatial size {:?}", s);
        let out = kernels::avg_pool2x(self.value(x).data(), s[0], s[1], s[2]);
        let value = Tensor::new(vec![s[0], s[1] / 2, s[2] / 2], out).unwrap();
        let ng = self.needs(x);
        self.push(value, Op::AvgPool2x(x), ng)
    }

    /// Concatenates along the leading axis; trailing dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let tail = self.shape(parts[0])[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            assert_eq!(&self.shape(p)[1..], &tail[..], "concat: trailing shape mismatch");
            lead += self.shape(p)[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Tensor::new(shape, data).unwrap(), Op::Concat(parts.to_vec()), ng)
    }

    /// Scales input-channel `i` of a `[O, I, k, k]` weight by `s[i]`; with
    /// `eps = Some(e)` each output filter is then renormalized to unit L2
    /// norm via `1/sqrt(sum w'^2 + e)`.
    pub fn modulate(&mut self, w: Var, s: Var, eps: Option<f64>) -> Var {
        let ws = self.shape(w).to_vec();
        assert_eq!(ws.len(), 4, "modulate: weight must be [O,I,k,k]");
        assert_eq!(self.value(s).len(), ws[1], "modulate: style has {} entries, weight has {} input channels", self.value(s).len(), ws[1]);
        let taps = ws[2] * ws[3];
        let per_out = ws[1] * taps;
        let style = self.value(s).data();
        let mut value = self.value(w).clone();
        for filt in value.data_mut().chunks_mut(per_out) {
            for (i, chunk) in filt.chunks_mut(taps).enumerate() {
                chunk.iter_mut().for_each(|v| *v *= style[i]);
            }
            if let Some(e) = eps {
                let d = 1.0 / (filt.iter().map(|v| v * v).sum::<f64>() + e).sqrt();
                filt.iter_mut().for_each(|v| *v *= d);
            }
        }
        let ng = self.needs(w) || self.needs(s);
        self.push(value, Op::Modulate { w, s, eps }, ng)
    }

    /// `x / sqrt(mean(x^2) + eps)`
    pub fn normalize_rms(&mut self, x: Var, eps: f64) -> Var {
        let xs = self.value(x);
        let r = 1.0 / (xs.sum_squares() / xs.len() as f64 + eps).sqrt();
        let value = xs.map(|v| v * r);
        let ng = self.needs(x);
        self.push(value, Op::NormalizeRms { x, eps }, ng)
    }

    /// Mean absolute difference, a scalar.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mean_abs_diff: shape mismatch");
        let (va, vb) = (self.value(a), self.value(b));
        let m = va.data().iter().zip(vb.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / va.len() as f64;
        let ng = self.needs(a) || self.needs(b);
        self.push(Tensor::scalar(m), Op::MeanAbsDiff(a, b), ng)
    }

    /// `sqrt(sum((a-b)^2) / n)`, a scalar.
    pub fn rms_diff(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "rms_diff: shape mismatch");
        let (va, vb) = (self.value(a), self.value(b));
        let ss: f64 = va.data().iter().zip(vb.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let r = (ss / va.len() as f64).sqrt();
        let ng = self.needs(a) || self.needs(b);
        self.push(Tensor::scalar(r), Op::RmsDiff(a, b), ng)
    }

    /// Elementwise `ln(1 + e^x)`.
    pub fn softplus(&mut self, x: Var) -> Var {
        let value = self.value(x).map(softplus);
        let ng = self.needs(x);
        self.push(value, Op::Softplus(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let ng = self.needs(x);
        self.push(value, Op::Sum(x), ng)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward: root must be a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.needs(root) {
            return Gradients { grads };
        }
        grads[root.0] = Some(Tensor::full(self.shape(root), 1.0));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, delta: Tensor| {
            if !self.needs(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.axpy(1.0, &delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    acc(*a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.needs(*b) {
                    acc(*b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::Scale(a, k) => acc(*a, g.map(|v| v * k)),
            Op::Reshape(a) => acc(*a, g.clone().reshaped(self.shape(*a)).unwrap()),
            Op::Linear { x, w, b } => {
                let ws = self.value(*w);
                let xs = self.value(*x);
                let (out, inp) = (ws.shape()[0], ws.shape()[1]);
                if self.needs(*x) {
                    let mut gx = vec![0.0; inp];
                    for o in 0..out {
                        let go = g.data()[o];
                        for (gi, wv) in gx.iter_mut().zip(&ws.data()[o * inp..(o + 1) * inp]) {
                            *gi += go * wv;
                        }
                    }
                    acc(*x, Tensor::new(xs.shape().to_vec(), gx).unwrap());
                }
                if self.needs(*w) {
                    let gw = Tensor::from_fn(&[out, inp], |i| g.data()[i / inp] * xs.data()[i % inp]);
                    acc(*w, gw);
                }
                if let Some(b) = b {
                    acc(*b, g.clone().reshaped(self.shape(*b)).unwrap());
                }
            }
            Op::Conv2d { x, w, stride, pad } => {
                let (geom, o) = self.conv_geom(*x, *w, *stride, *pad);
                let (gx, gw) = kernels::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g.data(),
                    o,
                    &geom,
                    self.needs(*x),
                    self.needs(*w),
                );
                if let Some(gx) = gx {
                    acc(*x, Tensor::new(self.shape(*x).to_vec(), gx).unwrap());
                }
                if let Some(gw) = gw {
                    acc(*w, Tensor::new(self.shape(*w).to_vec(), gw).unwrap());
                }
            }
            Op::ChannelBias { x, b } => {
                acc(*x, g.clone());
                if self.needs(*b) {
                    let c = self.shape(*x)[0];
                    let plane = g.len() / c;
                    let gb: Vec<f64> = g.data().chunks(plane).map(|ch| ch.iter().sum()).collect();
                    acc(*b, Tensor::new(self.shape(*b).to_vec(), gb).unwrap());
                }
            }
            Op::LeakyRelu { x, slope, gain } => {
                let gx = g.zip_map(self.value(*x), |gv, xv| gv * gain * if xv > 0.0 { 1.0 } else { *slope });
                acc(*x, gx);
            }
            Op::Upsample2x(x) => {
                let s = self.shape(*x);
                let gx = kernels::upsample2x_adjoint(g.data(), s[0], s[1], s[2]);
                acc(*x, Tensor::new(s.to_vec(), gx).unwrap());
            }
            Op::AvgPool2x(x) => {
                let s = self.shape(*x);
                let gx = kernels::avg_pool2x_adjoint(g.data(), s[0], s[1], s[2]);
                acc(*x, Tensor::new(s.to_vec(), gx).unwrap());
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    if self.needs(*p) {
                        let slice = g.data()[offset..offset + n].to_vec();
                        acc(*p, Tensor::new(self.shape(*p).to_vec(), slice).unwrap());
                    }
                    offset += n;
                }
            }
            Op::Modulate { w, s, eps } => {
                let wv = self.value(*w);
                let sv = self.value(*s).data();
                let ws = wv.shape();
                let taps = ws[2] * ws[3];
                let per_out = ws[1] * taps;
                // Gradient w.r.t. the modulated (pre-demodulation) weight.
                let mut gmod = vec![0.0; wv.len()];
                for (o, gm) in gmod.chunks_mut(per_out).enumerate() {
                    let base = &wv.data()[o * per_out..(o + 1) * per_out];
                    let go = &g.data()[o * per_out..(o + 1) * per_out];
                    let modulated = |idx: usize| base[idx] * sv[idx / taps];
                    match eps {
                        None => gm.copy_from_slice(go),
                        Some(e) => {
                            let ss: f64 = (0..per_out).map(|i| modulated(i).powi(2)).sum();
                            let d = 1.0 / (ss + e).sqrt();
                            let dot: f64 = (0..per_out).map(|i| go[i] * modulated(i)).sum();
                            let d3 = d * d * d;
                            for (i, v) in gm.iter_mut().enumerate() {
                                *v = d * go[i] - d3 * dot * modulated(i);
                            }
                        }
                    }
                }
                if self.needs(*w) {
                    let gw = Tensor::from_fn(ws, |i| gmod[i] * sv[(i % per_out) / taps]);
                    acc(*w, gw);
                }
                if self.needs(*s) {
                    let mut gs = vec![0.0; ws[1]];
                    for (i, (gm, wv)) in gmod.iter().zip(wv.data()).enumerate() {
                        gs[(i % per_out) / taps] += gm * wv;
                    }
                    acc(*s, Tensor::new(self.shape(*s).to_vec(), gs).unwrap());
                }
            }
            Op::NormalizeRms { x, eps } => {
                let xs = self.value(*x);
                let n = xs.len() as f64;
                let r = 1.0 / (xs.sum_squares() / n + eps).sqrt();
                let dot: f64 = g.data().iter().zip(xs.data()).map(|(a, b)| a * b).sum();
                let k = r * r * r * dot / n;
                acc(*x, g.zip_map(xs, |gv, xv| r * gv - k * xv));
            }
            Op::MeanAbsDiff(a, b) => {
                let scale = g.item() / self.value(*a).len() as f64;
                let sign = self.value(*a).zip_map(self.value(*b), |x, y| {
                    if x > y {
                        scale
                    } else if x < y {
                        -scale
                    } else {
                        0.0
                    }
                });
                if self.needs(*b) {
                    acc(*b, sign.map(|v| -v));
                }
                acc(*a, sign);
            }
            Op::RmsDiff(a, b) => {
                let r = node.value.item();
                if r > 0.0 {
                    let scale = g.item() / (self.value(*a).len() as f64 * r);
                    let d = self.value(*a).zip_map(self.value(*b), |x, y| (x - y) * scale);
                    if self.needs(*b) {
                        acc(*b, d.map(|v| -v));
                    }
                    acc(*a, d);
                }
            }
            Op::Softplus(x) => acc(*x, g.zip_map(self.value(*x), |gv, xv| gv * sigmoid(xv))),
            Op::Sum(x) => acc(*x, Tensor::full(self.shape(*x), g.item())),
        }
    }
}

/// Overflow-safe `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x == f64::INFINITY {
        return f64::INFINITY;
    }
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(shape: &[usize], seed: u64) -> Tensor {
        let mut s = seed;
        Tensor::from_fn(shape, |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    /// Central differences of `f` w.r.t. every entry of `x`, compared to the
    /// analytic gradient of the same scalar graph.
    fn check(x: Tensor, build: impl Fn(&mut Graph, Var) -> Var) {
        let mut g = Graph::new();
        let v = g.variable(x.clone());
        let out = build(&mut g, v);
        let grads = g.backward(out);
        let analytic = grads.get(v).unwrap().clone();
        let eval = |t: Tensor| {
            let mut g = Graph::new();
            let v = g.variable(t);
            let out = build(&mut g, v);
            g.value(out).item()
        };
        let h = 1e-6;
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            let fd = (eval(p) - eval(m)) / (2.0 * h);
            let a = analytic.data()[i];
            let err = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-4);
            assert!(err < 1e-5, "entry {i}: analytic {a} vs fd {fd}");
        }
    }

    #[test]
    fn conv_and_bias_grads() {
        let w = seq(&[3, 2, 3, 3], 1);
        let b = seq(&[3], 2);
        let tgt = seq(&[3, 3, 3], 3);
        check(seq(&[2, 5, 5], 4), |g, x| {
            let w = g.constant(w.clone());
            let b = g.constant(b.clone());
            let y = g.conv2d(x, w, 2, 1);
            let y = g.channel_bias(y, b);
            let t = g.constant(tgt.clone());
            let d = g.mul(y, t);
            g.sum(d)
        });
        let x = seq(&[2, 5, 5], 4);
        check(seq(&[3, 2, 3, 3], 5), |g, w| {
            let x = g.constant(x.clone());
            let y = g.conv2d(x, w, 1, 1);
            let y = g.leaky_relu(y, 0.2, 2f64.sqrt());
            let y = g.softplus(y);
            g.sum(y)
        });
    }

    #[test]
    fn modulation_grads() {
        let style = seq(&[4], 6).map(|v| v + 1.5);
        check(seq(&[3, 4, 3, 3], 7), |g, w| {
            let s = g.constant(style.clone());
            let m = g.modulate(w, s, Some(1e-8));
            let t = g.constant(seq(&[3, 4, 3, 3], 8));
            let p = g.mul(m, t);
            g.sum(p)
        });
        let weight = seq(&[3, 4, 1, 1], 9);
        check(style.clone(), |g, s| {
            let w = g.constant(weight.clone());
            let m = g.modulate(w, s, Some(1e-8));
            let t = g.constant(seq(&[3, 4, 1, 1], 10));
            let p = g.mul(m, t);
            g.sum(p)
        });
        check(style, |g, s| {
            let w = g.constant(weight.clone());
            let m = g.modulate(w, s, None);
            let m = g.softplus(m);
            g.sum(m)
        });
    }

    #[test]
    fn resampling_and_concat_grads() {
        let other = seq(&[1, 4, 4], 11);
        let t = seq(&[3, 2, 2], 12);
        check(seq(&[2, 4, 4], 13), |g, x| {
            let o = g.constant(other.clone());
            let c = g.concat(&[x, o]);
            let u = g.upsample2x(c);
            let p = g.avg_pool2x(u);
            let p = g.avg_pool2x(p);
            let t = g.constant(t.clone());
            let d = g.rms_diff(p, t);
            g.scale(d, 3.0)
        });
    }

    #[test]
    fn linear_norm_and_l1_grads() {
        let w = seq(&[3, 5], 14);
        let b = seq(&[3], 15);
        let t = seq(&[3], 16);
        check(seq(&[5], 17), |g, x| {
            let n = g.normalize_rms(x, 1e-8);
            let w = g.constant(w.clone());
            let b = g.constant(b.clone());
            let y = g.linear(n, w, Some(b));
            let t = g.constant(t.clone());
            g.mean_abs_diff(y, t)
        });
        let x = seq(&[5], 18);
        check(seq(&[3, 5], 19), |g, w| {
            let x = g.constant(x.clone());
            let y = g.linear(x, w, None);
            let r = g.reshape(y, &[3, 1, 1]);
            let y2 = g.sub(r, r);
            let y3 = g.add(r, y2);
            let s = g.softplus(y3);
            g.sum(s)
        });
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::full(&[2], 1.0));
        let b = g.variable(Tensor::full(&[2], 2.0));
        let c = g.mul(a, b);
        let s = g.sum(c);
        let grads = g.backward(s);
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(b).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn softplus_is_overflow_safe() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(-1000.0), 0.0);
        assert_eq!(softplus(1000.0), 1000.0);
        assert_eq!(softplus(f64::NEG_INFINITY), 0.0);
    }
}
