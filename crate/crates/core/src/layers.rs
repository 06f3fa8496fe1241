//! Building blocks shared by the generator, encoder and discriminator.
//!
//! Each layer comes as an `init_*` function that creates its named tensors
//! and a forward function that reads them back from a [`Bound`] set.
//! Weights are stored unit-normal and scaled by `1/sqrt(fan_in)` at run time.

use crate::autograd::{Graph, Var};
use crate::params::{Bound, ParamStore};
use crate::rng::GpenRng;

pub const LRELU_SLOPE: f64 = 0.2;
pub const LRELU_GAIN: f64 = std::f64::consts::SQRT_2;
pub const DEMOD_EPS: f64 = 1e-8;

pub fn lrelu(g: &mut Graph, x: Var) -> Var {
    g.leaky_relu(x, LRELU_SLOPE, LRELU_GAIN)
}

pub fn init_dense(store: &mut ParamStore, rng: &mut GpenRng, name: &str, inputs: usize, outputs: usize, bias_init: f64) {
    store.init_normal(format!("{name}.weight"), &[outputs, inputs], rng);
    store.init_const(format!("{name}.bias"), &[outputs], bias_init);
}

/// Fully connected layer on a flat vector, optionally followed by leaky ReLU.
pub fn dense(g: &mut Graph, p: &Bound, name: &str, x: Var, activate: bool) -> Var {
    let w = p.var(&format!("{name}.weight"));
    let fan_in = g.shape(w)[1];
    let w = g.scale(w, 1.0 / (fan_in as f64).sqrt());
    let y = g.linear(x, w, Some(p.var(&format!("{name}.bias"))));
    if activate {
        lrelu(g, y)
    } else {
        y
    }
}

pub fn init_conv(store: &mut ParamStore, rng: &mut GpenRng, name: &str, inputs: usize, outputs: usize, kernel: usize, bias: bool) {
    store.init_normal(format!("{name}.weight"), &[outputs, inputs, kernel, kernel], rng);
    if bias {
        store.init_const(format!("{name}.bias"), &[outputs], 0.0);
    }
}

/// Plain convolution with "same" zero padding (halved output for stride 2).
pub fn conv(g: &mut Graph, p: &Bound, name: &str, x: Var, stride: usize, activate: bool) -> Var {
    let w = p.var(&format!("{name}.weight"));
    let s = g.shape(w).to_vec();
    let w = g.scale(w, 1.0 / ((s[1] * s[2] * s[3]) as f64).sqrt());
    let mut y = g.conv2d(x, w, stride, s[2] / 2);
    if let Some(b) = p.try_var(&format!("{name}.bias")) {
        y = g.channel_bias(y, b);
    }
    if activate {
        lrelu(g, y)
    } else {
        y
    }
}

/// Modulated convolution: an affine map of the style vector scales the
/// weight per input channel, optionally followed by demodulation.
pub fn init_mod_conv(
    store: &mut ParamStore,
    rng: &mut GpenRng,
    name: &str,
    style_dim: usize,
    inputs: usize,
    outputs: usize,
    kernel: usize,
) {
    // Affine bias starts at 1 so initial styles are near identity.
    init_dense(store, rng, &format!("{name}.affine"), style_dim, inputs, 1.0);
    init_conv(store, rng, name, inputs, outputs, kernel, true);
}

/// `x` convolved with `weight` modulated by `style` (one scale per input
/// channel) and, when `demodulate`, renormalized per output channel.
pub fn mod_demod_conv(
    g: &mut Graph,
    x: Var,
    style: Var,
    weight: Var,
    bias: Option<Var>,
    eps: f64,
    demodulate: bool,
) -> Var {
    let k = g.shape(weight)[2];
    let w = g.modulate(weight, style, demodulate.then_some(eps));
    let y = g.conv2d(x, w, 1, k / 2);
    match bias {
        Some(b) => g.channel_bias(y, b),
        None => y,
    }
}

pub fn mod_conv(g: &mut Graph, p: &Bound, name: &str, x: Var, w_style: Var, demodulate: bool) -> Var {
    let style = dense(g, p, &format!("{name}.affine"), w_style, false);
    let mut weight = p.var(&format!("{name}.weight"));
    if !demodulate {
        let s = g.shape(weight).to_vec();
        weight = g.scale(weight, 1.0 / ((s[1] * s[2] * s[3]) as f64).sqrt());
    }
    let bias = p.var(&format!("{name}.bias"));
    mod_demod_conv(g, x, style, weight, Some(bias), DEMOD_EPS, demodulate)
}

/// Residual stage halving resolution: two 3x3 convs (the second strided)
/// plus a pooled 1x1 skip, summed and scaled by `1/sqrt(2)`.
pub fn init_down_block(store: &mut ParamStore, rng: &mut GpenRng, name: &str, inputs: usize, outputs: usize) {
    init_conv(store, rng, &format!("{name}.conv0"), inputs, inputs, 3, true);
    init_conv(store, rng, &format!("{name}.conv1"), inputs, outputs, 3, true);
    init_conv(store, rng, &format!("{name}.skip"), inputs, outputs, 1, false);
}

pub fn down_block(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Var {
    let h = conv(g, p, &format!("{name}.conv0"), x, 1, true);
    let h = conv(g, p, &format!("{name}.conv1"), h, 2, true);
    let pooled = g.avg_pool2x(x);
    let skip = conv(g, p, &format!("{name}.skip"), pooled, 1, false);
    let sum = g.add(h, skip);
    g.scale(sum, std::f64::consts::FRAC_1_SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::tensor::Tensor;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn unit_demodulation_passes_input_through() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[1, 3, 3], |i| i as f64 * 0.1));
        let s = g.constant(Tensor::full(&[1], 1.0));
        let w = g.constant(Tensor::full(&[1, 1, 1, 1], 2.0));
        let y = mod_demod_conv(&mut g, x, s, w, None, 1e-8, true);
        // 2 / sqrt(4 + 1e-8)
        let eff = 2.0 / (4.0f64 + 1e-8).sqrt();
        assert!((eff - 1.0).abs() < 1e-8);
        for (a, b) in g.value(y).data().iter().zip(g.value(x).data()) {
            assert!((a - eff * b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_style_leaves_bias_only() {
        let mut rng = seeded(2);
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[3, 4, 4], |_| StandardNormal.sample(&mut rng)));
        let s = g.constant(Tensor::zeros(&[3]));
        let w = g.constant(Tensor::from_fn(&[2, 3, 3, 3], |_| StandardNormal.sample(&mut rng)));
        let b = g.constant(Tensor::new(vec![2], vec![0.5, -1.0]).unwrap());
        let y = mod_demod_conv(&mut g, x, s, w, Some(b), 1e-8, true);
        let v = g.value(y);
        assert!(v.data()[..16].iter().all(|&a| a == 0.5));
        assert!(v.data()[16..].iter().all(|&a| a == -1.0));
    }

    #[test]
    fn demodulated_filters_have_unit_norm() {
        let mut rng = seeded(3);
        let mut g = Graph::new();
        let w = g.constant(Tensor::from_fn(&[5, 6, 3, 3], |_| StandardNormal.sample(&mut rng)));
        let s = g.constant(Tensor::from_fn(&[6], |_| { let n: f64 = StandardNormal.sample(&mut rng); 1.0 + 0.3 * n }));
        let m = g.modulate(w, s, Some(1e-8));
        for filt in g.value(m).data().chunks(54) {
            let n: f64 = filt.iter().map(|v| v * v).sum();
            assert!(n > 1.0 - 1e-3 && n <= 1.0, "{n}");
        }
    }
}
