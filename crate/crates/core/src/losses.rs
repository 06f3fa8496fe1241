//! Training objectives: logistic adversarial losses, the L1 content loss,
//! discriminator feature matching, and their weighted total.

use crate::autograd::{softplus, Graph, Var};
use crate::error::{invalid, Result};
use crate::image::Image;
use crate::tensor::Tensor;

/// Weights of the content (`alpha`) and feature matching (`beta`) terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.02 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return invalid(format!("loss weights must be non-negative, got {self:?}"));
        }
        Ok(())
    }
}

/// Non-saturating generator loss `ln(1 + e^{-d})`.
pub fn adversarial_loss_g(d_fake: f64) -> f64 {
    softplus(-d_fake)
}

/// Discriminator logistic loss `ln(1 + e^{-d_real}) + ln(1 + e^{d_fake})`.
pub fn adversarial_loss_d(d_real: f64, d_fake: f64) -> f64 {
    softplus(-d_real) + softplus(d_fake)
}

/// Mean absolute difference over all channel-pixels.
pub fn content_loss(generated: &Image, target: &Image) -> Result<f64> {
    generated.mean_abs_diff(target)
}

/// Sum over layers of `||real - fake||_2 / sqrt(n_elements)`.
pub fn feature_matching_loss(real: &[Tensor], fake: &[Tensor]) -> Result<f64> {
    if real.len() != fake.len() {
        return invalid(format!("feature lists differ in length: {} vs {}", real.len(), fake.len()));
    }
    let mut total = 0.0;
    for (i, (r, f)) in real.iter().zip(fake).enumerate() {
        if r.shape() != f.shape() {
            return invalid(format!("feature layer {i} shapes differ: {:?} vs {:?}", r.shape(), f.shape()));
        }
        let ss: f64 = r.data().iter().zip(f.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        total += (ss / r.len() as f64).sqrt();
    }
    Ok(total)
}

pub fn total_loss(l_a: f64, l_c: f64, l_f: f64, weights: &LossWeights) -> f64 {
    l_a + weights.alpha * l_c + weights.beta * l_f
}

// Graph counterparts of the functions above.

pub fn adversarial_g(g: &mut Graph, d_fake: Var) -> Var {
    let neg = g.scale(d_fake, -1.0);
    let sp = g.softplus(neg);
    g.sum(sp)
}

pub fn adversarial_d(g: &mut Graph, d_real: Var, d_fake: Var) -> Var {
    let neg = g.scale(d_real, -1.0);
    let a = g.softplus(neg);
    let b = g.softplus(d_fake);
    let s = g.add(a, b);
    g.sum(s)
}

/// L1 on the `[0,1]` scale for signed-domain inputs.
pub fn content(g: &mut Graph, generated_signed: Var, target_signed: Var) -> Var {
    let d = g.mean_abs_diff(generated_signed, target_signed);
    g.scale(d, 0.5)
}

pub fn feature_matching(g: &mut Graph, real: &[Var], fake: &[Var]) -> Result<Var> {
    if real.len() != fake.len() || real.is_empty() {
        return invalid(format!("feature lists differ in length: {} vs {}", real.len(), fake.len()));
    }
    let mut terms = Vec::with_capacity(real.len());
    for (&r, &f) in real.iter().zip(fake) {
        if g.shape(r) != g.shape(f) {
            return invalid(format!("feature shapes differ: {:?} vs {:?}", g.shape(r), g.shape(f)));
        }
        terms.push(g.rms_diff(f, r));
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t);
    }
    Ok(acc)
}

pub fn total(g: &mut Graph, l_a: Var, l_c: Var, l_f: Var, weights: &LossWeights) -> Var {
    let c = g.scale(l_c, weights.alpha);
    let f = g.scale(l_f, weights.beta);
    let s = g.add(l_a, c);
    g.add(s, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn generator_adversarial_values() {
        assert!((adversarial_loss_g(0.0) - LN_2).abs() < 1e-12);
        assert!((adversarial_loss_g(-2.0) - (1.0 + 2f64.exp()).ln()).abs() < 1e-12);
        assert!((adversarial_loss_g(-2.0) - 2.126928).abs() < 1e-6);
        assert_eq!(adversarial_loss_g(f64::INFINITY), 0.0);
        let mut prev = f64::INFINITY;
        for i in -50..50 {
            let v = adversarial_loss_g(i as f64 * 0.7);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn discriminator_adversarial_values() {
        assert!((adversarial_loss_d(0.0, 0.0) - 2.0 * LN_2).abs() < 1e-12);
        assert_eq!(adversarial_loss_d(f64::INFINITY, f64::NEG_INFINITY), 0.0);
        let expect = 2.0 * (1.0 + (-1.0f64).exp()).ln();
        assert!((adversarial_loss_d(1.0, -1.0) - expect).abs() < 1e-12);
        assert!((expect - 0.626523).abs() < 1e-6);
    }

    #[test]
    fn softplus_identity() {
        for i in -8000..=8000 {
            let d = i as f64 / 100.0;
            assert!((softplus(-d) - softplus(d) + d).abs() < 1e-6, "d = {d}");
        }
    }

    #[test]
    fn content_examples() {
        let a = Image::filled(3, 4, 4, 0.3);
        assert_eq!(content_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(content_loss(&Image::filled(3, 2, 2, 0.0), &Image::filled(3, 2, 2, 1.0)).unwrap(), 1.0);
        let half = Image::from_fn(3, 2, 2, |_, y, _| if y == 0 { 0.5 } else { 0.0 });
        assert!((content_loss(&half, &Image::filled(3, 2, 2, 0.0)).unwrap() - 0.25).abs() < 1e-15);
        assert!(content_loss(&a, &Image::filled(3, 2, 2, 0.0)).is_err());
    }

    #[test]
    fn feature_matching_examples() {
        let r = Tensor::new(vec![2], vec![0.0, 0.0]).unwrap();
        let f = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        assert_eq!(feature_matching_loss(&[f.clone()], &[f.clone()]).unwrap(), 0.0);
        let one = feature_matching_loss(&[r.clone()], &[f.clone()]).unwrap();
        assert!((one - (25.0f64 / 2.0).sqrt()).abs() < 1e-12);
        assert!((one - 3.535534).abs() < 1e-6);
        let r2 = Tensor::full(&[1, 2, 2], 1.0);
        let f2 = Tensor::full(&[1, 2, 2], 3.0);
        let two = feature_matching_loss(&[r.clone(), r2.clone()], &[f.clone(), f2.clone()]).unwrap();
        assert!((two - (one + 2.0)).abs() < 1e-12);
        assert!(feature_matching_loss(&[r.clone()], &[r2]).is_err());
        assert!(feature_matching_loss(&[r], &[]).is_err());
    }

    #[test]
    fn total_examples() {
        let w = LossWeights::default();
        assert!((total_loss(1.0, 2.0, 3.0, &w) - 3.06).abs() < 1e-9);
        assert_eq!(total_loss(0.7, 0.0, 0.0, &w), 0.7);
        let nb = LossWeights { beta: 0.0, ..w };
        assert_eq!(total_loss(0.5, 0.25, 9.0, &nb), 0.75);
    }

    #[test]
    fn graph_versions_agree() {
        let mut g = Graph::new();
        let d = g.constant(Tensor::scalar(-0.4));
        let la = adversarial_g(&mut g, d);
        assert!((g.value(la).item() - adversarial_loss_g(-0.4)).abs() < 1e-15);
        let dr = g.constant(Tensor::scalar(1.3));
        let ld = adversarial_d(&mut g, dr, d);
        assert!((g.value(ld).item() - adversarial_loss_d(1.3, -0.4)).abs() < 1e-15);
        let a = Image::from_fn(3, 3, 3, |c, y, x| (c + y + x) as f64 / 7.0);
        let b = Image::filled(3, 3, 3, 0.4);
        let av = g.constant(a.to_signed_tensor());
        let bv = g.constant(b.to_signed_tensor());
        let lc = content(&mut g, av, bv);
        assert!((g.value(lc).item() - content_loss(&a, &b).unwrap()).abs() < 1e-12);
        let lf = feature_matching(&mut g, &[av], &[bv]).unwrap();
        let direct = feature_matching_loss(&[a.to_signed_tensor()], &[b.to_signed_tensor()]).unwrap();
        assert!((g.value(lf).item() - direct).abs() < 1e-12);
        let w = LossWeights::default();
        let t = total(&mut g, la, lc, lf, &w);
        let expect = total_loss(g.value(la).item(), g.value(lc).item(), g.value(lf).item(), &w);
        assert_eq!(g.value(t).item(), expect);
    }
}
