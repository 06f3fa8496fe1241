//! Fast invariant battery behind `gpen selftest`.

use rand_distr::{Distribution, StandardNormal};

use crate::autograd::{softplus, Graph};
use crate::checkpoint::Checkpoint;
use crate::degradation::{gaussian_kernel, gaussian_kernel_size, motion_kernel, BlurKernel};
use crate::encoder::LatentSpace;
use crate::error::{invalid, Result};
use crate::gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
use crate::layers::{mod_demod_conv, DEMOD_EPS};
use crate::losses::{adversarial_loss_g, total_loss, LossWeights};
use crate::model::{embed_prior, GanPrior, GpenConfig};
use crate::params::{ParamStore, Part};
use crate::prior::{GeneratorConfig, NoiseMode};
use crate::rng::seeded;
use crate::tensor::Tensor;
use crate::train::{discriminator_loss_graph, generator_loss_graph};

/// Deliberate defects used to prove the battery can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Demodulate with `-eps` instead of `+eps`.
    DemodEpsSign,
}

impl std::str::FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "demod-eps-sign" => Ok(Fault::DemodEpsSign),
            other => Err(format!("unknown fault {other:?} (known: demod-eps-sign)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// The miniature generator used by gradient checks.
pub fn mini_config(noise_mode: NoiseMode) -> GeneratorConfig {
    GeneratorConfig { resolution: 8, channel_base: 16, channel_max: 4, mapping_depth: 2, latent_dim: 8, noise_mode }
}

fn random_signed(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = seeded(seed);
    Tensor::from_fn(shape, |_| {
        let n: f64 = StandardNormal.sample(&mut rng);
        (0.5 * n).tanh()
    })
}

/// Checks every parameter gradient of the fine-tuning total loss, and of
/// the discriminator loss, on a miniature model.
pub fn mini_gradient_gate(noise_mode: NoiseMode, latent_space: LatentSpace, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let gen = mini_config(noise_mode);
    let cfg = GpenConfig { generator: gen.clone(), latent_space };
    let prior = GanPrior::init(gen.clone(), 11)?;
    let model = embed_prior(&prior, &cfg, 12)?;
    let r = gen.resolution;
    let input = random_signed(&[3, r, r], 13);
    let target = random_signed(&[3, r, r], 14);
    let weights = LossWeights::default();
    let mut report = check_gradients(
        &model.params,
        |g, p| {
            let x = g.constant(input.clone());
            let t = g.constant(target.clone());
            Ok(generator_loss_graph(g, p, &cfg, x, t, &weights)?.total)
        },
        opts,
    )?;
    let fake = random_signed(&[3, r, r], 15);
    let disc: ParamStore = model.params.part(Part::Discriminator);
    report.merge(check_gradients(
        &disc,
        |g, p| {
            let real = g.constant(target.clone());
            let f = g.constant(fake.clone());
            discriminator_loss_graph(g, p, &gen, real, f)
        },
        opts,
    )?);
    Ok(report)
}

/// Per-output-channel statistics of a demodulated convolution on
/// unit-variance input with unit-variance weights.
#[derive(Clone, Copy, Debug)]
pub struct DemodStats {
    pub min_std: f64,
    pub max_std: f64,
    pub min_norm: f64,
    pub max_norm: f64,
    pub activations_per_channel: usize,
}

pub fn demodulation_stats(eps: f64, seed: u64) -> DemodStats {
    let (cin, cout, side) = (16, 4, 104);
    let mut rng = seeded(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let x = Tensor::from_fn(&[cin, side, side], |_| normal());
    let w = Tensor::from_fn(&[cout, cin, 3, 3], |_| normal());
    let s = Tensor::from_fn(&[cin], |_| 1.0 + 0.2 * normal());
    let mut g = Graph::new();
    let (xv, wv, sv) = (g.constant(x), g.constant(w), g.constant(s));
    let y = mod_demod_conv(&mut g, xv, sv, wv, None, eps, true);
    let demod = g.modulate(wv, sv, Some(eps));
    let n = side * side;
    let mut stats = DemodStats {
        min_std: f64::INFINITY,
        max_std: 0.0,
        min_norm: f64::INFINITY,
        max_norm: 0.0,
        activations_per_channel: n,
    };
    for ch in g.value(y).data().chunks(n) {
        let mean = ch.iter().sum::<f64>() / n as f64;
        let std = (ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        stats.min_std = stats.min_std.min(std);
        stats.max_std = stats.max_std.max(std);
    }
    for f in g.value(demod).data().chunks(cin * 9) {
        let norm: f64 = f.iter().map(|v| v * v).sum();
        stats.min_norm = stats.min_norm.min(norm);
        stats.max_norm = stats.max_norm.max(norm);
    }
    stats
}

fn check_kernels() -> Result<String> {
    let mut count = 0;
    let mut worst: f64 = 0.0;
    let mut record = |k: &BlurKernel| {
        worst = worst.max((k.taps().iter().sum::<f64>() - 1.0).abs());
        count += 1;
    };
    for i in 0..=30 {
        let sigma = 0.5 + 7.5 * i as f64 / 30.0;
        let k = gaussian_kernel(sigma, gaussian_kernel_size(sigma))?;
        let n = k.size();
        for r in 0..n {
            for c in 0..n {
                let t = k.tap(r, c);
                if t != k.tap(c, r) || t != k.tap(n - 1 - r, c) || t != k.tap(r, n - 1 - c) {
                    return invalid(format!("gaussian sigma={sigma} is not symmetric at ({r},{c})"));
                }
            }
        }
        record(&k);
    }
    for len in (5..=21).step_by(2) {
        for a in 0..12 {
            record(&motion_kernel(len as f64, a as f64 * std::f64::consts::PI / 12.0, len)?);
        }
    }
    if worst > 1e-6 {
        return invalid(format!("kernel sum deviates from 1 by {worst:e}"));
    }
    Ok(format!("{count} kernels, max |sum-1| = {worst:.1e}"))
}

fn check_losses() -> Result<String> {
    let e0 = (adversarial_loss_g(0.0) - std::f64::consts::LN_2).abs();
    if e0 > 1e-6 {
        return invalid(format!("adversarial_loss_g(0) off by {e0:e}"));
    }
    let e1 = (total_loss(1.0, 2.0, 3.0, &LossWeights::default()) - 3.06).abs();
    if e1 > 1e-9 {
        return invalid(format!("total_loss(1,2,3) off by {e1:e}"));
    }
    let mut worst: f64 = 0.0;
    for i in -1600..=1600 {
        let d = i as f64 * 0.05;
        worst = worst.max((softplus(-d) - softplus(d) + d).abs());
    }
    if worst > 1e-6 {
        return invalid(format!("softplus identity off by {worst:e}"));
    }
    Ok(format!("softplus identity max error {worst:.1e}"))
}

fn check_demod(eps: f64) -> (Result<String>, Result<String>) {
    let s = demodulation_stats(eps, 5);
    let var = if (0.8..=1.2).contains(&s.min_std) && (0.8..=1.2).contains(&s.max_std) {
        Ok(format!("output std in [{:.3}, {:.3}] over {} activations per channel", s.min_std, s.max_std, s.activations_per_channel))
    } else {
        invalid(format!("output std in [{:.3}, {:.3}], expected within [0.8, 1.2]", s.min_std, s.max_std))
    };
    let norm = if s.min_norm > 1.0 - 1e-3 && s.max_norm <= 1.0 {
        Ok(format!("filter norms in [{:.12}, {:.12}]", s.min_norm, s.max_norm))
    } else {
        invalid(format!("filter norms in [{:.12}, {:.12}], expected within (1-1e-3, 1]", s.min_norm, s.max_norm))
    };
    (var, norm)
}

fn check_gradients_mini() -> Result<String> {
    let r = mini_gradient_gate(NoiseMode::Concat, LatentSpace::Z, &GradCheckOptions::default())?;
    if !r.passed() {
        let m = &r.mismatches[0];
        return invalid(format!(
            "{} of {} entries disagree; first {}[{}]: analytic {:e} vs numeric {:e}",
            r.mismatches.len(),
            r.checked,
            m.name,
            m.index,
            m.analytic,
            m.numeric
        ));
    }
    Ok(format!("{} entries, max rel err {:.1e}", r.checked, r.max_rel_err))
}

fn check_checkpoint() -> Result<String> {
    let cfg = mini_config(NoiseMode::Concat);
    let model = embed_prior(&GanPrior::init(cfg.clone(), 1)?, &GpenConfig::new(cfg), 2)?;
    let bytes = Checkpoint::from_model(&model, 3, 4).to_bytes();
    let back = Checkpoint::from_bytes(&bytes)?;
    if back.to_bytes() != bytes || back.into_model()? != model {
        return invalid("checkpoint round trip changed the model");
    }
    if Checkpoint::from_bytes(&bytes[..bytes.len() / 2]).is_ok() {
        return invalid("a truncated checkpoint was accepted");
    }
    Ok(format!("{} bytes round-tripped", bytes.len()))
}

/// Runs every check, optionally with a fault injected.
pub fn run_selftest(fault: Option<Fault>) -> Vec<CheckResult> {
    let eps = if fault == Some(Fault::DemodEpsSign) { -DEMOD_EPS } else { DEMOD_EPS };
    let (var, norm) = check_demod(eps);
    let checks: Vec<(&'static str, Result<String>)> = vec![
        ("kernel-normalization", check_kernels()),
        ("loss-identities", check_losses()),
        ("demodulation-variance", var),
        ("demodulation-norm", norm),
        ("gradient-check", check_gradients_mini()),
        ("checkpoint-roundtrip", check_checkpoint()),
    ];
    checks
        .into_iter()
        .map(|(name, r)| match r {
            Ok(detail) => CheckResult { name, passed: true, detail },
            Err(e) => CheckResult { name, passed: false, detail: e.to_string() },
        })
        .collect()
}
