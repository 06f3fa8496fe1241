//! The two training phases: GAN prior pretraining on HQ images and
//! fine-tuning of the full restoration network on degraded pairs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use log::{debug, info, warn};
use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::checkpoint::Checkpoint;
use crate::degradation::{degrade_seeded, load_hq, quantize_image, DegradationConfig, Manifest};
use crate::discriminator::{discriminator_forward, init_discriminator};
use crate::error::{invalid, GpenError, Result};
use crate::image::Image;
use crate::losses::{self, LossWeights};
use crate::model::{gpen_forward_graph, resize_input, FreezeFlags, GanPrior, GpenConfig, GpenModel};
use crate::optim::{Adam, AdamConfig};
use crate::params::{Bound, ParamStore, Part};
use crate::prior::{generator_forward, mapping_forward, sample_latent, GeneratorConfig, NoiseSet};
use crate::rng::{derive_seed, seeded, GpenRng};
use crate::tensor::Tensor;

/// Lazy R1 penalty on real images.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct R1Config {
    pub enabled: bool,
    pub gamma: f64,
    /// Applied every `interval` discriminator steps, scaled by `interval`.
    pub interval: usize,
}

impl Default for R1Config {
    fn default() -> Self {
        Self { enabled: true, gamma: 10.0, interval: 16 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr_encoder: f64,
    /// Encoder : decoder : discriminator learning-rate ratio.
    pub lr_ratio: [f64; 3],
    /// Generator and discriminator rate during pretraining.
    pub pretrain_lr: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub freeze: FreezeFlags,
    pub r1: R1Config,
    /// Write a checkpoint every this many steps (0 disables).
    pub checkpoint_every: usize,
    /// Re-degrade each HQ image per step instead of reusing the stored LQ.
    pub fresh_degradations: bool,
    /// Start fine-tuning from a freshly initialized discriminator.
    pub reinit_discriminator: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            lr_encoder: 0.002,
            lr_ratio: [100.0, 10.0, 1.0],
            pretrain_lr: 0.002,
            adam: AdamConfig::default(),
            batch_size: 1,
            seed: 0,
            loss_weights: LossWeights::default(),
            freeze: FreezeFlags::default(),
            r1: R1Config::default(),
            checkpoint_every: 0,
            fresh_degradations: true,
            reinit_discriminator: false,
        }
    }
}

impl TrainConfig {
    pub fn lr_encoder(&self) -> f64 {
        self.lr_encoder
    }

    pub fn lr_decoder(&self) -> f64 {
        self.lr_encoder / (self.lr_ratio[0] / self.lr_ratio[1])
    }

    pub fn lr_discriminator(&self) -> f64 {
        self.lr_encoder / (self.lr_ratio[0] / self.lr_ratio[2])
    }

    pub fn lr(&self, part: Part) -> f64 {
        match part {
            Part::Encoder => self.lr_encoder(),
            Part::Decoder => self.lr_decoder(),
            Part::Discriminator => self.lr_discriminator(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_encoder > 0.0) || !(self.pretrain_lr > 0.0) {
            return invalid("learning rates must be positive");
        }
        if self.lr_ratio.iter().any(|r| !(*r > 0.0)) {
            return invalid(format!("learning-rate ratio entries must be positive, got {:?}", self.lr_ratio));
        }
        if self.batch_size == 0 {
            return invalid("batch size must be at least 1");
        }
        if self.r1.enabled && (self.r1.interval == 0 || !(self.r1.gamma >= 0.0)) {
            return invalid("R1 needs a positive interval and a non-negative gamma");
        }
        self.adam.validate()?;
        self.loss_weights.validate()
    }

    fn r1_due(&self, d_step: usize) -> bool {
        self.r1.enabled && self.r1.gamma > 0.0 && d_step % self.r1.interval == 0
    }
}

/// Losses of one pretraining step (means over the batch).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainRecord {
    pub step: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub r1: Option<f64>,
}

/// Losses of one fine-tuning step (means over the batch).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FinetuneRecord {
    pub step: usize,
    pub l_a: f64,
    pub l_c: f64,
    pub l_f: f64,
    pub total: f64,
    pub loss_d: Option<f64>,
}

pub fn pretrain_log_text(records: &[PretrainRecord]) -> String {
    let mut s = String::from("step\tloss_d\tloss_g\tr1\n");
    for r in records {
        let r1 = r.r1.map_or("-".to_string(), |v| v.to_string());
        let _ = writeln!(s, "{}\t{}\t{}\t{}", r.step, r.loss_d, r.loss_g, r1);
    }
    s
}

/// Line-oriented training log; floats use shortest round-trip formatting.
pub fn finetune_log_text(records: &[FinetuneRecord]) -> String {
    let mut s = String::from("step\tl_a\tl_c\tl_f\ttotal\tloss_d\n");
    for r in records {
        let d = r.loss_d.map_or("-".to_string(), |v| v.to_string());
        let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}\t{}", r.step, r.l_a, r.l_c, r.l_f, r.total, d);
    }
    s
}

type Grads = BTreeMap<String, Tensor>;

fn accumulate(into: &mut Grads, from: Grads, weight: f64) {
    for (k, g) in from {
        match into.get_mut(&k) {
            Some(acc) => acc.axpy(weight, &g),
            None => {
                into.insert(k, g.map(|v| v * weight));
            }
        }
    }
}

fn grads_finite(grads: &Grads) -> bool {
    grads.values().all(Tensor::is_finite)
}

/// Scalar losses of a generator-side fine-tuning pass.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorLosses {
    pub l_a: Var,
    pub l_c: Var,
    pub l_f: Var,
    pub total: Var,
    pub restored: Var,
}

/// `L = L_A + alpha L_C + beta L_F` for one (input, target) pair, both
/// signed-domain `[3, R, R]`.
pub fn generator_loss_graph(
    g: &mut Graph,
    p: &Bound,
    config: &GpenConfig,
    input: Var,
    target: Var,
    weights: &LossWeights,
) -> Result<GeneratorLosses> {
    let gen_cfg = &config.generator;
    let restored = gpen_forward_graph(g, p, config, input)?;
    let fake = discriminator_forward(g, p, gen_cfg, restored)?;
    let real = discriminator_forward(g, p, gen_cfg, target)?;
    let l_a = losses::adversarial_g(g, fake.score);
    let l_c = losses::content(g, restored, target);
    let l_f = losses::feature_matching(g, &real.features, &fake.features)?;
    let total = losses::total(g, l_a, l_c, l_f, weights);
    Ok(GeneratorLosses { l_a, l_c, l_f, total, restored })
}

/// Logistic discriminator loss on one real and one fake image.
pub fn discriminator_loss_graph(g: &mut Graph, p: &Bound, cfg: &GeneratorConfig, real: Var, fake: Var) -> Result<Var> {
    let r = discriminator_forward(g, p, cfg, real)?;
    let f = discriminator_forward(g, p, cfg, fake)?;
    Ok(losses::adversarial_d(g, r.score, f.score))
}

fn is_disc(name: &str) -> bool {
    Part::of(name) == Some(Part::Discriminator)
}

/// Discriminator parameter gradients of the logistic loss.
fn discriminator_step_grads(params: &ParamStore, cfg: &GeneratorConfig, real: &Tensor, fake: &Tensor) -> Result<(f64, Grads)> {
    let mut g = Graph::new();
    let p = Bound::new(&mut g, params, is_disc);
    let real = g.constant(real.clone());
    let fake = g.constant(fake.clone());
    let loss = discriminator_loss_graph(&mut g, &p, cfg, real, fake)?;
    let grads = g.backward(loss);
    Ok((g.value(loss).item(), p.collect(&grads)))
}

/// Score and the gradients of `D(image)` with respect to the image and,
/// optionally, the discriminator parameters.
fn score_grads(params: &ParamStore, cfg: &GeneratorConfig, image: &Tensor, want_params: bool) -> Result<(Tensor, Grads)> {
    let mut g = Graph::new();
    let p = Bound::new(&mut g, params, |n| want_params && is_disc(n));
    let x = g.variable(image.clone());
    let out = discriminator_forward(&mut g, &p, cfg, x)?;
    let mut grads = g.backward(out.score);
    let gx = grads.take(x).expect("input is a variable");
    let gp = if want_params { p.collect(&grads) } else { Grads::new() };
    Ok((gx, gp))
}

/// R1 penalty `gamma/2 |grad_x D(x)|^2` and its parameter gradient.
///
/// The parameter gradient equals `gamma` times the mixed second derivative
/// of `D` applied to `g = grad_x D(x)`, which is evaluated as a central
/// difference of parameter gradients at `x +- eps g`.
pub fn r1_penalty(params: &ParamStore, cfg: &GeneratorConfig, real: &Tensor, gamma: f64) -> Result<(f64, Grads)> {
    let (gx, _) = score_grads(params, cfg, real, false)?;
    let penalty = 0.5 * gamma * gx.sum_squares();
    let peak = gx.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 || gamma == 0.0 {
        return Ok((penalty, Grads::new()));
    }
    let eps = 1e-4 / peak;
    let mut plus = real.clone();
    plus.axpy(eps, &gx);
    let mut minus = real.clone();
    minus.axpy(-eps, &gx);
    let (_, gp) = score_grads(params, cfg, &plus, true)?;
    let (_, gm) = score_grads(params, cfg, &minus, true)?;
    let k = gamma / (2.0 * eps);
    let grads = gp.into_iter().map(|(name, a)| {
        let b = &gm[&name];
        let t = a.zip_map(b, |x, y| k * (x - y));
        (name, t)
    });
    Ok((penalty, grads.collect()))
}

fn non_finite(step: usize, detail: String, snapshot: impl FnOnce() -> Checkpoint, dir: Option<&Path>) -> GpenError {
    if let Some(dir) = dir {
        let path = dir.join(format!("diagnostic_step{step:06}.ckpt"));
        match snapshot().save(&path) {
            Ok(()) => warn!("non-finite loss at step {step}; diagnostic checkpoint written to {}", path.display()),
            Err(e) => warn!("non-finite loss at step {step}; could not write diagnostic checkpoint: {e}"),
        }
    }
    GpenError::NonFiniteLoss { step, detail }
}

fn write_periodic(cfg: &TrainConfig, step: usize, dir: Option<&Path>, snapshot: impl FnOnce() -> Checkpoint) -> Result<()> {
    if let Some(dir) = dir {
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            let path = dir.join(format!("step{step:06}.ckpt"));
            snapshot().save(&path)?;
            debug!("checkpoint written to {}", path.display());
        }
    }
    Ok(())
}

fn apply_updates(params: &mut ParamStore, opt: &mut Adam, grads: &Grads, lr_of: impl Fn(Part) -> f64) {
    for part in Part::ALL {
        let prefix = part.prefix();
        let subset: Grads = grads.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(k, v)| (k.clone(), v.clone())).collect();
        if !subset.is_empty() {
            opt.step(params, &subset, lr_of(part));
        }
    }
}

/// Loads every readable HQ image in `dir` at the given resolution.
pub fn load_dataset(dir: &Path, resolution: usize) -> Result<Vec<Image>> {
    let mut images = Vec::new();
    for path in crate::image::list_images(dir)? {
        match load_hq(&path, resolution) {
            Ok(img) => images.push(img),
            Err(e) => warn!("skipping {}: {e}", path.display()),
        }
    }
    if images.is_empty() {
        return invalid(format!("no readable images in {}", dir.display()));
    }
    Ok(images)
}

fn generate(params: &ParamStore, cfg: &GeneratorConfig, rng: &mut GpenRng) -> Result<Tensor> {
    let z = sample_latent(cfg, rng);
    let noise = NoiseSet::sample(cfg, rng);
    let mut g = Graph::new();
    let p = Bound::all_constant(&mut g, params);
    let z = g.constant(z);
    let w = mapping_forward(&mut g, &p, cfg, z)?;
    let n = noise.bind(&mut g);
    let out = generator_forward(&mut g, &p, cfg, w, &n)?;
    Ok(g.value(out).clone())
}

/// Non-saturating generator loss on a fresh sample, with generator gradients.
fn generator_step_grads(params: &ParamStore, cfg: &GeneratorConfig, rng: &mut GpenRng) -> Result<(f64, Grads)> {
    let z = sample_latent(cfg, rng);
    let noise = NoiseSet::sample(cfg, rng);
    let mut g = Graph::new();
    let p = Bound::new(&mut g, params, |n| Part::of(n) == Some(Part::Decoder));
    let z = g.constant(z);
    let w = mapping_forward(&mut g, &p, cfg, z)?;
    let n = noise.bind(&mut g);
    let fake = generator_forward(&mut g, &p, cfg, w, &n)?;
    let d = discriminator_forward(&mut g, &p, cfg, fake)?;
    let loss = losses::adversarial_g(&mut g, d.score);
    let grads = g.backward(loss);
    Ok((g.value(loss).item(), p.collect(&grads)))
}

/// Adversarial pretraining of the GAN prior on HQ images.
///
/// Each step updates the discriminator on a real image and a fresh sample,
/// then the generator on another fresh sample. Starting parameters come
/// from `init` (or a fresh initialization from `config.seed`).
pub fn pretrain_gan(
    images: &[Image],
    gen_cfg: &GeneratorConfig,
    config: &TrainConfig,
    init: Option<GanPrior>,
    checkpoint_dir: Option<&Path>,
) -> Result<(GanPrior, Vec<PretrainRecord>)> {
    config.validate()?;
    gen_cfg.validate()?;
    if images.is_empty() {
        return invalid("pretraining needs at least one HQ image");
    }
    let r = gen_cfg.resolution;
    let reals: Vec<Tensor> = images.iter().map(|img| resize_input(img, r).map(|i| i.to_signed_tensor())).collect::<Result<_>>()?;
    let mut prior = match init {
        Some(p) => p,
        None => GanPrior::init(gen_cfg.clone(), config.seed)?,
    };
    let mut rng = seeded(derive_seed(config.seed, 0x7072_6574));
    let mut opt_g = Adam::new(config.adam);
    let mut opt_d = Adam::new(config.adam);
    let lr = config.pretrain_lr;
    let batch = config.batch_size;
    let mut log = Vec::with_capacity(config.steps);
    for step in 1..=config.steps {
        let snapshot = |p: &GanPrior| Checkpoint::from_prior(p, step as u64, config.seed);
        let mut d_grads = Grads::new();
        let mut loss_d = 0.0;
        let mut r1_value = None;
        for _ in 0..batch {
            let real = &reals[rng.random_range(0..reals.len())];
            let fake = generate(&prior.params, gen_cfg, &mut rng)?;
            let (l, gr) = discriminator_step_grads(&prior.params, gen_cfg, real, &fake)?;
            loss_d += l / batch as f64;
            accumulate(&mut d_grads, gr, 1.0 / batch as f64);
        }
        if config.r1_due(step - 1) {
            let real = &reals[rng.random_range(0..reals.len())];
            let (pen, gr) = r1_penalty(&prior.params, gen_cfg, real, config.r1.gamma)?;
            accumulate(&mut d_grads, gr, config.r1.interval as f64);
            r1_value = Some(pen);
        }
        if !loss_d.is_finite() || !grads_finite(&d_grads) || r1_value.is_some_and(|v: f64| !v.is_finite()) {
            return Err(non_finite(step, format!("discriminator loss {loss_d}"), || snapshot(&prior), checkpoint_dir));
        }
        opt_d.step(&mut prior.params, &d_grads, lr);

        let mut g_grads = Grads::new();
        let mut loss_g = 0.0;
        for _ in 0..batch {
            let (l, gr) = generator_step_grads(&prior.params, gen_cfg, &mut rng)?;
            loss_g += l / batch as f64;
            accumulate(&mut g_grads, gr, 1.0 / batch as f64);
        }
        if !loss_g.is_finite() || !grads_finite(&g_grads) {
            return Err(non_finite(step, format!("generator loss {loss_g}"), || snapshot(&prior), checkpoint_dir));
        }
        opt_g.step(&mut prior.params, &g_grads, lr);

        let rec = PretrainRecord { step, loss_d, loss_g, r1: r1_value };
        debug!("pretrain step {step}: loss_d={loss_d:.5} loss_g={loss_g:.5}");
        if step % 100 == 0 || step == config.steps {
            info!("pretrain step {step}/{}: loss_d={loss_d:.4} loss_g={loss_g:.4}", config.steps);
        }
        log.push(rec);
        write_periodic(config, step, checkpoint_dir, || snapshot(&prior))?;
    }
    Ok((prior, log))
}

/// One training pair held in memory.
#[derive(Clone, Debug)]
pub struct TrainPair {
    pub hq: Image,
    pub lq: Image,
    pub seed: u64,
}

/// Loads the HQ and LQ images referenced by a manifest.
pub fn load_pairs(manifest: &Manifest) -> Result<Vec<TrainPair>> {
    if manifest.entries.is_empty() {
        return invalid("the pair manifest is empty");
    }
    manifest
        .entries
        .iter()
        .map(|e| {
            Ok(TrainPair { hq: load_hq(&e.hq, manifest.resolution)?, lq: Image::load(&e.lq)?, seed: e.seed })
        })
        .collect()
}

/// Fine-tunes a restoration model on degraded pairs.
///
/// Per step: sample a pair, restore it, take one Adam step on encoder and
/// decoder for `L_A + alpha L_C + beta L_F` with their own learning rates,
/// then one discriminator step. Frozen parts are never modified.
pub fn finetune_gpen(
    mut model: GpenModel,
    pairs: &[TrainPair],
    degradation: &DegradationConfig,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(GpenModel, Vec<FinetuneRecord>)> {
    config.validate()?;
    if pairs.is_empty() {
        return invalid("fine-tuning needs at least one pair");
    }
    let r = model.resolution();
    if config.fresh_degradations {
        degradation.validate()?;
        if degradation.resolution != r {
            return invalid(format!("degradation resolution {} differs from model resolution {r}", degradation.resolution));
        }
    }
    if config.reinit_discriminator && !config.freeze.discriminator {
        model.params.remove_part(Part::Discriminator);
        model.params.extend(init_discriminator(&model.config.generator, &mut seeded(derive_seed(config.seed, 0x6469_7363)))?);
    }
    let targets: Vec<Tensor> = pairs.iter().map(|p| resize_input(&p.hq, r).map(|i| i.to_signed_tensor())).collect::<Result<_>>()?;
    let freeze = config.freeze;
    let train_g = |n: &str| match Part::of(n) {
        Some(Part::Encoder) => !freeze.encoder,
        Some(Part::Decoder) => !freeze.decoder,
        _ => false,
    };
    let any_g = !(freeze.encoder && freeze.decoder);
    let gen_cfg = model.config.generator.clone();
    let mut rng = seeded(derive_seed(config.seed, 0x6674_756e));
    let mut opt = Adam::new(config.adam);
    let batch = config.batch_size;
    let weights = config.loss_weights;
    let mut log = Vec::with_capacity(config.steps);
    for step in 1..=config.steps {
        let snapshot = |m: &GpenModel| Checkpoint::from_model(m, step as u64, config.seed);
        let mut g_grads = Grads::new();
        let mut d_grads = Grads::new();
        let (mut l_a, mut l_c, mut l_f, mut total, mut loss_d) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut last_real = None;
        for b in 0..batch {
            let idx = rng.random_range(0..pairs.len());
            let pair = &pairs[idx];
            let lq = if config.fresh_degradations {
                let seed = derive_seed(pair.seed, ((step - 1) * batch + b + 1) as u64);
                quantize_image(&degrade_seeded(&pair.hq, degradation, seed)?.0)
            } else {
                pair.lq.clone()
            };
            let input = resize_input(&lq, r)?.to_signed_tensor();
            let mut g = Graph::new();
            let p = Bound::new(&mut g, &model.params, train_g);
            let x = g.constant(input);
            let t = g.constant(targets[idx].clone());
            let out = generator_loss_graph(&mut g, &p, &model.config, x, t, &weights)?;
            let k = 1.0 / batch as f64;
            l_a += k * g.value(out.l_a).item();
            l_c += k * g.value(out.l_c).item();
            l_f += k * g.value(out.l_f).item();
            total += k * g.value(out.total).item();
            if any_g {
                let grads = g.backward(out.total);
                accumulate(&mut g_grads, p.collect(&grads), k);
            }
            if !freeze.discriminator {
                let fake = g.value(out.restored).clone();
                let (l, gr) = discriminator_step_grads(&model.params, &gen_cfg, &targets[idx], &fake)?;
                loss_d += k * l;
                accumulate(&mut d_grads, gr, k);
            }
            last_real = Some(idx);
        }
        if !total.is_finite() || !grads_finite(&g_grads) {
            return Err(non_finite(step, format!("total loss {total} (l_a={l_a}, l_c={l_c}, l_f={l_f})"), || snapshot(&model), checkpoint_dir));
        }
        let mut d_record = None;
        if !freeze.discriminator {
            if config.r1_due(step - 1) {
                let real = &targets[last_real.expect("batch is non-empty")];
                let (_, gr) = r1_penalty(&model.params, &gen_cfg, real, config.r1.gamma)?;
                accumulate(&mut d_grads, gr, config.r1.interval as f64);
            }
            if !loss_d.is_finite() || !grads_finite(&d_grads) {
                return Err(non_finite(step, format!("discriminator loss {loss_d}"), || snapshot(&model), checkpoint_dir));
            }
            d_record = Some(loss_d);
        }
        apply_updates(&mut model.params, &mut opt, &g_grads, |p| config.lr(p));
        apply_updates(&mut model.params, &mut opt, &d_grads, |p| config.lr(p));
        let rec = FinetuneRecord { step, l_a, l_c, l_f, total, loss_d: d_record };
        debug!("finetune step {step}: l_a={l_a:.5} l_c={l_c:.5} l_f={l_f:.5} total={total:.5}");
        if step % 100 == 0 || step == config.steps {
            info!("finetune step {step}/{}: l_c={l_c:.4} total={total:.4}", config.steps);
        }
        log.push(rec);
        write_periodic(config, step, checkpoint_dir, || snapshot(&model))?;
    }
    Ok((model, log))
}
