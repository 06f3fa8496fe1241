//! The restoration network: encoder feeding the embedded GAN prior.

use std::path::PathBuf;

use rayon::prelude::*;

use crate::autograd::{Graph, Var};
use crate::discriminator::init_discriminator;
use crate::encoder::{encoder_forward, init_encoder, LatentSpace};
use crate::error::{GpenError, Result};
use crate::image::Image;
use crate::params::{Bound, ParamStore, Part};
use crate::prior::{generator_forward, init_generator, mapping_forward, GeneratorConfig, Prior};
use crate::rng::seeded;

/// A pretrained (or freshly initialized) GAN prior: generator and
/// discriminator parameters under `generator.` and `discriminator.`.
#[derive(Clone, Debug, PartialEq)]
pub struct GanPrior {
    pub config: GeneratorConfig,
    pub params: ParamStore,
}

impl GanPrior {
    pub fn init(config: GeneratorConfig, seed: u64) -> Result<Self> {
        let mut rng = seeded(seed);
        let mut params = init_generator(&config, &mut rng)?;
        params.extend(init_discriminator(&config, &mut rng)?);
        Ok(Self { config, params })
    }

    pub fn prior(&self) -> Prior<'_> {
        Prior { config: &self.config, params: &self.params }
    }
}

/// Parts excluded from optimization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FreezeFlags {
    pub encoder: bool,
    pub decoder: bool,
    pub discriminator: bool,
}

impl FreezeFlags {
    pub fn all() -> Self {
        Self { encoder: true, decoder: true, discriminator: true }
    }

    pub fn is_frozen(&self, part: Part) -> bool {
        match part {
            Part::Encoder => self.encoder,
            Part::Decoder => self.decoder,
            Part::Discriminator => self.discriminator,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GpenConfig {
    pub generator: GeneratorConfig,
    pub latent_space: LatentSpace,
}

impl GpenConfig {
    pub fn new(generator: GeneratorConfig) -> Self {
        Self { generator, latent_space: LatentSpace::Z }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GpenModel {
    pub config: GpenConfig,
    /// Encoder, decoder and discriminator parameters.
    pub params: ParamStore,
}

/// Lists the generator settings that differ between two configs.
pub fn config_mismatches(expected: &GeneratorConfig, found: &GeneratorConfig) -> Vec<String> {
    let mut out = Vec::new();
    let mut cmp = |name: &str, a: String, b: String| {
        if a != b {
            out.push(format!("{name}: expected {a}, found {b}"));
        }
    };
    cmp("resolution", expected.resolution.to_string(), found.resolution.to_string());
    cmp("channel_base", expected.channel_base.to_string(), found.channel_base.to_string());
    cmp("channel_max", expected.channel_max.to_string(), found.channel_max.to_string());
    cmp("mapping_depth", expected.mapping_depth.to_string(), found.mapping_depth.to_string());
    cmp("latent_dim", expected.latent_dim.to_string(), found.latent_dim.to_string());
    cmp("noise_mode", expected.noise_mode.as_str().into(), found.noise_mode.as_str().into());
    out
}

/// Names whose presence or shape differ between `template` and `params`.
pub fn shape_mismatches(template: &ParamStore, params: &ParamStore) -> Vec<String> {
    let mut out = Vec::new();
    for (name, t) in template.iter() {
        match params.get(name) {
            None => out.push(format!("{name}: missing (expected shape {:?})", t.shape())),
            Some(p) if p.shape() != t.shape() => {
                out.push(format!("{name}: shape {:?}, expected {:?}", p.shape(), t.shape()))
            }
            Some(_) => {}
        }
    }
    for (name, t) in params.iter() {
        if template.get(name).is_none() {
            out.push(format!("{name}: unexpected tensor of shape {:?}", t.shape()));
        }
    }
    out
}

/// Builds a restoration model around a pretrained prior, with a freshly
/// initialized encoder.
pub fn embed_prior(prior: &GanPrior, config: &GpenConfig, seed: u64) -> Result<GpenModel> {
    config.generator.validate()?;
    let mismatches = config_mismatches(&config.generator, &prior.config);
    if !mismatches.is_empty() {
        return Err(GpenError::IncompatibleCheckpoint(mismatches));
    }
    let template = GanPrior::init(config.generator.clone(), 0)?;
    let mismatches = shape_mismatches(&template.params, &prior.params);
    if !mismatches.is_empty() {
        return Err(GpenError::IncompatibleCheckpoint(mismatches));
    }
    let mut params = prior.params.clone();
    params.extend(init_encoder(&config.generator, &mut seeded(seed))?);
    Ok(GpenModel { config: config.clone(), params })
}

impl GpenModel {
    pub fn resolution(&self) -> usize {
        self.config.generator.resolution
    }

    /// Parameter template for this config, used to validate loaded tensors.
    pub fn template(config: &GpenConfig) -> Result<ParamStore> {
        let mut params = GanPrior::init(config.generator.clone(), 0)?.params;
        params.extend(init_encoder(&config.generator, &mut seeded(0))?);
        Ok(params)
    }

    /// The decoder and discriminator as a standalone prior.
    pub fn to_prior(&self) -> GanPrior {
        let mut params = self.params.part(Part::Decoder);
        params.extend(self.params.part(Part::Discriminator));
        GanPrior { config: self.config.generator.clone(), params }
    }

    /// Resizes `lq` to `R x R` and restores it.
    pub fn restore(&self, lq: &Image) -> Result<Image> {
        let r = self.resolution();
        let input = resize_input(lq, r)?;
        let mut g = Graph::new();
        let inference: ParamStore = ParamStore::from_iter(
            self.params.iter().filter(|(k, _)| Part::of(k) != Some(Part::Discriminator)).map(|(k, v)| (k.clone(), v.clone())),
        );
        let p = Bound::all_constant(&mut g, &inference);
        let x = g.constant(input.to_signed_tensor());
        let out = gpen_forward_graph(&mut g, &p, &self.config, x)?;
        Image::from_signed_tensor(g.value(out))
    }
}

/// Encoder → (mapping) → generator on a signed `[3, R, R]` input.
pub fn gpen_forward_graph(g: &mut Graph, p: &Bound, config: &GpenConfig, input: Var) -> Result<Var> {
    let cfg = &config.generator;
    let enc = encoder_forward(g, p, cfg, input)?;
    let w = match config.latent_space {
        LatentSpace::Z => mapping_forward(g, p, cfg, enc.latent)?,
        LatentSpace::W => enc.latent,
    };
    generator_forward(g, p, cfg, w, &enc.pyramid)
}

/// Bilinear resize to the model resolution; RGB only.
pub fn resize_input(image: &Image, resolution: usize) -> Result<Image> {
    if image.channels() != 3 {
        return crate::error::invalid(format!("expected an RGB image, got {} channels", image.channels()));
    }
    image.resize_bilinear(resolution, resolution)
}

/// Anything that maps a degraded image to an `R x R` restoration.
pub trait Restorer: Sync {
    fn resolution(&self) -> usize;
    fn restore(&self, lq: &Image) -> Result<Image>;
}

impl Restorer for GpenModel {
    fn resolution(&self) -> usize {
        GpenModel::resolution(self)
    }

    fn restore(&self, lq: &Image) -> Result<Image> {
        GpenModel::restore(self, lq)
    }
}

/// The bilinear baseline: returns the resized input.
#[derive(Clone, Copy, Debug)]
pub struct BilinearBaseline {
    pub resolution: usize,
}

impl Restorer for BilinearBaseline {
    fn resolution(&self) -> usize {
        self.resolution
    }

    fn restore(&self, lq: &Image) -> Result<Image> {
        resize_input(lq, self.resolution)
    }
}

/// Restores every image in `inputs`, keeping order. Failures are reported
/// per item. `parallel` spreads items over the rayon pool.
pub fn restore_batch(model: &dyn Restorer, inputs: &[PathBuf], parallel: bool) -> Vec<Result<Image>> {
    let run = |path: &PathBuf| Image::load(path).and_then(|img| model.restore(&img));
    if parallel {
        inputs.par_iter().map(run).collect()
    } else {
        inputs.iter().map(run).collect()
    }
}
