//! The style-based GAN prior: a mapping network from `z` to `w`, and a
//! synthesis network that grows a learned 4x4 constant to `R x R` through
//! modulated convolutions fed with per-resolution noise maps.

use rand_distr::{Distribution, StandardNormal};

use crate::autograd::{Graph, Var};
use crate::error::{invalid, Result};
use crate::image::Image;
use crate::layers::{self, lrelu};
use crate::params::{Bound, ParamStore};
use crate::rng::GpenRng;
use crate::tensor::Tensor;

/// How noise maps enter the synthesis convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NoiseMode {
    /// Concatenated to the conv input along channels.
    Concat,
    /// Projected by a 1x1 conv and added to the conv input.
    Add,
    /// No noise inputs at all.
    None,
}

impl NoiseMode {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseMode::Concat => "concat",
            NoiseMode::Add => "add",
            NoiseMode::None => "none",
        }
    }
}

impl std::str::FromStr for NoiseMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "concat" => Ok(NoiseMode::Concat),
            "add" => Ok(NoiseMode::Add),
            "none" => Ok(NoiseMode::None),
            other => Err(format!("unknown noise mode {other:?} (expected concat, add or none)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub resolution: usize,
    pub channel_base: usize,
    pub channel_max: usize,
    pub mapping_depth: usize,
    pub latent_dim: usize,
    pub noise_mode: NoiseMode,
}

impl GeneratorConfig {
    pub fn new(resolution: usize) -> Self {
        Self {
            resolution,
            channel_base: 2048,
            channel_max: 128,
            mapping_depth: 8,
            latent_dim: 512,
            noise_mode: NoiseMode::Concat,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.resolution;
        if r < 8 || !r.is_power_of_two() {
            return invalid(format!("resolution must be a power of two >= 8, got {r}"));
        }
        if self.channel_base == 0 || self.channel_max == 0 {
            return invalid("channel base and max must be positive");
        }
        if self.latent_dim == 0 {
            return invalid("latent dimension must be positive");
        }
        Ok(())
    }

    /// Feature channels at resolution `res`: `clamp(base / res, 1, max)`.
    pub fn channels(&self, res: usize) -> usize {
        (self.channel_base / res).clamp(1, self.channel_max)
    }

    /// Channels of the noise map injected at `res` (0 without noise).
    pub fn noise_channels(&self, res: usize) -> usize {
        match self.noise_mode {
            NoiseMode::None => 0,
            _ => self.channels(res),
        }
    }

    /// Block resolutions `4, 8, ..., R`.
    pub fn levels(&self) -> Vec<usize> {
        let mut v = vec![4];
        while *v.last().unwrap() < self.resolution {
            v.push(v.last().unwrap() * 2);
        }
        v
    }

    /// Upsampling blocks after the 4x4 stem: `log2(R) - 2`.
    pub fn num_blocks(&self) -> usize {
        self.levels().len() - 1
    }

    /// Resolutions that take a noise map.
    pub fn noise_levels(&self) -> Vec<usize> {
        match self.noise_mode {
            NoiseMode::None => vec![],
            _ => self.levels(),
        }
    }
}

/// One noise map per block resolution, each used by every injection at
/// that resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSet {
    pub maps: Vec<Tensor>,
}

impl NoiseSet {
    pub fn sample(cfg: &GeneratorConfig, rng: &mut GpenRng) -> Self {
        let maps = cfg
            .noise_levels()
            .into_iter()
            .map(|r| Tensor::from_fn(&[cfg.noise_channels(r), r, r], |_| StandardNormal.sample(rng)))
            .collect();
        Self { maps }
    }

    pub fn zeros(cfg: &GeneratorConfig) -> Self {
        Self { maps: cfg.noise_levels().into_iter().map(|r| Tensor::zeros(&[cfg.noise_channels(r), r, r])).collect() }
    }

    pub fn validate(&self, cfg: &GeneratorConfig) -> Result<()> {
        check_noise_shapes(cfg, self.maps.iter().map(Tensor::shape))
    }

    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.maps.iter().map(|m| g.constant(m.clone())).collect()
    }
}

fn check_noise_shapes<'a>(cfg: &GeneratorConfig, shapes: impl ExactSizeIterator<Item = &'a [usize]>) -> Result<()> {
    let levels = cfg.noise_levels();
    if shapes.len() != levels.len() {
        return invalid(format!("expected {} noise levels, got {}", levels.len(), shapes.len()));
    }
    for (r, s) in levels.into_iter().zip(shapes) {
        let want = [cfg.noise_channels(r), r, r];
        if s != want {
            return invalid(format!("noise at resolution {r} has shape {s:?}, expected {want:?}"));
        }
    }
    Ok(())
}

fn conv_name(res: usize, idx: usize) -> String {
    if res == 4 {
        "generator.b4.conv".to_string()
    } else {
        format!("generator.b{res}.conv{idx}")
    }
}

fn init_injected_conv(store: &mut ParamStore, rng: &mut GpenRng, cfg: &GeneratorConfig, name: &str, res: usize, inputs: usize, outputs: usize) {
    let cn = cfg.noise_channels(res);
    let conv_in = match cfg.noise_mode {
        NoiseMode::Concat => inputs + cn,
        NoiseMode::Add => {
            layers::init_conv(store, rng, &format!("{name}.noise_proj"), cn, inputs, 1, false);
            inputs
        }
        NoiseMode::None => inputs,
    };
    layers::init_mod_conv(store, rng, name, cfg.latent_dim, conv_in, outputs, 3);
}

/// Parameters of the mapping and synthesis networks, all under `generator.`.
pub fn init_generator(cfg: &GeneratorConfig, rng: &mut GpenRng) -> Result<ParamStore> {
    cfg.validate()?;
    let d = cfg.latent_dim;
    let mut store = ParamStore::new();
    for i in 0..cfg.mapping_depth {
        layers::init_dense(&mut store, rng, &format!("generator.mapping.{i}"), d, d, 0.0);
    }
    let c4 = cfg.channels(4);
    store.init_normal("generator.const".into(), &[c4, 4, 4], rng);
    init_injected_conv(&mut store, rng, cfg, &conv_name(4, 0), 4, c4, c4);
    layers::init_mod_conv(&mut store, rng, "generator.b4.torgb", d, c4, 3, 1);
    for &res in &cfg.levels()[1..] {
        let (cin, c) = (cfg.channels(res / 2), cfg.channels(res));
        init_injected_conv(&mut store, rng, cfg, &conv_name(res, 0), res, cin, c);
        init_injected_conv(&mut store, rng, cfg, &conv_name(res, 1), res, c, c);
        layers::init_mod_conv(&mut store, rng, &format!("generator.b{res}.torgb"), d, c, 3, 1);
    }
    Ok(store)
}

/// `w = MLP(z / rms(z))` with leaky-ReLU after every layer.
pub fn mapping_forward(g: &mut Graph, p: &Bound, cfg: &GeneratorConfig, z: Var) -> Result<Var> {
    if g.value(z).len() != cfg.latent_dim || g.shape(z).len() != 1 {
        return invalid(format!("latent has shape {:?}, expected [{}]", g.shape(z), cfg.latent_dim));
    }
    let mut x = g.normalize_rms(z, 1e-8);
    for i in 0..cfg.mapping_depth {
        x = layers::dense(g, p, &format!("generator.mapping.{i}"), x, true);
    }
    Ok(x)
}

fn injected_conv(g: &mut Graph, p: &Bound, cfg: &GeneratorConfig, name: &str, x: Var, w: Var, noise: Option<Var>) -> Var {
    let input = match (cfg.noise_mode, noise) {
        (NoiseMode::Concat, Some(n)) => g.concat(&[x, n]),
        (NoiseMode::Add, Some(n)) => {
            let proj = layers::conv(g, p, &format!("{name}.noise_proj"), n, 1, false);
            g.add(x, proj)
        }
        _ => x,
    };
    let y = layers::mod_conv(g, p, name, input, w, true);
    lrelu(g, y)
}

/// Output of one upsampling block.
#[derive(Clone, Copy, Debug)]
pub struct BlockOutput {
    pub features: Var,
    pub rgb: Var,
}

/// One GAN block: bilinear x2, then two noise-fed modulated convolutions
/// sharing the same noise map, plus skip-generation of the running RGB.
pub fn gan_block_forward(
    g: &mut Graph,
    p: &Bound,
    cfg: &GeneratorConfig,
    res: usize,
    features: Var,
    rgb: Var,
    w: Var,
    noise: Option<Var>,
) -> Result<BlockOutput> {
    let fs = g.shape(features).to_vec();
    if fs.len() != 3 || fs[1] * 2 != res || fs[2] * 2 != res {
        return invalid(format!("block at {res} got features of shape {fs:?}"));
    }
    if let Some(n) = noise {
        let ns = g.shape(n);
        if ns[1..] != [res, res] {
            return invalid(format!("noise of shape {ns:?} does not match block resolution {res}"));
        }
    } else if cfg.noise_mode != NoiseMode::None {
        return invalid(format!("block at {res} needs a noise map"));
    }
    let x = g.upsample2x(features);
    let x = injected_conv(g, p, cfg, &conv_name(res, 0), x, w, noise);
    let x = injected_conv(g, p, cfg, &conv_name(res, 1), x, w, noise);
    let up = g.upsample2x(rgb);
    let contribution = layers::mod_conv(g, p, &format!("generator.b{res}.torgb"), x, w, false);
    let rgb = g.add(up, contribution);
    Ok(BlockOutput { features: x, rgb })
}

/// Synthesizes a `[3, R, R]` image in the signed `[-1, 1]` domain.
pub fn generator_forward(g: &mut Graph, p: &Bound, cfg: &GeneratorConfig, w: Var, noises: &[Var]) -> Result<Var> {
    check_noise_shapes(cfg, noises.iter().map(|&n| g.shape(n)))?;
    if g.value(w).len() != cfg.latent_dim {
        return invalid(format!("style vector has {} entries, expected {}", g.value(w).len(), cfg.latent_dim));
    }
    let noise_at = |i: usize| noises.get(i).copied();
    let x = p.var("generator.const");
    let x = injected_conv(g, p, cfg, &conv_name(4, 0), x, w, noise_at(0));
    let mut rgb = layers::mod_conv(g, p, "generator.b4.torgb", x, w, false);
    let mut features = x;
    for (i, &res) in cfg.levels().iter().enumerate().skip(1) {
        let out = gan_block_forward(g, p, cfg, res, features, rgb, w, noise_at(i))?;
        features = out.features;
        rgb = out.rgb;
    }
    Ok(rgb)
}

/// Draws `z ~ N(0, I)` of the configured dimension.
pub fn sample_latent(cfg: &GeneratorConfig, rng: &mut GpenRng) -> Tensor {
    Tensor::from_fn(&[cfg.latent_dim], |_| StandardNormal.sample(rng))
}

/// Convenience wrapper running the prior on frozen parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Prior<'a> {
    pub config: &'a GeneratorConfig,
    pub params: &'a ParamStore,
}

impl Prior<'_> {
    pub fn mapping(&self, z: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = Bound::all_constant(&mut g, self.params);
        let z = g.constant(z.clone());
        let w = mapping_forward(&mut g, &p, self.config, z)?;
        Ok(g.value(w).clone())
    }

    /// Signed-domain synthesis output.
    pub fn synthesize(&self, w: &Tensor, noises: &NoiseSet) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = Bound::all_constant(&mut g, self.params);
        let w = g.constant(w.clone());
        let n = noises.bind(&mut g);
        let out = generator_forward(&mut g, &p, self.config, w, &n)?;
        Ok(g.value(out).clone())
    }

    /// `z ~ N(0, I)`, standard-normal noise maps, output mapped to `[0, 1]`.
    pub fn sample_generate(&self, rng: &mut GpenRng) -> Result<Image> {
        let z = sample_latent(self.config, rng);
        let noises = NoiseSet::sample(self.config, rng);
        let w = self.mapping(&z)?;
        Image::from_signed_tensor(&self.synthesize(&w, &noises)?)
    }
}
