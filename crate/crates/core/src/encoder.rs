//! Contracting half of the U-shaped network: produces the latent code from
//! its deepest features and the per-resolution noise pyramid from shallower
//! ones.

use crate::autograd::{Graph, Var};
use crate::error::{invalid, Result};
use crate::layers;
use crate::params::{Bound, ParamStore};
use crate::prior::{GeneratorConfig, NoiseMode};
use crate::rng::GpenRng;

/// Whether the encoder's fully connected output is read as `z` (and sent
/// through the mapping network) or used directly as `w`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LatentSpace {
    Z,
    W,
}

impl LatentSpace {
    pub fn as_str(self) -> &'static str {
        match self {
            LatentSpace::Z => "z",
            LatentSpace::W => "w",
        }
    }
}

impl std::str::FromStr for LatentSpace {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "z" => Ok(LatentSpace::Z),
            "w" => Ok(LatentSpace::W),
            other => Err(format!("unknown latent space {other:?} (expected z or w)")),
        }
    }
}

/// Graph handles of an encoder pass.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub latent: Var,
    /// One map per generator noise level, ordered `4, 8, ..., R`.
    pub pyramid: Vec<Var>,
}

pub fn init_encoder(cfg: &GeneratorConfig, rng: &mut GpenRng) -> Result<ParamStore> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let r = cfg.resolution;
    layers::init_conv(&mut store, rng, "encoder.stem", 3, cfg.channels(r), 3, true);
    let with_noise = cfg.noise_mode != NoiseMode::None;
    let mut res = r;
    while res > 4 {
        if with_noise {
            layers::init_conv(&mut store, rng, &format!("encoder.proj{res}"), cfg.channels(res), cfg.noise_channels(res), 1, true);
        }
        layers::init_down_block(&mut store, rng, &format!("encoder.down{res}"), cfg.channels(res), cfg.channels(res / 2));
        res /= 2;
    }
    let c4 = cfg.channels(4);
    if with_noise {
        layers::init_conv(&mut store, rng, "encoder.proj4", c4, cfg.noise_channels(4), 1, true);
    }
    layers::init_conv(&mut store, rng, "encoder.final", c4, c4, 3, true);
    layers::init_dense(&mut store, rng, "encoder.fc", c4 * 16, cfg.latent_dim, 0.0);
    Ok(store)
}

/// Encodes a signed-domain `[3, R, R]` input.
pub fn encoder_forward(g: &mut Graph, p: &Bound, cfg: &GeneratorConfig, input: Var) -> Result<EncoderOutput> {
    let r = cfg.resolution;
    if g.shape(input) != [3, r, r] {
        return invalid(format!("encoder input has shape {:?}, expected [3, {r}, {r}]", g.shape(input)));
    }
    let with_noise = cfg.noise_mode != NoiseMode::None;
    let mut x = layers::conv(g, p, "encoder.stem", input, 1, true);
    let mut pyramid = Vec::new();
    let mut res = r;
    while res > 4 {
        if with_noise {
            pyramid.push(layers::conv(g, p, &format!("encoder.proj{res}"), x, 1, false));
        }
        x = layers::down_block(g, p, &format!("encoder.down{res}"), x);
        res /= 2;
    }
    if with_noise {
        pyramid.push(layers::conv(g, p, "encoder.proj4", x, 1, false));
    }
    pyramid.reverse();
    let h = layers::conv(g, p, "encoder.final", x, 1, true);
    let n = g.value(h).len();
    let flat = g.reshape(h, &[n]);
    let latent = layers::dense(g, p, "encoder.fc", flat, false);
    Ok(EncoderOutput { latent, pyramid })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::tensor::Tensor;

    #[test]
    fn pyramid_matches_noise_levels() {
        for mode in [NoiseMode::Concat, NoiseMode::None] {
            let cfg = GeneratorConfig { channel_base: 128, channel_max: 8, latent_dim: 16, noise_mode: mode, ..GeneratorConfig::new(32) };
            let params = init_encoder(&cfg, &mut seeded(1)).unwrap();
            let mut g = Graph::new();
            let p = Bound::all_constant(&mut g, &params);
            let x = g.constant(Tensor::full(&[3, 32, 32], 0.1));
            let out = encoder_forward(&mut g, &p, &cfg, x).unwrap();
            assert_eq!(g.shape(out.latent), &[16]);
            let shapes: Vec<Vec<usize>> = out.pyramid.iter().map(|v| g.shape(*v).to_vec()).collect();
            let want: Vec<Vec<usize>> = cfg.noise_levels().iter().map(|&r| vec![cfg.noise_channels(r), r, r]).collect();
            assert_eq!(shapes, want);
            let bad = g.constant(Tensor::zeros(&[3, 16, 16]));
            assert!(encoder_forward(&mut g, &p, &cfg, bad).is_err());
        }
    }
}
