//! Residual discriminator whose per-block outputs double as feature taps
//! for the feature matching loss.

use crate::autograd::{Graph, Var};
use crate::error::{invalid, Result};
use crate::layers;
use crate::params::{Bound, ParamStore};
use crate::prior::GeneratorConfig;
use crate::rng::GpenRng;

#[derive(Clone, Debug)]
pub struct DiscriminatorOutput {
    /// Scalar logit.
    pub score: Var,
    /// One map per resolution block, shallow to deep (`log2(R) - 2` taps).
    pub features: Vec<Var>,
}

pub fn init_discriminator(cfg: &GeneratorConfig, rng: &mut GpenRng) -> Result<ParamStore> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let r = cfg.resolution;
    layers::init_conv(&mut store, rng, "discriminator.fromrgb", 3, cfg.channels(r), 1, true);
    let mut res = r;
    while res > 4 {
        layers::init_down_block(&mut store, rng, &format!("discriminator.b{res}"), cfg.channels(res), cfg.channels(res / 2));
        res /= 2;
    }
    let c4 = cfg.channels(4);
    layers::init_conv(&mut store, rng, "discriminator.final_conv", c4, c4, 3, true);
    layers::init_dense(&mut store, rng, "discriminator.fc", c4 * 16, c4, 0.0);
    layers::init_dense(&mut store, rng, "discriminator.out", c4, 1, 0.0);
    Ok(store)
}

/// Scores a signed-domain `[3, R, R]` image.
pub fn discriminator_forward(g: &mut Graph, p: &Bound, cfg: &GeneratorConfig, image: Var) -> Result<DiscriminatorOutput> {
    let r = cfg.resolution;
    if g.shape(image) != [3, r, r] {
        return invalid(format!("discriminator input has shape {:?}, expected [3, {r}, {r}]", g.shape(image)));
    }
    let mut x = layers::conv(g, p, "discriminator.fromrgb", image, 1, true);
    let mut features = Vec::new();
    let mut res = r;
    while res > 4 {
        x = layers::down_block(g, p, &format!("discriminator.b{res}"), x);
        features.push(x);
        res /= 2;
    }
    let h = layers::conv(g, p, "discriminator.final_conv", x, 1, true);
    let n = g.value(h).len();
    let flat = g.reshape(h, &[n]);
    let h = layers::dense(g, p, "discriminator.fc", flat, true);
    let score = layers::dense(g, p, "discriminator.out", h, false);
    let score = g.reshape(score, &[]);
    Ok(DiscriminatorOutput { score, features })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::tensor::Tensor;

    #[test]
    fn tap_count_and_shapes() {
        let cfg = GeneratorConfig { channel_base: 256, channel_max: 8, latent_dim: 8, ..GeneratorConfig::new(64) };
        let params = init_discriminator(&cfg, &mut seeded(2)).unwrap();
        let mut g = Graph::new();
        let p = Bound::all_constant(&mut g, &params);
        let x = g.constant(Tensor::full(&[3, 64, 64], -0.2));
        let out = discriminator_forward(&mut g, &p, &cfg, x).unwrap();
        assert_eq!(out.features.len(), 4);
        assert_eq!(g.value(out.score).len(), 1);
        let res: Vec<usize> = out.features.iter().map(|f| g.shape(*f)[1]).collect();
        assert_eq!(res, vec![32, 16, 8, 4]);
    }
}
