//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys:
//!
//! | key | meaning |
//! |-----|---------|
//! | `resolution`, `channel_base`, `channel_max`, `mapping_depth`, `latent_dim` | generator shape |
//! | `noise_mode` | `concat`, `add` or `none` |
//! | `latent_space` | `z` or `w` |
//! | `sigma_min`, `sigma_max` | noise std range, 0-255 scale |
//! | `q_min`, `q_max` | JPEG quality range |
//! | `side_min`, `side_max` | degraded side length range |
//! | `blur_sigma_min`, `blur_sigma_max` | Gaussian blur sigma range |
//! | `motion_length_min`, `motion_length_max` | motion blur length range |
//! | `gaussian_probability` | chance of a Gaussian (vs motion) kernel |
//! | `steps`, `batch_size`, `seed`, `checkpoint_every` | loop control |
//! | `lr_encoder`, `lr_ratio` (`100:10:1`), `pretrain_lr` | learning rates |
//! | `adam_beta1`, `adam_beta2`, `adam_eps` | optimizer |
//! | `alpha`, `beta` | content and feature-matching weights |
//! | `freeze_encoder`, `freeze_decoder`, `freeze_discriminator` | `true`/`false` |
//! | `r1`, `r1_gamma`, `r1_interval` | R1 penalty |
//! | `fresh_degradations`, `reinit_discriminator` | `true`/`false` |

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::degradation::DegradationConfig;
use crate::encoder::LatentSpace;
use crate::error::{invalid, Result};
use crate::prior::GeneratorConfig;
use crate::train::TrainConfig;

pub const KEYS: &[&str] = &[
    "resolution",
    "channel_base",
    "channel_max",
    "mapping_depth",
    "latent_dim",
    "noise_mode",
    "latent_space",
    "sigma_min",
    "sigma_max",
    "q_min",
    "q_max",
    "side_min",
    "side_max",
    "blur_sigma_min",
    "blur_sigma_max",
    "motion_length_min",
    "motion_length_max",
    "gaussian_probability",
    "steps",
    "batch_size",
    "seed",
    "checkpoint_every",
    "lr_encoder",
    "lr_ratio",
    "pretrain_lr",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "alpha",
    "beta",
    "freeze_encoder",
    "freeze_decoder",
    "freeze_discriminator",
    "r1",
    "r1_gamma",
    "r1_interval",
    "fresh_degradations",
    "reinit_discriminator",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return invalid(format!("config line {}: expected key = value, got {raw:?}", no + 1));
            };
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return invalid(format!("config line {}: unknown key {k:?}", no + 1));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return invalid(format!("config line {}: duplicate key {k:?}", no + 1));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .or_else(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => match v.parse() {
                Ok(x) => Ok(Some(x)),
                Err(_) => invalid(format!("config key {key}: cannot parse {v:?}")),
            },
        }
    }

    fn set<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.parsed(key)? {
            *slot = v;
        }
        Ok(())
    }

    pub fn resolution(&self) -> Result<Option<usize>> {
        self.parsed("resolution")
    }

    pub fn apply_generator(&self, cfg: &mut GeneratorConfig) -> Result<()> {
        self.set("resolution", &mut cfg.resolution)?;
        self.set("channel_base", &mut cfg.channel_base)?;
        self.set("channel_max", &mut cfg.channel_max)?;
        self.set("mapping_depth", &mut cfg.mapping_depth)?;
        self.set("latent_dim", &mut cfg.latent_dim)?;
        if let Some(v) = self.get("noise_mode") {
            cfg.noise_mode = v.parse().or_else(|e: String| invalid(format!("config key noise_mode: {e}")))?;
        }
        Ok(())
    }

    pub fn apply_latent_space(&self, space: &mut LatentSpace) -> Result<()> {
        if let Some(v) = self.get("latent_space") {
            *space = v.parse().or_else(|e: String| invalid(format!("config key latent_space: {e}")))?;
        }
        Ok(())
    }

    pub fn apply_degradation(&self, cfg: &mut DegradationConfig) -> Result<()> {
        self.set("resolution", &mut cfg.resolution)?;
        self.set("sigma_min", &mut cfg.sigma_range.0)?;
        self.set("sigma_max", &mut cfg.sigma_range.1)?;
        self.set("q_min", &mut cfg.q_range.0)?;
        self.set("q_max", &mut cfg.q_range.1)?;
        self.set("side_min", &mut cfg.degraded_side_range.0)?;
        self.set("side_max", &mut cfg.degraded_side_range.1)?;
        self.set("blur_sigma_min", &mut cfg.gaussian_sigma_range.0)?;
        self.set("blur_sigma_max", &mut cfg.gaussian_sigma_range.1)?;
        self.set("motion_length_min", &mut cfg.motion_length_range.0)?;
        self.set("motion_length_max", &mut cfg.motion_length_range.1)?;
        self.set("gaussian_probability", &mut cfg.gaussian_probability)?;
        Ok(())
    }

    pub fn apply_train(&self, cfg: &mut TrainConfig) -> Result<()> {
        self.set("steps", &mut cfg.steps)?;
        self.set("batch_size", &mut cfg.batch_size)?;
        self.set("seed", &mut cfg.seed)?;
        self.set("checkpoint_every", &mut cfg.checkpoint_every)?;
        self.set("lr_encoder", &mut cfg.lr_encoder)?;
        if let Some(v) = self.get("lr_ratio") {
            cfg.lr_ratio = parse_ratio(v)?;
        }
        self.set("pretrain_lr", &mut cfg.pretrain_lr)?;
        self.set("adam_beta1", &mut cfg.adam.beta1)?;
        self.set("adam_beta2", &mut cfg.adam.beta2)?;
        self.set("adam_eps", &mut cfg.adam.eps)?;
        self.set("alpha", &mut cfg.loss_weights.alpha)?;
        self.set("beta", &mut cfg.loss_weights.beta)?;
        self.set("freeze_encoder", &mut cfg.freeze.encoder)?;
        self.set("freeze_decoder", &mut cfg.freeze.decoder)?;
        self.set("freeze_discriminator", &mut cfg.freeze.discriminator)?;
        self.set("r1", &mut cfg.r1.enabled)?;
        self.set("r1_gamma", &mut cfg.r1.gamma)?;
        self.set("r1_interval", &mut cfg.r1.interval)?;
        self.set("fresh_degradations", &mut cfg.fresh_degradations)?;
        self.set("reinit_discriminator", &mut cfg.reinit_discriminator)?;
        Ok(())
    }
}

/// Parses `a:b:c` into three positive numbers.
pub fn parse_ratio(s: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    let nums: Vec<f64> = parts.iter().filter_map(|p| p.parse().ok()).filter(|v: &f64| *v > 0.0).collect();
    if parts.len() != 3 || nums.len() != 3 {
        return invalid(format!("learning-rate ratio {s:?} must be three positive numbers like 100:10:1"));
    }
    Ok([nums[0], nums[1], nums[2]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::NoiseMode;

    #[test]
    fn applies_every_section() {
        let text = "# toy run\nresolution = 32\nnoise_mode=none\nlatent_space = w\nq_min=10\nsteps=7\nlr_ratio=50:5:1\nfreeze_decoder=true\nr1=false\n";
        let cf = ConfigFile::parse(text).unwrap();
        let mut g = GeneratorConfig::new(64);
        cf.apply_generator(&mut g).unwrap();
        assert_eq!((g.resolution, g.noise_mode), (32, NoiseMode::None));
        let mut space = LatentSpace::Z;
        cf.apply_latent_space(&mut space).unwrap();
        assert_eq!(space, LatentSpace::W);
        let mut d = DegradationConfig::new(32);
        cf.apply_degradation(&mut d).unwrap();
        assert_eq!(d.q_range, (10, 50));
        let mut t = TrainConfig::default();
        cf.apply_train(&mut t).unwrap();
        assert_eq!((t.steps, t.lr_ratio, t.freeze.decoder, t.r1.enabled), (7, [50.0, 5.0, 1.0], true, false));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ConfigFile::parse("bogus = 1").is_err());
        assert!(ConfigFile::parse("steps").is_err());
        assert!(ConfigFile::parse("steps=1\nsteps=2").is_err());
        let cf = ConfigFile::parse("steps = many").unwrap();
        assert!(cf.apply_train(&mut TrainConfig::default()).is_err());
        assert!(parse_ratio("1:2").is_err());
        assert!(parse_ratio("1:0:2").is_err());
    }
}
