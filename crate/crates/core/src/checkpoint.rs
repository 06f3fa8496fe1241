//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "GPENCKPT"                 8-byte magic
//! u32 version                currently 1
//! u32 len, [u8; len]         metadata, UTF-8 "key=value" lines
//! u32 count                  number of tensor records
//! per record:
//!   u32 len, [u8; len]       name
//!   u8 dtype                 1 = f64
//!   u32 ndim, u64 * ndim     shape
//!   u64 len, [u8; len]       raw little-endian values
//! ```
//!
//! Loading either yields a complete checkpoint or an error; trailing bytes
//! are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use crate::encoder::LatentSpace;
use crate::error::{GpenError, Result};
use crate::model::{config_mismatches, shape_mismatches, GanPrior, GpenConfig, GpenModel};
use crate::params::{ParamStore, Part};
use crate::prior::GeneratorConfig;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"GPENCKPT";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

pub const KIND_PRIOR: &str = "prior";
pub const KIND_GPEN: &str = "gpen";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    pub params: ParamStore,
}

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(GpenError::CheckpointFormat(msg.into()))
}

fn generator_metadata(cfg: &GeneratorConfig) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("resolution".into(), cfg.resolution.to_string());
    m.insert("channel_base".into(), cfg.channel_base.to_string());
    m.insert("channel_max".into(), cfg.channel_max.to_string());
    m.insert("mapping_depth".into(), cfg.mapping_depth.to_string());
    m.insert("latent_dim".into(), cfg.latent_dim.to_string());
    m.insert("noise_mode".into(), cfg.noise_mode.as_str().into());
    let plan: Vec<String> = cfg.levels().iter().map(|&r| format!("{r}:{}", cfg.channels(r))).collect();
    m.insert("channel_plan".into(), plan.join(","));
    m
}

impl Checkpoint {
    pub fn from_prior(prior: &GanPrior, step: u64, seed: u64) -> Self {
        let mut metadata = generator_metadata(&prior.config);
        metadata.insert("kind".into(), KIND_PRIOR.into());
        metadata.insert("step".into(), step.to_string());
        metadata.insert("seed".into(), seed.to_string());
        Self { metadata, params: prior.params.clone() }
    }

    pub fn from_model(model: &GpenModel, step: u64, seed: u64) -> Self {
        let mut metadata = generator_metadata(&model.config.generator);
        metadata.insert("kind".into(), KIND_GPEN.into());
        metadata.insert("latent_space".into(), model.config.latent_space.as_str().into());
        metadata.insert("step".into(), step.to_string());
        metadata.insert("seed".into(), seed.to_string());
        Self { metadata, params: model.params.clone() }
    }

    fn meta(&self, key: &str) -> Result<&str> {
        match self.metadata.get(key) {
            Some(v) => Ok(v),
            None => format_err(format!("metadata key {key:?} is missing")),
        }
    }

    fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta(key)?;
        raw.parse().or_else(|_| format_err(format!("metadata {key}={raw:?} is malformed")))
    }

    pub fn kind(&self) -> Result<&str> {
        self.meta("kind")
    }

    pub fn step(&self) -> Result<u64> {
        self.meta_parse("step")
    }

    pub fn seed(&self) -> Result<u64> {
        self.meta_parse("seed")
    }

    pub fn generator_config(&self) -> Result<GeneratorConfig> {
        let cfg = GeneratorConfig {
            resolution: self.meta_parse("resolution")?,
            channel_base: self.meta_parse("channel_base")?,
            channel_max: self.meta_parse("channel_max")?,
            mapping_depth: self.meta_parse("mapping_depth")?,
            latent_dim: self.meta_parse("latent_dim")?,
            noise_mode: self.meta_parse("noise_mode")?,
        };
        cfg.validate().or_else(|e| format_err(format!("metadata describes an invalid generator: {e}")))?;
        Ok(cfg)
    }

    pub fn gpen_config(&self) -> Result<GpenConfig> {
        let latent_space: LatentSpace = self.meta_parse("latent_space")?;
        Ok(GpenConfig { generator: self.generator_config()?, latent_space })
    }

    /// Reads the prior part. A restoration checkpoint also yields its
    /// decoder and discriminator.
    pub fn into_prior(self) -> Result<GanPrior> {
        let cfg = self.generator_config()?;
        self.into_prior_for(&cfg)
    }

    /// Like [`Checkpoint::into_prior`] but checked against an expected config.
    pub fn into_prior_for(self, expected: &GeneratorConfig) -> Result<GanPrior> {
        let kind = self.kind()?.to_string();
        let found = self.generator_config()?;
        let mismatches = config_mismatches(expected, &found);
        if !mismatches.is_empty() {
            return Err(GpenError::IncompatibleCheckpoint(mismatches));
        }
        let mut params = self.params;
        match kind.as_str() {
            KIND_PRIOR => {}
            KIND_GPEN => params.remove_part(Part::Encoder),
            other => return format_err(format!("unknown checkpoint kind {other:?}")),
        }
        let template = GanPrior::init(expected.clone(), 0)?;
        let mismatches = shape_mismatches(&template.params, &params);
        if !mismatches.is_empty() {
            return Err(GpenError::IncompatibleCheckpoint(mismatches));
        }
        Ok(GanPrior { config: expected.clone(), params })
    }

    pub fn into_model(self) -> Result<GpenModel> {
        let cfg = self.gpen_config()?;
        self.into_model_for(&cfg)
    }

    pub fn into_model_for(self, expected: &GpenConfig) -> Result<GpenModel> {
        if self.kind()? != KIND_GPEN {
            return Err(GpenError::IncompatibleCheckpoint(vec![format!(
                "kind: expected {KIND_GPEN}, found {}",
                self.kind()?
            )]));
        }
        let found = self.gpen_config()?;
        let mut mismatches = config_mismatches(&expected.generator, &found.generator);
        if expected.latent_space != found.latent_space {
            mismatches.push(format!(
                "latent_space: expected {}, found {}",
                expected.latent_space.as_str(),
                found.latent_space.as_str()
            ));
        }
        if mismatches.is_empty() {
            mismatches = shape_mismatches(&GpenModel::template(expected)?, &self.params);
        }
        if !mismatches.is_empty() {
            return Err(GpenError::IncompatibleCheckpoint(mismatches));
        }
        Ok(GpenModel { config: expected.clone(), params: self.params })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta: String = self.metadata.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        put_bytes(&mut out, meta.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            put_bytes(&mut out, name.as_bytes());
            out.push(DTYPE_F64);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&((t.len() * 8) as u64).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return format_err("bad magic: not a checkpoint file");
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return format_err(format!("unsupported format version {version} (expected {VERSION})"));
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta = std::str::from_utf8(r.take(meta_len, "metadata")?)
            .or_else(|_| format_err("metadata is not valid UTF-8"))?;
        let mut metadata = BTreeMap::new();
        for line in meta.lines().filter(|l| !l.is_empty()) {
            let Some((k, v)) = line.split_once('=') else {
                return format_err(format!("malformed metadata line {line:?}"));
            };
            metadata.insert(k.to_string(), v.to_string());
        }
        let count = r.u32("tensor count")?;
        let mut params = ParamStore::new();
        for i in 0..count {
            let name_len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .or_else(|_| format_err(format!("tensor {i} name is not valid UTF-8")))?
                .to_string();
            let dtype = r.take(1, "dtype")?[0];
            if dtype != DTYPE_F64 {
                return format_err(format!("tensor {name:?} has unsupported dtype {dtype}"));
            }
            let ndim = r.u32("rank")? as usize;
            if ndim > 8 {
                return format_err(format!("tensor {name:?} has implausible rank {ndim}"));
            }
            let mut shape = Vec::with_capacity(ndim);
            let mut count: u64 = 1;
            for _ in 0..ndim {
                let d = r.u64("dimension")?;
                count = count.checked_mul(d).ok_or_else(|| GpenError::CheckpointFormat(format!("tensor {name:?} is too large")))?;
                shape.push(d as usize);
            }
            let byte_len = r.u64("data length")?;
            if count.checked_mul(8) != Some(byte_len) {
                return format_err(format!("tensor {name:?} declares {byte_len} bytes for shape {shape:?}"));
            }
            let raw = r.take(byte_len as usize, "tensor data")?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
            if params.get(&name).is_some() {
                return format_err(format!("duplicate tensor {name:?}"));
            }
            params.insert(name, Tensor::new(shape, data).expect("length checked"));
        }
        if r.pos != bytes.len() {
            return format_err(format!("{} trailing bytes after the last tensor", bytes.len() - r.pos));
        }
        Ok(Self { metadata, params })
    }

    /// Writes through a temporary file in the same directory, then renames.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.partial");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.bytes.len() => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => format_err(format!("truncated while reading {what} at byte {}", self.pos)),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::embed_prior;
    use crate::prior::NoiseMode;

    fn cfg() -> GeneratorConfig {
        GeneratorConfig { resolution: 8, channel_base: 16, channel_max: 4, mapping_depth: 2, latent_dim: 8, noise_mode: NoiseMode::Concat }
    }

    fn model() -> GpenModel {
        let prior = GanPrior::init(cfg(), 1).unwrap();
        embed_prior(&prior, &GpenConfig::new(cfg()), 2).unwrap()
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let ck = Checkpoint::from_model(&model(), 17, 99);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.step().unwrap(), 17);
        assert_eq!(back.into_model().unwrap(), model());
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = Checkpoint::from_prior(&GanPrior::init(cfg(), 3).unwrap(), 0, 0).to_bytes();
        for cut in (0..bytes.len()).step_by(97).chain([bytes.len() - 1]) {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(GpenError::CheckpointFormat(_))), "cut {cut}");
        }
    }

    #[test]
    fn bad_magic_version_and_trailing_bytes() {
        let bytes = Checkpoint::from_prior(&GanPrior::init(cfg(), 3).unwrap(), 0, 0).to_bytes();
        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&b), Err(GpenError::CheckpointFormat(m)) if m.contains("magic")));
        let mut b = bytes.clone();
        b[8] = 7;
        assert!(matches!(Checkpoint::from_bytes(&b), Err(GpenError::CheckpointFormat(m)) if m.contains("version")));
        let mut b = bytes;
        b.push(0);
        assert!(matches!(Checkpoint::from_bytes(&b), Err(GpenError::CheckpointFormat(m)) if m.contains("trailing")));
    }

    #[test]
    fn mismatched_config_names_offenders() {
        let ck = Checkpoint::from_prior(&GanPrior::init(cfg(), 3).unwrap(), 0, 0);
        let other = GeneratorConfig { channel_max: 2, ..cfg() };
        match ck.clone().into_prior_for(&other).unwrap_err() {
            GpenError::IncompatibleCheckpoint(items) => assert!(items.iter().any(|i| i.contains("channel_max"))),
            e => panic!("{e:?}"),
        }
        let mut tampered = ck;
        tampered.params.insert("generator.b8.torgb.bias", Tensor::zeros(&[5]));
        match tampered.into_prior().unwrap_err() {
            GpenError::IncompatibleCheckpoint(items) => assert!(items[0].contains("generator.b8.torgb.bias")),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn prior_checkpoint_is_not_a_model() {
        let ck = Checkpoint::from_prior(&GanPrior::init(cfg(), 3).unwrap(), 0, 0);
        assert!(matches!(ck.into_model(), Err(GpenError::CheckpointFormat(_)) | Err(GpenError::IncompatibleCheckpoint(_))));
        let prior = Checkpoint::from_model(&model(), 0, 0).into_prior().unwrap();
        assert_eq!(prior, model().to_prior());
    }

    #[test]
    fn save_and_load_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = Checkpoint::from_model(&model(), 1, 2);
        ck.save(&path).unwrap();
        let first = std::fs::read(&path).unwrap();
        Checkpoint::load(&path).unwrap().save(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
        assert!(!path.with_extension("ckpt.partial").exists());
    }
}
