//! Synthesis of low-quality training inputs from high-quality faces:
//! blur, then `s`-fold area downsampling, then additive Gaussian noise,
//! then a JPEG round-trip.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{invalid, GpenError, Result};
use crate::image::{list_images, quantize, Image};
use crate::rng::{derive_seed, seeded, GpenRng};

/// A normalized, odd-sized, non-negative 2-D filter.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurKernel {
    size: usize,
    taps: Vec<f64>,
}

impl BlurKernel {
    pub fn new(size: usize, taps: Vec<f64>) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return invalid(format!("kernel size must be odd and positive, got {size}"));
        }
        if taps.len() != size * size {
            return invalid(format!("kernel of size {size} needs {} taps, got {}", size * size, taps.len()));
        }
        if taps.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return invalid("kernel taps must be finite and non-negative");
        }
        let total: f64 = taps.iter().sum();
        if total <= 0.0 {
            return invalid("kernel taps sum to zero");
        }
        Ok(Self { size, taps: taps.into_iter().map(|t| t / total).collect() })
    }

    pub fn delta() -> Self {
        Self { size: 1, taps: vec![1.0] }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn tap(&self, row: usize, col: usize) -> f64 {
        self.taps[row * self.size + col]
    }
}

/// `size = 2 * ceil(3 * sigma) + 1`
pub fn gaussian_kernel_size(sigma_blur: f64) -> usize {
    2 * (3.0 * sigma_blur).ceil() as usize + 1
}

pub fn gaussian_kernel(sigma_blur: f64, size: usize) -> Result<BlurKernel> {
    if !(sigma_blur > 0.0) || !sigma_blur.is_finite() {
        return invalid(format!("gaussian sigma must be positive, got {sigma_blur}"));
    }
    if size == 0 || size % 2 == 0 {
        return invalid(format!("kernel size must be odd and positive, got {size}"));
    }
    let c = (size as f64 - 1.0) / 2.0;
    let denom = 2.0 * sigma_blur * sigma_blur;
    let mut taps = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let (di, dj) = (i as f64 - c, j as f64 - c);
            taps.push((-(di * di + dj * dj) / denom).exp());
        }
    }
    BlurKernel::new(size, taps)
}

/// A centered line segment rasterized by exact coverage: each tap is the
/// length of the segment inside that pixel's unit square.
pub fn motion_kernel(length: f64, angle: f64, size: usize) -> Result<BlurKernel> {
    if size == 0 || size % 2 == 0 {
        return invalid(format!("kernel size must be odd and positive, got {size}"));
    }
    if !(1.0..=size as f64).contains(&length) {
        return invalid(format!("motion length {length} must lie in [1, {size}]"));
    }
    if !(0.0..PI).contains(&angle) {
        return invalid(format!("motion angle {angle} must lie in [0, pi)"));
    }
    let c = (size as f64 - 1.0) / 2.0;
    let (dx, dy) = (angle.cos(), angle.sin());
    let half = length / 2.0;
    let mut taps = vec![0.0; size * size];
    for row in 0..size {
        for col in 0..size {
            // Pixel square relative to the kernel center; y grows upward.
            let (x0, x1) = (col as f64 - c - 0.5, col as f64 - c + 0.5);
            let (y0, y1) = (c - row as f64 - 0.5, c - row as f64 + 0.5);
            if let Some((t0, t1)) = clip_segment(-half, half, dx, dy, x0, x1, y0, y1) {
                taps[row * size + col] = t1 - t0;
            }
        }
    }
    BlurKernel::new(size, taps)
}

/// Liang-Barsky clipping of `t * (dx, dy)`, `t` in `[t0, t1]`, against a box.
#[allow(clippy::too_many_arguments)]
fn clip_segment(mut t0: f64, mut t1: f64, dx: f64, dy: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> Option<(f64, f64)> {
    for (d, lo, hi) in [(dx, x0, x1), (dy, y0, y1)] {
        if d.abs() < 1e-12 {
            if lo > 0.0 || hi < 0.0 {
                return None;
            }
            continue;
        }
        let (mut a, mut b) = (lo / d, hi / d);
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        t0 = t0.max(a);
        t1 = t1.min(b);
    }
    (t1 > t0).then_some((t0, t1))
}

/// Half-sample symmetric reflection: `... b a | a b c | c b ...`.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Per-channel 2-D convolution with reflected borders; output size equals input size.
pub fn convolve2d(image: &Image, kernel: &BlurKernel) -> Image {
    let (ch, h, w) = image.shape();
    let k = kernel.size();
    let c = (k / 2) as isize;
    let col_idx: Vec<Vec<usize>> =
        (0..w).map(|x| (0..k).map(|b| reflect(x as isize + c - b as isize, w)).collect()).collect();
    let mut out = Vec::with_capacity(ch * h * w);
    for chan in 0..ch {
        let p = image.plane(chan);
        for y in 0..h {
            let rows: Vec<&[f64]> =
                (0..k).map(|a| reflect(y as isize + c - a as isize, h)).map(|r| &p[r * w..(r + 1) * w]).collect();
            for idx in &col_idx {
                let mut acc = 0.0;
                for (a, row) in rows.iter().enumerate() {
                    let taps = &kernel.taps()[a * k..(a + 1) * k];
                    for (t, &xi) in taps.iter().zip(idx) {
                        acc += t * row[xi];
                    }
                }
                out.push(acc);
            }
        }
    }
    Image::new(ch, h, w, out).expect("same shape as input")
}

/// Output side for a downscale factor: `max(1, round(side / s))`.
pub fn downsampled_side(side: usize, s: f64) -> usize {
    ((side as f64 / s).round() as usize).max(1)
}

/// Area-averaging weights mapping `src` samples onto `dst` equal footprints.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let step = src as f64 / dst as f64;
    (0..dst)
        .map(|j| {
            let (a, b) = (j as f64 * step, (j + 1) as f64 * step);
            let mut taps = Vec::new();
            let mut i = a.floor() as usize;
            while (i as f64) < b && i < src {
                let overlap = (b.min(i as f64 + 1.0) - a.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    taps.push((i, overlap / step));
                }
                i += 1;
            }
            taps
        })
        .collect()
}

/// Box (area) downsampling by factor `s >= 1`.
pub fn downsample(image: &Image, s: f64) -> Result<Image> {
    if !(s >= 1.0) || !s.is_finite() {
        return invalid(format!("downscale factor must be >= 1, got {s}"));
    }
    let (ch, h, w) = image.shape();
    let (oh, ow) = (downsampled_side(h, s), downsampled_side(w, s));
    if oh == h && ow == w {
        return Ok(image.clone());
    }
    let wy = area_weights(h, oh);
    let wx = area_weights(w, ow);
    let mut out = Vec::with_capacity(ch * oh * ow);
    for c in 0..ch {
        let p = image.plane(c);
        for ty in &wy {
            for tx in &wx {
                let mut acc = 0.0;
                for &(y, fy) in ty {
                    for &(x, fx) in tx {
                        acc += fy * fx * p[y * w + x];
                    }
                }
                out.push(acc);
            }
        }
    }
    Image::new(ch, oh, ow, out)
}

/// Adds `N(0, (sigma/255)^2)` noise to every channel-pixel and clamps to `[0,1]`.
pub fn add_gaussian_noise(image: &Image, sigma: f64, rng: &mut GpenRng) -> Result<Image> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return invalid(format!("noise sigma must be >= 0, got {sigma}"));
    }
    let mut out = image.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma / 255.0).expect("positive std");
    for v in out.data_mut() {
        *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Baseline JPEG encode at quality `q` followed by a decode.
pub fn jpeg_roundtrip(image: &Image, q: u8) -> Result<Image> {
    if !(1..=100).contains(&q) {
        return invalid(format!("jpeg quality must lie in [1, 100], got {q}"));
    }
    let rgb = image.to_rgb8();
    let mut buf = Vec::new();
    ::image::codecs::jpeg::JpegEncoder::new_with_quality(&mut buf, q)
        .encode_image(&rgb)
        .map_err(|e| GpenError::DegradationCodec(e.to_string()))?;
    let decoded = ::image::load_from_memory_with_format(&buf, ::image::ImageFormat::Jpeg)
        .map_err(|e| GpenError::DegradationCodec(e.to_string()))?
        .to_rgb8();
    let out = Image::from_rgb8(&decoded);
    if out.shape() != (3, image.height(), image.width()) {
        return Err(GpenError::DegradationCodec(format!(
            "decoded shape {:?} differs from input {:?}",
            out.shape(),
            image.shape()
        )));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    Gaussian,
    Motion,
}

impl KernelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelKind::Gaussian => "gaussian",
            KernelKind::Motion => "motion",
        }
    }
}

/// The generating parameters of a blur kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BlurSpec {
    Gaussian { sigma: f64, size: usize },
    Motion { length: f64, angle: f64, size: usize },
}

impl BlurSpec {
    pub fn kind(&self) -> KernelKind {
        match self {
            BlurSpec::Gaussian { .. } => KernelKind::Gaussian,
            BlurSpec::Motion { .. } => KernelKind::Motion,
        }
    }

    pub fn build(&self) -> Result<BlurKernel> {
        match *self {
            BlurSpec::Gaussian { sigma, size } => gaussian_kernel(sigma, size),
            BlurSpec::Motion { length, angle, size } => motion_kernel(length, angle, size),
        }
    }
}

/// One realization of the degradation parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradationParams {
    pub blur: BlurSpec,
    pub kernel: BlurKernel,
    /// Degraded side length `L`.
    pub degraded_side: usize,
    /// Downscale factor `s = R / L`.
    pub scale: f64,
    /// Noise std on the 0-255 scale.
    pub sigma: f64,
    /// JPEG quality; `None` bypasses compression.
    pub quality: Option<u8>,
}

impl DegradationParams {
    pub fn new(blur: BlurSpec, degraded_side: usize, scale: f64, sigma: f64, quality: Option<u8>) -> Result<Self> {
        if !(scale >= 1.0) {
            return invalid(format!("scale must be >= 1, got {scale}"));
        }
        if !(sigma >= 0.0) {
            return invalid(format!("sigma must be >= 0, got {sigma}"));
        }
        if let Some(q) = quality {
            if !(1..=100).contains(&q) {
                return invalid(format!("quality must lie in [1, 100], got {q}"));
            }
        }
        let kernel = blur.build()?;
        Ok(Self { blur, kernel, degraded_side, scale, sigma, quality })
    }

    /// Delta kernel, `s = 1`, no noise, no JPEG.
    pub fn identity(resolution: usize) -> Self {
        Self {
            blur: BlurSpec::Gaussian { sigma: 1.0, size: 1 },
            kernel: BlurKernel::delta(),
            degraded_side: resolution,
            scale: 1.0,
            sigma: 0.0,
            quality: None,
        }
    }

    pub fn kernel_kind(&self) -> KernelKind {
        self.blur.kind()
    }
}

/// Sampling ranges for [`sample_params`].
#[derive(Clone, Debug, PartialEq)]
pub struct DegradationConfig {
    pub resolution: usize,
    pub sigma_range: (f64, f64),
    pub q_range: (u8, u8),
    pub degraded_side_range: (usize, usize),
    pub gaussian_sigma_range: (f64, f64),
    pub motion_length_range: (usize, usize),
    /// Probability of a Gaussian kernel; motion blur otherwise.
    pub gaussian_probability: f64,
}

impl DegradationConfig {
    pub fn new(resolution: usize) -> Self {
        let hi = (resolution / 8).max(6).min(resolution);
        Self {
            resolution,
            sigma_range: (0.0, 25.0),
            q_range: (5, 50),
            degraded_side_range: (5.min(hi), hi),
            gaussian_sigma_range: (0.5, 8.0),
            motion_length_range: (5, 21),
            gaussian_probability: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (l0, l1) = self.degraded_side_range;
        let checks = [
            (self.resolution >= 1, "resolution must be >= 1".to_string()),
            (self.sigma_range.0 >= 0.0 && self.sigma_range.0 <= self.sigma_range.1, format!("bad sigma range {:?}", self.sigma_range)),
            (self.q_range.0 >= 1 && self.q_range.0 <= self.q_range.1 && self.q_range.1 <= 100, format!("bad quality range {:?}", self.q_range)),
            (l0 >= 1 && l0 <= l1 && l1 <= self.resolution, format!("bad degraded side range {:?} for resolution {}", self.degraded_side_range, self.resolution)),
            (self.gaussian_sigma_range.0 > 0.0 && self.gaussian_sigma_range.0 <= self.gaussian_sigma_range.1, format!("bad gaussian sigma range {:?}", self.gaussian_sigma_range)),
            (
                self.motion_length_range.0 >= 1 && self.motion_length_range.0 <= self.motion_length_range.1,
                format!("bad motion length range {:?}", self.motion_length_range),
            ),
            ((0.0..=1.0).contains(&self.gaussian_probability), format!("bad gaussian probability {}", self.gaussian_probability)),
        ];
        for (ok, msg) in checks {
            if !ok {
                return invalid(msg);
            }
        }
        let (m0, m1) = self.motion_length_range;
        if self.gaussian_probability < 1.0 && (m0..=m1).all(|l| l % 2 == 0) {
            return invalid("motion length range contains no odd length");
        }
        Ok(())
    }
}

pub fn sample_params(config: &DegradationConfig, rng: &mut GpenRng) -> Result<DegradationParams> {
    config.validate()?;
    let blur = if rng.random::<f64>() < config.gaussian_probability {
        let (lo, hi) = config.gaussian_sigma_range;
        let sigma = if hi > lo { rng.random_range(lo..hi) } else { lo };
        BlurSpec::Gaussian { sigma, size: gaussian_kernel_size(sigma) }
    } else {
        let (lo, hi) = config.motion_length_range;
        let odd: Vec<usize> = (lo..=hi).filter(|l| l % 2 == 1).collect();
        let length = odd[rng.random_range(0..odd.len())];
        let angle = rng.random_range(0.0..PI);
        BlurSpec::Motion { length: length as f64, angle, size: length }
    };
    let (l0, l1) = config.degraded_side_range;
    let side = rng.random_range(l0..=l1);
    let scale = config.resolution as f64 / side as f64;
    let (s0, s1) = config.sigma_range;
    let sigma = if s1 > s0 { rng.random_range(s0..=s1) } else { s0 };
    let quality = rng.random_range(config.q_range.0..=config.q_range.1);
    DegradationParams::new(blur, side, scale, sigma, Some(quality))
}

/// Blur, downsample, add noise, then JPEG (skipped when `quality` is `None`).
/// The result stays at the degraded resolution.
pub fn degrade(image: &Image, params: &DegradationParams, rng: &mut GpenRng) -> Result<Image> {
    let blurred = convolve2d(image, &params.kernel);
    let small = downsample(&blurred, params.scale)?;
    let noisy = add_gaussian_noise(&small, params.sigma, rng)?;
    match params.quality {
        Some(q) => jpeg_roundtrip(&noisy, q),
        None => Ok(noisy),
    }
}

/// Samples parameters and degrades from a single per-item seed.
pub fn degrade_seeded(image: &Image, config: &DegradationConfig, seed: u64) -> Result<(Image, DegradationParams)> {
    let mut rng = seeded(seed);
    let params = sample_params(config, &mut rng)?;
    let lq = degrade(image, &params, &mut rng)?;
    Ok((lq, params))
}

/// Loads an HQ image, resizing it to `resolution` when needed.
pub fn load_hq(path: &Path, resolution: usize) -> Result<Image> {
    let img = Image::load(path)?;
    if img.height() != resolution || img.width() != resolution {
        img.resize_bilinear(resolution, resolution)
    } else {
        Ok(img)
    }
}

/// One LQ-HQ pair in a manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct PairEntry {
    pub hq: PathBuf,
    pub lq: PathBuf,
    pub params: DegradationParams,
    pub seed: u64,
}

/// Line-oriented list of pairs. See [`Manifest::to_text`] for the format.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub resolution: usize,
    pub seed: u64,
    pub entries: Vec<PairEntry>,
}

const MANIFEST_HEADER: &str = "# gpen-pairs v1";

impl Manifest {
    /// Header lines start with `#`; every other line is one pair made of
    /// tab-separated `key=value` fields: `hq`, `lq`, `kernel_kind`,
    /// `sigma_blur` or `length`+`angle`, `ksize`, `L`, `s`, `sigma`,
    /// `q` (`none` when bypassed) and `seed`. Relative paths are resolved
    /// against the manifest's directory.
    pub fn to_text(&self) -> String {
        let mut s = format!("{MANIFEST_HEADER}\n# resolution={} seed={}\n", self.resolution, self.seed);
        for e in &self.entries {
            let p = &e.params;
            write!(s, "hq={}\tlq={}\tkernel_kind={}", e.hq.display(), e.lq.display(), p.kernel_kind().as_str()).unwrap();
            match p.blur {
                BlurSpec::Gaussian { sigma, size } => write!(s, "\tsigma_blur={sigma}\tksize={size}").unwrap(),
                BlurSpec::Motion { length, angle, size } => write!(s, "\tlength={length}\tangle={angle}\tksize={size}").unwrap(),
            }
            let q = p.quality.map_or("none".to_string(), |q| q.to_string());
            writeln!(s, "\tL={}\ts={}\tsigma={}\tq={}\tseed={}", p.degraded_side, p.scale, p.sigma, q, e.seed).unwrap();
        }
        s
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(MANIFEST_HEADER) {
            return invalid("manifest header missing");
        }
        let (mut resolution, mut seed) = (None, None);
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                for kv in rest.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("resolution", v)) => resolution = v.parse().ok(),
                        Some(("seed", v)) => seed = v.parse().ok(),
                        _ => {}
                    }
                }
                continue;
            }
            entries.push(parse_entry(line, base).map_err(|e| GpenError::InvalidArgument(format!("manifest line {}: {e}", n + 2)))?);
        }
        let resolution = resolution.ok_or_else(|| GpenError::InvalidArgument("manifest lacks resolution".into()))?;
        Ok(Self { resolution, seed: seed.unwrap_or(0), entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }
}

fn parse_entry(line: &str, base: &Path) -> std::result::Result<PairEntry, String> {
    let mut map = std::collections::HashMap::new();
    for field in line.split('\t') {
        let (k, v) = field.split_once('=').ok_or_else(|| format!("malformed field {field:?}"))?;
        map.insert(k, v);
    }
    let get = |k: &str| map.get(k).copied().ok_or_else(|| format!("missing key {k}"));
    fn num<T: std::str::FromStr>(k: &str, v: &str) -> std::result::Result<T, String> {
        v.parse().map_err(|_| format!("bad value for {k}: {v:?}"))
    }
    let resolve = |p: &str| {
        let p = PathBuf::from(p);
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    };
    let size: usize = num("ksize", get("ksize")?)?;
    let blur = match get("kernel_kind")? {
        "gaussian" => BlurSpec::Gaussian { sigma: num("sigma_blur", get("sigma_blur")?)?, size },
        "motion" => BlurSpec::Motion { length: num("length", get("length")?)?, angle: num("angle", get("angle")?)?, size },
        other => return Err(format!("unknown kernel_kind {other:?}")),
    };
    let quality = match get("q")? {
        "none" => None,
        v => Some(num("q", v)?),
    };
    let params = DegradationParams::new(blur, num("L", get("L")?)?, num("s", get("s")?)?, num("sigma", get("sigma")?)?, quality)
        .map_err(|e| e.to_string())?;
    Ok(PairEntry { hq: resolve(get("hq")?), lq: resolve(get("lq")?), params, seed: num("seed", get("seed")?)? })
}

/// Degrades every image in `hq_dir` into `out_dir/lq/` and writes
/// `out_dir/manifest.txt`. Item `i` (in sorted file order) uses the seed
/// `derive_seed(seed, i)`, so the output is reproducible from `(manifest, seed)`.
pub fn make_pairs(hq_dir: &Path, out_dir: &Path, config: &DegradationConfig, seed: u64) -> Result<Manifest> {
    config.validate()?;
    let files = list_images(hq_dir)?;
    if files.is_empty() {
        return invalid(format!("no images found in {}", hq_dir.display()));
    }
    let lq_dir = out_dir.join("lq");
    std::fs::create_dir_all(&lq_dir)?;
    let results: Vec<Result<Option<PairEntry>>> = files
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let hq = match load_hq(path, config.resolution) {
                Ok(img) => img,
                Err(e) => {
                    warn!("skipping {}: {e}", path.display());
                    return Ok(None);
                }
            };
            let item_seed = derive_seed(seed, i as u64);
            let (lq, params) = degrade_seeded(&hq, config, item_seed)?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("img");
            let rel = PathBuf::from("lq").join(format!("{i:04}_{stem}.png"));
            lq.save_png(&out_dir.join(&rel))?;
            let hq_path = std::fs::canonicalize(path).unwrap_or_else(|_| path.clone());
            Ok(Some(PairEntry { hq: hq_path, lq: rel, params, seed: item_seed }))
        })
        .collect();
    let mut entries = Vec::new();
    for r in results {
        if let Some(e) = r? {
            entries.push(e);
        }
    }
    if entries.is_empty() {
        return invalid(format!("no readable images in {}", hq_dir.display()));
    }
    let manifest = Manifest { resolution: config.resolution, seed, entries };
    std::fs::write(out_dir.join("manifest.txt"), manifest.to_text())?;
    Ok(Manifest {
        entries: manifest.entries.into_iter().map(|e| PairEntry { lq: out_dir.join(&e.lq), ..e }).collect(),
        ..manifest
    })
}

/// Quantizes like an 8-bit PNG store/load cycle.
pub fn quantize_image(image: &Image) -> Image {
    let mut out = image.clone();
    out.data_mut().iter_mut().for_each(|v| *v = quantize(*v) as f64 / 255.0);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient_image(h: usize, w: usize) -> Image {
        Image::from_fn(3, h, w, |c, y, x| (c as f64 * 0.2 + y as f64 / h as f64 * 0.5 + x as f64 / w as f64 * 0.3) % 1.0)
    }

    #[test]
    fn gaussian_size_one_is_delta() {
        for s in [0.1, 1.0, 7.0] {
            assert_eq!(gaussian_kernel(s, 1).unwrap().taps(), &[1.0]);
        }
    }

    #[test]
    fn gaussian_3x3_matches_grid_oracle() {
        // Oracle: evaluate exp(-r^2/2) on the 3x3 grid, normalize by the sum.
        let (center, edge, corner) = (1.0, (-0.5f64).exp(), (-1.0f64).exp());
        let total = center + 4.0 * edge + 4.0 * corner;
        assert!((total - 4.8976).abs() < 1e-4);
        let k = gaussian_kernel(1.0, 3).unwrap();
        assert!((k.tap(1, 1) - center / total).abs() < 1e-12);
        assert!((k.tap(0, 1) - edge / total).abs() < 1e-12);
        assert!((k.tap(0, 0) - corner / total).abs() < 1e-12);
        assert!((k.tap(1, 1) - 0.2042).abs() < 1e-4);
        assert!((k.tap(0, 1) - 0.1238).abs() < 1e-4);
        assert!((k.tap(0, 0) - 0.0751).abs() < 1e-4);
        assert!((gaussian_kernel(1.0, 5).unwrap().taps().iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn kernel_rejects_even_or_zero_size() {
        assert!(matches!(gaussian_kernel(1.0, 4), Err(GpenError::InvalidArgument(_))));
        assert!(matches!(gaussian_kernel(1.0, 0), Err(GpenError::InvalidArgument(_))));
        assert!(matches!(gaussian_kernel(0.0, 3), Err(GpenError::InvalidArgument(_))));
        assert!(matches!(motion_kernel(5.0, 0.0, 3), Err(GpenError::InvalidArgument(_))));
    }

    #[test]
    fn motion_kernel_examples() {
        for angle in [0.0, 0.4, 1.3, 2.9] {
            let k = motion_kernel(1.0, angle, 3).unwrap();
            assert!((k.tap(1, 1) - 1.0).abs() < 1e-12, "angle {angle}");
        }
        let h = motion_kernel(3.0, 0.0, 3).unwrap();
        for j in 0..3 {
            assert!((h.tap(1, j) - 1.0 / 3.0).abs() < 1e-12);
            assert_eq!(h.tap(0, j), 0.0);
        }
        let v = motion_kernel(3.0, PI / 2.0, 3).unwrap();
        for i in 0..3 {
            assert!((v.tap(i, 1) - 1.0 / 3.0).abs() < 1e-12);
            assert!(v.tap(i, 0).abs() < 1e-12);
        }
    }

    #[test]
    fn convolution_examples() {
        let img = gradient_image(6, 5);
        assert_eq!(convolve2d(&img, &BlurKernel::delta()), img);
        let c = Image::filled(3, 7, 9, 0.3);
        let out = convolve2d(&c, &gaussian_kernel(2.0, 13).unwrap());
        assert!(out.data().iter().all(|v| (v - 0.3).abs() < 1e-12));
        // Brute force: only the centered impulse contributes, so output(y,x)
        // equals the tap at (y,x) for a symmetric 3x3 kernel.
        let imp = Image::from_fn(1, 3, 3, |_, y, x| if y == 1 && x == 1 { 1.0 } else { 0.0 });
        let k = gaussian_kernel(1.0, 3).unwrap();
        let out = convolve2d(&imp, &k);
        for y in 0..3 {
            for x in 0..3 {
                assert!((out.get(0, y, x) - k.tap(y, x)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn downsample_examples() {
        let img = gradient_image(8, 8);
        assert_eq!(downsample(&img, 1.0).unwrap(), img);
        let checker = Image::from_fn(3, 2, 2, |_, y, x| ((y + x) % 2) as f64);
        let d = downsample(&checker, 2.0).unwrap();
        assert_eq!(d.shape(), (3, 1, 1));
        assert!((d.get(0, 0, 0) - 0.5).abs() < 1e-15);
        let d = downsample(&Image::filled(3, 64, 64, 0.6), 10.0).unwrap();
        assert_eq!(d.shape(), (3, 6, 6));
        assert!(d.data().iter().all(|v| (v - 0.6).abs() < 1e-12));
        assert!(downsample(&img, 0.5).is_err());
    }

    #[test]
    fn noise_examples() {
        let img = gradient_image(16, 16);
        let mut rng = seeded(1);
        assert_eq!(add_gaussian_noise(&img, 0.0, &mut rng).unwrap(), img);
        let a = add_gaussian_noise(&img, 10.0, &mut seeded(5)).unwrap();
        let b = add_gaussian_noise(&img, 10.0, &mut seeded(5)).unwrap();
        assert_eq!(a, b);
        // Monte Carlo: 0.5 is ~5 std from either clamp bound.
        let flat = Image::filled(3, 100, 100, 0.5);
        let noisy = add_gaussian_noise(&flat, 25.0, &mut seeded(9)).unwrap();
        let d: Vec<f64> = noisy.data().iter().map(|v| v - 0.5).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
        assert!((std / (25.0 / 255.0) - 1.0).abs() < 0.05, "std {std}");
    }

    #[test]
    fn jpeg_examples() {
        let smooth = Image::from_fn(3, 32, 32, |c, y, x| 0.2 + 0.15 * c as f64 + 0.3 * (y as f64 / 31.0) * (x as f64 / 31.0));
        let hi = jpeg_roundtrip(&smooth, 95).unwrap();
        assert_eq!(hi.shape(), smooth.shape());
        assert!(hi.mean_abs_diff(&smooth).unwrap() < 0.05);
        let textured = Image::from_fn(3, 16, 16, |c, y, x| ((x * 7 + y * 13 + c * 5) % 17) as f64 / 16.0);
        let lo = jpeg_roundtrip(&textured, 5).unwrap();
        assert!(lo.mean_abs_diff(&textured).unwrap() > 0.0);
        assert!(jpeg_roundtrip(&smooth, 0).is_err());
    }

    #[test]
    fn sampled_params_respect_ranges() {
        let cfg = DegradationConfig::new(1024);
        let mut rng = seeded(3);
        let mut qs = std::collections::HashSet::new();
        for _ in 0..10_000 {
            let p = sample_params(&cfg, &mut rng).unwrap();
            assert!((0.0..=25.0).contains(&p.sigma));
            let q = p.quality.unwrap();
            assert!((5..=50).contains(&q));
            qs.insert(q);
            assert!((p.kernel.taps().iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!((5..=128).contains(&p.degraded_side));
        }
        assert!(qs.len() >= 40);
        assert_eq!(sample_params(&cfg, &mut seeded(11)).unwrap(), sample_params(&cfg, &mut seeded(11)).unwrap());
    }

    #[test]
    fn degrade_examples() {
        let img = gradient_image(64, 64);
        let id = DegradationParams::identity(64);
        assert_eq!(degrade(&img, &id, &mut seeded(0)).unwrap(), img);
        let p = DegradationParams::new(BlurSpec::Gaussian { sigma: 1.5, size: 11 }, 8, 8.0, 0.0, None).unwrap();
        assert_eq!(degrade(&img, &p, &mut seeded(0)).unwrap().shape(), (3, 8, 8));
        let cfg = DegradationConfig::new(64);
        let (a, pa) = degrade_seeded(&img, &cfg, 42).unwrap();
        let (b, pb) = degrade_seeded(&img, &cfg, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
    }

    #[test]
    fn manifest_text_roundtrip() {
        let cfg = DegradationConfig::new(64);
        let entries = (0..4)
            .map(|i| PairEntry {
                hq: PathBuf::from(format!("/data/{i}.png")),
                lq: PathBuf::from(format!("lq/{i}.png")),
                params: sample_params(&cfg, &mut seeded(i)).unwrap(),
                seed: i,
            })
            .collect();
        let m = Manifest { resolution: 64, seed: 9, entries };
        let back = Manifest::parse(&m.to_text(), Path::new("/out")).unwrap();
        assert_eq!(back.entries.len(), 4);
        for (a, b) in m.entries.iter().zip(&back.entries) {
            assert_eq!(a.params, b.params);
            assert_eq!(b.lq, Path::new("/out").join(&a.lq));
        }
    }

    proptest! {
        #[test]
        fn kernels_are_normalized(sigma in 0.3f64..9.0, length in 1usize..12, angle in 0.0f64..3.14159) {
            let g = gaussian_kernel(sigma, gaussian_kernel_size(sigma)).unwrap();
            prop_assert!((g.taps().iter().sum::<f64>() - 1.0).abs() < 1e-6);
            let n = g.size();
            for i in 0..n {
                for j in 0..n {
                    let t = g.tap(i, j);
                    prop_assert!((t - g.tap(n - 1 - i, j)).abs() < 1e-15);
                    prop_assert!((t - g.tap(i, n - 1 - j)).abs() < 1e-15);
                    prop_assert!((t - g.tap(j, i)).abs() < 1e-15);
                }
            }
            let size = length | 1;
            let m = motion_kernel(length as f64, angle, size).unwrap();
            prop_assert!((m.taps().iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(m.taps().iter().all(|t| *t >= 0.0));
        }

        #[test]
        fn downsample_side_rule(side in 1usize..80, s in 1.0f64..20.0, v in 0.0f64..1.0) {
            let img = Image::filled(3, side, side, v);
            let d = downsample(&img, s).unwrap();
            let expect = ((side as f64 / s).round() as usize).max(1);
            prop_assert_eq!(d.shape(), (3, expect, expect));
            prop_assert!(d.data().iter().all(|x| (x - v).abs() < 1e-12));
        }

        #[test]
        fn noise_stays_in_unit_range(v in 0.0f64..1.0, sigma in 0.0f64..25.0, seed in 0u64..1000) {
            let img = Image::filled(3, 8, 8, v);
            let out = add_gaussian_noise(&img, sigma, &mut seeded(seed)).unwrap();
            prop_assert!(out.data().iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }
}
