use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};

use gpen_core::checkpoint::{Checkpoint, KIND_GPEN};
use gpen_core::config::ConfigFile;
use gpen_core::degradation::{make_pairs, DegradationConfig, Manifest};
use gpen_core::encoder::LatentSpace;
use gpen_core::image::list_images;
use gpen_core::metrics::{evaluate, MetricPlugin};
use gpen_core::model::{embed_prior, restore_batch, GpenConfig};
use gpen_core::prior::{GeneratorConfig, NoiseMode};
use gpen_core::selftest::{run_selftest, Fault};
use gpen_core::train::{finetune_gpen, finetune_log_text, load_dataset, load_pairs, pretrain_gan, pretrain_log_text, TrainConfig};
use gpen_core::GpenError;

#[derive(Parser, Debug)]
#[command(name = "gpen", version, about = "Blind face restoration with an embedded GAN prior")]
struct Cli {
    /// Run all parallel sections on one thread (bit-reproducible mode).
    #[arg(long, global = true)]
    single_thread: bool,

    /// Log every training step.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize degraded LQ images and a pair manifest from HQ images.
    Degrade(DegradeArgs),
    /// Pretrain the GAN prior on HQ images.
    Pretrain(PretrainArgs),
    /// Fine-tune the restoration network on a pair manifest.
    Finetune(FinetuneArgs),
    /// Restore one image or every image in a directory.
    Restore(RestoreArgs),
    /// Write a PSNR report for a model over a pair manifest.
    Eval(EvalArgs),
    /// Run the fast invariant battery.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug)]
struct SeedArg {
    /// Random seed.
    #[arg(long, env = "GPEN_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct DegradeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Training resolution R (power of two, at least 8).
    #[arg(long)]
    res: usize,
    #[command(flatten)]
    seed: SeedArg,
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GeneratorArgs {
    #[arg(long)]
    noise_mode: Option<NoiseMode>,
    #[arg(long)]
    channel_base: Option<usize>,
    #[arg(long)]
    channel_max: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    mapping_depth: Option<usize>,
}

impl GeneratorArgs {
    fn apply(&self, cfg: &mut GeneratorConfig) {
        if let Some(v) = self.noise_mode {
            cfg.noise_mode = v;
        }
        if let Some(v) = self.channel_base {
            cfg.channel_base = v;
        }
        if let Some(v) = self.channel_max {
            cfg.channel_max = v;
        }
        if let Some(v) = self.latent_dim {
            cfg.latent_dim = v;
        }
        if let Some(v) = self.mapping_depth {
            cfg.mapping_depth = v;
        }
    }
}

#[derive(Args, Debug)]
struct PretrainArgs {
    /// Directory of HQ face images.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    res: usize,
    #[arg(long)]
    steps: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    generator: GeneratorArgs,
    /// Write the per-step loss log here.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Directory for periodic and diagnostic checkpoints.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    /// Pair manifest written by `gpen degrade`.
    #[arg(long)]
    pairs: PathBuf,
    /// Pretrained prior (or a restoration checkpoint to continue from).
    #[arg(long)]
    prior: PathBuf,
    #[arg(long)]
    steps: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    freeze_encoder: bool,
    #[arg(long)]
    freeze_decoder: bool,
    #[arg(long)]
    freeze_discriminator: bool,
    /// Expected noise mode; must match the prior.
    #[arg(long)]
    noise_mode: Option<NoiseMode>,
    /// Read the encoder output as `z` (through the mapping network) or `w`.
    #[arg(long)]
    latent_space: Option<LatentSpace>,
    /// Train on the stored LQ images instead of fresh degradations.
    #[arg(long)]
    stored_lq: bool,
    #[arg(long)]
    reinit_discriminator: bool,
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RestoreArgs {
    #[arg(long)]
    model: PathBuf,
    /// An image file or a directory of images.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// External metric as NAME=COMMAND; run as `COMMAND restored.png hq.png`.
    #[arg(long = "metric")]
    metrics: Vec<String>,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    /// Inject a known defect to check that the battery catches it.
    #[arg(long, hide = true)]
    inject_fault: Option<Fault>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<GpenError> for Failure {
    fn from(e: GpenError) -> Self {
        match e {
            GpenError::InvalidArgument(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn usage<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Usage(msg.into()))
}

fn require_dir(path: &Path, what: &str) -> CmdResult {
    if !path.is_dir() {
        return usage(format!("{what} {} is not a directory", path.display()));
    }
    Ok(())
}

fn require_file(path: &Path, what: &str) -> CmdResult {
    if !path.is_file() {
        return usage(format!("{what} {} does not exist", path.display()));
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile, Failure> {
    match path {
        Some(p) => Ok(ConfigFile::load(p)?),
        None => Ok(ConfigFile::default()),
    }
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn ensure_dir(path: Option<&Path>) -> CmdResult {
    if let Some(p) = path {
        std::fs::create_dir_all(p).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", p.display())))?;
    }
    Ok(())
}

fn cmd_degrade(a: &DegradeArgs) -> CmdResult {
    require_dir(&a.input, "input")?;
    let file = load_config(a.config.as_deref())?;
    let mut cfg = DegradationConfig::new(a.res);
    file.apply_degradation(&mut cfg)?;
    cfg.resolution = a.res;
    GeneratorConfig::new(a.res).validate()?;
    let manifest = make_pairs(&a.input, &a.output, &cfg, a.seed.seed)?;
    info!("wrote {} pairs to {}", manifest.entries.len(), a.output.display());
    Ok(())
}

fn train_config(file: &ConfigFile, steps: usize, seed: u64) -> Result<TrainConfig, Failure> {
    let mut cfg = TrainConfig::default();
    file.apply_train(&mut cfg)?;
    cfg.steps = steps;
    cfg.seed = seed;
    Ok(cfg)
}

fn cmd_pretrain(a: &PretrainArgs) -> CmdResult {
    let file = load_config(a.config.as_deref())?;
    let mut gen = GeneratorConfig::new(a.res);
    file.apply_generator(&mut gen)?;
    gen.resolution = a.res;
    a.generator.apply(&mut gen);
    gen.validate()?;
    require_dir(&a.data, "data")?;
    let cfg = train_config(&file, a.steps, a.seed.seed)?;
    cfg.validate()?;
    ensure_dir(a.checkpoint_dir.as_deref())?;
    let images = load_dataset(&a.data, a.res)?;
    info!("pretraining on {} images at {}x{} for {} steps", images.len(), a.res, a.res, a.steps);
    let (prior, log) = pretrain_gan(&images, &gen, &cfg, None, a.checkpoint_dir.as_deref())?;
    Checkpoint::from_prior(&prior, a.steps as u64, a.seed.seed).save(&a.out)?;
    if let Some(p) = &a.log {
        write_text(p, &pretrain_log_text(&log))?;
    }
    info!("prior written to {}", a.out.display());
    Ok(())
}

fn cmd_finetune(a: &FinetuneArgs) -> CmdResult {
    require_file(&a.pairs, "pair manifest")?;
    require_file(&a.prior, "prior checkpoint")?;
    let file = load_config(a.config.as_deref())?;
    let mut cfg = train_config(&file, a.steps, a.seed.seed)?;
    cfg.freeze.encoder |= a.freeze_encoder;
    cfg.freeze.decoder |= a.freeze_decoder;
    cfg.freeze.discriminator |= a.freeze_discriminator;
    cfg.fresh_degradations &= !a.stored_lq;
    cfg.reinit_discriminator |= a.reinit_discriminator;
    cfg.validate()?;

    let ckpt = Checkpoint::load(&a.prior)?;
    let mut expected = ckpt.generator_config()?;
    file.apply_generator(&mut expected)?;
    if let Some(m) = a.noise_mode {
        expected.noise_mode = m;
    }
    let is_gpen = ckpt.kind()? == KIND_GPEN;
    let mut latent_space = if is_gpen { ckpt.gpen_config()?.latent_space } else { LatentSpace::Z };
    file.apply_latent_space(&mut latent_space)?;
    if let Some(s) = a.latent_space {
        latent_space = s;
    }
    let gpen_cfg = GpenConfig { generator: expected.clone(), latent_space };
    let start_step = ckpt.step().unwrap_or(0);
    let model = if is_gpen {
        ckpt.into_model_for(&gpen_cfg)?
    } else {
        let prior = ckpt.into_prior_for(&expected)?;
        embed_prior(&prior, &gpen_cfg, a.seed.seed)?
    };

    let manifest = Manifest::load(&a.pairs)?;
    if manifest.resolution != expected.resolution {
        return Err(GpenError::IncompatibleCheckpoint(vec![format!(
            "resolution: manifest has {}, model has {}",
            manifest.resolution, expected.resolution
        )])
        .into());
    }
    let mut degradation = DegradationConfig::new(manifest.resolution);
    file.apply_degradation(&mut degradation)?;
    let pairs = load_pairs(&manifest)?;
    ensure_dir(a.checkpoint_dir.as_deref())?;
    info!("fine-tuning on {} pairs for {} steps", pairs.len(), a.steps);
    let (model, log) = finetune_gpen(model, &pairs, &degradation, &cfg, a.checkpoint_dir.as_deref())?;
    Checkpoint::from_model(&model, start_step + a.steps as u64, a.seed.seed).save(&a.out)?;
    if let Some(p) = &a.log {
        write_text(p, &finetune_log_text(&log))?;
    }
    info!("model written to {}", a.out.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<gpen_core::model::GpenModel, Failure> {
    require_file(path, "model checkpoint")?;
    Ok(Checkpoint::load(path)?.into_model()?)
}

fn cmd_restore(a: &RestoreArgs) -> CmdResult {
    let model = load_model(&a.model)?;
    let inputs = if a.input.is_dir() {
        list_images(&a.input)?
    } else if a.input.is_file() {
        vec![a.input.clone()]
    } else {
        return usage(format!("input {} does not exist", a.input.display()));
    };
    ensure_dir(Some(&a.output))?;
    let results = restore_batch(&model, &inputs, true);
    let mut failed = 0;
    for (path, result) in inputs.iter().zip(results) {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let out = a.output.join(format!("{stem}.png"));
        match result.and_then(|img| img.save_png(&out)) {
            Ok(()) => info!("{} -> {}", path.display(), out.display()),
            Err(e) => {
                error!("{}: {e}", path.display());
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} of {} images failed", inputs.len())));
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> CmdResult {
    let plugins = a.metrics.iter().map(|m| MetricPlugin::parse(m)).collect::<Result<Vec<_>, _>>()?;
    require_file(&a.pairs, "pair manifest")?;
    let model = load_model(&a.model)?;
    let manifest = Manifest::load(&a.pairs)?;
    let scratch = a.report.with_extension("work");
    let report = evaluate(&model, &manifest, &plugins, &scratch)?;
    if scratch.exists() {
        if let Err(e) = std::fs::remove_dir_all(&scratch) {
            warn!("could not remove {}: {e}", scratch.display());
        }
    }
    write_text(&a.report, &report.to_text())?;
    info!(
        "mean PSNR model {:.3} dB, baseline {:.3} dB over {} pairs",
        report.mean_model().unwrap_or(f64::NAN),
        report.mean_baseline().unwrap_or(f64::NAN),
        report.rows.len()
    );
    Ok(())
}

fn cmd_selftest(a: &SelftestArgs) -> CmdResult {
    let results = run_selftest(a.inject_fault);
    let mut failed = Vec::new();
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        if !r.passed {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("failed checks: {}", failed.join(", "))))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.single_thread {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(1).build_global() {
            warn!("could not restrict the thread pool: {e}");
        }
    }
    let result = match &cli.command {
        Command::Degrade(a) => cmd_degrade(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Restore(a) => cmd_restore(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Selftest(a) => cmd_selftest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
