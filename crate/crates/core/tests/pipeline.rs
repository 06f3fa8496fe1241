use gpen_core::autograd::Graph;
use gpen_core::degradation::{make_pairs, DegradationConfig, Manifest};
use gpen_core::encoder::encoder_forward;
use gpen_core::metrics::{evaluate, psnr};
use gpen_core::model::{embed_prior, resize_input, GanPrior, GpenConfig};
use gpen_core::params::Bound;
use gpen_core::prior::{sample_latent, GeneratorConfig, NoiseMode, NoiseSet};
use gpen_core::rng::seeded;
use gpen_core::synthetic::{synthetic_face, write_faces};
use gpen_core::train::{pretrain_gan, TrainConfig};
use gpen_core::Image;

fn small(res: usize) -> GeneratorConfig {
    GeneratorConfig { resolution: res, channel_base: 64, channel_max: 4, mapping_depth: 2, latent_dim: 8, noise_mode: NoiseMode::Concat }
}

fn std_dev(img: &Image) -> f64 {
    let n = img.data().len() as f64;
    let mean = img.data().iter().sum::<f64>() / n;
    (img.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[test]
fn shape_suite() {
    for (res, blocks) in [(32, 3), (64, 4), (128, 5)] {
        let cfg = small(res);
        assert_eq!(cfg.num_blocks(), blocks);
        assert_eq!(cfg.noise_levels().len(), blocks + 1);
        let model = embed_prior(&GanPrior::init(cfg.clone(), 1).unwrap(), &GpenConfig::new(cfg.clone()), 2).unwrap();
        let mut g = Graph::new();
        let p = Bound::all_constant(&mut g, &model.params);
        let x = g.constant(synthetic_face(res, 3).to_signed_tensor());
        let enc = encoder_forward(&mut g, &p, &cfg, x).unwrap();
        assert_eq!(enc.pyramid.len(), blocks + 1);
        for (v, r) in enc.pyramid.iter().zip(cfg.noise_levels()) {
            assert_eq!(g.shape(*v), [cfg.noise_channels(r), r, r]);
        }
        let out = model.restore(&synthetic_face(res / 4, 4)).unwrap();
        assert_eq!(out.shape(), (3, res, res));
    }
}

#[test]
fn random_init_samples_are_nonconstant_and_style_dependent() {
    let cfg = small(16);
    let gan = GanPrior::init(cfg.clone(), 5).unwrap();
    let prior = gan.prior();
    let mut rng = seeded(6);
    for _ in 0..100 {
        assert!(std_dev(&prior.sample_generate(&mut rng).unwrap()) > 0.0);
    }
    let noises = NoiseSet::sample(&cfg, &mut rng);
    let w1 = prior.mapping(&sample_latent(&cfg, &mut rng)).unwrap();
    let w2 = prior.mapping(&sample_latent(&cfg, &mut rng)).unwrap();
    let a = prior.synthesize(&w1, &noises).unwrap();
    let b = prior.synthesize(&w2, &noises).unwrap();
    let gap: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
    assert!(gap > 0.0);
}

#[test]
fn smoke_pretraining_at_32() {
    let images: Vec<Image> = (0..8).map(|i| synthetic_face(32, i)).collect();
    let cfg = TrainConfig { steps: 500, seed: 3, ..TrainConfig::default() };
    let (gan, log) = pretrain_gan(&images, &small(32), &cfg, None, None).unwrap();
    assert_eq!(log.len(), 500);
    assert!(log.iter().all(|r| r.loss_d.is_finite() && r.loss_g.is_finite()));
    let mut rng = seeded(4);
    for _ in 0..4 {
        assert!(std_dev(&gan.prior().sample_generate(&mut rng).unwrap()) > 1e-3);
    }
}

#[test]
fn make_pairs_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    write_faces(&dir.path().join("hq"), 64, 4, 8).unwrap();
    let cfg = DegradationConfig::new(64);
    let read_all = |out: &str| {
        let m = make_pairs(&dir.path().join("hq"), &dir.path().join(out), &cfg, 11).unwrap();
        let lq: Vec<Vec<u8>> = m.entries.iter().map(|e| std::fs::read(&e.lq).unwrap()).collect();
        (std::fs::read(dir.path().join(out).join("manifest.txt")).unwrap(), lq)
    };
    assert_eq!(read_all("a"), read_all("b"));
}

#[test]
fn eval_baseline_column_matches_direct_psnr() {
    let dir = tempfile::tempdir().unwrap();
    write_faces(&dir.path().join("hq"), 16, 3, 9).unwrap();
    let cfg = small(16);
    make_pairs(&dir.path().join("hq"), &dir.path().join("pairs"), &DegradationConfig::new(16), 1).unwrap();
    let manifest = Manifest::load(&dir.path().join("pairs/manifest.txt")).unwrap();
    let model = embed_prior(&GanPrior::init(cfg.clone(), 1).unwrap(), &GpenConfig::new(cfg), 2).unwrap();
    let report = evaluate(&model, &manifest, &[], &dir.path().join("scratch")).unwrap();
    assert_eq!(report.rows.len(), 3);
    for (row, entry) in report.rows.iter().zip(&manifest.entries) {
        let hq = Image::load(&entry.hq).unwrap();
        let lq = Image::load(&entry.lq).unwrap();
        let direct = psnr(&resize_input(&lq, 16).unwrap(), &hq).unwrap();
        assert_eq!(*row.psnr_baseline.as_ref().unwrap(), direct);
        let restored = psnr(&model.restore(&lq).unwrap(), &hq).unwrap();
        assert_eq!(*row.psnr_model.as_ref().unwrap(), restored);
    }
}
