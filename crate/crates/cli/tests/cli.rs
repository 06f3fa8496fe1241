use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gpen_core::checkpoint::Checkpoint;
use gpen_core::params::Part;
use gpen_core::synthetic::write_faces;
use gpen_core::Image;

const TINY: &[&str] = &["--channel-base", "16", "--channel-max", "4", "--latent-dim", "8", "--mapping-depth", "2"];

fn gpen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpen"))
        .args(args)
        .env_remove("GPEN_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn gpen")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(o));
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        write_faces(&root.join("hq"), 16, 3, 5).unwrap();
        Self { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn degrade(&self, out: &str, seed: &str) -> PathBuf {
        let out = self.path(out);
        assert_ok(&gpen(&["degrade", "--input", s(&self.path("hq")), "--output", s(&out), "--res", "8", "--seed", seed]));
        out.join("manifest.txt")
    }

    fn pretrain(&self, out: &str, extra: &[&str]) -> PathBuf {
        let out = self.path(out);
        let hq = self.path("hq");
        let mut args = vec!["pretrain", "--data", s(&hq), "--res", "8", "--steps", "3", "--out", s(&out)];
        args.extend(TINY.iter().chain(extra));
        assert_ok(&gpen(&args));
        out
    }
}

#[test]
fn missing_input_directory_is_a_usage_error() {
    let f = Fixture::new();
    let o = gpen(&["degrade", "--input", s(&f.path("nope")), "--output", s(&f.path("out")), "--res", "8"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("not a directory"));
}

#[test]
fn bad_resolution_is_a_usage_error() {
    let f = Fixture::new();
    let o = gpen(&["pretrain", "--data", s(&f.path("hq")), "--res", "12", "--steps", "1", "--out", s(&f.path("p.ckpt"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn degrade_is_reproducible_and_seed_env_is_honored() {
    let f = Fixture::new();
    let a = f.degrade("a", "9");
    let b = f.degrade("b", "9");
    let text_a = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text_a, std::fs::read_to_string(&b).unwrap());
    for entry in std::fs::read_dir(f.path("a/lq")).unwrap() {
        let p = entry.unwrap().path();
        let q = f.path("b/lq").join(p.file_name().unwrap());
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    }

    let out = f.path("env");
    let o = Command::new(env!("CARGO_BIN_EXE_gpen"))
        .args(["degrade", "--input", s(&f.path("hq")), "--output", s(&out), "--res", "8"])
        .env("GPEN_SEED", "9")
        .output()
        .unwrap();
    assert_ok(&o);
    assert_eq!(text_a, std::fs::read_to_string(out.join("manifest.txt")).unwrap());
}

#[test]
fn pretrain_finetune_restore_eval_pipeline() {
    let f = Fixture::new();
    let manifest = f.degrade("pairs", "1");
    let prior = f.pretrain("prior.ckpt", &[]);
    let model = f.path("model.ckpt");
    let log = f.path("finetune.log");
    assert_ok(&gpen(&[
        "--single-thread",
        "finetune",
        "--pairs",
        s(&manifest),
        "--prior",
        s(&prior),
        "--steps",
        "2",
        "--out",
        s(&model),
        "--freeze-decoder",
        "--log",
        s(&log),
    ]));
    let before = Checkpoint::load(&prior).unwrap().into_prior().unwrap();
    let after = Checkpoint::load(&model).unwrap().into_model().unwrap();
    for (name, t) in before.params.part(Part::Decoder).iter() {
        assert_eq!(after.params.get(name).unwrap(), t, "decoder tensor {name} changed");
    }
    let log_text = std::fs::read_to_string(&log).unwrap();
    assert_eq!(log_text.lines().count(), 3, "{log_text}");

    let restored = f.path("restored");
    assert_ok(&gpen(&["restore", "--model", s(&model), "--input", s(&f.path("pairs/lq")), "--output", s(&restored)]));
    let outputs: Vec<_> = std::fs::read_dir(&restored).unwrap().collect();
    assert_eq!(outputs.len(), 3);
    for o in outputs {
        let img = Image::load(&o.unwrap().path()).unwrap();
        assert_eq!(img.shape(), (3, 8, 8));
    }

    let script = f.path("metric.sh");
    std::fs::write(&script, "#!/bin/sh\necho warming up\necho 0.25\n").unwrap();
    let report = f.path("report.txt");
    let metric = format!("fake=sh {}", s(&script));
    assert_ok(&gpen(&["eval", "--model", s(&model), "--pairs", s(&manifest), "--report", s(&report), "--metric", &metric]));
    let text = std::fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# gpen-eval v1");
    assert!(lines[1].ends_with("\tfake"), "{text}");
    assert_eq!(lines.len(), 2 + 3 + 1, "{text}");
    assert!(lines[2..5].iter().all(|l| l.ends_with("\t0.250000")), "{text}");
}

#[test]
fn failing_metric_plugin_is_reported_per_pair() {
    let f = Fixture::new();
    let manifest = f.degrade("pairs", "1");
    let prior = f.pretrain("prior.ckpt", &[]);
    let model = f.path("model.ckpt");
    assert_ok(&gpen(&["finetune", "--pairs", s(&manifest), "--prior", s(&prior), "--steps", "0", "--out", s(&model)]));
    let report = f.path("report.txt");
    assert_ok(&gpen(&["eval", "--model", s(&model), "--pairs", s(&manifest), "--report", s(&report), "--metric", "broken=false"]));
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.lines().skip(2).take(3).all(|l| l.ends_with("\tERR")), "{text}");
    assert!(text.contains("# error pair 0"), "{text}");
}

#[test]
fn incompatible_prior_names_the_mismatch() {
    let f = Fixture::new();
    let manifest = f.degrade("pairs", "1");
    let prior = f.pretrain("prior.ckpt", &["--noise-mode", "none"]);
    let o = gpen(&["finetune", "--pairs", s(&manifest), "--prior", s(&prior), "--steps", "1", "--out", s(&f.path("m.ckpt")), "--noise-mode", "concat"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("noise_mode"), "{}", stderr(&o));
    assert!(!f.path("m.ckpt").exists());
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let f = Fixture::new();
    let prior = f.pretrain("prior.ckpt", &[]);
    let bytes = std::fs::read(&prior).unwrap();
    std::fs::write(&prior, &bytes[..bytes.len() - 5]).unwrap();
    let manifest = f.degrade("pairs", "1");
    let o = gpen(&["finetune", "--pairs", s(&manifest), "--prior", s(&prior), "--steps", "1", "--out", s(&f.path("m.ckpt"))]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let f = Fixture::new();
    let cfg = f.path("run.cfg");
    std::fs::write(&cfg, "noise_mode = add\nchannel_base = 16\nchannel_max = 4\nlatent_dim = 8\nmapping_depth = 2\n").unwrap();
    let (out, hq) = (f.path("p.ckpt"), f.path("hq"));
    let args = ["pretrain", "--data", s(&hq), "--res", "8", "--steps", "1", "--out", s(&out), "--config", s(&cfg), "--noise-mode", "none"];
    assert_ok(&gpen(&args));
    let gen = Checkpoint::load(&out).unwrap().generator_config().unwrap();
    assert_eq!(gen.noise_mode.as_str(), "none");
    assert_eq!(gen.latent_dim, 8);

    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let o = gpen(&args);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn selftest_passes_and_catches_injected_fault() {
    let o = gpen(&["selftest"]);
    assert_ok(&o);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().all(|l| l.starts_with("PASS ")), "{text}");

    let o = gpen(&["selftest", "--inject-fault", "demod-eps-sign"]);
    assert_eq!(o.status.code(), Some(1));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("FAIL demodulation-norm"), "{text}");
}
