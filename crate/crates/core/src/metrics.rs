//! PSNR and paired evaluation reports with external metric plug-ins.
//!
//! Report format (tab separated):
//!
//! ```text
//! # gpen-eval v1
//! pair_id  psnr_model  psnr_baseline  [plug-in columns...]
//! 0        24.1        21.7           ...
//! mean     ...
//! ```
//!
//! Values that could not be computed are written as `ERR`; the reason
//! follows in a trailing `# error` comment line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use rayon::prelude::*;

use crate::degradation::{load_hq, Manifest};
use crate::error::{invalid, Result};
use crate::image::Image;
use crate::model::{BilinearBaseline, Restorer};

/// Returned for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const ERROR_MARKER: &str = "ERR";

/// `-10 log10(MSE)` for images in `[0, 1]`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if a.shape() != b.shape() {
        return invalid(format!("psnr shape mismatch {:?} vs {:?}", a.shape(), b.shape()));
    }
    let n = a.data().len() as f64;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP_DB))
}

/// External metric run as `command... <restored.png> <hq.png>`; the last
/// line of its standard output must parse as a number.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricPlugin {
    pub name: String,
    pub command: Vec<String>,
}

impl MetricPlugin {
    /// Parses `NAME=CMD [ARGS...]`.
    pub fn parse(spec: &str) -> Result<Self> {
        let Some((name, cmd)) = spec.split_once('=') else {
            return invalid(format!("metric spec {spec:?} must look like NAME=COMMAND"));
        };
        let command: Vec<String> = cmd.split_whitespace().map(String::from).collect();
        if name.trim().is_empty() || command.is_empty() || name.contains(char::is_whitespace) {
            return invalid(format!("metric spec {spec:?} must look like NAME=COMMAND"));
        }
        Ok(Self { name: name.to_string(), command })
    }

    pub fn run(&self, restored: &Path, hq: &Path) -> std::result::Result<f64, String> {
        let out = Command::new(&self.command[0])
            .args(&self.command[1..])
            .arg(restored)
            .arg(hq)
            .output()
            .map_err(|e| format!("{}: {e}", self.name))?;
        if !out.status.success() {
            return Err(format!("{} exited with {}", self.name, out.status));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        let last = text.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("");
        last.trim().parse::<f64>().map_err(|_| format!("{} printed {last:?}, not a number", self.name))
    }
}

type Cell = std::result::Result<f64, String>;

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub pair_id: usize,
    pub psnr_model: Cell,
    pub psnr_baseline: Cell,
    pub plugins: Vec<Cell>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub plugin_names: Vec<String>,
    pub rows: Vec<ReportRow>,
}

fn mean_of<'a>(cells: impl Iterator<Item = &'a Cell>) -> Option<f64> {
    let vals: Vec<f64> = cells.filter_map(|c| c.as_ref().ok().copied()).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

fn fmt_cell(c: &Cell) -> String {
    match c {
        Ok(v) => format!("{v:.6}"),
        Err(_) => ERROR_MARKER.to_string(),
    }
}

impl Report {
    pub fn mean_model(&self) -> Option<f64> {
        mean_of(self.rows.iter().map(|r| &r.psnr_model))
    }

    pub fn mean_baseline(&self) -> Option<f64> {
        mean_of(self.rows.iter().map(|r| &r.psnr_baseline))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# gpen-eval v1\npair_id\tpsnr_model\tpsnr_baseline");
        for name in &self.plugin_names {
            s.push('\t');
            s.push_str(name);
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{}\t{}\t{}", r.pair_id, fmt_cell(&r.psnr_model), fmt_cell(&r.psnr_baseline));
            for c in &r.plugins {
                let _ = write!(s, "\t{}", fmt_cell(c));
            }
            s.push('\n');
        }
        let fmt_mean = |m: Option<f64>| m.map_or(ERROR_MARKER.to_string(), |v| format!("{v:.6}"));
        let _ = write!(s, "mean\t{}\t{}", fmt_mean(self.mean_model()), fmt_mean(self.mean_baseline()));
        for i in 0..self.plugin_names.len() {
            let _ = write!(s, "\t{}", fmt_mean(mean_of(self.rows.iter().map(|r| &r.plugins[i]))));
        }
        s.push('\n');
        for r in &self.rows {
            let cells = [&r.psnr_model, &r.psnr_baseline].into_iter().chain(&r.plugins);
            for e in cells.filter_map(|c| c.as_ref().err()) {
                let _ = writeln!(s, "# error pair {}: {}", r.pair_id, e.replace('\n', " "));
            }
        }
        s
    }
}

/// Evaluates `model` against the bilinear baseline on every manifest pair.
/// Restored images are written under `scratch` when plug-ins need files.
pub fn evaluate(model: &dyn Restorer, manifest: &Manifest, plugins: &[MetricPlugin], scratch: &Path) -> Result<Report> {
    if !plugins.is_empty() {
        std::fs::create_dir_all(scratch)?;
    }
    let baseline = BilinearBaseline { resolution: model.resolution() };
    let res = model.resolution();
    let rows = manifest
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, entry)| {
            let loaded = load_hq(&entry.hq, res).and_then(|hq| Ok((hq, Image::load(&entry.lq)?)));
            let (hq, lq) = match loaded {
                Ok(v) => v,
                Err(e) => {
                    let msg = e.to_string();
                    return ReportRow {
                        pair_id: i,
                        psnr_model: Err(msg.clone()),
                        psnr_baseline: Err(msg.clone()),
                        plugins: vec![Err(msg); plugins.len()],
                    };
                }
            };
            let restored = model.restore(&lq);
            let psnr_model = restored.as_ref().map_err(|e| e.to_string()).and_then(|r| psnr(r, &hq).map_err(|e| e.to_string()));
            let psnr_baseline = baseline.restore(&lq).and_then(|b| psnr(&b, &hq)).map_err(|e| e.to_string());
            let plugin_cells = match &restored {
                Ok(img) if !plugins.is_empty() => run_plugins(plugins, img, &hq, &scratch.join(format!("pair{i:05}"))),
                Ok(_) => Vec::new(),
                Err(e) => vec![Err(e.to_string()); plugins.len()],
            };
            ReportRow { pair_id: i, psnr_model, psnr_baseline, plugins: plugin_cells }
        })
        .collect();
    Ok(Report { plugin_names: plugins.iter().map(|p| p.name.clone()).collect(), rows })
}

fn run_plugins(plugins: &[MetricPlugin], restored: &Image, hq: &Image, stem: &Path) -> Vec<Cell> {
    let restored_path = PathBuf::from(format!("{}_restored.png", stem.display()));
    let hq_path = PathBuf::from(format!("{}_hq.png", stem.display()));
    if let Err(e) = restored.save_png(&restored_path).and_then(|_| hq.save_png(&hq_path)) {
        return vec![Err(e.to_string()); plugins.len()];
    }
    plugins.iter().map(|p| p.run(&restored_path, &hq_path)).collect()
}
