//! Central finite-difference verification of graph gradients.

use crate::autograd::{Graph, Var};
use crate::error::{invalid, Result};
use crate::params::{Bound, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Magnitudes below this are compared in absolute terms.
    pub floor: f64,
    /// Alternative steps tried when the first estimate disagrees, in the
    /// order `10h, h/10, h/100, ...`. The larger step reduces round-off in
    /// the quotient. The smaller ones handle a leaky-ReLU kink inside
    /// `[x - h, x + h]` by moving it outside the stencil.
    pub refinements: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-6, tolerance: 1e-5, floor: 1e-4, refinements: 3 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Entries that needed an alternative step to agree.
    pub refined: usize,
    pub mismatches: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.mismatches.is_empty()
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.refined += other.refined;
        self.mismatches.extend(other.mismatches);
    }
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares the backward pass of `loss` against central differences for
/// every scalar of every tensor in `leaves`. `loss` must build a scalar
/// from the bound leaves and be deterministic.
pub fn check_gradients(
    leaves: &ParamStore,
    loss: impl Fn(&mut Graph, &Bound) -> Result<Var>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let p = Bound::all_constant(&mut g, store);
        let out = loss(&mut g, &p)?;
        if g.value(out).len() != 1 {
            return invalid(format!("gradient check needs a scalar loss, got shape {:?}", g.shape(out)));
        }
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let p = Bound::new(&mut g, leaves, |_| true);
    let out = loss(&mut g, &p)?;
    if g.value(out).len() != 1 {
        return invalid(format!("gradient check needs a scalar loss, got shape {:?}", g.shape(out)));
    }
    let analytic = p.collect(&g.backward(out));
    drop(g);

    let mut report = GradCheckReport::default();
    let mut work = leaves.clone();
    let names: Vec<String> = leaves.names().cloned().collect();
    for name in names {
        let len = leaves.get(&name).expect("listed").len();
        for index in 0..len {
            let a = analytic.get(&name).map_or(0.0, |t| t.data()[index]);
            let x0 = leaves.get(&name).expect("listed").data()[index];
            let mut best = f64::INFINITY;
            let mut numeric = 0.0;
            for attempt in 0..=opts.refinements {
                let h = match attempt {
                    0 => opts.step,
                    1 => opts.step * 10.0,
                    k => opts.step * 10f64.powi(1 - k as i32),
                };
                work.get_mut(&name).expect("listed").data_mut()[index] = x0 + h;
                let fp = eval(&work)?;
                work.get_mut(&name).expect("listed").data_mut()[index] = x0 - h;
                let fm = eval(&work)?;
                let n = (fp - fm) / (2.0 * h);
                let e = rel_err(a, n, opts.floor);
                if e < best {
                    best = e;
                    numeric = n;
                }
                if e <= opts.tolerance {
                    if attempt > 0 {
                        report.refined += 1;
                    }
                    break;
                }
            }
            work.get_mut(&name).expect("listed").data_mut()[index] = x0;
            report.checked += 1;
            report.max_rel_err = report.max_rel_err.max(best);
            if best > opts.tolerance {
                report.mismatches.push(Mismatch { name: name.clone(), index, analytic: a, numeric, rel_err: best });
            }
        }
    }
    Ok(report)
}
