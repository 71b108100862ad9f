//! Central finite-difference verification of tape gradients.

use serde::Serialize;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub h: f64,
    pub tol: f64,
    /// Test fixture: negate the analytic gradient of the named parameter
    /// before comparison so a broken backward pass can be simulated.
    pub sign_flip: Option<String>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { h: 1e-5, tol: 1e-4, sign_flip: None }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradFailure {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub failures: Vec<GradFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// Folds another report into this one (used when sweeping seeds).
    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.failures.extend(other.failures);
    }
}

/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

fn eval(store: &ParamStore<f64>, f: &impl Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    let v = g.value(loss);
    if v.len() != 1 {
        return Err(Error::shape("grad_check", "objective must be scalar"));
    }
    let v = v.data()[0];
    if !v.is_finite() {
        return Err(Error::NonFinite { op: "grad_check objective" });
    }
    Ok(v)
}

/// Compares the tape gradient of a scalar objective against central
/// differences for every entry of every parameter in `store`.
pub fn grad_check<F>(name: &str, store: &mut ParamStore<f64>, cfg: &GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&cfg.h) {
        return Err(Error::Argument(format!("finite-difference step {} outside [1e-6, 1e-4]", cfg.h)));
    }
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    if !g.value(loss).is_finite() {
        return Err(Error::NonFinite { op: "grad_check objective" });
    }
    let grads = g.backward(loss)?;

    let mut report = GradCheckReport { name: name.to_string(), checked: 0, max_rel_error: 0.0, failures: Vec::new() };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let pname = store.get(id).name.clone();
        let n = store.get(id).value.len();
        let flip = cfg.sign_flip.as_deref() == Some(pname.as_str());
        for i in 0..n {
            let mut analytic = grads.param(id).map_or(0.0, |t| t.data()[i]);
            if flip {
                analytic = -analytic;
            }
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + cfg.h;
            let up = eval(store, &f);
            store.get_mut(id).value.data_mut()[i] = orig - cfg.h;
            let down = eval(store, &f);
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (up? - down?) / (2.0 * cfg.h);
            let rel = relative_error(analytic, numeric);
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel > cfg.tol {
                report.failures.push(GradFailure { param: pname.clone(), index: i, analytic, numeric, rel_error: rel });
            }
        }
    }
    Ok(report)
}
