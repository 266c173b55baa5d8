//! Central finite-difference gradient checking.
//!
//! The numeric oracle only calls the forward path: it perturbs one parameter
//! entry at a time and re-evaluates the loss, so it stays independent of the
//! reverse-mode implementation it validates.

use crate::nn::{ParamId, ParamStore};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub h: f64,
    pub rel_tol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-5,
            rel_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// (param name, flat index, analytic, numeric) of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Relative error with a floor so near-zero gradient pairs compare absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-3);
    (analytic - numeric).abs() / scale
}

/// Compare analytic gradients in `store` against central differences of
/// `loss_fn`. `loss_fn` must be a pure function of the parameter values.
pub fn check_gradients<F>(
    store: &mut ParamStore,
    mut loss_fn: F,
    config: &GradCheckConfig,
) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut max_rel_err: f64 = 0.0;
    let mut worst = None;
    let mut checked = 0;
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let n = store.get(id).value.numel();
        for j in 0..n {
            let orig = store.get(id).value.data[j];
            store.get_mut(id).value.data[j] = orig + config.h;
            let up = loss_fn(store);
            store.get_mut(id).value.data[j] = orig - config.h;
            let down = loss_fn(store);
            store.get_mut(id).value.data[j] = orig;
            let numeric = (up - down) / (2.0 * config.h);
            let analytic = store.get(id).grad()[j];
            let e = rel_err(analytic, numeric);
            checked += 1;
            if e > max_rel_err {
                max_rel_err = e;
                worst = Some((store.get(id).name.clone(), j, analytic, numeric));
            }
        }
    }
    GradCheckReport {
        max_rel_err,
        checked,
        worst,
    }
}
