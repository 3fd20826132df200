//! Central-finite-difference validation of analytic gradients.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::store::ParameterStore;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Maximum relative error per parameter name.
    pub per_param: BTreeMap<String, f64>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.per_param.values().copied().fold(0.0, f64::max)
    }
}

/// Relative error used throughout: |a - b| / max(1e-8, |a| + |b|).
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Compares the analytic gradients produced by `loss_fn` against central
/// finite differences (f(x+h) - f(x-h)) / (2h) for every scalar entry of
/// every parameter.
///
/// `loss_fn` must be deterministic, return the loss value, and accumulate
/// analytic gradients into the store's gradient slots. On return the store
/// holds its original values and the analytic gradients.
pub fn grad_check<F>(mut loss_fn: F, params: &mut ParameterStore, h: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParameterStore) -> Result<f64>,
{
    assert!(h > 0.0, "finite-difference step must be positive");

    params.zero_gradients();
    let base = loss_fn(params)?;
    if !base.is_finite() {
        return Err(Error::NonFinite("loss at the unperturbed point".into()));
    }
    let analytic: BTreeMap<String, Vec<f64>> = params
        .iter()
        .map(|(name, entry)| (name.to_string(), entry.gradient.data().to_vec()))
        .collect();

    let names: Vec<String> = params.names().map(|s| s.to_string()).collect();
    let mut per_param = BTreeMap::new();
    for name in &names {
        let n = params.value(name)?.len();
        let mut worst: f64 = 0.0;
        for idx in 0..n {
            let mut probe = |delta: f64, sign: &str| -> Result<f64> {
                params.value_mut(name)?.data_mut()[idx] += delta;
                params.zero_gradients();
                let v = loss_fn(params);
                params.value_mut(name)?.data_mut()[idx] -= delta;
                let v = v?;
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss after perturbing '{name}'[{idx}] by {sign}{h}"
                    )));
                }
                Ok(v)
            };
            let plus = probe(h, "+")?;
            let minus = probe(-h, "-")?;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(analytic[name][idx], numeric));
        }
        per_param.insert(name.clone(), worst);
    }

    // Leave the analytic gradients in place.
    params.zero_gradients();
    for (name, grads) in &analytic {
        params.gradient_mut(name)?.data_mut().copy_from_slice(grads);
    }
    let _ = base;
    Ok(GradCheckReport { per_param })
}
