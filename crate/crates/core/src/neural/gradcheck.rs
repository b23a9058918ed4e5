//! Central-difference verification of analytic gradients.
//!
//! Every coordinate of every parameter is perturbed by +/- step and the
//! loss re-evaluated; the resulting secant slope is compared against the
//! gradient the tape produced at the unperturbed point.
//!
//! The relative-error denominator is floored at the resolution of central
//! differences themselves: evaluating a loss of magnitude |f| carries
//! rounding error ~eps*|f|, so the secant slope carries ~eps*|f|/(2*step)
//! of noise no matter how small the true gradient is. Coordinates below
//! that noise floor cannot be measured by finite differences at any
//! tolerance; comparing them against the floor instead of their own
//! magnitude keeps the check meaningful for every coordinate it can
//! actually resolve.

use crate::error::{Error, Result};
use crate::neural::params::{GradMap, ParamSet};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-5, tolerance: 1e-4 }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckFailure {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub failures: Vec<GradCheckFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// `eval` maps parameters to (loss, analytic gradients). The analytic map
/// must contain one entry per parameter, sized to match.
pub fn check_gradients<F>(
    params: &ParamSet,
    cfg: &GradCheckConfig,
    mut eval: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamSet) -> Result<(f64, GradMap)>,
{
    let (center, analytic) = eval(params)?;
    // Gradient magnitude at which secant-slope roundoff alone reaches the
    // tolerance, with a 4x allowance for error growth inside the loss.
    let resolution = 4.0 * f64::EPSILON * center.abs() / (2.0 * cfg.step * cfg.tolerance);
    let floor = resolution.max(1e-8);
    let mut work = params.clone();
    let mut report = GradCheckReport::default();

    for (name, tensor) in params.iter() {
        let grad = analytic.get(name).ok_or_else(|| {
            Error::Contract(format!("gradient map missing parameter {name:?}"))
        })?;
        if grad.len() != tensor.numel() {
            return Err(Error::dimension(
                format!("gradient of {name}"),
                tensor.numel().to_string(),
                grad.len().to_string(),
            ));
        }
        for index in 0..tensor.numel() {
            let original = tensor.data()[index];
            work.get_mut(name).unwrap().data_mut()[index] = original + cfg.step;
            let (up, _) = eval(&work)?;
            work.get_mut(name).unwrap().data_mut()[index] = original - cfg.step;
            let (down, _) = eval(&work)?;
            work.get_mut(name).unwrap().data_mut()[index] = original;

            let numeric = (up - down) / (2.0 * cfg.step);
            let analytic_value = grad[index];
            let denom = analytic_value.abs().max(numeric.abs()).max(floor);
            let rel_err = (analytic_value - numeric).abs() / denom;

            report.coords_checked += 1;
            report.max_rel_err = report.max_rel_err.max(rel_err);
            if rel_err > cfg.tolerance {
                report.failures.push(GradCheckFailure {
                    param: name.to_string(),
                    index,
                    analytic: analytic_value,
                    numeric,
                    rel_err,
                });
            }
        }
    }
    Ok(report)
}
