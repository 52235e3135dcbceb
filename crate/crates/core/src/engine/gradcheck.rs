//! Central finite-difference verification of analytic gradients.

use super::EngineError;

/// Denominator floor for the relative error, so that coordinates whose true
/// gradient is ~0 are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub trait Differentiable {
    fn value(&self, theta: &[f64]) -> f64;
    fn gradient(&self, theta: &[f64]) -> Vec<f64>;
    /// Distance from `theta` to the nearest non-differentiable point, measured
    /// in the function's own units, when the function has kinks.
    fn kink_distance(&self, _theta: &[f64]) -> Option<f64> {
        None
    }
}

/// Adapts a pair of closures.
pub struct FnDifferentiable<F, G> {
    pub f: F,
    pub g: G,
}

impl<F, G> Differentiable for FnDifferentiable<F, G>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    fn value(&self, theta: &[f64]) -> f64 {
        (self.f)(theta)
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        (self.g)(theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradCheckStatus {
    Passed,
    Failed,
    /// `theta` is too close to a kink for finite differences to mean anything.
    Excluded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub status: GradCheckStatus,
    pub max_rel_error: f64,
    pub worst_coordinate: Option<usize>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.status == GradCheckStatus::Passed
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the analytic gradient with `(f(θ+h eᵢ) − f(θ−h eᵢ)) / 2h` on every
/// coordinate. Passes iff the largest relative error is below `tol`.
pub fn grad_check(
    f: &dyn Differentiable,
    theta: &[f64],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport, EngineError> {
    if h.is_nan() || h <= 0.0 {
        return Err(EngineError::BadStep);
    }
    if let Some(d) = f.kink_distance(theta) {
        if d <= 10.0 * h {
            return Ok(GradCheckReport {
                status: GradCheckStatus::Excluded,
                max_rel_error: 0.0,
                worst_coordinate: None,
                checked: 0,
            });
        }
    }
    let analytic = f.gradient(theta);
    if analytic.len() != theta.len() {
        return Err(EngineError::DimMismatch {
            what: "gradient",
            expected: theta.len(),
            got: analytic.len(),
        });
    }
    let mut probe = theta.to_vec();
    let mut worst = 0.0;
    let mut worst_i = None;
    for i in 0..theta.len() {
        if !analytic[i].is_finite() {
            return Err(EngineError::NonFinite(i));
        }
        probe[i] = theta[i] + h;
        let up = f.value(&probe);
        probe[i] = theta[i] - h;
        let down = f.value(&probe);
        probe[i] = theta[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(EngineError::NonFinite(i));
        }
        let numeric = (up - down) / (2.0 * h);
        let e = relative_error(analytic[i], numeric);
        if e > worst || worst_i.is_none() {
            worst = e;
            worst_i = Some(i);
        }
    }
    Ok(GradCheckReport {
        status: if worst < tol {
            GradCheckStatus::Passed
        } else {
            GradCheckStatus::Failed
        },
        max_rel_error: worst,
        worst_coordinate: worst_i,
        checked: theta.len(),
    })
}
