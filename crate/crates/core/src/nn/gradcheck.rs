//! Central finite-difference verification of analytic gradients.

use crate::error::{Result, StanError};

/// Relative error used by the gradient suite.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)` over the checked coordinates.
    pub norm_relative_error: f64,
    pub max_relative_error: f64,
    /// Coordinate where the maximum was attained.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compare `value_and_grad`'s gradient at `point` against central differences
/// of its value, over the coordinates in `indices` (all coordinates when `None`).
pub fn grad_check_report<F>(
    mut value_and_grad: F,
    point: &[f64],
    eps: f64,
    indices: Option<&[usize]>,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (f0, grad) = value_and_grad(point)?;
    if !f0.is_finite() {
        return Err(StanError::NonFinite("gradcheck base value".into()));
    }
    if grad.len() != point.len() {
        return Err(StanError::Shape(format!(
            "gradient has {} entries for {} coordinates",
            grad.len(),
            point.len()
        )));
    }
    if let Some(g) = grad.iter().find(|g| !g.is_finite()) {
        return Err(StanError::NonFinite(format!("analytic gradient {g}")));
    }
    let all: Vec<usize>;
    let idx = match indices {
        Some(i) => i,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };
    let mut x = point.to_vec();
    let mut report = GradCheckReport {
        norm_relative_error: 0.0,
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: idx.len(),
    };
    let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
    for &i in idx {
        let orig = x[i];
        x[i] = orig + eps;
        let fp = value_and_grad(&x)?.0;
        x[i] = orig - eps;
        let fm = value_and_grad(&x)?.0;
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(StanError::NonFinite(format!("perturbed value at coordinate {i}")));
        }
        let numeric = (fp - fm) / (2.0 * eps);
        diff2 += (grad[i] - numeric).powi(2);
        a2 += grad[i] * grad[i];
        n2 += numeric * numeric;
        let err = relative_error(grad[i], numeric);
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_index = i;
            report.analytic = grad[i];
            report.numeric = numeric;
        }
    }
    report.norm_relative_error = diff2.sqrt() / a2.sqrt().max(n2.sqrt()).max(1e-12);
    Ok(report)
}

/// Maximum relative error over every coordinate.
pub fn grad_check<F>(value_and_grad: F, point: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    grad_check_report(value_and_grad, point, eps, None).map(|r| r.max_relative_error)
}
