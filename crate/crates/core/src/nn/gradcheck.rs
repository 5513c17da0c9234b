//! Central-difference verification of analytic gradients.

use crate::error::{Error, Result};

/// Outcome of comparing analytic and numerical derivatives.
#[derive(Clone, Debug)]
pub struct GradcheckReport {
    /// `max |a - fd| / (|a| + |fd| + 1e-12)` over checked coordinates.
    pub max_rel_error: f64,
    /// Coordinate that attains the maximum.
    pub worst_index: usize,
    pub checked: usize,
}

/// Relative discrepancy used by [`gradcheck`].
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Compare `analytic[i]` with `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`
/// for every `i` in `indices`.
///
/// `f` evaluates the scalar objective at a full coordinate vector.
pub fn gradcheck<F>(f: F, point: &[f64], analytic: &[f64], indices: &[usize], eps: f64) -> Result<GradcheckReport>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::invalid(format!(
            "gradcheck eps must lie in (0, 1e-2], got {eps}"
        )));
    }
    if analytic.len() != point.len() {
        return Err(Error::shape("gradcheck", &[point.len()], &[analytic.len()]));
    }
    let mut x = point.to_vec();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: 0,
    };
    for &i in indices {
        let a = *analytic
            .get(i)
            .ok_or_else(|| Error::invalid(format!("gradcheck index {i} out of range")))?;
        if !a.is_finite() {
            return Err(Error::NonFinite(format!("analytic gradient of parameter {i}")));
        }
        let orig = x[i];
        x[i] = orig + eps;
        let up = f(&x)?;
        x[i] = orig - eps;
        let down = f(&x)?;
        x[i] = orig;
        let fd = (up - down) / (2.0 * eps);
        if !fd.is_finite() {
            return Err(Error::NonFinite(format!("finite-difference gradient of parameter {i}")));
        }
        let err = relative_error(a, fd);
        if err > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = err;
            report.worst_index = i;
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Every index up to `n`, or an evenly strided subset of `max` of them.
pub fn sample_indices(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let step = n as f64 / max as f64;
    (0..max).map(|i| ((i as f64 * step) as usize).min(n - 1)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let w = [0.3, -1.7, 2.5, 0.01];
        let f = |x: &[f64]| Ok(x.iter().zip(&w).map(|(a, b)| a * b).sum());
        let r = gradcheck(f, &[1.0, 2.0, -3.0, 4.0], &w, &[0, 1, 2, 3], 1e-4).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let f = |x: &[f64]| Ok(x[0] * x[0]);
        let r = gradcheck(f, &[3.0], &[5.0], &[0], 1e-5).unwrap();
        assert!(r.max_rel_error > 0.05);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let f = |x: &[f64]| Ok(x[0] + x[1]);
        let err = gradcheck(f, &[0.0, 0.0], &[1.0, f64::NAN], &[0, 1], 1e-4).unwrap_err();
        assert!(err.to_string().contains("parameter 1"), "{err}");
    }

    #[test]
    fn eps_range_is_enforced() {
        let f = |x: &[f64]| Ok(x[0]);
        assert!(gradcheck(f, &[0.0], &[1.0], &[0], 0.1).is_err());
        assert!(gradcheck(f, &[0.0], &[1.0], &[0], 0.0).is_err());
    }

    #[test]
    fn sampling_is_strided_and_bounded() {
        assert_eq!(sample_indices(3, 10), vec![0, 1, 2]);
        let s = sample_indices(1000, 100);
        assert_eq!(s.len(), 100);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
    }
}
