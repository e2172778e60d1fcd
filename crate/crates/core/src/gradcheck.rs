//! Central finite-difference checks of analytic gradients.
//!
//! Only the loss function is evaluated here, never the analytic gradient
//! code, so the two routes stay independent.

/// Relative error measure used throughout: `|a − n| / max(1, |a|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Central differences of `loss` around `params`, one coordinate at a time.
pub fn central_differences(params: &[f64], eps: f64, mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = loss(&probe);
            probe[i] = orig - eps;
            let down = loss(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    /// Parameter index with the largest error.
    pub worst_index: usize,
}

pub fn compare(analytic: &[f64], numeric: &[f64]) -> GradCheck {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .enumerate()
        .map(|(i, (a, n))| GradCheck { max_relative_error: relative_error(*a, *n), worst_index: i })
        .fold(GradCheck { max_relative_error: 0.0, worst_index: 0 }, |best, c| {
            if c.max_relative_error > best.max_relative_error {
                c
            } else {
                best
            }
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_has_exact_central_difference() {
        let g = central_differences(&[1.5, -2.0], 1e-5, |p| p[0] * p[0] + 3.0 * p[1]);
        assert!((g[0] - 3.0).abs() < 1e-9);
        assert!((g[1] - 3.0).abs() < 1e-9);
        let c = compare(&[3.0, 3.0], &g);
        assert!(c.max_relative_error < 1e-9);
    }
}
