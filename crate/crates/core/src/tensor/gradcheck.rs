//! Central-difference gradient verification at 64-bit precision.

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Coordinate where `max_rel_error` was observed.
    pub worst_index: usize,
    pub numeric: Vec<f64>,
}

/// Compares `analytic` with the central difference of `f` at `point`.
pub fn grad_check(mut f: impl FnMut(&[f64]) -> f64, point: &[f64], analytic: &[f64], eps: f64) -> GradCheck {
    assert_eq!(point.len(), analytic.len(), "gradient length must match point");
    let mut x = point.to_vec();
    let mut numeric = Vec::with_capacity(point.len());
    let mut worst = (0.0, 0);
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let up = f(&x);
        x[i] = orig - eps;
        let down = f(&x);
        x[i] = orig;
        let n = (up - down) / (2.0 * eps);
        let e = relative_error(analytic[i], n);
        if e > worst.0 {
            worst = (e, i);
        }
        numeric.push(n);
    }
    GradCheck {
        max_rel_error: worst.0,
        worst_index: worst.1,
        numeric,
    }
}
