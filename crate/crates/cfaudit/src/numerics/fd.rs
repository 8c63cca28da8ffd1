//! Central finite differences, the independent oracle every analytic
//! gradient in this crate is checked against.

/// Central difference of `f` along coordinate `i` at `x` with step `h`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += h;
    let fp = f(&xp);
    xp[i] = x[i] - h;
    let fm = f(&xp);
    (fp - fm) / (2.0 * h)
}

/// Relative error with an absolute floor so that near-zero derivative pairs
/// are compared on an absolute scale instead of blowing up the ratio.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_derivative_is_exact_for_central_difference() {
        let mut f = |x: &[f64]| 3.0 * x[0] * x[0] + 2.0 * x[0];
        let d = central_diff(&mut f, &[1.5], 0, 1e-5);
        // Central differences are exact on quadratics up to rounding.
        assert!((d - 11.0).abs() < 1e-9, "{d}");
    }

    #[test]
    fn rel_err_floors_small_magnitudes() {
        assert!(rel_err(0.0, 1e-9) < 1e-2);
        assert!((rel_err(2.0, 1.0) - 0.5).abs() < 1e-12);
    }
}
