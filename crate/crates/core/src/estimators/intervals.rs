/// Standard normal 0.975 quantile.
pub const Z_975: f64 = 1.959_963_984_540_054;
/// Standard normal 0.95 quantile.
pub const Z_95: f64 = 1.644_853_626_951_472_2;

/// Wald intervals at 95% and 90%. Bounds are not truncated to [0, 1].
pub fn wald_intervals(p_hat: f64, se: f64) -> ((f64, f64), (f64, f64)) {
    debug_assert!(se >= 0.0);
    (
        (p_hat - Z_975 * se, p_hat + Z_975 * se),
        (p_hat - Z_95 * se, p_hat + Z_95 * se),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn degenerate_at_zero_se() {
        let (a, b) = wald_intervals(0.7, 0.0);
        assert_eq!(a, (0.7, 0.7));
        assert_eq!(b, (0.7, 0.7));
    }

    #[test]
    fn ninety_five_percent_bounds() {
        let (ci95, ci90) = wald_intervals(0.70, 0.02);
        assert_abs_diff_eq!(ci95.0, 0.66080, epsilon = 1e-5);
        assert_abs_diff_eq!(ci95.1, 0.73920, epsilon = 1e-5);
        assert!(ci95.0 < ci90.0 && ci90.1 < ci95.1);
    }
}
