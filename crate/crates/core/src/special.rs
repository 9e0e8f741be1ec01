//! Special functions used by the density families and p-value code.

pub use statrs::function::gamma::{digamma, ln_gamma};

/// Trigamma function ψ'(x) for x > 0.
///
/// Shifts the argument above 10 with the recurrence ψ'(x) = ψ'(x+1) + 1/x²,
/// then applies the asymptotic series.
pub fn trigamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // 1/x + 1/(2x²) + Σ B_{2k} / x^{2k+1}
    let series = inv
        + 0.5 * inv2
        + inv
            * inv2
            * (1.0 / 6.0
                + inv2
                    * (-1.0 / 30.0
                        + inv2 * (1.0 / 42.0 + inv2 * (-1.0 / 30.0 + inv2 * (5.0 / 66.0 + inv2 * (-691.0 / 2730.0))))));
    acc + series
}

/// Survival function of the χ² distribution with `df` degrees of freedom.
pub fn chisq_sf(stat: f64, df: f64) -> f64 {
    if stat.is_nan() {
        return 1.0;
    }
    if stat <= 0.0 {
        return 1.0;
    }
    if stat.is_infinite() {
        return 0.0;
    }
    statrs::function::gamma::gamma_ur(0.5 * df, 0.5 * stat)
}

/// Numerically stable `log Σ exp(v)`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trigamma_known_values() {
        // ψ'(1) = π²/6, ψ'(1/2) = π²/2
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((trigamma(1.0) - pi2 / 6.0).abs() < 1e-12);
        assert!((trigamma(0.5) - pi2 / 2.0).abs() < 1e-12);
        assert!((trigamma(100.0) - 0.010050166663333571).abs() < 1e-14);
    }

    #[test]
    fn trigamma_matches_digamma_difference() {
        for &x in &[0.3, 1.7, 5.5, 12.0, 250.0] {
            let h = 1e-5 * x;
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert!((fd - trigamma(x)).abs() / trigamma(x) < 1e-6, "x={x}");
        }
    }

    #[test]
    fn chisq_sf_closed_forms() {
        assert_eq!(chisq_sf(0.0, 3.0), 1.0);
        assert!((chisq_sf(2.0, 2.0) - (-1.0f64).exp()).abs() < 1e-14);
        for &x in &[0.1, 1.0, 10.0, 80.0] {
            let exact = (-x / 2.0f64).exp();
            assert!(((chisq_sf(x, 2.0) - exact) / exact).abs() < 1e-10);
        }
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
