//! Standard normal helpers and the folded-normal critical value.

use statrs::distribution::{ContinuousCDF, Normal};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `Phi^{-1}(p)` for `p` in (0, 1).
pub fn quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile level must lie in (0, 1)");
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    n.inverse_cdf(p)
}

/// The `1 - alpha` quantile of `|N(b, 1)|`.
///
/// Solves `Phi(c - b) - Phi(-c - b) = 1 - alpha` by bisection on `[0, b + 10]`.
pub fn critical_value(b: f64, alpha: f64) -> f64 {
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    let b = b.abs();
    let target = 1.0 - alpha;
    let f = |c: f64| cdf(c - b) - cdf(-c - b) - target;
    let (mut lo, mut hi) = (0.0, b + 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * (1.0 + hi) {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_match_tables() {
        assert!((quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((quantile(0.95) - 1.644_853_626_951_472_2).abs() < 1e-12);
        assert!((quantile(0.8) - 0.841_621_233_572_914_3).abs() < 1e-12);
        assert!((quantile(0.5)).abs() < 1e-14);
    }

    #[test]
    fn critical_value_endpoints() {
        assert!((critical_value(0.0, 0.05) - 1.959_963_984_540_054).abs() < 1e-9);
        let b = 5.0;
        let c = critical_value(b, 0.05);
        assert!((c - (b + quantile(0.95))).abs() < 1e-6);
    }

    #[test]
    fn critical_value_residual_is_tiny() {
        for &b in &[0.0, 0.1, 0.5, 1.0, 2.5, 10.0, 40.0] {
            for &a in &[0.01, 0.05, 0.1, 0.32] {
                let c = critical_value(b, a);
                let r = cdf(c - b) - cdf(-c - b) - (1.0 - a);
                assert!(r.abs() < 1e-10, "b={b} a={a} r={r}");
            }
        }
    }
}
