//! Student-t distribution and single-regressor least squares.
//!
//! The t CDF is evaluated through the regularized incomplete beta function
//! (continued fraction, modified Lentz), which keeps p-values exact in the
//! degrees of freedom instead of falling back to a normal approximation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StatsError {
    #[error("regression needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("regressor has zero variance")]
    DegenerateRegressor,
    #[error("x and y lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    let t = x + 7.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 500;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// CDF of Student's t with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t == f64::INFINITY {
        return 1.0;
    }
    if t == f64::NEG_INFINITY {
        return 0.0;
    }
    let x = df / (df + t * t);
    let tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, x);
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided p-value P(|T| ≥ |t|).
pub fn two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Inverse CDF by bisection; accurate to ~1e-12 in t.
pub fn student_t_quantile(p: f64, df: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile probability must lie in (0, 1)");
    let (mut lo, mut hi) = (-1e3, 1e3);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if student_t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Result of regressing y on a single x, optionally with an intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimpleOls {
    pub slope: f64,
    pub intercept: Option<f64>,
    pub slope_stderr: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub df: usize,
    pub sse: f64,
    pub r_squared: f64,
    pub n: usize,
}

/// Ordinary least squares of `y` on `x`.
///
/// Without an intercept the fit passes through the origin and has `n - 1`
/// residual degrees of freedom; with one, `n - 2`. A zero-residual fit has
/// zero standard error: its t statistic is infinite (p = 0) unless the slope
/// is itself zero, in which case nothing is detected and p = 1.
pub fn simple_ols(x: &[f64], y: &[f64], intercept: bool) -> Result<SimpleOls, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    let k = if intercept { 2 } else { 1 };
    if n < k + 1 {
        return Err(StatsError::TooFewPoints { needed: k + 1, got: n });
    }
    let nf = n as f64;
    let (x_mean, y_mean) = if intercept {
        (x.iter().sum::<f64>() / nf, y.iter().sum::<f64>() / nf)
    } else {
        (0.0, 0.0)
    };
    let sxx: f64 = x.iter().map(|xi| (xi - x_mean).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(StatsError::DegenerateRegressor);
    }
    let sxy: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (xi - x_mean) * (yi - y_mean))
        .sum();
    let slope = sxy / sxx;
    let icpt = y_mean - slope * x_mean;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (yi - icpt - slope * xi).powi(2))
        .sum();
    let df = n - k;
    let sigma2 = sse / df as f64;
    let slope_stderr = (sigma2 / sxx).sqrt();
    let t_stat = if slope_stderr > 0.0 {
        slope / slope_stderr
    } else if slope == 0.0 {
        0.0
    } else {
        slope.signum() * f64::INFINITY
    };
    let p_value = two_sided_p(t_stat, df as f64);
    // uncentered total sum of squares for the through-origin model
    let sst: f64 = y.iter().map(|yi| (yi - y_mean).powi(2)).sum();
    let r_squared = if sst > 0.0 { 1.0 - sse / sst } else { 1.0 };
    Ok(SimpleOls {
        slope,
        intercept: intercept.then_some(icpt),
        slope_stderr,
        t_stat,
        p_value,
        df,
        sse,
        r_squared,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // critical values from standard two-sided t tables
    #[test]
    fn matches_tabulated_quantiles() {
        let table = [
            (1.0, 0.975, 12.706),
            (2.0, 0.975, 4.303),
            (5.0, 0.975, 2.571),
            (10.0, 0.975, 2.228),
            (30.0, 0.975, 2.042),
            (5.0, 0.995, 4.032),
            (20.0, 0.995, 2.845),
            (10.0, 0.9995, 4.587),
            (60.0, 0.95, 1.671),
        ];
        for (df, p, t) in table {
            assert_abs_diff_eq!(student_t_cdf(t, df), p, epsilon = 2e-4);
            assert_abs_diff_eq!(student_t_quantile(p, df), t, epsilon = 2e-3);
        }
    }

    #[test]
    fn cdf_is_symmetric() {
        for &df in &[1.0, 3.5, 17.0] {
            for &t in &[0.1, 0.9, 2.5, 8.0] {
                assert_abs_diff_eq!(
                    student_t_cdf(t, df) + student_t_cdf(-t, df),
                    1.0,
                    epsilon = 1e-13
                );
            }
        }
        assert_eq!(student_t_cdf(0.0, 4.0), 0.5);
    }

    #[test]
    fn ln_gamma_known_values() {
        assert_abs_diff_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(ln_gamma(5.0), 24f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-12);
    }

    #[test]
    fn through_origin_exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [-0.5, -1.0, -1.5, -2.0];
        let fit = simple_ols(&x, &y, false).unwrap();
        assert_abs_diff_eq!(fit.slope, -0.5, epsilon = 1e-15);
        assert_eq!(fit.slope_stderr, 0.0);
        assert_eq!(fit.p_value, 0.0);
        assert_eq!(fit.df, 3);
    }

    #[test]
    fn with_intercept_textbook() {
        // y = 1 + 2x + e, e = (+.1, -.1, -.1, +.1)
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.1, 2.9, 4.9, 7.1];
        let fit = simple_ols(&x, &y, true).unwrap();
        assert_abs_diff_eq!(fit.slope, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.intercept.unwrap(), 1.0, epsilon = 1e-12);
        // sse = 0.04, sigma² = 0.02, sxx = 5
        assert_abs_diff_eq!(fit.slope_stderr, (0.02f64 / 5.0).sqrt(), epsilon = 1e-12);
        assert_eq!(fit.df, 2);
    }

    #[test]
    fn flat_response_is_not_significant() {
        let fit = simple_ols(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0], false).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert_eq!(fit.p_value, 1.0);
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(
            simple_ols(&[1.0, 2.0], &[1.0, 2.0], true),
            Err(StatsError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn agrees_with_statrs() {
        use statrs::distribution::{ContinuousCDF, StudentsT};
        use statrs::function::beta::beta_reg;
        for &df in &[1.0, 2.5, 7.0, 29.0, 58.0, 300.0] {
            let oracle = StudentsT::new(0.0, 1.0, df).unwrap();
            for &t in &[-12.0, -3.1, -0.4, 0.0, 0.7, 2.2, 5.5, 40.0] {
                assert_abs_diff_eq!(student_t_cdf(t, df), oracle.cdf(t), epsilon = 1e-11);
            }
            for &p in &[0.6, 0.9, 0.975, 0.999] {
                assert_abs_diff_eq!(student_t_quantile(p, df), oracle.inverse_cdf(p), epsilon = 1e-6);
            }
        }
        for &(a, b) in &[(0.5, 0.5), (2.0, 3.0), (14.5, 0.5), (0.3, 9.0)] {
            for &x in &[0.01, 0.2, 0.5, 0.93] {
                assert_abs_diff_eq!(regularized_incomplete_beta(a, b, x), beta_reg(a, b, x), epsilon = 1e-12);
            }
        }
    }
}
