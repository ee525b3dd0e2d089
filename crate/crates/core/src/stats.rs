//! Tail probabilities used for reported p-values.
//!
//! Each tail is written directly in terms of the regularized incomplete beta
//! function so small p-values keep their relative accuracy.

use statrs::function::beta::beta_reg;
use statrs::function::gamma::gamma_ur;

/// Upper tail `P(F > f)` of an F(d1, d2) distribution.
pub fn f_upper_tail(f: f64, d1: f64, d2: f64) -> f64 {
    if f.is_nan() {
        return f64::NAN;
    }
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    let x = d2 / (d2 + d1 * f);
    beta_reg(d2 / 2.0, d1 / 2.0, x)
}

/// Two-sided `P(|T| > |t|)` for Student's t with `df` degrees of freedom.
pub fn t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    if t == 0.0 {
        return 1.0;
    }
    let x = df / (df + t * t);
    beta_reg(df / 2.0, 0.5, x)
}

fn upper_gamma_half(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if x.is_infinite() {
        0.0
    } else {
        gamma_ur(0.5, x)
    }
}

/// Two-sided normal p-value for a z statistic.
pub fn normal_two_sided(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    // erfc(|z|/sqrt 2) as an upper incomplete gamma, accurate far into the tail
    upper_gamma_half(0.5 * z * z)
}

/// Lower tail `P(Z < z)` of the standard normal.
pub fn normal_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    let tail = 0.5 * upper_gamma_half(0.5 * z * z);
    if z < 0.0 {
        tail
    } else {
        1.0 - tail
    }
}
