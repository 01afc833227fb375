use statrs::function::beta::beta_reg;

/// P(p <= x) for p ~ Beta(alpha, beta).
pub fn beta_cdf(alpha: f64, beta: f64, x: f64) -> f64 {
    debug_assert!(alpha > 0.0 && beta > 0.0);
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        beta_reg(alpha, beta, x)
    }
}

/// P(p > x) for p ~ Beta(alpha, beta).
pub fn beta_tail(alpha: f64, beta: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x >= 1.0 {
        0.0
    } else {
        // I_{1-x}(b, a) keeps precision in the upper tail
        beta_reg(beta, alpha, 1.0 - x)
    }
}

/// Posterior mass of Beta(alpha, beta) on [lo, hi).
pub fn beta_interval_mass(alpha: f64, beta: f64, lo: f64, hi: f64) -> f64 {
    (beta_cdf(alpha, beta, hi) - beta_cdf(alpha, beta, lo)).max(0.0)
}
