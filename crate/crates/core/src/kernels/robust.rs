/// Median of finite values; `None` if empty or any value is NaN.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Median absolute deviation scaled by 1.4826 (consistent for the normal sd).
pub fn mad(values: &[f64]) -> Option<f64> {
    let m = median(values)?;
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev).map(|d| 1.4826 * d)
}

/// Robust coefficient of variation `mad / median`. Infinite when the median
/// is not a positive finite number or the spread is undefined.
pub fn robust_cv(values: &[f64]) -> f64 {
    match (median(values), mad(values)) {
        (Some(m), Some(d)) if m.is_finite() && m > 0.0 && d.is_finite() => d / m,
        _ => f64::INFINITY,
    }
}
