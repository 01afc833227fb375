//! One-dimensional posterior summaries by adaptive Gauss-Kronrod quadrature.

use crate::error::{Error, Result};

use super::PosteriorSummary;

// 7-point Gauss / 15-point Kronrod on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Integrals of `g_k(x) exp(log_post(x) - shift)` over one panel, for the
/// moments `g_0 = 1`, `g_1 = x`; returns (kronrod, gauss) pairs.
fn panel<F: Fn(f64) -> f64>(f: &F, shift: f64, a: f64, b: f64) -> Result<([f64; 2], [f64; 2])> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut k = [0.0; 2];
    let mut g = [0.0; 2];
    let eval = |x: f64| -> Result<f64> {
        let lp = f(x);
        if lp.is_nan() || lp == f64::INFINITY {
            return Err(Error::numerical(format!("log density is {lp} at {x}")));
        }
        Ok((lp - shift).exp())
    };
    for i in 0..8 {
        let xs: &[f64] = if i == 7 { &[c] } else { &[c - h * XGK[i], c + h * XGK[i]] };
        for &x in xs {
            let w = eval(x)?;
            k[0] += WGK[i] * w;
            k[1] += WGK[i] * w * x;
            // Gauss nodes sit at odd Kronrod indices
            if i % 2 == 1 {
                g[0] += WG[i / 2] * w;
                g[1] += WG[i / 2] * w * x;
            }
        }
    }
    Ok(([k[0] * h, k[1] * h], [g[0] * h, g[1] * h]))
}

/// Locate the log-density maximum on a coarse grid so the integrand can be
/// rescaled, and trim the support to where mass is non-negligible.
fn scan<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> Result<(f64, f64, f64)> {
    const N: usize = 400;
    let step = (hi - lo) / N as f64;
    let vals: Vec<f64> = (0..=N).map(|i| f(lo + step * i as f64)).collect();
    if vals.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::numerical("log density not finite on support"));
    }
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::numerical("log density is -inf everywhere"));
    }
    let keep = |v: f64| v > max - 60.0;
    let first = vals.iter().position(|&v| keep(v)).unwrap_or(0);
    let last = vals.iter().rposition(|&v| keep(v)).unwrap_or(N);
    let a = lo + step * first.saturating_sub(1) as f64;
    let b = lo + step * (last + 1).min(N) as f64;
    Ok((max, a, b))
}

/// Posterior mean of a scalar parameter with log density `log_post`
/// (unnormalized) on `support`.
pub fn posterior_mean_1d<F: Fn(f64) -> f64>(log_post: F, support: (f64, f64)) -> Result<PosteriorSummary> {
    let (lo, hi) = support;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid("support must be a finite interval"));
    }
    let (shift, a, b) = scan(&log_post, lo, hi)?;

    const REL_TOL: f64 = 1e-10;
    const MAX_PANELS: usize = 2000;
    let mut panels = Vec::new();
    let n0 = 16;
    let w = (b - a) / n0 as f64;
    for i in 0..n0 {
        let (pa, pb) = (a + w * i as f64, a + w * (i + 1) as f64);
        let (k, g) = panel(&log_post, shift, pa, pb)?;
        panels.push((pa, pb, k, g));
    }
    loop {
        let total: [f64; 2] = panels.iter().fold([0.0, 0.0], |acc, p| [acc[0] + p.2[0], acc[1] + p.2[1]]);
        let scale = [total[0].abs().max(1e-300), total[0].abs() * (a.abs().max(b.abs())).max(1.0)];
        let err = |p: &(f64, f64, [f64; 2], [f64; 2])| {
            ((p.2[0] - p.3[0]).abs() / scale[0]).max((p.2[1] - p.3[1]).abs() / scale[1])
        };
        let (worst, worst_err) = panels
            .iter()
            .enumerate()
            .map(|(i, p)| (i, err(p)))
            .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        let total_err: f64 = panels.iter().map(err).sum();
        if total_err < REL_TOL || panels.len() >= MAX_PANELS || worst_err == 0.0 {
            if total[0] <= 0.0 || !total[0].is_finite() {
                return Err(Error::numerical("posterior normalizing constant is not positive"));
            }
            let mean = total[1] / total[0];
            return Ok(PosteriorSummary {
                mean: vec![mean],
                samples: None,
                mc_se: vec![0.0],
            });
        }
        let (pa, pb, _, _) = panels.swap_remove(worst);
        let mid = 0.5 * (pa + pb);
        for (x0, x1) in [(pa, mid), (mid, pb)] {
            let (k, g) = panel(&log_post, shift, x0, x1)?;
            panels.push((x0, x1, k, g));
        }
    }
}

/// Deterministic posterior draws by inverting a fine-grid CDF at the
/// midpoints of `n` equal-probability strata.
pub fn quantile_draws_1d<F: Fn(f64) -> f64>(log_post: F, support: (f64, f64), n: usize) -> Result<Vec<f64>> {
    let (shift, a, b) = scan(&log_post, support.0, support.1)?;
    const GRID: usize = 4000;
    let h = (b - a) / GRID as f64;
    let dens: Vec<f64> = (0..=GRID).map(|i| (log_post(a + h * i as f64) - shift).exp()).collect();
    let mut cdf = vec![0.0; GRID + 1];
    for i in 1..=GRID {
        cdf[i] = cdf[i - 1] + 0.5 * (dens[i - 1] + dens[i]) * h;
    }
    let total = cdf[GRID];
    if !(total > 0.0) {
        return Err(Error::numerical("posterior normalizing constant is not positive"));
    }
    let mut out = Vec::with_capacity(n);
    let mut i = 1;
    for k in 0..n {
        let target = (k as f64 + 0.5) / n as f64 * total;
        while i < GRID && cdf[i] < target {
            i += 1;
        }
        let (c0, c1) = (cdf[i - 1], cdf[i]);
        let t = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.5 };
        out.push(a + h * (i as f64 - 1.0 + t));
    }
    Ok(out)
}

/// Unnormalized mass of `exp(log_post - shift)` on [a, b] by adaptive
/// Gauss-Kronrod.
fn mass<F: Fn(f64) -> f64>(f: &F, shift: f64, a: f64, b: f64) -> Result<f64> {
    if !(b > a) {
        return Ok(0.0);
    }
    let mut panels = Vec::new();
    let n0 = 8;
    let w = (b - a) / n0 as f64;
    for i in 0..n0 {
        let (pa, pb) = (a + w * i as f64, a + w * (i + 1) as f64);
        let (k, g) = panel(f, shift, pa, pb)?;
        panels.push((pa, pb, k[0], (k[0] - g[0]).abs()));
    }
    loop {
        let total: f64 = panels.iter().map(|p| p.2).sum();
        let err: f64 = panels.iter().map(|p| p.3).sum();
        if err <= 1e-12 * total.abs().max(1e-300) || panels.len() >= 1000 {
            return Ok(total);
        }
        let worst = panels
            .iter()
            .enumerate()
            .fold((0, -1.0), |best, (i, p)| if p.3 > best.1 { (i, p.3) } else { best })
            .0;
        let (pa, pb, _, _) = panels.swap_remove(worst);
        let mid = 0.5 * (pa + pb);
        for (x0, x1) in [(pa, mid), (mid, pb)] {
            let (k, g) = panel(f, shift, x0, x1)?;
            panels.push((x0, x1, k[0], (k[0] - g[0]).abs()));
        }
    }
}

/// Posterior P(x <= t).
pub fn posterior_cdf_1d<F: Fn(f64) -> f64>(log_post: F, support: (f64, f64), t: f64) -> Result<f64> {
    let (shift, a, b) = scan(&log_post, support.0, support.1)?;
    let t = t.clamp(a, b);
    let left = mass(&log_post, shift, a, t)?;
    let right = mass(&log_post, shift, t, b)?;
    let total = left + right;
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::numerical("posterior normalizing constant is not positive"));
    }
    Ok(left / total)
}
