//! Adaptive random-walk Metropolis for small parameter vectors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

use super::PosteriorSummary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub burn_in: usize,
    pub draws: usize,
    /// Initial proposal standard deviation per coordinate.
    pub init_scale: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            burn_in: 1000,
            draws: 2000,
            init_scale: 0.5,
        }
    }
}

/// Draw from the density `exp(log_post)` starting at `init`.
///
/// The proposal covariance is adapted during burn-in from the running chain
/// covariance (scaled by 2.38^2 / k) and then frozen, so the retained chain
/// is a plain Metropolis chain.
pub fn posterior_sample<F: Fn(&[f64]) -> f64>(
    log_post: F,
    init: &[f64],
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<PosteriorSummary> {
    let k = init.len();
    if k == 0 || cfg.draws == 0 {
        return Err(Error::invalid("sampler needs parameters and draws"));
    }
    let mut rng = rng::stream(seed, Domain::Decision, [0x5eed, k as u64, 0]);
    let mut x = init.to_vec();
    let mut lp = log_post(&x);
    if !lp.is_finite() {
        return Err(Error::numerical("log density is not finite at the initial point"));
    }

    let mut chol = DMatrix::<f64>::identity(k, k) * cfg.init_scale;
    let scale = 2.38 * 2.38 / k as f64;
    let mut mean = DVector::<f64>::from_column_slice(&x);
    let mut m2 = DMatrix::<f64>::zeros(k, k);
    let mut seen = 1.0;
    let mut bad = 0usize;
    let mut prop = vec![0.0; k];
    let mut samples = Vec::with_capacity(cfg.draws * k);

    let total = cfg.burn_in + cfg.draws;
    for it in 0..total {
        let eps = DVector::<f64>::from_fn(k, |_, _| rng.sample(StandardNormal));
        let step = &chol * eps;
        for i in 0..k {
            prop[i] = x[i] + step[i];
        }
        let lp_prop = log_post(&prop);
        if lp_prop.is_nan() {
            bad += 1;
            if bad > total / 2 {
                return Err(Error::numerical("sampler kept hitting undefined log density"));
            }
        } else if lp_prop - lp > rng.random::<f64>().ln() {
            x.copy_from_slice(&prop);
            lp = lp_prop;
        }

        if it < cfg.burn_in {
            // Welford update of the chain covariance
            seen += 1.0;
            let xv = DVector::from_column_slice(&x);
            let delta = &xv - &mean;
            mean += &delta / seen;
            let delta2 = &xv - &mean;
            m2 += &delta * delta2.transpose();
            if it >= 50 && it % 25 == 0 {
                let cov = &m2 / (seen - 1.0) * scale + DMatrix::identity(k, k) * 1e-8;
                if let Some(c) = cov.cholesky() {
                    chol = c.l();
                }
            }
        } else {
            samples.extend_from_slice(&x);
        }
    }

    let summary = summarize(samples, k);
    if summary.mean.iter().any(|m| !m.is_finite()) {
        return Err(Error::numerical("sampler produced non-finite means"));
    }
    Ok(summary)
}

/// Means and batch-means Monte-Carlo standard errors from a row-major draw matrix.
pub fn summarize(samples: Vec<f64>, k: usize) -> PosteriorSummary {
    let n = samples.len() / k;
    let mut mean = vec![0.0; k];
    for row in samples.chunks_exact(k) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let batches = ((n as f64).sqrt() as usize).max(1);
    let size = n / batches;
    let mut mc_se = vec![0.0; k];
    if batches > 1 && size > 0 {
        for (i, se) in mc_se.iter_mut().enumerate() {
            let means: Vec<f64> = (0..batches)
                .map(|b| {
                    (b * size..(b + 1) * size)
                        .map(|r| samples[r * k + i])
                        .sum::<f64>()
                        / size as f64
                })
                .collect();
            let var = means.iter().map(|m| (m - mean[i]).powi(2)).sum::<f64>()
                / (batches - 1) as f64;
            *se = (var / batches as f64).sqrt();
        }
    }
    PosteriorSummary {
        mean,
        samples: Some(samples),
        mc_se,
    }
}
