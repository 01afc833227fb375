//! Blocked Gibbs sampler for a linear mixed model with one random intercept
//! per subject:
//!
//! `y = b0 + b1 * dose + b2 * cycle + g_subject + e`,
//! `g ~ N(0, s2_g)`, `e ~ N(0, s2_e)`, normal priors on the fixed effects
//! and inverse-gamma priors on both variances.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

use super::mcmc::summarize;
use super::PosteriorSummary;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmmObservation {
    pub subject: usize,
    pub dose: f64,
    pub cycle: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmmPriors {
    pub mean: [f64; 3],
    pub var: [f64; 3],
    /// Inverse-gamma (shape, scale) for both variance components.
    pub ig_shape: f64,
    pub ig_scale: f64,
}

impl Default for LmmPriors {
    fn default() -> Self {
        Self {
            mean: [0.1, 0.5, 0.0],
            var: [100.0, 100.0, 10.0],
            ig_shape: 0.001,
            ig_scale: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GibbsConfig {
    pub burn_in: usize,
    pub draws: usize,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            burn_in: 500,
            draws: 1500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmmFit {
    /// Columns: b0, b1, b2, s2_subject, s2_error.
    pub summary: PosteriorSummary,
    /// No data: the draws come from the prior.
    pub prior_only: bool,
}

fn inv_gamma<R: Rng>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    let g: f64 = rng.sample(Gamma::new(shape, 1.0 / scale).expect("positive gamma parameters"));
    (1.0 / g).clamp(1e-12, 1e12)
}

pub fn gibbs_lmm(
    data: &[LmmObservation],
    priors: &LmmPriors,
    cfg: &GibbsConfig,
    seed: u64,
) -> Result<LmmFit> {
    if priors.var.iter().any(|v| !(*v > 0.0)) || !(priors.ig_shape > 0.0 && priors.ig_scale > 0.0) {
        return Err(Error::invalid("LMM prior variances and IG parameters must be positive"));
    }
    if cfg.draws == 0 {
        return Err(Error::invalid("Gibbs sampler needs draws"));
    }
    let mut rng = rng::stream(seed, Domain::Decision, [0x9166, data.len() as u64, 0]);

    if data.is_empty() {
        let mut samples = Vec::with_capacity(cfg.draws * 5);
        for _ in 0..cfg.draws {
            for k in 0..3 {
                let z: f64 = rng.sample(StandardNormal);
                samples.push(priors.mean[k] + priors.var[k].sqrt() * z);
            }
            samples.push(inv_gamma(&mut rng, priors.ig_shape, priors.ig_scale));
            samples.push(inv_gamma(&mut rng, priors.ig_shape, priors.ig_scale));
        }
        return Ok(LmmFit {
            summary: summarize(samples, 5),
            prior_only: true,
        });
    }

    // compact subject ids
    let mut ids: Vec<usize> = data.iter().map(|o| o.subject).collect();
    ids.sort_unstable();
    ids.dedup();
    let subj: Vec<usize> = data
        .iter()
        .map(|o| ids.binary_search(&o.subject).expect("id present"))
        .collect();
    let m = ids.len();
    let n = data.len();
    let mut per_subject = vec![0usize; m];
    for &s in &subj {
        per_subject[s] += 1;
    }

    let rows: Vec<Vector3<f64>> = data.iter().map(|o| Vector3::new(1.0, o.dose, o.cycle)).collect();
    let xtx: Matrix3<f64> = rows.iter().map(|r| r * r.transpose()).sum();
    let prior_prec = Matrix3::from_diagonal(&Vector3::new(
        1.0 / priors.var[0],
        1.0 / priors.var[1],
        1.0 / priors.var[2],
    ));
    let prior_term = Vector3::new(
        priors.mean[0] / priors.var[0],
        priors.mean[1] / priors.var[1],
        priors.mean[2] / priors.var[2],
    );

    let ybar = data.iter().map(|o| o.y).sum::<f64>() / n as f64;
    let yvar = data.iter().map(|o| (o.y - ybar).powi(2)).sum::<f64>() / n as f64;
    let mut gamma = vec![0.0; m];
    let mut s2e = yvar.max(1e-3);
    let mut s2g = yvar.max(1e-3);
    let mut resid_sum = vec![0.0; m];

    let mut samples = Vec::with_capacity(cfg.draws * 5);
    for it in 0..cfg.burn_in + cfg.draws {
        // fixed effects
        let mut xty = Vector3::zeros();
        for ((r, o), &s) in rows.iter().zip(data).zip(&subj) {
            xty += r * (o.y - gamma[s]);
        }
        let prec = xtx / s2e + prior_prec;
        let chol = prec
            .cholesky()
            .ok_or_else(|| Error::numerical("fixed-effect precision is not positive definite"))?;
        let mean = chol.solve(&(xty / s2e + prior_term));
        let z = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        // L L^T = prec, so L^{-T} z has covariance prec^{-1}
        let noise = chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::numerical("triangular solve failed"))?;
        let beta = mean + noise;

        // random intercepts
        resid_sum.iter_mut().for_each(|v| *v = 0.0);
        for ((r, o), &s) in rows.iter().zip(data).zip(&subj) {
            resid_sum[s] += o.y - r.dot(&beta);
        }
        for s in 0..m {
            let prec = per_subject[s] as f64 / s2e + 1.0 / s2g;
            let mean = resid_sum[s] / s2e / prec;
            let z: f64 = rng.sample(StandardNormal);
            gamma[s] = mean + z / prec.sqrt();
        }

        // variance components
        let ss_g: f64 = gamma.iter().map(|g| g * g).sum();
        s2g = inv_gamma(&mut rng, priors.ig_shape + m as f64 / 2.0, priors.ig_scale + ss_g / 2.0);
        let ss_e: f64 = rows
            .iter()
            .zip(data)
            .zip(&subj)
            .map(|((r, o), &s)| (o.y - r.dot(&beta) - gamma[s]).powi(2))
            .sum();
        s2e = inv_gamma(&mut rng, priors.ig_shape + n as f64 / 2.0, priors.ig_scale + ss_e / 2.0);

        if it >= cfg.burn_in {
            samples.extend_from_slice(&[beta[0], beta[1], beta[2], s2g, s2e]);
        }
    }
    Ok(LmmFit {
        summary: summarize(samples, 5),
        prior_only: false,
    })
}
