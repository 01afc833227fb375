//! Grouped binomial regression by Fisher scoring.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Logit,
    /// log(-log(1 - p))
    CLogLog,
}

impl Link {
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Logit => expit(eta),
            Link::CLogLog => -(-eta.exp()).exp_m1(),
        }
    }

    pub fn apply(self, p: f64) -> f64 {
        match self {
            Link::Logit => logit(p),
            Link::CLogLog => (-(-p).ln_1p()).ln(),
        }
    }

    /// (log p, log(1 - p), dp/deta)
    fn parts(self, eta: f64) -> (f64, f64, f64) {
        match self {
            Link::Logit => {
                let lp = -softplus(-eta);
                let lq = -softplus(eta);
                let p = lp.exp();
                (lp, lq, p * (1.0 - p))
            }
            Link::CLogLog => {
                let mu = eta.exp();
                let lq = -mu;
                let p = -(-mu).exp_m1();
                (p.ln(), lq, mu * (-mu).exp())
            }
        }
    }
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// log(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// One binomial cell: covariates, events, trials (both may be fractional).
#[derive(Debug, Clone, PartialEq)]
pub struct BinomialCell {
    pub x: Vec<f64>,
    pub events: f64,
    pub trials: f64,
}

#[derive(Debug, Clone)]
pub struct GlmFit {
    pub coef: Vec<f64>,
    /// Inverse Fisher information at the optimum.
    pub cov: DMatrix<f64>,
    pub loglik: f64,
}

pub fn log_likelihood(cells: &[BinomialCell], coef: &[f64], link: Link) -> f64 {
    cells
        .iter()
        .map(|c| {
            let eta: f64 = c.x.iter().zip(coef).map(|(a, b)| a * b).sum();
            let (lp, lq, _) = link.parts(eta);
            let mut ll = 0.0;
            if c.events > 0.0 {
                ll += c.events * lp;
            }
            if c.trials - c.events > 0.0 {
                ll += (c.trials - c.events) * lq;
            }
            ll
        })
        .sum()
}

/// Penalized maximum likelihood with an optional ridge `ridge * |b|^2 / 2`.
pub fn fit_binomial(cells: &[BinomialCell], link: Link, init: &[f64], ridge: f64) -> Result<GlmFit> {
    let k = init.len();
    if cells.iter().any(|c| c.x.len() != k) {
        return Err(Error::invalid("covariate length mismatch"));
    }
    let objective = |b: &[f64]| log_likelihood(cells, b, link) - 0.5 * ridge * b.iter().map(|v| v * v).sum::<f64>();
    let mut coef = init.to_vec();
    let mut current = objective(&coef);
    if !current.is_finite() {
        return Err(Error::numerical("log-likelihood is not finite at the start"));
    }
    const MAX_IT: usize = 100;
    for _ in 0..MAX_IT {
        let mut score = DVector::<f64>::zeros(k);
        let mut info = DMatrix::<f64>::identity(k, k) * ridge;
        for c in cells {
            let eta: f64 = c.x.iter().zip(&coef).map(|(a, b)| a * b).sum();
            let (lp, _, dp) = link.parts(eta);
            let p = lp.exp().clamp(1e-300, 1.0 - 1e-16);
            let s_eta = (c.events - c.trials * p) * dp / (p * (1.0 - p));
            let w = c.trials * dp * dp / (p * (1.0 - p));
            for i in 0..k {
                score[i] += s_eta * c.x[i];
                for j in 0..k {
                    info[(i, j)] += w * c.x[i] * c.x[j];
                }
            }
        }
        for i in 0..k {
            score[i] -= ridge * coef[i];
        }
        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&score),
            None => (info.clone() + DMatrix::identity(k, k) * 1e-6)
                .lu()
                .solve(&score)
                .ok_or_else(|| Error::numerical("information matrix is singular"))?,
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = coef.iter().zip(step.iter()).map(|(c, s)| c + t * s).collect();
            let val = objective(&trial);
            if val.is_finite() && val >= current - 1e-12 {
                let gain = val - current;
                coef = trial;
                current = val;
                accepted = true;
                if gain.abs() < 1e-10 && step.norm() * t < 1e-7 {
                    return finish(cells, link, coef, ridge, current);
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted || step.norm() < 1e-9 {
            return finish(cells, link, coef, ridge, current);
        }
    }
    Err(Error::NoConvergence {
        what: "binomial GLM".into(),
        iterations: MAX_IT,
    })
}

fn finish(cells: &[BinomialCell], link: Link, coef: Vec<f64>, ridge: f64, loglik: f64) -> Result<GlmFit> {
    let k = coef.len();
    let mut info = DMatrix::<f64>::identity(k, k) * ridge;
    for c in cells {
        let eta: f64 = c.x.iter().zip(&coef).map(|(a, b)| a * b).sum();
        let (lp, _, dp) = link.parts(eta);
        let p = lp.exp().clamp(1e-300, 1.0 - 1e-16);
        let w = c.trials * dp * dp / (p * (1.0 - p));
        for i in 0..k {
            for j in 0..k {
                info[(i, j)] += w * c.x[i] * c.x[j];
            }
        }
    }
    let cov = info
        .try_inverse()
        .ok_or_else(|| Error::numerical("information matrix is singular at the optimum"))?;
    Ok(GlmFit { coef, cov, loglik })
}
