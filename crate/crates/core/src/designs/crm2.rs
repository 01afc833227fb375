//! Two-parameter logistic CRM on the actual dose:
//! `F(d) = expit(a0 + a1 * d)`, `a0 ~ N(mu_a0, sigma2_a0)`,
//! `log a1 ~ N(mu_loga1, sigma2_loga1)`, with time-to-event weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::glm::{expit, logit};
use crate::kernels::mcmc::{posterior_sample, SamplerConfig};
use crate::kernels::robust::robust_cv;
use crate::kernels::PosteriorSummary;
use crate::patient::argmin_distance;
use crate::rules::SafetyProbs;
use crate::trial::DoseGrid;

use super::{initial_phase, one_cycle_window, weighted_binary, Decision, DecisionContext};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TiteCrm2Config {
    pub mu_a0: f64,
    pub sigma2_a0: f64,
    pub mu_loga1: f64,
    pub sigma2_loga1: f64,
    pub sampler: SamplerConfig,
}

impl Default for TiteCrm2Config {
    fn default() -> Self {
        Self {
            mu_a0: -1.0,
            sigma2_a0: 1.0 / 0.3,
            mu_loga1: (0.2f64).ln(),
            sigma2_loga1: 1.0 / 0.3,
            sampler: SamplerConfig::default(),
        }
    }
}

impl TiteCrm2Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2_a0 > 0.0 && self.sigma2_loga1 > 0.0) {
            return Err(Error::invalid("TITE-CRM2 prior variances must be positive"));
        }
        if self.sampler.draws == 0 {
            return Err(Error::invalid("sampler draws must be positive"));
        }
        Ok(())
    }
}

/// Log posterior over `(a0, log a1)`.
pub fn log_posterior(cfg: &TiteCrm2Config, doses: &DoseGrid, data: &[(usize, bool, f64)], x: &[f64]) -> f64 {
    let (a0, la1) = (x[0], x[1]);
    let a1 = la1.exp();
    let mut lp = -0.5 * (a0 - cfg.mu_a0).powi(2) / cfg.sigma2_a0 - 0.5 * (la1 - cfg.mu_loga1).powi(2) / cfg.sigma2_loga1;
    for &(level, dlt, w) in data {
        let f = expit(a0 + a1 * doses.value(level));
        lp += if dlt { (w * f).ln() } else { (-(w * f)).ln_1p() };
    }
    lp
}

pub fn sample(cfg: &TiteCrm2Config, doses: &DoseGrid, data: &[(usize, bool, f64)], seed: u64) -> Result<PosteriorSummary> {
    posterior_sample(
        |x| log_posterior(cfg, doses, data, x),
        &[cfg.mu_a0, cfg.mu_loga1],
        &cfg.sampler,
        seed,
    )
}

/// Plug-in (a0, a1) from their posterior means. The sampler works on
/// log a1, so a1 is averaged on its natural scale.
fn plug_in(post: &PosteriorSummary) -> (f64, f64) {
    let n = post.draws().count() as f64;
    (post.mean[0], post.draws().map(|r| r[1].exp()).sum::<f64>() / n)
}

fn curve(doses: &DoseGrid, a0: f64, a1: f64) -> Vec<f64> {
    doses.values().iter().map(|&d| expit(a0 + a1 * d)).collect()
}

pub fn decide(cfg: &TiteCrm2Config, ctx: &DecisionContext<'_>) -> Result<Decision> {
    let state = ctx.state;
    let data = weighted_binary(state, ctx.trial.cycles);
    let initial = initial_phase(state, ctx.doses.len());
    let post = if initial.is_none() || ctx.wants_stopping_inputs() {
        sample(cfg, ctx.doses, &data, ctx.seed)
    } else {
        Err(Error::invalid("not sampled"))
    };
    let mut decision = match (initial, &post) {
        (Some(level), _) => Decision::assign(level),
        (None, Ok(post)) => {
            let (a0, a1) = plug_in(post);
            let mut d = Decision::assign(argmin_distance(&curve(ctx.doses, a0, a1), ctx.trial.target));
            d.summaries.push(("a0_mean".into(), a0));
            d.summaries.push(("a1_mean".into(), a1));
            d
        }
        (None, Err(e)) => {
            log::debug!("TITE-CRM2 sampler failed, holding dose: {e}");
            let mut d = Decision::assign(state.current_dose.unwrap_or(0));
            d.fallback = Some(e.to_string());
            d
        }
    };
    if ctx.wants_stopping_inputs() {
        if let Ok(post) = &post {
            decision.cv = Some(mtd_cv(post, ctx.trial.target));
        }
        decision.safety = Some(safety(cfg, ctx, ctx.rules.tau_cycle1)?);
    }
    Ok(decision)
}

pub fn final_estimates(cfg: &TiteCrm2Config, ctx: &DecisionContext<'_>) -> Result<(Vec<f64>, f64)> {
    let data = weighted_binary(ctx.state, ctx.trial.cycles);
    let post = sample(cfg, ctx.doses, &data, ctx.seed)?;
    let (a0, a1) = plug_in(&post);
    Ok((curve(ctx.doses, a0, a1), ctx.trial.target))
}

/// P(p1_j > tau_cycle1) from the model refitted with a one-cycle window.
pub fn safety(cfg: &TiteCrm2Config, ctx: &DecisionContext<'_>, tau_cycle1: f64) -> Result<SafetyProbs> {
    let data = one_cycle_window(ctx.state);
    let post = sample(cfg, ctx.doses, &data, ctx.seed ^ 0x5afe_5afe)?;
    let n = post.draws().count() as f64;
    let p_exceeds = ctx
        .doses
        .values()
        .iter()
        .map(|&d| post.draws().filter(|r| expit(r[0] + r[1].exp() * d) > tau_cycle1).count() as f64 / n)
        .collect();
    Ok(SafetyProbs { p_exceeds })
}

/// CV of the MBq-scale MTD `(logit(tau) - a0) / a1` over posterior draws.
pub fn mtd_cv(post: &PosteriorSummary, target: f64) -> f64 {
    let lt = logit(target);
    let mtd: Vec<f64> = post.draws().map(|r| (lt - r[0]) / r[1].exp()).collect();
    robust_cv(&mtd)
}
