//! One-parameter power-model CRM with time-to-event weights:
//! `F(d, beta) = d^exp(beta)`, `beta ~ N(0, sigma2)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::quadrature::{posterior_cdf_1d, posterior_mean_1d, quantile_draws_1d};
use crate::kernels::robust::robust_cv;
use crate::patient::argmin_distance;
use crate::rules::SafetyProbs;

use super::{initial_phase, one_cycle_window, weighted_binary, Decision, DecisionContext};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TiteCrmConfig {
    pub skeleton: Vec<f64>,
    pub sigma2: f64,
    /// Posterior quantile draws used for the MTD coefficient of variation.
    pub cv_draws: usize,
}

impl Default for TiteCrmConfig {
    fn default() -> Self {
        Self {
            skeleton: vec![0.05, 0.10, 0.15, 0.20, 0.25, 0.30],
            sigma2: 1.0,
            cv_draws: 1000,
        }
    }
}

impl TiteCrmConfig {
    pub fn validate(&self, doses: usize) -> Result<()> {
        if self.skeleton.len() != doses {
            return Err(Error::invalid(format!(
                "skeleton has {} entries for {doses} doses",
                self.skeleton.len()
            )));
        }
        if self.skeleton.iter().any(|d| !(*d > 0.0 && *d < 1.0))
            || self.skeleton.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::invalid("skeleton must be strictly increasing in (0, 1)"));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::invalid("sigma2 must be positive"));
        }
        Ok(())
    }

    fn support(&self) -> (f64, f64) {
        let s = 10.0 * self.sigma2.sqrt();
        (-s, s)
    }
}

pub fn curve(skeleton: f64, beta: f64) -> f64 {
    skeleton.powf(beta.exp())
}

/// Unnormalized log posterior of beta given (level, dlt, weight) data.
pub fn log_posterior(cfg: &TiteCrmConfig, data: &[(usize, bool, f64)], beta: f64) -> f64 {
    let eb = beta.exp();
    let mut lp = -0.5 * beta * beta / cfg.sigma2;
    for &(level, dlt, w) in data {
        let f = cfg.skeleton[level].powf(eb);
        lp += if dlt { (w * f).ln() } else { (-(w * f)).ln_1p() };
    }
    lp
}

pub fn posterior_mean(cfg: &TiteCrmConfig, data: &[(usize, bool, f64)]) -> Result<f64> {
    Ok(posterior_mean_1d(|b| log_posterior(cfg, data, b), cfg.support())?.mean[0])
}

fn estimates(cfg: &TiteCrmConfig, data: &[(usize, bool, f64)]) -> Result<Vec<f64>> {
    let b = posterior_mean(cfg, data)?;
    Ok(cfg.skeleton.iter().map(|&d| curve(d, b)).collect())
}

pub fn decide(cfg: &TiteCrmConfig, ctx: &DecisionContext<'_>) -> Result<Decision> {
    let state = ctx.state;
    let data = weighted_binary(state, ctx.trial.cycles);
    let mut decision = match initial_phase(state, ctx.doses.len()) {
        Some(level) => Decision::assign(level),
        None => {
            let b = posterior_mean(cfg, &data)?;
            let risk: Vec<f64> = cfg.skeleton.iter().map(|&d| curve(d, b)).collect();
            let mut d = Decision::assign(argmin_distance(&risk, ctx.trial.target));
            d.summaries.push(("beta_mean".into(), b));
            d
        }
    };
    if ctx.wants_stopping_inputs() {
        decision.safety = Some(safety(cfg, state, ctx.rules.tau_cycle1)?);
        decision.cv = Some(mtd_cv(cfg, &data, ctx.trial.target)?);
    }
    Ok(decision)
}

pub fn final_estimates(cfg: &TiteCrmConfig, ctx: &DecisionContext<'_>) -> Result<(Vec<f64>, f64)> {
    let data = weighted_binary(ctx.state, ctx.trial.cycles);
    Ok((estimates(cfg, &data)?, ctx.trial.target))
}

/// P(p1_j > tau_cycle1) from the model refitted with a one-cycle window.
pub fn safety(cfg: &TiteCrmConfig, state: &crate::trial::TrialState, tau_cycle1: f64) -> Result<SafetyProbs> {
    let data = one_cycle_window(state);
    let lp = |b: f64| log_posterior(cfg, &data, b);
    let p_exceeds = cfg
        .skeleton
        .iter()
        .map(|&d| {
            // d^exp(b) > t  <=>  b < ln(ln t / ln d)
            let cut = (tau_cycle1.ln() / d.ln()).ln();
            posterior_cdf_1d(lp, cfg.support(), cut)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(SafetyProbs { p_exceeds })
}

/// CV of the skeleton-scale MTD `tau^exp(-beta)` over posterior draws.
pub fn mtd_cv(cfg: &TiteCrmConfig, data: &[(usize, bool, f64)], target: f64) -> Result<f64> {
    let draws = quantile_draws_1d(|b| log_posterior(cfg, data, b), cfg.support(), cfg.cv_draws)?;
    let mtd: Vec<f64> = draws.iter().map(|b| target.powf((-b).exp())).collect();
    Ok(robust_cv(&mtd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::{DesignConfig, Engine, Proposal};
    use crate::rules::RuleConfig;
    use crate::trial::{CycleOutcome, DoseGrid, TrialConfig, TrialState};

    fn riemann_mean(cfg: &TiteCrmConfig, data: &[(usize, bool, f64)]) -> f64 {
        let (lo, hi) = cfg.support();
        let n = 1_000_000;
        let h = (hi - lo) / n as f64;
        let vals: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let b = lo + h * (i as f64 + 0.5);
                (b, log_posterior(cfg, data, b))
            })
            .collect();
        let m = vals.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
        let (mut z, mut s) = (0.0, 0.0);
        for (b, lp) in vals {
            let w = (lp - m).exp();
            z += w;
            s += w * b;
        }
        s / z
    }

    #[test]
    fn one_dlt_at_level_two_matches_oracle() {
        let cfg = TiteCrmConfig::default();
        let data = vec![(0, false, 1.0), (0, false, 1.0), (0, false, 1.0), (1, true, 1.0), (1, false, 1.0), (1, false, 1.0)];
        let b = posterior_mean(&cfg, &data).unwrap();
        let oracle = riemann_mean(&cfg, &data);
        assert!((b - oracle).abs() < 1e-5);
        let risk: Vec<f64> = cfg.skeleton.iter().map(|&d| curve(d, oracle)).collect();
        let want = argmin_distance(&risk, 0.391);
        let got = argmin_distance(&cfg.skeleton.iter().map(|&d| curve(d, b)).collect::<Vec<_>>(), 0.391);
        assert_eq!(want, got);
    }

    #[test]
    fn initial_phase_escalates_one_level() {
        let doses = DoseGrid::reference();
        let trial = TrialConfig::default();
        let rules = RuleConfig::setting(1);
        let s = TrialState::new().enroll_cohort(0, &[0.5; 3]).unwrap();
        let s = s
            .record_cycle_outcomes(&[(0, CycleOutcome::binary(false)), (1, CycleOutcome::binary(false)), (2, CycleOutcome::binary(false))], 3)
            .unwrap();
        let e = Engine::new(DesignConfig::TiteCrm(TiteCrmConfig::default()));
        let ctx = DecisionContext { state: &s, doses: &doses, trial: &trial, rules: &rules, seed: 0 };
        assert_eq!(e.decide(&ctx).unwrap().proposal, Proposal::Assign(1));
    }

    #[test]
    fn order_invariance() {
        let cfg = TiteCrmConfig::default();
        let mut data = vec![(0, false, 1.0), (2, true, 1.0), (1, false, 2.0 / 3.0), (3, false, 1.0 / 3.0)];
        let a = posterior_mean(&cfg, &data).unwrap();
        data.reverse();
        let b = posterior_mean(&cfg, &data).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn heavier_dlt_weight_never_raises_recommendation() {
        let cfg = TiteCrmConfig::default();
        let mut seed = 17u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 33) as f64 / (1u64 << 31) as f64
        };
        for _ in 0..100 {
            let n = 3 + (next() * 10.0) as usize;
            let mut data: Vec<(usize, bool, f64)> = (0..n)
                .map(|_| ((next() * 6.0) as usize % 6, next() < 0.3, 1.0 / 3.0 + (next() * 2.0).floor() / 3.0))
                .collect();
            let idx = (next() * n as f64) as usize % n;
            data[idx].1 = true;
            data[idx].2 = 0.3;
            let pick = |d: &[(usize, bool, f64)]| {
                // continuous skeleton-scale dose solving F = target
                0.391f64.powf((-posterior_mean(&cfg, d).unwrap()).exp())
            };
            let before = pick(&data);
            data[idx].2 = 1.0;
            assert!(pick(&data) <= before + 1e-12);
        }
    }

    #[test]
    fn safety_probability_matches_quadrature_of_event() {
        let cfg = TiteCrmConfig::default();
        let s = TrialState::new().enroll_cohort(0, &[0.5; 3]).unwrap();
        let s = s
            .record_cycle_outcomes(&[(0, CycleOutcome::binary(true)), (1, CycleOutcome::binary(true)), (2, CycleOutcome::binary(false))], 3)
            .unwrap();
        let p = safety(&cfg, &s, 0.3).unwrap();
        // monotone in dose
        assert!(p.p_exceeds.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        assert!(p.p_exceeds[0] > 0.0 && p.p_exceeds[5] < 1.0);
    }
}
