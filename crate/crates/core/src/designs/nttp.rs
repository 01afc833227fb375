//! Normalized total toxicity profile design: a linear mixed model for the
//! per-cycle nTTP score with a random intercept per patient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::gibbs::{gibbs_lmm, GibbsConfig, LmmFit, LmmObservation, LmmPriors};
use crate::kernels::robust::robust_cv;
use crate::patient::{argmin_distance, expected_nttp, nttp_value, NttpWeights};
use crate::rules::SafetyProbs;
use crate::trial::{DoseGrid, TrialState};

use super::{Decision, DecisionContext};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NttpConfig {
    pub prior: LmmPriors,
    /// Target score; derived from the weights at a cycle-1 DLT rate of 0.3
    /// when absent.
    pub tau_nttp: Option<f64>,
    pub weights: NttpWeights,
    pub gibbs: GibbsConfig,
}

impl Default for NttpConfig {
    fn default() -> Self {
        Self::for_setting(1)
    }
}

impl NttpConfig {
    pub fn for_setting(setting: u8) -> Self {
        let prior = if setting >= 2 {
            LmmPriors {
                mean: [0.05, 0.1, 0.0],
                var: [10.0, 10.0, 10.0],
                ..LmmPriors::default()
            }
        } else {
            LmmPriors::default()
        };
        Self {
            prior,
            tau_nttp: None,
            weights: NttpWeights::default(),
            gibbs: GibbsConfig::default(),
        }
    }

    pub fn target(&self) -> f64 {
        self.tau_nttp.unwrap_or_else(|| expected_nttp(0.3, &self.weights))
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.target();
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::invalid(format!("nTTP target {t} is outside (0, 1)")));
        }
        if self.prior.var.iter().any(|v| !(*v > 0.0)) || self.gibbs.draws == 0 {
            return Err(Error::invalid("nTTP needs positive prior variances and draws"));
        }
        Ok(())
    }
}

/// One row per observed cycle; the dose enters as a fraction of the top dose.
pub fn observations(state: &TrialState, doses: &DoseGrid, weights: &NttpWeights) -> Vec<LmmObservation> {
    let top = doses.max_value();
    state
        .patients
        .iter()
        .flat_map(|p| {
            p.outcomes.iter().enumerate().map(move |(s, o)| LmmObservation {
                subject: p.id,
                dose: doses.value(p.dose_level) / top,
                cycle: (s + 1) as f64,
                y: nttp_value(o.type_grades, weights),
            })
        })
        .collect()
}

fn fit(cfg: &NttpConfig, ctx: &DecisionContext<'_>) -> Result<LmmFit> {
    gibbs_lmm(&observations(ctx.state, ctx.doses, &cfg.weights), &cfg.prior, &cfg.gibbs, ctx.seed)
}

/// Predicted cycle-1 score per dose at the posterior mean.
pub fn predicted_scores(beta: &[f64], doses: &DoseGrid) -> Vec<f64> {
    let top = doses.max_value();
    doses.values().iter().map(|&d| beta[0] + beta[1] * d / top + beta[2]).collect()
}

pub fn decide(cfg: &NttpConfig, ctx: &DecisionContext<'_>) -> Result<Decision> {
    let fitted = fit(cfg, ctx)?;
    let beta = &fitted.summary.mean;
    let scores = predicted_scores(beta, ctx.doses);
    let mut decision = Decision::assign(argmin_distance(&scores, cfg.target()));
    decision.summaries.push(("b_dose".into(), beta[1]));
    decision.summaries.push(("s2_subject".into(), beta[3]));
    if ctx.wants_stopping_inputs() {
        decision.safety = Some(SafetyProbs::beta_binomial(ctx.state, ctx.doses.len(), ctx.rules.tau_cycle1));
        decision.cv = Some(mtd_cv(&fitted, cfg.target()));
    }
    Ok(decision)
}

pub fn final_estimates(cfg: &NttpConfig, ctx: &DecisionContext<'_>) -> Result<(Vec<f64>, f64)> {
    let fitted = fit(cfg, ctx)?;
    Ok((predicted_scores(&fitted.summary.mean, ctx.doses), cfg.target()))
}

/// CV of the scaled dose solving `b0 + b1 x + b2 = tau` over the draws.
pub fn mtd_cv(fitted: &LmmFit, target: f64) -> f64 {
    let mtd: Vec<f64> = fitted
        .summary
        .draws()
        .map(|r| if r[1] > 0.0 { (target - r[0] - r[2]) / r[1] } else { f64::INFINITY })
        .collect();
    robust_cv(&mtd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::RuleConfig;
    use crate::trial::{CycleOutcome, TrialConfig};

    #[test]
    fn default_target_is_generator_expectation() {
        let cfg = NttpConfig::default();
        let t = cfg.target();
        assert!((t - expected_nttp(0.3, &NttpWeights::default())).abs() < 1e-15);
        assert!(t > 0.0 && t < 1.0);
    }

    #[test]
    fn prediction_is_linear_in_scaled_dose() {
        let doses = DoseGrid::reference();
        let s = predicted_scores(&[0.1, 0.5, -0.02], &doses);
        assert!((s[5] - (0.1 + 0.5 - 0.02)).abs() < 1e-12);
        assert!((s[0] - (0.1 + 0.5 * 1.5 / 7.0 - 0.02)).abs() < 1e-12);
    }

    #[test]
    fn toxic_history_pulls_dose_down() {
        let doses = DoseGrid::reference();
        let trial = TrialConfig::default();
        let rules = RuleConfig::setting(1);
        let cfg = NttpConfig::default();
        let mut s = TrialState::new();
        for level in [0, 1, 2] {
            s = s.enroll_cohort(level, &[0.5; 3]).unwrap();
            let out: Vec<_> = s
                .on_study(3)
                .map(|p| {
                    let g = if p.dose_level == 2 { [4, 3, 4] } else { [1, 0, 1] };
                    (p.id, CycleOutcome::from_type_grades(g))
                })
                .collect();
            s = s.record_cycle_outcomes(&out, 3).unwrap();
        }
        let ctx = DecisionContext { state: &s, doses: &doses, trial: &trial, rules: &rules, seed: 3 };
        let d = decide(&cfg, &ctx).unwrap();
        match d.proposal {
            super::super::Proposal::Assign(l) => assert!(l <= 2, "{l}"),
            p => panic!("{p:?}"),
        }
    }
}
