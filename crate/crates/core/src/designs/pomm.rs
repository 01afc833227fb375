//! Proportional-odds mixed model on the worst grade per cycle, with three
//! categories: grade 0-1, grade 2, grade 3 or worse (DLT). Until enough
//! patients have data the design runs a cycle-1 logistic model instead.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::glm::{expit, fit_binomial, logit, BinomialCell, GlmFit, Link};
use crate::kernels::ordinal::{category_probs, fit_ordinal_po, theta_from_raw, OrdinalFit, OrdinalObs, OrdinalPrior, OrdinalPseudo};
use crate::kernels::robust::robust_cv;
use crate::patient::argmin_distance;
use crate::rng::{self, Domain};
use crate::rules::SafetyProbs;
use crate::trial::{DoseGrid, TrialConfig, TrialState};

use super::{Decision, DecisionContext};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PommConfig {
    /// Prior guess of the cycle-1 DLT rate per dose.
    pub p1_star: Vec<f64>,
    /// Prior ratio P(grade 2) / P(DLT) per dose; the last entry is reused
    /// when shorter than the dose grid.
    pub grade2_ratio: Vec<f64>,
    /// Pseudo-patients per dose.
    pub n0: f64,
    pub cycle_decay: f64,
    /// The ordinal model is used once more than this many patients have
    /// at least one observed cycle.
    pub switch_n: usize,
    pub prior: OrdinalPrior,
    pub laplace_draws: usize,
}

impl Default for PommConfig {
    fn default() -> Self {
        Self {
            p1_star: vec![0.15, 0.2, 0.25, 0.3, 0.35, 0.4],
            grade2_ratio: vec![0.2, 0.3, 0.4, 0.5, 0.6],
            n0: 2.0,
            cycle_decay: 1.0 / 3.0,
            switch_n: 15,
            prior: OrdinalPrior::default(),
            laplace_draws: 500,
        }
    }
}

impl PommConfig {
    pub fn validate(&self, doses: usize, trial: &TrialConfig) -> Result<()> {
        if self.p1_star.len() != doses {
            return Err(Error::invalid(format!("p1_star has {} entries for {doses} doses", self.p1_star.len())));
        }
        if self.grade2_ratio.is_empty() || self.grade2_ratio.len() > doses {
            return Err(Error::invalid("grade2_ratio needs between 1 and J entries"));
        }
        for j in 0..doses {
            let p = self.p1_star[j];
            let r = self.ratio(j);
            if !(p > 0.0 && r >= 0.0 && p * (1.0 + r) < 1.0) {
                return Err(Error::invalid(format!("POMM prior at dose {} is not a valid distribution", j + 1)));
            }
        }
        if !(self.n0 > 0.0) || !(self.cycle_decay > 0.0 && self.cycle_decay <= 1.0) {
            return Err(Error::invalid("POMM needs n0 > 0 and cycle_decay in (0, 1]"));
        }
        if trial.cycles == 0 || self.laplace_draws == 0 {
            return Err(Error::invalid("POMM needs cycles and Laplace draws"));
        }
        Ok(())
    }

    fn ratio(&self, j: usize) -> f64 {
        *self.grade2_ratio.get(j).or(self.grade2_ratio.last()).expect("nonempty")
    }
}

pub fn category(max_grade: u8) -> u8 {
    match max_grade {
        0 | 1 => 1,
        2 => 2,
        _ => 3,
    }
}

pub fn ordinal_data(state: &TrialState, doses: &DoseGrid) -> Vec<OrdinalObs> {
    state
        .patients
        .iter()
        .flat_map(|p| {
            p.outcomes.iter().enumerate().map(move |(s, o)| OrdinalObs {
                subject: p.id,
                dose: doses.value(p.dose_level),
                cycle: (s + 1) as f64,
                category: category(o.max_grade),
            })
        })
        .collect()
}

pub fn pseudo_data(cfg: &PommConfig, doses: &DoseGrid, cycles: usize) -> Vec<OrdinalPseudo> {
    let w = cfg.n0 / cycles as f64;
    let mut out = Vec::new();
    for j in 0..doses.len() {
        for s in 0..cycles {
            let p3 = cfg.p1_star[j] * cfg.cycle_decay.powi(s as i32);
            let p2 = cfg.ratio(j) * p3;
            for (k, p) in [(1u8, 1.0 - p2 - p3), (2, p2), (3, p3)] {
                out.push(OrdinalPseudo {
                    dose: doses.value(j),
                    cycle: (s + 1) as f64,
                    category: k,
                    weight: w * p,
                });
            }
        }
    }
    out
}

/// Whole-follow-up DLT probability at `u = 0`.
pub fn whole_period(theta: &[f64; 5], dose: f64, cycles: usize) -> f64 {
    1.0 - (1..=cycles).map(|s| 1.0 - category_probs(theta, dose, s as f64, 0.0)[2]).product::<f64>()
}

fn logistic_fit(cfg: &PommConfig, state: &TrialState, doses: &DoseGrid) -> Result<GlmFit> {
    let mut cells: Vec<BinomialCell> = (0..doses.len())
        .map(|j| BinomialCell {
            x: vec![1.0, doses.value(j)],
            events: cfg.n0 * cfg.p1_star[j],
            trials: cfg.n0,
        })
        .collect();
    for p in &state.patients {
        if let Some(dlt) = p.cycle1_dlt() {
            cells.push(BinomialCell {
                x: vec![1.0, doses.value(p.dose_level)],
                events: if dlt { 1.0 } else { 0.0 },
                trials: 1.0,
            });
        }
    }
    fit_binomial(&cells, Link::Logit, &[logit(cfg.p1_star[0]), 0.0], 0.0)
}

/// The cycle-1 logistic fit to the pseudo-data alone.
pub fn prior_logistic_fit(cfg: &PommConfig, doses: &DoseGrid) -> Result<GlmFit> {
    logistic_fit(cfg, &TrialState::new(), doses)
}

enum Model {
    Logistic(GlmFit),
    Ordinal(OrdinalFit),
}

fn with_data(state: &TrialState) -> usize {
    state.patients.iter().filter(|p| p.cycles_observed() > 0).count()
}

fn fit(cfg: &PommConfig, state: &TrialState, doses: &DoseGrid, cycles: usize) -> Result<(Model, Option<String>)> {
    if with_data(state) > cfg.switch_n {
        match fit_ordinal_po(&ordinal_data(state, doses), &pseudo_data(cfg, doses, cycles), &cfg.prior) {
            Ok(f) => return Ok((Model::Ordinal(f), None)),
            Err(e) => {
                log::debug!("POMM ordinal fit failed, using cycle-1 logistic: {e}");
                return Ok((Model::Logistic(logistic_fit(cfg, state, doses)?), Some(e.to_string())));
            }
        }
    }
    Ok((Model::Logistic(logistic_fit(cfg, state, doses)?), None))
}

/// Risk per dose and the target it is compared with.
fn estimates(model: &Model, doses: &DoseGrid, trial: &TrialConfig, tau_cycle1: f64) -> (Vec<f64>, f64) {
    match model {
        Model::Logistic(g) => (
            doses.values().iter().map(|&d| expit(g.coef[0] + g.coef[1] * d)).collect(),
            tau_cycle1,
        ),
        Model::Ordinal(f) => (
            doses.values().iter().map(|&d| whole_period(&f.theta, d, trial.cycles)).collect(),
            trial.target,
        ),
    }
}

pub fn decide(cfg: &PommConfig, ctx: &DecisionContext<'_>) -> Result<Decision> {
    let (model, fallback) = fit(cfg, ctx.state, ctx.doses, ctx.trial.cycles)?;
    let (risk, target) = estimates(&model, ctx.doses, ctx.trial, ctx.rules.tau_cycle1);
    let mut decision = Decision::assign(argmin_distance(&risk, target));
    decision.fallback = fallback;
    match &model {
        Model::Logistic(g) => decision.summaries.push(("slope".into(), g.coef[1])),
        Model::Ordinal(f) => {
            decision.summaries.push(("beta_dose".into(), f.theta[2]));
            decision.summaries.push(("sigma0".into(), f.theta[4]));
        }
    }
    if ctx.wants_stopping_inputs() {
        let draws = laplace_draws(&model, cfg.laplace_draws, ctx.seed)?;
        decision.safety = Some(safety(&model, &draws, ctx.doses, ctx.rules.tau_cycle1));
        decision.cv = Some(mtd_cv(&model, &draws, ctx.doses, ctx.trial, ctx.rules.tau_cycle1));
    }
    Ok(decision)
}

pub fn final_estimates(cfg: &PommConfig, ctx: &DecisionContext<'_>) -> Result<(Vec<f64>, f64)> {
    let (model, _) = fit(cfg, ctx.state, ctx.doses, ctx.trial.cycles)?;
    Ok(estimates(&model, ctx.doses, ctx.trial, ctx.rules.tau_cycle1))
}

/// Normal draws around the fitted parameters; ordinal draws are returned
/// on the natural scale.
fn laplace_draws(model: &Model, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let (mean, cov) = match model {
        Model::Logistic(g) => (g.coef.clone(), g.cov.clone()),
        Model::Ordinal(f) => (f.raw.clone(), f.cov.clone()),
    };
    let l = cov
        .cholesky()
        .ok_or_else(|| Error::numerical("POMM covariance is not positive definite"))?
        .l();
    let k = mean.len();
    let mut rng = rng::stream(seed, Domain::Decision, [0x9033, 0, 0]);
    Ok((0..n)
        .map(|_| {
            let z = DVector::<f64>::from_fn(k, |_, _| rng.sample(StandardNormal));
            let d = &l * z;
            let raw: Vec<f64> = mean.iter().zip(d.iter()).map(|(m, e)| m + e).collect();
            match model {
                Model::Logistic(_) => raw,
                Model::Ordinal(_) => theta_from_raw(&raw).to_vec(),
            }
        })
        .collect())
}

fn cycle1_risk(model: &Model, draw: &[f64], dose: f64) -> f64 {
    match model {
        Model::Logistic(_) => expit(draw[0] + draw[1] * dose),
        Model::Ordinal(_) => {
            let th: [f64; 5] = draw.try_into().expect("five parameters");
            category_probs(&th, dose, 1.0, 0.0)[2]
        }
    }
}

fn safety(model: &Model, draws: &[Vec<f64>], doses: &DoseGrid, tau_cycle1: f64) -> SafetyProbs {
    let n = draws.len() as f64;
    let p_exceeds = doses
        .values()
        .iter()
        .map(|&d| draws.iter().filter(|r| cycle1_risk(model, r, d) > tau_cycle1).count() as f64 / n)
        .collect();
    SafetyProbs { p_exceeds }
}

/// Dose in MBq solving the model's target equation, per draw; draws with a
/// non-positive dose slope have no finite solution.
fn mtd_cv(model: &Model, draws: &[Vec<f64>], doses: &DoseGrid, trial: &TrialConfig, tau_cycle1: f64) -> f64 {
    let mtd: Vec<f64> = draws
        .iter()
        .map(|r| match model {
            Model::Logistic(_) => {
                if r[1] > 0.0 {
                    (logit(tau_cycle1) - r[0]) / r[1]
                } else {
                    f64::INFINITY
                }
            }
            Model::Ordinal(_) => {
                let th: [f64; 5] = r.as_slice().try_into().expect("five parameters");
                if th[2] <= 0.0 {
                    return f64::INFINITY;
                }
                solve_whole_period(&th, trial.cycles, trial.target, 100.0 * doses.max_value())
            }
        })
        .collect();
    robust_cv(&mtd)
}

fn solve_whole_period(theta: &[f64; 5], cycles: usize, target: f64, upper: f64) -> f64 {
    let g = |d: f64| whole_period(theta, d, cycles) - target;
    if g(upper) < 0.0 {
        return f64::INFINITY;
    }
    let (mut lo, mut hi) = (0.0, upper);
    if g(lo) >= 0.0 {
        return 0.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 * upper {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::Proposal;
    use crate::rules::RuleConfig;
    use crate::trial::CycleOutcome;

    #[test]
    fn grade_categories() {
        assert_eq!([0, 1, 2, 3, 4].map(category), [1, 1, 2, 3, 3]);
    }

    #[test]
    fn pseudo_weights_sum_to_n0_per_dose() {
        let cfg = PommConfig::default();
        let doses = DoseGrid::reference();
        let p = pseudo_data(&cfg, &doses, 3);
        for j in 0..6 {
            let w: f64 = p.iter().filter(|o| o.dose == doses.value(j)).map(|o| o.weight).sum();
            assert!((w - 2.0).abs() < 1e-12);
        }
        // last dose reuses the last grade-2 ratio
        let top: Vec<_> = p.iter().filter(|o| o.dose == 7.0 && o.cycle == 1.0).collect();
        assert!((top[1].weight / top[2].weight - 0.6).abs() < 1e-12);
    }

    #[test]
    fn whole_period_solver_inverts() {
        let th = [0.5, 2.0, 0.35, 0.1, 0.6];
        let d = solve_whole_period(&th, 3, 0.391, 700.0);
        assert!((whole_period(&th, d, 3) - 0.391).abs() < 1e-8);
    }

    fn history(n_cohorts: usize, dlt_every: usize) -> TrialState {
        let mut s = TrialState::new();
        for c in 0..n_cohorts {
            s = s.enroll_cohort(c.min(5), &[0.5; 3]).unwrap();
            let out: Vec<_> = s
                .on_study(3)
                .map(|p| {
                    let o = if p.id % dlt_every == 0 {
                        CycleOutcome::from_type_grades([3, 0, 1])
                    } else if p.id % 3 == 1 {
                        CycleOutcome::from_type_grades([2, 0, 0])
                    } else {
                        CycleOutcome::from_type_grades([1, 0, 0])
                    };
                    (p.id, o)
                })
                .collect();
            s = s.record_cycle_outcomes(&out, 3).unwrap();
        }
        s
    }

    #[test]
    fn switches_to_ordinal_model_after_enough_patients() {
        let doses = DoseGrid::reference();
        let trial = TrialConfig::default();
        let rules = RuleConfig::setting(2);
        let cfg = PommConfig::default();
        for (cohorts, ordinal) in [(5, false), (6, true)] {
            let s = history(cohorts, 4);
            let ctx = DecisionContext { state: &s, doses: &doses, trial: &trial, rules: &rules, seed: 5 };
            let d = decide(&cfg, &ctx).unwrap();
            assert_eq!(d.summaries.iter().any(|(k, _)| k == "sigma0"), ordinal);
            assert!(matches!(d.proposal, Proposal::Assign(_)));
            let safety = d.safety.unwrap().p_exceeds;
            assert!(safety.iter().all(|p| (0.0..=1.0).contains(p)));
            assert!(d.cv.unwrap() >= 0.0);
        }
    }
}
