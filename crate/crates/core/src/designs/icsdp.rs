//! Interval-censored survival design: per-cycle conditional DLT hazards
//! `cloglog(pi_{j,s}) = gamma_s + theta * log(d_j)`, fitted by maximum a
//! posteriori with a pseudo-data prior at the lowest and highest dose.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::kernels::glm::{fit_binomial, BinomialCell, GlmFit, Link};
use crate::kernels::robust::robust_cv;
use crate::patient::argmin_distance;
use crate::rng::{self, Domain};
use crate::rules::SafetyProbs;
use crate::trial::{DoseGrid, TrialState};

use super::{Decision, DecisionContext};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcsdpConfig {
    /// Prior cycle-1 DLT rate at the lowest dose.
    pub pi_star_1: f64,
    /// Prior cycle-1 DLT rate at the highest dose.
    pub pi_star_j: f64,
    pub n0: f64,
    /// Ratio between consecutive-cycle pseudo hazards.
    pub cycle_decay: f64,
    pub laplace_draws: usize,
}

impl Default for IcsdpConfig {
    fn default() -> Self {
        Self::for_setting(1)
    }
}

impl IcsdpConfig {
    pub fn for_setting(setting: u8) -> Self {
        let (pi_star_j, n0) = if setting >= 2 { (0.3, 4.0) } else { (0.4, 6.0) };
        Self {
            pi_star_1: 0.2,
            pi_star_j,
            n0,
            cycle_decay: 1.0 / 3.0,
            laplace_draws: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pi_star_1 > 0.0 && self.pi_star_1 <= self.pi_star_j && self.pi_star_j < 1.0) {
            return Err(Error::invalid("ICSDP needs 0 < pi_star_1 <= pi_star_j < 1"));
        }
        if !(self.n0 > 0.0) || !(self.cycle_decay > 0.0 && self.cycle_decay <= 1.0) {
            return Err(Error::invalid("ICSDP needs n0 > 0 and cycle_decay in (0, 1]"));
        }
        Ok(())
    }
}

fn covariates(cycles: usize, s: usize, dose: f64) -> Vec<f64> {
    let mut x = vec![0.0; cycles + 1];
    x[s] = 1.0;
    x[cycles] = dose.ln();
    x
}

/// Pseudo-patients at the extreme doses: cycle-s hazard `pi * decay^(s-1)`,
/// with the risk set shrinking by the expected DLTs of earlier cycles.
pub fn pseudo_cells(cfg: &IcsdpConfig, doses: &DoseGrid, cycles: usize) -> Vec<BinomialCell> {
    let mut cells = Vec::new();
    for (dose, pi) in [(doses.value(0), cfg.pi_star_1), (doses.max_value(), cfg.pi_star_j)] {
        let mut at_risk = cfg.n0;
        for s in 0..cycles {
            let h = pi * cfg.cycle_decay.powi(s as i32);
            cells.push(BinomialCell {
                x: covariates(cycles, s, dose),
                events: at_risk * h,
                trials: at_risk,
            });
            at_risk *= 1.0 - h;
        }
    }
    cells
}

pub fn data_cells(state: &TrialState, doses: &DoseGrid, cycles: usize) -> Vec<BinomialCell> {
    let table = state.count_table(doses.len(), cycles);
    let mut cells = Vec::new();
    for j in 0..doses.len() {
        for s in 0..cycles {
            let (r, q) = (table.r[j][s] as f64, table.q[j][s] as f64);
            if r + q > 0.0 {
                cells.push(BinomialCell {
                    x: covariates(cycles, s, doses.value(j)),
                    events: r,
                    trials: r + q,
                });
            }
        }
    }
    cells
}

pub fn fit(cfg: &IcsdpConfig, state: &TrialState, doses: &DoseGrid, cycles: usize) -> Result<GlmFit> {
    let mut cells = pseudo_cells(cfg, doses, cycles);
    cells.extend(data_cells(state, doses, cycles));
    let mut init: Vec<f64> = (0..cycles)
        .map(|s| Link::CLogLog.apply(cfg.pi_star_1 * cfg.cycle_decay.powi(s as i32)))
        .collect();
    init.push(0.5);
    fit_binomial(&cells, Link::CLogLog, &init, 0.0)
}

/// Whole-follow-up DLT probability per dose.
pub fn cumulative_risk(coef: &[f64], doses: &DoseGrid, cycles: usize) -> Vec<f64> {
    let theta = coef[cycles];
    doses
        .values()
        .iter()
        .map(|&d| {
            let h: f64 = coef[..cycles].iter().map(|g| (g + theta * d.ln()).exp()).sum();
            -(-h).exp_m1()
        })
        .collect()
}

fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

pub fn decide(cfg: &IcsdpConfig, ctx: &DecisionContext<'_>) -> Result<Decision> {
    let cycles = ctx.trial.cycles;
    let fitted = match fit(cfg, ctx.state, ctx.doses, cycles) {
        Ok(f) => f,
        Err(e) => {
            log::debug!("ICSDP fit failed, using lowest dose: {e}");
            let mut d = Decision::assign(0);
            d.fallback = Some(e.to_string());
            return Ok(d);
        }
    };
    let rho = cumulative_risk(&fitted.coef, ctx.doses, cycles);
    let mut decision = Decision::assign(argmin_distance(&rho, ctx.trial.target));
    decision.summaries.push(("theta".into(), fitted.coef[cycles]));
    if ctx.wants_stopping_inputs() {
        decision.safety = Some(safety(&fitted, ctx.doses, cycles, ctx.rules.tau_cycle1));
        decision.cv = Some(mtd_cv(cfg, &fitted, cycles, ctx.trial.target, ctx.seed)?);
    }
    Ok(decision)
}

pub fn final_estimates(cfg: &IcsdpConfig, ctx: &DecisionContext<'_>) -> Result<(Vec<f64>, f64)> {
    let fitted = fit(cfg, ctx.state, ctx.doses, ctx.trial.cycles)?;
    Ok((cumulative_risk(&fitted.coef, ctx.doses, ctx.trial.cycles), ctx.trial.target))
}

/// Normal approximation to P(pi_{j,1} > tau_cycle1).
pub fn safety(fitted: &GlmFit, doses: &DoseGrid, cycles: usize, tau_cycle1: f64) -> SafetyProbs {
    let cut = Link::CLogLog.apply(tau_cycle1);
    let p_exceeds = doses
        .values()
        .iter()
        .map(|&d| {
            let mut c = DVector::<f64>::zeros(cycles + 1);
            c[0] = 1.0;
            c[cycles] = d.ln();
            let mean = fitted.coef[0] + fitted.coef[cycles] * d.ln();
            let var = (c.transpose() * &fitted.cov * &c)[(0, 0)].max(1e-300);
            normal_sf((cut - mean) / var.sqrt())
        })
        .collect();
    SafetyProbs { p_exceeds }
}

/// CV of the MTD solving `1 - exp(-d^theta * sum_s e^gamma_s) = tau`
/// over Laplace draws; draws with `theta <= 0` have no finite solution.
pub fn mtd_cv(cfg: &IcsdpConfig, fitted: &GlmFit, cycles: usize, target: f64, seed: u64) -> Result<f64> {
    let k = cycles + 1;
    let chol = fitted
        .cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("ICSDP covariance is not positive definite"))?;
    let l = chol.l();
    let mut rng = rng::stream(seed, Domain::Decision, [0x1c5d, 0, 0]);
    let rhs = -(-target).ln_1p();
    let mut mtd = Vec::with_capacity(cfg.laplace_draws);
    for _ in 0..cfg.laplace_draws {
        let z = DVector::<f64>::from_fn(k, |_, _| rng.sample(StandardNormal));
        let draw = &l * z;
        let theta = fitted.coef[cycles] + draw[cycles];
        let sum: f64 = (0..cycles).map(|s| (fitted.coef[s] + draw[s]).exp()).sum();
        mtd.push(if theta > 0.0 { (rhs / sum).powf(1.0 / theta) } else { f64::INFINITY });
    }
    Ok(robust_cv(&mtd))
}
