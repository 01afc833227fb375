//! Hyper-parameter grid search on the calibration scenarios.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::designs::{icsdp, nttp, pomm, DesignConfig, DesignKind, IntervalConfig};
use crate::error::{Error, Result};
use crate::kernels::glm::expit;
use crate::patient::ScenarioSpec;
use crate::rng::{self, Domain};
use crate::rules::RuleConfig;
use crate::trial::{DoseGrid, TrialConfig, TrialState};

use super::{run_study, StudyPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub config: DesignConfig,
    /// PCS per scenario, in scenario order.
    pub pcs: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub design: DesignKind,
    pub scenarios: Vec<String>,
    pub best_index: usize,
    pub best: DesignConfig,
    pub objective: f64,
    pub per_scenario_pcs: Vec<f64>,
    pub points: Vec<GridPoint>,
    /// Prior effective sample size per dose for the best point.
    pub ess: Vec<f64>,
}

/// Geometric mean; a single zero (or NaN) makes it zero.
pub fn geometric_mean(values: &[f64]) -> f64 {
    if values.is_empty() || values.iter().any(|v| !(*v > 0.0)) {
        return 0.0;
    }
    (values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp()
}

pub fn calibrate(
    grid: &[DesignConfig],
    scenarios: &[ScenarioSpec],
    trial: &TrialConfig,
    rules: &RuleConfig,
    replications: u64,
    seed: u64,
) -> Result<CalibrationReport> {
    let first = grid.first().ok_or_else(|| Error::invalid("calibration grid is empty"))?;
    if scenarios.is_empty() {
        return Err(Error::invalid("calibration needs at least one scenario"));
    }
    let kind = first.kind();
    if grid.iter().any(|c| c.kind() != kind) {
        return Err(Error::invalid("every grid point must use the same design"));
    }
    let mut points = Vec::with_capacity(grid.len());
    for config in grid {
        let pcs = scenarios
            .iter()
            .map(|s| {
                let plan = StudyPlan {
                    scenario: s.clone(),
                    design: config.clone(),
                    trial: trial.clone(),
                    rules: rules.clone(),
                    replications,
                    seed,
                };
                run_study(&plan).map(|m| m.pcs)
            })
            .collect::<Result<Vec<f64>>>()?;
        let objective = geometric_mean(&pcs);
        log::info!("{kind} grid point {}: objective {objective:.4}", points.len() + 1);
        points.push(GridPoint { config: config.clone(), pcs, objective });
    }
    let mut best_index = 0;
    for (i, p) in points.iter().enumerate() {
        if p.objective > points[best_index].objective {
            best_index = i;
        }
    }
    let best = points[best_index].clone();
    let ess = ess_diagnostic(&best.config, &scenarios[0].doses, trial, seed)?;
    Ok(CalibrationReport {
        design: kind,
        scenarios: scenarios.iter().map(|s| s.label.clone()).collect(),
        best_index,
        best: best.config,
        objective: best.objective,
        per_scenario_pcs: best.pcs,
        points,
        ess,
    })
}

const ESS_DRAWS: usize = 4000;

fn moment_ess(draws: &[f64]) -> f64 {
    let n = draws.len() as f64;
    let m = draws.iter().sum::<f64>() / n;
    let v = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    if v <= 0.0 {
        return f64::INFINITY;
    }
    (m * (1.0 - m) / v - 1.0).max(0.0)
}

fn gaussian_draws(mean: &[f64], cov: &DMatrix<f64>, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let l = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("prior covariance is not positive definite"))?
        .l();
    let mut r = rng::stream(seed, Domain::Final, [0xe55, 0, 0]);
    Ok((0..n)
        .map(|_| {
            let z = DVector::<f64>::from_fn(mean.len(), |_, _| r.sample(StandardNormal));
            let d = &l * z;
            mean.iter().zip(d.iter()).map(|(a, b)| a + b).collect()
        })
        .collect())
}

/// Prior effective sample size per dose by Beta moment matching on prior
/// draws of each dose's toxicity summary.
pub fn ess_diagnostic(config: &DesignConfig, doses: &DoseGrid, trial: &TrialConfig, seed: u64) -> Result<Vec<f64>> {
    let j = doses.len();
    let per_dose: Vec<Vec<f64>> = match config {
        DesignConfig::TiteCrm(c) => {
            let mut r = rng::stream(seed, Domain::Final, [0xe55, 1, 0]);
            let b: Vec<f64> = (0..ESS_DRAWS).map(|_| c.sigma2.sqrt() * r.sample::<f64, _>(StandardNormal)).collect();
            c.skeleton.iter().map(|&s| b.iter().map(|&b| s.powf(b.exp())).collect()).collect()
        }
        DesignConfig::TiteCrm2(c) => {
            let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![c.sigma2_a0, c.sigma2_loga1]));
            let draws = gaussian_draws(&[c.mu_a0, c.mu_loga1], &cov, ESS_DRAWS, seed)?;
            doses.values().iter().map(|&d| draws.iter().map(|r| expit(r[0] + r[1].exp() * d)).collect()).collect()
        }
        DesignConfig::Icsdp(c) => {
            let f = icsdp::fit(c, &TrialState::new(), doses, trial.cycles)?;
            let draws = gaussian_draws(&f.coef, &f.cov, ESS_DRAWS, seed)?;
            let risks: Vec<Vec<f64>> = draws.iter().map(|r| icsdp::cumulative_risk(r, doses, trial.cycles)).collect();
            (0..j).map(|k| risks.iter().map(|r| r[k]).collect()).collect()
        }
        DesignConfig::Pomm(c) => {
            let f = pomm::prior_logistic_fit(c, doses)?;
            let draws = gaussian_draws(&f.coef, &f.cov, ESS_DRAWS, seed)?;
            doses.values().iter().map(|&d| draws.iter().map(|r| expit(r[0] + r[1] * d)).collect()).collect()
        }
        DesignConfig::Nttp(c) => {
            let cov = DMatrix::from_diagonal(&DVector::from_vec(c.prior.var.to_vec()));
            let draws = gaussian_draws(&c.prior.mean, &cov, ESS_DRAWS, seed)?;
            let scores: Vec<Vec<f64>> = draws.iter().map(|r| nttp::predicted_scores(r, doses)).collect();
            (0..j).map(|k| scores.iter().map(|r| r[k]).collect()).collect()
        }
        DesignConfig::TiteBoin(c) | DesignConfig::TiteMtpi2(c) | DesignConfig::RMtpi2(c) => {
            return Ok(vec![c.prior_alpha + c.prior_beta; j]);
        }
    };
    Ok(per_dose.iter().map(|d| moment_ess(d)).collect())
}

/// A grid bracketing the default hyper-parameters of each design. The
/// defaults are always the first point.
pub fn default_grid(kind: DesignKind, setting: u8) -> Vec<DesignConfig> {
    let base = DesignConfig::defaults(kind, setting);
    let mut grid = vec![base.clone()];
    match base {
        DesignConfig::TiteCrm(c) => {
            for top in [0.25, 0.30, 0.35] {
                for sigma2 in [0.5, 1.0, 2.0] {
                    let skeleton = (0..6).map(|k| 0.05 + (top - 0.05) * k as f64 / 5.0).collect();
                    grid.push(DesignConfig::TiteCrm(crate::designs::TiteCrmConfig { skeleton, sigma2, ..c.clone() }));
                }
            }
        }
        DesignConfig::TiteCrm2(c) => {
            for slope in [0.1f64, 0.2, 0.4] {
                for prec in [0.3, 1.0] {
                    grid.push(DesignConfig::TiteCrm2(crate::designs::TiteCrm2Config {
                        mu_loga1: slope.ln(),
                        sigma2_a0: 1.0 / prec,
                        sigma2_loga1: 1.0 / prec,
                        ..c.clone()
                    }));
                }
            }
        }
        DesignConfig::Icsdp(c) => {
            for pi_star_j in [0.3, 0.4, 0.5] {
                for n0 in [2.0, 4.0, 6.0] {
                    grid.push(DesignConfig::Icsdp(crate::designs::IcsdpConfig { pi_star_j, n0, ..c.clone() }));
                }
            }
        }
        DesignConfig::Pomm(c) => {
            for n0 in [1.0, 2.0, 4.0] {
                grid.push(DesignConfig::Pomm(crate::designs::PommConfig { n0, ..c.clone() }));
            }
        }
        DesignConfig::Nttp(c) => {
            for (b0, b1) in [(0.05, 0.1), (0.1, 0.5), (0.05, 0.3)] {
                for v in [10.0, 100.0] {
                    let mut n = c.clone();
                    n.prior.mean = [b0, b1, 0.0];
                    n.prior.var = [v, v, 10.0];
                    grid.push(DesignConfig::Nttp(n));
                }
            }
        }
        DesignConfig::TiteBoin(c) => {
            for (a, b) in [(0.1, 0.9), (0.5, 0.5), (1.0, 1.0)] {
                grid.push(DesignConfig::TiteBoin(IntervalConfig { prior_alpha: a, prior_beta: b, ..c.clone() }));
            }
        }
        DesignConfig::TiteMtpi2(c) | DesignConfig::RMtpi2(c) => {
            for (a, b) in [(1.0, 1.0), (0.5, 0.5), (0.3, 0.7)] {
                let cfg = IntervalConfig { prior_alpha: a, prior_beta: b, ..c.clone() };
                grid.push(if kind == DesignKind::TiteMtpi2 {
                    DesignConfig::TiteMtpi2(cfg)
                } else {
                    DesignConfig::RMtpi2(cfg)
                });
            }
        }
    }
    let mut unique: Vec<DesignConfig> = Vec::new();
    for g in grid {
        if !unique.contains(&g) {
            unique.push(g);
        }
    }
    unique
}
