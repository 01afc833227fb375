//! Dose-escalation engines. Each engine reads a trial history and proposes
//! the next dose, and produces a final recommendation once follow-up ends.

pub mod assisted;
pub mod crm;
pub mod crm2;
pub mod icsdp;
pub mod nttp;
pub mod pomm;
pub mod tables;

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patient::argmin_distance;
use crate::rules::{RuleConfig, SafetyProbs};
use crate::trial::{DoseGrid, TrialConfig, TrialState};

pub use assisted::IntervalConfig;
pub use crm::TiteCrmConfig;
pub use crm2::TiteCrm2Config;
pub use icsdp::IcsdpConfig;
pub use nttp::NttpConfig;
pub use pomm::PommConfig;
pub use tables::DecisionTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignKind {
    TiteCrm,
    TiteCrm2,
    Icsdp,
    Pomm,
    Nttp,
    TiteBoin,
    TiteMtpi2,
    RMtpi2,
}

impl DesignKind {
    pub const ALL: [DesignKind; 8] = [
        DesignKind::TiteCrm,
        DesignKind::TiteCrm2,
        DesignKind::Icsdp,
        DesignKind::Pomm,
        DesignKind::Nttp,
        DesignKind::TiteBoin,
        DesignKind::TiteMtpi2,
        DesignKind::RMtpi2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DesignKind::TiteCrm => "tite-crm",
            DesignKind::TiteCrm2 => "tite-crm2",
            DesignKind::Icsdp => "icsdp",
            DesignKind::Pomm => "pomm",
            DesignKind::Nttp => "nttp",
            DesignKind::TiteBoin => "tite-boin",
            DesignKind::TiteMtpi2 => "tite-mtpi2",
            DesignKind::RMtpi2 => "r-mtpi2",
        }
    }

    pub fn is_model_assisted(self) -> bool {
        matches!(self, DesignKind::TiteBoin | DesignKind::TiteMtpi2 | DesignKind::RMtpi2)
    }
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DesignKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DesignKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown design `{s}`")))
    }
}

/// Hyper-parameters for one engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DesignConfig {
    TiteCrm(TiteCrmConfig),
    TiteCrm2(TiteCrm2Config),
    Icsdp(IcsdpConfig),
    Pomm(PommConfig),
    Nttp(NttpConfig),
    TiteBoin(IntervalConfig),
    TiteMtpi2(IntervalConfig),
    RMtpi2(IntervalConfig),
}

impl DesignConfig {
    /// Calibrated defaults for rule setting 1 or 2.
    pub fn defaults(kind: DesignKind, setting: u8) -> Self {
        match kind {
            DesignKind::TiteCrm => DesignConfig::TiteCrm(TiteCrmConfig::default()),
            DesignKind::TiteCrm2 => DesignConfig::TiteCrm2(TiteCrm2Config::default()),
            DesignKind::Icsdp => DesignConfig::Icsdp(IcsdpConfig::for_setting(setting)),
            DesignKind::Pomm => DesignConfig::Pomm(PommConfig::default()),
            DesignKind::Nttp => DesignConfig::Nttp(NttpConfig::for_setting(setting)),
            DesignKind::TiteBoin => DesignConfig::TiteBoin(IntervalConfig::boin(setting)),
            DesignKind::TiteMtpi2 => DesignConfig::TiteMtpi2(IntervalConfig::mtpi2()),
            DesignKind::RMtpi2 => DesignConfig::RMtpi2(IntervalConfig::mtpi2()),
        }
    }

    pub fn kind(&self) -> DesignKind {
        match self {
            DesignConfig::TiteCrm(_) => DesignKind::TiteCrm,
            DesignConfig::TiteCrm2(_) => DesignKind::TiteCrm2,
            DesignConfig::Icsdp(_) => DesignKind::Icsdp,
            DesignConfig::Pomm(_) => DesignKind::Pomm,
            DesignConfig::Nttp(_) => DesignKind::Nttp,
            DesignConfig::TiteBoin(_) => DesignKind::TiteBoin,
            DesignConfig::TiteMtpi2(_) => DesignKind::TiteMtpi2,
            DesignConfig::RMtpi2(_) => DesignKind::RMtpi2,
        }
    }

    pub fn validate(&self, doses: &DoseGrid, trial: &TrialConfig) -> Result<()> {
        match self {
            DesignConfig::TiteCrm(c) => c.validate(doses.len()),
            DesignConfig::TiteCrm2(c) => c.validate(),
            DesignConfig::Icsdp(c) => c.validate(),
            DesignConfig::Pomm(c) => c.validate(doses.len(), trial),
            DesignConfig::Nttp(c) => c.validate(),
            DesignConfig::TiteBoin(c) | DesignConfig::TiteMtpi2(c) | DesignConfig::RMtpi2(c) => {
                c.validate(trial.target)
            }
        }
    }
}

/// Everything an engine may read at a decision point.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub state: &'a TrialState,
    pub doses: &'a DoseGrid,
    pub trial: &'a TrialConfig,
    pub rules: &'a RuleConfig,
    /// Seed for any sampling done by this decision.
    pub seed: u64,
}

impl DecisionContext<'_> {
    /// Quantities for stopping rules 2-4 are only needed in setting 2.
    pub fn wants_stopping_inputs(&self) -> bool {
        self.rules.full()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Proposal {
    Assign(usize),
    /// Hold accrual for this cycle.
    Suspend,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub proposal: Proposal,
    pub safety: Option<SafetyProbs>,
    pub cv: Option<f64>,
    /// Key posterior summaries, for reports.
    pub summaries: Vec<(String, f64)>,
    /// Set when the engine fell back to a simpler rule.
    pub fallback: Option<String>,
}

impl Decision {
    pub fn assign(level: usize) -> Self {
        Self {
            proposal: Proposal::Assign(level),
            safety: None,
            cv: None,
            summaries: Vec::new(),
            fallback: None,
        }
    }

    pub fn suspend() -> Self {
        Self {
            proposal: Proposal::Suspend,
            ..Self::assign(0)
        }
    }
}

/// One design, ready to run. Decision tables for the interval designs are
/// built on first use and shared by clones.
#[derive(Debug, Clone)]
pub struct Engine {
    config: DesignConfig,
    table: Arc<OnceLock<Result<DecisionTable>>>,
}

impl Engine {
    pub fn new(config: DesignConfig) -> Self {
        Self {
            config,
            table: Arc::new(OnceLock::new()),
        }
    }

    pub fn config(&self) -> &DesignConfig {
        &self.config
    }

    pub fn kind(&self) -> DesignKind {
        self.config.kind()
    }

    /// The pre-computed decision table of an interval design.
    pub fn table(&self, trial: &TrialConfig) -> Result<Option<&DecisionTable>> {
        let cfg = match &self.config {
            DesignConfig::TiteBoin(c) | DesignConfig::TiteMtpi2(c) | DesignConfig::RMtpi2(c) => c,
            _ => return Ok(None),
        };
        let kind = self.kind();
        match self
            .table
            .get_or_init(|| DecisionTable::build(kind, cfg, trial, trial.max_patients))
        {
            Ok(t) => Ok(Some(t)),
            Err(e) => Err(e.clone()),
        }
    }

    pub fn decide(&self, ctx: &DecisionContext<'_>) -> Result<Decision> {
        if ctx.state.patients.is_empty() {
            return Ok(Decision::assign(0));
        }
        match &self.config {
            DesignConfig::TiteCrm(c) => crm::decide(c, ctx),
            DesignConfig::TiteCrm2(c) => crm2::decide(c, ctx),
            DesignConfig::Icsdp(c) => icsdp::decide(c, ctx),
            DesignConfig::Pomm(c) => pomm::decide(c, ctx),
            DesignConfig::Nttp(c) => nttp::decide(c, ctx),
            DesignConfig::TiteBoin(c) | DesignConfig::TiteMtpi2(c) | DesignConfig::RMtpi2(c) => {
                let table = self.table(ctx.trial)?.expect("interval design has a table");
                assisted::decide(self.kind(), c, table, ctx)
            }
        }
    }

    /// Recommendation after all follow-up is complete; `None` if no dose
    /// can be recommended.
    pub fn final_recommendation(&self, ctx: &DecisionContext<'_>) -> Result<Option<usize>> {
        let state = ctx.state;
        let Some(top) = state.highest_experimented() else {
            return Ok(None);
        };
        let Some(allowed) = state.highest_allowed(ctx.doses.len()) else {
            return Ok(None);
        };
        let limit = top.min(allowed);
        let estimates = match &self.config {
            DesignConfig::TiteCrm(c) => crm::final_estimates(c, ctx)?,
            DesignConfig::TiteCrm2(c) => crm2::final_estimates(c, ctx)?,
            DesignConfig::Icsdp(c) => icsdp::final_estimates(c, ctx)?,
            DesignConfig::Pomm(c) => pomm::final_estimates(c, ctx)?,
            DesignConfig::Nttp(c) => nttp::final_estimates(c, ctx)?,
            DesignConfig::TiteBoin(c) | DesignConfig::TiteMtpi2(c) | DesignConfig::RMtpi2(c) => {
                return Ok(assisted::final_mtd(
                    &assisted::per_dose_counts(state, ctx.doses.len()),
                    c,
                    ctx.trial.target,
                    state.excluded_from,
                ));
            }
        };
        let (values, target) = estimates;
        Ok(Some(argmin_distance(&values[..=limit], target)))
    }
}

/// Patient-level binary data for the time-to-event weighted likelihoods:
/// (level, dlt, weight) with weight u/S for pending patients and 1 on DLT.
pub(crate) fn weighted_binary(state: &TrialState, cycles: usize) -> Vec<(usize, bool, f64)> {
    state
        .patients
        .iter()
        .filter(|p| p.cycles_observed() > 0)
        .map(|p| {
            let dlt = p.had_dlt();
            let w = if dlt { 1.0 } else { (p.cycles_observed() as f64 / cycles as f64).min(1.0) };
            (p.dose_level, dlt, w)
        })
        .collect()
}

/// Outcomes under a one-cycle follow-up window: every patient with an
/// observed cycle has full weight, and any DLT seen so far counts.
pub(crate) fn one_cycle_window(state: &TrialState) -> Vec<(usize, bool, f64)> {
    state
        .patients
        .iter()
        .filter(|p| p.cycles_observed() > 0)
        .map(|p| (p.dose_level, p.had_dlt(), 1.0))
        .collect()
}

/// The initial escalation phase shared by both CRM variants: one level per
/// cycle until the first DLT anywhere.
pub(crate) fn initial_phase(state: &TrialState, doses: usize) -> Option<usize> {
    if state.any_dlt() {
        return None;
    }
    let current = state.current_dose.unwrap_or(0);
    Some((current + 1).min(doses - 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in DesignKind::ALL {
            assert_eq!(k.name().parse::<DesignKind>().unwrap(), k);
        }
        assert!("crm".parse::<DesignKind>().is_err());
    }

    #[test]
    fn config_serde_is_tagged() {
        for k in DesignKind::ALL {
            let c = DesignConfig::defaults(k, 1);
            let json = serde_json::to_string(&c).unwrap();
            assert!(json.contains(k.name()), "{json}");
            let back: DesignConfig = serde_json::from_str(&json).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn every_engine_starts_at_lowest_dose() {
        let doses = DoseGrid::reference();
        let trial = TrialConfig::default();
        let state = TrialState::new();
        for setting in [1, 2] {
            let rules = RuleConfig::setting(setting);
            for k in DesignKind::ALL {
                let e = Engine::new(DesignConfig::defaults(k, setting));
                let ctx = DecisionContext { state: &state, doses: &doses, trial: &trial, rules: &rules, seed: 1 };
                assert_eq!(e.decide(&ctx).unwrap().proposal, Proposal::Assign(0), "{k}");
            }
        }
    }
}
