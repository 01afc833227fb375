//! Enforcement and stopping rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::beta::beta_tail;
use crate::trial::{DoseGrid, TrialConfig, TrialState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    SufficientInformation,
    LowestUnsafe,
    HighestVerySafe,
    Precision,
    HardSafety,
    MaxPatients,
}

impl StopReason {
    pub const ALL: [StopReason; 6] = [
        StopReason::SufficientInformation,
        StopReason::LowestUnsafe,
        StopReason::HighestVerySafe,
        StopReason::Precision,
        StopReason::HardSafety,
        StopReason::MaxPatients,
    ];

    pub fn label(self) -> &'static str {
        match self {
            StopReason::SufficientInformation => "sufficient_information",
            StopReason::LowestUnsafe => "lowest_unsafe",
            StopReason::HighestVerySafe => "highest_very_safe",
            StopReason::Precision => "precision",
            StopReason::HardSafety => "hard_safety",
            StopReason::MaxPatients => "max_patients",
        }
    }

    /// Stops that end the trial without a recommended dose.
    pub fn is_unsafe_stop(self) -> bool {
        matches!(self, StopReason::LowestUnsafe | StopReason::HardSafety)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuleConfig {
    /// 1: sufficient information, maximum patients and the k-fold limit only.
    /// 2: all rules.
    pub setting: u8,
    pub hard_safety_threshold: f64,
    pub unsafe_threshold: f64,
    pub safe_threshold: f64,
    pub cv_threshold: f64,
    pub cv_min_patients: usize,
    pub sufficient_n: usize,
    pub kfold: f64,
    pub tau_cycle1: f64,
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self::setting(1)
    }
}

impl RuleConfig {
    pub fn setting(setting: u8) -> Self {
        Self {
            setting,
            hard_safety_threshold: 0.95,
            unsafe_threshold: 0.80,
            safe_threshold: 0.80,
            cv_threshold: 0.30,
            cv_min_patients: 9,
            sufficient_n: 9,
            kfold: 2.0,
            tau_cycle1: 0.3,
        }
    }

    pub fn full(&self) -> bool {
        self.setting >= 2
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.setting) {
            return Err(Error::invalid(format!("rules.setting must be 1 or 2, got {}", self.setting)));
        }
        for (name, v) in [
            ("hard_safety_threshold", self.hard_safety_threshold),
            ("unsafe_threshold", self.unsafe_threshold),
            ("safe_threshold", self.safe_threshold),
            ("cv_threshold", self.cv_threshold),
            ("tau_cycle1", self.tau_cycle1),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid(format!("rules.{name} must lie in (0, 1), got {v}")));
            }
        }
        if !(self.kfold >= 1.0) {
            return Err(Error::invalid("rules.kfold must be at least 1"));
        }
        if self.sufficient_n == 0 {
            return Err(Error::invalid("rules.sufficient_n must be positive"));
        }
        Ok(())
    }
}

/// Posterior P(p1 > tau_cycle1) under Beta(1,1) exceeds the hard-safety threshold.
pub fn hard_safety_excluded(m_dlt_cycle1: usize, n_cycle1: usize, cfg: &RuleConfig) -> bool {
    debug_assert!(m_dlt_cycle1 <= n_cycle1);
    let (a, b) = (1.0 + m_dlt_cycle1 as f64, 1.0 + (n_cycle1 - m_dlt_cycle1) as f64);
    beta_tail(a, b, cfg.tau_cycle1) > cfg.hard_safety_threshold
}

/// Lowest level currently failing the hard-safety check, merged with any
/// existing exclusion. Always `None` outside setting 2.
pub fn update_exclusions(state: &TrialState, doses: usize, cfg: &RuleConfig) -> Option<usize> {
    if !cfg.full() {
        return None;
    }
    let found = (0..doses).find(|&j| {
        let (m, n) = state.cycle1_counts(j);
        n > 0 && hard_safety_excluded(m, n, cfg)
    });
    match (found, state.excluded_from) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

/// Highest level at or below `candidate` within `kfold` times the highest
/// experimented dose.
pub fn kfold_filter(candidate: usize, state: &TrialState, doses: &DoseGrid, cfg: &RuleConfig) -> usize {
    let Some(top) = state.highest_experimented() else {
        return candidate.min(doses.len() - 1);
    };
    let limit = cfg.kfold * doses.value(top) * (1.0 + 1e-12);
    let mut level = candidate.min(doses.len() - 1);
    while level > 0 && doses.value(level) > limit {
        level -= 1;
    }
    level
}

/// Per-dose P(p1 > tau_cycle1 | data); P(p1 <= tau_cycle1) is the complement.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyProbs {
    pub p_exceeds: Vec<f64>,
}

impl SafetyProbs {
    /// Beta(1,1)-binomial on cycle-1 data at every dose.
    pub fn beta_binomial(state: &TrialState, doses: usize, tau_cycle1: f64) -> Self {
        let p_exceeds = (0..doses)
            .map(|j| {
                let (m, n) = state.cycle1_counts(j);
                beta_tail(1.0 + m as f64, 1.0 + (n - m) as f64, tau_cycle1)
            })
            .collect();
        Self { p_exceeds }
    }
}

/// Everything a stopping check needs beyond the trial history.
#[derive(Debug, Clone, Default)]
pub struct StopInputs<'a> {
    pub safety: Option<&'a SafetyProbs>,
    pub cv: Option<f64>,
}

pub fn evaluate_stopping(
    state: &TrialState,
    candidate: usize,
    inputs: &StopInputs<'_>,
    doses: usize,
    trial: &TrialConfig,
    cfg: &RuleConfig,
) -> Vec<StopReason> {
    let mut out = Vec::new();
    if state.treated_at(candidate) >= cfg.sufficient_n {
        out.push(StopReason::SufficientInformation);
    }
    if cfg.full() {
        if let Some(s) = inputs.safety {
            if state.treated_at(0) >= trial.cohort_size && s.p_exceeds[0] > cfg.unsafe_threshold {
                out.push(StopReason::LowestUnsafe);
            }
            let top = doses - 1;
            if state.treated_at(top) >= trial.cohort_size && 1.0 - s.p_exceeds[top] > cfg.safe_threshold {
                out.push(StopReason::HighestVerySafe);
            }
        }
        if let Some(cv) = inputs.cv {
            let with_data = state.patients.iter().filter(|p| p.cycles_observed() >= 1).count();
            if cv < cfg.cv_threshold && with_data >= cfg.cv_min_patients {
                out.push(StopReason::Precision);
            }
        }
        if state.excluded_from == Some(0) {
            out.push(StopReason::HardSafety);
        }
    }
    if state.n_patients() >= trial.max_patients {
        out.push(StopReason::MaxPatients);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trial::CycleOutcome;
    use proptest::prelude::*;

    fn cohort(state: &TrialState, level: usize, dlts: usize, cycles: usize) -> TrialState {
        let s = state.enroll_cohort(level, &[0.5; 3]).unwrap();
        let first = s.n_patients() - 3;
        let outcomes: Vec<_> = (0..3)
            .map(|k| (first + k, CycleOutcome::binary(k < dlts)))
            .collect();
        let mut others: Vec<_> = s
            .on_study(cycles)
            .filter(|p| p.id < first)
            .map(|p| (p.id, CycleOutcome::binary(false)))
            .collect();
        others.extend(outcomes);
        s.record_cycle_outcomes(&others, cycles).unwrap()
    }

    #[test]
    fn hard_safety_boundaries() {
        let cfg = RuleConfig::setting(2);
        for (m, n) in [(3, 3), (4, 6), (5, 9)] {
            assert!(hard_safety_excluded(m, n, &cfg), "{m}/{n}");
        }
        for (m, n) in [(2, 3), (3, 6), (4, 9)] {
            assert!(!hard_safety_excluded(m, n, &cfg), "{m}/{n}");
        }
        assert!((beta_tail(4.0, 1.0, 0.3) - 0.9919).abs() < 1e-4);
        assert!((beta_tail(3.0, 2.0, 0.3) - 0.9163).abs() < 1e-4);
    }

    #[test]
    fn kfold_examples() {
        let doses = DoseGrid::reference();
        let cfg = RuleConfig::setting(1);
        let s = TrialState::new().enroll_cohort(0, &[0.5; 3]).unwrap();
        assert_eq!(kfold_filter(2, &s, &doses, &cfg), 1);
        assert_eq!(kfold_filter(0, &s, &doses, &cfg), 0);
        let s = TrialState::new().enroll_cohort(2, &[0.5; 3]).unwrap();
        assert_eq!(kfold_filter(5, &s, &doses, &cfg), 5);
        assert_eq!(kfold_filter(1, &s, &doses, &cfg), 1);
    }

    #[test]
    fn sufficient_information_and_max_patients() {
        let trial = TrialConfig::default();
        let cfg = RuleConfig::setting(1);
        let mut s = TrialState::new();
        for _ in 0..3 {
            s = cohort(&s, 0, 0, 3);
        }
        let r = evaluate_stopping(&s, 0, &StopInputs::default(), 6, &trial, &cfg);
        assert_eq!(r, vec![StopReason::SufficientInformation]);
        assert!(evaluate_stopping(&s, 1, &StopInputs::default(), 6, &trial, &cfg).is_empty());
    }

    #[test]
    fn hard_safety_stop_in_setting_two() {
        let trial = TrialConfig::default();
        let cfg = RuleConfig::setting(2);
        let s = cohort(&TrialState::new(), 0, 3, 3);
        let excl = update_exclusions(&s, 6, &cfg);
        assert_eq!(excl, Some(0));
        let s = s.exclude_from(0);
        let safety = SafetyProbs::beta_binomial(&s, 6, cfg.tau_cycle1);
        let r = evaluate_stopping(&s, 0, &StopInputs { safety: Some(&safety), cv: None }, 6, &trial, &cfg);
        assert!(r.contains(&StopReason::HardSafety));
        assert!(r.contains(&StopReason::LowestUnsafe));
        assert_eq!(update_exclusions(&s, 6, &RuleConfig::setting(1)), None);
    }

    #[test]
    fn setting_one_ignores_precision() {
        let trial = TrialConfig::default();
        let mut s = TrialState::new();
        for _ in 0..4 {
            s = cohort(&s, 0, 0, 3);
        }
        let inputs = StopInputs { safety: None, cv: Some(0.1) };
        let r1 = evaluate_stopping(&s, 1, &inputs, 6, &trial, &RuleConfig::setting(1));
        assert!(r1.is_empty());
        let r2 = evaluate_stopping(&s, 1, &inputs, 6, &trial, &RuleConfig::setting(2));
        assert_eq!(r2, vec![StopReason::Precision]);
    }

    #[test]
    fn rules_two_and_three_wait_for_a_cohort() {
        let trial = TrialConfig::default();
        let cfg = RuleConfig::setting(2);
        let safety = SafetyProbs { p_exceeds: vec![0.99, 0.5, 0.5, 0.5, 0.5, 0.01] };
        let inputs = StopInputs { safety: Some(&safety), cv: None };
        let r = evaluate_stopping(&TrialState::new(), 0, &inputs, 6, &trial, &cfg);
        assert!(r.is_empty());
    }

    proptest! {
        #[test]
        fn setting_one_only_emits_two_reasons(
            dlts in proptest::collection::vec(0usize..=3, 1..8),
            levels in proptest::collection::vec(0usize..6, 8),
            cv in 0.0f64..1.0,
            pe in proptest::collection::vec(0.0f64..1.0, 6),
        ) {
            let trial = TrialConfig::default();
            let cfg = RuleConfig::setting(1);
            let mut s = TrialState::new();
            for (k, d) in dlts.iter().enumerate() {
                s = cohort(&s, levels[k], *d, 3);
            }
            let safety = SafetyProbs { p_exceeds: pe };
            let r = evaluate_stopping(&s, levels[0], &StopInputs { safety: Some(&safety), cv: Some(cv) }, 6, &trial, &cfg);
            prop_assert!(r.iter().all(|x| matches!(x, StopReason::SufficientInformation | StopReason::MaxPatients)));
            prop_assert_eq!(update_exclusions(&s, 6, &cfg), None);
        }
    }
}
