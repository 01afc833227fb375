//! Interval (model-assisted) designs with time-to-event imputation:
//! TITE-BOIN, TITE-mTPI2 and R-mTPI2.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::beta::{beta_interval_mass, beta_tail};
use crate::kernels::pava::pava_isotonic;
use crate::rules::SafetyProbs;
use crate::trial::{TrialConfig, TrialState};

use super::tables::{DecisionTable, TableKey};
use super::{Decision, DecisionContext, DesignKind, Proposal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntervalConfig {
    pub tau1: f64,
    pub tau2: f64,
    pub prior_alpha: f64,
    pub prior_beta: f64,
    /// Patients consecutively treated at a dose after which R-mTPI2 acts on
    /// complete data alone.
    pub consecutive_cap: usize,
    /// Share of pending patients that blocks escalation.
    pub pending_guard: f64,
    /// A dose with at least three complete patients and
    /// `P(p > target) > elimination_cutoff` under Beta(1, 1) is closed,
    /// with all higher doses, for assignment and final selection.
    pub elimination_cutoff: f64,
}

impl Default for IntervalConfig {
    fn default() -> Self {
        Self::mtpi2()
    }
}

impl IntervalConfig {
    pub fn boin(setting: u8) -> Self {
        let (prior_alpha, prior_beta) = if setting >= 2 { (1.0, 1.0) } else { (0.1, 0.9) };
        Self {
            tau1: 0.3128,
            tau2: 0.5083,
            prior_alpha,
            prior_beta,
            consecutive_cap: 6,
            pending_guard: 1.0 / 3.0,
            elimination_cutoff: 0.95,
        }
    }

    pub fn mtpi2() -> Self {
        Self {
            tau1: 0.3519,
            tau2: 0.5474,
            prior_alpha: 1.0,
            prior_beta: 1.0,
            consecutive_cap: 6,
            pending_guard: 0.5,
            elimination_cutoff: 1.0,
        }
    }

    pub fn validate(&self, target: f64) -> Result<()> {
        if !(0.0 < self.tau1 && self.tau1 < target && target < self.tau2 && self.tau2 < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < tau1 < {target} < tau2 < 1, got ({}, {})",
                self.tau1, self.tau2
            )));
        }
        if !(self.prior_alpha > 0.0 && self.prior_beta > 0.0) {
            return Err(Error::invalid("Beta prior parameters must be positive"));
        }
        if !(self.pending_guard >= 0.0 && self.pending_guard <= 1.0) {
            return Err(Error::invalid("pending_guard must lie in [0, 1]"));
        }
        if !(self.elimination_cutoff > 0.0 && self.elimination_cutoff <= 1.0) {
            return Err(Error::invalid("elimination_cutoff must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    Escalate,
    Stay,
    DeEscalate,
    Suspend,
}

impl Action {
    pub fn label(self) -> &'static str {
        match self {
            Action::Escalate => "escalate",
            Action::Stay => "stay",
            Action::DeEscalate => "de-escalate",
            Action::Suspend => "suspend",
        }
    }
}

/// Data at the current dose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Snapshot {
    /// Patients with a DLT or full follow-up.
    pub n_complete: usize,
    pub m: usize,
    pub n_pending: usize,
    /// Sum of observed cycles over pending patients.
    pub pending_cycles: usize,
}

impl Snapshot {
    pub fn at(state: &TrialState, level: usize, cycles: usize) -> Self {
        let mut s = Snapshot { n_complete: 0, m: 0, n_pending: 0, pending_cycles: 0 };
        for p in state.patients.iter().filter(|p| p.dose_level == level) {
            if p.is_complete(cycles) {
                s.n_complete += 1;
                s.m += p.had_dlt() as usize;
            } else {
                s.n_pending += 1;
                s.pending_cycles += p.cycles_observed();
            }
        }
        s
    }

    pub fn treated(&self) -> usize {
        self.n_complete + self.n_pending
    }

    /// Complete patients plus the follow-up fraction of pending ones.
    pub fn effective_n(&self, cycles: usize) -> f64 {
        self.n_complete as f64 + self.pending_cycles as f64 / cycles as f64
    }
}

/// BOIN escalation and de-escalation boundaries.
pub fn boin_boundaries(tau1: f64, tau2: f64, target: f64) -> (f64, f64) {
    let b = |t: f64| ((1.0 - t) / (1.0 - target)).ln() / (target * (1.0 - t) / (t * (1.0 - target))).ln();
    (b(tau1), b(tau2))
}

pub fn tite_boin_decide(snap: &Snapshot, cfg: &IntervalConfig, target: f64, cycles: usize) -> Action {
    let n_eff = snap.effective_n(cycles);
    if n_eff <= 0.0 {
        return Action::Stay;
    }
    let (lambda_e, lambda_d) = boin_boundaries(cfg.tau1, cfg.tau2, target);
    let p = snap.m as f64 / n_eff;
    if p >= lambda_d {
        Action::DeEscalate
    } else if p <= lambda_e && n_eff + 1e-9 >= cfg.pending_guard * snap.treated() as f64 {
        Action::Escalate
    } else {
        Action::Stay
    }
}

/// Unit-probability-mass keyboard decision with `m` DLTs out of `n`.
pub fn keyboard_decide(n: f64, m: f64, cfg: &IntervalConfig) -> Action {
    let a = cfg.prior_alpha + m;
    let b = cfg.prior_beta + (n - m).max(0.0);
    let width = cfg.tau2 - cfg.tau1;
    let target_mass = beta_interval_mass(a, b, cfg.tau1, cfg.tau2);
    let mut below = 0.0f64;
    let mut hi = cfg.tau1;
    while hi > 0.0 {
        let lo = (hi - width).max(0.0);
        below = below.max(beta_interval_mass(a, b, lo, hi));
        hi = lo;
    }
    let mut above = 0.0f64;
    let mut lo = cfg.tau2;
    while lo < 1.0 {
        let hi = (lo + width).min(1.0);
        above = above.max(beta_interval_mass(a, b, lo, hi));
        lo = hi;
    }
    if target_mass >= below && target_mass >= above {
        Action::Stay
    } else if above >= below {
        Action::DeEscalate
    } else {
        Action::Escalate
    }
}

pub fn tite_mtpi2_decide(snap: &Snapshot, cfg: &IntervalConfig, cycles: usize) -> Action {
    let action = keyboard_decide(snap.effective_n(cycles), snap.m as f64, cfg);
    if action == Action::Escalate && snap.n_pending as f64 > cfg.pending_guard * snap.treated() as f64 {
        Action::Suspend
    } else {
        action
    }
}

pub fn rmtpi2_decide(snap: &Snapshot, cfg: &IntervalConfig, at_cap: bool) -> Action {
    let n = snap.treated() as f64;
    let m = snap.m as f64;
    let best = keyboard_decide(n, m, cfg);
    let worst = keyboard_decide(n, m + snap.n_pending as f64, cfg);
    if best == worst {
        best
    } else if at_cap {
        keyboard_decide(snap.n_complete as f64, m, cfg)
    } else {
        Action::Suspend
    }
}

/// Live evaluation of one design's rule.
pub fn evaluate(kind: DesignKind, cfg: &IntervalConfig, trial: &TrialConfig, key: &TableKey) -> Action {
    let snap = key.snapshot();
    match kind {
        DesignKind::TiteBoin => tite_boin_decide(&snap, cfg, trial.target, trial.cycles),
        DesignKind::TiteMtpi2 => tite_mtpi2_decide(&snap, cfg, trial.cycles),
        DesignKind::RMtpi2 => rmtpi2_decide(&snap, cfg, key.at_cap),
        other => unreachable!("{other} is not an interval design"),
    }
}

pub fn table_key(kind: DesignKind, state: &TrialState, cfg: &IntervalConfig, trial: &TrialConfig) -> TableKey {
    let level = state.current_dose.unwrap_or(0);
    let snap = Snapshot::at(state, level, trial.cycles);
    let at_cap = kind == DesignKind::RMtpi2 && state.consecutive_at_current * trial.cohort_size >= cfg.consecutive_cap;
    TableKey::new(&snap, at_cap)
}

pub fn decide(kind: DesignKind, cfg: &IntervalConfig, table: &DecisionTable, ctx: &DecisionContext<'_>) -> Result<Decision> {
    let key = table_key(kind, ctx.state, cfg, ctx.trial);
    let action = table.lookup(&key).unwrap_or_else(|| evaluate(kind, cfg, ctx.trial, &key));
    let current = ctx.state.current_dose.unwrap_or(0);
    let top = ctx.doses.len() - 1;
    let ceiling = eliminated_from(&complete_counts(ctx.state, ctx.doses.len(), ctx.trial.cycles), cfg, ctx.trial.target)
        .max(1)
        - 1;
    let level = |a: Action| match a {
        Action::Escalate => Some((current + 1).min(top).min(ceiling)),
        Action::Stay => Some(current.min(ceiling)),
        Action::DeEscalate => Some(current.saturating_sub(1).min(ceiling)),
        Action::Suspend => None,
    };
    let proposal = match level(action) {
        Some(l) => Proposal::Assign(l),
        None if current > ceiling => Proposal::Assign(ceiling),
        // no need to wait when every pending outcome leads to the same dose
        None => match suspension_outcomes(kind, cfg, &key.snapshot(), ctx.trial.cycles) {
            Some((a, b)) if level(a) == level(b) => Proposal::Assign(level(a).expect("not a suspension")),
            _ => Proposal::Suspend,
        },
    };
    let mut decision = Decision::assign(0);
    decision.proposal = proposal;
    decision.summaries.push(("effective_n".into(), key.snapshot().effective_n(ctx.trial.cycles)));
    if ctx.wants_stopping_inputs() {
        decision.safety = Some(SafetyProbs::beta_binomial(ctx.state, ctx.doses.len(), ctx.rules.tau_cycle1));
    }
    Ok(decision)
}

/// The two actions a suspension waits to choose between.
fn suspension_outcomes(kind: DesignKind, cfg: &IntervalConfig, snap: &Snapshot, cycles: usize) -> Option<(Action, Action)> {
    match kind {
        DesignKind::TiteMtpi2 => (keyboard_decide(snap.effective_n(cycles), snap.m as f64, cfg) == Action::Escalate)
            .then_some((Action::Escalate, Action::Stay)),
        DesignKind::RMtpi2 => {
            let n = snap.treated() as f64;
            let m = snap.m as f64;
            Some((keyboard_decide(n, m, cfg), keyboard_decide(n, m + snap.n_pending as f64, cfg)))
        }
        _ => None,
    }
}

/// (complete, DLTs) per dose, counting only patients with a DLT or full
/// follow-up.
pub fn complete_counts(state: &TrialState, doses: usize, cycles: usize) -> Vec<(usize, usize)> {
    let mut out = vec![(0, 0); doses];
    for p in state.patients.iter().filter(|p| p.is_complete(cycles)) {
        out[p.dose_level].0 += 1;
        out[p.dose_level].1 += p.had_dlt() as usize;
    }
    out
}

/// Lowest dose with at least three patients and `P(p > target)` above the
/// elimination cutoff under Beta(1, 1); `counts.len()` when none.
pub fn eliminated_from(counts: &[(usize, usize)], cfg: &IntervalConfig, target: f64) -> usize {
    counts
        .iter()
        .position(|&(n, m)| n >= 3 && beta_tail(1.0 + m as f64, 1.0 + (n - m) as f64, target) > cfg.elimination_cutoff)
        .unwrap_or(counts.len())
}

/// (treated, DLTs) per dose.
pub fn per_dose_counts(state: &TrialState, doses: usize) -> Vec<(usize, usize)> {
    let mut out = vec![(0, 0); doses];
    for p in &state.patients {
        out[p.dose_level].0 += 1;
        out[p.dose_level].1 += p.had_dlt() as usize;
    }
    out
}

/// Isotonic estimate over treated, non-excluded doses; the dose closest to
/// the target wins. Pooled doses are separated by a tiny increasing offset,
/// so a tie below the target goes to the higher dose and above it to the
/// lower one.
pub fn final_mtd(counts: &[(usize, usize)], cfg: &IntervalConfig, target: f64, excluded_from: Option<usize>) -> Option<usize> {
    let eliminated = eliminated_from(counts, cfg, target);
    // the lowest dose stays selectable; stopping for safety is left to the rules
    let limit = excluded_from.unwrap_or(counts.len()).min(eliminated.max(1)).min(counts.len());
    let levels: Vec<usize> = (0..limit).filter(|&j| counts[j].0 > 0).collect();
    if levels.is_empty() {
        return None;
    }
    let ab = cfg.prior_alpha + cfg.prior_beta;
    let raw: Vec<f64> = levels
        .iter()
        .map(|&j| (cfg.prior_alpha + counts[j].1 as f64) / (ab + counts[j].0 as f64))
        .collect();
    let w: Vec<f64> = levels.iter().map(|&j| counts[j].0 as f64 + ab).collect();
    let fitted: Vec<f64> = pava_isotonic(&raw, &w)
        .expect("positive weights")
        .iter()
        .enumerate()
        .map(|(i, p)| p + 1e-10 * i as f64)
        .collect();
    let mut best = 0;
    for i in 1..levels.len() {
        if (fitted[i] - target).abs() < (fitted[best] - target).abs() {
            best = i;
        }
    }
    Some(levels[best])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::beta::beta_cdf;
    use proptest::prelude::*;

    #[test]
    fn boin_boundaries_for_reference_target() {
        let (e, d) = boin_boundaries(0.3128, 0.5083, 0.391);
        assert!((e - 0.3512).abs() < 1e-4, "{e}");
        assert!((d - 0.4492).abs() < 1e-4, "{d}");
    }

    #[test]
    fn boin_guard_blocks_escalation_only() {
        let cfg = IntervalConfig::boin(1);
        let pending = Snapshot { n_complete: 0, m: 0, n_pending: 3, pending_cycles: 1 };
        assert_eq!(tite_boin_decide(&pending, &cfg, 0.391, 3), Action::Stay);
        let ok = Snapshot { n_complete: 3, m: 0, n_pending: 3, pending_cycles: 0 };
        assert_eq!(tite_boin_decide(&ok, &cfg, 0.391, 3), Action::Escalate);
        let toxic = Snapshot { n_complete: 1, m: 1, n_pending: 5, pending_cycles: 0 };
        assert_eq!(tite_boin_decide(&toxic, &cfg, 0.391, 3), Action::DeEscalate);
    }

    #[test]
    fn keyboard_matches_hand_computed_masses() {
        let cfg = IntervalConfig::mtpi2();
        // 0 of 3: Beta(1, 4) puts most mass near zero
        assert_eq!(keyboard_decide(3.0, 0.0, &cfg), Action::Escalate);
        // 3 of 3: Beta(4, 1)
        assert_eq!(keyboard_decide(3.0, 3.0, &cfg), Action::DeEscalate);
        // 1 of 3: Beta(2, 3); target key (0.3519, 0.5474) vs (0.1564, 0.3519)
        let tgt = beta_cdf(2.0, 3.0, 0.5474) - beta_cdf(2.0, 3.0, 0.3519);
        let low = beta_cdf(2.0, 3.0, 0.3519) - beta_cdf(2.0, 3.0, 0.1564);
        let want = if tgt >= low { Action::Stay } else { Action::Escalate };
        assert_eq!(keyboard_decide(3.0, 1.0, &cfg), want);
    }

    #[test]
    fn mtpi2_suspends_escalation_while_mostly_pending() {
        let cfg = IntervalConfig::mtpi2();
        let snap = Snapshot { n_complete: 2, m: 0, n_pending: 4, pending_cycles: 8 };
        assert_eq!(keyboard_decide(snap.effective_n(3), 0.0, &cfg), Action::Escalate);
        assert_eq!(tite_mtpi2_decide(&snap, &cfg, 3), Action::Suspend);
    }

    #[test]
    fn rmtpi2_agreement_and_cap() {
        let cfg = IntervalConfig::mtpi2();
        let none_pending = Snapshot { n_complete: 3, m: 0, n_pending: 0, pending_cycles: 0 };
        assert_eq!(rmtpi2_decide(&none_pending, &cfg, false), Action::Escalate);
        let split = Snapshot { n_complete: 3, m: 0, n_pending: 3, pending_cycles: 3 };
        assert_eq!(rmtpi2_decide(&split, &cfg, false), Action::Suspend);
        assert_eq!(rmtpi2_decide(&split, &cfg, true), keyboard_decide(3.0, 0.0, &cfg));
    }

    #[test]
    fn no_suspension_when_waiting_cannot_change_the_dose() {
        use crate::harness::{CycleRecord, History, HistoryPatient};
        use crate::rules::RuleConfig;
        use crate::trial::DoseGrid;
        let trial = TrialConfig::default();
        let (doses, rules) = (DoseGrid::reference(), RuleConfig::setting(1));
        let cfg = IntervalConfig::mtpi2();
        let table = DecisionTable::build(DesignKind::TiteMtpi2, &cfg, &trial, 12).unwrap();
        let at = |dose: usize| {
            let p = |enrolled, n| HistoryPatient { dose, enrolled, cycles: vec![CycleRecord { dlt: false, grades: None }; n] };
            History { patients: vec![p(0, 3), p(0, 3), p(2, 1), p(2, 1), p(2, 1), p(2, 1)] }.to_state(6, 3).unwrap()
        };
        let proposal = |state: &TrialState| {
            let ctx = DecisionContext { state, doses: &doses, trial: &trial, rules: &rules, seed: 0 };
            decide(DesignKind::TiteMtpi2, &cfg, &table, &ctx).unwrap().proposal
        };
        assert_eq!(proposal(&at(5)), Proposal::Suspend);
        assert_eq!(proposal(&at(6)), Proposal::Assign(5));
    }

    #[test]
    fn final_mtd_skips_untreated_and_excluded() {
        let cfg = IntervalConfig::boin(2);
        let counts = [(3, 0), (6, 1), (0, 0), (6, 4), (0, 0), (0, 0)];
        let pick = final_mtd(&counts, &cfg, 0.391, None).unwrap();
        assert!(counts[pick].0 > 0);
        assert_eq!(final_mtd(&counts, &cfg, 0.391, Some(3)).map(|j| j < 3), Some(true));
        assert_eq!(final_mtd(&counts, &cfg, 0.391, Some(0)), None);
        assert_eq!(final_mtd(&[(0, 0); 6], &cfg, 0.391, None), None);
        // pooled below target: highest; pooled above: lowest
        assert_eq!(final_mtd(&[(6, 0), (6, 0), (3, 0), (0, 0), (0, 0), (0, 0)], &cfg, 0.391, None), Some(2));
        assert_eq!(final_mtd(&[(6, 5), (6, 4), (0, 0), (0, 0), (0, 0), (0, 0)], &cfg, 0.391, None), Some(0));
    }

    #[test]
    fn final_mtd_drops_eliminated_doses() {
        // 0/9 then 5/6: the raw estimate at dose 4 is nearer the target, but
        // P(p > 0.391 | Beta(6, 2)) = 0.983 removes it
        let counts = [(3, 0), (3, 0), (9, 0), (6, 5), (0, 0), (0, 0)];
        let boin = IntervalConfig::boin(1);
        assert_eq!(final_mtd(&counts, &boin, 0.391, None), Some(2));
        let off = IntervalConfig { elimination_cutoff: 1.0, ..boin };
        assert_eq!(final_mtd(&counts, &off, 0.391, None), Some(3));
        // elimination never empties the selection
        assert_eq!(final_mtd(&[(6, 6), (0, 0)], &boin, 0.391, None), Some(0));
    }

    proptest! {
        #[test]
        fn more_dlts_never_make_keyboard_more_aggressive(n in 1usize..25, m in 0usize..25) {
            prop_assume!(m < n);
            let cfg = IntervalConfig::mtpi2();
            let rank = |a: Action| match a { Action::Escalate => 2, Action::Stay => 1, _ => 0 };
            let a = keyboard_decide(n as f64, m as f64, &cfg);
            let b = keyboard_decide(n as f64, (m + 1) as f64, &cfg);
            prop_assert!(rank(b) <= rank(a));
        }
    }
}
