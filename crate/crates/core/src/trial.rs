//! Shared trial bookkeeping: dose grid, cycle clock, patient records and the
//! accumulating trial history.
//!
//! Dose levels are zero-based indices everywhere inside the crate. External
//! formats (CSV, JSON lines, CLI output) use one-based levels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rules::StopReason;

/// Ordered dose quantities (MBq in the reference setting).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DoseGrid {
    values: Vec<f64>,
}

impl DoseGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid("dose grid needs at least two levels"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("dose values must be finite and positive"));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("dose values must be strictly increasing"));
        }
        Ok(Self { values })
    }

    /// 1.5, 2.5, 3.5, 4.5, 6.0 and 7.0 MBq.
    pub fn reference() -> Self {
        Self {
            values: vec![1.5, 2.5, 3.5, 4.5, 6.0, 7.0],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, level: usize) -> f64 {
        self.values[level]
    }

    pub fn max_value(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

impl TryFrom<Vec<f64>> for DoseGrid {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<DoseGrid> for Vec<f64> {
    fn from(grid: DoseGrid) -> Self {
        grid.values
    }
}

/// Fixed trial parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrialConfig {
    /// Cycles of follow-up per patient.
    pub cycles: usize,
    pub cycle_weeks: f64,
    pub cohort_size: usize,
    pub max_patients: usize,
    /// Target probability of a DLT over the whole follow-up.
    pub target: f64,
    /// Target probability of a DLT in cycle 1.
    pub target_cycle1: f64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            cycles: 3,
            cycle_weeks: 6.0,
            cohort_size: 3,
            max_patients: 30,
            target: 0.391,
            target_cycle1: 0.3,
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cycles == 0 {
            return Err(Error::invalid("cycles must be at least 1"));
        }
        if self.cohort_size == 0 {
            return Err(Error::invalid("cohort_size must be at least 1"));
        }
        if self.max_patients == 0 || !self.max_patients.is_multiple_of(self.cohort_size) {
            return Err(Error::invalid(
                "max_patients must be a positive multiple of cohort_size",
            ));
        }
        if !(self.cycle_weeks > 0.0) {
            return Err(Error::invalid("cycle_weeks must be positive"));
        }
        if !(0.0 < self.target_cycle1 && self.target_cycle1 <= self.target && self.target < 1.0) {
            return Err(Error::invalid(
                "targets must satisfy 0 < target_cycle1 <= target < 1",
            ));
        }
        Ok(())
    }

    pub fn max_cohorts(&self) -> usize {
        self.max_patients / self.cohort_size
    }
}

/// What was seen for one patient in one cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleOutcome {
    pub dlt: bool,
    pub max_grade: u8,
    /// Grades for (renal, haematological, neurological).
    pub type_grades: [u8; 3],
}

impl CycleOutcome {
    pub fn from_type_grades(type_grades: [u8; 3]) -> Self {
        let max_grade = type_grades.iter().copied().max().unwrap_or(0);
        Self {
            dlt: max_grade >= 3,
            max_grade,
            type_grades,
        }
    }

    /// Binary-only outcome with grades left at the DLT boundary.
    pub fn binary(dlt: bool) -> Self {
        if dlt {
            Self::from_type_grades([3, 0, 0])
        } else {
            Self::from_type_grades([0, 0, 0])
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.type_grades.iter().all(|g| *g <= 4)
            && self.max_grade == self.type_grades.iter().copied().max().unwrap_or(0)
            && self.dlt == (self.max_grade >= 3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: usize,
    /// Latent toxicity variable.
    pub z: f64,
    pub dose_level: usize,
    pub enroll_cycle: u32,
    pub outcomes: Vec<CycleOutcome>,
}

impl PatientRecord {
    pub fn new(id: usize, z: f64, dose_level: usize, enroll_cycle: u32) -> Self {
        Self {
            id,
            z,
            dose_level,
            enroll_cycle,
            outcomes: Vec::new(),
        }
    }

    pub fn cycles_observed(&self) -> usize {
        self.outcomes.len()
    }

    pub fn off_study(&self) -> bool {
        self.outcomes.last().is_some_and(|o| o.dlt)
    }

    /// One-based cycle of the DLT, if any.
    pub fn dlt_cycle(&self) -> Option<usize> {
        self.outcomes.iter().position(|o| o.dlt).map(|i| i + 1)
    }

    pub fn had_dlt(&self) -> bool {
        self.dlt_cycle().is_some()
    }

    /// Fully evaluated: DLT seen or all cycles observed.
    pub fn is_complete(&self, cycles: usize) -> bool {
        self.off_study() || self.cycles_observed() >= cycles
    }

    pub fn awaiting_outcome(&self, cycles: usize) -> bool {
        !self.is_complete(cycles)
    }

    pub fn cycle1_dlt(&self) -> Option<bool> {
        self.outcomes.first().map(|o| o.dlt)
    }

    /// Cycles spent on study once follow-up ends.
    fn cycles_on_study(&self) -> usize {
        self.outcomes.len()
    }

    fn check(&self, cycles: usize) -> Result<()> {
        if self.outcomes.len() > cycles {
            return Err(Error::invalid(format!(
                "patient {} has {} cycles recorded but follow-up is {cycles}",
                self.id,
                self.outcomes.len()
            )));
        }
        if let Some(c) = self.dlt_cycle() {
            if c != self.outcomes.len() {
                return Err(Error::invalid(format!(
                    "patient {} has outcomes after a DLT in cycle {c}",
                    self.id
                )));
            }
        }
        if let Some(bad) = self.outcomes.iter().find(|o| !o.is_consistent()) {
            return Err(Error::invalid(format!(
                "patient {} has an inconsistent outcome {bad:?}",
                self.id
            )));
        }
        Ok(())
    }
}

/// Per dose and cycle: DLT counts `r` and completed-without-DLT counts `q`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleCountTable {
    pub r: Vec<Vec<u32>>,
    pub q: Vec<Vec<u32>>,
}

impl CycleCountTable {
    pub fn zeros(doses: usize, cycles: usize) -> Self {
        Self {
            r: vec![vec![0; cycles]; doses],
            q: vec![vec![0; cycles]; doses],
        }
    }

    pub fn doses(&self) -> usize {
        self.r.len()
    }

    pub fn cycles(&self) -> usize {
        self.r.first().map_or(0, Vec::len)
    }

    /// Patients at risk never grow from one cycle to the next.
    pub fn risk_set_monotone(&self) -> bool {
        (0..self.doses()).all(|j| {
            (0..self.cycles().saturating_sub(1))
                .all(|s| self.q[j][s] >= self.q[j][s + 1] + self.r[j][s + 1])
        })
    }
}

/// The trial history. Transitions return fresh values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialState {
    pub clock: u32,
    pub patients: Vec<PatientRecord>,
    /// Lowest excluded level; everything at or above it is barred.
    pub excluded_from: Option<usize>,
    pub current_dose: Option<usize>,
    pub consecutive_at_current: usize,
    pub stopped: Option<Vec<StopReason>>,
    pub recommendation: Option<usize>,
}

impl Default for TrialState {
    fn default() -> Self {
        Self::new()
    }
}

impl TrialState {
    pub fn new() -> Self {
        Self {
            clock: 0,
            patients: Vec::new(),
            excluded_from: None,
            current_dose: None,
            consecutive_at_current: 0,
            stopped: None,
            recommendation: None,
        }
    }

    pub fn n_patients(&self) -> usize {
        self.patients.len()
    }

    pub fn is_excluded(&self, level: usize) -> bool {
        self.excluded_from.is_some_and(|e| level >= e)
    }

    /// Highest permitted level, or `None` when every dose is barred.
    pub fn highest_allowed(&self, doses: usize) -> Option<usize> {
        match self.excluded_from {
            Some(0) => None,
            Some(e) => Some(e.min(doses) - 1),
            None => Some(doses - 1),
        }
    }

    pub fn exclude_from(&self, level: usize) -> TrialState {
        let mut next = self.clone();
        next.excluded_from = Some(self.excluded_from.map_or(level, |e| e.min(level)));
        if let Some(rec) = next.recommendation {
            if next.is_excluded(rec) {
                next.recommendation = None;
            }
        }
        next
    }

    pub fn highest_experimented(&self) -> Option<usize> {
        self.patients.iter().map(|p| p.dose_level).max()
    }

    pub fn treated_at(&self, level: usize) -> usize {
        self.patients.iter().filter(|p| p.dose_level == level).count()
    }

    pub fn allocations(&self, doses: usize) -> Vec<usize> {
        let mut alloc = vec![0; doses];
        for p in &self.patients {
            alloc[p.dose_level] += 1;
        }
        alloc
    }

    pub fn total_dlts(&self) -> usize {
        self.patients.iter().filter(|p| p.had_dlt()).count()
    }

    pub fn any_dlt(&self) -> bool {
        self.patients.iter().any(PatientRecord::had_dlt)
    }

    /// Patients that still owe an outcome for the cycle now running.
    pub fn on_study(&self, cycles: usize) -> impl Iterator<Item = &PatientRecord> {
        self.patients.iter().filter(move |p| p.awaiting_outcome(cycles))
    }

    /// Cycle-1 (DLT count, evaluated count) at one dose.
    pub fn cycle1_counts(&self, level: usize) -> (usize, usize) {
        self.patients
            .iter()
            .filter(|p| p.dose_level == level)
            .filter_map(PatientRecord::cycle1_dlt)
            .fold((0, 0), |(m, n), dlt| (m + usize::from(dlt), n + 1))
    }

    /// Admit a cohort at the start of the current cycle.
    pub fn enroll_cohort(&self, level: usize, latents: &[f64]) -> Result<TrialState> {
        if self.is_excluded(level) {
            return Err(Error::invalid(format!(
                "cannot enroll at excluded level {}",
                level + 1
            )));
        }
        let mut next = self.clone();
        for &z in latents {
            let id = next.patients.len();
            next.patients.push(PatientRecord::new(id, z, level, self.clock));
        }
        if self.current_dose == Some(level) {
            next.consecutive_at_current += 1;
        } else {
            next.current_dose = Some(level);
            next.consecutive_at_current = 1;
        }
        Ok(next)
    }

    /// Append one cycle of outcomes and advance the clock.
    pub fn record_cycle_outcomes(
        &self,
        outcomes: &[(usize, CycleOutcome)],
        cycles: usize,
    ) -> Result<TrialState> {
        let mut next = self.clone();
        let mut seen = vec![false; next.patients.len()];
        for &(id, outcome) in outcomes {
            let patient = next
                .patients
                .get_mut(id)
                .ok_or_else(|| Error::invalid(format!("unknown patient {id}")))?;
            if patient.is_complete(cycles) {
                return Err(Error::invalid(format!(
                    "patient {id} is off study or fully observed"
                )));
            }
            if seen[id] {
                return Err(Error::invalid(format!("duplicate outcome for patient {id}")));
            }
            if !outcome.is_consistent() {
                return Err(Error::invalid(format!(
                    "inconsistent outcome for patient {id}"
                )));
            }
            seen[id] = true;
            patient.outcomes.push(outcome);
        }
        if let Some(missing) = self
            .patients
            .iter()
            .find(|p| p.awaiting_outcome(cycles) && !seen[p.id])
        {
            return Err(Error::invalid(format!(
                "no outcome supplied for on-study patient {}",
                missing.id
            )));
        }
        next.clock += 1;
        Ok(next)
    }

    pub fn count_table(&self, doses: usize, cycles: usize) -> CycleCountTable {
        let mut table = CycleCountTable::zeros(doses, cycles);
        for p in &self.patients {
            for (s, o) in p.outcomes.iter().enumerate().take(cycles) {
                if o.dlt {
                    table.r[p.dose_level][s] += 1;
                } else {
                    table.q[p.dose_level][s] += 1;
                }
            }
        }
        table
    }

    /// Weeks from the first enrollment until the last patient finishes
    /// follow-up or goes off study.
    pub fn trial_duration_weeks(&self, config: &TrialConfig) -> Result<f64> {
        if self.stopped.is_none() {
            return Err(Error::invalid("duration is only defined for a stopped trial"));
        }
        let cycles = self
            .patients
            .iter()
            .map(|p| p.enroll_cycle as usize + p.cycles_on_study())
            .max()
            .unwrap_or(0);
        Ok(config.cycle_weeks * cycles as f64)
    }

    /// The history as it stood at the start of cycle `clock`: later cohorts
    /// dropped, later outcomes truncated. Stop status and recommendation are
    /// cleared; exclusions are not recoverable from the cut and are reset.
    pub fn as_of(&self, clock: u32) -> TrialState {
        let patients: Vec<PatientRecord> = self
            .patients
            .iter()
            .filter(|p| p.enroll_cycle < clock)
            .map(|p| {
                let mut p = p.clone();
                let seen = (clock - p.enroll_cycle) as usize;
                p.outcomes.truncate(seen);
                p
            })
            .collect();
        let mut state = TrialState {
            clock,
            patients: Vec::new(),
            excluded_from: None,
            current_dose: None,
            consecutive_at_current: 0,
            stopped: None,
            recommendation: None,
        };
        let mut last_cycle = None;
        for p in patients {
            if last_cycle != Some(p.enroll_cycle) {
                last_cycle = Some(p.enroll_cycle);
                if state.current_dose == Some(p.dose_level) {
                    state.consecutive_at_current += 1;
                } else {
                    state.current_dose = Some(p.dose_level);
                    state.consecutive_at_current = 1;
                }
            }
            state.patients.push(p);
        }
        state
    }

    pub fn validate(&self, doses: usize, cycles: usize) -> Result<()> {
        for (i, p) in self.patients.iter().enumerate() {
            if p.id != i {
                return Err(Error::invalid(format!(
                    "patient ids must be 0..n in order, found {} at position {i}",
                    p.id
                )));
            }
            if p.dose_level >= doses {
                return Err(Error::invalid(format!(
                    "patient {} at level {} but the grid has {doses} levels",
                    p.id,
                    p.dose_level + 1
                )));
            }
            if p.enroll_cycle > self.clock {
                return Err(Error::invalid(format!(
                    "patient {} enrolled after the current clock",
                    p.id
                )));
            }
            p.check(cycles)?;
        }
        if let Some(rec) = self.recommendation {
            if self.is_excluded(rec) {
                return Err(Error::invalid("recommendation is an excluded dose"));
            }
        }
        Ok(())
    }
}
