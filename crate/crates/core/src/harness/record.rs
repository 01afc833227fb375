//! Line-oriented trial records. The same patient format is read back as a
//! history for single decisions, so simulated logs can be replayed. Dose
//! levels in records are one-based.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rules::StopReason;
use crate::trial::{CycleOutcome, PatientRecord, TrialState};

use super::{Filter, Step, TrialResult};
use crate::designs::Proposal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleRecord {
    pub dlt: bool,
    /// Worst grade per toxicity type (renal, haematological, neurological).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grades: Option<[u8; 3]>,
}

impl CycleRecord {
    pub fn from_outcome(o: &CycleOutcome) -> Self {
        Self { dlt: o.dlt, grades: Some(o.type_grades) }
    }

    pub fn to_outcome(&self) -> Result<CycleOutcome> {
        match self.grades {
            Some(g) => {
                if g.iter().any(|&x| x > 4) {
                    return Err(Error::invalid(format!("grade above 4 in {g:?}")));
                }
                let o = CycleOutcome::from_type_grades(g);
                if o.dlt != self.dlt {
                    return Err(Error::invalid(format!("grades {g:?} disagree with dlt = {}", self.dlt)));
                }
                Ok(o)
            }
            None => Ok(CycleOutcome::binary(self.dlt)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryPatient {
    /// One-based dose level.
    pub dose: usize,
    /// Cycle index at which the patient entered.
    pub enrolled: u32,
    pub cycles: Vec<CycleRecord>,
}

/// Patients observed so far. Extra fields (as in a full trial record) are
/// ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub patients: Vec<HistoryPatient>,
}

impl History {
    pub fn from_state(state: &TrialState) -> Self {
        Self {
            patients: state
                .patients
                .iter()
                .map(|p| HistoryPatient {
                    dose: p.dose_level + 1,
                    enrolled: p.enroll_cycle,
                    cycles: p.outcomes.iter().map(CycleRecord::from_outcome).collect(),
                })
                .collect(),
        }
    }

    /// Earliest decision clock consistent with every recorded outcome.
    pub fn natural_clock(&self) -> u32 {
        self.patients
            .iter()
            .map(|p| (p.enrolled + 1).max(p.enrolled + p.cycles.len() as u32))
            .max()
            .unwrap_or(0)
    }

    /// The trial state at the natural clock, checked against the dose grid
    /// and the follow-up schedule.
    pub fn to_state(&self, doses: usize, cycles: usize) -> Result<TrialState> {
        let mut patients: Vec<&HistoryPatient> = self.patients.iter().collect();
        patients.sort_by_key(|p| p.enrolled);
        let clock = self.natural_clock();
        let mut state = TrialState::new();
        for (id, h) in patients.into_iter().enumerate() {
            if h.dose == 0 || h.dose > doses {
                return Err(Error::invalid(format!("patient {} has dose level {} outside 1..={doses}", id + 1, h.dose)));
            }
            let outcomes = h.cycles.iter().map(CycleRecord::to_outcome).collect::<Result<Vec<_>>>()?;
            let due = ((clock - h.enrolled) as usize).min(cycles);
            let dlt = outcomes.iter().any(|o| o.dlt);
            if (!dlt && outcomes.len() != due) || outcomes.len() > due {
                return Err(Error::invalid(format!(
                    "patient {} (entered cycle {}) has {} cycles recorded, expected {due} at cycle {clock}",
                    id + 1,
                    h.enrolled,
                    outcomes.len()
                )));
            }
            let mut p = PatientRecord::new(id, 0.5, h.dose - 1, h.enrolled);
            p.outcomes = outcomes;
            state.patients.push(p);
        }
        state.clock = clock;
        state.validate(doses, cycles)?;
        Ok(state.as_of(clock))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRecord {
    pub clock: u32,
    /// The design's proposal; `None` when accrual was suspended.
    pub proposed: Option<usize>,
    /// Dose after enforcement filters.
    pub dose: usize,
    pub filters: Vec<Filter>,
    pub stops: Vec<StopReason>,
}

impl DecisionRecord {
    pub fn from_step(clock: u32, step: &Step) -> Self {
        let one = |f: &Filter| match *f {
            Filter::Kfold { from, to } => Filter::Kfold { from: from + 1, to: to + 1 },
            Filter::Excluded { from, to } => Filter::Excluded { from: from + 1, to: to + 1 },
        };
        Self {
            clock,
            proposed: match step.decision.proposal {
                Proposal::Assign(l) => Some(l + 1),
                Proposal::Suspend => None,
            },
            dose: step.candidate + 1,
            filters: step.filters.iter().map(one).collect(),
            stops: step.stops.clone(),
        }
    }
}

/// One line of `results.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialRecord {
    pub design: String,
    pub scenario: String,
    pub seed: u64,
    pub replication: u64,
    pub stream_hash: String,
    pub recommendation: Option<usize>,
    pub duration_weeks: f64,
    pub n_patients: usize,
    pub n_dlt: usize,
    pub allocations: Vec<usize>,
    pub stop_reasons: Vec<StopReason>,
    pub correct: bool,
    pub benchmark: Option<usize>,
    pub benchmark_correct: bool,
    pub failure: Option<String>,
    pub patients: Vec<HistoryPatient>,
    pub decisions: Vec<DecisionRecord>,
}

impl TrialRecord {
    pub fn new(design: &str, scenario: &str, seed: u64, r: &TrialResult) -> Self {
        Self {
            design: design.to_string(),
            scenario: scenario.to_string(),
            seed,
            replication: r.replication,
            stream_hash: r.stream_hash.clone(),
            recommendation: r.recommendation.map(|l| l + 1),
            duration_weeks: r.duration_weeks,
            n_patients: r.n_patients,
            n_dlt: r.n_dlt,
            allocations: r.allocations.clone(),
            stop_reasons: r.stop_reasons.clone(),
            correct: r.correct,
            benchmark: r.benchmark.map(|l| l + 1),
            benchmark_correct: r.benchmark_correct,
            failure: r.failure.clone(),
            patients: History::from_state(&r.history).patients,
            decisions: r.decisions.clone(),
        }
    }
}
