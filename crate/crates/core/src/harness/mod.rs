//! Single trials and replicated studies under common random numbers.

pub mod calibrate;
pub mod record;
pub mod scenarios;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::designs::{Decision, DecisionContext, DesignConfig, Engine, Proposal};
use crate::error::{Error, Result};
use crate::patient::{benchmark_rates, benchmark_select, OutcomeModel, PatientStream, ScenarioSpec, Truth};
use crate::rng::decision_seed;
use crate::rules::{evaluate_stopping, kfold_filter, update_exclusions, RuleConfig, StopInputs, StopReason};
use crate::trial::{TrialConfig, TrialState};

pub use calibrate::{calibrate, default_grid, ess_diagnostic, geometric_mean, CalibrationReport, GridPoint};
pub use record::{CycleRecord, DecisionRecord, History, HistoryPatient, TrialRecord};
pub use scenarios::{calibration_scenarios, named_scenario, SCENARIO_NAMES};

/// Clock value used to seed the final model fit.
pub const FINAL_CLOCK: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct StudyPlan {
    pub scenario: ScenarioSpec,
    pub design: DesignConfig,
    pub trial: TrialConfig,
    pub rules: RuleConfig,
    pub replications: u64,
    pub seed: u64,
}

impl StudyPlan {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::invalid("replications must be at least 1"));
        }
        self.scenario.validate()?;
        self.trial.validate()?;
        self.rules.validate()?;
        self.design.validate(&self.scenario.doses, &self.trial)
    }

    pub fn truth(&self) -> Truth {
        self.scenario.truth(self.trial.target_cycle1, self.rules.full())
    }
}

/// One filter applied between the design's proposal and the assigned dose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum Filter {
    /// Limited to k times the highest dose tried so far.
    Kfold { from: usize, to: usize },
    /// Lowered below the excluded doses.
    Excluded { from: usize, to: usize },
}

/// Everything decided at one decision point.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub decision: Decision,
    /// Dose after the enforcement filters; the current dose on suspension.
    pub candidate: usize,
    pub filters: Vec<Filter>,
    pub stops: Vec<StopReason>,
}

/// Lowest excluded dose after the hard-safety check at this clock.
pub fn refresh_exclusions(state: &TrialState, doses: usize, rules: &RuleConfig) -> TrialState {
    match update_exclusions(state, doses, rules) {
        Some(level) => state.exclude_from(level),
        None => state.clone(),
    }
}

/// One decision point: design proposal, enforcement filters, stopping rules.
/// `state` must already carry this clock's exclusions.
pub fn step(engine: &Engine, ctx: &DecisionContext<'_>) -> Result<Step> {
    let state = ctx.state;
    let decision = engine.decide(ctx)?;
    let mut filters = Vec::new();
    let candidate = match decision.proposal {
        Proposal::Assign(level) => {
            let k = kfold_filter(level, state, ctx.doses, ctx.rules);
            if k != level {
                filters.push(Filter::Kfold { from: level, to: k });
            }
            match state.highest_allowed(ctx.doses.len()) {
                Some(top) if k > top => {
                    filters.push(Filter::Excluded { from: k, to: top });
                    top
                }
                _ => k,
            }
        }
        Proposal::Suspend => state.current_dose.unwrap_or(0),
    };
    let inputs = StopInputs {
        safety: decision.safety.as_ref(),
        cv: decision.cv,
    };
    let stops = evaluate_stopping(state, candidate, &inputs, ctx.doses.len(), ctx.trial, ctx.rules);
    Ok(Step { decision, candidate, filters, stops })
}

/// The state a decision at `clock` saw: history cut at `clock` with the
/// exclusions accumulated over every earlier decision point.
pub fn replay_state(full: &TrialState, clock: u32, doses: usize, rules: &RuleConfig) -> TrialState {
    let mut excluded = None;
    for c in 0..=clock {
        let mut s = full.as_of(c);
        s.excluded_from = excluded;
        excluded = update_exclusions(&s, doses, rules).or(excluded);
    }
    let mut s = full.as_of(clock);
    s.excluded_from = excluded;
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub replication: u64,
    pub recommendation: Option<usize>,
    pub duration_weeks: f64,
    pub n_patients: usize,
    pub allocations: Vec<usize>,
    pub stop_reasons: Vec<StopReason>,
    pub n_dlt: usize,
    pub stream_hash: String,
    pub correct: bool,
    pub benchmark: Option<usize>,
    pub benchmark_correct: bool,
    /// Set when an engine failed; such trials are left out of PCS.
    pub failure: Option<String>,
    pub history: TrialState,
    pub decisions: Vec<DecisionRecord>,
}

/// Whether a finished trial matches the scenario's correct outcome.
pub fn is_correct(truth: Truth, recommendation: Option<usize>, stops: &[StopReason]) -> bool {
    match truth {
        Truth::Mtd(j) => recommendation == Some(j),
        Truth::AllUnsafe => recommendation.is_none() && stops.iter().any(|s| s.is_unsafe_stop()),
        Truth::AllSafe => stops.contains(&StopReason::HighestVerySafe),
    }
}

/// Benchmark choice and score on the full 30-patient stream. In all-unsafe
/// and all-safe scenarios the benchmark is correct when every empirical
/// rate lies on the right side of the target.
pub fn benchmark(stream: &PatientStream, scenario: &ScenarioSpec, trial: &TrialConfig, truth: Truth) -> (Option<usize>, bool) {
    let rates = benchmark_rates(stream, scenario, trial.cycles);
    match truth {
        Truth::Mtd(j) => {
            let pick = benchmark_select(stream, scenario, trial.target, trial.cycles);
            (Some(pick), pick == j)
        }
        Truth::AllUnsafe => {
            let ok = rates.iter().all(|&r| r > trial.target);
            (if ok { None } else { Some(benchmark_select(stream, scenario, trial.target, trial.cycles)) }, ok)
        }
        Truth::AllSafe => {
            let ok = rates.iter().all(|&r| r < trial.target);
            (Some(benchmark_select(stream, scenario, trial.target, trial.cycles)), ok)
        }
    }
}

fn advance(state: &TrialState, model: &OutcomeModel, stream: &PatientStream, cycles: usize) -> Result<TrialState> {
    let outcomes = state
        .on_study(cycles)
        .map(|p| Ok((p.id, model.outcome(stream, p.id, p.dose_level, p.cycles_observed() + 1)?)))
        .collect::<Result<Vec<_>>>()?;
    state.record_cycle_outcomes(&outcomes, cycles)
}

struct Simulated {
    state: TrialState,
    decisions: Vec<DecisionRecord>,
    recommendation: Option<usize>,
}

fn simulate(engine: &Engine, plan: &StudyPlan, rep: u64, stream: &PatientStream, model: &OutcomeModel) -> Result<Simulated> {
    let (doses, trial, rules) = (&plan.scenario.doses, &plan.trial, &plan.rules);
    let j = doses.len();
    let max_clock = (trial.max_cohorts() + 1) * (trial.cycles + 1) * 4;
    let mut state = TrialState::new();
    let mut decisions = Vec::new();
    loop {
        if state.clock as usize > max_clock {
            return Err(Error::NoConvergence { what: "trial loop".into(), iterations: max_clock });
        }
        state = refresh_exclusions(&state, j, rules);
        let ctx = DecisionContext {
            state: &state,
            doses,
            trial,
            rules,
            seed: decision_seed(plan.seed, rep, state.clock as u64),
        };
        let st = step(engine, &ctx)?;
        decisions.push(DecisionRecord::from_step(state.clock, &st));
        if !st.stops.is_empty() {
            state.stopped = Some(st.stops);
            break;
        }
        if let Proposal::Assign(_) = st.decision.proposal {
            let first = state.n_patients();
            let latents = &stream.z[first..first + trial.cohort_size];
            state = state.enroll_cohort(st.candidate, latents)?;
        }
        state = advance(&state, model, stream, trial.cycles)?;
    }
    while state.on_study(trial.cycles).next().is_some() {
        state = advance(&state, model, stream, trial.cycles)?;
    }
    state = refresh_exclusions(&state, j, rules);
    let stops = state.stopped.clone().unwrap_or_default();
    let recommendation = if stops.iter().any(|s| s.is_unsafe_stop()) {
        None
    } else if stops.contains(&StopReason::HighestVerySafe) {
        Some(j - 1)
    } else {
        let ctx = DecisionContext {
            state: &state,
            doses,
            trial,
            rules,
            seed: decision_seed(plan.seed, rep, FINAL_CLOCK),
        };
        engine.final_recommendation(&ctx)?
    };
    state.recommendation = recommendation;
    Ok(Simulated { state, decisions, recommendation })
}

/// Deterministic in `(plan.seed, rep)`.
pub fn run_trial(engine: &Engine, plan: &StudyPlan, rep: u64) -> TrialResult {
    let stream = PatientStream::generate(plan.seed, rep, plan.trial.max_patients);
    let model = OutcomeModel::new(&plan.scenario, plan.trial.cycles);
    let truth = plan.truth();
    let (bench, bench_ok) = benchmark(&stream, &plan.scenario, &plan.trial, truth);
    let j = plan.scenario.doses.len();
    let mut result = TrialResult {
        replication: rep,
        recommendation: None,
        duration_weeks: 0.0,
        n_patients: 0,
        allocations: vec![0; j],
        stop_reasons: Vec::new(),
        n_dlt: 0,
        stream_hash: stream.hash(),
        correct: false,
        benchmark: bench,
        benchmark_correct: bench_ok,
        failure: None,
        history: TrialState::new(),
        decisions: Vec::new(),
    };
    let outcome = simulate(engine, plan, rep, &stream, &model)
        .and_then(|sim| sim.state.trial_duration_weeks(&plan.trial).map(|d| (sim, d)));
    match outcome {
        Ok((sim, duration)) => {
            let stops = sim.state.stopped.clone().unwrap_or_default();
            result.recommendation = sim.recommendation;
            result.duration_weeks = duration;
            result.n_patients = sim.state.n_patients();
            result.allocations = sim.state.allocations(j);
            result.n_dlt = sim.state.total_dlts();
            result.correct = is_correct(truth, sim.recommendation, &stops);
            result.stop_reasons = stops;
            result.history = sim.state;
            result.decisions = sim.decisions;
        }
        Err(e) => {
            log::warn!("replication {rep} failed: {e}");
            result.failure = Some(e.to_string());
        }
    }
    result
}

/// Every replication of a plan, in replication order.
pub fn run_replications(plan: &StudyPlan) -> Result<Vec<TrialResult>> {
    plan.validate()?;
    let engine = Engine::new(plan.design.clone());
    // build any decision table before fanning out
    engine.table(&plan.trial)?;
    Ok((0..plan.replications)
        .into_par_iter()
        .map(|rep| run_trial(&engine, plan, rep))
        .collect())
}

pub fn run_study(plan: &StudyPlan) -> Result<StudyMetrics> {
    let results = run_replications(plan)?;
    Ok(StudyMetrics::aggregate(
        plan.design.kind().name(),
        &plan.scenario.label,
        plan.scenario.doses.len(),
        &results,
    ))
}

/// Compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    pub fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn sum(&self) -> f64 {
        self.sum
    }
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (mut s, mut n) = (Kahan::default(), 0usize);
    for v in values.clone() {
        s.add(v);
        n += 1;
    }
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = s.sum() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let mut ss = Kahan::default();
    for v in values {
        ss.add((v - mean).powi(2));
    }
    (mean, (ss.sum() / (n - 1) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyMetrics {
    pub design: String,
    pub scenario: String,
    pub replications: usize,
    pub failures: usize,
    pub pcs: f64,
    pub benchmark_pcs: f64,
    pub mean_duration: f64,
    pub sd_duration: f64,
    pub mean_patients: f64,
    pub sd_patients: f64,
    pub mean_dlt: f64,
    pub mean_allocations: Vec<f64>,
    /// Percent of trials stopped for each reason, in `StopReason::ALL`
    /// order; a trial may stop for several reasons.
    pub stop_percent: Vec<f64>,
    /// Share of trials recommending each dose; the last entry is "none".
    pub recommendation_share: Vec<f64>,
}

impl StudyMetrics {
    pub fn aggregate(design: &str, scenario: &str, doses: usize, results: &[TrialResult]) -> Self {
        let ok: Vec<&TrialResult> = results.iter().filter(|r| r.failure.is_none()).collect();
        let n = ok.len() as f64;
        let share = |count: usize| if ok.is_empty() { f64::NAN } else { count as f64 / n };
        let (mean_duration, sd_duration) = mean_sd(ok.iter().map(|r| r.duration_weeks));
        let (mean_patients, sd_patients) = mean_sd(ok.iter().map(|r| r.n_patients as f64));
        let (mean_dlt, _) = mean_sd(ok.iter().map(|r| r.n_dlt as f64));
        let mean_allocations = (0..doses)
            .map(|j| mean_sd(ok.iter().map(move |r| r.allocations[j] as f64)).0)
            .collect();
        let stop_percent = StopReason::ALL
            .iter()
            .map(|reason| 100.0 * share(ok.iter().filter(|r| r.stop_reasons.contains(reason)).count()))
            .collect();
        let mut recommendation_share: Vec<f64> = (0..doses)
            .map(|j| share(ok.iter().filter(|r| r.recommendation == Some(j)).count()))
            .collect();
        recommendation_share.push(share(ok.iter().filter(|r| r.recommendation.is_none()).count()));
        Self {
            design: design.to_string(),
            scenario: scenario.to_string(),
            replications: results.len(),
            failures: results.len() - ok.len(),
            pcs: share(ok.iter().filter(|r| r.correct).count()),
            benchmark_pcs: share(ok.iter().filter(|r| r.benchmark_correct).count()),
            mean_duration,
            sd_duration,
            mean_patients,
            sd_patients,
            mean_dlt,
            mean_allocations,
            stop_percent,
            recommendation_share,
        }
    }
}
