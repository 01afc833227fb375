use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use escalate_core::designs::{DecisionContext, DesignConfig, DesignKind, Engine};
use escalate_core::harness::{
    calibrate, replay_state, run_replications, step, CalibrationReport, DecisionRecord, History, StudyMetrics,
    StudyPlan, TrialRecord,
};
use escalate_core::rng::decision_seed;
use serde::Serialize;
use serde_json::Value;

use crate::config::{overlay_design, Study};
use crate::error::CliError;
use crate::output;

/// Overrides given on the command line.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub replications: Option<u64>,
}

impl RunOverrides {
    fn out_dir(&self, study: &Study) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| study.run.out_dir.clone())
    }

    fn seed(&self, study: &Study) -> u64 {
        self.seed.unwrap_or(study.run.seed)
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Runs every scenario against every design and writes the result files.
pub fn simulate(study: &Study, over: &RunOverrides) -> Result<Vec<StudyMetrics>, CliError> {
    if study.scenarios.is_empty() {
        return Err(CliError::Config("no [scenario] block to simulate".into()));
    }
    let replications = over.replications.unwrap_or(study.run.replications);
    let seed = over.seed(study);
    let dir = over.out_dir(study);
    create_dir(&dir)?;

    let jsonl = dir.join("results.jsonl");
    let mut records = if study.run.results {
        let f = fs::File::create(&jsonl).map_err(|e| CliError::io(&jsonl, e))?;
        Some(BufWriter::new(f))
    } else {
        None
    };
    let mut rows = Vec::new();
    for scenario in &study.scenarios {
        for design in &study.designs {
            let plan = StudyPlan {
                scenario: scenario.clone(),
                design: design.clone(),
                trial: study.trial.clone(),
                rules: study.rules.clone(),
                replications,
                seed,
            };
            let name = design.kind().name();
            log::info!("{name} on scenario {}: {replications} replications", scenario.label);
            let results = run_replications(&plan)?;
            let metrics = StudyMetrics::aggregate(name, &scenario.label, scenario.doses.len(), &results);
            if metrics.failures > 0 {
                log::warn!("{name} on {}: {} failed replications", scenario.label, metrics.failures);
            }
            if let Some(w) = records.as_mut() {
                for r in &results {
                    let line = serde_json::to_string(&TrialRecord::new(name, &scenario.label, seed, r))
                        .map_err(|e| CliError::Runtime(e.to_string()))?;
                    writeln!(w, "{line}").map_err(|e| CliError::io(&jsonl, e))?;
                }
            }
            rows.push(metrics);
        }
    }
    if let Some(mut w) = records {
        w.flush().map_err(|e| CliError::io(&jsonl, e))?;
    }
    let doses = study.doses();
    output::write_metrics(&dir.join("metrics.csv"), &rows)?;
    output::write_allocations(&dir.join("allocations.csv"), &rows, &doses)?;
    output::write_stops(&dir.join("stops.csv"), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, Default)]
pub struct NextDoseArgs {
    pub history: PathBuf,
    /// One-based line of the history file.
    pub line: Option<usize>,
    pub clock: Option<u32>,
    pub seed: Option<u64>,
    pub replication: Option<u64>,
    pub design: Option<String>,
}

/// A single decision, as printed by `next-dose`.
#[derive(Debug, Clone, Serialize)]
pub struct NextDose {
    pub design: String,
    pub patients: usize,
    /// Lowest excluded dose level (one-based).
    pub excluded_from: Option<usize>,
    #[serde(flatten)]
    pub decision: DecisionRecord,
    pub summaries: Vec<(String, f64)>,
    pub fallback: Option<String>,
}

fn read_history_line(args: &NextDoseArgs) -> Result<Value, CliError> {
    let path = &args.history;
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
        .collect();
    let (n, line) = match (args.line, lines.len()) {
        (None, 0) => return Ok(serde_json::json!({ "patients": [] })),
        (None, 1) => lines[0],
        (None, k) => {
            return Err(CliError::Config(format!(
                "{} has {k} records; pick one with --line",
                path.display()
            )))
        }
        (Some(l), _) => *lines
            .iter()
            .find(|(i, _)| *i == l)
            .ok_or_else(|| CliError::Config(format!("{} has no record on line {l}", path.display())))?,
    };
    serde_json::from_str(line).map_err(|e| CliError::Config(format!("{} line {n}: {e}", path.display())))
}

fn pick_design(study: &Study, name: Option<&str>) -> Result<DesignConfig, CliError> {
    let Some(name) = name else {
        return match study.designs.as_slice() {
            [one] => Ok(one.clone()),
            _ => Err(CliError::Config("several designs configured; choose one with --design".into())),
        };
    };
    let kind: DesignKind = name
        .parse()
        .map_err(|_| CliError::Config(format!("unknown design `{name}`")))?;
    match study.designs.iter().find(|d| d.kind() == kind) {
        Some(d) => Ok(d.clone()),
        None => overlay_design(&toml::Table::new(), Some(kind), &toml::Table::new(), study.rules.setting),
    }
}

/// The design's decision for the history at a decision clock.
pub fn next_dose(study: &Study, args: &NextDoseArgs) -> Result<NextDose, CliError> {
    let record = read_history_line(args)?;
    let history: History = serde_json::from_value(record.clone())
        .map_err(|e| CliError::Config(format!("{}: {e}", args.history.display())))?;
    let field = |k: &str| record.get(k).and_then(Value::as_u64);
    let seed = args.seed.or(field("seed")).unwrap_or(study.run.seed);
    let replication = args.replication.or(field("replication")).unwrap_or(0);
    let recorded = record.get("design").and_then(Value::as_str);
    let design = pick_design(study, args.design.as_deref().or(recorded))?;

    let doses = study.doses();
    let j = doses.len();
    let full = history
        .to_state(j, study.trial.cycles)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.history.display())))?;
    let natural = history.natural_clock();
    let clock = args.clock.unwrap_or(natural);
    if clock > natural {
        return Err(CliError::Config(format!(
            "clock {clock} is past the history's last observed cycle ({natural})"
        )));
    }
    let state = replay_state(&full, clock, j, &study.rules);
    let engine = Engine::new(design);
    let ctx = DecisionContext {
        state: &state,
        doses: &doses,
        trial: &study.trial,
        rules: &study.rules,
        seed: decision_seed(seed, replication, clock as u64),
    };
    let st = step(&engine, &ctx)?;
    Ok(NextDose {
        design: engine.kind().name().to_string(),
        patients: state.n_patients(),
        excluded_from: state.excluded_from.map(|l| l + 1),
        decision: DecisionRecord::from_step(clock, &st),
        summaries: st.decision.summaries.clone(),
        fallback: st.decision.fallback.clone(),
    })
}

pub fn print_next_dose(out: &mut impl Write, d: &NextDose) -> std::io::Result<()> {
    writeln!(out, "design: {}", d.design)?;
    writeln!(out, "cycle: {} ({} patients enrolled)", d.decision.clock, d.patients)?;
    if let Some(e) = d.excluded_from {
        writeln!(out, "excluded: dose {e} and above")?;
    }
    match d.decision.proposed {
        Some(p) => writeln!(out, "proposed: dose {p}")?,
        None => writeln!(out, "proposed: suspend accrual this cycle")?,
    }
    for f in &d.decision.filters {
        writeln!(out, "filter: {}", serde_json::to_string(f).unwrap_or_default())?;
    }
    if d.decision.stops.is_empty() {
        let verb = if d.decision.proposed.is_some() { "assign" } else { "hold at" };
        writeln!(out, "decision: {verb} dose {}", d.decision.dose)?;
    } else {
        let reasons: Vec<&str> = d.decision.stops.iter().map(|s| s.label()).collect();
        writeln!(out, "decision: stop ({})", reasons.join(", "))?;
    }
    if let Some(f) = &d.fallback {
        writeln!(out, "fallback: {f}")?;
    }
    for (k, v) in &d.summaries {
        writeln!(out, "  {k} = {}", output::num(*v))?;
    }
    Ok(())
}

pub fn run_calibration(study: &Study, over: &RunOverrides) -> Result<(CalibrationReport, PathBuf), CliError> {
    let cal = study
        .calibrate
        .as_ref()
        .ok_or_else(|| CliError::Config("no [calibrate] block".into()))?;
    let replications = over
        .replications
        .or(cal.replications)
        .unwrap_or(study.run.replications);
    let report = calibrate(
        &cal.grid,
        &cal.scenarios,
        &study.trial,
        &study.rules,
        replications,
        over.seed(study),
    )?;
    let dir = over.out_dir(study);
    create_dir(&dir)?;
    let path = dir.join(&cal.report);
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))?;
    Ok((report, path))
}
