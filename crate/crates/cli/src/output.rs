//! Result files. Column order is fixed:
//!
//! - `metrics.csv`: design, scenario, replications, failures, pcs,
//!   benchmark_pcs, no_recommendation, mean_duration_weeks,
//!   sd_duration_weeks, mean_patients, sd_patients, mean_dlt
//! - `allocations.csv`: design, scenario, dose_level, dose_mbq,
//!   mean_patients, recommended
//! - `stops.csv`: design, scenario, reason, percent
//!
//! Percentages (pcs, benchmark_pcs, no_recommendation, recommended, percent)
//! are on a 0-100 scale. Numbers carry 6 significant digits.

use std::io::Write;
use std::path::Path;

use escalate_core::harness::StudyMetrics;
use escalate_core::rules::StopReason;
use escalate_core::trial::DoseGrid;

use crate::error::CliError;

/// `%g`-style rendering with 6 significant digits, independent of locale.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        return format!("{}e{exp}", trim_zeros(mantissa));
    }
    let fixed = format!("{x:.*}", (5 - exp) as usize);
    trim_zeros(&fixed).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn pct(share: f64) -> String {
    num(100.0 * share)
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

pub fn write_metrics(path: &Path, rows: &[StudyMetrics]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    w.write_record([
        "design",
        "scenario",
        "replications",
        "failures",
        "pcs",
        "benchmark_pcs",
        "no_recommendation",
        "mean_duration_weeks",
        "sd_duration_weeks",
        "mean_patients",
        "sd_patients",
        "mean_dlt",
    ])
    .map_err(&err)?;
    for m in rows {
        let none = *m.recommendation_share.last().unwrap_or(&f64::NAN);
        w.write_record([
            m.design.clone(),
            m.scenario.clone(),
            m.replications.to_string(),
            m.failures.to_string(),
            pct(m.pcs),
            pct(m.benchmark_pcs),
            pct(none),
            num(m.mean_duration),
            num(m.sd_duration),
            num(m.mean_patients),
            num(m.sd_patients),
            num(m.mean_dlt),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_allocations(path: &Path, rows: &[StudyMetrics], doses: &DoseGrid) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    w.write_record(["design", "scenario", "dose_level", "dose_mbq", "mean_patients", "recommended"])
        .map_err(&err)?;
    for m in rows {
        for (j, mean) in m.mean_allocations.iter().enumerate() {
            w.write_record([
                m.design.clone(),
                m.scenario.clone(),
                (j + 1).to_string(),
                num(doses.value(j)),
                num(*mean),
                pct(m.recommendation_share[j]),
            ])
            .map_err(&err)?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_stops(path: &Path, rows: &[StudyMetrics]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    w.write_record(["design", "scenario", "reason", "percent"]).map_err(&err)?;
    for m in rows {
        for (reason, p) in StopReason::ALL.iter().zip(&m.stop_percent) {
            w.write_record([m.design.clone(), m.scenario.clone(), reason.label().to_string(), num(*p)])
                .map_err(&err)?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Summary table on stdout, one row per design.
pub fn print_summary(out: &mut impl Write, rows: &[StudyMetrics]) -> std::io::Result<()> {
    writeln!(
        out,
        "{:<10} {:<10} {:>7} {:>7} {:>9} {:>9}",
        "scenario", "design", "pcs%", "bench%", "weeks", "patients"
    )?;
    for m in rows {
        writeln!(
            out,
            "{:<10} {:<10} {:>7.1} {:>7.1} {:>9.1} {:>9.1}",
            m.scenario,
            m.design,
            100.0 * m.pcs,
            100.0 * m.benchmark_pcs,
            m.mean_duration,
            m.mean_patients
        )?;
    }
    Ok(())
}
