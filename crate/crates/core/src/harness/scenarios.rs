//! Named scenarios on the reference dose grid. A, B and C are read from a
//! figure and are approximations; override them with explicit vectors.

use crate::patient::ScenarioSpec;
use crate::trial::DoseGrid;

pub const SCENARIO_NAMES: [&str; 10] = ["A", "B", "C", "D", "P.S.1", "P.S.2", "P.S.3", "P.S.4", "P.S.5", "P.S.6"];

fn p1(name: &str) -> Option<[f64; 6]> {
    Some(match name {
        "A" => [0.30, 0.36, 0.42, 0.48, 0.54, 0.60],
        "B" => [0.10, 0.17, 0.25, 0.30, 0.45, 0.60],
        "C" | "P.S.5" => [0.40, 0.45, 0.50, 0.55, 0.60, 0.65],
        "D" => [0.05, 0.05, 0.05, 0.80, 0.80, 0.80],
        "P.S.1" => [0.30, 0.40, 0.45, 0.50, 0.55, 0.60],
        "P.S.2" => [0.05, 0.07, 0.10, 0.15, 0.20, 0.30],
        "P.S.3" => [0.10, 0.20, 0.30, 0.40, 0.50, 0.60],
        "P.S.4" => [0.15, 0.20, 0.25, 0.30, 0.35, 0.40],
        "P.S.6" => [0.07, 0.09, 0.11, 0.13, 0.15, 0.17],
        _ => return None,
    })
}

pub fn named_scenario(name: &str) -> Option<ScenarioSpec> {
    let p = p1(name)?;
    Some(ScenarioSpec::new(name, p.to_vec(), DoseGrid::reference()).expect("built-in scenarios are valid"))
}

/// Calibration scenarios for a rule setting.
pub fn calibration_scenarios(setting: u8) -> Vec<ScenarioSpec> {
    let n = if setting >= 2 { 6 } else { 4 };
    (1..=n).map(|k| named_scenario(&format!("P.S.{k}")).expect("known")).collect()
}
