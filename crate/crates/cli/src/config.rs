//! Study configuration files.
//!
//! Design, rule and nTTP blocks are partial: their keys are laid over the
//! setting's defaults before the typed parse, so unknown keys are still
//! rejected by the core types.

use std::path::{Path, PathBuf};

use escalate_core::designs::{DesignConfig, DesignKind};
use escalate_core::harness::{calibration_scenarios, named_scenario, SCENARIO_NAMES};
use escalate_core::patient::ScenarioSpec;
use escalate_core::rules::RuleConfig;
use escalate_core::trial::{DoseGrid, TrialConfig};
use serde::Deserialize;
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    #[default]
    None,
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::None => Vec::new(),
            OneOrMany::One(t) => vec![t],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioBlock {
    /// A built-in scenario (A-D, P.S.1-P.S.6).
    pub name: Option<String>,
    pub label: Option<String>,
    pub p1: Option<Vec<f64>>,
    /// Dose grid in MBq.
    pub doses: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunBlock {
    pub replications: u64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub threads: Option<usize>,
    /// Write `results.jsonl`.
    pub results: bool,
}

impl Default for RunBlock {
    fn default() -> Self {
        Self {
            replications: 1000,
            seed: 20240101,
            out_dir: PathBuf::from("out"),
            threads: None,
            results: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateBlock {
    pub design: String,
    /// Scenario names; the calibration set for the rule setting if absent.
    pub scenarios: Option<Vec<String>>,
    /// Partial design tables; the shipped grid if absent.
    pub grid: Option<Vec<toml::Table>>,
    pub replications: Option<u64>,
    /// Report file name inside the output directory.
    #[serde(default = "default_report")]
    pub report: PathBuf,
}

fn default_report() -> PathBuf {
    PathBuf::from("calibration.json")
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub scenario: OneOrMany<ScenarioBlock>,
    #[serde(default)]
    pub design: OneOrMany<toml::Table>,
    #[serde(default)]
    pub rules: toml::Table,
    #[serde(default)]
    pub trial: TrialConfig,
    #[serde(default)]
    pub run: RunBlock,
    /// Weight table and target score for every nTTP design.
    #[serde(default)]
    pub nttp: toml::Table,
    pub calibrate: Option<CalibrateBlock>,
}

/// A fully resolved configuration.
#[derive(Debug, Clone)]
pub struct Study {
    pub scenarios: Vec<ScenarioSpec>,
    pub designs: Vec<DesignConfig>,
    pub rules: RuleConfig,
    pub trial: TrialConfig,
    pub run: RunBlock,
    pub calibrate: Option<Calibration>,
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub grid: Vec<DesignConfig>,
    pub scenarios: Vec<ScenarioSpec>,
    pub replications: Option<u64>,
    pub report: PathBuf,
}

impl Study {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Self::resolve(file)
    }

    fn resolve(file: ConfigFile) -> Result<Self, CliError> {
        let cfg = |m: String| CliError::Config(m);
        let rules = resolve_rules(&file.rules)?;
        file.trial.validate().map_err(|e| cfg(format!("[trial]: {e}")))?;
        rules.validate().map_err(|e| cfg(format!("[rules]: {e}")))?;

        let scenarios = file
            .scenario
            .into_vec()
            .into_iter()
            .enumerate()
            .map(|(i, b)| resolve_scenario(b).map_err(|m| cfg(format!("scenario {}: {m}", i + 1))))
            .collect::<Result<Vec<_>, _>>()?;
        let grid = scenarios.first().map(|s| s.doses.clone()).unwrap_or_else(DoseGrid::reference);
        if let Some(s) = scenarios.iter().find(|s| s.doses != grid) {
            return Err(cfg(format!("scenario {} uses a different dose grid from the first", s.label)));
        }

        let blocks = file.design.into_vec();
        let designs = if blocks.is_empty() {
            DesignKind::ALL
                .iter()
                .map(|&k| overlay_design(&toml::Table::new(), Some(k), &file.nttp, rules.setting))
                .collect::<Result<Vec<_>, _>>()?
        } else {
            blocks
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    overlay_design(t, None, &file.nttp, rules.setting).map_err(|e| prefix(e, &format!("design {}", i + 1)))
                })
                .collect::<Result<Vec<_>, _>>()?
        };
        for d in &designs {
            d.validate(&grid, &file.trial)
                .map_err(|e| cfg(format!("design {}: {e}", d.kind())))?;
        }

        let calibrate = match file.calibrate {
            None => None,
            Some(c) => Some(resolve_calibration(c, &file.nttp, &rules, &grid, &file.trial)?),
        };
        Ok(Self {
            scenarios,
            designs,
            rules,
            trial: file.trial,
            run: file.run,
            calibrate,
        })
    }

    pub fn doses(&self) -> DoseGrid {
        self.scenarios.first().map(|s| s.doses.clone()).unwrap_or_else(DoseGrid::reference)
    }
}

fn prefix(e: CliError, what: &str) -> CliError {
    match e {
        CliError::Config(m) => CliError::Config(format!("{what}: {m}")),
        other => other,
    }
}

fn to_json(t: &toml::Table) -> Result<Value, CliError> {
    serde_json::to_value(t).map_err(|e| CliError::Config(e.to_string()))
}

/// Recursive merge of `over` onto `base`; tables merge, everything else
/// replaces.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn resolve_rules(t: &toml::Table) -> Result<RuleConfig, CliError> {
    let setting = match t.get("setting") {
        None => 1,
        Some(v) => v
            .as_integer()
            .and_then(|n| u8::try_from(n).ok())
            .ok_or_else(|| CliError::Config(format!("[rules] setting: expected 1 or 2, found {v}")))?,
    };
    let mut base = serde_json::to_value(RuleConfig::setting(setting)).expect("rule config serializes");
    merge(&mut base, to_json(t)?);
    serde_json::from_value(base).map_err(|e| CliError::Config(format!("[rules]: {e}")))
}

/// Lays a partial design table over the defaults for its kind.
pub fn overlay_design(
    t: &toml::Table,
    kind: Option<DesignKind>,
    nttp: &toml::Table,
    setting: u8,
) -> Result<DesignConfig, CliError> {
    let kind = match (kind, t.get("kind")) {
        (Some(k), _) => k,
        (None, Some(toml::Value::String(s))) => s.parse::<DesignKind>().map_err(|_| {
            let names: Vec<&str> = DesignKind::ALL.iter().map(|k| k.name()).collect();
            CliError::Config(format!("unknown design kind `{s}`; expected one of {}", names.join(", ")))
        })?,
        (None, Some(v)) => return Err(CliError::Config(format!("kind: expected a string, found {v}"))),
        (None, None) => return Err(CliError::Config("missing field `kind`".into())),
    };
    let mut base = serde_json::to_value(DesignConfig::defaults(kind, setting)).expect("design config serializes");
    if kind == DesignKind::Nttp {
        merge(&mut base, to_json(nttp)?);
    }
    merge(&mut base, to_json(t)?);
    serde_json::from_value(base).map_err(|e| CliError::Config(format!("{kind}: {e}")))
}

fn resolve_scenario(b: ScenarioBlock) -> Result<ScenarioSpec, String> {
    let named = match &b.name {
        Some(n) => Some(named_scenario(n).ok_or_else(|| {
            format!("unknown scenario `{n}`; expected one of {}", SCENARIO_NAMES.join(", "))
        })?),
        None => None,
    };
    let label = b.label.or(b.name).unwrap_or_else(|| "custom".to_string());
    let p1 = match (b.p1, &named) {
        (Some(p), _) => p,
        (None, Some(s)) => s.p1.clone(),
        (None, None) => return Err("needs `name` or `p1`".into()),
    };
    let doses = match b.doses {
        Some(d) => DoseGrid::new(d).map_err(|e| format!("doses: {e}"))?,
        None => DoseGrid::reference(),
    };
    ScenarioSpec::new(label, p1, doses).map_err(|e| e.to_string())
}

fn resolve_calibration(
    c: CalibrateBlock,
    nttp: &toml::Table,
    rules: &RuleConfig,
    doses: &DoseGrid,
    trial: &TrialConfig,
) -> Result<Calibration, CliError> {
    let kind: DesignKind = c
        .design
        .parse()
        .map_err(|_| CliError::Config(format!("[calibrate] design: unknown design `{}`", c.design)))?;
    let grid = match c.grid {
        None => escalate_core::harness::default_grid(kind, rules.setting),
        Some(points) => {
            if points.is_empty() {
                return Err(CliError::Config("[calibrate] grid is empty".into()));
            }
            points
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    if let Some(k) = t.get("kind").and_then(|v| v.as_str()) {
                        if k != kind.name() {
                            return Err(CliError::Config(format!("grid point {}: kind `{k}` differs from `{kind}`", i + 1)));
                        }
                    }
                    overlay_design(t, Some(kind), nttp, rules.setting)
                        .map_err(|e| prefix(e, &format!("[calibrate] grid point {}", i + 1)))
                })
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    for (i, g) in grid.iter().enumerate() {
        g.validate(doses, trial)
            .map_err(|e| CliError::Config(format!("[calibrate] grid point {}: {e}", i + 1)))?;
    }
    let scenarios = match c.scenarios {
        None => calibration_scenarios(rules.setting),
        Some(names) => names
            .iter()
            .map(|n| named_scenario(n).ok_or_else(|| CliError::Config(format!("[calibrate] unknown scenario `{n}`"))))
            .collect::<Result<Vec<_>, _>>()?,
    };
    if scenarios.is_empty() {
        return Err(CliError::Config("[calibrate] scenarios is empty".into()));
    }
    Ok(Calibration {
        grid,
        scenarios,
        replications: c.replications,
        report: c.report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_means_all_designs() {
        let s = Study::parse("").unwrap();
        assert_eq!(s.designs.len(), 8);
        assert!(s.scenarios.is_empty());
        assert_eq!(s.rules.setting, 1);
        assert_eq!(s.designs[2], DesignConfig::defaults(DesignKind::Icsdp, 1));
    }

    #[test]
    fn partial_design_keeps_setting_defaults() {
        let s = Study::parse("[rules]\nsetting = 2\n[[design]]\nkind = \"nttp\"\n[nttp]\ntau_nttp = 0.2\n").unwrap();
        let DesignConfig::Nttp(n) = &s.designs[0] else { panic!() };
        let DesignConfig::Nttp(d) = DesignConfig::defaults(DesignKind::Nttp, 2) else { panic!() };
        assert_eq!(n.tau_nttp, Some(0.2));
        assert_eq!(n.prior, d.prior);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            "[run]\nreplicates = 3\n",
            "[[design]]\nkind = \"tite-crm\"\nsigma = 1.0\n",
            "[rules]\nsetting = 1\nkfold = 2.0\nextra = 1\n",
            "[scenario]\nname = \"A\"\nslope = 1\n",
            "[trial]\ncohort = 3\n",
        ] {
            let e = Study::parse(text).unwrap_err();
            assert!(matches!(e, CliError::Config(_)), "{text}");
        }
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let CliError::Config(m) = Study::parse("[run]\nseed = 1\nreplications = \"x\"\n").unwrap_err() else {
            panic!()
        };
        assert!(m.contains("line 3"), "{m}");
    }

    #[test]
    fn named_scenario_with_override() {
        let s = Study::parse("[[scenario]]\nname = \"D\"\n[[scenario]]\nlabel = \"flat\"\np1 = [0.1, 0.1, 0.1, 0.1, 0.1, 0.1]\n").unwrap();
        assert_eq!(s.scenarios[0].label, "D");
        assert_eq!(s.scenarios[1].label, "flat");
        assert!(Study::parse("[scenario]\nname = \"Z\"\n").is_err());
    }

    #[test]
    fn calibration_grid_resolution() {
        let s = Study::parse("[calibrate]\ndesign = \"pomm\"\n").unwrap();
        let c = s.calibrate.unwrap();
        assert_eq!(c.grid[0], DesignConfig::defaults(DesignKind::Pomm, 1));
        assert_eq!(c.scenarios.len(), 4);
        assert!(Study::parse("[calibrate]\ndesign = \"pomm\"\ngrid = []\n").is_err());
        assert!(Study::parse("[calibrate]\ndesign = \"pomm\"\ngrid = [{ kind = \"nttp\" }]\n").is_err());
    }
}
