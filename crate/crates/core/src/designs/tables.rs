//! Pre-computed decision tables for the interval designs.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trial::TrialConfig;

use super::assisted::{evaluate, Action, IntervalConfig, Snapshot};
use super::DesignKind;

/// Everything an interval rule reads at the current dose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TableKey {
    pub n_complete: usize,
    pub m: usize,
    pub n_pending: usize,
    pub pending_cycles: usize,
    /// R-mTPI2 only: enough consecutive patients to act on complete data.
    pub at_cap: bool,
}

impl TableKey {
    pub fn new(snap: &Snapshot, at_cap: bool) -> Self {
        Self {
            n_complete: snap.n_complete,
            m: snap.m,
            n_pending: snap.n_pending,
            pending_cycles: snap.pending_cycles,
            at_cap,
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            n_complete: self.n_complete,
            m: self.m,
            n_pending: self.n_pending,
            pending_cycles: self.pending_cycles,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTable {
    pub kind: DesignKind,
    entries: BTreeMap<TableKey, Action>,
}

impl DecisionTable {
    /// Every state with at most `max_n` patients at the dose and at most one
    /// cohort per cycle of follow-up pending.
    pub fn build(kind: DesignKind, cfg: &IntervalConfig, trial: &TrialConfig, max_n: usize) -> Result<Self> {
        if !kind.is_model_assisted() {
            return Err(Error::invalid(format!("{kind} has no decision table")));
        }
        cfg.validate(trial.target)?;
        let max_pending = (trial.cohort_size * trial.cycles).min(max_n);
        let caps: &[bool] = if kind == DesignKind::RMtpi2 { &[false, true] } else { &[false] };
        let mut entries = BTreeMap::new();
        for n_pending in 0..=max_pending {
            for n_complete in 0..=(max_n - n_pending) {
                for m in 0..=n_complete {
                    for pending_cycles in 0..=n_pending * (trial.cycles - 1) {
                        for &at_cap in caps {
                            let key = TableKey { n_complete, m, n_pending, pending_cycles, at_cap };
                            entries.insert(key, evaluate(kind, cfg, trial, &key));
                        }
                    }
                }
            }
        }
        Ok(Self { kind, entries })
    }

    pub fn lookup(&self, key: &TableKey) -> Option<Action> {
        self.entries.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TableKey, &Action)> {
        self.entries.iter()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "n_complete,m,n_pending,pending_cycles,at_cap,action")?;
        for (k, a) in &self.entries {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                k.n_complete,
                k.m,
                k.n_pending,
                k.pending_cycles,
                k.at_cap,
                a.label()
            )?;
        }
        Ok(())
    }
}
