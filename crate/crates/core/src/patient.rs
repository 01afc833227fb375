//! Latent-variable patient generator.
//!
//! Each patient carries one uniform latent `z`. With `u = 1 - z`, the patient
//! has a DLT in cycle `s` at a dose exactly when `u` falls in
//! `[p_{s-1}, p_s)` of that dose's cumulative risk ladder, so the same
//! patient behaves coherently across every dose and cycle.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::trial::{CycleOutcome, DoseGrid};

/// Ratio between consecutive conditional cycle hazards.
pub const CYCLE_HAZARD_DECAY: f64 = 1.0 / 3.0;

/// Ground truth for one simulated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub label: String,
    /// Cycle-1 DLT probability per dose.
    pub p1: Vec<f64>,
    pub doses: DoseGrid,
}

/// What counts as a correct trial outcome in a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Truth {
    Mtd(usize),
    /// Every dose is above target: correct is stopping for safety.
    AllUnsafe,
    /// Every dose is below target: correct is stopping because the top
    /// dose is very safe.
    AllSafe,
}

impl ScenarioSpec {
    pub fn new(label: impl Into<String>, p1: Vec<f64>, doses: DoseGrid) -> Result<Self> {
        let spec = Self {
            label: label.into(),
            p1,
            doses,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p1.len() != self.doses.len() {
            return Err(Error::invalid(format!(
                "scenario {} has {} probabilities for {} doses",
                self.label,
                self.p1.len(),
                self.doses.len()
            )));
        }
        if self.p1.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid(format!(
                "scenario {} has a probability outside [0, 1]",
                self.label
            )));
        }
        Ok(())
    }

    pub fn n_doses(&self) -> usize {
        self.p1.len()
    }

    pub fn ladders(&self, cycles: usize) -> Vec<CycleRiskLadder> {
        self.p1
            .iter()
            .map(|&p| cumulative_dlt_prob(p, cycles))
            .collect()
    }

    /// The MTD is the highest dose whose cycle-1 risk is at or below the
    /// cycle-1 target. Safety-stopping scenarios only exist when the
    /// full rule set is active.
    pub fn truth(&self, target_cycle1: f64, safety_rules: bool) -> Truth {
        const EPS: f64 = 1e-9;
        match self.p1.iter().rposition(|&p| p <= target_cycle1 + EPS) {
            None if safety_rules => Truth::AllUnsafe,
            None => Truth::Mtd(0),
            Some(j)
                if safety_rules
                    && j + 1 == self.p1.len()
                    && self.p1[j] < target_cycle1 - EPS =>
            {
                Truth::AllSafe
            }
            Some(j) => Truth::Mtd(j),
        }
    }
}

/// Cumulative DLT probability through each cycle for one dose.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRiskLadder {
    pub p: Vec<f64>,
}

impl CycleRiskLadder {
    pub fn cycles(&self) -> usize {
        self.p.len()
    }

    /// `p_s` for one-based `s`, with `p_0 = 0`.
    pub fn through(&self, s: usize) -> f64 {
        if s == 0 {
            0.0
        } else {
            self.p[s - 1]
        }
    }

    pub fn whole(&self) -> f64 {
        self.p[self.p.len() - 1]
    }
}

/// Conditional hazard `p1 / 3^(s-1)` in cycle `s`, compounded.
pub fn cumulative_dlt_prob(p1: f64, cycles: usize) -> CycleRiskLadder {
    let mut survive = 1.0;
    let mut hazard = p1;
    let mut p = Vec::with_capacity(cycles);
    for _ in 0..cycles {
        survive *= 1.0 - hazard;
        p.push(1.0 - survive);
        hazard *= CYCLE_HAZARD_DECAY;
    }
    CycleRiskLadder { p }
}

/// Binary DLT indicator for cycle `s` (one-based).
pub fn cycle_outcome(z: f64, ladder: &CycleRiskLadder, s: usize) -> Result<bool> {
    if s == 0 || s > ladder.cycles() {
        return Err(Error::invalid(format!("cycle {s} outside follow-up")));
    }
    let u = 1.0 - z;
    if u < ladder.through(s - 1) {
        return Err(Error::invalid(format!(
            "patient already had a DLT before cycle {s}"
        )));
    }
    Ok(u < ladder.through(s))
}

/// Probability that grade 0..=4 is the worst grade seen in cycle 1.
pub fn grade_category_probs(p1: f64) -> [f64; 5] {
    let g4 = p1 / 2.0;
    let g3 = p1 / 2.0;
    let g2 = if p1 > 0.5 { 1.0 - p1 } else { p1 };
    let g1 = if p1 > 0.4 && p1 < 0.5 {
        1.0 - 2.0 * p1
    } else if p1 <= 0.4 {
        p1 / 2.0
    } else {
        0.0
    };
    let g0 = if p1 <= 0.4 { 1.0 - 2.5 * p1 } else { 0.0 };
    [g0, g1, g2, g3, g4]
}

/// Worst grade in cycle `s`.
///
/// The DLT band `[p_{s-1}, p_s)` is split evenly between grades 4 and 3
/// (exactly the cycle-1 stacking), and the survivor band `[p_s, 1)` is split
/// between grades 2, 1, 0 in the cycle-1 proportions. Grade >= 3 therefore
/// coincides with [`cycle_outcome`] in every cycle.
pub fn max_grade_outcome(
    z: f64,
    probs: &[f64; 5],
    s: usize,
    ladder: &CycleRiskLadder,
) -> Result<u8> {
    let dlt = cycle_outcome(z, ladder, s)?;
    let u = 1.0 - z;
    let lo = ladder.through(s - 1);
    let hi = ladder.through(s);
    if dlt {
        return Ok(if u < lo + (hi - lo) / 2.0 { 4 } else { 3 });
    }
    let survivors = probs[0] + probs[1] + probs[2];
    if survivors <= 0.0 {
        return Ok(0);
    }
    let span = 1.0 - hi;
    let g2_top = hi + span * probs[2] / survivors;
    let g1_top = g2_top + span * probs[1] / survivors;
    Ok(if u < g2_top {
        2
    } else if u < g1_top {
        1
    } else {
        0
    })
}

/// All (g1, g2, g3) in {0..=4}^3 whose maximum is `max_grade`, in
/// lexicographic order.
pub fn combos_with_max(max_grade: u8) -> Vec<[u8; 3]> {
    let mut out = Vec::new();
    for a in 0..=max_grade {
        for b in 0..=max_grade {
            for c in 0..=max_grade {
                if a.max(b).max(c) == max_grade {
                    out.push([a, b, c]);
                }
            }
        }
    }
    out
}

/// Uniform pick from [`combos_with_max`] driven by `aux` in [0, 1).
pub fn type_grade_combo(max_grade: u8, aux: f64) -> [u8; 3] {
    let m = u32::from(max_grade);
    let size = (m + 1).pow(3) - m.pow(3);
    let mut k = (aux * f64::from(size)) as u32;
    k = k.min(size - 1);
    // walk the lexicographic enumeration without allocating
    for a in 0..=max_grade {
        for b in 0..=max_grade {
            for c in 0..=max_grade {
                if a.max(b).max(c) == max_grade {
                    if k == 0 {
                        return [a, b, c];
                    }
                    k -= 1;
                }
            }
        }
    }
    unreachable!("combo index out of range")
}

/// Per-type grade weights for the normalized total toxicity profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NttpWeightsRaw", into = "NttpWeightsRaw")]
pub struct NttpWeights {
    w: [[f64; 5]; 3],
    norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NttpWeightsRaw {
    pub renal: [f64; 5],
    pub haematological: [f64; 5],
    pub neurological: [f64; 5],
}

impl NttpWeights {
    pub fn new(w: [[f64; 5]; 3]) -> Result<Self> {
        for row in &w {
            if row[0] != 0.0 {
                return Err(Error::invalid("nTTP weight for grade 0 must be 0"));
            }
            if row.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::invalid("nTTP weights must be nonnegative"));
            }
            if row.windows(2).any(|p| p[1] < p[0]) {
                return Err(Error::invalid("nTTP weights must be nondecreasing in grade"));
            }
        }
        let norm = w.iter().map(|row| row[4] * row[4]).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::invalid("nTTP weights give a zero normalization"));
        }
        Ok(Self { w, norm })
    }

    pub fn table(&self) -> &[[f64; 5]; 3] {
        &self.w
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }
}

impl Default for NttpWeights {
    /// Renal, haematological, neurological rows.
    fn default() -> Self {
        Self::new([
            [0.0, 0.5, 0.75, 1.0, 1.5],
            [0.0, 0.0, 0.0, 0.5, 1.0],
            [0.0, 0.5, 0.75, 1.0, 1.5],
        ])
        .expect("default weights are valid")
    }
}

impl TryFrom<NttpWeightsRaw> for NttpWeights {
    type Error = Error;

    fn try_from(raw: NttpWeightsRaw) -> Result<Self> {
        Self::new([raw.renal, raw.haematological, raw.neurological])
    }
}

impl From<NttpWeights> for NttpWeightsRaw {
    fn from(w: NttpWeights) -> Self {
        Self {
            renal: w.w[0],
            haematological: w.w[1],
            neurological: w.w[2],
        }
    }
}

pub fn nttp_value(type_grades: [u8; 3], weights: &NttpWeights) -> f64 {
    let ss: f64 = type_grades
        .iter()
        .zip(weights.w.iter())
        .map(|(&g, row)| row[g as usize].powi(2))
        .sum();
    ss.sqrt() / weights.norm
}

/// Expected cycle-1 nTTP at a dose with cycle-1 risk `p1`.
pub fn expected_nttp(p1: f64, weights: &NttpWeights) -> f64 {
    grade_category_probs(p1)
        .iter()
        .enumerate()
        .map(|(g, &pg)| {
            let combos = combos_with_max(g as u8);
            let mean = combos.iter().map(|c| nttp_value(*c, weights)).sum::<f64>()
                / combos.len() as f64;
            pg * mean
        })
        .sum()
}

/// Latent variables for one replication, shared by every design.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientStream {
    pub z: Vec<f64>,
    seed: u64,
    replication: u64,
}

impl PatientStream {
    pub fn generate(seed: u64, replication: u64, n: usize) -> Self {
        let mut rng = rng::stream(seed, Domain::Latent, [replication, 0, 0]);
        let z = (0..n)
            .map(|_| rng.sample::<f64, _>(rand::distr::Open01))
            .collect();
        Self {
            z,
            seed,
            replication,
        }
    }

    pub fn from_latents(z: Vec<f64>, seed: u64, replication: u64) -> Self {
        Self {
            z,
            seed,
            replication,
        }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Auxiliary uniform for the type/grade pick of `patient` in `cycle`.
    pub fn combo_aux(&self, patient: usize, cycle: usize) -> f64 {
        rng::stream(
            self.seed,
            Domain::Combo,
            [self.replication, patient as u64, cycle as u64],
        )
        .random::<f64>()
    }

    /// Digest of the latent sequence.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for z in &self.z {
            h.update(z.to_bits().to_le_bytes());
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Outcome generator for one scenario: ladders and grade probabilities per dose.
#[derive(Debug, Clone)]
pub struct OutcomeModel {
    ladders: Vec<CycleRiskLadder>,
    grades: Vec<[f64; 5]>,
}

impl OutcomeModel {
    pub fn new(scenario: &ScenarioSpec, cycles: usize) -> Self {
        Self {
            ladders: scenario.ladders(cycles),
            grades: scenario.p1.iter().map(|&p| grade_category_probs(p)).collect(),
        }
    }

    pub fn ladder(&self, level: usize) -> &CycleRiskLadder {
        &self.ladders[level]
    }

    /// Full graded outcome for patient `id` with latent `z` at `level` in
    /// one-based cycle `s`.
    pub fn outcome(
        &self,
        stream: &PatientStream,
        id: usize,
        level: usize,
        s: usize,
    ) -> Result<CycleOutcome> {
        let z = stream.z[id];
        let grade = max_grade_outcome(z, &self.grades[level], s, &self.ladders[level])?;
        let combo = type_grade_combo(grade, stream.combo_aux(id, s));
        Ok(CycleOutcome::from_type_grades(combo))
    }
}

/// Per-dose empirical whole-follow-up DLT rate when every patient in the
/// stream is observed at every dose.
pub fn benchmark_rates(stream: &PatientStream, scenario: &ScenarioSpec, cycles: usize) -> Vec<f64> {
    let n = stream.len().max(1) as f64;
    scenario
        .ladders(cycles)
        .iter()
        .map(|ladder| {
            let p = ladder.whole();
            stream.z.iter().filter(|&&z| 1.0 - z < p).count() as f64 / n
        })
        .collect()
}

/// Dose whose empirical rate is closest to `target`. Doses with equal
/// rates cannot be told apart, so a tie at or below the target goes to the
/// highest such dose and a tie above it to the lowest.
pub fn benchmark_select(
    stream: &PatientStream,
    scenario: &ScenarioSpec,
    target: f64,
    cycles: usize,
) -> usize {
    let rates = benchmark_rates(stream, scenario, cycles);
    let best = argmin_distance(&rates, target);
    if rates[best] <= target {
        let d = (rates[best] - target).abs();
        (best..rates.len()).rev().find(|&j| ((rates[j] - target).abs() - d).abs() <= 1e-12).unwrap_or(best)
    } else {
        best
    }
}

pub(crate) fn argmin_distance(values: &[f64], target: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, v) in values.iter().enumerate() {
        let d = (v - target).abs();
        if d < best_d - 1e-12 {
            best = j;
            best_d = d;
        }
    }
    best
}
