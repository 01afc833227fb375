//! Acceptance run: one PASS/FAIL line per criterion. Study-level checks use
//! 1000 replications with a fixed seed, so this target takes several minutes.

use std::fs;
use std::process::{Command, ExitCode};

use escalate_core::designs::assisted::{boin_boundaries, evaluate, Action, IntervalConfig};
use escalate_core::designs::crm::{posterior_mean, TiteCrmConfig};
use escalate_core::designs::{DecisionTable, DesignConfig, DesignKind};
use escalate_core::harness::{named_scenario, run_replications, StudyPlan, TrialResult};
use escalate_core::kernels::pava::pava_isotonic;
use escalate_core::patient::{cumulative_dlt_prob, grade_category_probs, OutcomeModel, PatientStream, ScenarioSpec};
use escalate_core::rules::{hard_safety_excluded, RuleConfig};
use escalate_core::trial::{DoseGrid, TrialConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Beta, ContinuousCDF};

const SEED: u64 = 20240101;
const REPS: u64 = 1000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn criterion_1() -> Outcome {
    let p3 = cumulative_dlt_prob(0.3, 3).whole();
    let g03 = grade_category_probs(0.3);
    let g06 = grade_category_probs(0.6);
    let ex1 = [0.25, 0.15, 0.3, 0.15, 0.15];
    let ex2 = [0.0, 0.0, 0.4, 0.3, 0.3];
    let grades_ok = g03.iter().zip(ex1).chain(g06.iter().zip(ex2)).all(|(a, b)| close(*a, b, 1e-12));
    let (le, ld) = boin_boundaries(0.3128, 0.5083, 0.391);
    let pass = close(p3, 0.391, 1e-3) && grades_ok && close(le, 0.3512, 5e-4) && close(ld, 0.4492, 5e-4);
    outcome(
        pass,
        format!("p3(0.3) = {p3:.4}; grades(0.3) = {g03:?}; grades(0.6) = {g06:?}; boin = ({le:.4}, {ld:.4})"),
    )
}

fn criterion_2() -> Outcome {
    let rules = RuleConfig::setting(2);
    let fires = [(3, 3), (4, 6), (5, 9)].iter().all(|&(m, n)| hard_safety_excluded(m, n, &rules));
    let quiet = [(2, 3), (3, 6), (4, 9)].iter().all(|&(m, n)| !hard_safety_excluded(m, n, &rules));
    outcome(fires && quiet, format!("fires at 3/3, 4/6, 5/9: {fires}; silent at 2/3, 3/6, 4/9: {quiet}"))
}

fn criterion_3() -> Outcome {
    let n = 100_000;
    let scenario = ScenarioSpec::new("flat", vec![0.3; 6], DoseGrid::reference()).unwrap();
    let model = OutcomeModel::new(&scenario, 3);
    let stream = PatientStream::generate(SEED, 0, n);
    let (mut dlt1, mut dlt3, mut grade3, mut dlt_cycles, mut mismatch) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for id in 0..n {
        for s in 1..=3 {
            let o = model.outcome(&stream, id, 0, s).unwrap();
            grade3 += (o.max_grade >= 3) as usize;
            dlt_cycles += o.dlt as usize;
            mismatch += ((o.type_grades.iter().max().copied().unwrap_or(0) >= 3) != o.dlt) as usize;
            if o.dlt {
                dlt1 += (s == 1) as usize;
                dlt3 += 1;
                break;
            }
        }
    }
    let r1 = dlt1 as f64 / n as f64;
    let r3 = dlt3 as f64 / n as f64;
    let pass = close(r1, 0.300, 0.005) && close(r3, 0.391, 0.005) && grade3 == dlt_cycles && mismatch == 0;
    outcome(
        pass,
        format!("cycle-1 rate {r1:.4}, 3-cycle rate {r3:.4}, grade>=3 cycles {grade3} = DLT cycles {dlt_cycles}"),
    )
}

/// Midpoint rule on a million nodes with an independently written power
/// model likelihood.
fn crm_oracle(skeleton: &[f64], sigma2: f64, data: &[(usize, bool, f64)]) -> f64 {
    let half = 10.0 * sigma2.sqrt();
    let n = 1_000_000;
    let h = 2.0 * half / n as f64;
    let lp = |b: f64| {
        let mut l = -b * b / (2.0 * sigma2);
        for &(j, y, w) in data {
            let f = skeleton[j].powf(b.exp());
            l += if y { (w * f).ln() } else { (1.0 - w * f).ln() };
        }
        l
    };
    let grid: Vec<(f64, f64)> = (0..n).map(|i| -half + h * (i as f64 + 0.5)).map(|b| (b, lp(b))).collect();
    let top = grid.iter().map(|g| g.1).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut s) = (0.0, 0.0);
    for (b, l) in grid {
        let w = (l - top).exp();
        z += w;
        s += w * b;
    }
    s / z
}

/// Minimum weighted squared error over contiguous partitions whose block
/// means do not decrease.
fn pava_brute(y: &[f64], w: &[f64]) -> Vec<f64> {
    let j = y.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for cuts in 0u32..(1 << (j - 1)) {
        let mut fit = vec![0.0; j];
        let mut start = 0;
        let mut means = Vec::new();
        for end in 1..=j {
            if end == j || cuts & (1 << (end - 1)) != 0 {
                let ws: f64 = w[start..end].iter().sum();
                let m = (start..end).map(|k| w[k] * y[k]).sum::<f64>() / ws;
                fit[start..end].iter_mut().for_each(|f| *f = m);
                means.push(m);
                start = end;
            }
        }
        if means.windows(2).any(|p| p[1] < p[0] - 1e-12) {
            continue;
        }
        let sse: f64 = (0..j).map(|k| w[k] * (y[k] - fit[k]).powi(2)).sum();
        if best.as_ref().is_none_or(|b| sse < b.0 - 1e-12) {
            best = Some((sse, fit));
        }
    }
    best.unwrap().1
}

fn boin_oracle(cfg: &IntervalConfig, n_complete: usize, m: usize, n_pending: usize, pending_cycles: usize) -> Vec<Action> {
    let (target, s) = (0.391, 3.0);
    let n_eff = n_complete as f64 + pending_cycles as f64 / s;
    if n_eff == 0.0 {
        return vec![Action::Stay];
    }
    let boundary = |t: f64| ((1.0 - t) / (1.0 - target)).ln() / (target * (1.0 - t) / (t * (1.0 - target))).ln();
    let p = m as f64 / n_eff;
    let treated = (n_complete + n_pending) as f64;
    if p >= boundary(cfg.tau2) {
        vec![Action::DeEscalate]
    } else if p <= boundary(cfg.tau1) && n_eff * 3.0 >= treated - 1e-9 {
        vec![Action::Escalate]
    } else {
        vec![Action::Stay]
    }
}

/// Keyboard decision from statrs Beta masses; every action consistent with
/// a near-tie is accepted.
fn keyboard_oracle(cfg: &IntervalConfig, n: f64, m: f64) -> Vec<Action> {
    let beta = Beta::new(cfg.prior_alpha + m, cfg.prior_beta + (n - m).max(0.0)).unwrap();
    let mass = |lo: f64, hi: f64| beta.cdf(hi) - beta.cdf(lo);
    let width = cfg.tau2 - cfg.tau1;
    let target = mass(cfg.tau1, cfg.tau2);
    let mut below = 0.0f64;
    let mut k = 1.0;
    while cfg.tau1 - (k - 1.0) * width > 0.0 {
        below = below.max(mass((cfg.tau1 - k * width).max(0.0), cfg.tau1 - (k - 1.0) * width));
        k += 1.0;
    }
    let mut above = 0.0f64;
    k = 1.0;
    while cfg.tau2 + (k - 1.0) * width < 1.0 {
        above = above.max(mass(cfg.tau2 + (k - 1.0) * width, (cfg.tau2 + k * width).min(1.0)));
        k += 1.0;
    }
    let tol = 1e-9;
    let mut ok = Vec::new();
    if target >= below.max(above) - tol {
        ok.push(Action::Stay);
    }
    if above > target - tol && above >= below - tol {
        ok.push(Action::DeEscalate);
    }
    if below > target - tol && below >= above - tol {
        ok.push(Action::Escalate);
    }
    ok
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let cfg = TiteCrmConfig::default();
    let mut worst_crm = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(1..=30);
        let data: Vec<(usize, bool, f64)> = (0..n)
            .map(|_| {
                let dlt = rng.random_bool(0.3);
                let w = if dlt { 1.0 } else { [1.0 / 3.0, 2.0 / 3.0, 1.0][rng.random_range(0..3)] };
                (rng.random_range(0..6), dlt, w)
            })
            .collect();
        let got = posterior_mean(&cfg, &data).unwrap();
        worst_crm = worst_crm.max((got - crm_oracle(&cfg.skeleton, cfg.sigma2, &data)).abs());
    }

    let mut worst_pava = 0.0f64;
    for _ in 0..1000 {
        let j = rng.random_range(1..=4);
        let y: Vec<f64> = (0..j).map(|_| rng.random::<f64>()).collect();
        let w: Vec<f64> = (0..j).map(|_| rng.random_range(0.1..5.0)).collect();
        let got = pava_isotonic(&y, &w).unwrap();
        let want = pava_brute(&y, &w);
        for (a, b) in got.iter().zip(&want) {
            worst_pava = worst_pava.max((a - b).abs());
        }
    }

    let trial = TrialConfig::default();
    let (mut entries, mut table_live, mut live_oracle) = (0usize, 0usize, 0usize);
    for kind in [DesignKind::TiteBoin, DesignKind::TiteMtpi2, DesignKind::RMtpi2] {
        let cfg = match DesignConfig::defaults(kind, 1) {
            DesignConfig::TiteBoin(c) | DesignConfig::TiteMtpi2(c) | DesignConfig::RMtpi2(c) => c,
            _ => unreachable!(),
        };
        let table = DecisionTable::build(kind, &cfg, &trial, 12).unwrap();
        for (key, action) in table.iter() {
            entries += 1;
            let live = evaluate(kind, &cfg, &trial, key);
            table_live += (live != *action) as usize;
            let snap = key.snapshot();
            let n_eff = snap.n_complete as f64 + snap.pending_cycles as f64 / 3.0;
            let treated = (snap.n_complete + snap.n_pending) as f64;
            let allowed = match kind {
                DesignKind::TiteBoin => boin_oracle(&cfg, snap.n_complete, snap.m, snap.n_pending, snap.pending_cycles),
                DesignKind::TiteMtpi2 => keyboard_oracle(&cfg, n_eff, snap.m as f64)
                    .into_iter()
                    .map(|a| {
                        if a == Action::Escalate && snap.n_pending as f64 > 0.5 * treated {
                            Action::Suspend
                        } else {
                            a
                        }
                    })
                    .collect(),
                _ => {
                    let best = keyboard_oracle(&cfg, treated, snap.m as f64);
                    let worst = keyboard_oracle(&cfg, treated, (snap.m + snap.n_pending) as f64);
                    let mut v: Vec<Action> = best.iter().filter(|a| worst.contains(a)).copied().collect();
                    if best.iter().any(|a| !worst.contains(a)) || worst.iter().any(|a| !best.contains(a)) {
                        if key.at_cap {
                            v.extend(keyboard_oracle(&cfg, snap.n_complete as f64, snap.m as f64));
                        } else {
                            v.push(Action::Suspend);
                        }
                    }
                    v
                }
            };
            live_oracle += (!allowed.contains(&live)) as usize;
        }
    }
    let pass = worst_crm <= 1e-5 && worst_pava <= 1e-9 && table_live == 0 && live_oracle == 0;
    outcome(
        pass,
        format!(
            "CRM max |diff| {worst_crm:.2e} over 20 histories; PAVA max |diff| {worst_pava:.2e} over 1000 inputs; \
             {entries} table entries, {table_live} table/live and {live_oracle} live/oracle mismatches"
        ),
    )
}

struct Study {
    design: DesignKind,
    scenario: &'static str,
    results: Vec<TrialResult>,
}

impl Study {
    fn ok(&self) -> impl Iterator<Item = &TrialResult> {
        self.results.iter().filter(|r| r.failure.is_none())
    }

    fn share(&self, f: impl Fn(&TrialResult) -> bool) -> f64 {
        let n = self.ok().count() as f64;
        100.0 * self.ok().filter(|r| f(r)).count() as f64 / n
    }

    fn pcs(&self) -> f64 {
        self.share(|r| r.correct)
    }

    fn mean(&self, f: impl Fn(&TrialResult) -> f64) -> f64 {
        let n = self.ok().count() as f64;
        self.ok().map(f).sum::<f64>() / n
    }

    fn duration(&self) -> f64 {
        self.mean(|r| r.duration_weeks)
    }

    fn patients(&self) -> f64 {
        self.mean(|r| r.n_patients as f64)
    }

    fn unsafe_stops(&self) -> f64 {
        self.share(|r| r.stop_reasons.iter().any(|s| s.is_unsafe_stop()))
    }
}

fn run(design: DesignKind, scenario: &'static str, setting: u8) -> Study {
    let plan = StudyPlan {
        scenario: named_scenario(scenario).unwrap(),
        design: DesignConfig::defaults(design, setting),
        trial: TrialConfig::default(),
        rules: RuleConfig::setting(setting),
        replications: REPS,
        seed: SEED,
    };
    let results = run_replications(&plan).unwrap();
    Study { design, scenario, results }
}

fn find<'a>(studies: &'a [Study], design: DesignKind, scenario: &str) -> &'a Study {
    studies.iter().find(|s| s.design == design && s.scenario == scenario).unwrap()
}

fn criterion_5(s1: &[Study]) -> Outcome {
    use DesignKind::*;
    let a = |d| find(s1, d, "A").pcs();
    let b = |d| find(s1, d, "B").pcs();
    let (crm2, nttp, crm, pomm) = (a(TiteCrm2), a(Nttp), a(TiteCrm), a(Pomm));
    let order = crm2 > nttp.max(crm) && (nttp - crm).abs() <= 10.0 && nttp.min(crm) - pomm >= 15.0;
    let a_ok = order && (80.0..=92.0).contains(&crm2) && (33.0..=49.0).contains(&pomm);
    let b_pomm = b(Pomm);
    let b_top = DesignKind::ALL.iter().all(|&d| d == Pomm || b(d) < b_pomm);
    let b_ok = b_top && (54.0..=70.0).contains(&b_pomm) && (40.0..=54.0).contains(&b(Icsdp));
    let d: Vec<f64> = [TiteBoin, TiteMtpi2, RMtpi2].iter().map(|&k| find(s1, k, "D").pcs()).collect();
    let d_ok = d.iter().all(|&p| p >= 78.0);
    let b_all: Vec<String> = DesignKind::ALL.iter().map(|&k| format!("{}={:.1}", k, b(k))).collect();
    outcome(
        a_ok && b_ok && d_ok,
        format!(
            "A: crm2 {crm2:.1} nttp {nttp:.1} crm {crm:.1} pomm {pomm:.1} (ordering {order}); B: {} ; D assisted: {:.1}/{:.1}/{:.1}",
            b_all.join(" "),
            d[0],
            d[1],
            d[2]
        ),
    )
}

/// Setting 1 mean duration and patients, scenarios A-D, designs in
/// `DesignKind::ALL` order.
const REFERENCE_DURATION: [[f64; 8]; 4] = [
    [39.0, 36.0, 46.0, 52.0, 32.0, 40.0, 46.0, 50.0],
    [55.0, 53.0, 55.0, 55.0, 44.0, 57.0, 81.0, 95.0],
    [34.0, 32.0, 44.0, 52.0, 31.0, 35.0, 37.0, 37.0],
    [63.0, 57.0, 57.0, 55.0, 56.0, 49.0, 85.0, 100.0],
];
const REFERENCE_PATIENTS: [[f64; 8]; 4] = [
    [14.0, 12.0, 17.0, 20.0, 10.0, 19.0, 15.0, 15.0],
    [22.0, 21.0, 22.0, 22.0, 16.0, 26.0, 21.0, 23.0],
    [11.0, 10.0, 16.0, 20.0, 10.0, 17.0, 13.0, 12.0],
    [26.0, 23.0, 23.0, 22.0, 23.0, 24.0, 24.0, 25.0],
];

fn criterion_6(s1: &[Study]) -> Outcome {
    let mut misses = Vec::new();
    let mut cells = 0;
    for (i, sc) in ["A", "B", "C", "D"].iter().enumerate() {
        for (j, &k) in DesignKind::ALL.iter().enumerate() {
            let st = find(s1, k, sc);
            for (what, got, want) in [("weeks", st.duration(), REFERENCE_DURATION[i][j]), ("patients", st.patients(), REFERENCE_PATIENTS[i][j])] {
                cells += 1;
                if (got - want).abs() > 0.15 * want {
                    misses.push(format!("{k} {sc} {what} {got:.1} vs {want}"));
                }
            }
        }
    }
    let mut ratios = Vec::new();
    let mut ratio_ok = true;
    for sc in ["B", "D"] {
        let model: Vec<f64> = DesignKind::ALL
            .iter()
            .filter(|k| !k.is_model_assisted())
            .map(|&k| find(s1, k, sc).duration())
            .collect();
        let base = model.iter().sum::<f64>() / model.len() as f64;
        for k in [DesignKind::TiteMtpi2, DesignKind::RMtpi2] {
            let r = find(s1, k, sc).duration() / base;
            ratio_ok &= r >= 1.5;
            ratios.push(format!("{k} {sc} {r:.2}x"));
        }
    }
    let nttp_a = find(s1, DesignKind::Nttp, "A");
    let r_d = find(s1, DesignKind::RMtpi2, "D");
    outcome(
        misses.is_empty() && ratio_ok,
        format!(
            "nttp A {:.1} weeks / {:.1} patients; r-mtpi2 D {:.1} weeks; {}/{cells} cells within 15%{}; duration ratios {}",
            nttp_a.duration(),
            nttp_a.patients(),
            r_d.duration(),
            cells - misses.len(),
            if misses.is_empty() { String::new() } else { format!(" (misses: {})", misses.join("; ")) },
            ratios.join(", ")
        ),
    )
}

fn criterion_7(s2: &[Study]) -> Outcome {
    let crm2 = find(s2, DesignKind::TiteCrm2, "C").unsafe_stops();
    let nttp = find(s2, DesignKind::Nttp, "C").unsafe_stops();
    let icsdp = find(s2, DesignKind::Icsdp, "C").unsafe_stops();
    let pass = close(crm2, 73.0, 8.0) && close(nttp, 72.0, 8.0) && icsdp <= 40.0;
    outcome(pass, format!("unsafe stops: tite-crm2 {crm2:.1}% (73), nttp {nttp:.1}% (72), icsdp {icsdp:.1}% (<= 40)"))
}

fn criterion_8(s1: &[Study]) -> Outcome {
    let a: Vec<&Study> = s1.iter().filter(|s| s.scenario == "A").collect();
    let mut hash_mismatch = 0;
    for rep in 0..REPS as usize {
        let direct = PatientStream::generate(SEED, rep as u64, TrialConfig::default().max_patients).hash();
        hash_mismatch += a.iter().filter(|s| s.results[rep].stream_hash != direct).count();
    }

    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("s.toml"), "[[scenario]]\nname = \"D\"\n[[scenario]]\nname = \"C\"\n[rules]\nsetting = 2\n[run]\nreplications = 60\nresults = false\n").unwrap();
    let sim = |threads: &str, out: &str| {
        let status = Command::new(env!("CARGO_BIN_EXE_escalate"))
            .current_dir(d)
            .env_remove("ESCALATE_THREADS")
            .args(["simulate", "--config", "s.toml", "--threads", threads, "--out-dir", out])
            .output()
            .unwrap()
            .status;
        assert!(status.success());
        fs::read(d.join(out).join("metrics.csv")).unwrap()
    };
    let one = sim("1", "t1");
    let again = sim("1", "t1b");
    let four = sim("4", "t4");
    let bytes_ok = one == again && one == four;
    outcome(
        hash_mismatch == 0 && bytes_ok,
        format!(
            "{hash_mismatch} stream-hash mismatches over {} designs x {REPS} replications; metrics.csv identical for 1, 1 and 4 threads: {bytes_ok}",
            a.len()
        ),
    )
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut report: Vec<(usize, &str, Outcome)> = vec![
        (1, "deterministic reference values", criterion_1()),
        (2, "hard-safety boundary", criterion_2()),
        (3, "generator statistics", criterion_3()),
        (4, "oracle equivalence", criterion_4()),
    ];
    let mut s1 = Vec::new();
    for sc in ["A", "B", "C", "D"] {
        for k in DesignKind::ALL {
            s1.push(run(k, sc, 1));
        }
    }
    let s2: Vec<Study> = [DesignKind::TiteCrm2, DesignKind::Nttp, DesignKind::Icsdp]
        .iter()
        .map(|&k| run(k, "C", 2))
        .collect();
    report.push((5, "headline PCS comparisons", criterion_5(&s1)));
    report.push((6, "size metrics", criterion_6(&s1)));
    report.push((7, "setting 2 scenario C safety", criterion_7(&s2)));
    report.push((8, "common random numbers", criterion_8(&s1)));

    report.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (n, name, o) in &report {
        println!("criterion {n} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += (!o.pass) as usize;
    }
    println!("acceptance: {} passed, {failed} failed", report.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
