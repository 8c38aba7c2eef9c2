//! Acceptance suite: one line per criterion with its verdict, the measured
//! values behind it and the wall time of the study runs it used.
//!
//! Run with `cargo test -p fcalc-harness --test acceptance`. Set `FCALC_ACCEPT`
//! to a comma-separated list of criterion numbers to run a subset.

use fcalc::scenario::{builtin, Built, Scenario};
use fcalc::studies::{run_study, Context, Study};
use fcalc::Report;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

const ALL: [&str; 4] = ["euclidean1d", "euclidean2d", "redundant_line", "grushin3"];
const SEED: u64 = 0;

struct Runner {
    scenarios: BTreeMap<&'static str, (Scenario, Built)>,
    reports: BTreeMap<(&'static str, &'static str), (Report, Duration)>,
    cache: PathBuf,
}

impl Runner {
    fn new() -> Self {
        let cache = std::env::temp_dir().join(format!("fcalc-acceptance-{}", std::process::id()));
        let scenarios = ALL
            .iter()
            .map(|n| {
                let s = builtin(n).expect("built-in scenario");
                let b = s.build().expect("built-in scenario builds");
                (*n, (s, b))
            })
            .collect();
        Self { scenarios, reports: BTreeMap::new(), cache }
    }

    /// Runs a study once per scenario; later calls reuse the report.
    fn report(&mut self, scenario: &'static str, study: Study) -> &(Report, Duration) {
        if !self.reports.contains_key(&(scenario, study.name())) {
            let (s, b) = &self.scenarios[scenario];
            let ctx = Context { scenario: s, built: b, seed: SEED, cache_dir: Some(self.cache.clone()), verbose: false };
            let t = Instant::now();
            let r = run_study(study, &ctx);
            self.reports.insert((scenario, study.name()), (r, t.elapsed()));
        }
        &self.reports[&(scenario, study.name())]
    }
}

/// Verdict of a group of report checks.
struct Outcome {
    passed: bool,
    notes: Vec<String>,
    elapsed: Duration,
}

impl Outcome {
    fn new() -> Self {
        Self { passed: true, notes: Vec::new(), elapsed: Duration::ZERO }
    }

    fn require(&mut self, runner: &mut Runner, scenario: &'static str, study: Study, checks: &[&str]) {
        let (report, elapsed) = runner.report(scenario, study);
        self.elapsed += *elapsed;
        for f in &report.failures {
            self.passed = false;
            self.notes.push(format!("{scenario}: error {f}"));
        }
        for name in checks {
            match report.find(name) {
                Some(c) => {
                    self.passed &= c.passed;
                    let mark = if c.passed { "" } else { "!" };
                    self.notes.push(format!("{scenario}.{name}={:.3e}{mark}", c.value));
                }
                None if report.failures.is_empty() => {
                    self.passed = false;
                    self.notes.push(format!("{scenario}.{name} missing"));
                }
                None => {}
            }
        }
    }

    fn time_limit(&mut self, label: &str, elapsed: Duration, limit: Duration) {
        if elapsed > limit {
            self.passed = false;
            self.notes.push(format!("{label} runtime {:.1}s exceeds {:.0}s!", elapsed.as_secs_f64(), limit.as_secs_f64()));
        }
    }
}

type Criterion = fn(&mut Runner) -> Outcome;

fn euclidean_exactness(r: &mut Runner) -> Outcome {
    let mut o = Outcome::new();
    for s in ["euclidean1d", "euclidean2d"] {
        o.require(r, s, Study::Geometry, &["rho_flat_error", "c_rho_flat", "coarea_residual"]);
    }
    let e = o.elapsed;
    o.time_limit("total", e, Duration::from_secs(30));
    o
}

fn fiber_measures(r: &mut Runner) -> Outcome {
    let mut o = Outcome::new();
    o.require(r, "redundant_line", Study::Geometry, &["fiber_reference"]);
    for s in ALL {
        o.require(r, s, Study::Geometry, &["fiber_symmetry"]);
    }
    let e = o.elapsed;
    o.time_limit("total", e, Duration::from_secs(120));
    o
}

fn condition_scaling(r: &mut Runner) -> Outcome {
    let mut o = Outcome::new();
    for s in ALL {
        let before = o.elapsed;
        o.require(
            r,
            s,
            Study::Conditions,
            &["slope_c1", "slope_c2", "slope_c3", "slope_c4", "c1c3_spread", "c1_over_m_spread"],
        );
        let e = o.elapsed - before;
        o.time_limit(s, e, Duration::from_secs(300));
    }
    o
}

fn almost_orthogonality(r: &mut Runner) -> Outcome {
    let mut o = Outcome::new();
    for s in ALL {
        o.require(r, s, Study::Orthogonality, &["ao_decay_exponent", "ao_band_growth", "ao_diagonal_over_c2_squared"]);
    }
    o
}

fn cotlar_stein(r: &mut Runner) -> Outcome {
    let mut o = Outcome::new();
    for s in ALL {
        o.require(r, s, Study::Orthogonality, &["cotlar_stein"]);
    }
    o
}

fn lp_uniformity(r: &mut Runner) -> Outcome {
    let mut o = Outcome::new();
    for s in ALL {
        o.require(r, s, Study::Lp, &["hbar_uniformity_p1.5", "hbar_uniformity_p2", "hbar_uniformity_p3", "jmax_stability"]);
    }
    o
}

fn marcinkiewicz(r: &mut Runner) -> Outcome {
    let mut o = Outcome::new();
    for s in ALL {
        o.require(r, s, Study::Lp, &["marcinkiewicz_envelope", "weak_type_finite", "weak_type_spread"]);
    }
    o
}

fn negative_order(r: &mut Runner) -> Outcome {
    let mut o = Outcome::new();
    for s in ALL {
        o.require(r, s, Study::Lp, &["negative_order"]);
    }
    o
}

fn flow_transport(r: &mut Runner) -> Outcome {
    let mut o = Outcome::new();
    for s in ALL {
        let before = o.elapsed;
        o.require(r, s, Study::Flow, &["flow_endpoint", "flow_inverse", "liouville_vs_fd", "fiber_difference"]);
        let e = o.elapsed - before;
        o.time_limit(s, e, Duration::from_secs(120));
    }
    o
}

fn hormander(r: &mut Runner) -> Outcome {
    let mut o = Outcome::new();
    for s in ALL {
        o.require(r, s, Study::Orthogonality, &["hormander_finite", "hormander_growth"]);
    }
    o
}

fn main() {
    let criteria: [(&str, Criterion); 10] = [
        ("euclidean exactness", euclidean_exactness),
        ("fiber-measure correctness", fiber_measures),
        ("condition scaling", condition_scaling),
        ("almost-orthogonality decay", almost_orthogonality),
        ("Cotlar-Stein consistency", cotlar_stein),
        ("hbar-uniform L_p bounds", lp_uniformity),
        ("Marcinkiewicz envelope", marcinkiewicz),
        ("negative order", negative_order),
        ("flow transport", flow_transport),
        ("Hormander integral", hormander),
    ];
    let selected: Option<Vec<usize>> = std::env::var("FCALC_ACCEPT")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut runner = Runner::new();
    let mut failed = Vec::new();
    let start = Instant::now();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if selected.as_ref().is_some_and(|s| !s.contains(&n)) {
            continue;
        }
        let o = f(&mut runner);
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        println!(
            "{verdict} criterion {n:>2} {name} ({:.1}s) {}",
            o.elapsed.as_secs_f64(),
            o.notes.join(" ")
        );
        if !o.passed {
            failed.push(n);
        }
    }
    std::fs::remove_dir_all(&runner.cache).ok();
    println!("acceptance: {} failed {:?}, total {:.1}s", failed.len(), failed, start.elapsed().as_secs_f64());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
