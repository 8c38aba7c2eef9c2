//! Study runners. Each study fills a [`Report`]; errors are caught and
//! listed under `failures` instead of aborting the run.

mod conditions;
mod flow;
mod geometry;
mod lp;
mod orthogonality;

use crate::report::Report;
use crate::scenario::{Built, Scenario};
use anyhow::{anyhow, Result};
use fcalc_core::fiber::{FiberMethod, FiberOptions};
use fcalc_core::rng::derive_seed;
use serde_json::json;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    Geometry,
    Conditions,
    Orthogonality,
    Lp,
    Flow,
}

impl Study {
    pub const ALL: [Study; 5] = [Study::Geometry, Study::Conditions, Study::Orthogonality, Study::Lp, Study::Flow];

    pub fn name(self) -> &'static str {
        match self {
            Study::Geometry => "geometry",
            Study::Conditions => "conditions",
            Study::Orthogonality => "orthogonality",
            Study::Lp => "lp",
            Study::Flow => "flow",
        }
    }

    /// Parses a study id; `all` expands to every study.
    pub fn parse_list(id: &str) -> Result<Vec<Study>> {
        if id == "all" {
            return Ok(Self::ALL.to_vec());
        }
        Self::ALL
            .iter()
            .find(|s| s.name() == id)
            .map(|s| vec![*s])
            .ok_or_else(|| anyhow!("unknown study `{id}` (expected geometry, conditions, orthogonality, lp, flow or all)"))
    }
}

/// Everything a study needs besides its own budget.
pub struct Context<'a> {
    pub scenario: &'a Scenario,
    pub built: &'a Built,
    pub seed: u64,
    /// Directory of the metric-table cache; `None` disables caching.
    pub cache_dir: Option<PathBuf>,
    pub verbose: bool,
}

impl Context<'_> {
    fn fiber(&self, key: u64) -> FiberOptions {
        FiberOptions { seed: derive_seed(self.seed, &[0x6669_6272, key]), ..Default::default() }
    }

    fn sub_seed(&self, key: u64) -> u64 {
        derive_seed(self.seed, &[key])
    }

    fn log(&self, study: Study, msg: &str) {
        if self.verbose {
            eprintln!("[{}] {msg}", study.name());
        }
    }
}

pub fn run_study(study: Study, ctx: &Context) -> Report {
    let sc = ctx.scenario;
    let mut report = Report::new(study.name(), &sc.name, &sc.hash(), ctx.seed);
    let chart = &ctx.built.chart;
    let space = chart.space();
    report.put(
        "chart",
        json!({
            "weights": space.weights(),
            "homogeneous_dimension": space.homogeneous_dimension(),
            "homogeneous_norm": "max_k |z_k|^(1/w_k)",
            "d": chart.dim(),
            "fiber_method": FiberMethod::auto(chart.dim(), chart.exp_dim()),
            "epsilon": chart.epsilon(),
            "profile": ctx.built.profile.label,
        }),
    );
    let result = match study {
        Study::Geometry => geometry::run(ctx, &mut report),
        Study::Conditions => conditions::run(ctx, &mut report),
        Study::Orthogonality => orthogonality::run(ctx, &mut report),
        Study::Lp => lp::run(ctx, &mut report),
        Study::Flow => flow::run(ctx, &mut report),
    };
    if let Err(e) = result {
        report.fail(format!("{e:#}"));
    }
    report
}

/// Runs `studies` and writes their files under `out`.
pub fn run_and_write(
    scenario: &Scenario,
    studies: &[Study],
    seed: u64,
    out: &Path,
    use_cache: bool,
    verbose: bool,
) -> Result<Vec<Report>> {
    let built = scenario.build()?;
    let ctx = Context {
        scenario,
        built: &built,
        seed,
        cache_dir: use_cache.then(|| out.join("cache")),
        verbose,
    };
    let mut reports = Vec::new();
    for &s in studies {
        let r = run_study(s, &ctx);
        r.write(out)?;
        reports.push(r);
    }
    Ok(reports)
}

/// `exp(−|ẑ|² / 2σ²)` on `B_V(0, r)` and zero outside, with `ẑ` the
/// coordinates normalised by the ball half-widths.
fn truncated_gaussian(half: Vec<f64>, shift: Vec<f64>, sigma: f64) -> impl Fn(&[f64]) -> f64 + Send + Sync {
    move |z: &[f64]| {
        let mut q = 0.0;
        for k in 0..z.len() {
            let t = z[k] / half[k];
            if t.abs() >= 1.0 {
                return 0.0;
            }
            let s = t - shift[k];
            q += s * s;
        }
        (-q / (2.0 * sigma * sigma)).exp()
    }
}
