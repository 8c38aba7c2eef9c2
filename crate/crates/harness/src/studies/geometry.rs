use super::{truncated_gaussian, Context, Study};
use crate::cache::metric_table;
use crate::report::{Check, Report};
use anyhow::Result;
use fcalc_core::chart::BoxRegion;
use fcalc_core::fiber::{fiber_quadrature, fiber_symmetry_check, tube_convergence, verify_coarea, FiberMethod};
use fcalc_core::metric::{measured_metric_constants, MetricSampling, ReachOptions};
use rand::Rng;
use serde_json::json;

pub(super) fn run(ctx: &Context, rep: &mut Report) -> Result<()> {
    let s = &ctx.scenario.study;
    let chart = &*ctx.built.chart;
    let space = chart.space();
    let d = chart.dim();
    let flat = ctx.scenario.is_flat();

    let (table, status) = metric_table(ctx.scenario, chart, ctx.cache_dir.as_deref())?;
    ctx.log(Study::Geometry, &format!("metric table of {} points: {status:?}", table.len()));
    let c_rho = table.quasi_triangle_constant();
    rep.put(
        "metric_table",
        json!({
            "per_axis": s.metric_grid,
            "fraction": s.metric_fraction,
            "tol": s.metric_tol,
            "points": table.len(),
            "unreachable_fraction": table.unreachable_fraction(),
        }),
    );
    rep.put("c_rho", c_rho);
    rep.check(Check::at_most("rho_asymmetry", table.asymmetry(), 1e-6));
    if flat {
        let mut worst: f64 = 0.0;
        for i in 0..table.len() {
            for j in 0..table.len() {
                let diff: Vec<f64> = table.points[j].iter().zip(&table.points[i]).map(|(a, b)| a - b).collect();
                worst = worst.max((table.get(i, j) - space.norm(&diff)).abs());
            }
        }
        rep.check(Check::at_most("rho_flat_error", worst, 1e-6).hard());
        rep.check(Check::within("c_rho_flat", c_rho, 1.0, 0.05).hard());
    }

    let region = {
        let c = chart.domain().center();
        let h: Vec<f64> = chart.domain().half_widths().iter().map(|v| v * s.metric_fraction).collect();
        BoxRegion::centered(&c, &h)
    };
    let sampling = MetricSampling {
        triples: 0,
        volume_centers: 2,
        volume_grid: if d == 1 { 64 } else { 48 },
        radius: 0.4 * chart.epsilon().min(1.0),
        tol: s.metric_tol,
        seed: ctx.sub_seed(0x6d75),
    };
    let reach = ReachOptions { seed: ctx.sub_seed(0x7265), ..Default::default() };
    let c_mu = measured_metric_constants(chart, &region, &sampling, &reach)?.c_mu;
    rep.put("c_mu", c_mu);
    if flat {
        let expect = 2f64.powi(space.homogeneous_dimension() as i32);
        rep.check(Check::within("c_mu_flat", c_mu, expect, 0.1 * expect));
    }

    let fopts = ctx.fiber(1);
    let x = &s.center;
    let gr = 0.5 * chart.epsilon().min(1.0);
    let half = space.ball_half_widths(gr);
    let g = truncated_gaussian(half.clone(), vec![0.0; half.len()], 1.0 / 6.0);
    let bx = chart.image_box(x, gr)?;
    let (bc, bh) = (bx.center(), bx.half_widths());
    let u = move |y: &[f64]| -> f64 {
        let q: f64 = (0..y.len()).map(|k| ((y[k] - bc[k] - 0.1 * bh[k]) / (0.6 * bh[k])).powi(2)).sum();
        (-q).exp()
    };
    let co = verify_coarea(chart, x, &g, gr, &u, s.coarea_nodes, &fopts)?;
    let rel = co.residual / co.lhs.abs();
    rep.put("coarea", json!({"lhs": co.lhs, "rhs": co.rhs, "relative_residual": rel, "nodes": s.coarea_nodes}));
    rep.check(Check::at_most("coarea_residual", rel, if flat { 1e-6 } else { 1e-3 }));

    if let Some(r) = &s.fiber_reference {
        let mass = fiber_quadrature(chart, &r.x, &r.y, r.r, &fopts)?.mass();
        rep.put("fiber_reference", json!({"value": mass, "expected": r.value}));
        rep.check(Check::within("fiber_reference", mass, r.value, 1e-3).hard());
    }

    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    let sym_half = space.ball_half_widths(gr);
    let gsym = {
        let base = truncated_gaussian(sym_half.clone(), vec![0.0; sym_half.len()], 0.3);
        let h0 = sym_half[0];
        move |z: &[f64]| (1.0 + 0.3 * z[0] / h0) * base(z)
    };
    for p in 0..s.symmetry_pairs {
        let mut rng = fcalc_core::rng::stream(ctx.seed, &[0x7379_6d6d, p as u64]);
        let xp: Vec<f64> = (0..d).map(|k| rng.random_range(region.lo[k]..region.hi[k])).collect();
        let zh = space.ball_half_widths(0.3 * gr);
        let z: Vec<f64> = zh.iter().map(|h| rng.random_range(-*h..*h)).collect();
        let yp = chart.exponential(&xp, &z)?;
        let c = fiber_symmetry_check(chart, &xp, &yp, &gsym, gr, &fopts)?;
        worst = worst.max(c.relative);
        rows.push(json!({"x": xp, "y": yp, "forward": c.forward, "backward": c.backward, "relative": c.relative}));
    }
    rep.put("symmetry_pairs", rows);
    rep.check(Check::at_most("fiber_symmetry", worst, 1e-2));

    if FiberMethod::auto(d, chart.exp_dim()) == FiberMethod::TubeMc {
        let zh = space.ball_half_widths(0.1 * gr);
        let y = chart.exponential(x, &zh)?;
        let (a, b) = tube_convergence(chart, x, &y, gr, &|_| 1.0, &fopts)?;
        rep.put("tube_convergence", json!({"eta": a, "half_eta": b, "relative_change": (a - b).abs() / b.abs()}));
    }
    Ok(())
}
