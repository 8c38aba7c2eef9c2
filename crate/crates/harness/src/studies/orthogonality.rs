use super::{conditions, Context, Study};
use crate::cache::metric_table;
use crate::report::{Check, Report};
use anyhow::Result;
use fcalc_core::kernel::{check_mass, KernelFamily};
use fcalc_core::metric::ReachOptions;
use fcalc_core::operator::{
    almost_orthogonality_matrix, cotlar_stein_bound, discretize_window, hormander_integral, AoOptions,
    HormanderOptions, WindowOptions,
};
use fcalc_core::Complex64;
use serde_json::json;

const POWER_ITERATIONS: usize = 300;

pub(super) fn run(ctx: &Context, rep: &mut Report) -> Result<()> {
    let s = &ctx.scenario.study;
    let chart = ctx.built.chart.clone();
    let family = KernelFamily::new(chart.clone(), ctx.built.profile.clone(), s.ao_hbar, ctx.fiber(3))?;
    let one = Complex64::new(1.0, 0.0);

    let ao = almost_orthogonality_matrix(
        &family,
        &s.ao_js,
        &[s.center.clone()],
        &AoOptions { outer_nodes: s.ao_nodes, inner_nodes: s.ao_nodes },
    )?;
    let decay = ao.decay();
    let c2 = check_mass(&family, &s.ao_js, &conditions::sampling(ctx))?.c2;
    let diag_max = (0..ao.js.len()).map(|a| ao.b[a][a]).fold(0.0, f64::max);
    let split = decay.band.len() / 2;
    let near = decay.band[..=split.min(decay.band.len() - 1)].iter().cloned().fold(0.0, f64::max);
    let far = decay.band[split + 1..].iter().cloned().fold(0.0, f64::max);
    rep.put("ao", json!({"hbar": s.ao_hbar, "matrix": ao, "decay": decay, "c2": c2}));
    rep.check(Check::at_least("ao_decay_exponent", decay.exponent, 0.8));
    rep.check(Check::at_most("ao_band_growth", far / near, 2.0));
    rep.check(Check::at_most("ao_diagonal_over_c2_squared", diag_max / (c2 * c2), 1.1));
    for (k, v) in decay.band.iter().enumerate() {
        rep.point(s.ao_hbar, &format!("ao_band_{k}"), *v);
    }

    let window = discretize_window(
        chart.clone(),
        &ctx.built.profile,
        s.ao_hbar,
        &s.center,
        &s.ao_js,
        &WindowOptions { grid: s.window_grid, ..Default::default() },
    )?;
    let alpha = vec![one; s.ao_js.len()];
    let coeffs: Vec<(u32, Complex64)> = s.ao_js.iter().map(|&j| (j, one)).collect();
    let l2 = window.operator(&coeffs)?.l2_norm(POWER_ITERATIONS, ctx.sub_seed(0x6c32));
    let cks = cotlar_stein_bound(&ao, &alpha);
    rep.put("cotlar_stein", json!({"l2": l2, "bound": cks.bound, "classical": cks.classical, "fitted_c": cks.fitted_c}));
    rep.check(Check::at_most("cotlar_stein", l2 / cks.bound, 1.0));
    rep.check(Check::at_most("cotlar_stein_classical", l2 / cks.classical, 1.0));

    let (table, status) = metric_table(ctx.scenario, &chart, ctx.cache_dir.as_deref())?;
    ctx.log(Study::Orthogonality, &format!("metric table: {status:?}"));
    let c_rho = table.quasi_triangle_constant();
    let space = chart.space();
    let n = chart.exp_dim();
    let dir: Vec<f64> = (0..n).map(|k| if k % 2 == 0 { 1.0 } else { -0.5 }).collect();
    let hopts = HormanderOptions {
        nodes: s.hormander_nodes,
        reach: ReachOptions { seed: ctx.sub_seed(0x686f), ..Default::default() },
        ..Default::default()
    };
    let alpha_h: Vec<(u32, Complex64)> = (0..=s.hormander_j_max).map(|j| (j, one)).collect();
    let mut values = Vec::new();
    let mut rows = Vec::new();
    for k in 0..s.hormander_pairs {
        let t = 0.25 * s.ao_hbar * 0.5f64.powi(k as i32);
        let y = chart.exponential(&s.center, &space.dilate(&dir, t)?)?;
        let h = hormander_integral(&family, &alpha_h, &y, &s.center, c_rho, &hopts)?;
        rep.point(h.rho, "hormander", h.value);
        rows.push(json!({"y": y, "rho": h.rho, "value": h.value, "nodes": h.nodes}));
        values.push(h.value);
    }
    let half = values.len() / 2;
    let coarse = values[..half.max(1)].iter().cloned().fold(0.0, f64::max);
    let fine = values[half.max(1)..].iter().cloned().fold(0.0, f64::max);
    let fitted = values.iter().cloned().fold(0.0, f64::max);
    rep.put("hormander", json!({"c_rho": c_rho, "pairs": rows, "fitted_c": fitted, "sup_alpha": 1.0}));
    let finite = values.iter().all(|v| v.is_finite());
    rep.check(Check::at_least("hormander_finite", if finite { 1.0 } else { 0.0 }, 1.0).hard());
    rep.check(Check::at_most("hormander_growth", fine / coarse, 2.0));
    Ok(())
}
