use super::Context;
use crate::report::{Check, Report};
use anyhow::Result;
use fcalc_core::kernel::{condition_report, ConditionConstants, ConditionSampling, ConditionSlopes};

pub(super) fn sampling(ctx: &Context) -> ConditionSampling {
    let s = &ctx.scenario.study;
    ConditionSampling {
        x_grid: s.x_grid,
        x_fraction: s.x_fraction,
        y_nodes: s.y_nodes,
        scan_grid: s.scan_grid,
        pairs: s.pairs,
        trials: s.smoothness_trials,
        v_nodes: s.v_nodes,
        seed: ctx.sub_seed(0x636f_6e64),
    }
}

fn slope_checks(rep: &mut Report, prefix: &str, sl: &ConditionSlopes) {
    rep.check(Check::within(&format!("{prefix}slope_c1"), sl.c1, 1.0, 0.15));
    rep.check(Check::within(&format!("{prefix}slope_c2"), sl.c2, 0.0, 0.15));
    rep.check(Check::within(&format!("{prefix}slope_c3"), sl.c3, -1.0, 0.15));
    if let Some(c4) = sl.c4 {
        rep.check(Check::within(&format!("{prefix}slope_c4"), c4, 1.0, 0.2));
    }
}

fn all_nonnegative(rows: &[ConditionConstants]) -> bool {
    rows.iter().all(|r| {
        [r.c1, r.c2, r.c3, r.m, r.c4.unwrap_or(0.0)].iter().all(|v| *v >= 0.0 && !v.is_nan())
    })
}

pub(super) fn run(ctx: &Context, rep: &mut Report) -> Result<()> {
    let s = &ctx.scenario.study;
    let sampling = sampling(ctx);
    let cr = condition_report(
        ctx.built.chart.clone(),
        &ctx.built.profile,
        &s.hbar_list,
        &s.condition_js,
        &sampling,
        &ctx.fiber(2),
    )?;
    for row in &cr.kernel {
        rep.point(row.hbar, "c1", row.c1);
        rep.point(row.hbar, "c2", row.c2);
        rep.point(row.hbar, "c3", row.c3);
        if let Some(c4) = row.c4 {
            rep.point(row.hbar, "c4", c4);
        }
        rep.point(row.hbar, "m", row.m);
        rep.point(row.hbar, "c1_c3", row.c1 * row.c3);
        rep.point(row.hbar, "c1_over_m", row.c1 / row.m);
    }
    let ok = all_nonnegative(&cr.kernel) && all_nonnegative(&cr.adjoint);
    rep.check(Check::at_least("constants_nonnegative", if ok { 1.0 } else { 0.0 }, 1.0).hard());
    slope_checks(rep, "", &cr.slopes);
    slope_checks(rep, "adjoint_", &cr.adjoint_slopes);
    rep.check(Check::at_most("c1c3_spread", cr.c1c3_spread, 2.0));
    rep.check(Check::at_most("c1_over_m_spread", cr.c1_over_m_spread, 2.0));
    let unstable = cr.kernel.iter().chain(&cr.adjoint).filter(|r| r.smoothness.unstable).count();
    rep.put("smoothness_unstable_rows", unstable);
    rep.put("report", &cr);
    Ok(())
}
