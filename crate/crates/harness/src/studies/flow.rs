use super::{truncated_gaussian, Context};
use crate::report::{Check, Report};
use anyhow::Result;
use fcalc_core::fiber::FiberOptions;
use fcalc_core::flow::{
    fiber_difference_check, flow, flow_jacobian_determinant, flow_jacobian_determinant_fd, lipschitz_constants,
    LipschitzSampling, TransportProblem,
};
use rand::Rng;
use serde_json::json;

const FD_STEP: f64 = 1e-4;
const FIBER_RADIUS: f64 = 0.8;
const FIBER_OUTER: f64 = 1.2;

pub(super) fn run(ctx: &Context, rep: &mut Report) -> Result<()> {
    let s = &ctx.scenario.study;
    let chart = &*ctx.built.chart;
    let space = chart.space();
    let (d, n) = (chart.dim(), chart.exp_dim());
    let x = &s.center;
    let r = s.flow_radius;
    let image_half = chart.image_box(x, r)?.half_widths();

    let (mut endpoint, mut inverse, mut liouville) = (0.0f64, 0.0f64, 0.0f64);
    let mut rows = Vec::new();
    for q in 0..s.flow_samples {
        let mut rng = fcalc_core::rng::stream(ctx.seed, &[0x666c_6f77, q as u64]);
        let zh0: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
        let dir: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut p = TransportProblem::new(chart, x, &vec![0.0; d], &vec![0.0; d], r)?;
        let y0 = p.psi(&zh0)?;
        p.y1 = y0.iter().zip(dir.iter().zip(&image_half)).map(|(y, (e, h))| y + 0.1 * e * h).collect();
        p.y0 = y0;
        let mut end: f64 = 0.0;
        for t in [0.5, 1.0] {
            let zt = flow(&p, &zh0, t)?;
            let yt = p.psi(&zt)?;
            end = end.max(yt.iter().zip(p.target(t)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
        let z1 = flow(&p, &zh0, 1.0)?;
        let back = flow(&p, &z1, -1.0)?;
        let inv = back.iter().zip(&zh0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let det = flow_jacobian_determinant(&p, &zh0)?;
        let fd = flow_jacobian_determinant_fd(&p, &zh0, FD_STEP)?;
        let rel = (det - fd).abs() / fd.abs();
        endpoint = endpoint.max(end);
        inverse = inverse.max(inv);
        liouville = liouville.max(rel);
        rows.push(json!({"z0": zh0, "y0": p.y0, "y1": p.y1, "endpoint": end, "inverse": inv, "det": det, "det_fd": fd}));
    }
    rep.put("samples", rows);
    rep.check(Check::at_most("flow_endpoint", endpoint, 1e-8).hard());
    rep.check(Check::at_most("flow_inverse", inverse, 1e-7).hard());
    rep.check(Check::at_most("liouville_vs_fd", liouville, 1e-3));

    let fr = FIBER_RADIUS * chart.epsilon().min(1.0) / FIBER_OUTER;
    let half = space.ball_half_widths(fr);
    let mut shift = vec![0.0; n];
    shift[n - 1] = 0.06;
    let g = truncated_gaussian(half, shift.clone(), 0.15);
    let p = TransportProblem::new(chart, x, &vec![0.0; d], &vec![0.0; d], fr)?;
    let y0 = p.psi(&shift)?;
    let fimage = chart.image_box(x, fr)?.half_widths();
    let y1: Vec<f64> = y0.iter().zip(&fimage).enumerate().map(|(k, (y, h))| y + if k == 0 { 0.08 } else { -0.04 } * h).collect();
    let fopts = FiberOptions { track_steps: 96, ..ctx.fiber(5) };
    let fd = fiber_difference_check(chart, x, &g, &y0, &y1, fr, FIBER_OUTER, &fopts)?;
    let rel = fd.residual / (fd.lhs.abs() + fd.rhs.abs());
    rep.put("fiber_difference", json!({"radius": fr, "y0": y0, "y1": y1, "lhs": fd.lhs, "rhs": fd.rhs, "relative": rel}));
    rep.check(Check::at_most("fiber_difference", rel, 1e-3));

    let lip_r = r.min(0.5 * chart.epsilon());
    let sampling = LipschitzSampling { pairs: s.lipschitz_pairs, seed: ctx.sub_seed(0x6c69), ..Default::default() };
    let mut lips = Vec::new();
    for radius in [lip_r, 0.5 * lip_r] {
        let l = lipschitz_constants(chart, x, radius, &sampling, &ctx.fiber(6))?;
        rep.point(radius, "lipschitz_c", l.c);
        rep.point(radius, "lipschitz_delta", l.delta);
        lips.push(json!({"r": radius, "delta": l.delta, "c": l.c, "trials": l.trials}));
    }
    rep.put("lipschitz", lips);
    Ok(())
}
