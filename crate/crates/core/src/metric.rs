//! Quasi-metric `ρ(x, y) = inf { |z|_V : Λ_x(z) = y, |z|_V < ε }` and the
//! metric constants of a chart.
//!
//! Reachability at radius `λ` is decided by minimising `|Λ_x(δ_λ ẑ) − y|²`
//! over the unit box with a projected Gauss–Newton iteration from several
//! starts; `ρ` then follows by bisection on `λ`.

use crate::chart::{BoxRegion, FilteredChart, ScaledExp};
use crate::error::{check_len, Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Controls for the reachability solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReachOptions {
    pub starts: usize,
    pub iterations: usize,
    /// Absolute residual `|Λ_x(z) − y|` accepted as a hit.
    pub residual_tol: f64,
    pub seed: u64,
}

impl Default for ReachOptions {
    fn default() -> Self {
        Self { starts: 16, iterations: 200, residual_tol: 1e-11, seed: 0 }
    }
}

/// Result of a reachability solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Reach {
    /// Best point found, in unnormalised exponential coordinates.
    pub z: Vec<f64>,
    pub residual: f64,
    pub reachable: bool,
}

pub(crate) struct Solve {
    pub zh: Vec<f64>,
    pub residual: f64,
}

fn clamp_box(v: &mut [f64]) {
    for t in v.iter_mut() {
        *t = t.clamp(-1.0, 1.0);
    }
}

fn residual_sq(map: &ScaledExp, zh: &[f64], y: &[f64]) -> Option<(Vec<f64>, f64)> {
    let p = map.eval(zh).ok()?;
    let r: Vec<f64> = p.iter().zip(y).map(|(a, b)| a - b).collect();
    let s = r.iter().map(|v| v * v).sum();
    Some((r, s))
}

/// Minimum-norm solution of `J_F Δ = -r` on the free columns `F`.
pub(crate) fn min_norm_step(j: &DMatrix<f64>, r: &[f64], free: &[bool]) -> Option<Vec<f64>> {
    let d = j.nrows();
    let mut jf = j.clone();
    for (k, f) in free.iter().enumerate() {
        if !f {
            jf.column_mut(k).fill(0.0);
        }
    }
    let mut g = &jf * jf.transpose();
    let mu = 1e-13 * g.trace() + 1e-300;
    for i in 0..d {
        g[(i, i)] += mu;
    }
    let a = g.cholesky()?.solve(&DVector::from_column_slice(r));
    let step = -(jf.transpose() * a);
    Some(step.iter().cloned().collect())
}

/// Projected Gauss–Newton from a single start inside the unit box.
pub(crate) fn solve_from(
    map: &ScaledExp,
    y: &[f64],
    start: &[f64],
    iterations: usize,
    tol: f64,
) -> Solve {
    let n = start.len();
    let mut z = start.to_vec();
    clamp_box(&mut z);
    let Some((mut r, mut phi)) = residual_sq(map, &z, y) else {
        return Solve { zh: z, residual: f64::INFINITY };
    };
    let mut stall = 0;
    for _ in 0..iterations {
        if phi.sqrt() < tol {
            break;
        }
        let Ok(j) = map.jacobian(&z) else { break };
        let g: Vec<f64> = (0..n).map(|k| (0..r.len()).map(|i| j[(i, k)] * r[i]).sum()).collect();
        let free: Vec<bool> = (0..n)
            .map(|k| !((z[k] >= 1.0 - 1e-13 && g[k] < 0.0) || (z[k] <= -1.0 + 1e-13 && g[k] > 0.0)))
            .collect();
        if !free.iter().any(|f| *f) {
            break;
        }
        let mut accepted = None;
        if let Some(step) = min_norm_step(&j, &r, &free) {
            let mut t = 1.0;
            for _ in 0..24 {
                let mut zt: Vec<f64> = z.iter().zip(&step).map(|(a, b)| a + t * b).collect();
                clamp_box(&mut zt);
                if let Some((rt, pt)) = residual_sq(map, &zt, y) {
                    if pt < phi {
                        accepted = Some((zt, rt, pt));
                        break;
                    }
                }
                t *= 0.5;
            }
        }
        if accepted.is_none() {
            let gg: f64 = g.iter().map(|v| v * v).sum();
            if gg > 0.0 {
                let mut t = phi / gg;
                for _ in 0..30 {
                    let mut zt: Vec<f64> = z.iter().zip(&g).map(|(a, b)| a - t * b).collect();
                    clamp_box(&mut zt);
                    if let Some((rt, pt)) = residual_sq(map, &zt, y) {
                        if pt < phi {
                            accepted = Some((zt, rt, pt));
                            break;
                        }
                    }
                    t *= 0.5;
                }
            }
        }
        let Some((zt, rt, pt)) = accepted else { break };
        if phi - pt <= 1e-4 * phi {
            stall += 1;
        } else {
            stall = 0;
        }
        z = zt;
        r = rt;
        phi = pt;
        if stall >= 2 {
            break;
        }
    }
    Solve { zh: z, residual: phi.sqrt() }
}

/// Start points for the multistart solver: an optional warm start, the
/// linearised guess, the origin, then seeded uniform draws from the box.
pub(crate) fn start_points(
    map: &ScaledExp,
    y: &[f64],
    warm: Option<&[f64]>,
    count: usize,
    seed: u64,
) -> impl Iterator<Item = Vec<f64>> {
    let n = map.scale.len();
    let mut fixed: Vec<Vec<f64>> = Vec::new();
    if let Some(w) = warm {
        let mut v: Vec<f64> = w.iter().zip(&map.scale).map(|(a, s)| a / s).collect();
        clamp_box(&mut v);
        fixed.push(v);
    }
    if let Ok(j0) = map.jacobian(&vec![0.0; n]) {
        let r: Vec<f64> = map.x.iter().zip(y).map(|(a, b)| a - b).collect();
        if let Some(mut v) = min_norm_step(&j0, &r, &vec![true; n]) {
            clamp_box(&mut v);
            fixed.push(v);
        }
    }
    fixed.push(vec![0.0; n]);
    let nfixed = fixed.len();
    (0..count).map(move |i| {
        if i < nfixed {
            fixed[i].clone()
        } else {
            let mut rng = crate::rng::stream(seed, &[0x7374_6172, i as u64]);
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
        }
    })
}

/// Decides whether `y ∈ Λ_x(B_V(0, λ))`, returning the best witness.
pub fn reach(
    chart: &FilteredChart,
    x: &[f64],
    y: &[f64],
    lambda: f64,
    opts: &ReachOptions,
    warm: Option<&[f64]>,
) -> Result<Reach> {
    check_len(x, chart.dim())?;
    check_len(y, chart.dim())?;
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("reach radius must be positive, got {lambda}")));
    }
    let map = ScaledExp::new(chart, x, lambda);
    let mut best = Solve { zh: vec![0.0; chart.exp_dim()], residual: f64::INFINITY };
    for start in start_points(&map, y, warm, opts.starts.max(1), opts.seed) {
        let s = solve_from(&map, y, &start, opts.iterations, opts.residual_tol);
        if s.residual < best.residual {
            best = s;
        }
        if best.residual < opts.residual_tol {
            break;
        }
    }
    Ok(Reach {
        z: map.to_z(&best.zh),
        residual: best.residual,
        reachable: best.residual < opts.residual_tol,
    })
}

/// How [`quasi_metric`] locates the minimiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricMethod {
    /// Minimise `|z|_V` over the discretised fiber when it is a point set or
    /// a curve, otherwise bisect.
    Auto,
    /// Bisection on `λ` with multistart reachability.
    Bisection,
}

/// `ρ(x, y)` to within additive `tol`, or `f64::INFINITY` when `y` is not
/// reachable inside the chart radius.
pub fn quasi_metric(chart: &FilteredChart, x: &[f64], y: &[f64], tol: f64, opts: &ReachOptions) -> Result<f64> {
    quasi_metric_with_hint(chart, x, y, tol, opts, None)
}

/// As [`quasi_metric`], with an optional known preimage `hint` of `y`.
pub fn quasi_metric_with_hint(
    chart: &FilteredChart,
    x: &[f64],
    y: &[f64],
    tol: f64,
    opts: &ReachOptions,
    hint: Option<&[f64]>,
) -> Result<f64> {
    quasi_metric_by(chart, x, y, tol, opts, hint, MetricMethod::Auto)
}

pub fn quasi_metric_by(
    chart: &FilteredChart,
    x: &[f64],
    y: &[f64],
    tol: f64,
    opts: &ReachOptions,
    hint: Option<&[f64]>,
    method: MetricMethod,
) -> Result<f64> {
    check_len(x, chart.dim())?;
    check_len(y, chart.dim())?;
    if x == y {
        return Ok(0.0);
    }
    let codim = chart.exp_dim() - chart.dim();
    match method {
        MetricMethod::Auto if codim <= 1 => fiber_minimum(chart, x, y, opts, hint),
        _ => bisection(chart, x, y, tol, opts, hint),
    }
}

/// Smallest `|z|_V` over the fiber through `y`, from roots (`N = d`) or a
/// traced curve (`N = d + 1`) refined by golden-section search.
fn fiber_minimum(chart: &FilteredChart, x: &[f64], y: &[f64], opts: &ReachOptions, hint: Option<&[f64]>) -> Result<f64> {
    let space = chart.space();
    let eps = chart.epsilon() * (1.0 - 1e-12);
    let mut radius = eps;
    if let Some(h) = hint {
        let nh = space.norm(h);
        if nh > 0.0 && nh < eps {
            radius = (1.5 * nh).min(eps);
        }
    }
    loop {
        let value = fiber_minimum_at(chart, x, y, opts, radius)?;
        if value.is_finite() || radius >= eps {
            return Ok(value);
        }
        radius = eps;
    }
}

fn fiber_minimum_at(chart: &FilteredChart, x: &[f64], y: &[f64], opts: &ReachOptions, radius: f64) -> Result<f64> {
    let space = chart.space();
    let map = ScaledExp::new(chart, x, radius);
    let fopts = crate::fiber::FiberOptions {
        seed_starts: opts.starts,
        seed_iterations: opts.iterations,
        residual_tol: opts.residual_tol,
        seed: opts.seed,
        ..Default::default()
    };
    let norm_of = |zh: &[f64]| space.norm(&map.to_z(zh));
    if chart.exp_dim() == chart.dim() {
        let best = crate::fiber::seeds(&map, y, &fopts)
            .iter()
            .map(|zh| norm_of(zh))
            .fold(f64::INFINITY, f64::min);
        return Ok(best);
    }
    let mut best = f64::INFINITY;
    for (curve, closed) in crate::fiber::trace_curves(&map, y, &fopts)? {
        let m = curve.len();
        let (i, v) = curve
            .iter()
            .enumerate()
            .map(|(i, n)| (i, norm_of(&n.zh)))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        let mut local = v;
        let prev = if i > 0 { Some(i - 1) } else if closed { Some(m - 1) } else { None };
        let next = if i + 1 < m { Some(i + 1) } else if closed { Some(0) } else { None };
        let centre = &curve[i].zh;
        // Parameter t ∈ [-1, 1] walks from the previous node through the
        // centre to the next one.
        let point = |t: f64| -> Option<Vec<f64>> {
            let (other, frac) = if t < 0.0 { (prev?, -t) } else { (next?, t) };
            crate::fiber::project_chord(&map, y, centre, &curve[other].zh, frac, opts.residual_tol)
        };
        let f = |t: f64| point(t).map(|p| norm_of(&p)).unwrap_or(f64::INFINITY);
        let (mut a, mut b) = (if prev.is_some() { -1.0 } else { 0.0 }, if next.is_some() { 1.0 } else { 0.0 });
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
        let (mut fc, mut fd) = (f(c), f(d));
        for _ in 0..80 {
            if b - a < 1e-13 {
                break;
            }
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = f(d);
            }
        }
        local = local.min(fc).min(fd);
        best = best.min(local);
    }
    Ok(best)
}

fn bisection(chart: &FilteredChart, x: &[f64], y: &[f64], tol: f64, opts: &ReachOptions, hint: Option<&[f64]>) -> Result<f64> {
    let space = chart.space();
    let eps = chart.epsilon() * (1.0 - 1e-12);
    let mut hi = eps;
    let mut witness: Option<Vec<f64>> = None;
    if let Some(h) = hint {
        let nh = space.norm(h);
        if nh > 0.0 && nh < eps {
            let r = reach(chart, x, y, nh, opts, Some(h))?;
            if r.reachable {
                hi = space.norm(&r.z).min(nh);
                witness = Some(r.z);
            }
        }
    }
    if witness.is_none() {
        let r = reach(chart, x, y, eps, opts, None)?;
        if !r.reachable {
            return Ok(f64::INFINITY);
        }
        hi = space.norm(&r.z).min(eps);
        witness = Some(r.z);
    }
    let mut lo = 0.0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let r = reach(chart, x, y, mid, opts, witness.as_deref())?;
        if r.reachable {
            hi = space.norm(&r.z).min(mid);
            witness = Some(r.z);
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Sampling budget for [`measured_metric_constants`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSampling {
    pub triples: usize,
    pub volume_centers: usize,
    pub volume_grid: usize,
    /// Largest exponential radius used when drawing points.
    pub radius: f64,
    /// Additive tolerance of every `ρ` evaluation.
    pub tol: f64,
    pub seed: u64,
}

impl Default for MetricSampling {
    fn default() -> Self {
        Self { triples: 60, volume_centers: 3, volume_grid: 24, radius: 0.4, tol: 1e-6, seed: 0 }
    }
}

/// Empirical metric constants of a chart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConstants {
    /// Quasi-triangle constant: `max ρ(x,y) / (ρ(x,y0) + ρ(y,y0))`.
    pub c_rho: f64,
    /// Doubling constant: `max vol B(x,2r) / vol B(x,r)`.
    pub c_mu: f64,
    /// `min ρ(x,y) / |x − y|`.
    pub c_lower: f64,
    /// `max ρ(x,y) / |x − y|^{1/w_N}`.
    pub c_upper: f64,
}

/// Measures [`MetricConstants`] on points drawn from `region`.
pub fn measured_metric_constants(
    chart: &FilteredChart,
    region: &BoxRegion,
    sampling: &MetricSampling,
    opts: &ReachOptions,
) -> Result<MetricConstants> {
    check_len(&region.lo, chart.dim())?;
    let space = chart.space();
    let w_max = *space.weights().last().unwrap() as f64;
    let d = chart.dim();
    let rho = |a: &[f64], b: &[f64], hint: Option<&[f64]>| -> Result<f64> {
        let v = quasi_metric_with_hint(chart, a, b, sampling.tol, opts, hint)?;
        if v.is_finite() { Ok(v) } else { Err(Error::ChartTooLarge) }
    };
    let mut c_rho: f64 = 0.0;
    let mut c_lower = f64::INFINITY;
    let mut c_upper: f64 = 0.0;
    let mut fit = |a: &[f64], b: &[f64], r: f64| {
        let e = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        if e > 1e-12 {
            c_lower = c_lower.min(r / e);
            c_upper = c_upper.max(r / e.powf(1.0 / w_max));
        }
    };
    for t in 0..sampling.triples {
        let mut rng = crate::rng::stream(sampling.seed, &[0x7472_6970, t as u64]);
        let x: Vec<f64> = (0..d).map(|k| rng.random_range(region.lo[k]..region.hi[k])).collect();
        let half = space.ball_half_widths(sampling.radius);
        let z: Vec<f64> = half.iter().map(|h| rng.random_range(-*h..*h)).collect();
        let z0: Vec<f64> = match t % 3 {
            0 => half.iter().map(|h| rng.random_range(-*h..*h)).collect(),
            1 => z.iter().map(|v| 0.5 * v).collect(),
            _ => {
                let s: f64 = rng.random_range(0.0..1.0);
                z.iter().map(|v| s * v).collect()
            }
        };
        let y = chart.exponential(&x, &z)?;
        let y0 = chart.exponential(&x, &z0)?;
        let rxy = rho(&x, &y, Some(&z))?;
        let rxy0 = rho(&x, &y0, Some(&z0))?;
        let ryy0 = rho(&y, &y0, None)?;
        fit(&x, &y, rxy);
        fit(&x, &y0, rxy0);
        fit(&y, &y0, ryy0);
        let denom = rxy0 + ryy0;
        if denom > 0.0 {
            c_rho = c_rho.max(rxy / denom);
        }
    }
    let mut c_mu: f64 = 0.0;
    for c in 0..sampling.volume_centers {
        let mut rng = crate::rng::stream(sampling.seed, &[0x766f_6c75, c as u64]);
        let x: Vec<f64> = (0..d).map(|k| rng.random_range(region.lo[k]..region.hi[k])).collect();
        let r = rng.random_range(0.25 * sampling.radius..0.5 * sampling.radius);
        let bx = chart.image_box(&x, 2.0 * r)?;
        let grid = crate::quadrature::CellGrid::new(bx.lo.clone(), bx.hi.clone(), vec![sampling.volume_grid; d]);
        let (mut big, mut small) = (0usize, 0usize);
        for i in 0..grid.len() {
            let y = grid.point(i);
            let hit = reach(chart, &x, &y, 2.0 * r, opts, None)?;
            if hit.reachable && space.norm(&hit.z) < 2.0 * r {
                big += 1;
                let inner = reach(chart, &x, &y, r, opts, Some(&hit.z))?;
                if inner.reachable && space.norm(&inner.z) < r {
                    small += 1;
                }
            }
        }
        if small > 0 {
            c_mu = c_mu.max(big as f64 / small as f64);
        }
    }
    Ok(MetricConstants { c_rho, c_mu, c_lower, c_upper })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graded::GradedSpace;
    use crate::poly::{PolyField, Polynomial};

    fn grushin() -> FilteredChart {
        let d = 2;
        let x2 = PolyField::new(vec![Polynomial::zero(d), Polynomial::variable(d, 0)]).unwrap();
        FilteredChart::new(
            GradedSpace::new(vec![1, 1, 2]).unwrap(),
            vec![PolyField::coordinate(d, 0), x2, PolyField::coordinate(d, 1)],
            BoxRegion::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(),
            1.0,
        )
        .unwrap()
    }

    /// Minimiser of `max(|z1|, |z2|, |z3|^{1/2})` under the Grushin
    /// constraints, solved by hand.
    fn grushin_rho(x: &[f64], y: &[f64]) -> f64 {
        let d1 = y[0] - x[0];
        let a = (x[0] + d1 / 2.0).abs();
        let d2 = (y[1] - x[1]).abs();
        d1.abs().max(0.5 * (-a + (a * a + 4.0 * d2).sqrt()))
    }

    #[test]
    fn grushin_metric_matches_hand_solution() {
        let c = grushin();
        let opts = ReachOptions::default();
        for (x, y) in [
            ([0.0, 0.0], [0.0, 0.01]),
            ([0.3, -0.1], [0.1, 0.2]),
            ([-0.5, 0.2], [-0.45, 0.25]),
            ([0.2, 0.3], [0.6, 0.3]),
        ] {
            let r = quasi_metric(&c, &x, &y, 1e-7, &opts).unwrap();
            assert!((r - grushin_rho(&x, &y)).abs() < 2e-7, "{x:?} {y:?}: {r}");
        }
    }

    #[test]
    fn bisection_agrees_with_fiber_minimum() {
        let c = grushin();
        let opts = ReachOptions::default();
        let (x, y) = ([0.3, -0.1], [0.1, 0.2]);
        let a = quasi_metric_by(&c, &x, &y, 1e-6, &opts, None, MetricMethod::Bisection).unwrap();
        let b = quasi_metric_by(&c, &x, &y, 1e-6, &opts, None, MetricMethod::Auto).unwrap();
        assert!((a - b).abs() < 2e-6, "{a} {b}");
    }

    #[test]
    fn unreachable_points_give_infinity() {
        let c = grushin();
        let r = quasi_metric(&c, &[0.0, 0.0], &[0.0, 2.5], 1e-6, &ReachOptions::default()).unwrap();
        assert!(r.is_infinite());
    }

    #[test]
    fn euclidean_metric_constants() {
        let c = FilteredChart::new(
            GradedSpace::new(vec![1, 1]).unwrap(),
            vec![PolyField::coordinate(2, 0), PolyField::coordinate(2, 1)],
            BoxRegion::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(),
            1.0,
        )
        .unwrap();
        let region = BoxRegion::new(vec![-0.3, -0.3], vec![0.3, 0.3]).unwrap();
        let s = MetricSampling { triples: 12, volume_centers: 1, volume_grid: 24, ..Default::default() };
        let m = measured_metric_constants(&c, &region, &s, &ReachOptions::default()).unwrap();
        assert!((m.c_rho - 1.0).abs() < 1e-4, "{m:?}");
        assert!((m.c_mu - 4.0).abs() < 0.4, "{m:?}");
        assert!(m.c_lower >= 1.0 / 2f64.sqrt() - 1e-4 && m.c_upper <= 1.0 + 1e-4, "{m:?}");
    }
}
