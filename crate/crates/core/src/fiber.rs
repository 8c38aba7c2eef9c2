//! Fiber measures `μ^{x,y}`: the disintegration of Lebesgue measure on
//! `B_V(0, r)` along the level sets of `z ↦ Λ_x(z)`.
//!
//! Three discretisations are available:
//!
//! * exact points when `N = d`, where the fiber is a finite set and each root
//!   carries mass `1 / |det DΛ_x|`;
//! * curve tracking when `N − d = 1`, with a predictor–corrector walk along
//!   the kernel of `DΛ_x` and trapezoid weights `ds / |DΛ_x|`;
//! * a Monte Carlo tube estimator for any codimension.
//!
//! All methods work in coordinates normalised to the ball radius, which
//! keeps step sizes meaningful at every scale.

use crate::chart::{gram_sqrt_det, FilteredChart, ScaledExp};
use crate::error::{check_len, Error, Result};
use crate::metric::{min_norm_step, solve_from, start_points};
use crate::quadrature::TensorRule;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FiberMethod {
    ExactPoint,
    FiberTracked,
    TubeMc,
}

impl FiberMethod {
    /// Default method for a chart with base dimension `d` and exponential
    /// dimension `n`.
    pub fn auto(d: usize, n: usize) -> Self {
        match n - d {
            0 => FiberMethod::ExactPoint,
            1 => FiberMethod::FiberTracked,
            _ => FiberMethod::TubeMc,
        }
    }
}

/// Tuning knobs for [`fiber_quadrature`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberOptions {
    /// Forces a method instead of the dimension-based default.
    pub method: Option<FiberMethod>,
    /// Multistart count for locating fiber points.
    pub seed_starts: usize,
    pub seed_iterations: usize,
    /// Tracking step is `2 / track_steps` in normalised arclength.
    pub track_steps: usize,
    pub residual_tol: f64,
    pub mc_samples: usize,
    /// Tube half-width as a fraction of the image half-extent.
    pub tube_fraction: f64,
    pub seed: u64,
}

impl Default for FiberOptions {
    fn default() -> Self {
        Self {
            method: None,
            seed_starts: 3,
            seed_iterations: 40,
            track_steps: 48,
            residual_tol: 1e-11,
            mc_samples: 20_000,
            tube_fraction: 1.0 / 20.0,
            seed: 0,
        }
    }
}

/// Weighted points representing `μ^{x,y}` restricted to `B_V(0, radius)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberQuadrature {
    pub method: FiberMethod,
    pub radius: f64,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl FiberQuadrature {
    fn empty(method: FiberMethod, radius: f64) -> Self {
        Self { method, radius, points: Vec::new(), weights: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Total mass `μ^{x,y}(B_V(0, radius))`.
    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate<F: FnMut(&[f64]) -> f64>(&self, mut g: F) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * g(p)).sum()
    }
}

/// Computes `μ^{x,y}` on `B_V(0, r)`. An empty quadrature means the fiber
/// does not meet the ball.
pub fn fiber_quadrature(
    chart: &FilteredChart,
    x: &[f64],
    y: &[f64],
    r: f64,
    opts: &FiberOptions,
) -> Result<FiberQuadrature> {
    check_len(x, chart.dim())?;
    check_len(y, chart.dim())?;
    if !(r > 0.0) || r > chart.epsilon() * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!("fiber radius {r} outside (0, ε]")));
    }
    let method = opts.method.unwrap_or_else(|| FiberMethod::auto(chart.dim(), chart.exp_dim()));
    let map = ScaledExp::new(chart, x, r);
    match method {
        FiberMethod::ExactPoint => {
            if chart.dim() != chart.exp_dim() {
                return Err(Error::InvalidArgument("exact-point fibers need N = d".into()));
            }
            exact_points(&map, y, r, opts)
        }
        FiberMethod::FiberTracked => {
            if chart.exp_dim() != chart.dim() + 1 {
                return Err(Error::InvalidArgument("fiber tracking needs N = d + 1".into()));
            }
            tracked(&map, y, r, opts)
        }
        FiberMethod::TubeMc => Ok(tube(&map, y, r, opts, opts.tube_fraction)?.0),
    }
}

fn inside(zh: &[f64]) -> bool {
    zh.iter().all(|v| v.abs() < 1.0)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Distinct converged fiber points inside the open unit box.
pub(crate) fn seeds(map: &ScaledExp, y: &[f64], opts: &FiberOptions) -> Vec<Vec<f64>> {
    let mut found: Vec<Vec<f64>> = Vec::new();
    for start in start_points(map, y, None, opts.seed_starts.max(1), opts.seed) {
        let s = solve_from(map, y, &start, opts.seed_iterations, opts.residual_tol);
        if s.residual < opts.residual_tol && inside(&s.zh) && !found.iter().any(|f| dist(f, &s.zh) < 1e-7) {
            found.push(s.zh);
        }
    }
    found
}

fn exact_points(map: &ScaledExp, y: &[f64], r: f64, opts: &FiberOptions) -> Result<FiberQuadrature> {
    let q = map.chart.space().homogeneous_dimension() as i32;
    let mut out = FiberQuadrature::empty(FiberMethod::ExactPoint, r);
    for zh in seeds(map, y, opts) {
        let j = map.jacobian(&zh)?;
        let det = j.determinant().abs();
        if det < crate::chart::RANK_TOL * r.powi(q) {
            return Err(Error::RankDeficient(det));
        }
        out.weights.push(r.powi(q) / det);
        out.points.push(map.to_z(&zh));
    }
    Ok(out)
}

/// Unit kernel vector of a `d × (d+1)` matrix via signed maximal minors.
fn kernel_vector(j: &DMatrix<f64>) -> Vec<f64> {
    let n = j.ncols();
    let mut v: Vec<f64> = (0..n)
        .map(|k| {
            let minor = j.clone().remove_column(k);
            let s = if k % 2 == 0 { 1.0 } else { -1.0 };
            s * minor.determinant()
        })
        .collect();
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm > 0.0 {
        for a in &mut v {
            *a /= norm;
        }
    }
    v
}

/// Newton projection onto the fiber using a fixed Jacobian.
fn correct(map: &ScaledExp, y: &[f64], z: &[f64], j: &DMatrix<f64>, tol: f64) -> Option<Vec<f64>> {
    let n = z.len();
    let mut z = z.to_vec();
    let all = vec![true; n];
    for _ in 0..12 {
        let p = map.eval(&z).ok()?;
        let r: Vec<f64> = p.iter().zip(y).map(|(a, b)| a - b).collect();
        if r.iter().map(|v| v * v).sum::<f64>().sqrt() < tol {
            return Some(z);
        }
        let step = min_norm_step(j, &r, &all)?;
        for (a, b) in z.iter_mut().zip(step) {
            *a += b;
        }
    }
    None
}

pub(crate) struct Node {
    pub zh: Vec<f64>,
    pub jnorm: f64,
}

enum Walk {
    Exited(Vec<Node>),
    Closed(Vec<Node>),
}

fn walk(map: &ScaledExp, y: &[f64], seed: &[f64], j0: &DMatrix<f64>, dir: f64, h: f64, opts: &FiberOptions) -> Result<Walk> {
    let tol = opts.residual_tol;
    let mut z = seed.to_vec();
    let mut j = j0.clone();
    let mut prev: Vec<f64> = kernel_vector(j0).iter().map(|v| dir * v).collect();
    let mut nodes = Vec::new();
    let max_steps = 64 * opts.track_steps.max(4);
    let fail = |m: &str| Error::TrackingFailed(m.to_string());
    for step in 0..max_steps {
        let mut tau = kernel_vector(&j);
        if tau.iter().zip(&prev).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
            tau.iter_mut().for_each(|v| *v = -*v);
        }
        let pred: Vec<f64> = z.iter().zip(&tau).map(|(a, t)| a + h * t).collect();
        let zc = correct(map, y, &pred, &j, tol).ok_or_else(|| fail("corrector diverged"))?;
        if !inside(&zc) {
            // Bisect along the chord for the exit point, projecting each trial.
            let (mut lo, mut hi) = (0.0, 1.0);
            let mut best = z.clone();
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                let trial: Vec<f64> = z.iter().zip(&zc).map(|(a, b)| a + mid * (b - a)).collect();
                match correct(map, y, &trial, &j, tol) {
                    Some(p) if inside(&p) => {
                        lo = mid;
                        best = p;
                    }
                    _ => hi = mid,
                }
            }
            if dist(&best, &z) > 1e-12 {
                let jb = map.jacobian(&best)?;
                nodes.push(Node { jnorm: gram_sqrt_det(&jb), zh: best });
            }
            return Ok(Walk::Exited(nodes));
        }
        if step >= 2 && dist(&zc, seed) < 0.75 * h {
            return Ok(Walk::Closed(nodes));
        }
        j = map.jacobian(&zc)?;
        nodes.push(Node { jnorm: gram_sqrt_det(&j), zh: zc.clone() });
        z = zc;
        prev = tau;
    }
    Err(fail("step limit reached"))
}

/// Traced fiber components inside the open unit box, in normalised
/// coordinates. The flag marks closed loops.
pub(crate) fn trace_curves(map: &ScaledExp, y: &[f64], opts: &FiberOptions) -> Result<Vec<(Vec<Node>, bool)>> {
    let h = 2.0 / opts.track_steps.max(4) as f64;
    let mut curves = Vec::new();
    let mut traced: Vec<Vec<f64>> = Vec::new();
    for seed in seeds(map, y, opts) {
        if traced.iter().any(|p| dist(p, &seed) < 2.0 * h) {
            continue;
        }
        let j0 = map.jacobian(&seed)?;
        let seed_node = Node { jnorm: gram_sqrt_det(&j0), zh: seed.clone() };
        let (curve, closed) = match walk(map, y, &seed, &j0, 1.0, h, opts)? {
            Walk::Closed(fwd) => {
                let mut c = vec![seed_node];
                c.extend(fwd);
                (c, true)
            }
            Walk::Exited(fwd) => {
                let back = match walk(map, y, &seed, &j0, -1.0, h, opts)? {
                    Walk::Exited(b) | Walk::Closed(b) => b,
                };
                let mut c: Vec<Node> = back.into_iter().rev().collect();
                c.push(seed_node);
                c.extend(fwd);
                (c, false)
            }
        };
        traced.extend(curve.iter().map(|n| n.zh.clone()));
        curves.push((curve, closed));
    }
    Ok(curves)
}

/// Point on the fiber near the chord from `a` towards `b` at fraction `t`.
pub(crate) fn project_chord(map: &ScaledExp, y: &[f64], a: &[f64], b: &[f64], t: f64, tol: f64) -> Option<Vec<f64>> {
    let j = map.jacobian(a).ok()?;
    let p: Vec<f64> = a.iter().zip(b).map(|(u, v)| u + t * (v - u)).collect();
    correct(map, y, &p, &j, tol)
}

fn tracked(map: &ScaledExp, y: &[f64], r: f64, opts: &FiberOptions) -> Result<FiberQuadrature> {
    let q = map.chart.space().homogeneous_dimension() as i32;
    let scale_q = r.powi(q);
    let mut out = FiberQuadrature::empty(FiberMethod::FiberTracked, r);
    for (curve, closed) in trace_curves(map, y, opts)? {
        let m = curve.len();
        let gap = |i: usize, k: usize| dist(&curve[i].zh, &curve[k].zh);
        for i in 0..m {
            let left = if i > 0 { gap(i - 1, i) } else if closed { gap(m - 1, 0) } else { 0.0 };
            let right = if i + 1 < m { gap(i, i + 1) } else if closed { gap(m - 1, 0) } else { 0.0 };
            let w = 0.5 * (left + right) * scale_q / curve[i].jnorm;
            if w > 0.0 {
                out.weights.push(w);
                out.points.push(map.to_z(&curve[i].zh));
            }
        }
    }
    Ok(out)
}

/// Tube estimator with half-widths `fraction` times the image half-extent.
/// Also returns the half-widths used.
fn tube(map: &ScaledExp, y: &[f64], r: f64, opts: &FiberOptions, fraction: f64) -> Result<(FiberQuadrature, Vec<f64>)> {
    let n = map.scale.len();
    let d = y.len();
    let mut rng = crate::rng::stream(opts.seed, &[0x7475_6265]);
    let mut samples = Vec::with_capacity(opts.mc_samples);
    let mut extent = vec![0.0f64; d];
    for _ in 0..opts.mc_samples {
        let zh: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = map.eval(&zh)?;
        for k in 0..d {
            extent[k] = extent[k].max((p[k] - map.x[k]).abs());
        }
        samples.push((zh, p));
    }
    let eta: Vec<f64> = extent.iter().map(|e| (fraction * e).max(1e-300)).collect();
    let tube_vol: f64 = eta.iter().map(|e| 2.0 * e).product();
    let w = map.chart.space().ball_volume(r) / (opts.mc_samples as f64 * tube_vol);
    let mut out = FiberQuadrature::empty(FiberMethod::TubeMc, r);
    for (zh, p) in samples {
        if p.iter().zip(y).zip(&eta).all(|((a, b), e)| (a - b).abs() < *e) {
            out.points.push(map.to_z(&zh));
            out.weights.push(w);
        }
    }
    Ok((out, eta))
}

/// Tube estimates of `μ^{x,y}(g)` at the configured half-width and at half
/// of it. Their difference indicates the smoothing bias.
pub fn tube_convergence(
    chart: &FilteredChart,
    x: &[f64],
    y: &[f64],
    r: f64,
    g: &dyn Fn(&[f64]) -> f64,
    opts: &FiberOptions,
) -> Result<(f64, f64)> {
    let map = ScaledExp::new(chart, x, r);
    let (a, _) = tube(&map, y, r, opts, opts.tube_fraction)?;
    let (b, _) = tube(&map, y, r, opts, 0.5 * opts.tube_fraction)?;
    Ok((a.integrate(g), b.integrate(g)))
}

/// Both sides of the co-area identity
/// `∫_V g(z) u(Λ_x z) dz = ∫ u(y) μ^{x,y}(g) dy`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoareaCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

/// Evaluates both sides of the co-area identity with tensor Gauss–Legendre
/// rules of `nodes` points per axis; `g` must vanish outside
/// `B_V(0, g_radius)`.
pub fn verify_coarea(
    chart: &FilteredChart,
    x: &[f64],
    g: &dyn Fn(&[f64]) -> f64,
    g_radius: f64,
    u: &dyn Fn(&[f64]) -> f64,
    nodes: usize,
    opts: &FiberOptions,
) -> Result<CoareaCheck> {
    check_len(x, chart.dim())?;
    let n = chart.exp_dim();
    let d = chart.dim();
    let half = chart.space().ball_half_widths(g_radius);
    let lhs_rule = TensorRule::on_box(&vec![0.0; n], &half, &vec![nodes; n]);
    let mut lhs = 0.0;
    let mut z = vec![0.0; n];
    for i in 0..lhs_rule.len() {
        let w = lhs_rule.node(i, &mut z);
        let gz = g(&z);
        if gz != 0.0 {
            lhs += w * gz * u(&chart.exponential(x, &z)?);
        }
    }
    let bx = chart.image_box(x, g_radius)?;
    let rhs_rule = TensorRule::on_box(&bx.center(), &bx.half_widths(), &vec![nodes; d]);
    let mut rhs = 0.0;
    let mut y = vec![0.0; d];
    for i in 0..rhs_rule.len() {
        let w = rhs_rule.node(i, &mut y);
        let uy = u(&y);
        if uy != 0.0 {
            let fq = fiber_quadrature(chart, x, &y, g_radius, opts)?;
            rhs += w * uy * fq.integrate(g);
        }
    }
    Ok(CoareaCheck { lhs, rhs, residual: (lhs - rhs).abs() })
}

/// Comparison of `μ^{x,y}(g)` with `μ^{y,x}(g ∘ (−·))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetryCheck {
    pub forward: f64,
    pub backward: f64,
    pub residual: f64,
    /// Residual divided by `max(|forward|, |backward|)` (zero when both vanish).
    pub relative: f64,
}

pub fn fiber_symmetry_check(
    chart: &FilteredChart,
    x: &[f64],
    y: &[f64],
    g: &dyn Fn(&[f64]) -> f64,
    g_radius: f64,
    opts: &FiberOptions,
) -> Result<SymmetryCheck> {
    let fwd = fiber_quadrature(chart, x, y, g_radius, opts)?.integrate(g);
    let bwd = fiber_quadrature(chart, y, x, g_radius, opts)?.integrate(|z| {
        let m: Vec<f64> = z.iter().map(|v| -v).collect();
        g(&m)
    });
    let residual = (fwd - bwd).abs();
    let scale = fwd.abs().max(bwd.abs());
    let relative = if scale > 0.0 { residual / scale } else { 0.0 };
    Ok(SymmetryCheck { forward: fwd, backward: bwd, residual, relative })
}
