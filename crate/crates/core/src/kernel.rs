//! Dyadic kernel pieces and the measured constants of the four kernel
//! conditions (support, mass, smoothness, cancellation).
//!
//! For a profile `f` and `s = 2^{-j} ħ` the `j`-th piece is
//!
//! ```text
//! K_j(x, y) = s^{-Q} ∫ f(x, δ_{1/s} z, s) dμ^{x,y}(z),
//! ```
//!
//! evaluated with the fiber quadrature of the chart on the ball of radius
//! `s · support_radius`.

use crate::chart::{BoxRegion, FilteredChart};
use crate::error::{Error, Result};
use crate::fiber::{fiber_quadrature, FiberOptions, FiberQuadrature};
use crate::metric::{quasi_metric_with_hint, ReachOptions};
use crate::profile::{adjoint_profile, Profile};
use crate::quadrature::TensorRule;
use crate::stats::{log2_slope, spread};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// A profile bound to a chart at a fixed `ħ`.
#[derive(Debug, Clone)]
pub struct KernelFamily {
    pub chart: Arc<FilteredChart>,
    pub profile: Profile,
    pub hbar: f64,
    pub fiber: FiberOptions,
}

impl KernelFamily {
    pub fn new(chart: Arc<FilteredChart>, profile: Profile, hbar: f64, fiber: FiberOptions) -> Result<Self> {
        if !(hbar > 0.0) || hbar * profile.support_radius > chart.epsilon() {
            return Err(Error::InvalidArgument(format!(
                "ħ = {hbar} must be positive with ħ · support radius ≤ ε = {}",
                chart.epsilon()
            )));
        }
        Ok(Self { chart, profile, hbar, fiber })
    }

    /// The family generated by the adjoint profile.
    pub fn adjoint(&self) -> Self {
        Self {
            chart: self.chart.clone(),
            profile: adjoint_profile(self.chart.clone(), &self.profile),
            hbar: self.hbar,
            fiber: self.fiber,
        }
    }

    /// `s_j = 2^{-j} ħ`.
    pub fn scale(&self, j: u32) -> f64 {
        self.hbar * 0.5f64.powi(j as i32)
    }

    /// Radius of the ball carrying the `z`-support of piece `j`.
    pub fn support_radius(&self, j: u32) -> f64 {
        self.scale(j) * self.profile.support_radius
    }

    /// Box containing `{y : K_j(x, y) ≠ 0}`; by `Λ_x(z) = y ⇔ Λ_y(−z) = x`
    /// it also contains `{x : K_j(x, y) ≠ 0}` when centred at `y`.
    pub fn support_box(&self, j: u32, x: &[f64]) -> Result<BoxRegion> {
        self.chart.image_box(x, self.support_radius(j))
    }

    fn fiber_at(&self, x: &[f64], y: &[f64], r: f64) -> Result<FiberQuadrature> {
        fiber_quadrature(&self.chart, x, y, r, &self.fiber)
    }

    /// `K_j(x, y)` together with the fiber quadrature it was computed from.
    pub fn piece_with_fiber(&self, j: u32, x: &[f64], y: &[f64]) -> Result<(Complex64, FiberQuadrature)> {
        let s = self.scale(j);
        let space = self.chart.space();
        let fq = self.fiber_at(x, y, self.support_radius(j))?;
        let mut acc = Complex64::new(0.0, 0.0);
        for (z, w) in fq.points.iter().zip(&fq.weights) {
            let zs = space.dilate_unchecked(z, 1.0 / s);
            acc += self.profile.eval(x, &zs, s) * *w;
        }
        let norm = s.powi(-(space.homogeneous_dimension() as i32));
        Ok((acc * norm, fq))
    }

    pub fn piece(&self, j: u32, x: &[f64], y: &[f64]) -> Result<Complex64> {
        Ok(self.piece_with_fiber(j, x, y)?.0)
    }

    /// `I_j(x, y) = ħ^{-1} s^{-Q} μ^{x,y}(B_V(0, 2s))`.
    pub fn majorant(&self, j: u32, x: &[f64], y: &[f64]) -> Result<f64> {
        let s = self.scale(j);
        let r = 2.0 * s;
        if r > self.chart.epsilon() * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!("doubled radius {r} exceeds ε")));
        }
        let q = self.chart.space().homogeneous_dimension() as i32;
        Ok(self.fiber_at(x, y, r)?.mass() * s.powi(-q) / self.hbar)
    }
}

pub fn kernel_piece(
    chart: Arc<FilteredChart>,
    profile: &Profile,
    j: u32,
    hbar: f64,
    x: &[f64],
    y: &[f64],
    fiber: &FiberOptions,
) -> Result<Complex64> {
    KernelFamily::new(chart, profile.clone(), hbar, *fiber)?.piece(j, x, y)
}

pub fn smoothness_majorant(
    chart: Arc<FilteredChart>,
    profile: &Profile,
    j: u32,
    hbar: f64,
    x: &[f64],
    y: &[f64],
    fiber: &FiberOptions,
) -> Result<f64> {
    KernelFamily::new(chart, profile.clone(), hbar, *fiber)?.majorant(j, x, y)
}

/// Grids and budgets shared by the condition checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionSampling {
    /// Base points per axis, on the central part of the domain.
    pub x_grid: usize,
    /// Fraction of the domain half-widths covered by the base-point lattice.
    pub x_fraction: f64,
    /// Gauss–Legendre nodes per axis for `y`- and `x`-integrals.
    pub y_nodes: usize,
    /// Lattice points per axis for support scans and majorant integrals.
    pub scan_grid: usize,
    /// Pairs per dyadic trial scale in the smoothness check.
    pub pairs: usize,
    /// Dyadic trial scales `M = 2^{-k} ħ`, `k = 0..trials`.
    pub trials: u32,
    /// Gauss–Legendre nodes per axis for `V`-integrals.
    pub v_nodes: usize,
    pub seed: u64,
}

impl Default for ConditionSampling {
    fn default() -> Self {
        Self { x_grid: 9, x_fraction: 0.5, y_nodes: 16, scan_grid: 24, pairs: 6, trials: 5, v_nodes: 32, seed: 0 }
    }
}

impl ConditionSampling {
    pub fn base_points(&self, chart: &FilteredChart) -> Vec<Vec<f64>> {
        chart.domain().lattice(self.x_grid, self.x_fraction)
    }
}

fn reach_opts(seed: u64) -> ReachOptions {
    ReachOptions { seed, ..Default::default() }
}

/// Condition (I): the smallest `C` with `K_j(x, y) = 0` whenever
/// `ρ(x, y) > C 2^{-j}`, sampled per `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportEstimate {
    pub c1: f64,
    pub per_j: Vec<f64>,
    /// Sampled points with a nonzero kernel value.
    pub nonzero: usize,
}

pub fn check_support(family: &KernelFamily, js: &[u32], sampling: &ConditionSampling) -> Result<SupportEstimate> {
    let xs = sampling.base_points(&family.chart);
    let space = family.chart.space();
    let mut per_j = Vec::with_capacity(js.len());
    let mut nonzero = 0;
    for &j in js {
        let results: Vec<Result<(f64, usize)>> = xs
            .par_iter()
            .map(|x| {
                let scan = family.support_box(j, x)?.inflated(0.1);
                let grid = scan.lattice(sampling.scan_grid, 1.0);
                // Rank candidate points by the smallest fiber node norm, an
                // upper bound for ρ, then resolve the largest ones exactly.
                let mut cand: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::new();
                for y in grid {
                    let (k, fq) = family.piece_with_fiber(j, x, &y)?;
                    if k.norm() == 0.0 {
                        continue;
                    }
                    let best = fq
                        .points
                        .iter()
                        .map(|z| (space.norm(z), z))
                        .fold((f64::INFINITY, None), |a, (n, z)| if n < a.0 { (n, Some(z)) } else { a });
                    if let (n, Some(z)) = best {
                        cand.push((n, z.clone(), y));
                    }
                }
                cand.sort_by(|a, b| b.0.total_cmp(&a.0));
                let mut c: f64 = 0.0;
                for (_, z, y) in cand.iter().take(4) {
                    let r = quasi_metric_with_hint(&family.chart, x, y, 1e-9, &reach_opts(sampling.seed), Some(z))?;
                    c = c.max(r * 2f64.powi(j as i32));
                }
                Ok((c, cand.len()))
            })
            .collect();
        let mut cj: f64 = 0.0;
        for r in results {
            let (c, n) = r?;
            cj = cj.max(c);
            nonzero += n;
        }
        per_j.push(cj);
    }
    Ok(SupportEstimate { c1: per_j.iter().cloned().fold(0.0, f64::max), per_j, nonzero })
}

/// Condition (II): `sup_x ∫ |K_j(x, y)| dy` and `sup_y ∫ |K_j(x, y)| dx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassEstimate {
    pub c2: f64,
    pub rows: Vec<f64>,
    pub columns: Vec<f64>,
}

/// `∫ |K_j(x, y)| dy` by Gauss–Legendre on the support box.
pub fn row_mass(family: &KernelFamily, j: u32, x: &[f64], nodes: usize) -> Result<f64> {
    let bx = family.support_box(j, x)?;
    let d = x.len();
    let rule = TensorRule::on_box(&bx.center(), &bx.half_widths(), &vec![nodes; d]);
    let mut y = vec![0.0; d];
    let mut acc = 0.0;
    for i in 0..rule.len() {
        let w = rule.node(i, &mut y);
        acc += w * family.piece(j, x, &y)?.norm();
    }
    Ok(acc)
}

/// `∫ |K_j(x, y)| dx`.
pub fn column_mass(family: &KernelFamily, j: u32, y: &[f64], nodes: usize) -> Result<f64> {
    let bx = family.support_box(j, y)?;
    let d = y.len();
    let rule = TensorRule::on_box(&bx.center(), &bx.half_widths(), &vec![nodes; d]);
    let mut x = vec![0.0; d];
    let mut acc = 0.0;
    for i in 0..rule.len() {
        let w = rule.node(i, &mut x);
        acc += w * family.piece(j, &x, y)?.norm();
    }
    Ok(acc)
}

pub fn check_mass(family: &KernelFamily, js: &[u32], sampling: &ConditionSampling) -> Result<MassEstimate> {
    let xs = sampling.base_points(&family.chart);
    let mut rows = Vec::new();
    let mut columns = Vec::new();
    for &j in js {
        let r: Result<Vec<(f64, f64)>> = xs
            .par_iter()
            .map(|p| Ok((row_mass(family, j, p, sampling.y_nodes)?, column_mass(family, j, p, sampling.y_nodes)?)))
            .collect();
        let r = r?;
        rows.push(r.iter().map(|v| v.0).fold(0.0, f64::max));
        columns.push(r.iter().map(|v| v.1).fold(0.0, f64::max));
    }
    let c2 = rows.iter().chain(&columns).cloned().fold(0.0, f64::max);
    Ok(MassEstimate { c2, rows, columns })
}

/// Condition (IV) through `∫ K_j(x, y) dy = ∫_V f(x, z, 2^{-j} ħ) dz`:
/// `C4 = sup_{x,j} 2^j |∫_V f(x, z, 2^{-j} ħ) dz|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CancellationEstimate {
    pub c4: f64,
    pub per_j: Vec<f64>,
}

pub fn check_cancellation(family: &KernelFamily, js: &[u32], sampling: &ConditionSampling) -> Result<CancellationEstimate> {
    if !family.profile.mean_zero {
        return Err(Error::NotMeanZero);
    }
    let xs = sampling.base_points(&family.chart);
    let space = family.chart.space();
    let per_j: Vec<f64> = js
        .iter()
        .map(|&j| {
            let s = family.scale(j);
            xs.par_iter()
                .map(|x| 2f64.powi(j as i32) * family.profile.v_integral(space, x, s, sampling.v_nodes).norm())
                .reduce(|| 0.0, f64::max)
        })
        .collect();
    Ok(CancellationEstimate { c4: per_j.iter().cloned().fold(0.0, f64::max), per_j })
}

/// `∫ K_j(x, y) dy` computed on the `y` side, for comparison with the
/// `V`-integral used by [`check_cancellation`].
pub fn row_integral(family: &KernelFamily, j: u32, x: &[f64], nodes: usize) -> Result<Complex64> {
    let bx = family.support_box(j, x)?;
    let d = x.len();
    let rule = TensorRule::on_box(&bx.center(), &bx.half_widths(), &vec![nodes; d]);
    let mut y = vec![0.0; d];
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..rule.len() {
        let w = rule.node(i, &mut y);
        acc += family.piece(j, x, &y)? * w;
    }
    Ok(acc)
}

/// `∫ I_j(x, y) dy` on a midpoint lattice of the doubled support box.
pub fn majorant_row_integral(family: &KernelFamily, j: u32, x: &[f64], grid: usize) -> Result<f64> {
    let bx = family.chart.image_box(x, 2.0 * family.scale(j))?;
    let pts = bx.lattice(grid, 1.0);
    let cell = bx.volume() / pts.len() as f64;
    let mut acc = 0.0;
    for y in &pts {
        acc += family.majorant(j, x, y)?;
    }
    Ok(acc * cell)
}

/// `∫ I_j(x, y) dx`.
pub fn majorant_column_integral(family: &KernelFamily, j: u32, y: &[f64], grid: usize) -> Result<f64> {
    let bx = family.chart.image_box(y, 2.0 * family.scale(j))?;
    let pts = bx.lattice(grid, 1.0);
    let cell = bx.volume() / pts.len() as f64;
    let mut acc = 0.0;
    for x in &pts {
        acc += family.majorant(j, x, y)?;
    }
    Ok(acc * cell)
}

/// Condition (III) with the majorant of [`KernelFamily::majorant`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessEstimate {
    /// `ratio × integrability`.
    pub c3: f64,
    /// Largest trial `M` whose ratio stays within twice the finest one.
    pub m: f64,
    /// Sup of `|K_j(x,y) − K_j(x,y0)| / (2^j ρ(y,y0) I_j(x,y))` over pairs
    /// with `ρ(y, y0) ≤ M_k 2^{-j}`, for `M_k = 2^{-k} ħ`.
    pub ratio_by_trial: Vec<f64>,
    pub ratio: f64,
    /// Sup of the row and column integrals of `I_j`.
    pub integrability: f64,
    pub pairs_used: usize,
    pub pairs_skipped: usize,
    /// Set when the ratio was unbounded even at the finest trial scale.
    pub unstable: bool,
}

struct PairSample {
    k: u32,
    ratio: f64,
}

fn sample_pair(family: &KernelFamily, j: u32, x: &[f64], k: u32, rng: &mut impl Rng, seed: u64) -> Result<Option<PairSample>> {
    let chart = &family.chart;
    let space = chart.space();
    let n = chart.exp_dim();
    let s = family.scale(j);
    let z0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0) * family.profile.support_radius).collect();
    let y0 = chart.exponential(x, &space.dilate_unchecked(&z0, s))?;
    let mut u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let axis = rng.random_range(0..n);
    u[axis] = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let tau = s * 0.5f64.powi(k as i32) * rng.random_range(0.5..1.0);
    let w = space.dilate_unchecked(&u, tau);
    let y = chart.exponential(&y0, &w)?;
    let rho = quasi_metric_with_hint(chart, &y0, &y, 1e-9, &reach_opts(seed), Some(&w))?;
    if !(rho > 0.0) {
        return Ok(None);
    }
    let ky = family.piece(j, x, &y)?;
    let ky0 = family.piece(j, x, &y0)?;
    let diff = (ky - ky0).norm();
    if diff == 0.0 {
        return Ok(Some(PairSample { k, ratio: 0.0 }));
    }
    let i = family.majorant(j, x, &y)?;
    let ratio = if i > 0.0 { diff / (2f64.powi(j as i32) * rho * i) } else { f64::INFINITY };
    Ok(Some(PairSample { k, ratio }))
}

pub fn check_smoothness(family: &KernelFamily, js: &[u32], sampling: &ConditionSampling) -> Result<SmoothnessEstimate> {
    let xs = sampling.base_points(&family.chart);
    let trials = sampling.trials.max(1);
    let mut best = vec![0.0f64; trials as usize];
    let mut used = 0;
    let mut skipped = 0;
    let mut integrability: f64 = 0.0;
    for &j in js {
        let per_x: Vec<Result<(Vec<PairSample>, usize, f64)>> = xs
            .par_iter()
            .enumerate()
            .map(|(xi, x)| {
                // Pair draws depend on (x, k, pair) only, so the same normalised
                // configurations are used at every ħ and j.
                let mut out = Vec::new();
                let mut skip = 0;
                for k in 0..trials {
                    for p in 0..sampling.pairs {
                        let mut rng = crate::rng::stream(sampling.seed, &[0x736d_6f6f, xi as u64, k as u64, p as u64]);
                        match sample_pair(family, j, x, k, &mut rng, sampling.seed)? {
                            Some(s) => out.push(s),
                            None => skip += 1,
                        }
                    }
                }
                let grid = (sampling.scan_grid / 2).max(4);
                let a = majorant_row_integral(family, j, x, grid)?.max(majorant_column_integral(family, j, x, grid)?);
                Ok((out, skip, a))
            })
            .collect();
        for r in per_x {
            let (samples, skip, a) = r?;
            skipped += skip;
            integrability = integrability.max(a);
            for s in samples {
                used += 1;
                // A pair at trial scale k is admissible for every M_k' ≥ M_k.
                for kk in 0..=s.k as usize {
                    best[kk] = best[kk].max(s.ratio);
                }
            }
        }
    }
    let finest = *best.last().unwrap();
    let unstable = !finest.is_finite();
    let mut chosen = trials as usize - 1;
    if !unstable {
        for k in 0..trials as usize {
            if best[k] <= 2.0 * finest {
                chosen = k;
                break;
            }
        }
    }
    let ratio = best[chosen];
    Ok(SmoothnessEstimate {
        c3: ratio * integrability,
        m: family.hbar * 0.5f64.powi(chosen as i32),
        ratio_by_trial: best,
        ratio,
        integrability,
        pairs_used: used,
        pairs_skipped: skipped,
        unstable,
    })
}

/// Constants of one kernel family at one `ħ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionConstants {
    pub hbar: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: Option<f64>,
    pub m: f64,
    pub support: SupportEstimate,
    pub mass: MassEstimate,
    pub smoothness: SmoothnessEstimate,
    pub cancellation: Option<CancellationEstimate>,
}

pub fn measure_conditions(family: &KernelFamily, js: &[u32], sampling: &ConditionSampling) -> Result<ConditionConstants> {
    let support = check_support(family, js, sampling)?;
    let mass = check_mass(family, js, sampling)?;
    let smoothness = check_smoothness(family, js, sampling)?;
    let cancellation = if family.profile.mean_zero { Some(check_cancellation(family, js, sampling)?) } else { None };
    Ok(ConditionConstants {
        hbar: family.hbar,
        c1: support.c1,
        c2: mass.c2,
        c3: smoothness.c3,
        c4: cancellation.as_ref().map(|c| c.c4),
        m: smoothness.m,
        support,
        mass,
        smoothness,
        cancellation,
    })
}

/// Log₂-slopes of the constants against `ħ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionSlopes {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: Option<f64>,
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub hbars: Vec<f64>,
    pub js: Vec<u32>,
    pub kernel: Vec<ConditionConstants>,
    pub adjoint: Vec<ConditionConstants>,
    pub slopes: ConditionSlopes,
    pub adjoint_slopes: ConditionSlopes,
    /// `max / min` of `C1 · C3` across `ħ`.
    pub c1c3_spread: f64,
    /// `max / min` of `C1 / M` across `ħ`.
    pub c1_over_m_spread: f64,
    pub sampling: ConditionSampling,
}

fn slopes(hbars: &[f64], rows: &[ConditionConstants]) -> ConditionSlopes {
    let col = |f: &dyn Fn(&ConditionConstants) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let c4 = if rows.iter().all(|r| r.c4.is_some()) { Some(log2_slope(hbars, &col(&|r| r.c4.unwrap()))) } else { None };
    ConditionSlopes {
        c1: log2_slope(hbars, &col(&|r| r.c1)),
        c2: log2_slope(hbars, &col(&|r| r.c2)),
        c3: log2_slope(hbars, &col(&|r| r.c3)),
        c4,
        m: log2_slope(hbars, &col(&|r| r.m)),
    }
}

/// Measures the constants of the profile and of its adjoint at every `ħ`.
pub fn condition_report(
    chart: Arc<FilteredChart>,
    profile: &Profile,
    hbars: &[f64],
    js: &[u32],
    sampling: &ConditionSampling,
    fiber: &FiberOptions,
) -> Result<ConditionReport> {
    let mut kernel = Vec::new();
    let mut adjoint = Vec::new();
    for &h in hbars {
        let fam = KernelFamily::new(chart.clone(), profile.clone(), h, *fiber)?;
        kernel.push(measure_conditions(&fam, js, sampling)?);
        adjoint.push(measure_conditions(&fam.adjoint(), js, sampling)?);
    }
    let c1c3: Vec<f64> = kernel.iter().map(|r| r.c1 * r.c3).collect();
    let c1m: Vec<f64> = kernel.iter().map(|r| r.c1 / r.m).collect();
    Ok(ConditionReport {
        slopes: slopes(hbars, &kernel),
        adjoint_slopes: slopes(hbars, &adjoint),
        c1c3_spread: spread(&c1c3),
        c1_over_m_spread: spread(&c1m),
        hbars: hbars.to_vec(),
        js: js.to_vec(),
        kernel,
        adjoint,
        sampling: *sampling,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graded::GradedSpace;
    use crate::poly::{PolyField, Polynomial};
    use crate::profile::ProfileKind;

    fn euclid(n: usize) -> Arc<FilteredChart> {
        Arc::new(
            FilteredChart::new(
                GradedSpace::new(vec![1; n]).unwrap(),
                (0..n).map(|k| PolyField::coordinate(n, k)).collect(),
                BoxRegion::new(vec![-1.0; n], vec![1.0; n]).unwrap(),
                1.0,
            )
            .unwrap(),
        )
    }

    fn grushin() -> Arc<FilteredChart> {
        let d = 2;
        let x2 = PolyField::new(vec![Polynomial::zero(d), Polynomial::variable(d, 0)]).unwrap();
        Arc::new(
            FilteredChart::new(
                GradedSpace::new(vec![1, 1, 2]).unwrap(),
                vec![PolyField::coordinate(d, 0), x2, PolyField::coordinate(d, 1)],
                BoxRegion::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(),
                1.0,
            )
            .unwrap(),
        )
    }

    fn small() -> ConditionSampling {
        ConditionSampling { x_grid: 2, scan_grid: 16, pairs: 3, ..Default::default() }
    }

    #[test]
    fn euclidean_piece_matches_closed_form() {
        let c = euclid(2);
        let p = Profile::builtin(c.space(), ProfileKind::OddBumpHbar { beta: 0.5 }, 0.3).unwrap();
        let fam = KernelFamily::new(c, p.clone(), 0.5, FiberOptions::default()).unwrap();
        let (x, y) = ([0.1, -0.2], [0.15, -0.1]);
        for j in 0..3 {
            let s = fam.scale(j);
            let z = [(y[0] - x[0]) / s, (y[1] - x[1]) / s];
            let expect = p.eval(&x, &z, s) / (s * s);
            assert!((fam.piece(j, &x, &y).unwrap() - expect).norm() < 1e-8 * (1.0 + expect.norm()));
        }
    }

    #[test]
    fn dyadic_self_similarity_on_flat_charts() {
        // K_{j+1}(x, x + v/2) at ħ equals 2^Q K_j(x, x + v) at ħ with the
        // profile's ħ-slot unchanged, since s_{j+1} = s_j / 2.
        let c = euclid(1);
        let p = Profile::builtin(c.space(), ProfileKind::Gaussian { sigma: 0.5 }, 0.0).unwrap();
        let fam = KernelFamily::new(c, p, 0.5, FiberOptions::default()).unwrap();
        let v = 0.2;
        let a = fam.piece(2, &[0.0], &[v / 2.0]).unwrap();
        let b = fam.piece(1, &[0.0], &[v]).unwrap();
        assert!((a - b * 2.0).norm() < 1e-9);
    }

    #[test]
    fn support_constant_is_hbar_on_flat_chart() {
        let c = euclid(1);
        let p = Profile::builtin(c.space(), ProfileKind::Bump, 0.0).unwrap();
        for h in [0.5, 0.125] {
            let fam = KernelFamily::new(c.clone(), p.clone(), h, FiberOptions::default()).unwrap();
            let s = check_support(&fam, &[0, 1], &ConditionSampling { scan_grid: 64, ..small() }).unwrap();
            assert!(s.c1 <= h && s.c1 > 0.95 * h, "{} vs {h}", s.c1);
            // Halving the scale halves the raw support radius.
            assert!((s.per_j[0] - s.per_j[1]).abs() < 0.05 * h);
        }
    }

    #[test]
    fn mass_is_profile_l1_norm_on_flat_chart() {
        let c = euclid(1);
        let p = Profile::builtin(c.space(), ProfileKind::OddBump, 0.0).unwrap();
        let l1 = p.v_abs_integral(c.space(), &[0.0], 0.0, 400);
        let fam = KernelFamily::new(c, p, 0.25, FiberOptions::default()).unwrap();
        let m = check_mass(&fam, &[0, 2], &ConditionSampling { y_nodes: 48, ..small() }).unwrap();
        for v in m.rows.iter().chain(&m.columns) {
            assert!((v - l1).abs() < 2e-3 * l1, "{v} vs {l1}");
        }
        let zero = Profile::builtin(fam.chart.space(), ProfileKind::Zero, 0.0).unwrap();
        let fz = KernelFamily::new(fam.chart.clone(), zero, 0.25, FiberOptions::default()).unwrap();
        assert_eq!(check_mass(&fz, &[0], &small()).unwrap().c2, 0.0);
    }

    #[test]
    fn cancellation_shortcut_matches_row_integral() {
        let c = euclid(1);
        let p = Profile::builtin(c.space(), ProfileKind::OddBumpHbar { beta: 1.0 }, 0.0).unwrap();
        let fam = KernelFamily::new(c, p.clone(), 0.5, FiberOptions::default()).unwrap();
        let est = check_cancellation(&fam, &[0, 1, 2], &small()).unwrap();
        let phi = p.v_integral(fam.chart.space(), &[0.0], 1.0, 200).re;
        // 2^j · 2^{-j} ħ ∫φ = ħ ∫φ at every j.
        for v in &est.per_j {
            assert!((v - 0.5 * phi).abs() < 1e-6, "{v}");
        }
        let y_side = row_integral(&fam, 1, &[0.0], 64).unwrap();
        assert!((y_side.re - 0.25 * phi).abs() < 1e-6);
        let odd = Profile::builtin(fam.chart.space(), ProfileKind::OddBump, 0.0).unwrap();
        let fo = KernelFamily::new(fam.chart.clone(), odd, 0.5, FiberOptions::default()).unwrap();
        assert!(check_cancellation(&fo, &[0, 3], &small()).unwrap().c4 < 1e-15);
        let bump = Profile::builtin(fam.chart.space(), ProfileKind::Bump, 0.0).unwrap();
        let fb = KernelFamily::new(fam.chart.clone(), bump, 0.5, FiberOptions::default()).unwrap();
        assert!(matches!(check_cancellation(&fb, &[0], &small()), Err(Error::NotMeanZero)));
    }

    #[test]
    fn majorant_vanishes_outside_doubled_ball_and_integrates_exactly() {
        let c = euclid(1);
        let p = Profile::builtin(c.space(), ProfileKind::Bump, 0.0).unwrap();
        let fam = KernelFamily::new(c, p, 0.25, FiberOptions::default()).unwrap();
        assert_eq!(fam.majorant(1, &[0.0], &[0.3]).unwrap(), 0.0);
        assert!((fam.majorant(1, &[0.0], &[0.2]).unwrap() - 4.0 / 0.125).abs() < 1e-6);
        // ∫ I_j dy = ħ^{-1} s^{-Q} vol B(0, 2s) = 2^{Q+N} / ħ.
        let a = majorant_row_integral(&fam, 1, &[0.0], 400).unwrap();
        assert!((a - 16.0).abs() < 0.2, "{a}");
    }

    #[test]
    fn support_and_mass_compose() {
        // ∫ ρ(x,y) |K_j(x,y)| dy ≤ C1 C2 2^{-j}.
        let c = euclid(1);
        let p = Profile::builtin(c.space(), ProfileKind::OddBump, 0.0).unwrap();
        let fam = KernelFamily::new(c, p, 0.5, FiberOptions::default()).unwrap();
        let sampling = ConditionSampling { scan_grid: 64, y_nodes: 48, ..small() };
        let c1 = check_support(&fam, &[0, 1, 2], &sampling).unwrap().c1;
        let c2 = check_mass(&fam, &[0, 1, 2], &sampling).unwrap().c2;
        for j in 0..3u32 {
            let bx = fam.support_box(j, &[0.1]).unwrap();
            let rule = TensorRule::on_box(&bx.center(), &bx.half_widths(), &[64]);
            let lhs = rule.integrate(|y| (y[0] - 0.1).abs() * fam.piece(j, &[0.1], y).unwrap().norm());
            assert!(lhs <= c1 * c2 * 0.5f64.powi(j as i32));
        }
    }

    #[test]
    fn adjoint_pieces_are_conjugate_transposes_on_grushin() {
        let c = grushin();
        let p = Profile::builtin(c.space(), ProfileKind::Gaussian { sigma: 0.6 }, 0.4).unwrap();
        let fam = KernelFamily::new(c.clone(), p, 0.25, FiberOptions::default()).unwrap();
        let adj = fam.adjoint();
        let x = [0.2, 0.1];
        let y = c.exponential(&x, &[0.05, -0.04, 0.01]).unwrap();
        let direct = fam.piece(0, &y, &x).unwrap().conj();
        let via = adj.piece(0, &x, &y).unwrap();
        assert!((direct - via).norm() < 1e-2 * direct.norm(), "{direct} vs {via}");
    }

    #[test]
    fn smoothness_is_finite_on_flat_chart() {
        let c = euclid(1);
        let p = Profile::builtin(c.space(), ProfileKind::OddBump, 0.0).unwrap();
        let fam = KernelFamily::new(c, p, 0.25, FiberOptions::default()).unwrap();
        let s = check_smoothness(&fam, &[0, 1], &small()).unwrap();
        assert!(!s.unstable && s.c3.is_finite() && s.c3 > 0.0);
        assert!(s.m > 0.0 && s.m <= 0.25);
        assert!(s.ratio_by_trial.windows(2).all(|w| w[0] >= w[1]));
    }
}
