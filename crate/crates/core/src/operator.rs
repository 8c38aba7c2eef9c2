//! Dyadic operators `ℙ_ħ` and the norm measurements built on them.
//!
//! An operator is `h(x) u(x) + Σ_{j=1}^{j_max} α_j ∫ f(x, ẑ, s_j) u(Λ_x(δ_{s_j} ẑ)) dẑ`
//! with `s_j = 2^{-j} ħ` and `α_j = 2^{jm}`. [`apply_operator`] evaluates it
//! pointwise. For norm studies the pieces are discretised once on a local
//! window around a base point ([`discretize_window`]); every coefficient
//! choice is then a sparse matrix assembled from the stored pieces.

use crate::chart::{BoxRegion, FilteredChart};
use crate::error::{check_len, Error, Result};
use crate::kernel::KernelFamily;
use crate::metric::{quasi_metric, ReachOptions};
use crate::profile::{adjoint_profile, bump, cutoff, Profile};
use crate::quadrature::{CellGrid, TensorRule};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// The smooth point-mass coefficient `h(x)`.
pub type Multiplier = Arc<dyn Fn(&[f64]) -> Complex64 + Send + Sync>;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Truncated dyadic expansion of an order-`m` kernel.
#[derive(Clone)]
pub struct DyadicKernel {
    pub order: Complex64,
    pub profile: Profile,
    pub hbar: f64,
    pub j_max: u32,
    coefficients: Vec<Complex64>,
    multiplier: Option<Multiplier>,
}

impl fmt::Debug for DyadicKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DyadicKernel")
            .field("order", &self.order)
            .field("profile", &self.profile.label)
            .field("hbar", &self.hbar)
            .field("j_max", &self.j_max)
            .field("coefficients", &self.coefficients)
            .field("multiplier", &self.multiplier.is_some())
            .finish()
    }
}

impl DyadicKernel {
    pub fn new(profile: Profile, order: Complex64, hbar: f64, j_max: u32) -> Result<Self> {
        if order.re > 0.0 {
            return Err(Error::InvalidArgument(format!("order must have Re m ≤ 0, got {order}")));
        }
        if !(hbar > 0.0 && hbar <= 1.0) {
            return Err(Error::InvalidArgument(format!("ħ must lie in (0, 1], got {hbar}")));
        }
        if j_max == 0 {
            return Err(Error::InvalidArgument("j_max must be at least 1".into()));
        }
        let ln2 = std::f64::consts::LN_2;
        let coefficients = (1..=j_max).map(|j| (order * (j as f64 * ln2)).exp()).collect();
        Ok(Self { order, profile, hbar, j_max, coefficients, multiplier: None })
    }

    /// A kernel with every `α_j = 0` and the given multiplier.
    pub fn pure_multiplier(profile: Profile, hbar: f64, h: Multiplier) -> Result<Self> {
        let mut k = Self::new(profile, ZERO, hbar, 1)?;
        k.coefficients = vec![ZERO];
        k.multiplier = Some(h);
        Ok(k)
    }

    /// Replaces `α_1, …, α_{j_max}`.
    pub fn with_coefficients(mut self, alpha: Vec<Complex64>) -> Result<Self> {
        if alpha.len() != self.j_max as usize {
            return Err(Error::DimensionMismatch { expected: self.j_max as usize, got: alpha.len() });
        }
        self.coefficients = alpha;
        Ok(self)
    }

    pub fn with_multiplier(mut self, h: Multiplier) -> Self {
        self.multiplier = Some(h);
        self
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coefficients
    }

    /// `α_j` for `1 ≤ j ≤ j_max`, zero otherwise.
    pub fn alpha(&self, j: u32) -> Complex64 {
        if j == 0 || j > self.j_max {
            ZERO
        } else {
            self.coefficients[j as usize - 1]
        }
    }

    pub fn max_alpha(&self) -> f64 {
        self.coefficients.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }

    pub fn multiplier_at(&self, x: &[f64]) -> Complex64 {
        self.multiplier.as_ref().map_or(ZERO, |h| h(x))
    }

    pub fn has_multiplier(&self) -> bool {
        self.multiplier.is_some()
    }

    pub fn scale(&self, j: u32) -> f64 {
        self.hbar * 0.5f64.powi(j as i32)
    }

    /// `Σ_{j>j_max} |α_j| C2`, finite only for `Re m < 0`.
    pub fn tail_bound(&self, c2: f64) -> Option<f64> {
        let q = 2f64.powf(self.order.re);
        (self.order.re < 0.0).then(|| c2 * q.powi(self.j_max as i32 + 1) / (1.0 - q))
    }

    /// The kernel of `ℙ_ħ^*`: adjoint profile, conjugated coefficients and
    /// multiplier.
    pub fn adjoint(&self, chart: Arc<FilteredChart>) -> Self {
        let multiplier = self.multiplier.clone().map(|h| -> Multiplier { Arc::new(move |x: &[f64]| h(x).conj()) });
        Self {
            order: self.order.conj(),
            profile: adjoint_profile(chart, &self.profile),
            hbar: self.hbar,
            j_max: self.j_max,
            coefficients: self.coefficients.iter().map(|a| a.conj()).collect(),
            multiplier,
        }
    }

    fn check_chart(&self, chart: &FilteredChart) -> Result<()> {
        let r = self.scale(1) * self.profile.support_radius;
        if r > chart.epsilon() * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!("finest support radius {r} exceeds ε = {}", chart.epsilon())));
        }
        Ok(())
    }
}

/// `ℙ_ħ u(x)` with a tensor Gauss–Legendre rule of `nodes` points per axis
/// on the `ẑ`-support of the profile.
pub fn apply_operator(
    chart: &FilteredChart,
    kernel: &DyadicKernel,
    u: &dyn Fn(&[f64]) -> Complex64,
    x: &[f64],
    nodes: usize,
) -> Result<Complex64> {
    check_len(x, chart.dim())?;
    kernel.check_chart(chart)?;
    let space = chart.space();
    let n = space.dim();
    let half = space.ball_half_widths(kernel.profile.support_radius);
    let rule = TensorRule::on_box(&vec![0.0; n], &half, &vec![nodes; n]);
    let mut acc = kernel.multiplier_at(x) * u(x);
    let mut zh = vec![0.0; n];
    for j in 1..=kernel.j_max {
        let a = kernel.alpha(j);
        if a == ZERO {
            continue;
        }
        let s = kernel.scale(j);
        let mut part = ZERO;
        for i in 0..rule.len() {
            let w = rule.node(i, &mut zh);
            let f = kernel.profile.eval(x, &zh, s);
            if f == ZERO {
                continue;
            }
            let y = chart.exponential(x, &space.dilate_unchecked(&zh, s))?;
            part += f * w * u(&y);
        }
        acc += a * part;
    }
    Ok(acc)
}

/// Sparse square matrix acting on grid values.
#[derive(Debug, Clone, PartialEq)]
pub struct GridOperator {
    rows: Vec<Vec<(u32, Complex64)>>,
}

fn merge_rows(a: &[(u32, Complex64)], b: &[(u32, Complex64)], c: Complex64) -> Vec<(u32, Complex64)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut k) = (0, 0);
    while i < a.len() || k < b.len() {
        if k == b.len() || (i < a.len() && a[i].0 < b[k].0) {
            out.push(a[i]);
            i += 1;
        } else if i == a.len() || b[k].0 < a[i].0 {
            out.push((b[k].0, c * b[k].1));
            k += 1;
        } else {
            out.push((a[i].0, a[i].1 + c * b[k].1));
            i += 1;
            k += 1;
        }
    }
    out
}

impl GridOperator {
    pub fn zeros(len: usize) -> Self {
        Self { rows: vec![Vec::new(); len] }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn entry(&self, i: usize, k: usize) -> Complex64 {
        self.rows[i].iter().find(|e| e.0 as usize == k).map_or(ZERO, |e| e.1)
    }

    /// `self += c · other`.
    pub fn add_scaled(&mut self, other: &GridOperator, c: Complex64) {
        assert_eq!(self.len(), other.len());
        for (a, b) in self.rows.iter_mut().zip(&other.rows) {
            if !b.is_empty() {
                *a = merge_rows(a, b, c);
            }
        }
    }

    pub fn add_diagonal(&mut self, d: &[Complex64]) {
        for (i, v) in d.iter().enumerate() {
            if *v != ZERO {
                self.rows[i] = merge_rows(&self.rows[i], &[(i as u32, *v)], Complex64::new(1.0, 0.0));
            }
        }
    }

    pub fn apply(&self, u: &[Complex64]) -> Vec<Complex64> {
        self.rows.par_iter().map(|row| row.iter().map(|(k, a)| a * u[*k as usize]).sum()).collect()
    }

    pub fn apply_adjoint(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![ZERO; self.len()];
        for (row, vi) in self.rows.iter().zip(v) {
            for (k, a) in row {
                out[*k as usize] += a.conj() * vi;
            }
        }
        out
    }

    /// Largest absolute row and column sums.
    pub fn schur_sums(&self) -> (f64, f64) {
        let mut cols = vec![0.0; self.len()];
        let mut row_max: f64 = 0.0;
        for row in &self.rows {
            let mut s = 0.0;
            for (k, a) in row {
                s += a.norm();
                cols[*k as usize] += a.norm();
            }
            row_max = row_max.max(s);
        }
        (row_max, cols.into_iter().fold(0.0, f64::max))
    }

    /// Largest singular value by power iteration on `AᴴA`.
    pub fn l2_norm(&self, iterations: usize, seed: u64) -> f64 {
        let mut rng = crate::rng::stream(seed, &[0x706f_7765]);
        let mut v: Vec<Complex64> =
            (0..self.len()).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let norm = |v: &[Complex64]| v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        let mut sigma2 = 0.0;
        for _ in 0..iterations {
            let nv = norm(&v);
            if nv == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|a| *a /= nv);
            let w = self.apply_adjoint(&self.apply(&v));
            let next = norm(&w);
            v = w;
            if (next - sigma2).abs() <= 1e-12 * next {
                sigma2 = next;
                break;
            }
            sigma2 = next;
        }
        sigma2.sqrt()
    }
}

/// Grid and quadrature settings for [`discretize_window`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowOptions {
    /// Cells per axis.
    pub grid: usize,
    /// The window is the image box of radius `radius_factor · ħ`.
    pub radius_factor: f64,
    /// Cap on Gauss–Legendre nodes per axis for one piece; by default
    /// 32, 16, 10, 8 for `N = 1, 2, 3, ≥ 4`.
    pub max_nodes: Option<usize>,
}

impl Default for WindowOptions {
    fn default() -> Self {
        Self { grid: 64, radius_factor: 2.0, max_nodes: None }
    }
}

/// One bump of a test function, in window-normalised coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestBump {
    pub center: Vec<f64>,
    pub half_widths: Vec<f64>,
    pub sign: f64,
}

/// A signed sum of anisotropic bumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub trial: usize,
    pub bumps: Vec<TestBump>,
}

/// Pieces of a kernel discretised on a tensor grid over a window.
#[derive(Debug, Clone)]
pub struct WindowDiscretization {
    chart: Arc<FilteredChart>,
    pub hbar: f64,
    pub center: Vec<f64>,
    pub radius: f64,
    pub window: BoxRegion,
    pub grid: CellGrid,
    /// `(j, nodes per axis, matrix of ∫ f(x, ẑ, s_j) u(Λ_x δ_{s_j} ẑ) dẑ)`.
    pub pieces: Vec<(u32, usize, GridOperator)>,
}

fn default_max_nodes(n: usize) -> usize {
    match n {
        1 => 32,
        2 => 16,
        3 => 10,
        _ => 8,
    }
}

/// Multilinear interpolation weights of `y` on the cell centres of `grid`;
/// points beyond the outer centres interpolate towards zero.
fn interpolation(grid: &CellGrid, y: &[f64], out: &mut Vec<(usize, f64)>) {
    out.clear();
    let d = grid.dim();
    let mut base = [0i64; 8];
    let mut frac = [0.0f64; 8];
    for k in 0..d {
        let t = (y[k] - grid.lo[k]) / grid.spacing(k) - 0.5;
        let i0 = t.floor();
        if i0 < -1.0 || i0 > grid.counts[k] as f64 - 1.0 {
            return;
        }
        base[k] = i0 as i64;
        frac[k] = t - i0;
    }
    'corner: for mask in 0..(1usize << d) {
        let mut idx = 0usize;
        let mut w = 1.0;
        for k in 0..d {
            let up = (mask >> k) & 1;
            let i = base[k] + up as i64;
            if i < 0 || i >= grid.counts[k] as i64 {
                continue 'corner;
            }
            idx = idx * grid.counts[k] + i as usize;
            w *= if up == 1 { frac[k] } else { 1.0 - frac[k] };
        }
        if w != 0.0 {
            out.push((idx, w));
        }
    }
}

/// Discretises pieces `js` of `profile` at `ħ` on the window
/// `image_box(center, radius_factor · ħ)`, clamped to `ε` and the chart
/// domain. Row `i` of piece `j` maps grid values of `u` (interpolated
/// multilinearly) to `∫ f(x_i, ẑ, s_j) u(Λ_{x_i}(δ_{s_j} ẑ)) dẑ`.
pub fn discretize_window(
    chart: Arc<FilteredChart>,
    profile: &Profile,
    hbar: f64,
    center: &[f64],
    js: &[u32],
    opts: &WindowOptions,
) -> Result<WindowDiscretization> {
    check_len(center, chart.dim())?;
    let d = chart.dim();
    if d > 3 {
        return Err(Error::InvalidArgument("window discretisation supports d ≤ 3".into()));
    }
    if opts.grid < 2 {
        return Err(Error::InvalidArgument("window grid needs at least 2 cells per axis".into()));
    }
    let space = chart.space().clone();
    let n = space.dim();
    for &j in js {
        let r = hbar * 0.5f64.powi(j as i32) * profile.support_radius;
        if r > chart.epsilon() * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!("support radius {r} of piece {j} exceeds ε")));
        }
    }
    let radius = (opts.radius_factor * hbar).min(chart.epsilon());
    let image = chart.image_box(center, radius)?;
    let dom = chart.domain();
    let lo: Vec<f64> = image.lo.iter().zip(&dom.lo).map(|(a, b)| a.max(*b)).collect();
    let hi: Vec<f64> = image.hi.iter().zip(&dom.hi).map(|(a, b)| a.min(*b)).collect();
    let window = BoxRegion::new(lo.clone(), hi.clone())?;
    let grid = CellGrid::new(lo, hi, vec![opts.grid; d]);
    let cap = opts.max_nodes.unwrap_or_else(|| default_max_nodes(n));
    let mut node_counts = Vec::with_capacity(js.len());
    for &j in js {
        let s = hbar * 0.5f64.powi(j as i32);
        let piece_box = chart.image_box(center, s * profile.support_radius)?;
        let cells = (0..d).map(|k| piece_box.half_widths()[k] / grid.spacing(k)).fold(0.0, f64::max);
        node_counts.push(((2.0 * cells).ceil() as usize + 4).clamp(6, cap.max(6)));
    }
    let half = space.ball_half_widths(profile.support_radius);
    let rules: Vec<TensorRule> = node_counts.iter().map(|&m| TensorRule::on_box(&vec![0.0; n], &half, &vec![m; n])).collect();
    let rows: Result<Vec<Vec<Vec<(u32, Complex64)>>>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.point(i);
            let mut dense = vec![ZERO; grid.len()];
            let mut touched: Vec<usize> = Vec::new();
            let mut weights = Vec::with_capacity(8);
            let mut zh = vec![0.0; n];
            let mut out = Vec::with_capacity(js.len());
            for (&j, rule) in js.iter().zip(&rules) {
                let s = hbar * 0.5f64.powi(j as i32);
                for q in 0..rule.len() {
                    let w = rule.node(q, &mut zh);
                    let f = profile.eval(&x, &zh, s);
                    if f == ZERO {
                        continue;
                    }
                    let y = chart.exponential(&x, &space.dilate_unchecked(&zh, s))?;
                    interpolation(&grid, &y, &mut weights);
                    for &(k, c) in &weights {
                        if dense[k] == ZERO {
                            touched.push(k);
                        }
                        dense[k] += f * (w * c);
                        if dense[k] == ZERO {
                            dense[k] = Complex64::new(0.0, f64::MIN_POSITIVE);
                        }
                    }
                }
                touched.sort_unstable();
                touched.dedup();
                out.push(touched.iter().map(|&k| (k as u32, std::mem::replace(&mut dense[k], ZERO))).collect());
                touched.clear();
            }
            Ok(out)
        })
        .collect();
    let rows = rows?;
    let mut pieces: Vec<(u32, usize, GridOperator)> =
        js.iter().zip(&node_counts).map(|(&j, &m)| (j, m, GridOperator::zeros(grid.len()))).collect();
    for (i, per_j) in rows.into_iter().enumerate() {
        for (p, row) in pieces.iter_mut().zip(per_j) {
            p.2.rows[i] = row;
        }
    }
    Ok(WindowDiscretization { chart, hbar, center: center.to_vec(), radius, window, grid, pieces })
}

impl WindowDiscretization {
    pub fn piece(&self, j: u32) -> Option<&GridOperator> {
        self.pieces.iter().find(|p| p.0 == j).map(|p| &p.2)
    }

    /// `Σ c_j P_j` over the listed pieces.
    pub fn operator(&self, coeffs: &[(u32, Complex64)]) -> Result<GridOperator> {
        let mut op = GridOperator::zeros(self.grid.len());
        for &(j, c) in coeffs {
            if c == ZERO {
                continue;
            }
            let p = self
                .piece(j)
                .ok_or_else(|| Error::InvalidArgument(format!("piece {j} was not discretised")))?;
            op.add_scaled(p, c);
        }
        Ok(op)
    }

    /// The matrix of `ℙ_ħ` for `kernel`, including its multiplier.
    pub fn kernel_operator(&self, kernel: &DyadicKernel) -> Result<GridOperator> {
        if (kernel.hbar - self.hbar).abs() > 1e-15 * self.hbar {
            return Err(Error::InvalidArgument(format!("kernel ħ {} differs from window ħ {}", kernel.hbar, self.hbar)));
        }
        let coeffs: Vec<(u32, Complex64)> = (1..=kernel.j_max).map(|j| (j, kernel.alpha(j))).collect();
        let mut op = self.operator(&coeffs)?;
        if kernel.has_multiplier() {
            let diag: Vec<Complex64> = (0..self.grid.len()).map(|i| kernel.multiplier_at(&self.grid.point(i))).collect();
            op.add_diagonal(&diag);
        }
        Ok(op)
    }

    /// Window-normalised coordinates in `[-1, 1]^d`.
    pub fn normalised(&self, x: &[f64]) -> Vec<f64> {
        let c = self.window.center();
        let h = self.window.half_widths();
        x.iter().zip(c.iter().zip(&h)).map(|(v, (c, h))| (v - c) / h).collect()
    }

    /// The cutoff `φ = ψ`: one on the central half of the window, smoothly
    /// decaying to zero at its edge.
    pub fn cutoff_values(&self) -> Vec<f64> {
        (0..self.grid.len())
            .map(|i| self.normalised(&self.grid.point(i)).iter().map(|t| cutoff(t.abs())).product())
            .collect()
    }

    pub fn test_values(&self, u: &TestFunction) -> Vec<f64> {
        (0..self.grid.len())
            .map(|i| {
                let t = self.normalised(&self.grid.point(i));
                u.bumps
                    .iter()
                    .map(|b| {
                        b.sign
                            * t.iter()
                                .zip(b.center.iter().zip(&b.half_widths))
                                .map(|(v, (c, h))| bump((v - c) / h))
                                .product::<f64>()
                    })
                    .sum()
            })
            .collect()
    }

    /// One to four bumps with Rademacher signs, centres in the inner quarter
    /// of the window and half-widths taken from the image box of a random
    /// dyadic radius, so each bump follows the local anisotropy.
    pub fn random_test_function(&self, trial: usize, seed: u64) -> TestFunction {
        let mut rng = crate::rng::stream(seed, &[0x7465_7374, trial as u64]);
        let d = self.grid.dim();
        let h = self.window.half_widths();
        let c = self.window.center();
        let min_half: Vec<f64> = (0..d).map(|k| 2.0 * self.grid.spacing(k) / h[k]).collect();
        let count = rng.random_range(1..=4usize);
        let bumps = (0..count)
            .map(|_| {
                let center: Vec<f64> = (0..d).map(|_| rng.random_range(-0.25..0.25)).collect();
                let level = rng.random_range(2..=7i32);
                let t = 0.5f64.powi(level);
                let phys: Vec<f64> = center.iter().zip(c.iter().zip(&h)).map(|(u, (c, h))| c + u * h).collect();
                let raw = match self.chart.image_box(&phys, t * self.radius) {
                    Ok(b) => b.half_widths().iter().zip(&h).map(|(a, b)| a / b).collect(),
                    Err(_) => vec![t; d],
                };
                let half_widths: Vec<f64> = raw.iter().zip(&min_half).map(|(v, m): (&f64, &f64)| v.clamp(*m, 0.25)).collect();
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                TestBump { center, half_widths, sign }
            })
            .collect();
        TestFunction { trial, bumps }
    }

    /// A single bump at the window centre with half-width `cells` grid
    /// cells along every axis.
    pub fn near_delta(&self, cells: f64) -> TestFunction {
        let d = self.grid.dim();
        let h = self.window.half_widths();
        let c = self.normalised(&self.center);
        let half_widths = (0..d).map(|k| cells * self.grid.spacing(k) / h[k]).collect();
        TestFunction { trial: 0, bumps: vec![TestBump { center: c, half_widths, sign: 1.0 }] }
    }

    /// `‖v‖_p` by the midpoint rule; `p = ∞` gives the maximum.
    pub fn lp_norm(&self, v: &[f64], p: f64) -> f64 {
        if p.is_infinite() {
            return v.iter().map(|a| a.abs()).fold(0.0, f64::max);
        }
        (v.iter().map(|a| a.abs().powf(p)).sum::<f64>() * self.grid.cell_volume()).powf(1.0 / p)
    }

    /// `|φ · A(ψ u)|` on the grid.
    pub fn cut_response(&self, op: &GridOperator, u: &[f64], cut: &[f64]) -> Vec<f64> {
        let input: Vec<Complex64> = u.iter().zip(cut).map(|(a, c)| Complex64::new(a * c, 0.0)).collect();
        op.apply(&input).iter().zip(cut).map(|(v, c)| v.norm() * c).collect()
    }
}

/// Best ratio found for one exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpEstimate {
    pub p: f64,
    pub estimate: f64,
    pub trials: usize,
    pub argmax: Option<TestFunction>,
}

/// `max_u ‖φ A(ψ u)‖_p / ‖u‖_p` over `trials` random test functions, for
/// each `p` in `ps` (`f64::INFINITY` is the sup-norm proxy). Trial `t` is
/// fully determined by `(seed, t)`, so the estimate is a running maximum.
pub fn lp_norm_estimates(
    window: &WindowDiscretization,
    op: &GridOperator,
    ps: &[f64],
    trials: usize,
    seed: u64,
) -> Vec<LpEstimate> {
    let cut = window.cutoff_values();
    let ratios: Vec<(TestFunction, Vec<f64>)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let u = window.random_test_function(t, seed);
            let values = window.test_values(&u);
            let out = window.cut_response(op, &values, &cut);
            let r = ps
                .iter()
                .map(|&p| {
                    let nu = window.lp_norm(&values, p);
                    if nu > 0.0 { window.lp_norm(&out, p) / nu } else { 0.0 }
                })
                .collect();
            (u, r)
        })
        .collect();
    ps.iter()
        .enumerate()
        .map(|(k, &p)| {
            let mut best = LpEstimate { p, estimate: 0.0, trials, argmax: None };
            for (u, r) in &ratios {
                if r[k] > best.estimate {
                    best.estimate = r[k];
                    best.argmax = Some(u.clone());
                }
            }
            best
        })
        .collect()
}

/// Discretises `kernel` around `center` and returns its `L_p` estimate.
#[allow(clippy::too_many_arguments)]
pub fn estimate_lp_norm(
    chart: Arc<FilteredChart>,
    kernel: &DyadicKernel,
    center: &[f64],
    p: f64,
    trials: usize,
    seed: u64,
    opts: &WindowOptions,
) -> Result<LpEstimate> {
    kernel.check_chart(&chart)?;
    let js: Vec<u32> = (1..=kernel.j_max).collect();
    let window = discretize_window(chart, &kernel.profile, kernel.hbar, center, &js, opts)?;
    let op = window.kernel_operator(kernel)?;
    Ok(lp_norm_estimates(&window, &op, &[p], trials, seed).remove(0))
}

/// `sup_λ λ · |{x : |φ A(ψ u)(x)| > λ}| / ‖u‖_1`. Without an explicit grid,
/// `λ` runs over `‖φ A(ψ u)‖_∞ · 2^{-k/2}` for `k = 0, …, 40`.
pub fn weak_type_ratio(window: &WindowDiscretization, op: &GridOperator, u: &[f64], lambdas: Option<&[f64]>) -> f64 {
    let l1 = window.lp_norm(u, 1.0);
    if l1 == 0.0 {
        return 0.0;
    }
    let out = window.cut_response(op, u, &window.cutoff_values());
    let top = out.iter().cloned().fold(0.0, f64::max);
    let default: Vec<f64> = (0..=40).map(|k| top * 0.5f64.powf(k as f64 / 2.0)).collect();
    let cell = window.grid.cell_volume();
    lambdas
        .unwrap_or(&default)
        .iter()
        .map(|&lam| lam * cell * out.iter().filter(|v| **v > lam).count() as f64)
        .fold(0.0, f64::max)
        / l1
}

/// Node counts of the nested integrals in [`almost_orthogonality_matrix`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AoOptions {
    pub outer_nodes: usize,
    pub inner_nodes: usize,
}

impl Default for AoOptions {
    fn default() -> Self {
        Self { outer_nodes: 16, inner_nodes: 16 }
    }
}

/// `B[a][b]` for scales `js[a]`, `js[b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AoMatrix {
    pub js: Vec<u32>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AoDecay {
    /// Minus the fitted slope of `log2 max_{|j−ℓ|=k} B` against `k`.
    pub exponent: f64,
    /// `max B[j,ℓ] 2^{|j−ℓ|}`.
    pub bound: f64,
    pub diagonal: f64,
    /// `max_{|j−ℓ|=k} B[j,ℓ] 2^k` for each `k`.
    pub band: Vec<f64>,
}

impl AoMatrix {
    fn symmetric(&self) -> Vec<Vec<f64>> {
        let n = self.js.len();
        (0..n).map(|a| (0..n).map(|b| self.b[a][b].max(self.b[b][a])).collect()).collect()
    }

    pub fn decay(&self) -> AoDecay {
        let b = self.symmetric();
        let n = self.js.len();
        let gap = |a: usize, c: usize| self.js[a].abs_diff(self.js[c]);
        let kmax = (0..n).flat_map(|a| (0..n).map(move |c| (a, c))).map(|(a, c)| gap(a, c)).max().unwrap_or(0);
        let mut raw = vec![0.0f64; kmax as usize + 1];
        for a in 0..n {
            for c in 0..n {
                let k = gap(a, c) as usize;
                raw[k] = raw[k].max(b[a][c]);
            }
        }
        let band: Vec<f64> = raw.iter().enumerate().map(|(k, v)| v * 2f64.powi(k as i32)).collect();
        let (ks, logs): (Vec<f64>, Vec<f64>) =
            raw.iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(k, v)| (k as f64, v.log2())).unzip();
        let exponent = if ks.len() >= 2 { -crate::stats::linear_fit(&ks, &logs).0 } else { f64::NAN };
        AoDecay { exponent, bound: band.iter().cloned().fold(0.0, f64::max), diagonal: raw[0], band }
    }
}

fn stencil(b: &BoxRegion) -> Vec<Vec<f64>> {
    let d = b.dim();
    (0..3usize.pow(d as u32))
        .map(|mut m| {
            (0..d)
                .map(|k| {
                    let v = [b.lo[k], 0.5 * (b.lo[k] + b.hi[k]), b.hi[k]][m % 3];
                    m /= 3;
                    v
                })
                .collect()
        })
        .collect()
}

/// `B[j,ℓ] = max_x ∫ |∫ K_j(x, y0) conj K_ℓ(y, y0) dy0| dy`. The inner
/// integral runs over the support box of the finer piece, the outer one
/// over the union of the coarse supports reachable through it.
pub fn almost_orthogonality_matrix(
    family: &KernelFamily,
    js: &[u32],
    xs: &[Vec<f64>],
    opts: &AoOptions,
) -> Result<AoMatrix> {
    let n = js.len();
    let d = family.chart.dim();
    let mut b = vec![vec![0.0; n]; n];
    for x in xs {
        check_len(x, d)?;
        for (a, &j) in js.iter().enumerate() {
            let x_box = family.support_box(j, x)?;
            for (c, &l) in js.iter().enumerate() {
                let v = ao_entry(family, j, l, x, &x_box, opts)?;
                b[a][c] = f64::max(b[a][c], v);
            }
        }
    }
    Ok(AoMatrix { js: js.to_vec(), b })
}

fn ao_entry(family: &KernelFamily, j: u32, l: u32, x: &[f64], x_box: &BoxRegion, opts: &AoOptions) -> Result<f64> {
    let d = x.len();
    let mut outer: Option<BoxRegion> = None;
    for p in stencil(x_box) {
        let bx = family.support_box(l, &p)?;
        outer = Some(match outer {
            Some(o) => o.union(&bx),
            None => bx,
        });
    }
    let outer = outer.expect("stencil is never empty");
    let outer_rule = TensorRule::on_box(&outer.center(), &outer.half_widths(), &vec![opts.outer_nodes; d]);
    let x_is_fine = j >= l;
    let cached: Option<Vec<(Vec<f64>, Complex64)>> = if x_is_fine {
        let rule = TensorRule::on_box(&x_box.center(), &x_box.half_widths(), &vec![opts.inner_nodes; d]);
        let mut y0 = vec![0.0; d];
        let mut v = Vec::with_capacity(rule.len());
        for i in 0..rule.len() {
            let w = rule.node(i, &mut y0);
            let k = family.piece(j, x, &y0)?;
            if k != ZERO {
                v.push((y0.clone(), k * w));
            }
        }
        Some(v)
    } else {
        None
    };
    let terms: Result<Vec<f64>> = (0..outer_rule.len())
        .into_par_iter()
        .map(|i| {
            let mut y = vec![0.0; d];
            let wy = outer_rule.node(i, &mut y);
            let mut inner = ZERO;
            match &cached {
                Some(nodes) => {
                    for (y0, kx) in nodes {
                        inner += kx * family.piece(l, &y, y0)?.conj();
                    }
                }
                None => {
                    let y_box = family.support_box(l, &y)?;
                    if !y_box.intersects(x_box) {
                        return Ok(0.0);
                    }
                    let rule = TensorRule::on_box(&y_box.center(), &y_box.half_widths(), &vec![opts.inner_nodes; d]);
                    let mut y0 = vec![0.0; d];
                    for q in 0..rule.len() {
                        let w = rule.node(q, &mut y0);
                        if !x_box.contains(&y0) {
                            continue;
                        }
                        let ky = family.piece(l, &y, &y0)?;
                        if ky == ZERO {
                            continue;
                        }
                        inner += family.piece(j, x, &y0)? * ky.conj() * w;
                    }
                }
            }
            Ok(wy * inner.norm())
        })
        .collect();
    Ok(terms?.into_iter().sum())
}

/// `L_2` bounds from an almost-orthogonality matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CotlarStein {
    /// `C = max B[j,ℓ] 2^{|j−ℓ|}` after symmetrisation.
    pub fitted_c: f64,
    /// `√2 · √C · max |α_j|`.
    pub bound: f64,
    /// `Σ_k max_j √B[j, j+k] · max |α_j|`.
    pub classical: f64,
}

pub fn cotlar_stein_bound(ao: &AoMatrix, alpha: &[Complex64]) -> CotlarStein {
    let amax = alpha.iter().map(|a| a.norm()).fold(0.0, f64::max);
    let b = ao.symmetric();
    let n = ao.js.len();
    let fitted_c = ao.decay().bound;
    let mut by_gap: std::collections::BTreeMap<i64, f64> = std::collections::BTreeMap::new();
    for a in 0..n {
        for c in 0..n {
            let k = ao.js[c] as i64 - ao.js[a] as i64;
            let e = by_gap.entry(k).or_insert(0.0);
            *e = e.max(b[a][c].sqrt());
        }
    }
    let classical = by_gap.values().sum::<f64>() * amax;
    CotlarStein { fitted_c, bound: (2.0 * fitted_c).sqrt() * amax, classical }
}

/// Quadrature settings for [`hormander_integral`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HormanderOptions {
    /// Gauss–Legendre nodes per axis on every sub-box.
    pub nodes: usize,
    /// Additive tolerance of the `ρ` evaluations.
    pub tol: f64,
    pub reach: ReachOptions,
}

impl Default for HormanderOptions {
    fn default() -> Self {
        Self { nodes: 8, tol: 1e-8, reach: ReachOptions::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HormanderValue {
    pub value: f64,
    /// `ρ(y, y0)`.
    pub rho: f64,
    /// Number of quadrature nodes used.
    pub nodes: usize,
}

/// Splits `outer \ inner` into the `3^d − 1` boxes around `inner`.
fn annulus(outer: &BoxRegion, inner: &BoxRegion) -> Vec<BoxRegion> {
    let d = outer.dim();
    let mut out = Vec::new();
    for m in 0..3usize.pow(d as u32) {
        let (mut lo, mut hi) = (vec![0.0; d], vec![0.0; d]);
        let mut t = m;
        let mut central = true;
        for k in 0..d {
            let part = t % 3;
            t /= 3;
            central &= part == 1;
            let edges = [outer.lo[k], inner.lo[k], inner.hi[k], outer.hi[k]];
            lo[k] = edges[part];
            hi[k] = edges[part + 1];
        }
        if !central && lo.iter().zip(&hi).all(|(a, b)| b > a) {
            out.push(BoxRegion { lo, hi });
        }
    }
    out
}

/// `∫_{ρ(x,y) > 2 C_ρ ρ(y,y0)} |K_α(x, y) − K_α(x, y0)| dx` with
/// `K_α = Σ α_j K_j`. The integral is split into nested shells around `y`
/// shrinking dyadically down to the excluded region, so the pieces that
/// vary on the scale of `ρ(y, y0)` are resolved.
pub fn hormander_integral(
    family: &KernelFamily,
    alpha: &[(u32, Complex64)],
    y: &[f64],
    y0: &[f64],
    c_rho: f64,
    opts: &HormanderOptions,
) -> Result<HormanderValue> {
    let chart = &family.chart;
    check_len(y, chart.dim())?;
    check_len(y0, chart.dim())?;
    let active: Vec<(u32, Complex64)> = alpha.iter().cloned().filter(|a| a.1 != ZERO).collect();
    if y == y0 || active.is_empty() {
        return Ok(HormanderValue { value: 0.0, rho: 0.0, nodes: 0 });
    }
    let rho = quasi_metric(chart, y, y0, opts.tol, &opts.reach)?;
    if !rho.is_finite() {
        return Err(Error::ChartTooLarge);
    }
    let excluded = 2.0 * c_rho * rho;
    let excl_box = chart.image_box(y, excluded.min(chart.epsilon()))?;
    let boxes: Vec<(u32, Complex64, BoxRegion, BoxRegion)> = active
        .iter()
        .map(|&(j, a)| Ok((j, a, family.support_box(j, y)?, family.support_box(j, y0)?)))
        .collect::<Result<_>>()?;
    let coarsest = active.iter().map(|a| a.0).min().unwrap();
    let mut region = family.support_box(coarsest, y)?.union(&family.support_box(coarsest, y0)?);
    let mut cells = Vec::new();
    let mut r = family.support_radius(coarsest);
    loop {
        r *= 0.5;
        if r < excluded / 4.0 {
            break;
        }
        let half = chart.image_box(y, r)?.half_widths();
        let lo: Vec<f64> = (0..y.len()).map(|k| (y[k] - half[k]).max(region.lo[k])).collect();
        let hi: Vec<f64> = (0..y.len()).map(|k| (y[k] + half[k]).min(region.hi[k])).collect();
        let inner = BoxRegion { lo, hi };
        cells.extend(annulus(&region, &inner));
        region = inner;
    }
    cells.push(region);
    let d = y.len();
    let integrand = |x: &[f64]| -> Result<f64> {
        if excl_box.contains(x) && quasi_metric(chart, x, y, opts.tol, &opts.reach)? <= excluded {
            return Ok(0.0);
        }
        let mut diff = ZERO;
        for (j, a, by, by0) in &boxes {
            if by.contains(x) {
                diff += a * family.piece(*j, x, y)?;
            }
            if by0.contains(x) {
                diff -= a * family.piece(*j, x, y0)?;
            }
        }
        Ok(diff.norm())
    };
    let parts: Result<Vec<(f64, usize)>> = cells
        .par_iter()
        .map(|cell| {
            let rule = TensorRule::on_box(&cell.center(), &cell.half_widths(), &vec![opts.nodes; d]);
            let mut x = vec![0.0; d];
            let mut acc = 0.0;
            for i in 0..rule.len() {
                let w = rule.node(i, &mut x);
                acc += w * integrand(&x)?;
            }
            Ok((acc, rule.len()))
        })
        .collect();
    let parts = parts?;
    Ok(HormanderValue { value: parts.iter().map(|p| p.0).sum(), rho, nodes: parts.iter().map(|p| p.1).sum() })
}

/// `C2 Σ_{j=1}^{j_max} 2^{j Re m}` and the analytic remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegativeOrderBound {
    pub partial: f64,
    pub tail: f64,
    pub total: f64,
}

/// Bound for `Re m < 0`; `j_max = None` sums the whole series.
pub fn negative_order_norm_bound(c2: f64, re_m: f64, j_max: Option<u32>) -> Result<NegativeOrderBound> {
    if !(re_m < 0.0) {
        return Err(Error::NonNegativeOrder(re_m));
    }
    let q = 2f64.powf(re_m);
    let (partial, tail) = match j_max {
        Some(jm) => {
            let partial: f64 = (1..=jm).map(|j| q.powi(j as i32)).sum();
            (partial, q.powi(jm as i32 + 1) / (1.0 - q))
        }
        None => (q / (1.0 - q), 0.0),
    };
    Ok(NegativeOrderBound { partial: c2 * partial, tail: c2 * tail, total: c2 * (partial + tail) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fiber::FiberOptions;
    use crate::graded::GradedSpace;
    use crate::poly::PolyField;
    use crate::profile::ProfileKind;
    use proptest::prelude::*;

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

    fn redundant_line() -> Arc<FilteredChart> {
        Arc::new(
            FilteredChart::new(
                GradedSpace::new(vec![1, 1]).unwrap(),
                vec![PolyField::coordinate(1, 0), PolyField::coordinate(1, 0)],
                BoxRegion::new(vec![-1.0], vec![1.0]).unwrap(),
                1.0,
            )
            .unwrap(),
        )
    }

    fn odd(c: &FilteredChart, coupling: f64) -> Profile {
        Profile::builtin(c.space(), ProfileKind::OddBumpHbar { beta: 0.5 }, coupling).unwrap()
    }

    fn one() -> Complex64 {
        Complex64::new(1.0, 0.0)
    }

    #[test]
    fn coefficients_follow_the_order() {
        let c = euclid(1);
        let k = DyadicKernel::new(odd(&c, 0.0), Complex64::new(0.0, 0.7), 0.5, 6).unwrap();
        assert!(k.coefficients().iter().all(|a| (a.norm() - 1.0).abs() < 1e-14));
        assert!(k.tail_bound(1.0).is_none());
        let k = DyadicKernel::new(odd(&c, 0.0), Complex64::new(-1.0, 0.0), 0.5, 4).unwrap();
        assert!((k.alpha(3).re - 0.125).abs() < 1e-15);
        assert!((k.tail_bound(2.0).unwrap() - 2.0 * 0.03125 / 0.5).abs() < 1e-15);
        assert!(DyadicKernel::new(odd(&c, 0.0), Complex64::new(0.1, 0.0), 0.5, 4).is_err());
    }

    #[test]
    fn pure_multiplier_scales_pointwise() {
        let c = euclid(1);
        let h: Multiplier = Arc::new(|x: &[f64]| Complex64::new(2.0 + x[0], 0.0));
        let k = DyadicKernel::pure_multiplier(odd(&c, 0.0), 0.5, h).unwrap();
        let u = |y: &[f64]| Complex64::new(y[0] * y[0] - 0.3, 0.1);
        let v = apply_operator(&c, &k, &u, &[0.4], 12).unwrap();
        assert!((v - Complex64::new(2.4, 0.0) * u(&[0.4])).norm() < 1e-14);
    }

    #[test]
    fn mean_zero_profile_annihilates_constants() {
        let c = euclid(2);
        let p = Profile::builtin(c.space(), ProfileKind::OddBump, 0.3).unwrap();
        let k = DyadicKernel::new(p, ZERO, 0.5, 5).unwrap();
        let v = apply_operator(&c, &k, &|_| one(), &[0.1, -0.2], 12).unwrap();
        assert!(v.norm() < 1e-14, "{v}");
    }

    #[test]
    fn single_piece_matches_y_side_integral_on_redundant_line() {
        let c = redundant_line();
        let p = odd(&c, 0.2);
        let k = DyadicKernel::new(p.clone(), ZERO, 0.5, 1).unwrap().with_coefficients(vec![one()]).unwrap();
        let u = |y: &[f64]| Complex64::new((3.0 * y[0]).sin() + 0.5, 0.0);
        let x = [0.1];
        let v_side = apply_operator(&c, &k, &u, &x, 48).unwrap();
        let fam = KernelFamily::new(c.clone(), p, 0.5, FiberOptions::default()).unwrap();
        let bx = fam.support_box(1, &x).unwrap();
        let rule = TensorRule::on_box(&bx.center(), &bx.half_widths(), &[96]);
        let mut y = [0.0];
        let mut y_side = ZERO;
        for i in 0..rule.len() {
            let w = rule.node(i, &mut y);
            y_side += fam.piece(1, &x, &y).unwrap() * u(&y) * w;
        }
        assert!((v_side - y_side).norm() <= 1e-2 * v_side.norm(), "{v_side} vs {y_side}");
    }

    #[test]
    fn adjoint_duality_on_grid_inner_products() {
        let c = euclid(1);
        let k = DyadicKernel::new(odd(&c, 0.4), ZERO, 0.5, 3).unwrap();
        let ka = k.adjoint(c.clone());
        let u = |y: &[f64]| Complex64::new(bump((y[0] - 0.1) / 0.4), 0.0);
        let v = |y: &[f64]| Complex64::new(bump((y[0] + 0.05) / 0.35), 0.2 * bump(y[0] / 0.3));
        let rule = TensorRule::on_box(&[0.0], &[0.75], &[64]);
        let mut x = [0.0];
        let (mut lhs, mut rhs) = (ZERO, ZERO);
        for i in 0..rule.len() {
            let w = rule.node(i, &mut x);
            lhs += apply_operator(&c, &k, &u, &x, 32).unwrap() * v(&x).conj() * w;
            rhs += u(&x) * apply_operator(&c, &ka, &v, &x, 32).unwrap().conj() * w;
        }
        assert!((lhs - rhs).norm() <= 1e-2 * lhs.norm().max(rhs.norm()), "{lhs} vs {rhs}");
    }

    #[test]
    fn identity_kernel_estimate_is_one() {
        let c = euclid(1);
        let h: Multiplier = Arc::new(|_: &[f64]| Complex64::new(1.0, 0.0));
        let k = DyadicKernel::pure_multiplier(odd(&c, 0.0), 0.25, h).unwrap();
        let e = estimate_lp_norm(c, &k, &[0.0], 2.0, 16, 3, &WindowOptions::default()).unwrap();
        assert!((e.estimate - 1.0).abs() < 1e-12, "{e:?}");
    }

    #[test]
    fn lp_estimate_grows_with_trials() {
        let c = euclid(1);
        let k = DyadicKernel::new(odd(&c, 0.2), ZERO, 0.25, 6).unwrap();
        let js: Vec<u32> = (1..=6).collect();
        let w = discretize_window(c, &k.profile, 0.25, &[0.0], &js, &WindowOptions::default()).unwrap();
        let op = w.kernel_operator(&k).unwrap();
        let mut last = 0.0;
        for t in [1, 4, 16, 48] {
            let e = lp_norm_estimates(&w, &op, &[1.5], t, 11)[0].estimate;
            assert!(e >= last);
            last = e;
        }
        assert!(last > 0.0);
    }

    #[test]
    fn window_matrix_agrees_with_pointwise_operator() {
        let c = euclid(1);
        let k = DyadicKernel::new(odd(&c, 0.3), ZERO, 0.5, 2).unwrap();
        let w = discretize_window(c.clone(), &k.profile, 0.5, &[0.0], &[1, 2], &WindowOptions { grid: 256, ..Default::default() })
            .unwrap();
        let op = w.kernel_operator(&k).unwrap();
        let u = |y: &[f64]| Complex64::new(bump(y[0] / 0.5), 0.0);
        let values: Vec<Complex64> = (0..w.grid.len()).map(|i| u(&w.grid.point(i))).collect();
        let out = op.apply(&values);
        for i in [64, 100, 128, 170] {
            let x = w.grid.point(i);
            let exact = apply_operator(&c, &k, &u, &x, 48).unwrap();
            assert!((out[i] - exact).norm() < 2e-3, "{i}: {} vs {exact}", out[i]);
        }
    }

    #[test]
    fn cotlar_stein_on_diagonal_and_zero_matrices() {
        let ao = AoMatrix { js: vec![0, 1, 2], b: vec![vec![0.3, 0.0, 0.0], vec![0.0, 0.3, 0.0], vec![0.0, 0.0, 0.3]] };
        let cs = cotlar_stein_bound(&ao, &[one(), Complex64::new(0.0, 2.0)]);
        assert!((cs.bound - (0.6f64).sqrt() * 2.0).abs() < 1e-14);
        let zero = AoMatrix { js: vec![0, 1], b: vec![vec![0.0; 2]; 2] };
        assert_eq!(cotlar_stein_bound(&zero, &[one()]).bound, 0.0);
    }

    #[test]
    fn zero_profile_has_zero_ao_matrix() {
        let c = euclid(1);
        let p = Profile::builtin(c.space(), ProfileKind::Zero, 0.0).unwrap();
        let fam = KernelFamily::new(c, p, 0.5, FiberOptions::default()).unwrap();
        let ao = almost_orthogonality_matrix(&fam, &[0, 1, 2], &[vec![0.0]], &AoOptions { outer_nodes: 6, inner_nodes: 6 }).unwrap();
        assert!(ao.b.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn ao_diagonal_is_bounded_by_mass_squared() {
        let c = euclid(1);
        let fam = KernelFamily::new(c.clone(), odd(&c, 0.2), 0.5, FiberOptions::default()).unwrap();
        let x = vec![0.05];
        let ao = almost_orthogonality_matrix(&fam, &[0, 1, 2, 3], &[x.clone()], &AoOptions::default()).unwrap();
        for (a, &j) in ao.js.iter().enumerate() {
            let m = crate::kernel::row_mass(&fam, j, &x, 32).unwrap();
            assert!(ao.b[a][a] <= 1.1 * m * m, "j={j}: {} vs {}", ao.b[a][a], m * m);
        }
        assert!(ao.decay().exponent > 0.5, "{:?}", ao.decay());
    }

    #[test]
    fn hormander_trivial_cases() {
        let c = euclid(1);
        let fam = KernelFamily::new(c.clone(), odd(&c, 0.0), 0.5, FiberOptions::default()).unwrap();
        let alpha: Vec<(u32, Complex64)> = (0..4).map(|j| (j, one())).collect();
        let o = HormanderOptions::default();
        assert_eq!(hormander_integral(&fam, &alpha, &[0.1], &[0.1], 1.0, &o).unwrap().value, 0.0);
        let zero: Vec<(u32, Complex64)> = (0..4).map(|j| (j, ZERO)).collect();
        assert_eq!(hormander_integral(&fam, &zero, &[0.1], &[0.2], 1.0, &o).unwrap().value, 0.0);
        let v = hormander_integral(&fam, &alpha, &[0.1], &[0.1 + 1e-3], 1.0, &o).unwrap();
        assert!(v.value.is_finite() && v.value > 0.0 && (v.rho - 1e-3).abs() < 1e-8);
    }

    #[test]
    fn negative_order_bound_sums_the_series() {
        let b = negative_order_norm_bound(1.0, -1.0, None).unwrap();
        assert!((b.total - 1.0).abs() < 1e-15);
        let t = negative_order_norm_bound(1.0, -1.0, Some(10)).unwrap();
        assert!((t.total - 1.0).abs() < 1e-14 && t.tail > 0.0);
        let near = negative_order_norm_bound(1.0, -0.01, None).unwrap();
        assert!(near.total > 100.0);
        assert!(negative_order_norm_bound(1.0, 0.0, None).is_err());
    }

    #[test]
    fn weak_type_of_zero_is_zero() {
        let c = euclid(1);
        let k = DyadicKernel::new(odd(&c, 0.0), ZERO, 0.25, 4).unwrap();
        let w = discretize_window(c, &k.profile, 0.25, &[0.0], &[1, 2, 3, 4], &WindowOptions::default()).unwrap();
        let op = w.kernel_operator(&k).unwrap();
        assert_eq!(weak_type_ratio(&w, &op, &vec![0.0; w.grid.len()], None), 0.0);
        let delta = w.test_values(&w.near_delta(2.0));
        let r = weak_type_ratio(&w, &op, &delta, None);
        assert!(r.is_finite() && r > 0.0);
    }

    #[test]
    fn power_iteration_matches_dense_svd() {
        let c = euclid(1);
        let k = DyadicKernel::new(odd(&c, 0.3), ZERO, 0.5, 3).unwrap();
        let w = discretize_window(c, &k.profile, 0.5, &[0.0], &[1, 2, 3], &WindowOptions { grid: 32, ..Default::default() })
            .unwrap();
        let op = w.kernel_operator(&k).unwrap();
        let n = op.len();
        let dense = nalgebra::DMatrix::from_fn(n, n, |i, k| op.entry(i, k));
        let top = dense.singular_values()[0];
        assert!((op.l2_norm(2000, 1) - top).abs() < 1e-6 * top);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn operator_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, x in -0.4f64..0.4) {
            let c = euclid(1);
            let k = DyadicKernel::new(odd(&c, 0.3), Complex64::new(0.0, 0.5), 0.5, 4).unwrap();
            let u = |y: &[f64]| Complex64::new(y[0].cos(), y[0]);
            let v = |y: &[f64]| Complex64::new(bump(y[0] / 0.6), -0.3);
            let uv = |y: &[f64]| u(y) * a + v(y) * b;
            let lhs = apply_operator(&c, &k, &uv, &[x], 16).unwrap();
            let rhs = apply_operator(&c, &k, &u, &[x], 16).unwrap() * a + apply_operator(&c, &k, &v, &[x], 16).unwrap() * b;
            prop_assert!((lhs - rhs).norm() <= 1e-10 * (1.0 + lhs.norm()));
        }
    }
}
