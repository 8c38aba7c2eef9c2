//! Transport of fibers between nearby base values.
//!
//! For the submersion `ψ(ẑ) = Λ_x(δ_r ẑ)` on normalised coordinates and two
//! values `y0`, `y1`, the field
//!
//! ```text
//! W(ẑ) = Dψ(ẑ)ᵀ (Dψ(ẑ) Dψ(ẑ)ᵀ)^{-1} (y1 − y0)
//! ```
//!
//! satisfies `Dψ · W = y1 − y0`, so its flow `θ_t` carries the level set over
//! `y_t = (1 − t) y0 + t y1` onto the one over `y_s` for every `s`. The
//! Jacobian determinant of `θ_t` follows from `d/dt log|Dθ_t| = div W ∘ θ_t`.
//! All points in this module are normalised coordinates `ẑ = δ_{1/r} z`.

use crate::chart::{FilteredChart, ScaledExp};
use crate::error::{check_len, Error, Result};
use crate::fiber::{fiber_quadrature, FiberOptions};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

const GRAM_CONDITION_LIMIT: f64 = 1e12;
const DIV_STEP: f64 = 1e-5;

/// A frozen exponential map with two target values.
pub struct TransportProblem<'a> {
    map: ScaledExp<'a>,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub r: f64,
    /// Flows are stopped once `|θ_t(ẑ)|_V` exceeds `2 · big_r`.
    pub big_r: f64,
    /// RK4 steps per unit time.
    pub steps: usize,
}

impl<'a> TransportProblem<'a> {
    pub fn new(chart: &'a FilteredChart, x: &'a [f64], y0: &[f64], y1: &[f64], r: f64) -> Result<Self> {
        check_len(x, chart.dim())?;
        check_len(y0, chart.dim())?;
        check_len(y1, chart.dim())?;
        if !(r > 0.0) {
            return Err(Error::InvalidArgument(format!("transport radius must be positive, got {r}")));
        }
        Ok(Self { map: ScaledExp::new(chart, x, r), y0: y0.to_vec(), y1: y1.to_vec(), r, big_r: 1.0, steps: 32 })
    }

    pub fn chart(&self) -> &FilteredChart {
        self.map.chart
    }

    /// `ψ(ẑ) = Λ_x(δ_r ẑ)`.
    pub fn psi(&self, zh: &[f64]) -> Result<Vec<f64>> {
        self.map.eval(zh)
    }

    pub fn to_z(&self, zh: &[f64]) -> Vec<f64> {
        self.map.to_z(zh)
    }

    pub fn to_normalised(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.map.scale).map(|(a, s)| a / s).collect()
    }

    /// `y_t = (1 − t) y0 + t y1`.
    pub fn target(&self, t: f64) -> Vec<f64> {
        self.y0.iter().zip(&self.y1).map(|(a, b)| (1.0 - t) * a + t * b).collect()
    }

    fn norm(&self, zh: &[f64]) -> f64 {
        // The normalised ball of radius 1 is B_V(0, r); homogeneous norms
        // compare through the same graded space.
        self.map.chart.space().norm(zh)
    }
}

/// `W(ẑ)` by a linear solve of the `d × d` Gram system.
pub fn transport_field(problem: &TransportProblem, zh: &[f64]) -> Result<Vec<f64>> {
    check_len(zh, problem.chart().exp_dim())?;
    let j = problem.map.jacobian(zh)?;
    let g = &j * j.transpose();
    let eig = g.symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &e| (a.min(e), b.max(e)));
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(cond <= GRAM_CONDITION_LIMIT) {
        return Err(Error::SingularGram(cond));
    }
    let delta = DVector::from_iterator(problem.y0.len(), problem.y1.iter().zip(&problem.y0).map(|(a, b)| a - b));
    let a = g.cholesky().ok_or(Error::SingularGram(cond))?.solve(&delta);
    Ok((j.transpose() * a).iter().cloned().collect())
}

/// `div W(ẑ)` by central differences.
pub fn transport_divergence(problem: &TransportProblem, zh: &[f64]) -> Result<f64> {
    let mut p = zh.to_vec();
    let mut div = 0.0;
    for k in 0..zh.len() {
        p[k] = zh[k] + DIV_STEP;
        let a = transport_field(problem, &p)?[k];
        p[k] = zh[k] - DIV_STEP;
        let b = transport_field(problem, &p)?[k];
        p[k] = zh[k];
        div += (a - b) / (2.0 * DIV_STEP);
    }
    Ok(div)
}

/// Integrates `(θ_t, log det Dθ_t)` with RK4, optionally carrying the
/// divergence integral.
fn integrate(problem: &TransportProblem, zh0: &[f64], t: f64, with_det: bool) -> Result<(Vec<f64>, f64)> {
    check_len(zh0, problem.chart().exp_dim())?;
    if !(t.abs() <= 1.0) {
        return Err(Error::InvalidArgument(format!("flow time {t} outside [-1, 1]")));
    }
    let n = zh0.len();
    let steps = ((problem.steps as f64 * t.abs()).ceil() as usize).max(1);
    let h = t / steps as f64;
    let rhs = |z: &[f64]| -> Result<(Vec<f64>, f64)> {
        let w = transport_field(problem, z)?;
        let d = if with_det { transport_divergence(problem, z)? } else { 0.0 };
        Ok((w, d))
    };
    let limit = 2.0 * problem.big_r;
    let mut z = zh0.to_vec();
    let mut logdet = 0.0;
    let shifted = |z: &[f64], k: &[f64], c: f64| -> Vec<f64> { z.iter().zip(k).map(|(a, b)| a + c * b).collect() };
    for _ in 0..steps {
        let (k1, d1) = rhs(&z)?;
        let (k2, d2) = rhs(&shifted(&z, &k1, 0.5 * h))?;
        let (k3, d3) = rhs(&shifted(&z, &k2, 0.5 * h))?;
        let (k4, d4) = rhs(&shifted(&z, &k3, h))?;
        for i in 0..n {
            z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        logdet += h / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4);
        let nz = problem.norm(&z);
        if nz > limit {
            return Err(Error::FlowEscaped { norm: nz, radius: limit });
        }
    }
    Ok((z, logdet))
}

/// `θ_t(ẑ0)` for `|t| ≤ 1`.
pub fn flow(problem: &TransportProblem, zh0: &[f64], t: f64) -> Result<Vec<f64>> {
    Ok(integrate(problem, zh0, t, false)?.0)
}

/// `θ_1(ẑ0)` and `det Dθ_1(ẑ0) = exp ∫_0^1 div W(θ_t ẑ0) dt`.
pub fn flow_with_determinant(problem: &TransportProblem, zh0: &[f64]) -> Result<(Vec<f64>, f64)> {
    let (z, logdet) = integrate(problem, zh0, 1.0, true)?;
    Ok((z, logdet.exp()))
}

pub fn flow_jacobian_determinant(problem: &TransportProblem, zh0: &[f64]) -> Result<f64> {
    Ok(flow_with_determinant(problem, zh0)?.1)
}

/// Finite-difference Jacobian determinant of `ẑ ↦ θ_1(ẑ)`.
pub fn flow_jacobian_determinant_fd(problem: &TransportProblem, zh0: &[f64], step: f64) -> Result<f64> {
    let n = zh0.len();
    let mut m = DMatrix::zeros(n, n);
    let mut p = zh0.to_vec();
    for k in 0..n {
        p[k] = zh0[k] + step;
        let a = flow(problem, &p, 1.0)?;
        p[k] = zh0[k] - step;
        let b = flow(problem, &p, 1.0)?;
        p[k] = zh0[k];
        for i in 0..n {
            m[(i, k)] = (a[i] - b[i]) / (2.0 * step);
        }
    }
    Ok(m.determinant())
}

/// Both sides of the moving-fiber identity
/// `μ^{y0}(g) − μ^{y1}(g) = ∫ (g − g∘θ_1) dμ^{y0} + ∫ g∘θ_1 (1 − det Dθ_1) dμ^{y0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberDifference {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

/// Evaluates the identity for `g : V → R` supported in `B_V(0, r)`. The
/// right side integrates over the fiber in `B_V(0, outer · r)`, which must
/// contain `θ_1^{-1}` of the support.
#[allow(clippy::too_many_arguments)]
pub fn fiber_difference_check(
    chart: &FilteredChart,
    x: &[f64],
    g: &dyn Fn(&[f64]) -> f64,
    y0: &[f64],
    y1: &[f64],
    r: f64,
    outer: f64,
    opts: &FiberOptions,
) -> Result<FiberDifference> {
    let problem = TransportProblem::new(chart, x, y0, y1, r)?;
    let m0 = fiber_quadrature(chart, x, y0, r, opts)?.integrate(g);
    let m1 = fiber_quadrature(chart, x, y1, r, opts)?.integrate(g);
    let lhs = m0 - m1;
    if y0 == y1 {
        return Ok(FiberDifference { lhs, rhs: 0.0, residual: lhs.abs() });
    }
    let wide = fiber_quadrature(chart, x, y0, (outer * r).min(chart.epsilon()), opts)?;
    let mut rhs = 0.0;
    for (z, w) in wide.points.iter().zip(&wide.weights) {
        let zh = problem.to_normalised(z);
        let gz = g(z);
        let (moved, det) = match flow_with_determinant(&problem, &zh) {
            Ok(v) => v,
            // Nodes whose flow leaves the doubled ball carry g∘θ_1 = 0 as
            // long as the support assumption holds.
            Err(Error::FlowEscaped { .. }) => {
                rhs += w * gz;
                continue;
            }
            Err(e) => return Err(e),
        };
        let gm = g(&problem.to_z(&moved));
        rhs += w * ((gz - gm) + gm * (1.0 - det));
    }
    Ok(FiberDifference { lhs, rhs, residual: (lhs - rhs).abs() })
}

/// Sampling plan for [`lipschitz_constants`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzSampling {
    pub pairs: usize,
    /// Trial ratios `|y0 − y1| / r = 2^{-k}` for `k = min_exp..=max_exp`.
    pub min_exp: u32,
    pub max_exp: u32,
    pub seed: u64,
}

impl Default for LipschitzSampling {
    fn default() -> Self {
        Self { pairs: 6, min_exp: 1, max_exp: 6, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzConstants {
    /// Largest trial ratio at which every sampled flow exists.
    pub delta: f64,
    /// Sup of the normalised fiber-difference ratio for trials `≤ delta`.
    pub c: f64,
    /// `(trial, sup ratio, flows ok)` per trial.
    pub trials: Vec<(f64, f64, bool)>,
}

/// Measures `δ` and `C` with
/// `|μ^{y0}(g) − μ^{y1}(g)| ≤ C (‖g‖_Lip + ‖g‖_∞) (|y1 − y0| / r) μ^{y0}(B_V(0, 2r))`
/// for `|y1 − y0| ≤ δ r`, over test functions
/// `g(z) = (1 + a·ẑ) Π φ(ẑ_k)` supported in `B_V(0, r)`.
pub fn lipschitz_constants(
    chart: &FilteredChart,
    x: &[f64],
    r: f64,
    sampling: &LipschitzSampling,
    opts: &FiberOptions,
) -> Result<LipschitzConstants> {
    check_len(x, chart.dim())?;
    if 2.0 * r > chart.epsilon() * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!("doubled radius {} exceeds ε", 2.0 * r)));
    }
    let n = chart.exp_dim();
    let d = chart.dim();
    let space = chart.space().clone();
    let scale = space.ball_half_widths(r);
    let phi_lip = bump_lipschitz();
    let mut trials = Vec::new();
    let mut delta = 0.0;
    let mut c: f64 = 0.0;
    for k in sampling.min_exp..=sampling.max_exp {
        let trial = 0.5f64.powi(k as i32);
        let mut sup: f64 = 0.0;
        let mut flows_ok = true;
        for p in 0..sampling.pairs {
            let mut rng = crate::rng::stream(sampling.seed, &[0x6c69_7073, p as u64]);
            let zh0: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
            let mut dir: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dn = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            dir.iter_mut().for_each(|v| *v /= dn);
            let z0: Vec<f64> = zh0.iter().zip(&scale).map(|(u, s)| u * s).collect();
            let y0 = chart.exponential(x, &z0)?;
            let y1: Vec<f64> = y0.iter().zip(&dir).map(|(v, e)| v + trial * r * e).collect();
            let amax: f64 = 1.0 + a.iter().map(|v| v.abs()).sum::<f64>();
            let lip = amax * phi_lip * (n as f64).sqrt() + a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let sup_g = amax;
            let sc = scale.clone();
            let g = move |z: &[f64]| -> f64 {
                let zh: Vec<f64> = z.iter().zip(&sc).map(|(u, s)| u / s).collect();
                let lin: f64 = 1.0 + a.iter().zip(&zh).map(|(p, q)| p * q).sum::<f64>();
                lin * zh.iter().map(|&t| crate::profile::bump(t)).product::<f64>()
            };
            let q0 = fiber_quadrature(chart, x, &y0, r, opts)?;
            let q1 = fiber_quadrature(chart, x, &y1, r, opts)?;
            let wide = fiber_quadrature(chart, x, &y0, 2.0 * r, opts)?;
            let diff = (q0.integrate(&g) - q1.integrate(&g)).abs();
            let dy = trial;
            let denom = (lip + sup_g) * dy * wide.mass();
            if denom > 0.0 {
                sup = sup.max(diff / denom);
            }
            if flows_ok {
                let problem = TransportProblem::new(chart, x, &y0, &y1, r)?;
                for z in &q0.points {
                    if flow(&problem, &problem.to_normalised(z), 1.0).is_err() {
                        flows_ok = false;
                        break;
                    }
                }
            }
        }
        if flows_ok && delta == 0.0 {
            delta = trial;
        }
        if delta > 0.0 {
            c = c.max(sup);
        }
        trials.push((trial, sup, flows_ok));
    }
    Ok(LipschitzConstants { delta, c, trials })
}

/// `sup |φ'|` for the one-dimensional bump, sampled on a fine grid.
fn bump_lipschitz() -> f64 {
    let h = 1e-6;
    (0..4000)
        .map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / 4000.0)
        .map(|t| ((crate::profile::bump(t + h) - crate::profile::bump(t - h)) / (2.0 * h)).abs())
        .fold(0.0, f64::max)
        * 1.01
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::BoxRegion;
    use crate::graded::GradedSpace;
    use crate::poly::{PolyField, Polynomial};
    use proptest::prelude::*;

    fn euclid(n: usize) -> FilteredChart {
        FilteredChart::new(
            GradedSpace::new(vec![1; n]).unwrap(),
            (0..n).map(|k| PolyField::coordinate(n, k)).collect(),
            BoxRegion::new(vec![-1.0; n], vec![1.0; n]).unwrap(),
            1.0,
        )
        .unwrap()
    }

    fn redundant_line() -> FilteredChart {
        FilteredChart::new(
            GradedSpace::new(vec![1, 1]).unwrap(),
            vec![PolyField::coordinate(1, 0), PolyField::coordinate(1, 0)],
            BoxRegion::new(vec![-1.0], vec![1.0]).unwrap(),
            1.0,
        )
        .unwrap()
    }

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

    #[test]
    fn euclidean_field_is_the_displacement() {
        let c = euclid(2);
        let p = TransportProblem::new(&c, &[0.0, 0.0], &[0.1, 0.2], &[0.3, -0.1], 1.0).unwrap();
        let w = transport_field(&p, &[0.2, 0.1]).unwrap();
        assert!((w[0] - 0.2).abs() < 1e-8 && (w[1] + 0.3).abs() < 1e-8);
        let z = flow(&p, &[0.1, 0.2], 1.0).unwrap();
        assert!((z[0] - 0.3).abs() < 1e-8 && (z[1] + 0.1).abs() < 1e-8);
        let det = flow_jacobian_determinant(&p, &[0.1, 0.2]).unwrap();
        assert!((det - 1.0).abs() < 1e-6, "{det}");
        assert_eq!(flow(&p, &[0.1, 0.2], 0.0).unwrap(), vec![0.1, 0.2]);
    }

    #[test]
    fn redundant_line_field_is_split_evenly() {
        let c = redundant_line();
        let p = TransportProblem::new(&c, &[0.0], &[0.1], &[0.3], 1.0).unwrap();
        let w = transport_field(&p, &[0.3, -0.2]).unwrap();
        assert!((w[0] - 0.1).abs() < 1e-8 && (w[1] - 0.1).abs() < 1e-8);
        let still = TransportProblem::new(&c, &[0.0], &[0.1], &[0.1], 1.0).unwrap();
        assert_eq!(transport_field(&still, &[0.3, -0.2]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(flow_jacobian_determinant(&still, &[0.3, -0.2]).unwrap(), 1.0);
    }

    #[test]
    fn grushin_flow_matches_fine_step_oracle() {
        let c = grushin();
        let x = [0.2, 0.1];
        let r = 0.4;
        let mut p = TransportProblem::new(&c, &x, &[0.0, 0.0], &[0.0, 0.0], r).unwrap();
        let zh0 = [0.3, -0.2, 0.4];
        let y0 = p.psi(&zh0).unwrap();
        p.y0 = y0.clone();
        p.y1 = vec![y0[0] + 0.02, y0[1] - 0.015];
        let end = flow(&p, &zh0, 1.0).unwrap();
        let img = p.psi(&end).unwrap();
        for (a, b) in img.iter().zip(&p.y1) {
            assert!((a - b).abs() < 1e-8, "{img:?} vs {:?}", p.y1);
        }
        p.steps = 3200;
        let fine = flow(&p, &zh0, 1.0).unwrap();
        p.steps = 32;
        for (a, b) in end.iter().zip(&fine) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn liouville_matches_finite_differences_on_grushin() {
        let c = grushin();
        let x = [0.3, -0.1];
        let mut p = TransportProblem::new(&c, &x, &[0.0, 0.0], &[0.0, 0.0], 0.4).unwrap();
        let zh0 = [0.2, 0.3, -0.2];
        let y0 = p.psi(&zh0).unwrap();
        p.y0 = y0.clone();
        p.y1 = vec![y0[0] - 0.03, y0[1] + 0.02];
        let a = flow_jacobian_determinant(&p, &zh0).unwrap();
        let b = flow_jacobian_determinant_fd(&p, &zh0, 1e-4).unwrap();
        assert!(a > 0.0);
        assert!((a - b).abs() < 1e-3 * b.abs(), "{a} vs {b}");
    }

    #[test]
    fn fiber_difference_identity_on_redundant_line() {
        let c = redundant_line();
        let g = |z: &[f64]| (-(z[0] * z[0] + (z[1] - 0.05) * (z[1] - 0.05)) / (2.0 * 0.15f64.powi(2))).exp();
        let opts = FiberOptions { track_steps: 96, ..Default::default() };
        let fd = fiber_difference_check(&c, &[0.0], &g, &[0.05], &[0.12], 0.9, 1.1, &opts).unwrap();
        assert!(fd.residual <= 1e-3 * (fd.lhs.abs() + fd.rhs.abs() + 1e-6), "{fd:?}");
        let same = fiber_difference_check(&c, &[0.0], &g, &[0.05], &[0.05], 0.9, 1.1, &opts).unwrap();
        assert_eq!(same.lhs, 0.0);
        assert_eq!(same.rhs, 0.0);
    }

    #[test]
    fn escaping_flow_is_reported() {
        let c = euclid(1);
        let p = TransportProblem::new(&c, &[0.0], &[0.0], &[0.9], 0.2).unwrap();
        assert!(matches!(flow(&p, &[0.5], 1.0), Err(Error::FlowEscaped { .. })));
    }

    #[test]
    fn lipschitz_constant_on_flat_chart_is_modest() {
        let c = euclid(1);
        let l = lipschitz_constants(&c, &[0.0], 0.25, &LipschitzSampling { pairs: 4, ..Default::default() }, &FiberOptions::default())
            .unwrap();
        assert!(l.delta > 0.0);
        assert!(l.c > 0.0 && l.c <= 1.0 + 1e-6, "{l:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn flows_invert_and_keep_the_level(
            a in -0.4f64..0.4, b in -0.4f64..0.4, cz in -0.4f64..0.4,
            dy0 in -0.02f64..0.02, dy1 in -0.02f64..0.02, t in 0.1f64..1.0,
        ) {
            let c = grushin();
            let x = [0.25, 0.0];
            let mut p = TransportProblem::new(&c, &x, &[0.0, 0.0], &[0.0, 0.0], 0.4).unwrap();
            let zh0 = [a, b, cz];
            let y0 = p.psi(&zh0).unwrap();
            p.y0 = y0.clone();
            p.y1 = vec![y0[0] + dy0, y0[1] + dy1];
            let zt = flow(&p, &zh0, t).unwrap();
            let yt = p.target(t);
            let img = p.psi(&zt).unwrap();
            prop_assert!(img.iter().zip(&yt).all(|(u, v)| (u - v).abs() <= 1e-8));
            let one = flow(&p, &zh0, 1.0).unwrap();
            let back = flow(&p, &one, -1.0).unwrap();
            prop_assert!(back.iter().zip(&zh0).all(|(u, v)| (u - v).abs() <= 1e-7));
            prop_assert!(flow_jacobian_determinant(&p, &zh0).unwrap() > 0.0);
        }
    }
}
