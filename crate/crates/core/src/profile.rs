//! Profiles `f(x, z, ħ)`: smooth functions of `z` supported in the unit
//! ball of `V`, from which the dyadic kernel pieces are generated.

use crate::chart::FilteredChart;
use crate::error::{Error, Result};
use crate::graded::GradedSpace;
use crate::quadrature::TensorRule;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// Evaluator behind a [`Profile`].
pub trait ProfileFn: Send + Sync {
    fn eval(&self, x: &[f64], z: &[f64], hbar: f64) -> Complex64;
}

impl<F> ProfileFn for F
where
    F: Fn(&[f64], &[f64], f64) -> Complex64 + Send + Sync,
{
    fn eval(&self, x: &[f64], z: &[f64], hbar: f64) -> Complex64 {
        self(x, z, hbar)
    }
}

/// Closed-form profile families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProfileKind {
    Zero,
    /// `Π_k φ(z_k)` with `φ(t) = exp(1 − 1/(1 − t²))`.
    Bump,
    /// `z_1 Π_k φ(z_k)`.
    OddBump,
    /// `z_1 Π_k φ(z_k) + β ħ Π_k φ(z_k)`.
    OddBumpHbar { beta: f64 },
    /// `exp(−|z|²/2σ²) Π_k φ(z_k)`.
    Gaussian { sigma: f64 },
    /// Dyadic annulus piece `k(z) (χ(2|z|_s) − χ(4|z|_s))` of a model kernel
    /// `k` homogeneous of degree `−Q − order`: `|δ_4 z|_s^{−Q−m}` when even,
    /// `(δ_4 z)_1 |δ_4 z|_s^{−Q−m−w_1}` when odd. Here `|·|_s` is the smooth
    /// homogeneous norm `(Σ z_k^{2L/w_k})^{1/2L}` with `L = lcm(w)`.
    Cocycle { order: f64, odd: bool },
}

impl ProfileKind {
    pub fn mean_zero(&self) -> bool {
        match self {
            ProfileKind::Zero | ProfileKind::OddBump | ProfileKind::OddBumpHbar { .. } => true,
            ProfileKind::Cocycle { odd, .. } => *odd,
            ProfileKind::Bump | ProfileKind::Gaussian { .. } => false,
        }
    }

    pub fn support_radius(&self) -> f64 {
        match self {
            ProfileKind::Cocycle { .. } => 0.5,
            _ => 1.0,
        }
    }
}

/// `φ(t) = exp(1 − 1/(1 − t²))` on `|t| < 1`, zero elsewhere.
pub fn bump(t: f64) -> f64 {
    let s = 1.0 - t * t;
    if s <= 0.0 {
        0.0
    } else {
        (1.0 - 1.0 / s).exp()
    }
}

/// Smooth step: 1 on `t ≤ 1/2`, 0 on `t ≥ 1`.
pub fn cutoff(t: f64) -> f64 {
    let u = 2.0 - 2.0 * t;
    if u >= 1.0 {
        return 1.0;
    }
    if u <= 0.0 {
        return 0.0;
    }
    let a = (-1.0 / u).exp();
    let b = (-1.0 / (1.0 - u)).exp();
    a / (a + b)
}

fn lcm(a: u32, b: u32) -> u32 {
    fn gcd(a: u32, b: u32) -> u32 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    a / gcd(a, b) * b
}

struct ClosedForm {
    kind: ProfileKind,
    weights: Vec<u32>,
    q: f64,
    lcm: u32,
    coupling: f64,
}

impl ClosedForm {
    fn smooth_norm(&self, z: &[f64]) -> f64 {
        let l = self.lcm as i32;
        let s: f64 = z.iter().zip(&self.weights).map(|(v, &w)| v.powi(2 * l / w as i32)).sum();
        s.powf(0.5 / l as f64)
    }

    fn real(&self, z: &[f64], hbar: f64) -> f64 {
        let prod = || z.iter().map(|&t| bump(t)).product::<f64>();
        match &self.kind {
            ProfileKind::Zero => 0.0,
            ProfileKind::Bump => prod(),
            ProfileKind::OddBump => z[0] * prod(),
            ProfileKind::OddBumpHbar { beta } => (z[0] + beta * hbar) * prod(),
            ProfileKind::Gaussian { sigma } => {
                let r2: f64 = z.iter().map(|t| t * t).sum();
                (-0.5 * r2 / (sigma * sigma)).exp() * prod()
            }
            ProfileKind::Cocycle { order, odd } => {
                let s = self.smooth_norm(z);
                if !(s > 0.125) || s >= 0.5 {
                    return 0.0;
                }
                let window = cutoff(2.0 * s) - cutoff(4.0 * s);
                let rho = 4.0 * s;
                let degree = -self.q - order;
                let k = if *odd {
                    let w1 = self.weights[0] as i32;
                    4f64.powi(w1) * z[0] * rho.powf(degree - w1 as f64)
                } else {
                    rho.powf(degree)
                };
                k * window
            }
        }
    }
}

impl ProfileFn for ClosedForm {
    fn eval(&self, x: &[f64], z: &[f64], hbar: f64) -> Complex64 {
        let amp = 1.0 + self.coupling * x[0];
        Complex64::new(amp * self.real(z, hbar), 0.0)
    }
}

struct Adjoint {
    base: Profile,
    chart: Arc<FilteredChart>,
}

impl ProfileFn for Adjoint {
    fn eval(&self, x: &[f64], z: &[f64], hbar: f64) -> Complex64 {
        let space = self.chart.space();
        if space.norm(z) >= self.base.support_radius {
            return Complex64::new(0.0, 0.0);
        }
        let zs = space.dilate_unchecked(z, hbar);
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        match self.chart.exponential(x, &zs) {
            Ok(y) => self.base.eval(&y, &neg, hbar).conj(),
            Err(_) => Complex64::new(f64::NAN, f64::NAN),
        }
    }
}

/// A profile with its support radius and cancellation flag.
#[derive(Clone)]
pub struct Profile {
    func: Arc<dyn ProfileFn>,
    pub support_radius: f64,
    pub mean_zero: bool,
    pub label: String,
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Profile")
            .field("label", &self.label)
            .field("support_radius", &self.support_radius)
            .field("mean_zero", &self.mean_zero)
            .finish()
    }
}

impl Profile {
    /// A closed-form profile on `space`, multiplied by `1 + coupling · x_1`.
    pub fn builtin(space: &GradedSpace, kind: ProfileKind, coupling: f64) -> Result<Self> {
        match &kind {
            ProfileKind::Gaussian { sigma } if !(*sigma > 0.0) => {
                return Err(Error::InvalidProfile(format!("gaussian width {sigma} must be positive")));
            }
            ProfileKind::Cocycle { order, .. } if !(order.is_finite()) => {
                return Err(Error::InvalidProfile("cocycle order must be finite".into()));
            }
            _ => {}
        }
        let label = match &kind {
            ProfileKind::Zero => "zero".to_string(),
            ProfileKind::Bump => "bump".to_string(),
            ProfileKind::OddBump => "odd-bump".to_string(),
            ProfileKind::OddBumpHbar { beta } => format!("odd-bump-hbar(beta={beta})"),
            ProfileKind::Gaussian { sigma } => format!("gaussian(sigma={sigma})"),
            ProfileKind::Cocycle { order, odd } => {
                format!("cocycle(order={order},{})", if *odd { "odd" } else { "even" })
            }
        };
        let weights = space.weights().to_vec();
        let func = ClosedForm {
            lcm: weights.iter().fold(1, |a, &w| lcm(a, w)),
            q: space.homogeneous_dimension() as f64,
            weights,
            coupling,
            kind: kind.clone(),
        };
        Ok(Self {
            func: Arc::new(func),
            support_radius: kind.support_radius(),
            mean_zero: kind.mean_zero(),
            label,
        })
    }

    /// Wraps an arbitrary evaluator. `support_radius` must not exceed 1.
    pub fn custom(func: Arc<dyn ProfileFn>, support_radius: f64, mean_zero: bool, label: &str) -> Result<Self> {
        if !(support_radius > 0.0 && support_radius <= 1.0) {
            return Err(Error::InvalidProfile(format!("support radius {support_radius} outside (0, 1]")));
        }
        Ok(Self { func, support_radius, mean_zero, label: label.to_string() })
    }

    pub fn eval(&self, x: &[f64], z: &[f64], hbar: f64) -> Complex64 {
        self.func.eval(x, z, hbar)
    }

    /// Central-difference gradient in `z`.
    pub fn gradient(&self, x: &[f64], z: &[f64], hbar: f64) -> Vec<Complex64> {
        let h = 1e-6;
        let mut p = z.to_vec();
        (0..z.len())
            .map(|k| {
                p[k] = z[k] + h;
                let a = self.eval(x, &p, hbar);
                p[k] = z[k] - h;
                let b = self.eval(x, &p, hbar);
                p[k] = z[k];
                (a - b) / (2.0 * h)
            })
            .collect()
    }

    /// `∫_V f(x, z, ħ) dz` by a tensor Gauss–Legendre rule on the support box.
    pub fn v_integral(&self, space: &GradedSpace, x: &[f64], hbar: f64, nodes: usize) -> Complex64 {
        let n = space.dim();
        let rule = TensorRule::on_box(&vec![0.0; n], &space.ball_half_widths(self.support_radius), &vec![nodes; n]);
        let mut z = vec![0.0; n];
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..rule.len() {
            let w = rule.node(i, &mut z);
            acc += self.eval(x, &z, hbar) * w;
        }
        acc
    }

    /// `∫_V |f(x, z, ħ)| dz`.
    pub fn v_abs_integral(&self, space: &GradedSpace, x: &[f64], hbar: f64, nodes: usize) -> f64 {
        let n = space.dim();
        let rule = TensorRule::on_box(&vec![0.0; n], &space.ball_half_widths(self.support_radius), &vec![nodes; n]);
        rule.integrate(|z| self.eval(x, z, hbar).norm())
    }

    /// Sup norm and `z`-Lipschitz constant sampled on a `grid^N` lattice of
    /// the support box at each base point.
    pub fn bounds(&self, space: &GradedSpace, xs: &[Vec<f64>], hbar: f64, grid: usize) -> ProfileBounds {
        let n = space.dim();
        let half = space.ball_half_widths(self.support_radius);
        let grid = grid.max(2);
        let total = grid.pow(n as u32);
        let mut z = vec![0.0; n];
        let (mut sup, mut lip) = (0.0f64, 0.0f64);
        for x in xs {
            for idx in 0..total {
                let mut rem = idx;
                for k in 0..n {
                    let i = rem % grid;
                    rem /= grid;
                    z[k] = half[k] * (2.0 * (i as f64 + 0.5) / grid as f64 - 1.0);
                }
                sup = sup.max(self.eval(x, &z, hbar).norm());
                let g: f64 = self.gradient(x, &z, hbar).iter().map(|c| c.norm_sqr()).sum();
                lip = lip.max(g.sqrt());
            }
        }
        ProfileBounds { sup_norm: sup, lipschitz: lip }
    }

    /// Checks the support and cancellation invariants at the given base
    /// points.
    pub fn validate(&self, space: &GradedSpace, xs: &[Vec<f64>], hbar: f64) -> Result<ProfileValidation> {
        let n = space.dim();
        let mut rng = crate::rng::stream(0x5eed, &[n as u64]);
        use rand::Rng;
        let mut outside_max = 0.0f64;
        for x in xs {
            for _ in 0..512 {
                // Points on shells at or beyond the support radius.
                let t = self.support_radius * (1.0 + rng.random::<f64>());
                let mut z: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let k = rng.random_range(0..n);
                z[k] = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let z = space.dilate_unchecked(&z, t);
                outside_max = outside_max.max(self.eval(x, &z, hbar).norm());
            }
        }
        if outside_max > 0.0 {
            return Err(Error::InvalidProfile(format!(
                "{} is nonzero outside its support radius (|f| = {outside_max:e})",
                self.label
            )));
        }
        let bounds = self.bounds(space, xs, hbar, 9);
        let nodes = match n {
            1 => 64,
            2 => 40,
            3 => 24,
            _ => 12,
        };
        let mut mean_max = 0.0f64;
        for x in xs {
            mean_max = mean_max.max(self.v_integral(space, x, 0.0, nodes).norm());
        }
        let tol = 1e-6 * bounds.sup_norm * space.ball_volume(1.0);
        if self.mean_zero && mean_max > tol {
            return Err(Error::MeanNonzero(mean_max));
        }
        Ok(ProfileValidation { bounds, mean_at_zero: mean_max, outside_max })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileBounds {
    pub sup_norm: f64,
    pub lipschitz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileValidation {
    pub bounds: ProfileBounds,
    /// Largest `|∫_V f(x, z, 0) dz|` over the checked base points.
    pub mean_at_zero: f64,
    pub outside_max: f64,
}

/// The profile `f̃(x, z, ħ) = conj f(Λ_x(δ_ħ z), −z, ħ)` generating the
/// kernel pieces of the adjoint operator.
pub fn adjoint_profile(chart: Arc<FilteredChart>, profile: &Profile) -> Profile {
    Profile {
        label: format!("adjoint({})", profile.label),
        support_radius: profile.support_radius,
        mean_zero: profile.mean_zero,
        func: Arc::new(Adjoint { base: profile.clone(), chart }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::BoxRegion;
    use crate::poly::PolyField;
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

    #[test]
    fn builtins_validate() {
        let space = GradedSpace::new(vec![1, 1, 2]).unwrap();
        let xs = vec![vec![0.0, 0.0], vec![0.3, -0.2]];
        for kind in [
            ProfileKind::Zero,
            ProfileKind::Bump,
            ProfileKind::OddBump,
            ProfileKind::OddBumpHbar { beta: 0.5 },
            ProfileKind::Gaussian { sigma: 0.4 },
            ProfileKind::Cocycle { order: 0.0, odd: true },
            ProfileKind::Cocycle { order: -1.0, odd: false },
        ] {
            let p = Profile::builtin(&space, kind, 0.2).unwrap();
            p.validate(&space, &xs, 0.25).unwrap();
        }
    }

    #[test]
    fn mislabelled_mean_zero_is_rejected() {
        let space = GradedSpace::new(vec![1]).unwrap();
        let mut p = Profile::builtin(&space, ProfileKind::Bump, 0.0).unwrap();
        p.mean_zero = true;
        assert!(matches!(p.validate(&space, &[vec![0.0]], 0.5), Err(Error::MeanNonzero(_))));
    }

    #[test]
    fn hbar_term_integral_is_linear() {
        // ∫ (z_1 + β ħ) Π φ = β ħ (∫φ)^N.
        let space = GradedSpace::new(vec![1, 1]).unwrap();
        let p = Profile::builtin(&space, ProfileKind::OddBumpHbar { beta: 0.7 }, 0.0).unwrap();
        let (nodes, w) = crate::quadrature::gauss_legendre(200);
        let phi: f64 = nodes.iter().zip(&w).map(|(t, w)| w * bump(*t)).sum();
        for h in [0.5, 0.125] {
            let i = p.v_integral(&space, &[0.0, 0.0], h, 64);
            assert!((i.re - 0.7 * h * phi * phi).abs() < 1e-9, "{i}");
        }
    }

    #[test]
    fn cocycle_pieces_telescope_to_model_kernel() {
        // Σ_{j=0}^{J} 2^{j(Q+m)} f(δ_{2^j} z) = k(z)(χ(2s) − χ(2^{J+2}s)).
        let space = GradedSpace::new(vec![1, 2]).unwrap();
        let m = -0.5;
        let p = Profile::builtin(&space, ProfileKind::Cocycle { order: m, odd: false }, 0.0).unwrap();
        let z = [0.03, -0.0011];
        let q = 3.0;
        let sum: f64 = (0..12)
            .map(|j| 2f64.powf(j as f64 * (q + m)) * p.eval(&[0.0], &space.dilate(&z, 2f64.powi(j)).unwrap(), 0.1).re)
            .sum();
        let s = (z[0].powi(4) + z[1].powi(2)).powf(0.25);
        let k = (4.0 * s).powf(-q - m);
        let expect = k * (cutoff(2.0 * s) - cutoff(2f64.powi(14) * s));
        assert!((sum - expect).abs() < 1e-9 * expect.abs(), "{sum} vs {expect}");
    }

    #[test]
    fn adjoint_of_even_real_profile_is_itself() {
        let c = euclid(2);
        let p = Profile::builtin(c.space(), ProfileKind::Gaussian { sigma: 0.3 }, 0.0).unwrap();
        let a = adjoint_profile(c.clone(), &p);
        let z = [0.2, -0.4];
        assert!((a.eval(&[0.1, 0.1], &z, 0.5) - p.eval(&[0.1, 0.1], &z, 0.5)).norm() < 1e-14);
    }

    proptest! {
        #[test]
        fn adjoint_is_an_involution_on_flat_charts(
            x0 in -0.5f64..0.5, x1 in -0.5f64..0.5,
            z0 in -0.9f64..0.9, z1 in -0.9f64..0.9, h in 0.05f64..0.5,
        ) {
            let c = euclid(2);
            let p = Profile::builtin(c.space(), ProfileKind::OddBumpHbar { beta: 0.3 }, 0.4).unwrap();
            let twice = adjoint_profile(c.clone(), &adjoint_profile(c.clone(), &p));
            let (x, z) = ([x0, x1], [z0, z1]);
            prop_assert!((twice.eval(&x, &z, h) - p.eval(&x, &z, h)).norm() < 1e-8);
        }
    }
}
