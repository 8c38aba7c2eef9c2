//! Filtered charts and their exponential coordinates.
//!
//! A chart carries polynomial vector fields `X_1 … X_N` on a box `U ⊂ R^d`
//! together with a graded space `V = R^N` and a radius `ε`. For `z ∈ V` the
//! exponential map `Λ_x(z)` is the time-one flow of `♯z = Σ z_j X_j` started
//! at `x`, integrated with classical RK4.

use crate::error::{check_len, Error, Result};
use crate::graded::GradedSpace;
use crate::poly::{Polynomial, PolyField};
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Number of RK4 steps used for every exponential-map evaluation.
pub const RK4_STEPS: usize = 64;
/// Singular values of `DΛ` below this threshold are treated as rank loss.
pub const RANK_TOL: f64 = 1e-9;

/// An axis-aligned box `Π [lo_k, hi_k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidArgument("box bounds must have equal nonzero length".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidArgument(format!("empty box {lo:?} .. {hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    /// Box with the given centre and half-widths.
    pub fn centered(center: &[f64], half: &[f64]) -> Self {
        Self {
            lo: center.iter().zip(half).map(|(c, h)| c - h).collect(),
            hi: center.iter().zip(half).map(|(c, h)| c + h).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter().zip(self.lo.iter().zip(&self.hi)).all(|(x, (a, b))| *x >= *a && *x <= *b)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (b - a)).collect()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    /// Box grown by `margin` times its own width on every side.
    pub fn inflated(&self, margin: f64) -> Self {
        let c = self.center();
        let h: Vec<f64> = self.half_widths().iter().map(|h| h * (1.0 + 2.0 * margin)).collect();
        Self::centered(&c, &h)
    }

    /// Cell-centred lattice with `per_axis` points per axis on the box shrunk
    /// about its centre by `fraction`.
    pub fn lattice(&self, per_axis: usize, fraction: f64) -> Vec<Vec<f64>> {
        let d = self.dim();
        let n = per_axis.max(1);
        let c = self.center();
        let h = self.half_widths();
        (0..n.pow(d as u32))
            .map(|mut idx| {
                (0..d)
                    .map(|k| {
                        let i = idx % n;
                        idx /= n;
                        c[k] + fraction * h[k] * ((2 * i + 1) as f64 / n as f64 - 1.0)
                    })
                    .collect()
            })
            .collect()
    }

    /// Smallest box containing both boxes.
    pub fn union(&self, other: &Self) -> Self {
        Self {
            lo: self.lo.iter().zip(&other.lo).map(|(a, b)| a.min(*b)).collect(),
            hi: self.hi.iter().zip(&other.hi).map(|(a, b)| a.max(*b)).collect(),
        }
    }

    pub fn intersects(&self, other: &Self) -> bool {
        (0..self.dim()).all(|k| self.lo[k] <= other.hi[k] && other.lo[k] <= self.hi[k])
    }
}

/// Vector fields compiled into flat term tables so that `♯z` can be
/// integrated without touching the polynomial representation.
#[derive(Debug, Clone)]
struct CompiledFields {
    n: usize,
    monomials: Vec<Mono>,
    /// Terms of component `i` are `term_start[i]..term_start[i+1]`.
    term_start: Vec<usize>,
    term_mono: Vec<usize>,
    /// Row `t` holds the coefficient of term `t` in each of the `N` fields.
    term_rows: Vec<f64>,
}

impl CompiledFields {
    fn new(fields: &[PolyField]) -> Self {
        let d = fields[0].dim();
        let n = fields.len();
        let mut monomials: Vec<Vec<u8>> = Vec::new();
        let mut term_start = vec![0];
        let mut term_mono = Vec::new();
        let mut term_rows = Vec::new();
        for i in 0..d {
            let mut local: Vec<(usize, Vec<f64>)> = Vec::new();
            for (j, f) in fields.iter().enumerate() {
                for (c, e) in f.components()[i].terms() {
                    let mi = match monomials.iter().position(|x| x == e) {
                        Some(p) => p,
                        None => {
                            monomials.push(e.clone());
                            monomials.len() - 1
                        }
                    };
                    match local.iter_mut().find(|(m, _)| *m == mi) {
                        Some((_, row)) => row[j] += c,
                        None => {
                            let mut row = vec![0.0; n];
                            row[j] = *c;
                            local.push((mi, row));
                        }
                    }
                }
            }
            for (mi, row) in local {
                term_mono.push(mi);
                term_rows.extend(row);
            }
            term_start.push(term_mono.len());
        }
        let monomials = monomials.iter().map(|e| Mono::from_exponents(e)).collect();
        Self { n, monomials, term_start, term_mono, term_rows }
    }

    /// True when every field is affine in `x`.
    fn is_affine(&self) -> bool {
        self.monomials.iter().all(|m| matches!(m, Mono::One | Mono::Lin(_)))
    }

    /// Splits the dense matrix of an affine `♯z` into `A` (row-major `d × d`) and `b`.
    fn affine_parts(&self, dense: &[f64], d: usize, a: &mut [f64], b: &mut [f64]) {
        let m = self.monomial_count();
        a.iter_mut().for_each(|v| *v = 0.0);
        b.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..d {
            for (j, mono) in self.monomials.iter().enumerate() {
                match mono {
                    Mono::One => b[i] += dense[i * m + j],
                    Mono::Lin(k) => a[i * d + k] += dense[i * m + j],
                    _ => unreachable!("affine_parts on a nonaffine field"),
                }
            }
        }
    }

    fn monomial_count(&self) -> usize {
        self.monomials.len()
    }

    /// Dense `d × M` coefficient matrix of `♯z` (row-major).
    fn combine(&self, z: &[f64]) -> Vec<f64> {
        let m = self.monomial_count();
        let d = self.term_start.len() - 1;
        let mut dense = vec![0.0; d * m];
        for i in 0..d {
            for t in self.term_start[i]..self.term_start[i + 1] {
                let row = &self.term_rows[t * self.n..(t + 1) * self.n];
                dense[i * m + self.term_mono[t]] += row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        dense
    }

    #[inline(always)]
    fn eval(&self, dense: &[f64], x: &[f64], mono: &mut [f64], out: &mut [f64]) {
        for (v, m) in mono.iter_mut().zip(&self.monomials) {
            *v = match m {
                Mono::One => 1.0,
                Mono::Lin(k) => x[*k],
                Mono::Quad(k, l) => x[*k] * x[*l],
                Mono::General(f) => f.iter().fold(1.0, |acc, &(k, p)| acc * x[k].powi(p as i32)),
            };
        }
        let m = mono.len();
        for (o, row) in out.iter_mut().zip(dense.chunks_exact(m)) {
            *o = row.iter().zip(mono.iter()).fold(0.0, |acc, (a, b)| acc + a * b);
        }
    }
}

/// Monomial evaluators specialised by degree.
#[derive(Debug, Clone)]
enum Mono {
    One,
    Lin(usize),
    Quad(usize, usize),
    General(Vec<(usize, u8)>),
}

impl Mono {
    fn from_exponents(e: &[u8]) -> Self {
        let factors: Vec<(usize, u8)> = e.iter().enumerate().filter(|(_, p)| **p > 0).map(|(k, p)| (k, *p)).collect();
        match factors.as_slice() {
            [] => Mono::One,
            [(k, 1)] => Mono::Lin(*k),
            [(k, 2)] => Mono::Quad(*k, *k),
            [(k, 1), (l, 1)] => Mono::Quad(*k, *l),
            _ => Mono::General(factors),
        }
    }
}

/// A filtered chart: fields, grading, domain and radius.
#[derive(Debug, Clone)]
pub struct FilteredChart {
    space: GradedSpace,
    domain: BoxRegion,
    region: BoxRegion,
    fields: Vec<PolyField>,
    compiled: CompiledFields,
    epsilon: f64,
}

impl FilteredChart {
    /// Builds and validates a chart. Trajectories may wander into the
    /// domain inflated by two domain widths on each side; leaving that
    /// region is an error.
    pub fn new(
        space: GradedSpace,
        fields: Vec<PolyField>,
        domain: BoxRegion,
        epsilon: f64,
    ) -> Result<Self> {
        let d = domain.dim();
        if fields.len() != space.dim() {
            return Err(Error::DimensionMismatch { expected: space.dim(), got: fields.len() });
        }
        if let Some(f) = fields.iter().find(|f| f.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: f.dim() });
        }
        if space.dim() < d {
            return Err(Error::InvalidArgument("need at least d vector fields".into()));
        }
        if !(epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("chart radius must be positive, got {epsilon}")));
        }
        let region = domain.inflated(2.0);
        let compiled = CompiledFields::new(&fields);
        let chart = Self { space, domain, region, fields, compiled, epsilon };
        chart.validate()?;
        Ok(chart)
    }

    pub fn space(&self) -> &GradedSpace {
        &self.space
    }

    /// Base dimension `d`.
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Exponential dimension `N`.
    pub fn exp_dim(&self) -> usize {
        self.space.dim()
    }

    pub fn domain(&self) -> &BoxRegion {
        &self.domain
    }

    /// Region that trajectories must not leave.
    pub fn admissible_region(&self) -> &BoxRegion {
        &self.region
    }

    pub fn fields(&self) -> &[PolyField] {
        &self.fields
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// The vector field `♯v = Σ v_j X_j`.
    pub fn sharp(&self, v: &[f64]) -> Result<PolyField> {
        check_len(v, self.exp_dim())?;
        Ok(PolyField::combine(&self.fields, v))
    }

    /// `[X_1(x) … X_N(x)]` as a `d × N` matrix.
    pub fn field_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, self.exp_dim());
        for (j, f) in self.fields.iter().enumerate() {
            for (i, p) in f.components().iter().enumerate() {
                m[(i, j)] = p.eval(x);
            }
        }
        m
    }

    /// Spatial derivative of `♯z` at `x`, as polynomials indexed `[i][k]`.
    pub fn sharp_derivative(&self, z: &[f64]) -> Result<Vec<Vec<Polynomial>>> {
        Ok(self.sharp(z)?.derivative())
    }

    /// `Λ_x(z)` for `|z|_V < ε`.
    pub fn exponential(&self, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        self.check_exp_args(x, z)?;
        self.flow_raw(x, z, RK4_STEPS)
    }

    /// `Λ_x(z)` together with a Richardson estimate of the RK4 error,
    /// obtained by comparing against a run with half as many steps.
    pub fn exponential_with_error(&self, x: &[f64], z: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_exp_args(x, z)?;
        let fine = self.flow_raw(x, z, RK4_STEPS)?;
        let coarse = self.flow_raw(x, z, RK4_STEPS / 2)?;
        let err = fine.iter().zip(&coarse).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / 15.0;
        Ok((fine, err))
    }

    fn check_exp_args(&self, x: &[f64], z: &[f64]) -> Result<()> {
        check_len(x, self.dim())?;
        check_len(z, self.exp_dim())?;
        let norm = self.space.norm(z);
        if norm >= self.epsilon * (1.0 + 1e-12) {
            return Err(Error::OutsideChart { norm, epsilon: self.epsilon });
        }
        Ok(())
    }

    /// RK4 flow of `♯z` for unit time without the radius check.
    pub(crate) fn flow_raw(&self, x: &[f64], z: &[f64], steps: usize) -> Result<Vec<f64>> {
        match self.dim() {
            1 => self.flow_array::<1>(x, z, steps),
            2 => self.flow_array::<2>(x, z, steps),
            3 => self.flow_array::<3>(x, z, steps),
            4 => self.flow_array::<4>(x, z, steps),
            _ => self.flow_heap(x, z, steps),
        }
    }

    /// RK4 loop on stack arrays of length `D`.
    fn flow_array<const D: usize>(&self, x: &[f64], z: &[f64], steps: usize) -> Result<Vec<f64>> {
        let dense = self.compiled.combine(z);
        let mut y = [0.0f64; D];
        y.copy_from_slice(x);
        let h = 1.0 / steps as f64;
        let lo = &self.region.lo;
        let hi = &self.region.hi;
        if self.compiled.is_affine() {
            let mut a = [[0.0f64; D]; D];
            let mut b = [0.0f64; D];
            let mut flat = vec![0.0; D * D];
            self.compiled.affine_parts(&dense, D, &mut flat, &mut b);
            for i in 0..D {
                a[i].copy_from_slice(&flat[i * D..(i + 1) * D]);
            }
            let f = |p: &[f64; D]| -> [f64; D] {
                std::array::from_fn(|i| {
                    let mut acc = b[i];
                    for k in 0..D {
                        acc += a[i][k] * p[k];
                    }
                    acc
                })
            };
            for _ in 0..steps {
                let k0 = f(&y);
                let k1 = f(&std::array::from_fn(|i| y[i] + 0.5 * h * k0[i]));
                let k2 = f(&std::array::from_fn(|i| y[i] + 0.5 * h * k1[i]));
                let k3 = f(&std::array::from_fn(|i| y[i] + h * k2[i]));
                let mut ok = true;
                for i in 0..D {
                    y[i] += h / 6.0 * (k0[i] + 2.0 * k1[i] + 2.0 * k2[i] + k3[i]);
                    ok &= y[i] >= lo[i] && y[i] <= hi[i];
                }
                if !ok {
                    return Err(Error::LeftDomain(y.to_vec()));
                }
            }
            return Ok(y.to_vec());
        }
        let mut mono = vec![0.0; self.compiled.monomial_count()];
        let (mut k0, mut k1, mut k2, mut k3) = ([0.0; D], [0.0; D], [0.0; D], [0.0; D]);
        for _ in 0..steps {
            self.compiled.eval(&dense, &y, &mut mono, &mut k0);
            let t: [f64; D] = std::array::from_fn(|i| y[i] + 0.5 * h * k0[i]);
            self.compiled.eval(&dense, &t, &mut mono, &mut k1);
            let t: [f64; D] = std::array::from_fn(|i| y[i] + 0.5 * h * k1[i]);
            self.compiled.eval(&dense, &t, &mut mono, &mut k2);
            let t: [f64; D] = std::array::from_fn(|i| y[i] + h * k2[i]);
            self.compiled.eval(&dense, &t, &mut mono, &mut k3);
            let mut ok = true;
            for i in 0..D {
                y[i] += h / 6.0 * (k0[i] + 2.0 * k1[i] + 2.0 * k2[i] + k3[i]);
                ok &= y[i] >= lo[i] && y[i] <= hi[i];
            }
            if !ok {
                return Err(Error::LeftDomain(y.to_vec()));
            }
        }
        Ok(y.to_vec())
    }

    /// Heap-buffer RK4 loop for dimensions without a fixed-size variant.
    fn flow_heap(&self, x: &[f64], z: &[f64], steps: usize) -> Result<Vec<f64>> {
        let d = self.dim();
        let dense = self.compiled.combine(z);
        let mut mono = vec![0.0; self.compiled.monomial_count()];
        let mut y = x.to_vec();
        let mut k = vec![vec![0.0; d]; 4];
        let mut t = vec![0.0; d];
        let h = 1.0 / steps as f64;
        for _ in 0..steps {
            self.compiled.eval(&dense, &y, &mut mono, &mut k[0]);
            for i in 0..d {
                t[i] = y[i] + 0.5 * h * k[0][i];
            }
            self.compiled.eval(&dense, &t, &mut mono, &mut k[1]);
            for i in 0..d {
                t[i] = y[i] + 0.5 * h * k[1][i];
            }
            self.compiled.eval(&dense, &t, &mut mono, &mut k[2]);
            for i in 0..d {
                t[i] = y[i] + h * k[2][i];
            }
            self.compiled.eval(&dense, &t, &mut mono, &mut k[3]);
            for i in 0..d {
                y[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
            }
            if !self.region.contains(&y) || y.iter().any(|v| !v.is_finite()) {
                return Err(Error::LeftDomain(y));
            }
        }
        Ok(y)
    }

    /// `DΛ_x(z)` by central differences with step `1e-6 · max(1, |z|)`.
    /// Fails with [`Error::RankDeficient`] when the differential is not onto.
    pub fn jacobian(&self, x: &[f64], z: &[f64]) -> Result<DMatrix<f64>> {
        check_len(x, self.dim())?;
        check_len(z, self.exp_dim())?;
        let j = self.jacobian_raw(x, z)?;
        let sigma = smallest_singular_value(&j);
        if sigma < RANK_TOL {
            return Err(Error::RankDeficient(sigma));
        }
        Ok(j)
    }

    pub(crate) fn jacobian_raw(&self, x: &[f64], z: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.exp_dim();
        let h = 1e-6 * z.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        let mut out = DMatrix::zeros(self.dim(), n);
        let mut zp = z.to_vec();
        for k in 0..n {
            zp[k] = z[k] + h;
            let plus = self.flow_raw(x, &zp, RK4_STEPS)?;
            zp[k] = z[k] - h;
            let minus = self.flow_raw(x, &zp, RK4_STEPS)?;
            zp[k] = z[k];
            for i in 0..self.dim() {
                out[(i, k)] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
        Ok(out)
    }

    /// Co-area weight `sqrt(det(DΛ DΛᵀ))`.
    pub fn coarea_weight(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        let j = self.jacobian(x, z)?;
        Ok(gram_sqrt_det(&j))
    }

    /// Bounding box of `Λ_x(B_V(0, r))`, estimated from the images of the
    /// `3^N` stencil points of the ball (corners, edge and face midpoints,
    /// centre) and inflated by 10 % of its extent.
    pub fn image_box(&self, x: &[f64], r: f64) -> Result<BoxRegion> {
        let half = self.space.ball_half_widths(r);
        let n = self.exp_dim();
        let mut lo = x.to_vec();
        let mut hi = x.to_vec();
        let mut z = vec![0.0; n];
        for idx in 0..3usize.pow(n as u32) {
            let mut t = idx;
            for k in 0..n {
                z[k] = half[k] * ((t % 3) as f64 - 1.0);
                t /= 3;
            }
            let y = self.flow_raw(x, &z, RK4_STEPS)?;
            for i in 0..self.dim() {
                lo[i] = lo[i].min(y[i]);
                hi[i] = hi[i].max(y[i]);
            }
        }
        for i in 0..self.dim() {
            let pad = 0.1 * (hi[i] - lo[i]) + 1e-14;
            lo[i] -= pad;
            hi[i] += pad;
        }
        Ok(BoxRegion { lo, hi })
    }

    /// Checks that the fields span `R^d` across the domain and that flows
    /// for `|z|_V < ε` stay admissible with a small integration error.
    fn validate(&self) -> Result<()> {
        let d = self.dim();
        let mut points = Vec::new();
        let per_axis = 5usize;
        for idx in 0..per_axis.pow(d as u32) {
            let mut t = idx;
            let p: Vec<f64> = (0..d)
                .map(|k| {
                    let i = t % per_axis;
                    t /= per_axis;
                    self.domain.lo[k] + (self.domain.hi[k] - self.domain.lo[k]) * i as f64 / (per_axis - 1) as f64
                })
                .collect();
            points.push(p);
        }
        let mut rng = crate::rng::stream(0x6368_6172, &[d as u64, self.exp_dim() as u64]);
        for _ in 0..16 {
            points.push((0..d).map(|k| rng.random_range(self.domain.lo[k]..self.domain.hi[k])).collect());
        }
        for p in &points {
            let sigma = smallest_singular_value(&self.field_matrix(p));
            if sigma < RANK_TOL {
                return Err(Error::NotSpanning { point: p.clone(), sigma });
            }
        }
        let half = self.space.ball_half_widths(self.epsilon * (1.0 - 1e-9));
        for p in points.iter().step_by(3) {
            for probe in 0..4 {
                let z: Vec<f64> = half
                    .iter()
                    .map(|h| if probe == 0 { *h } else { rng.random_range(-*h..*h) })
                    .collect();
                let (y, err) = self.exponential_with_error(p, &z)?;
                let budget = 1e-8 * (1.0 + y.iter().map(|v| v.abs()).fold(0.0, f64::max));
                if err > budget {
                    return Err(Error::StepUnderflow { estimate: err, budget });
                }
            }
        }
        Ok(())
    }
}

/// `sqrt(det(J Jᵀ))` for a wide matrix `J`.
pub fn gram_sqrt_det(j: &DMatrix<f64>) -> f64 {
    let g = j * j.transpose();
    g.determinant().max(0.0).sqrt()
}

/// Smallest singular value of a `d × N` matrix with `d ≤ N`.
pub fn smallest_singular_value(j: &DMatrix<f64>) -> f64 {
    let g = j * j.transpose();
    let e = g.symmetric_eigenvalues();
    e.iter().cloned().fold(f64::INFINITY, f64::min).max(0.0).sqrt()
}

/// The exponential map at a fixed base point in coordinates normalised to a
/// radius: `ψ(ẑ) = Λ_x(δ_r ẑ)`, so `B_V(0, r)` becomes the unit box.
pub(crate) struct ScaledExp<'a> {
    pub chart: &'a FilteredChart,
    pub x: &'a [f64],
    pub scale: Vec<f64>,
}

impl<'a> ScaledExp<'a> {
    pub fn new(chart: &'a FilteredChart, x: &'a [f64], r: f64) -> Self {
        Self { chart, x, scale: chart.space.ball_half_widths(r) }
    }

    pub fn to_z(&self, zh: &[f64]) -> Vec<f64> {
        zh.iter().zip(&self.scale).map(|(a, s)| a * s).collect()
    }

    pub fn eval(&self, zh: &[f64]) -> Result<Vec<f64>> {
        self.chart.flow_raw(self.x, &self.to_z(zh), RK4_STEPS)
    }

    /// `Dψ(ẑ) = DΛ_x(δ_r ẑ) · diag(r^{w})`.
    pub fn jacobian(&self, zh: &[f64]) -> Result<DMatrix<f64>> {
        let mut j = self.chart.jacobian_raw(self.x, &self.to_z(zh))?;
        for (k, s) in self.scale.iter().enumerate() {
            j.column_mut(k).scale_mut(*s);
        }
        Ok(j)
    }
}
