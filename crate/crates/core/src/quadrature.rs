//! Gauss–Legendre rules and uniform cell grids on boxes.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "rule needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut t = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, t);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p1 = t;
                p0 = 1.0;
            }
            dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
            let dt = p1 / dp;
            t -= dt;
            if dt.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -t;
        x[n - 1 - i] = t;
        let wi = 2.0 / ((1.0 - t * t) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Tensor-product Gauss–Legendre rule on a box `Π [c_k - h_k, c_k + h_k]`.
#[derive(Debug, Clone)]
pub struct TensorRule {
    nodes: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
}

impl TensorRule {
    /// Rule with `counts[k]` nodes along axis `k` on the box with the given
    /// centre and half-widths.
    pub fn on_box(center: &[f64], half: &[f64], counts: &[usize]) -> Self {
        let mut nodes = Vec::with_capacity(counts.len());
        let mut weights = Vec::with_capacity(counts.len());
        for ((c, h), &n) in center.iter().zip(half).zip(counts) {
            let (x, w) = gauss_legendre(n);
            nodes.push(x.iter().map(|t| c + h * t).collect());
            weights.push(w.iter().map(|v| v * h).collect());
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Point and weight of the `idx`-th node in row-major order.
    pub fn node(&self, mut idx: usize, point: &mut [f64]) -> f64 {
        let mut w = 1.0;
        for k in (0..self.nodes.len()).rev() {
            let n = self.nodes[k].len();
            let i = idx % n;
            idx /= n;
            point[k] = self.nodes[k][i];
            w *= self.weights[k][i];
        }
        w
    }

    /// Integrates `f` over the box.
    pub fn integrate<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> f64 {
        let mut p = vec![0.0; self.nodes.len()];
        (0..self.len()).map(|i| {
            let w = self.node(i, &mut p);
            w * f(&p)
        }).sum()
    }
}

/// Uniform cell-centred grid on a box, used for midpoint-rule integrals and
/// discretised operators.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
}

impl CellGrid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>) -> Self {
        assert!(lo.len() == hi.len() && hi.len() == counts.len());
        Self { lo, hi, counts }
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, k: usize) -> f64 {
        (self.hi[k] - self.lo[k]) / self.counts[k] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.spacing(k)).product()
    }

    /// Multi-index of the flat index `idx` (row-major, last axis fastest).
    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut m = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            m[k] = idx % self.counts[k];
            idx /= self.counts[k];
        }
        m
    }

    pub fn flat_index(&self, m: &[usize]) -> usize {
        m.iter().zip(&self.counts).fold(0, |acc, (i, n)| acc * n + i)
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .iter()
            .enumerate()
            .map(|(k, &i)| self.lo[k] + (i as f64 + 0.5) * self.spacing(k))
            .collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Range of cell indices along axis `k` whose centres lie in `[a, b]`.
    pub fn axis_range(&self, k: usize, a: f64, b: f64) -> std::ops::Range<usize> {
        let h = self.spacing(k);
        let first = ((a - self.lo[k]) / h - 0.5).ceil().max(0.0) as usize;
        let last = ((b - self.lo[k]) / h - 0.5).floor();
        if last < 0.0 {
            return 0..0;
        }
        let last = (last as usize + 1).min(self.counts[k]);
        first.min(last)..last
    }

    /// Flat indices of all cell centres inside the box `[lo, hi]`.
    pub fn indices_in_box(&self, lo: &[f64], hi: &[f64]) -> Vec<usize> {
        let ranges: Vec<_> = (0..self.dim()).map(|k| self.axis_range(k, lo[k], hi[k])).collect();
        if ranges.iter().any(|r| r.is_empty()) {
            return Vec::new();
        }
        let mut out = Vec::new();
        let mut m: Vec<usize> = ranges.iter().map(|r| r.start).collect();
        loop {
            out.push(self.flat_index(&m));
            let mut k = self.dim();
            loop {
                if k == 0 {
                    return out;
                }
                k -= 1;
                m[k] += 1;
                if m[k] < ranges[k].end {
                    break;
                }
                m[k] = ranges[k].start;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                let q: f64 = x.iter().zip(&w).map(|(t, v)| v * t.powi(deg as i32)).sum();
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg}: {q} vs {exact}");
            }
        }
    }

    #[test]
    fn tensor_rule_on_shifted_box() {
        let rule = TensorRule::on_box(&[1.0, -2.0], &[0.5, 2.0], &[3, 4]);
        let v = rule.integrate(|p| p[0] * p[0] * p[1]);
        // ∫_{0.5}^{1.5} x^2 dx · ∫_{-4}^{0} y dy
        let exact = (1.5f64.powi(3) - 0.5f64.powi(3)) / 3.0 * (-8.0);
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn grid_box_queries() {
        let g = CellGrid::new(vec![0.0, 0.0], vec![1.0, 2.0], vec![10, 4]);
        assert_eq!(g.len(), 40);
        assert!((g.cell_volume() - 0.05).abs() < 1e-15);
        let idx = g.indices_in_box(&[0.12, 0.0], &[0.36, 0.8]);
        // x centres 0.15, 0.25, 0.35; y centres 0.25, 0.75.
        assert_eq!(idx.len(), 6);
        for i in idx {
            let p = g.point(i);
            assert!(p[0] > 0.12 && p[0] < 0.36 && p[1] < 0.8);
        }
        assert!(g.indices_in_box(&[2.0, 0.0], &[3.0, 1.0]).is_empty());
        assert_eq!(g.flat_index(&g.multi_index(37)), 37);
    }
}
