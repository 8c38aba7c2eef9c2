//! Graded vector spaces `V = R^N` with weights `w_1 ≤ … ≤ w_N`.
//!
//! The dilation `δ_t` scales coordinate `j` by `t^{w_j}` and the homogeneous
//! quasi-norm is `|v|_V = max_j |v_j|^{1/w_j}`. With this choice the ball
//! `B_V(0, r)` is the coordinate box with half-widths `r^{w_j}`, so volumes
//! and uniform sampling are exact.

use crate::error::{check_len, Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradedSpace {
    weights: Vec<u32>,
}

impl GradedSpace {
    /// Builds a graded space. Weights must be positive and nondecreasing.
    pub fn new(weights: Vec<u32>) -> Result<Self> {
        if weights.is_empty()
            || weights.contains(&0)
            || weights.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::InvalidWeights(weights));
        }
        Ok(Self { weights })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[u32] {
        &self.weights
    }

    /// Homogeneous dimension `Q = Σ w_j`.
    pub fn homogeneous_dimension(&self) -> u32 {
        self.weights.iter().sum()
    }

    /// `δ_t v`. Fails for `t ≤ 0` or a vector of the wrong length.
    pub fn dilate(&self, v: &[f64], t: f64) -> Result<Vec<f64>> {
        check_len(v, self.dim())?;
        if !(t > 0.0) {
            return Err(Error::NonPositiveDilation(t));
        }
        Ok(self.dilate_unchecked(v, t))
    }

    pub(crate) fn dilate_unchecked(&self, v: &[f64], t: f64) -> Vec<f64> {
        v.iter()
            .zip(&self.weights)
            .map(|(x, &w)| x * t.powi(w as i32))
            .collect()
    }

    /// Half-widths `r^{w_j}` of the box `B_V(0, r)`.
    pub fn ball_half_widths(&self, r: f64) -> Vec<f64> {
        self.weights.iter().map(|&w| r.powi(w as i32)).collect()
    }

    /// `|v|_V`, checking the length of `v`.
    pub fn homogeneous_norm(&self, v: &[f64]) -> Result<f64> {
        check_len(v, self.dim())?;
        Ok(self.norm(v))
    }

    /// `|v|_V` without a length check.
    pub fn norm(&self, v: &[f64]) -> f64 {
        v.iter()
            .zip(&self.weights)
            .map(|(x, &w)| match w {
                1 => x.abs(),
                2 => x.abs().sqrt(),
                _ => x.abs().powf(1.0 / w as f64),
            })
            .fold(0.0, f64::max)
    }

    /// Lebesgue volume of `B_V(0, r)`, equal to `2^N r^Q`.
    pub fn ball_volume(&self, r: f64) -> f64 {
        2f64.powi(self.dim() as i32) * r.powi(self.homogeneous_dimension() as i32)
    }

    /// Draws `count` points uniformly from the open ball `B_V(0, r)` by
    /// rejection from its bounding box.
    pub fn sample_ball(&self, r: f64, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        if !(r > 0.0) {
            return Err(Error::NonPositiveDilation(r));
        }
        let half = self.ball_half_widths(r);
        let mut rng = crate::rng::stream(seed, &[0x6261_6c6c]);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let v: Vec<f64> = half.iter().map(|h| rng.random_range(-*h..*h)).collect();
            if self.norm(&v) < r {
                out.push(v);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grushin() -> GradedSpace {
        GradedSpace::new(vec![1, 1, 2]).unwrap()
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(matches!(GradedSpace::new(vec![2, 1]), Err(Error::InvalidWeights(_))));
        assert!(GradedSpace::new(vec![]).is_err());
        assert!(GradedSpace::new(vec![0, 1]).is_err());
    }

    #[test]
    fn dilation_and_norm_by_hand() {
        let v = grushin();
        assert_eq!(v.homogeneous_dimension(), 4);
        assert_eq!(v.dilate(&[1.0, 1.0, 1.0], 2.0).unwrap(), vec![2.0, 2.0, 4.0]);
        assert!((v.homogeneous_norm(&[0.0, 0.0, 0.25]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(v.dilate(&[1.0, 1.0, 1.0], 0.0), Err(Error::NonPositiveDilation(_))));
        assert!(v.homogeneous_norm(&[1.0]).is_err());
    }

    #[test]
    fn samples_lie_in_ball_and_fill_it() {
        let v = grushin();
        let pts = v.sample_ball(0.5, 4000, 3).unwrap();
        assert!(pts.iter().all(|p| v.norm(p) < 0.5));
        // Fraction inside the half-radius ball is 2^{-Q}.
        let inner = pts.iter().filter(|p| v.norm(p) < 0.25).count() as f64 / 4000.0;
        assert!((inner - 1.0 / 16.0).abs() < 0.015, "inner fraction {inner}");
        assert_eq!(pts, v.sample_ball(0.5, 4000, 3).unwrap());
    }

    proptest! {
        #[test]
        fn dilation_is_a_group_action(
            s in 0.05f64..4.0, t in 0.05f64..4.0,
            a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0,
        ) {
            let v = grushin();
            let x = [a, b, c];
            let lhs = v.dilate(&v.dilate(&x, t).unwrap(), s).unwrap();
            let rhs = v.dilate(&x, s * t).unwrap();
            for (l, r) in lhs.iter().zip(&rhs) {
                prop_assert!((l - r).abs() <= 1e-12 * (1.0 + r.abs()));
            }
        }

        #[test]
        fn norm_is_homogeneous(
            t in 0.05f64..4.0, a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0,
        ) {
            let v = grushin();
            let x = [a, b, c];
            let lhs = v.norm(&v.dilate(&x, t).unwrap());
            prop_assert!((lhs - t * v.norm(&x)).abs() <= 1e-12 * (1.0 + lhs));
            prop_assert!(v.norm(&x) >= 0.0);
        }
    }
}
