//! On-disk cache of quasi-metric tables.
//!
//! File layout, all integers and floats little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `FCRHO\0\0\x01` |
//! | 32    | SHA-256 of the chart section |
//! | 4     | lattice points per axis |
//! | 4     | dimension `d` |
//! | 8     | lattice fraction |
//! | 8     | additive tolerance of each `ρ` |
//! | 8·n²  | `ρ(x_i, x_j)`, row-major, `n = per_axis^d` |
//!
//! Unreachable pairs are stored as `+∞`. A header mismatch is a cache miss.

use crate::scenario::{hex, Scenario};
use anyhow::{bail, Context, Result};
use fcalc_core::chart::FilteredChart;
use fcalc_core::metric::{quasi_metric, ReachOptions};
use rayon::prelude::*;
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 8] = b"FCRHO\0\0\x01";
const HEADER: usize = 8 + 32 + 4 + 4 + 8 + 8;

/// `ρ` on every ordered pair of a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoTable {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

impl RhoTable {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.points.len() + j]
    }

    pub fn compute(chart: &FilteredChart, per_axis: usize, fraction: f64, tol: f64) -> Result<Self> {
        let points = chart.domain().lattice(per_axis, fraction);
        let n = points.len();
        let opts = ReachOptions::default();
        let values = (0..n * n)
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k / n, k % n);
                quasi_metric(chart, &points[i], &points[j], tol, &opts)
            })
            .collect::<fcalc_core::Result<Vec<f64>>>()?;
        Ok(Self { points, values })
    }

    /// Largest `ρ(x,y) / (ρ(x,z) + ρ(z,y))` over finite triples with `x ≠ y`.
    pub fn quasi_triangle_constant(&self) -> f64 {
        let n = self.len();
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut best: f64 = 0.0;
                for j in 0..n {
                    let direct = self.get(i, j);
                    if i == j || !direct.is_finite() {
                        continue;
                    }
                    for k in 0..n {
                        let via = self.get(i, k) + self.get(k, j);
                        if via.is_finite() && via > 0.0 {
                            best = best.max(direct / via);
                        }
                    }
                }
                best
            })
            .reduce(|| 0.0, f64::max)
    }

    /// `max |ρ(x,y) − ρ(y,x)|` over finite pairs.
    pub fn asymmetry(&self) -> f64 {
        let n = self.len();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (self.get(i, j), self.get(j, i));
                if a.is_finite() && b.is_finite() {
                    worst = worst.max((a - b).abs());
                } else if a.is_finite() != b.is_finite() {
                    return f64::INFINITY;
                }
            }
        }
        worst
    }

    /// Fraction of ordered pairs with `ρ = ∞`.
    pub fn unreachable_fraction(&self) -> f64 {
        self.values.iter().filter(|v| !v.is_finite()).count() as f64 / self.values.len().max(1) as f64
    }
}

/// Whether a table came from disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Miss,
    Disabled,
}

fn header(chart_hash: &[u8; 32], per_axis: usize, d: usize, fraction: f64, tol: f64) -> Vec<u8> {
    let mut h = Vec::with_capacity(HEADER);
    h.extend_from_slice(MAGIC);
    h.extend_from_slice(chart_hash);
    h.extend_from_slice(&(per_axis as u32).to_le_bytes());
    h.extend_from_slice(&(d as u32).to_le_bytes());
    h.extend_from_slice(&fraction.to_le_bytes());
    h.extend_from_slice(&tol.to_le_bytes());
    h
}

pub fn cache_path(dir: &Path, chart_hash: &[u8; 32], per_axis: usize, fraction: f64, tol: f64) -> PathBuf {
    dir.join(format!("rho-{}-{per_axis}-{:016x}-{:016x}.bin", &hex(chart_hash)[..16], fraction.to_bits(), tol.to_bits()))
}

pub fn write_table(path: &Path, head: &[u8], table: &RhoTable) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut bytes = head.to_vec();
    bytes.reserve(8 * table.values.len());
    for v in &table.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    // Write then rename, so a concurrent reader never sees a torn file.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

pub fn read_table(path: &Path, head: &[u8], points: Vec<Vec<f64>>) -> Result<Option<RhoTable>> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e).with_context(|| format!("reading {}", path.display())),
    };
    if bytes.len() < HEADER || &bytes[..HEADER] != head {
        return Ok(None);
    }
    let n = points.len();
    if bytes.len() != HEADER + 8 * n * n {
        bail!("{}: truncated metric table", path.display());
    }
    let values = bytes[HEADER..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(Some(RhoTable { points, values }))
}

/// Loads the scenario's metric table from `dir`, computing and storing it
/// on a miss. With `dir = None` the table is always recomputed.
pub fn metric_table(scenario: &Scenario, chart: &FilteredChart, dir: Option<&Path>) -> Result<(RhoTable, CacheStatus)> {
    let s = &scenario.study;
    let hash = scenario.chart_hash();
    let head = header(&hash, s.metric_grid, chart.dim(), s.metric_fraction, s.metric_tol);
    let Some(dir) = dir else {
        return Ok((RhoTable::compute(chart, s.metric_grid, s.metric_fraction, s.metric_tol)?, CacheStatus::Disabled));
    };
    let path = cache_path(dir, &hash, s.metric_grid, s.metric_fraction, s.metric_tol);
    let points = chart.domain().lattice(s.metric_grid, s.metric_fraction);
    if let Some(t) = read_table(&path, &head, points)? {
        return Ok((t, CacheStatus::Hit));
    }
    let table = RhoTable::compute(chart, s.metric_grid, s.metric_fraction, s.metric_tol)?;
    write_table(&path, &head, &table)?;
    Ok((table, CacheStatus::Miss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::builtin;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut s = builtin("euclidean1d").unwrap();
        s.study.metric_grid = 5;
        let built = s.build().unwrap();
        let dir = std::env::temp_dir().join(format!("fcalc-cache-test-{}", std::process::id()));
        let (a, st) = metric_table(&s, &built.chart, Some(&dir)).unwrap();
        assert_eq!(st, CacheStatus::Miss);
        let (b, st) = metric_table(&s, &built.chart, Some(&dir)).unwrap();
        assert_eq!(st, CacheStatus::Hit);
        assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
        s.study.metric_tol = 1e-7;
        let (_, st) = metric_table(&s, &built.chart, Some(&dir)).unwrap();
        assert_eq!(st, CacheStatus::Miss);
        std::fs::remove_dir_all(&dir).ok();
        // Flat chart: ρ is the max-norm distance.
        for i in 0..a.len() {
            for j in 0..a.len() {
                assert!((a.get(i, j) - (a.points[i][0] - a.points[j][0]).abs()).abs() < 1e-8);
            }
        }
        assert!((a.quasi_triangle_constant() - 1.0).abs() < 1e-8);
    }
}
