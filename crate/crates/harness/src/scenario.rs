//! Scenario definitions: a chart, a profile and the budgets of every study.

use anyhow::{anyhow, Context, Result};
use fcalc_core::chart::{BoxRegion, FilteredChart};
use fcalc_core::graded::GradedSpace;
use fcalc_core::poly::{PolyField, Polynomial};
use fcalc_core::profile::{Profile, ProfileKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::Arc;

/// Polynomial vector fields on a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub weights: Vec<u32>,
    /// One entry per field, each a list of `d` polynomial components in
    /// the variables `x1 … xd`.
    pub fields: Vec<Vec<String>>,
    pub domain_lo: Vec<f64>,
    pub domain_hi: Vec<f64>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSpec {
    pub kind: ProfileKind,
    pub coupling: f64,
    pub mean_zero: bool,
}

/// A closed-form value of `μ^{x,y}(1)` on `B_V(0, r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberReference {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub r: f64,
    pub value: f64,
}

/// Grids, budgets and parameter lists for the studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    /// Base point of windows, orthogonality and flow checks.
    pub center: Vec<f64>,
    pub hbar_list: Vec<f64>,
    pub lp_hbar_list: Vec<f64>,
    pub p_list: Vec<f64>,
    pub j_max: u32,

    pub metric_grid: usize,
    pub metric_fraction: f64,
    pub metric_tol: f64,
    pub coarea_nodes: usize,
    pub symmetry_pairs: usize,
    pub fiber_reference: Option<FiberReference>,

    pub condition_js: Vec<u32>,
    pub x_grid: usize,
    pub x_fraction: f64,
    pub y_nodes: usize,
    pub scan_grid: usize,
    pub pairs: usize,
    pub smoothness_trials: u32,
    pub v_nodes: usize,

    pub ao_hbar: f64,
    pub ao_js: Vec<u32>,
    pub ao_nodes: usize,
    pub hormander_pairs: usize,
    pub hormander_nodes: usize,
    pub hormander_j_max: u32,

    pub window_grid: usize,
    pub lp_trials: usize,
    pub sign_patterns: usize,
    pub delta_cells: f64,

    pub flow_radius: f64,
    pub flow_samples: usize,
    pub lipschitz_pairs: usize,
}

impl StudyConfig {
    pub fn defaults(d: usize) -> Self {
        let dyadic = |a: i32, b: i32| (a..=b).map(|k| 0.5f64.powi(k)).collect::<Vec<_>>();
        Self {
            center: vec![0.0; d],
            hbar_list: dyadic(1, 6),
            lp_hbar_list: dyadic(0, 6),
            p_list: vec![1.25, 1.5, 2.0, 3.0, 4.0],
            j_max: 10,
            metric_grid: if d == 1 { 16 } else { 6 },
            metric_fraction: 0.5,
            metric_tol: 1e-9,
            coarea_nodes: 32,
            symmetry_pairs: 20,
            fiber_reference: None,
            condition_js: vec![0, 1, 2],
            x_grid: 3,
            x_fraction: 0.5,
            y_nodes: 12,
            scan_grid: 16,
            pairs: 4,
            smoothness_trials: 5,
            v_nodes: 32,
            ao_hbar: 0.5,
            ao_js: (0..=8).collect(),
            ao_nodes: 16,
            hormander_pairs: 10,
            hormander_nodes: 8,
            hormander_j_max: 8,
            window_grid: if d == 1 { 64 } else { 32 },
            lp_trials: 64,
            sign_patterns: 8,
            delta_cells: 2.0,
            flow_radius: 0.4,
            flow_samples: 8,
            lipschitz_pairs: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub chart: ChartSpec,
    pub profile: ProfileSpec,
    pub study: StudyConfig,
}

/// A scenario with its chart and profile constructed and validated.
#[derive(Debug, Clone)]
pub struct Built {
    pub chart: Arc<FilteredChart>,
    pub profile: Profile,
}

pub const BUILTIN_NAMES: [&str; 4] = ["euclidean1d", "euclidean2d", "redundant_line", "grushin3"];

fn odd_profile() -> ProfileSpec {
    ProfileSpec { kind: ProfileKind::OddBumpHbar { beta: 0.5 }, coupling: 0.2, mean_zero: true }
}

fn fields(src: &[&[&str]]) -> Vec<Vec<String>> {
    src.iter().map(|f| f.iter().map(|c| c.to_string()).collect()).collect()
}

pub fn builtin(name: &str) -> Option<Scenario> {
    let unit = |d: usize| (vec![-1.0; d], vec![1.0; d]);
    let (chart, d) = match name {
        "euclidean1d" => {
            let (lo, hi) = unit(1);
            (ChartSpec { weights: vec![1], fields: fields(&[&["1"]]), domain_lo: lo, domain_hi: hi, epsilon: 1.0 }, 1)
        }
        "euclidean2d" => {
            let (lo, hi) = unit(2);
            let f = fields(&[&["1", "0"], &["0", "1"]]);
            (ChartSpec { weights: vec![1, 1], fields: f, domain_lo: lo, domain_hi: hi, epsilon: 1.0 }, 2)
        }
        "redundant_line" => {
            let (lo, hi) = unit(1);
            let f = fields(&[&["1"], &["1"]]);
            (ChartSpec { weights: vec![1, 1], fields: f, domain_lo: lo, domain_hi: hi, epsilon: 1.0 }, 1)
        }
        "grushin3" => {
            let (lo, hi) = unit(2);
            let f = fields(&[&["1", "0"], &["0", "x1"], &["0", "1"]]);
            (ChartSpec { weights: vec![1, 1, 2], fields: f, domain_lo: lo, domain_hi: hi, epsilon: 1.0 }, 2)
        }
        _ => return None,
    };
    let mut study = StudyConfig::defaults(d);
    match name {
        "redundant_line" => {
            study.fiber_reference = Some(FiberReference { x: vec![0.0], y: vec![0.5], r: 1.0, value: 1.5 });
        }
        "euclidean2d" => {
            study.ao_nodes = 10;
        }
        "grushin3" => {
            study.ao_nodes = 8;
            study.hormander_nodes = 6;
            study.hormander_j_max = 6;
        }
        _ => {}
    }
    Some(Scenario { name: name.to_string(), chart, profile: odd_profile(), study })
}

impl Scenario {
    pub fn dim(&self) -> usize {
        self.chart.domain_lo.len()
    }

    /// Builds the chart and profile and checks the spanning condition,
    /// the profile support and the mean-zero flag.
    pub fn build(&self) -> Result<Built> {
        let c = &self.chart;
        let d = c.domain_lo.len();
        if c.domain_hi.len() != d {
            return Err(anyhow!("chart.domain: lower and upper corners differ in length"));
        }
        let space = GradedSpace::new(c.weights.clone()).context("chart.weights")?;
        if c.fields.len() != space.dim() {
            return Err(anyhow!("chart.fields: expected {} fields (one per weight), got {}", space.dim(), c.fields.len()));
        }
        let polys = c
            .fields
            .iter()
            .enumerate()
            .map(|(k, comps)| {
                if comps.len() != d {
                    return Err(anyhow!("chart.fields: field {} has {} components, expected {d}", k + 1, comps.len()));
                }
                let p = comps.iter().map(|s| Polynomial::parse(s, d)).collect::<fcalc_core::Result<Vec<_>>>()?;
                Ok(PolyField::new(p)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let domain = BoxRegion::new(c.domain_lo.clone(), c.domain_hi.clone()).context("chart.domain")?;
        let chart = FilteredChart::new(space, polys, domain, c.epsilon).context("chart validation")?;
        let mut profile = Profile::builtin(chart.space(), self.profile.kind.clone(), self.profile.coupling)
            .context("profile")?;
        profile.mean_zero = self.profile.mean_zero;
        let xs = chart.domain().lattice(3, 0.5);
        profile.validate(chart.space(), &xs, 0.5).context("profile validation")?;
        let s = &self.study;
        if s.center.len() != d {
            return Err(anyhow!("study.center: expected {d} coordinates"));
        }
        if s.j_max < 3 {
            return Err(anyhow!("study.j_max must be at least 3"));
        }
        if s.hbar_list.iter().chain(&s.lp_hbar_list).any(|h| !(*h > 0.0 && *h <= 1.0)) {
            return Err(anyhow!("study: every ħ must lie in (0, 1]"));
        }
        if s.p_list.iter().any(|p| !(*p > 1.0)) {
            return Err(anyhow!("study.p_list: exponents must exceed 1"));
        }
        Ok(Built { chart: Arc::new(chart), profile })
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("scenario serialises");
        hex(&Sha256::digest(text.as_bytes()))
    }

    /// Hash of the chart section alone, which is all a metric table depends on.
    pub fn chart_hash(&self) -> [u8; 32] {
        let text = serde_json::to_string(&self.chart).expect("chart serialises");
        Sha256::digest(text.as_bytes()).into()
    }

    /// True for `N = d` with `X_k = ∂_k`.
    pub fn is_flat(&self) -> bool {
        let d = self.dim();
        self.chart.weights.len() == d
            && self.chart.fields.iter().enumerate().all(|(k, f)| {
                f.iter().enumerate().all(|(i, s)| s.trim() == if i == k { "1" } else { "0" })
            })
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Resolves a built-in name or reads a configuration file.
pub fn resolve(name_or_path: &str) -> Result<Scenario> {
    if let Some(s) = builtin(name_or_path) {
        return Ok(s);
    }
    let path = std::path::Path::new(name_or_path);
    if path.exists() {
        return crate::config::load_config(path);
    }
    Err(anyhow!(
        "unknown scenario `{name_or_path}` (built-ins: {}; or pass a configuration file)",
        BUILTIN_NAMES.join(", ")
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_build() {
        for name in BUILTIN_NAMES {
            let s = builtin(name).unwrap();
            s.build().unwrap();
        }
        let e = builtin("euclidean1d").unwrap();
        assert_eq!(e.chart.weights, vec![1]);
        assert!(e.is_flat());
        assert!(!builtin("redundant_line").unwrap().is_flat());
        assert!(!builtin("grushin3").unwrap().is_flat());
    }

    #[test]
    fn hash_tracks_content() {
        let a = builtin("euclidean1d").unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.study.lp_trials += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.chart_hash(), b.chart_hash());
    }
}
