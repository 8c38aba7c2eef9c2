//! Polynomial coefficient fields.
//!
//! Vector fields on a chart are stored as tuples of multivariate
//! polynomials. This keeps evaluation cheap inside the RK4 loops and gives
//! exact spatial derivatives for free.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::fmt;

/// A multivariate polynomial in `nvars` variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: Vec<(f64, Vec<u8>)>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Self { nvars, terms: Vec::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        Self::from_terms(nvars, vec![(c, vec![0; nvars])])
    }

    /// The coordinate function `x_k` (zero-based).
    pub fn variable(nvars: usize, k: usize) -> Self {
        let mut e = vec![0; nvars];
        e[k] = 1;
        Self::from_terms(nvars, vec![(1.0, e)])
    }

    /// Builds a polynomial from `(coefficient, exponents)` pairs, merging
    /// repeated monomials and dropping zero coefficients.
    pub fn from_terms(nvars: usize, terms: Vec<(f64, Vec<u8>)>) -> Self {
        let mut map: BTreeMap<Vec<u8>, f64> = BTreeMap::new();
        for (c, e) in terms {
            assert_eq!(e.len(), nvars, "exponent vector length");
            *map.entry(e).or_insert(0.0) += c;
        }
        let terms = map.into_iter().filter(|(_, c)| *c != 0.0).map(|(e, c)| (c, e)).collect();
        Self { nvars, terms }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> &[(f64, Vec<u8>)] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|(_, e)| e.iter().map(|&k| k as u32).sum())
            .max()
            .unwrap_or(0)
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (c, e) in &self.terms {
            let mut m = *c;
            for (xi, &k) in x.iter().zip(e) {
                m *= match k {
                    0 => 1.0,
                    1 => *xi,
                    2 => xi * xi,
                    _ => xi.powi(k as i32),
                };
            }
            acc += m;
        }
        acc
    }

    /// Partial derivative with respect to variable `k`.
    pub fn partial(&self, k: usize) -> Self {
        let terms = self
            .terms
            .iter()
            .filter(|(_, e)| e[k] > 0)
            .map(|(c, e)| {
                let mut e2 = e.clone();
                e2[k] -= 1;
                (c * e[k] as f64, e2)
            })
            .collect();
        Self::from_terms(self.nvars, terms)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::from_terms(self.nvars, self.terms.iter().map(|(c, e)| (c * s, e.clone())).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut t = self.terms.clone();
        t.extend(other.terms.iter().cloned());
        Self::from_terms(self.nvars, t)
    }

    /// Parses sums of monomials such as `1 - 2*x1^2*x2 + 0.5*x3`.
    /// Variables are named `x1 … x{nvars}`.
    pub fn parse(src: &str, nvars: usize) -> Result<Self> {
        let err = |m: &str| Error::InvalidArgument(format!("polynomial `{src}`: {m}"));
        let s: String = src.chars().filter(|c| !c.is_whitespace()).collect();
        if s.is_empty() {
            return Err(err("empty expression"));
        }
        // Split into signed terms, respecting exponent markers like `1e-3`.
        let mut pieces: Vec<(f64, String)> = Vec::new();
        let mut sign = 1.0;
        let mut cur = String::new();
        let chars: Vec<char> = s.chars().collect();
        for (i, &ch) in chars.iter().enumerate() {
            let exponent_sign = i > 1 && matches!(chars[i - 1], 'e' | 'E') && chars[i - 2].is_ascii_digit();
            if (ch == '+' || ch == '-') && !exponent_sign {
                if !cur.is_empty() {
                    pieces.push((sign, std::mem::take(&mut cur)));
                    sign = 1.0;
                }
                if ch == '-' {
                    sign = -sign;
                }
            } else {
                cur.push(ch);
            }
        }
        if cur.is_empty() {
            return Err(err("trailing operator"));
        }
        pieces.push((sign, cur));

        let mut terms = Vec::new();
        for (sg, body) in pieces {
            let mut coeff = sg;
            let mut exps = vec![0u8; nvars];
            for factor in body.split('*') {
                if factor.is_empty() {
                    return Err(err("empty factor"));
                }
                if let Some(rest) = factor.strip_prefix('x') {
                    let (var, pow) = match rest.split_once('^') {
                        Some((v, p)) => (v, p.parse::<u8>().map_err(|_| err("bad exponent"))?),
                        None => (rest, 1),
                    };
                    let idx: usize = var.parse().map_err(|_| err("bad variable index"))?;
                    if idx == 0 || idx > nvars {
                        return Err(err("variable index out of range"));
                    }
                    exps[idx - 1] = exps[idx - 1].checked_add(pow).ok_or_else(|| err("exponent overflow"))?;
                } else {
                    let c: f64 = factor.parse().map_err(|_| err(&format!("cannot parse `{factor}`")))?;
                    coeff *= c;
                }
            }
            terms.push((coeff, exps));
        }
        Ok(Self::from_terms(nvars, terms))
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (c, e)) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, "{}", if *c < 0.0 { " - " } else { " + " })?;
            } else if *c < 0.0 {
                write!(f, "-")?;
            }
            write!(f, "{}", c.abs())?;
            for (k, &p) in e.iter().enumerate() {
                match p {
                    0 => {}
                    1 => write!(f, "*x{}", k + 1)?,
                    _ => write!(f, "*x{}^{}", k + 1, p)?,
                }
            }
        }
        Ok(())
    }
}

/// A polynomial vector field on `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyField {
    comps: Vec<Polynomial>,
}

impl PolyField {
    pub fn new(comps: Vec<Polynomial>) -> Result<Self> {
        let d = comps.len();
        if d == 0 || comps.iter().any(|p| p.nvars() != d) {
            return Err(Error::InvalidArgument("vector field components must be polynomials in d variables".into()));
        }
        Ok(Self { comps })
    }

    /// Constant field equal to the `k`-th coordinate vector.
    pub fn coordinate(d: usize, k: usize) -> Self {
        let comps = (0..d)
            .map(|i| if i == k { Polynomial::constant(d, 1.0) } else { Polynomial::zero(d) })
            .collect();
        Self { comps }
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.comps
    }

    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.comps) {
            *o = p.eval(x);
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out);
        out
    }

    /// Spatial derivative `∂X_i/∂x_k` as a field of polynomials, indexed `[i][k]`.
    pub fn derivative(&self) -> Vec<Vec<Polynomial>> {
        self.comps.iter().map(|p| (0..self.dim()).map(|k| p.partial(k)).collect()).collect()
    }

    /// `Σ_j c_j F_j` for fields of a common dimension.
    pub fn combine(fields: &[PolyField], coeffs: &[f64]) -> Self {
        let d = fields[0].dim();
        let comps = (0..d)
            .map(|i| {
                let mut terms = Vec::new();
                for (f, c) in fields.iter().zip(coeffs) {
                    if *c != 0.0 {
                        terms.extend(f.comps[i].terms.iter().map(|(a, e)| (a * c, e.clone())));
                    }
                }
                Polynomial::from_terms(d, terms)
            })
            .collect();
        Self { comps }
    }
}
