//! Strict `key = value` scenario files.
//!
//! ```text
//! name = grushin-custom
//!
//! [chart]
//! weights = 1, 1, 2
//! fields  = 1, 0 ; 0, x1 ; 0, 1
//! domain  = -1, 1 ; -1, 1
//! epsilon = 1
//!
//! [profile]
//! kind = odd-bump-hbar
//! beta = 0.5
//! coupling = 0.2
//!
//! [study]
//! hbar_list = 0.5, 0.25, 0.125
//! ```
//!
//! Lists are comma separated; `;` separates the fields, the domain axes and
//! the parts of `fiber_reference = x ; y ; r ; value`. Every key of
//! [`StudyConfig`] may be overridden. Unknown or repeated keys are errors.

use crate::scenario::{ChartSpec, FiberReference, ProfileSpec, Scenario, StudyConfig};
use anyhow::{anyhow, Result};
use fcalc_core::profile::ProfileKind;
use serde_json::Value;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("{0} required")]
    Missing(String),
    #[error("line {line}: {key}: {msg}")]
    Value { line: usize, key: String, msg: String },
}

struct Entry {
    line: usize,
    value: String,
}

type Section = BTreeMap<String, Entry>;

fn split_sections(text: &str) -> Result<BTreeMap<String, Section>, ConfigError> {
    let mut out: BTreeMap<String, Section> = BTreeMap::new();
    out.insert(String::new(), Section::new());
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.split('#').next().unwrap_or("").trim();
        if s.is_empty() {
            continue;
        }
        if let Some(name) = s.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::Syntax { line, msg: format!("malformed section header `{s}`") })?
                .trim();
            if !matches!(name, "chart" | "profile" | "study") {
                return Err(ConfigError::Syntax { line, msg: format!("unknown section [{name}]") });
            }
            if out.contains_key(name) {
                return Err(ConfigError::Syntax { line, msg: format!("section [{name}] repeated") });
            }
            current = name.to_string();
            out.insert(current.clone(), Section::new());
            continue;
        }
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line, msg: format!("expected `key = value`, got `{s}`") })?;
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(ConfigError::Syntax { line, msg: "empty key".into() });
        }
        let section = out.get_mut(&current).expect("section inserted");
        if section.contains_key(&key) {
            let full = if current.is_empty() { key } else { format!("{current}.{key}") };
            return Err(ConfigError::Syntax { line, msg: format!("{full} repeated") });
        }
        section.insert(key, Entry { line, value: v.trim().to_string() });
    }
    Ok(out)
}

fn value_err(line: usize, key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Value { line, key: key.to_string(), msg: msg.into() }
}

fn floats(e: &Entry, key: &str) -> Result<Vec<f64>, ConfigError> {
    e.value
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| value_err(e.line, key, format!("`{}` is not a number", t.trim()))))
        .collect()
}

fn float(e: &Entry, key: &str) -> Result<f64, ConfigError> {
    e.value.trim().parse::<f64>().map_err(|_| value_err(e.line, key, format!("`{}` is not a number", e.value)))
}

struct Taker<'a> {
    name: &'static str,
    section: &'a mut Section,
}

impl Taker<'_> {
    fn take(&mut self, key: &str) -> Option<Entry> {
        self.section.remove(key)
    }

    fn require(&mut self, key: &str) -> Result<Entry, ConfigError> {
        self.take(key).ok_or_else(|| ConfigError::Missing(format!("{}.{key}", self.name)))
    }

    fn finish(self) -> Result<(), ConfigError> {
        match self.section.iter().next() {
            Some((k, e)) => Err(value_err(e.line, &format!("{}.{k}", self.name), "unknown key")),
            None => Ok(()),
        }
    }
}

fn parse_chart(section: &mut Section) -> Result<ChartSpec, ConfigError> {
    let mut t = Taker { name: "chart", section };
    let w = t.require("weights")?;
    let weights = w
        .value
        .split(',')
        .map(|s| s.trim().parse::<u32>().map_err(|_| value_err(w.line, "chart.weights", format!("`{}` is not a positive integer", s.trim()))))
        .collect::<Result<Vec<_>, _>>()?;
    if weights.is_empty() || weights.contains(&0) || weights.windows(2).any(|p| p[1] < p[0]) {
        return Err(value_err(w.line, "chart.weights", "weights must be positive and nondecreasing"));
    }
    let f = t.require("fields")?;
    let fields: Vec<Vec<String>> =
        f.value.split(';').map(|field| field.split(',').map(|c| c.trim().to_string()).collect()).collect();
    let d = fields.first().map(|c| c.len()).unwrap_or(0);
    if fields.len() != weights.len() {
        return Err(value_err(f.line, "chart.fields", format!("{} fields for {} weights", fields.len(), weights.len())));
    }
    if fields.iter().any(|c| c.len() != d || c.iter().any(|s| s.is_empty())) {
        return Err(value_err(f.line, "chart.fields", "every field needs the same number of nonempty components"));
    }
    for comps in &fields {
        for c in comps {
            fcalc_core::poly::Polynomial::parse(c, d).map_err(|e| value_err(f.line, "chart.fields", e.to_string()))?;
        }
    }
    let dm = t.require("domain")?;
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for axis in dm.value.split(';') {
        let v = floats(&Entry { line: dm.line, value: axis.to_string() }, "chart.domain")?;
        if v.len() != 2 || !(v[0] < v[1]) {
            return Err(value_err(dm.line, "chart.domain", format!("each axis needs `lo, hi` with lo < hi, got `{}`", axis.trim())));
        }
        lo.push(v[0]);
        hi.push(v[1]);
    }
    if lo.len() != d {
        return Err(value_err(dm.line, "chart.domain", format!("{} axes for fields with {d} components", lo.len())));
    }
    let e = t.require("epsilon")?;
    let epsilon = float(&e, "chart.epsilon")?;
    if !(epsilon > 0.0) {
        return Err(value_err(e.line, "chart.epsilon", "must be positive"));
    }
    t.finish()?;
    Ok(ChartSpec { weights, fields, domain_lo: lo, domain_hi: hi, epsilon })
}

fn parse_profile(section: &mut Section) -> Result<ProfileSpec, ConfigError> {
    let mut t = Taker { name: "profile", section };
    let k = t.require("kind")?;
    let param = |t: &mut Taker, key: &str| -> Result<f64, ConfigError> {
        let e = t.require(key)?;
        float(&e, &format!("profile.{key}"))
    };
    let kind = match k.value.as_str() {
        "zero" => ProfileKind::Zero,
        "bump" => ProfileKind::Bump,
        "odd-bump" => ProfileKind::OddBump,
        "odd-bump-hbar" => ProfileKind::OddBumpHbar { beta: param(&mut t, "beta")? },
        "gaussian" => ProfileKind::Gaussian { sigma: param(&mut t, "sigma")? },
        "cocycle" => {
            let order = param(&mut t, "order")?;
            let odd = t.require("odd")?;
            let odd = odd.value.parse::<bool>().map_err(|_| value_err(odd.line, "profile.odd", "expected true or false"))?;
            ProfileKind::Cocycle { order, odd }
        }
        other => return Err(value_err(k.line, "profile.kind", format!("unknown profile kind `{other}`"))),
    };
    let coupling = match t.take("coupling") {
        Some(e) => float(&e, "profile.coupling")?,
        None => 0.0,
    };
    let mean_zero = match t.take("mean_zero") {
        Some(e) => e.value.parse::<bool>().map_err(|_| value_err(e.line, "profile.mean_zero", "expected true or false"))?,
        None => kind.mean_zero(),
    };
    t.finish()?;
    Ok(ProfileSpec { kind, coupling, mean_zero })
}

fn parse_fiber_reference(e: &Entry, d: usize) -> Result<FiberReference, ConfigError> {
    let parts: Vec<&str> = e.value.split(';').collect();
    let key = "study.fiber_reference";
    if parts.len() != 4 {
        return Err(value_err(e.line, key, "expected `x ; y ; r ; value`"));
    }
    let part = |s: &str| floats(&Entry { line: e.line, value: s.to_string() }, key);
    let x = part(parts[0])?;
    let y = part(parts[1])?;
    if x.len() != d || y.len() != d {
        return Err(value_err(e.line, key, format!("points need {d} coordinates")));
    }
    let r = part(parts[2])?;
    let v = part(parts[3])?;
    if r.len() != 1 || v.len() != 1 {
        return Err(value_err(e.line, key, "radius and value are single numbers"));
    }
    Ok(FiberReference { x, y, r: r[0], value: v[0] })
}

/// Overrides fields of the defaults by reusing their JSON shape, so every
/// key keeps the type of its default.
fn parse_study(section: &mut Section, d: usize) -> Result<StudyConfig, ConfigError> {
    let mut base = serde_json::to_value(StudyConfig::defaults(d)).expect("study config serialises");
    let map = base.as_object_mut().expect("study config is an object");
    let keys: Vec<String> = section.keys().cloned().collect();
    for key in keys {
        let e = section.remove(&key).expect("key listed");
        let full = format!("study.{key}");
        if key == "fiber_reference" {
            let r = parse_fiber_reference(&e, d)?;
            map.insert(key, serde_json::to_value(r).expect("reference serialises"));
            continue;
        }
        let slot = map.get(&key).ok_or_else(|| value_err(e.line, &full, "unknown key"))?;
        let scalar = |s: &str, like: &Value| -> Result<Value, ConfigError> {
            let s = s.trim();
            if like.is_u64() {
                s.parse::<u64>()
                    .map(Value::from)
                    .map_err(|_| value_err(e.line, &full, format!("`{s}` is not a nonnegative integer")))
            } else {
                let v = s.parse::<f64>().map_err(|_| value_err(e.line, &full, format!("`{s}` is not a number")))?;
                if !v.is_finite() {
                    return Err(value_err(e.line, &full, "must be finite"));
                }
                Ok(Value::from(v))
            }
        };
        let new = match slot {
            Value::Array(items) => {
                let like = items.first().cloned().unwrap_or(Value::from(0.0));
                let parsed = e.value.split(',').map(|s| scalar(s, &like)).collect::<Result<Vec<_>, _>>()?;
                if parsed.is_empty() {
                    return Err(value_err(e.line, &full, "empty list"));
                }
                Value::Array(parsed)
            }
            other => scalar(&e.value, other)?,
        };
        map.insert(key, new);
    }
    serde_json::from_value(base).map_err(|err| ConfigError::Syntax { line: 0, msg: format!("study: {err}") })
}

pub fn parse_config(text: &str) -> Result<Scenario, ConfigError> {
    let mut sections = split_sections(text)?;
    let mut top = sections.remove("").unwrap_or_default();
    let name = top.remove("name").map(|e| e.value).unwrap_or_else(|| "custom".to_string());
    if let Some((k, e)) = top.iter().next() {
        return Err(value_err(e.line, k, "unknown top-level key"));
    }
    let mut chart_section = sections.remove("chart").ok_or_else(|| ConfigError::Missing("chart.weights".into()))?;
    let chart = parse_chart(&mut chart_section)?;
    let mut profile_section = sections.remove("profile").ok_or_else(|| ConfigError::Missing("profile.kind".into()))?;
    let profile = parse_profile(&mut profile_section)?;
    let d = chart.domain_lo.len();
    let study = match sections.remove("study") {
        Some(mut s) => parse_study(&mut s, d)?,
        None => StudyConfig::defaults(d),
    };
    Ok(Scenario { name, chart, profile, study })
}

/// Reads, parses and validates a scenario file.
pub fn load_config(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    let scenario = parse_config(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    scenario.build().map_err(|e| anyhow!("{}: {e:#}", path.display()))?;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::builtin;

    const GRUSHIN: &str = "name = grushin3
[chart]
weights = 1, 1, 2
fields = 1, 0 ; 0, x1 ; 0, 1
domain = -1, 1 ; -1, 1
epsilon = 1
[profile]
kind = odd-bump-hbar
beta = 0.5
coupling = 0.2
[study]
ao_nodes = 8
hormander_nodes = 6
hormander_j_max = 6
";

    #[test]
    fn file_reproduces_builtin() {
        let parsed = parse_config(GRUSHIN).unwrap();
        assert_eq!(parsed, builtin("grushin3").unwrap());
        assert_eq!(parsed.hash(), builtin("grushin3").unwrap().hash());
    }

    #[test]
    fn missing_weights_is_named() {
        let err = parse_config("[chart]\nfields = 1\ndomain = -1, 1\nepsilon = 1\n").unwrap_err();
        assert_eq!(err.to_string(), "chart.weights required");
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = GRUSHIN.replace("epsilon = 1", "epsilon = one");
        assert!(parse_config(&bad).unwrap_err().to_string().starts_with("line 6:"));
        let bad = GRUSHIN.replace("ao_nodes = 8", "ao_nodez = 8");
        let msg = parse_config(&bad).unwrap_err().to_string();
        assert!(msg.contains("line 12") && msg.contains("unknown key"), "{msg}");
        let bad = GRUSHIN.replace("weights = 1, 1, 2", "weights = 2, 1, 1");
        assert!(parse_config(&bad).unwrap_err().to_string().contains("nondecreasing"));
        assert!(parse_config("[chart\n").is_err());
        assert!(parse_config("name = a\nname = b\n").unwrap_err().to_string().contains("repeated"));
    }

    #[test]
    fn fiber_reference_round_trips() {
        let text = "[chart]\nweights = 1, 1\nfields = 1 ; 1\ndomain = -1, 1\nepsilon = 1\n\
                    [profile]\nkind = bump\n[study]\nfiber_reference = 0 ; 0.5 ; 1 ; 1.5\n";
        let s = parse_config(text).unwrap();
        let r = s.study.fiber_reference.unwrap();
        assert_eq!((r.x, r.y, r.r, r.value), (vec![0.0], vec![0.5], 1.0, 1.5));
    }
}
