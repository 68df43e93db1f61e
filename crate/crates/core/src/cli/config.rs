//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::numerics::QuadratureRule;
use crate::processes::Basis;

use super::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Real,
    Count,
    Seed,
    Text,
    Rule,
    Basis,
    Method,
    Pair,
}

/// `(key, default, kind, description)`.
const KEYS: &[(&str, &str, Kind, &str)] = &[
    ("model", "", Kind::Text, "covariance model: bm, bb, fbm:H=…, ou:theta=…,sigma=…, rank-one:f=…, csv:PATH (required)"),
    ("T", "1", Kind::Real, "horizon"),
    ("n", "256", Kind::Count, "grid size: intervals for trapezoid, nodes for gauss-legendre"),
    ("rule", "trapezoid", Kind::Rule, "quadrature rule: trapezoid or gauss-legendre"),
    ("seed", "42", Kind::Seed, "master seed"),
    ("paths", "10000", Kind::Count, "Monte Carlo paths"),
    ("out", "fredholm-out", Kind::Text, "output directory"),
    ("kernel", "mercer", Kind::Text, "kernel: mercer or a closed-form kernel name"),
    ("other", "mercer", Kind::Text, "second kernel for equiv"),
    ("trace_fraction", "1", Kind::Real, "captured trace fraction of the Mercer kernel"),
    ("theta", "1", Kind::Real, "Langevin / perturbation rate"),
    ("basis", "mercer-eigen", Kind::Basis, "series basis: mercer-eigen, trigonometric, haar"),
    ("m", "10", Kind::Count, "series rank"),
    ("g", "const", Kind::Text, "bridge functionals: comma list of const, ind:t, int:a:b"),
    ("method", "both", Kind::Method, "bridge construction: orthogonal, canonical, both"),
    ("f", "x2", Kind::Text, "Itô integrand: xK or gauss:a=…"),
    ("t", "0.5", Kind::Real, "Itô evaluation time"),
    ("G", "xT2", Kind::Text, "test variable: xT2, or products like x(0.5)^2*x(T)"),
    ("pair", "oblique", Kind::Pair, "chaos pair: aligned, orthogonal, oblique"),
    ("max_order", "6", Kind::Count, "largest p + q in chaos-check"),
    ("draws", "1000", Kind::Count, "noise draws in chaos-check"),
    ("export_paths", "100", Kind::Count, "paths written to CSV by simulating commands"),
    ("check_nodes", "5", Kind::Count, "interior nodes used for covariance checks"),
    ("tol_residual", "1e-10", Kind::Real, "factorization residual tolerance"),
    ("tol_clip", "1e-12", Kind::Real, "relative eigenvalue clipping tolerance"),
    ("tol_z", "3.5", Kind::Real, "Monte Carlo threshold in standard errors"),
    ("tol_product", "1e-10", Kind::Real, "per-draw product formula tolerance"),
    ("tol_constraint", "1e-10", Kind::Real, "per-path bridge constraint tolerance"),
    ("tol_equiv", "1e-6", Kind::Real, "kernel equivalence tolerance"),
];

/// Keys that do not affect results and are left out of the configuration hash.
const UNHASHED: &[&str] = &["out"];

/// Documented keys with their defaults and descriptions.
pub fn documented_keys() -> impl Iterator<Item = (&'static str, &'static str, &'static str)> {
    KEYS.iter().map(|&(k, d, _, doc)| (k, d, doc))
}

fn kind_of(key: &str) -> Option<Kind> {
    KEYS.iter().find(|e| e.0 == key).map(|e| e.2)
}

/// Shortest round-tripping spelling, in exponent form only when that is much shorter.
fn fmt_real(v: f64) -> String {
    let plain = v.to_string();
    let exp = format!("{v:e}");
    if plain.len() > exp.len() + 2 {
        exp
    } else {
        plain
    }
}

fn normalize(key: &str, kind: Kind, raw: &str) -> Result<String, CliError> {
    let raw = raw.trim();
    let bad = |what: &str| CliError::Usage(format!("`{key}` expects {what}, got `{raw}`"));
    Ok(match kind {
        Kind::Real => {
            let v: f64 = raw.parse().map_err(|_| bad("a number"))?;
            if !v.is_finite() {
                return Err(bad("a finite number"));
            }
            fmt_real(v)
        }
        Kind::Count => raw.parse::<usize>().map_err(|_| bad("a non-negative integer"))?.to_string(),
        Kind::Seed => raw.parse::<u64>().map_err(|_| bad("an unsigned integer"))?.to_string(),
        Kind::Text => raw.to_string(),
        Kind::Rule => QuadratureRule::from_str(raw).map_err(|_| bad("trapezoid or gauss-legendre"))?.to_string(),
        Kind::Basis => Basis::from_str(raw).map_err(|_| bad("a basis name"))?.to_string(),
        Kind::Method => match raw {
            "orthogonal" | "canonical" | "both" => raw.to_string(),
            _ => return Err(bad("orthogonal, canonical or both")),
        },
        Kind::Pair => match raw {
            "aligned" | "orthogonal" | "oblique" => raw.to_string(),
            _ => return Err(bad("aligned, orthogonal or oblique")),
        },
    })
}

/// Validated configuration; every key holds its normalized value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|&(k, d, _, _)| (k, d.to_string())).collect(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let (k, _, kind, _) = KEYS
            .iter()
            .find(|e| e.0 == key)
            .copied()
            .ok_or_else(|| CliError::Usage(format!("unknown configuration key `{key}`")))?;
        let v = normalize(k, kind, value)?;
        self.values.insert(k, v);
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", no + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn get(&self, key: &str) -> &str {
        debug_assert!(kind_of(key).is_some(), "unknown key {key}");
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn real(&self, key: &str) -> f64 {
        self.get(key).parse().expect("validated on insertion")
    }

    pub fn count(&self, key: &str) -> usize {
        self.get(key).parse().expect("validated on insertion")
    }

    pub fn seed(&self) -> u64 {
        self.get("seed").parse().expect("validated on insertion")
    }

    pub fn rule(&self) -> QuadratureRule {
        self.get("rule").parse().expect("validated on insertion")
    }

    pub fn basis(&self) -> Basis {
        self.get("basis").parse().expect("validated on insertion")
    }

    /// Sorted `key = value` lines.
    pub fn canonical(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of the canonical form without output-only keys.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.values {
            if !UNHASHED.contains(k) {
                h.update(format!("{k} = {v}\n").as_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Hashed keys and values, for embedding in manifests.
    pub fn hashed_entries(&self) -> BTreeMap<&'static str, String> {
        self.values
            .iter()
            .filter(|(k, _)| !UNHASHED.contains(k))
            .map(|(k, v)| (*k, v.clone()))
            .collect()
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}
