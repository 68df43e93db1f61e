//! Parsers for the textual model, kernel, function and functional specs.

use std::collections::BTreeMap;
use std::path::Path;

use crate::chaos::{GaussianExponential, GrowthEnvelope, ItoFunction, Polynomial, TestVariable};
use crate::covariance::{CovarianceKind, CovarianceModel, TabulatedFunction};
use crate::error::Error;
use crate::factorize::{known_kernel, mercer_decompose, build_fredholm_kernel, FredholmKernel, KnownKernel};
use crate::io::read_covariance_csv;
use crate::numerics::TimeGrid;
use crate::transfer::StepFunction;

use super::CliError;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Splits `name:k=v,k=v` into the name and its parameters.
fn split_spec(spec: &str) -> Result<(&str, BTreeMap<&str, &str>), CliError> {
    let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let mut params = BTreeMap::new();
    for item in rest.split(',').filter(|s| !s.trim().is_empty()) {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| usage(format!("`{item}` in `{spec}` is not key=value")))?;
        params.insert(k.trim(), v.trim());
    }
    Ok((name.trim(), params))
}

fn number(params: &BTreeMap<&str, &str>, key: &str, default: Option<f64>) -> Result<f64, CliError> {
    match params.get(key) {
        Some(v) => v.parse().map_err(|_| usage(format!("parameter {key} = `{v}` is not a number"))),
        None => default.ok_or_else(|| usage(format!("missing parameter {key}"))),
    }
}

/// `t`, a constant, `t^p`, `sqrt(t)`, `exp(t)`, `sin(t)` or `cos(t)`.
pub fn parse_function(expr: &str) -> Result<Box<dyn Fn(f64) -> f64>, CliError> {
    let e = expr.trim();
    if let Ok(c) = e.parse::<f64>() {
        return Ok(Box::new(move |_| c));
    }
    Ok(match e {
        "t" => Box::new(|t| t),
        "sqrt(t)" | "sqrt" => Box::new(f64::sqrt),
        "exp(t)" | "exp" => Box::new(f64::exp),
        "sin(t)" | "sin" => Box::new(f64::sin),
        "cos(t)" | "cos" => Box::new(f64::cos),
        _ => {
            let p: f64 = e
                .strip_prefix("t^")
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| usage(format!("unknown function `{expr}`")))?;
            Box::new(move |t| t.powf(p))
        }
    })
}

/// Builds the model and its grid. `csv:PATH` models set the horizon from the file.
pub fn parse_model(spec: &str, horizon: f64, build_grid: impl Fn(f64) -> Result<TimeGrid, Error>) -> Result<(CovarianceModel, TimeGrid), CliError> {
    if spec.trim().is_empty() {
        return Err(usage("no model given"));
    }
    if let Some(path) = spec.strip_prefix("csv:") {
        let model = read_covariance_csv(Path::new(path))?;
        let grid = build_grid(model.horizon())?;
        return Ok((model, grid));
    }
    let (name, p) = split_spec(spec)?;
    let grid = build_grid(horizon)?;
    let model = match name {
        "bm" | "brownian-motion" => CovarianceModel::brownian_motion(horizon)?,
        "bb" | "brownian-bridge" => CovarianceModel::brownian_bridge(horizon)?,
        "fbm" | "fractional-brownian" => CovarianceModel::fractional_brownian(number(&p, "H", None)?, horizon)?,
        "ou" | "ornstein-uhlenbeck" => CovarianceModel::ornstein_uhlenbeck(
            number(&p, "theta", Some(1.0))?,
            number(&p, "sigma", Some(1.0))?,
            horizon,
        )?,
        "rank-one" => {
            let f = parse_function(p.get("f").copied().unwrap_or("t"))?;
            let fine = TimeGrid::uniform(horizon, 4 * grid.len().max(256))?;
            CovarianceModel::rank_one(TabulatedFunction::from_fn(&fine, f), horizon)?
        }
        other => return Err(usage(format!("unknown model `{other}`"))),
    };
    Ok((model, grid))
}

/// `mercer` or a closed-form kernel; short aliases are accepted.
pub fn build_kernel(
    name: &str,
    model: &CovarianceModel,
    grid: &TimeGrid,
    trace_fraction: f64,
    clip: f64,
) -> Result<FredholmKernel, CliError> {
    let canonical = match name.trim() {
        "mercer" => {
            let d = mercer_decompose(model, grid, trace_fraction, clip)?;
            return Ok(build_fredholm_kernel(&d));
        }
        "bm-indicator" => "brownian-motion-indicator",
        "bb-orthogonal" => "brownian-bridge-orthogonal",
        "bb-canonical" => "brownian-bridge-canonical-volterra",
        "rank-one" => "degenerate-rank-one",
        other => other,
    };
    let f = match model.kind() {
        CovarianceKind::RankOne { f } => Some(f.clone()),
        _ => None,
    };
    let known = KnownKernel::from_name(canonical, f).map_err(|e| usage(e.to_string()))?;
    Ok(known_kernel(&known, grid))
}

/// Itô integrand with a growth envelope valid for the given variance bound.
pub fn parse_ito_function(spec: &str, sup_variance: f64) -> Result<(Box<dyn ItoFunction>, GrowthEnvelope), CliError> {
    let (name, p) = split_spec(spec)?;
    if let Some(k) = name.strip_prefix('x').and_then(|k| k.parse::<usize>().ok()) {
        let poly = Polynomial::monomial(k);
        let env = poly.envelope(sup_variance);
        return Ok((Box::new(poly), env));
    }
    if name == "gauss" {
        let a = number(&p, "a", None)?;
        let bound = 0.25 / sup_variance;
        let delta = 0.5 * (bound - a.max(0.0));
        if !(delta > 0.0) {
            return Err(CliError::Failed(Error::GrowthConditionViolated(format!(
                "exp({a} x²) grows faster than the admissible exp({bound} x²)"
            ))));
        }
        let lambda = a.max(0.0) + delta;
        let e = std::f64::consts::E;
        let c = 1f64
            .max(2.0 * a.abs() / (2.0 * e * delta).sqrt())
            .max(2.0 * a.abs() + 4.0 * a * a / (e * delta));
        return Ok((Box::new(GaussianExponential { a }), GrowthEnvelope::new(c, lambda)?));
    }
    Err(usage(format!("unknown Itô function `{spec}`")))
}

fn parse_time(tok: &str, horizon: f64) -> Result<f64, CliError> {
    if tok == "T" {
        Ok(horizon)
    } else {
        tok.parse().map_err(|_| usage(format!("`{tok}` is not a time")))
    }
}

/// `xT<k>`, or a product such as `2*x(0.5)^2*x(T)`.
pub fn parse_test_variable(spec: &str, horizon: f64) -> Result<TestVariable, CliError> {
    let s = spec.trim();
    if let Some(k) = s.strip_prefix("xT").and_then(|k| k.parse::<u32>().ok()) {
        return Ok(TestVariable::power(horizon, k));
    }
    let mut coef = 1.0;
    let mut anchors: Vec<f64> = Vec::new();
    let mut exps: Vec<u32> = Vec::new();
    for factor in s.split('*').map(str::trim) {
        if let Ok(c) = factor.parse::<f64>() {
            coef *= c;
            continue;
        }
        let (base, k) = match factor.split_once('^') {
            Some((b, k)) => (b, k.parse::<u32>().map_err(|_| usage(format!("bad exponent in `{factor}`")))?),
            None => (factor, 1),
        };
        let tok = base
            .strip_prefix("x(")
            .and_then(|b| b.strip_suffix(')'))
            .ok_or_else(|| usage(format!("bad factor `{factor}` in `{spec}`")))?;
        let tau = parse_time(tok.trim(), horizon)?;
        match anchors.iter().position(|&a| a == tau) {
            Some(i) => exps[i] += k,
            None => {
                anchors.push(tau);
                exps.push(k);
            }
        }
    }
    if anchors.is_empty() {
        return Err(usage(format!("test variable `{spec}` has no path factor")));
    }
    Ok(TestVariable::new(anchors, vec![(coef, exps)])?)
}

/// Comma list of `const`, `ind:t` and `int:a:b`.
pub fn parse_functionals(spec: &str, horizon: f64) -> Result<Vec<StepFunction>, CliError> {
    let mut out = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let parts: Vec<&str> = item.split(':').collect();
        out.push(match parts.as_slice() {
            ["const"] => StepFunction::constant(horizon, 1.0),
            ["ind", t] => StepFunction::indicator(horizon, parse_time(t, horizon)?)?,
            ["int", a, b] => StepFunction::interval(horizon, parse_time(a, horizon)?, parse_time(b, horizon)?, 1.0)?,
            _ => return Err(usage(format!("unknown functional `{item}`"))),
        });
    }
    if out.is_empty() {
        return Err(usage("no bridge functionals given"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: usize) -> impl Fn(f64) -> Result<TimeGrid, Error> {
        move |t| TimeGrid::uniform(t, n)
    }

    #[test]
    fn model_specs() {
        let (m, g) = parse_model("fbm:H=0.75", 2.0, uniform(8)).unwrap();
        assert_eq!(m.name(), "fractional-brownian");
        assert_eq!(g.horizon(), 2.0);
        let (m, _) = parse_model("ou:theta=2,sigma=0.5", 1.0, uniform(8)).unwrap();
        assert_eq!(m.parameters()["theta"], 2.0);
        let (m, _) = parse_model("rank-one:f=t", 2.0, uniform(8)).unwrap();
        assert!((m.evaluate(1.0, 2.0).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(parse_model("", 1.0, uniform(8)), Err(CliError::Usage(_))));
        assert!(matches!(parse_model("fbm", 1.0, uniform(8)), Err(CliError::Usage(_))));
        assert!(matches!(parse_model("wiener", 1.0, uniform(8)), Err(CliError::Usage(_))));
        assert!(matches!(parse_model("fbm:H=1.5", 1.0, uniform(8)), Err(CliError::Failed(_))));
    }

    #[test]
    fn test_variable_specs() {
        let g = parse_test_variable("xT2", 1.0).unwrap();
        assert_eq!(g.evaluate(&[3.0]), 9.0);
        let g = parse_test_variable("2*x(0.5)^2*x(T)", 1.0).unwrap();
        assert_eq!(g.anchors(), &[0.5, 1.0]);
        assert_eq!(g.evaluate(&[2.0, 3.0]), 24.0);
        assert!(parse_test_variable("y(1)", 1.0).is_err());
    }

    #[test]
    fn functional_and_function_specs() {
        let g = parse_functionals("const, ind:0.5,int:0.25:T", 1.0).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g[2].value_at(0.5), 1.0);
        assert!(parse_functionals("", 1.0).is_err());
        assert_eq!(parse_function("t^2").unwrap()(3.0), 9.0);
        assert_eq!(parse_function("0.5").unwrap()(3.0), 0.5);
        assert!(parse_function("log").is_err());
    }

    #[test]
    fn gaussian_integrand_envelope_covers_the_function() {
        let model = CovarianceModel::brownian_motion(1.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 16).unwrap();
        let (f, env) = parse_ito_function("gauss:a=0.1", 1.0).unwrap();
        assert!(crate::chaos::growth_check(f.as_ref(), &env, &model, &grid, 2000).pass);
        assert!(matches!(
            parse_ito_function("gauss:a=0.3", 1.0),
            Err(CliError::Failed(Error::GrowthConditionViolated(_)))
        ));
    }
}
