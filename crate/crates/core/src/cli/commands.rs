//! The subcommands. Each writes CSV data and a `<command>.json` manifest.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::chaos::{ito_duality_check, product_formula_check, ItoCase, MAX_TWO_FACTOR_ORDER};
use crate::covariance::{self, check_psd, CovarianceKind, CovarianceModel};
use crate::error::Error;
use crate::factorize::{
    build_fredholm_kernel, factorization_residual, mercer_decompose, unitary_equivalence_check, FredholmKernel,
};
use crate::io::{write_ensemble, write_json, write_kernel, write_table};
use crate::noise::{self, CovarianceAccumulator, CovarianceEstimate};
use crate::numerics::{QuadratureRule, TimeGrid};
use crate::processes::{
    bridge_covariance, bridge_gram, euler_langevin, functional_values, integrated_truncation_error,
    langevin_kernel, orthogonal_bridge_kernel, series_expand, series_truncation_error, volterra_perturb,
    CanonicalBridge, OrthogonalBridge, PathEnsemble, VolterraKernel,
};
use crate::transfer::{ht_inner, StepFunction};

use super::config::RunConfig;
use super::spec::{build_kernel, parse_functionals, parse_ito_function, parse_model, parse_test_variable};
use super::CliError;

/// Absolute slack added to Monte Carlo comparisons, for entries whose standard error vanishes.
pub const ABS_FLOOR: f64 = 1e-12;

/// Offset between the seeds of the two bridge constructions, so their samples are independent.
pub const CANONICAL_SEED_OFFSET: u64 = 1;

/// Whether all checks of a command passed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub pass: bool,
}

struct Setup {
    model: CovarianceModel,
    grid: TimeGrid,
}

fn setup(cfg: &RunConfig) -> Result<Setup, CliError> {
    let rule = cfg.rule();
    let n = cfg.count("n");
    let (model, grid) = parse_model(cfg.get("model"), cfg.real("T"), |t| TimeGrid::with_rule(rule, t, n))?;
    Ok(Setup { model, grid })
}

fn kernel_named(cfg: &RunConfig, key: &str, s: &Setup) -> Result<FredholmKernel, CliError> {
    build_kernel(cfg.get(key), &s.model, &s.grid, cfg.real("trace_fraction"), cfg.real("tol_clip"))
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = PathBuf::from(cfg.get("out"));
    fs::create_dir_all(&dir).map_err(Error::from)?;
    Ok(dir)
}

fn manifest(cfg: &RunConfig, command: &str, tolerances: Value, pass: bool, mut extra: Value) -> Value {
    let mut m = json!({
        "command": command,
        "config_hash": cfg.hash(),
        "config": cfg.hashed_entries(),
        "seed": cfg.seed(),
        "tolerances": tolerances,
        "pass": pass,
    });
    if let (Some(m), Some(e)) = (m.as_object_mut(), extra.as_object_mut()) {
        m.append(e);
    }
    m
}

fn finish(dir: &Path, command: &str, value: &Value, pass: bool) -> Result<Outcome, CliError> {
    write_json(&dir.join(format!("{command}.json")), value)?;
    Ok(Outcome { pass })
}

fn n_paths(cfg: &RunConfig) -> Result<u64, CliError> {
    let p = cfg.count("paths") as u64;
    if p < 2 {
        return Err(CliError::Usage("`paths` must be at least 2".into()));
    }
    Ok(p)
}

/// `count` interior nodes spread evenly over the grid.
fn check_nodes(grid: &TimeGrid, count: usize) -> Vec<usize> {
    let last = grid.len() - 1;
    let mut idx: Vec<usize> = (1..=count)
        .map(|i| ((i * last) as f64 / (count + 1) as f64).round() as usize)
        .map(|i| i.clamp(0, last))
        .collect();
    idx.dedup();
    idx
}

fn sub_matrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])])
}

/// Covariance at `nodes`, the first `keep` paths, and the largest value of `post` over all blocks.
struct Summary {
    covariance: CovarianceEstimate,
    kept: DMatrix<f64>,
    worst: f64,
}

fn summarize<F, P>(n_paths: u64, rows: usize, nodes: &[usize], keep: usize, block: F, post: P) -> Result<Summary, CliError>
where
    F: Fn(Range<u64>) -> DMatrix<f64> + Sync + Send,
    P: Fn(&DMatrix<f64>) -> Result<f64, Error> + Sync + Send,
{
    let chunks = noise::run_chunked(n_paths, |r| -> Result<_, Error> {
        let start = r.start as usize;
        let paths = block(r);
        let mut acc = CovarianceAccumulator::new(nodes.len());
        let mut x = vec![0.0; nodes.len()];
        for col in paths.column_iter() {
            for (v, &i) in x.iter_mut().zip(nodes) {
                *v = col[i];
            }
            acc.push(&x);
        }
        let take = keep.saturating_sub(start).min(paths.ncols());
        Ok((acc, paths.columns(0, take).into_owned(), post(&paths)?))
    });
    let mut total = CovarianceAccumulator::new(nodes.len());
    let mut kept = Vec::new();
    let mut worst: f64 = 0.0;
    for c in chunks {
        let (acc, k, w) = c?;
        total.merge(&acc);
        if k.ncols() > 0 {
            kept.push(k);
        }
        worst = worst.max(w);
    }
    let cols: usize = kept.iter().map(|k| k.ncols()).sum();
    let mut all = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for k in kept {
        all.columns_mut(c, k.ncols()).copy_from(&k);
        c += k.ncols();
    }
    Ok(Summary {
        covariance: total.finish()?,
        kept: all,
        worst,
    })
}

/// Largest `|estimate - target| / se` and whether every entry lies within `z` standard errors.
fn compare(est: &CovarianceEstimate, target: &DMatrix<f64>, z: f64) -> (f64, bool) {
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for i in 0..target.nrows() {
        for j in 0..target.ncols() {
            let dev = (est.covariance[(i, j)] - target[(i, j)]).abs();
            let se = est.standard_error[(i, j)];
            pass &= dev <= z * se + ABS_FLOOR;
            if se > 0.0 {
                worst = worst.max(dev / se);
            }
        }
    }
    (worst, pass)
}

/// As [`compare`] for two independent estimates, with combined standard errors and an extra budget.
fn compare_two(a: &CovarianceEstimate, b: &CovarianceEstimate, z: f64, budget: f64) -> (f64, bool) {
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for i in 0..a.covariance.nrows() {
        for j in 0..a.covariance.ncols() {
            let dev = (a.covariance[(i, j)] - b.covariance[(i, j)]).abs();
            let se = a.standard_error[(i, j)].hypot(b.standard_error[(i, j)]);
            pass &= dev <= z * se + budget + ABS_FLOOR;
            if se > 0.0 {
                worst = worst.max(dev / se);
            }
        }
    }
    (worst, pass)
}

fn times_of(grid: &TimeGrid, idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| grid.node(i)).collect()
}

fn write_estimate(dir: &Path, stem: &str, grid: &TimeGrid, idx: &[usize], est: &CovarianceEstimate) -> Result<(), CliError> {
    let header: Vec<String> = times_of(grid, idx).iter().map(|t| t.to_string()).collect();
    let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> { m.row_iter().map(|r| r.iter().copied().collect()).collect() };
    write_table(&dir.join(format!("{stem}_covariance.csv")), &header, rows(&est.covariance))?;
    write_table(&dir.join(format!("{stem}_standard_error.csv")), &header, rows(&est.standard_error))?;
    Ok(())
}

fn export_paths(dir: &Path, stem: &str, grid: &TimeGrid, kept: DMatrix<f64>, seed: u64, provenance: &str) -> Result<(), CliError> {
    let e = PathEnsemble::new(grid.clone(), kept, seed, provenance)?;
    write_ensemble(&dir.join(format!("{stem}_paths.csv")), &e)?;
    Ok(())
}

pub fn factorize(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let s = setup(cfg)?;
    let dir = out_dir(cfg)?;
    let trace = covariance::trace(&s.model, &s.grid)?;
    if !trace.finite {
        return Err(Error::TraceCondition(format!(
            "∫_0^T R(t,t) dt is not finite or not stable under refinement ({} vs {})",
            trace.value, trace.refined_value
        ))
        .into());
    }
    let clip = cfg.real("tol_clip");
    let gram = covariance::gram(&s.model, &s.grid);
    let psd = check_psd(&gram, clip)?;
    let (kernel, rank, captured) = if cfg.get("kernel") == "mercer" {
        let d = mercer_decompose(&s.model, &s.grid, cfg.real("trace_fraction"), clip)?;
        (build_fredholm_kernel(&d), Some(d.rank()), Some(d.captured_trace_fraction()))
    } else {
        (kernel_named(cfg, "kernel", &s)?, None, None)
    };
    let residual = factorization_residual(&kernel, &s.model)?;
    let tol = cfg.real("tol_residual");
    let pass = psd.pass && residual.absolute <= tol;
    write_kernel(&dir.join("kernel.csv"), &kernel, Some(residual))?;
    let m = manifest(
        cfg,
        "factorize",
        json!({ "residual": tol, "clip": clip }),
        pass,
        json!({
            "model": s.model.name(),
            "parameters": s.model.parameters(),
            "kernel": kernel.provenance(),
            "trace": trace,
            "captured_trace_fraction": captured,
            "rank": rank,
            "residual": residual,
            "psd": psd,
        }),
    );
    finish(&dir, "factorize", &m, pass)
}

pub fn simulate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let s = setup(cfg)?;
    let dir = out_dir(cfg)?;
    let kernel = kernel_named(cfg, "kernel", &s)?;
    let paths = n_paths(cfg)?;
    let seed = cfg.seed();
    let z = cfg.real("tol_z");
    let nodes = check_nodes(&s.grid, cfg.count("check_nodes"));
    let loading = kernel.noise_loading();
    let sum = summarize(
        paths,
        s.grid.len(),
        &nodes,
        cfg.count("export_paths"),
        |r| noise::simulate_block(&loading, seed, r),
        |_| Ok(0.0),
    )?;
    let discrete = sub_matrix(&kernel.covariance(), &nodes);
    let model_gram = sub_matrix(&covariance::gram(&s.model, &s.grid), &nodes);
    let (z_kernel, pass) = compare(&sum.covariance, &discrete, z);
    let (z_model, model_pass) = compare(&sum.covariance, &model_gram, z);
    write_estimate(&dir, "simulate", &s.grid, &nodes, &sum.covariance)?;
    export_paths(&dir, "simulate", &s.grid, sum.kept, seed, kernel.provenance())?;
    let m = manifest(
        cfg,
        "simulate",
        json!({ "z": z, "abs_floor": ABS_FLOOR }),
        pass,
        json!({
            "kernel": kernel.provenance(),
            "n_paths": paths,
            "check_times": times_of(&s.grid, &nodes),
            "max_z_vs_kernel_law": z_kernel,
            "max_z_vs_model": z_model,
            "model_agreement": model_pass,
        }),
    );
    finish(&dir, "simulate", &m, pass)
}

pub fn bridge(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let s = setup(cfg)?;
    let dir = out_dir(cfg)?;
    let kernel = kernel_named(cfg, "kernel", &s)?;
    let paths = n_paths(cfg)?;
    let seed = cfg.seed();
    let z = cfg.real("tol_z");
    let tol_c = cfg.real("tol_constraint");
    let keep = cfg.count("export_paths");
    let g = parse_functionals(cfg.get("g"), s.grid.horizon())?;
    let spec = bridge_gram(&kernel, g)?;
    let nodes = check_nodes(&s.grid, cfg.count("check_nodes"));
    let exact = sub_matrix(&bridge_covariance(&kernel, &spec), &nodes);
    let method = cfg.get("method");
    let grid = &s.grid;
    let constraint = |p: &DMatrix<f64>| Ok(functional_values(&spec, grid, p)?.amax());
    let mut results = serde_json::Map::new();
    let mut pass = true;
    let mut estimates = Vec::new();

    write_kernel(&dir.join("bridge_kernel.csv"), &orthogonal_bridge_kernel(&kernel, &spec)?, None)?;
    if method != "canonical" {
        let ortho = OrthogonalBridge::new(&kernel, &spec);
        let loading = kernel.noise_loading();
        let sum = summarize(
            paths,
            grid.len(),
            &nodes,
            keep,
            |r| ortho.apply(&noise::simulate_block(&loading, seed, r)).expect("grid nodes"),
            constraint,
        )?;
        let (zmax, ok) = compare(&sum.covariance, &exact, z);
        let constraint_ok = sum.worst <= tol_c;
        pass &= ok && constraint_ok;
        results.insert(
            "orthogonal".into(),
            json!({ "max_z_vs_exact": zmax, "law_pass": ok, "max_constraint": sum.worst, "constraint_pass": constraint_ok, "seed": seed }),
        );
        write_estimate(&dir, "bridge_orthogonal", grid, &nodes, &sum.covariance)?;
        export_paths(&dir, "bridge_orthogonal", grid, sum.kept, seed, "orthogonal-bridge")?;
        estimates.push(sum.covariance);
    }
    if method != "orthogonal" {
        let can = CanonicalBridge::new(&kernel, &spec);
        let cseed = seed.wrapping_add(CANONICAL_SEED_OFFSET);
        let sum = summarize(paths, grid.len(), &nodes, keep, |r| can.block(cseed, r), constraint)?;
        let (zmax, ok) = compare(&sum.covariance, &exact, z);
        let constraint_ok = sum.worst <= tol_c;
        pass &= ok && constraint_ok;
        results.insert(
            "canonical".into(),
            json!({ "max_z_vs_exact": zmax, "law_pass": ok, "max_constraint": sum.worst, "constraint_pass": constraint_ok, "seed": cseed }),
        );
        write_estimate(&dir, "bridge_canonical", grid, &nodes, &sum.covariance)?;
        export_paths(&dir, "bridge_canonical", grid, sum.kept, cseed, "canonical-bridge")?;
        estimates.push(sum.covariance);
    }
    if let [a, b] = estimates.as_slice() {
        let (zmax, ok) = compare_two(a, b, z, 0.0);
        pass &= ok;
        results.insert("comparison".into(), json!({ "max_combined_z": zmax, "pass": ok }));
    }
    let m = manifest(
        cfg,
        "bridge",
        json!({ "z": z, "constraint": tol_c, "abs_floor": ABS_FLOOR }),
        pass,
        json!({
            "kernel": kernel.provenance(),
            "n_paths": paths,
            "functionals": spec.len(),
            "gram_condition": spec.condition(),
            "check_times": times_of(grid, &nodes),
            "results": results,
        }),
    );
    finish(&dir, "bridge", &m, pass)
}

pub fn langevin(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let s = setup(cfg)?;
    let dir = out_dir(cfg)?;
    if s.grid.rule() != QuadratureRule::Trapezoid {
        return Err(Error::InvalidArgument("the Euler cross-check needs a trapezoid grid".into()).into());
    }
    let driver = kernel_named(cfg, "kernel", &s)?;
    let theta = cfg.real("theta");
    let kt = langevin_kernel(&driver, theta)?;
    let paths = n_paths(cfg)?;
    let seed = cfg.seed();
    let z = cfg.real("tol_z");
    let grid = &s.grid;
    let mut nodes = check_nodes(grid, cfg.count("check_nodes"));
    nodes.push(grid.last());
    let keep = cfg.count("export_paths");
    let lk = kt.noise_loading();
    let ld = driver.noise_loading();
    let kernel_sum = summarize(paths, grid.len(), &nodes, keep, |r| noise::simulate_block(&lk, seed, r), |_| Ok(0.0))?;
    let euler_sum = summarize(
        paths,
        grid.len(),
        &nodes,
        keep,
        |r| euler_langevin(&noise::simulate_block(&ld, seed, r), grid, theta),
        |_| Ok(0.0),
    )?;
    let dt = grid.nodes().windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let budget = theta * dt * euler_sum.covariance.covariance.amax();
    let (z_euler, euler_ok) = compare_two(&kernel_sum.covariance, &euler_sum.covariance, z, budget);
    let (z_law, law_ok) = compare(&kernel_sum.covariance, &sub_matrix(&kt.covariance(), &nodes), z);
    let mut pass = euler_ok && law_ok;
    let mut extra = json!({
        "driver": driver.provenance(),
        "theta": theta,
        "n_paths": paths,
        "dt": dt,
        "check_times": times_of(grid, &nodes),
        "euler": { "max_combined_z": z_euler, "budget": budget, "pass": euler_ok },
        "kernel_law": { "max_z": z_law, "pass": law_ok },
    });
    if let CovarianceKind::BrownianMotion = s.model.kind() {
        let t = grid.horizon();
        let target = (1.0 - (-2.0 * theta * t).exp()) / (2.0 * theta);
        let k = nodes.len() - 1;
        let v = kernel_sum.covariance.covariance[(k, k)];
        let se = kernel_sum.covariance.standard_error[(k, k)];
        let ok = (v - target).abs() <= z * se + ABS_FLOOR;
        pass &= ok;
        extra["terminal_variance"] = json!({ "estimate": v, "standard_error": se, "closed_form": target, "pass": ok });
        let ou = CovarianceModel::ornstein_uhlenbeck(theta, 1.0, t)?;
        extra["residual_vs_ou"] = json!(factorization_residual(&kt, &ou)?);
    }
    write_kernel(&dir.join("langevin_kernel.csv"), &kt, None)?;
    write_estimate(&dir, "langevin", grid, &nodes, &kernel_sum.covariance)?;
    write_estimate(&dir, "langevin_euler", grid, &nodes, &euler_sum.covariance)?;
    export_paths(&dir, "langevin", grid, kernel_sum.kept, seed, kt.provenance())?;
    export_paths(&dir, "langevin_euler", grid, euler_sum.kept, seed, "euler")?;
    let m = manifest(cfg, "langevin", json!({ "z": z, "abs_floor": ABS_FLOOR, "euler_budget": budget }), pass, extra);
    finish(&dir, "langevin", &m, pass)
}

pub fn equiv(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let s = setup(cfg)?;
    let dir = out_dir(cfg)?;
    let a = kernel_named(cfg, "kernel", &s)?;
    let b = kernel_named(cfg, "other", &s)?;
    let tol = cfg.real("tol_equiv");
    let theta = cfg.real("theta");
    let report = unitary_equivalence_check(&a, &b, tol)?;
    let perturbed = volterra_perturb(&a, &VolterraKernel::exponential(&s.grid, theta))?;
    let mut langevin_gap = Value::Null;
    if theta > 0.0 {
        let l = langevin_kernel(&a, theta)?;
        let n = s.grid.len();
        let mut all: f64 = 0.0;
        let mut off: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let d = (l.value(i, j) - perturbed.value(i, j)).abs();
                all = all.max(d);
                if i != j && j != 0 {
                    off = off.max(d);
                }
            }
        }
        langevin_gap = json!({ "max_abs": all, "max_abs_off_jump_set": off });
    }
    write_kernel(&dir.join("perturbed_kernel.csv"), &perturbed, None)?;
    let m = manifest(
        cfg,
        "equiv",
        json!({ "equiv": tol }),
        report.pass,
        json!({
            "kernel": a.provenance(),
            "other": b.provenance(),
            "equivalence": report,
            "residual_kernel": factorization_residual(&a, &s.model)?,
            "residual_other": factorization_residual(&b, &s.model)?,
            "theta": theta,
            "perturbation_vs_langevin": langevin_gap,
        }),
    );
    finish(&dir, "equiv", &m, report.pass)
}

pub fn kl(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let s = setup(cfg)?;
    let dir = out_dir(cfg)?;
    let kernel = kernel_named(cfg, "kernel", &s)?;
    let basis = cfg.basis();
    let m = cfg.count("m");
    let expansion = series_expand(&kernel, basis, m)?;
    let grid = &s.grid;
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|j| format!("a{j}")));
    let rows = grid.nodes().iter().enumerate().map(|(i, &t)| {
        let mut r = vec![t];
        r.extend(expansion.table().row(i).iter());
        r
    });
    write_table(&dir.join("kl_functions.csv"), &header, rows)?;
    let mut errors = Vec::with_capacity(m + 1);
    for j in 0..=m {
        errors.push(integrated_truncation_error(&series_expand(&kernel, basis, j)?, &s.model)?);
    }
    write_table(
        &dir.join("kl_errors.csv"),
        &["m".to_string(), "integrated_error".to_string()],
        errors.iter().enumerate().map(|(j, &e)| vec![j as f64, e]),
    )?;
    let pointwise: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|&t| series_truncation_error(&expansion, &s.model, t))
        .collect::<Result<_, Error>>()?;
    write_table(
        &dir.join("kl_pointwise.csv"),
        &["t".to_string(), "error".to_string()],
        grid.nodes().iter().zip(&pointwise).map(|(&t, &e)| vec![t, e]),
    )?;
    let floor = -1e-10;
    let monotone = errors.windows(2).all(|w| w[1] <= w[0] + 1e-15);
    let nonnegative = pointwise.iter().all(|&e| e >= floor);
    let pass = monotone && nonnegative;
    let mut extra = json!({
        "kernel": kernel.provenance(),
        "basis": basis,
        "m": m,
        "integrated_error": errors[m],
        "monotone": monotone,
        "nonnegative": nonnegative,
    });
    if let CovarianceKind::BrownianMotion = s.model.kind() {
        let t = grid.horizon();
        let pi2 = std::f64::consts::PI.powi(2);
        let cut = 200_000;
        let head: f64 = (m + 1..cut).map(|k| 1.0 / ((k as f64 - 0.5).powi(2) * pi2)).sum();
        // remainder of the series beyond the cut, by the integral estimate
        let tail = t * t * (head + 1.0 / (pi2 * (cut as f64 - 1.0)));
        extra["analytic_tail"] = json!(tail);
    }
    let man = manifest(cfg, "kl", json!({ "pointwise_floor": floor }), pass, extra);
    finish(&dir, "kl", &man, pass)
}

pub fn ito_check(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let s = setup(cfg)?;
    let dir = out_dir(cfg)?;
    let kernel = kernel_named(cfg, "kernel", &s)?;
    let sup = s.grid.nodes().iter().map(|&t| s.model.variance(t)).fold(0.0, f64::max);
    let (f, envelope) = parse_ito_function(cfg.get("f"), sup)?;
    let g = parse_test_variable(cfg.get("G"), s.grid.horizon())?;
    let case = ItoCase {
        f: f.as_ref(),
        envelope,
        t: cfg.real("t"),
        g: &g,
    };
    let paths = n_paths(cfg)?;
    let report = ito_duality_check(&s.model, &kernel, &case, paths, cfg.seed())?;
    write_table(
        &dir.join("ito.csv"),
        &["lhs_mean", "rhs_mean", "lhs_se", "rhs_se", "combined_se", "n_paths"].map(String::from),
        [vec![
            report.lhs_mean,
            report.rhs_mean,
            report.lhs_se,
            report.rhs_se,
            report.combined_se,
            report.n_paths as f64,
        ]],
    )?;
    let pass = report.pass;
    let m = manifest(
        cfg,
        "ito-check",
        json!({ "z": report.z_threshold }),
        pass,
        json!({ "kernel": kernel.provenance(), "envelope": envelope, "report": report }),
    );
    finish(&dir, "ito-check", &m, pass)
}

/// `(f, g)` for the chaos check: `f = 1_τ` with `τ` the middle node.
fn chaos_pair(kernel: &FredholmKernel, pair: &str) -> Result<(StepFunction, StepFunction), Error> {
    let grid = kernel.grid();
    let horizon = grid.horizon();
    let f = StepFunction::on_grid(grid, vec![0.0, grid.node(grid.len() / 2), horizon], vec![1.0, 0.0])?;
    let whole = StepFunction::constant(horizon, 1.0);
    let g = match pair {
        "aligned" => f.scaled(-2.0),
        "orthogonal" => {
            let c = ht_inner(kernel, &whole, &f)? / ht_inner(kernel, &f, &f)?;
            StepFunction::linear_combination(1.0, &whole, -c, &f)?
        }
        _ => whole,
    };
    Ok((f, g))
}

pub fn chaos_check(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let s = setup(cfg)?;
    let dir = out_dir(cfg)?;
    let kernel = kernel_named(cfg, "kernel", &s)?;
    let max = cfg.count("max_order");
    if max > MAX_TWO_FACTOR_ORDER {
        return Err(Error::UnsupportedOrder {
            order: max,
            max: MAX_TWO_FACTOR_ORDER,
        }
        .into());
    }
    let tol = cfg.real("tol_product");
    let draws = cfg.count("draws") as u64;
    let (f, g) = chaos_pair(&kernel, cfg.get("pair"))?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut pass = true;
    for p in 0..=max {
        for q in 0..=max - p {
            let r = product_formula_check(&kernel, &f, &g, p, q, draws, cfg.seed(), tol)?;
            pass &= r.pass;
            rows.push(vec![p as f64, q as f64, r.inner, r.max_abs_deviation, if r.pass { 1.0 } else { 0.0 }]);
            reports.push(r);
        }
    }
    write_table(
        &dir.join("chaos.csv"),
        &["p", "q", "inner", "max_abs_deviation", "pass"].map(String::from),
        rows,
    )?;
    let worst = reports.iter().map(|r| r.max_abs_deviation).fold(0.0, f64::max);
    let m = manifest(
        cfg,
        "chaos-check",
        json!({ "product": tol }),
        pass,
        json!({
            "kernel": kernel.provenance(),
            "pair": cfg.get("pair"),
            "draws": draws,
            "max_abs_deviation": worst,
            "cases": reports,
        }),
    );
    finish(&dir, "chaos-check", &m, pass)
}
