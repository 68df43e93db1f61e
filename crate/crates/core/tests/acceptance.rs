//! Acceptance run: one line per criterion, non-zero exit if any fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use fredholm::chaos::{
    ito_duality_batch, ito_duality_check, product_formula_check, ItoCase, Polynomial, TestVariable,
};
use fredholm::covariance::CovarianceModel;
use fredholm::factorize::{
    build_fredholm_kernel, factorization_residual, known_kernel, mercer_decompose, FredholmKernel, KnownKernel,
    DEFAULT_CLIP_TOL,
};
use fredholm::noise;
use fredholm::numerics::{indicator, TimeGrid};
use fredholm::processes::{
    bridge_gram, euler_langevin, integrated_truncation_error, langevin_kernel, series_expand,
    series_truncation_error, simulate_covariance, stream_covariance, volterra_perturb, Basis, CanonicalBridge,
    OrthogonalBridge, VolterraKernel,
};
use fredholm::transfer::{ht_inner, StepFunction};

struct Verdict {
    pass: bool,
    detail: String,
}

fn full_rank(model: &CovarianceModel, grid: &TimeGrid) -> FredholmKernel {
    build_fredholm_kernel(&mercer_decompose(model, grid, 1.0, DEFAULT_CLIP_TOL).unwrap())
}

fn catalog(horizon: f64) -> Vec<CovarianceModel> {
    vec![
        CovarianceModel::brownian_motion(horizon).unwrap(),
        CovarianceModel::brownian_bridge(horizon).unwrap(),
        CovarianceModel::ornstein_uhlenbeck(1.0, 1.0, horizon).unwrap(),
        CovarianceModel::fractional_brownian(0.75, horizon).unwrap(),
    ]
}

fn within_time(v: Verdict, start: Instant, limit: Option<Duration>) -> Verdict {
    let elapsed = start.elapsed();
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let limit_text = limit.map(|l| format!(" / {}s", l.as_secs())).unwrap_or_default();
    Verdict {
        pass: v.pass && in_time,
        detail: format!("{}; {:.1}s{}", v.detail, elapsed.as_secs_f64(), limit_text),
    }
}

fn factorization_exactness() -> Verdict {
    let grid = TimeGrid::uniform(1.0, 256).unwrap();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for model in catalog(1.0) {
        let r = factorization_residual(&full_rank(&model, &grid), &model).unwrap();
        worst = worst.max(r.absolute);
        parts.push(format!("{} {:.1e}", model.name(), r.absolute));
    }
    Verdict {
        pass: worst <= 1e-10,
        detail: format!("residuals {}", parts.join(", ")),
    }
}

fn mercer_eigenvalues() -> Verdict {
    let grid = TimeGrid::uniform(1.0, 512).unwrap();
    let model = CovarianceModel::brownian_motion(1.0).unwrap();
    let d = mercer_decompose(&model, &grid, 1.0, DEFAULT_CLIP_TOL).unwrap();
    let worst = (1..=10)
        .map(|k| {
            let scale = ((k as f64 - 0.5) * std::f64::consts::PI).powi(2);
            (d.eigenvalues()[k - 1] * scale - 1.0).abs()
        })
        .fold(0.0, f64::max);
    Verdict {
        pass: worst <= 1e-3,
        detail: format!("max |λ_k((k-½)π)² - 1| = {worst:.2e} for k ≤ 10"),
    }
}

fn transfer_isometry() -> Verdict {
    let grid = TimeGrid::uniform(1.0, 256).unwrap();
    let sub: Vec<f64> = (1..=16).map(|i| grid.node(16 * i)).collect();
    let mut models = catalog(1.0);
    let f = fredholm::covariance::TabulatedFunction::from_fn(&grid, |t| 1.0 + t * t);
    models.push(CovarianceModel::rank_one(f, 1.0).unwrap());
    let mut pass = true;
    let mut parts = Vec::new();
    for model in &models {
        let k = full_rank(model, &grid);
        let tol = 1e-8f64.max(factorization_residual(&k, model).unwrap().absolute * grid.horizon());
        let mut worst: f64 = 0.0;
        for &t in &sub {
            for &s in &sub {
                let a = StepFunction::indicator(1.0, t).unwrap();
                let b = StepFunction::indicator(1.0, s).unwrap();
                let d = (ht_inner(&k, &a, &b).unwrap() - model.evaluate(t, s).unwrap()).abs();
                worst = worst.max(d);
            }
        }
        pass &= worst <= tol;
        parts.push(format!("{} {:.1e}", model.name(), worst));
    }
    Verdict {
        pass,
        detail: format!("max deviation {}", parts.join(", ")),
    }
}

fn chaos_pairs(k: &FredholmKernel) -> Vec<(&'static str, StepFunction, StepFunction)> {
    let f = StepFunction::indicator(1.0, 0.5).unwrap();
    let whole = StepFunction::constant(1.0, 1.0);
    let c = ht_inner(k, &whole, &f).unwrap() / ht_inner(k, &f, &f).unwrap();
    let orth = StepFunction::linear_combination(1.0, &whole, -c, &f).unwrap();
    vec![
        ("aligned", f.clone(), f.scaled(-2.0)),
        ("orthogonal", f.clone(), orth),
        ("oblique", f, whole),
    ]
}

fn chaos_algebra() -> Verdict {
    let grid = TimeGrid::uniform(1.0, 128).unwrap();
    let k = full_rank(&CovarianceModel::brownian_motion(1.0).unwrap(), &grid);
    let mut pass = true;
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for (name, f, g) in chaos_pairs(&k) {
        for p in 0..=6 {
            for q in 0..=6 - p {
                let r = product_formula_check(&k, &f, &g, p, q, 1000, 7, 1e-10).unwrap();
                if !r.pass {
                    println!("    {name} p={p} q={q}: deviation {:.2e}", r.max_abs_deviation);
                }
                pass &= r.pass;
                worst = worst.max(r.max_abs_deviation);
                cases += 1;
            }
        }
    }
    Verdict {
        pass,
        detail: format!("{cases} cases × 1000 draws, max per-draw deviation {worst:.2e}"),
    }
}

fn ito_duality() -> Verdict {
    let grid = TimeGrid::uniform(1.0, 128).unwrap();
    let bm = CovarianceModel::brownian_motion(1.0).unwrap();
    let k = full_rank(&bm, &grid);
    let x2 = Polynomial::monomial(2);
    let g = TestVariable::power(1.0, 2);
    let case = ItoCase {
        f: &x2,
        envelope: x2.envelope(1.0),
        t: 0.5,
        g: &g,
    };
    let r = ito_duality_check(&bm, &k, &case, 1_000_000, 11).unwrap();
    let lhs_ok = (r.lhs_mean - 0.5).abs() <= 3.5 * r.lhs_se;
    let rhs_ok = (r.rhs_mean - 0.5).abs() <= 3.5 * r.rhs_se;
    let mut pass = lhs_ok && rhs_ok && r.pass;
    let mut detail = format!(
        "x², X_T²: lhs {:.4} ± {:.4}, rhs {:.4} ± {:.4}",
        r.lhs_mean, r.lhs_se, r.rhs_mean, r.rhs_se
    );

    let polys = [Polynomial::monomial(3), Polynomial::monomial(4)];
    let tests = [
        TestVariable::power(1.0, 1),
        TestVariable::power(1.0, 2),
        TestVariable::power(1.0, 3),
        TestVariable::monomial(vec![0.25, 0.75], vec![1, 2]).unwrap(),
    ];
    let mut checked = 0;
    let mut worst_z: f64 = 0.0;
    for model in catalog(1.0) {
        let kernel = full_rank(&model, &grid);
        let sup = grid.nodes().iter().map(|&t| model.variance(t)).fold(0.0, f64::max);
        let cases: Vec<ItoCase> = polys
            .iter()
            .flat_map(|p| {
                tests.iter().map(move |g| ItoCase {
                    f: p,
                    envelope: p.envelope(sup),
                    t: 0.5,
                    g,
                })
            })
            .collect();
        for r in ito_duality_batch(&model, &kernel, &cases, 200_000, 13).unwrap() {
            if r.combined_se > 0.0 {
                worst_z = worst_z.max((r.lhs_mean - r.rhs_mean).abs() / r.combined_se);
            }
            if !r.pass {
                println!("    {} f={} G={}: {} vs {} (se {})", model.name(), r.f, r.g, r.lhs_mean, r.rhs_mean, r.combined_se);
            }
            pass &= r.pass;
            checked += 1;
        }
    }
    detail.push_str(&format!("; {checked} further cases, max |z| {worst_z:.2}"));
    Verdict { pass, detail }
}

fn bridge_correctness() -> Verdict {
    let grid = TimeGrid::uniform(1.0, 256).unwrap();
    let k = full_rank(&CovarianceModel::brownian_motion(1.0).unwrap(), &grid);
    let spec = bridge_gram(&k, vec![StepFunction::constant(1.0, 1.0)]).unwrap();
    let nodes = [32, 64, 128, 192, 224];
    let ortho = OrthogonalBridge::new(&k, &spec);
    let loading = k.noise_loading();
    let n_paths = 200_000;

    let mut worst_constraint: f64 = 0.0;
    let constraint = noise::run_chunked(n_paths, |r| {
        let paths = ortho.apply(&noise::simulate_block(&loading, 17, r)).unwrap();
        paths.row(grid.last()).amax()
    });
    for c in constraint {
        worst_constraint = worst_constraint.max(c);
    }
    let a = stream_covariance(n_paths, &nodes, |r| ortho.apply(&noise::simulate_block(&loading, 17, r)).unwrap()).unwrap();
    let mut law_ok = true;
    let mut worst_z: f64 = 0.0;
    for (i, &p) in nodes.iter().enumerate() {
        for (j, &q) in nodes.iter().enumerate() {
            let (t, s) = (grid.node(p), grid.node(q));
            let d = (a.covariance[(i, j)] - (t.min(s) - t * s)).abs();
            law_ok &= d <= 3.5 * a.standard_error[(i, j)];
            worst_z = worst_z.max(d / a.standard_error[(i, j)]);
        }
    }
    let can = CanonicalBridge::new(&k, &spec);
    let b = stream_covariance(n_paths, &nodes, |r| can.block(18, r)).unwrap();
    let mut same_ok = true;
    let mut worst_pair: f64 = 0.0;
    for i in 0..nodes.len() {
        for j in 0..nodes.len() {
            let se = a.standard_error[(i, j)].hypot(b.standard_error[(i, j)]);
            let d = (a.covariance[(i, j)] - b.covariance[(i, j)]).abs();
            same_ok &= d <= 3.5 * se;
            worst_pair = worst_pair.max(d / se);
        }
    }
    Verdict {
        pass: law_ok && worst_constraint <= 1e-10 && same_ok,
        detail: format!(
            "min(t,s)-ts max |z| {worst_z:.2}; max |X^g(T)| {worst_constraint:.1e}; canonical vs orthogonal max |z| {worst_pair:.2}"
        ),
    }
}

fn langevin_cross_check() -> Verdict {
    let theta = 1.0;
    let grid = TimeGrid::uniform(1.0, 256).unwrap();
    let h = 1.0 / 256.0;
    let bm = known_kernel(&KnownKernel::BrownianMotionIndicator, &grid);
    let lk = langevin_kernel(&bm, theta).unwrap();
    let vk = volterra_perturb(&bm, &VolterraKernel::exponential(&grid, theta)).unwrap();
    let closed = |t: f64, u: f64| if u <= t { (-theta * (t - u)).exp() } else { 0.0 };
    let (mut off_closed, mut off_volterra, mut on_jump): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let (mut all_closed, mut all_volterra): (f64, f64) = (0.0, 0.0);
    for i in 0..grid.len() {
        for j in 0..grid.len() {
            let (t, u) = (grid.node(i), grid.node(j));
            let dc = (lk.value(i, j) - closed(t, u)).abs();
            let dv = (lk.value(i, j) - vk.value(i, j)).abs();
            all_closed = all_closed.max(dc);
            all_volterra = all_volterra.max(dv);
            // the kernels are defined almost everywhere; {u = t} and {u = 0} are their jump set
            if i == j || j == 0 {
                let mid = closed(t, u) * if i == j { indicator(u, t, 1.0) } else { 1.0 };
                on_jump = on_jump.max((lk.value(i, j) - mid).abs()).max(dv);
            } else {
                off_closed = off_closed.max(dc);
                off_volterra = off_volterra.max(dv);
            }
        }
    }
    let kernel_ok = off_closed <= 1e-6 && off_volterra <= 1e-6 && on_jump <= theta * h;

    let fine = TimeGrid::uniform(1.0, 512).unwrap();
    let driver = known_kernel(&KnownKernel::BrownianMotionIndicator, &fine);
    let kt = langevin_kernel(&driver, theta).unwrap();
    let nodes = [128, 256, 384, 512];
    let n_paths = 200_000;
    let kernel_sim = simulate_covariance(&kt, n_paths, 19, &nodes).unwrap();
    let target = (1.0 - (-2.0 * theta).exp()) / (2.0 * theta);
    let last = nodes.len() - 1;
    let var = kernel_sim.covariance[(last, last)];
    let var_se = kernel_sim.standard_error[(last, last)];
    let var_ok = (var - target).abs() <= 3.5 * var_se;

    let loading = driver.noise_loading();
    let euler = stream_covariance(n_paths, &nodes, |r| {
        euler_langevin(&noise::simulate_block(&loading, 19, r), &fine, theta)
    })
    .unwrap();
    let dt = 1.0 / 512.0;
    let budget = theta * dt * euler.covariance.amax();
    let mut euler_ok = true;
    let mut worst: f64 = 0.0;
    for i in 0..nodes.len() {
        for j in 0..nodes.len() {
            let se = kernel_sim.standard_error[(i, j)].hypot(euler.standard_error[(i, j)]);
            let d = (kernel_sim.covariance[(i, j)] - euler.covariance[(i, j)]).abs();
            euler_ok &= d <= 3.5 * se + budget;
            worst = worst.max(d);
        }
    }
    Verdict {
        pass: kernel_ok && var_ok && euler_ok,
        detail: format!(
            "off jump set: closed form {off_closed:.1e}, volterra {off_volterra:.1e}; on jump set {on_jump:.1e} (≤ θh = {:.1e}); \
             all entries: closed form {all_closed:.1e}, volterra {all_volterra:.1e}; \
             Var X_1 {var:.5} ± {var_se:.5} vs {target:.5}; euler max gap {worst:.1e} (budget {budget:.1e} + 3.5 se)",
            theta * h
        ),
    }
}

fn series_expansion() -> Verdict {
    let grid = TimeGrid::uniform(1.0, 256).unwrap();
    let mut full_worst: f64 = 0.0;
    for model in catalog(1.0) {
        let k = full_rank(&model, &grid);
        let e = series_expand(&k, Basis::MercerEigen, grid.len()).unwrap();
        for &t in grid.nodes() {
            full_worst = full_worst.max(series_truncation_error(&e, &model, t).unwrap().abs());
        }
    }
    let bm = CovarianceModel::brownian_motion(1.0).unwrap();
    let k = full_rank(&bm, &grid);
    let pi = std::f64::consts::PI;
    // Σ_{k≥1} ((k-½)π)^{-2} = ½
    let tail = 0.5 - (1..=10).map(|j| 1.0 / ((j as f64 - 0.5) * pi).powi(2)).sum::<f64>();
    let kl10 = integrated_truncation_error(&series_expand(&k, Basis::MercerEigen, 10).unwrap(), &bm).unwrap();
    let rel = (kl10 - tail).abs() / tail;
    let mut ordering_ok = true;
    let mut parts = Vec::new();
    for m in [1, 5, 10] {
        let kl = integrated_truncation_error(&series_expand(&k, Basis::MercerEigen, m).unwrap(), &bm).unwrap();
        let trig = integrated_truncation_error(&series_expand(&k, Basis::Trigonometric, m).unwrap(), &bm).unwrap();
        ordering_ok &= kl <= trig;
        parts.push(format!("m={m} {kl:.4} ≤ {trig:.4}"));
    }
    Verdict {
        pass: full_worst <= 1e-8 && rel <= 0.05 && ordering_ok,
        detail: format!(
            "full basis max error {full_worst:.1e}; m=10 error {kl10:.5} vs tail {tail:.5} ({:.2}%); {}",
            100.0 * rel,
            parts.join(", ")
        ),
    }
}

fn run_cli(args: &[&str], out: &Path, threads: usize) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_fredholm"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("FREDHOLM_THREADS", threads.to_string())
        .env_remove("FREDHOLM_OUT_DIR")
        .output()
        .expect("binary runs")
        .status
        .code()
        .unwrap_or(-1)
}

fn files_of(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

fn determinism() -> Verdict {
    let commands: [&[&str]; 8] = [
        &["factorize", "--model", "fbm:H=0.7", "--n", "64"],
        &["simulate", "--model", "ou:theta=2,sigma=1", "--n", "64", "--paths", "5000"],
        &["bridge", "--model", "bm", "--n", "64", "--g", "const,ind:0.5", "--paths", "5000"],
        &["langevin", "--model", "bm", "--n", "64", "--paths", "5000"],
        &["equiv", "--model", "bm", "--n", "32", "--other", "bm-indicator"],
        &["kl", "--model", "bb", "--n", "64", "--basis", "haar"],
        &["ito-check", "--model", "bm", "--n", "32", "--f", "x3", "--G", "x(0.5)*x(T)^2", "--paths", "20000"],
        &["chaos-check", "--model", "bm", "--n", "32", "--draws", "200"],
    ];
    let root = tempfile::tempdir().unwrap();
    let mut pass = true;
    let mut compared = 0;
    for args in commands {
        let a = root.path().join(format!("{}-1", args[0]));
        let b = root.path().join(format!("{}-4", args[0]));
        let ca = run_cli(args, &a, 1);
        let cb = run_cli(args, &b, 4);
        let fa = files_of(&a);
        let fb = files_of(&b);
        let same = ca == cb && !fa.is_empty() && fa == fb;
        if !same {
            println!("    {} differs between thread counts (exit {ca} vs {cb})", args[0]);
        }
        pass &= same;
        compared += fa.len();
    }
    Verdict {
        pass,
        detail: format!("8 commands, {compared} files byte-identical under 1 and 4 threads"),
    }
}

fn main() {
    type Criterion = (&'static str, fn() -> Verdict, Option<u64>);
    let criteria: [Criterion; 9] = [
        ("factorization exactness", factorization_exactness, Some(10)),
        ("Mercer eigenvalue accuracy", mercer_eigenvalues, Some(5)),
        ("transfer isometry", transfer_isometry, Some(5)),
        ("chaos algebra", chaos_algebra, Some(30)),
        ("Itô duality", ito_duality, Some(300)),
        ("bridge correctness", bridge_correctness, Some(120)),
        ("Langevin / equivalence cross-check", langevin_cross_check, Some(120)),
        ("series expansion", series_expansion, Some(30)),
        ("determinism", determinism, None),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.to_lowercase().contains(&f.to_lowercase())) {
            continue;
        }
        let start = Instant::now();
        let v = within_time(run(), start, limit.map(Duration::from_secs));
        println!(
            "criterion {} {}: {} ({})",
            i + 1,
            name,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        if !v.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
