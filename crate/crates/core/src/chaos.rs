//! Multiple Wiener integrals, the product formula and Monte Carlo checks of the
//! Itô formula through the divergence duality `E[G δ(u)] = E⟨DG, u⟩`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::covariance::CovarianceModel;
use crate::error::{invalid, Error, Result};
use crate::factorize::FredholmKernel;
use crate::noise::{self, Moments, NoiseVector};
use crate::numerics::{binomial, factorial, hermite, TimeGrid};
use crate::transfer::{dot, ht_inner, wiener_loading, GridFunction, StepFunction};

/// Highest total order handled by the two-factor integrals.
pub const MAX_TWO_FACTOR_ORDER: usize = 6;

/// `p! ‖h‖^p H_p(x / ‖h‖)`, the order-`p` chaos of a direction with norm `‖h‖` at `X(h) = x`.
pub fn hermite_chaos(p: usize, norm: f64, x: f64) -> f64 {
    match p {
        0 => 1.0,
        1 => x,
        _ => factorial(p) * norm.powi(p as i32) * hermite(p, x / norm),
    }
}

/// `I_p(h^{⊗p}) = p! ‖h‖^p H_p(X(h)/‖h‖)` for one noise draw.
pub fn mwi_rank_one(kernel: &FredholmKernel, h: &StepFunction, p: usize, noise: &NoiseVector) -> Result<f64> {
    if p == 0 {
        return Ok(1.0);
    }
    let norm = ht_inner(kernel, h, h)?.max(0.0).sqrt();
    if !(norm > 0.0) {
        return Err(Error::DegenerateIntegrand("‖h‖ = 0".into()));
    }
    let x = dot(&wiener_loading(kernel, h)?, noise.values());
    Ok(hermite_chaos(p, norm, x))
}

/// Gram–Schmidt data for a pair of directions `f, g`.
///
/// Writes `g = α f̂ + β ĝ` with `f̂ = f/‖f‖` and `ĝ ⊥ f̂` a unit vector.
#[derive(Clone, Debug)]
pub struct TwoFactor {
    loading_f: Vec<f64>,
    loading_g: Vec<f64>,
    norm_f: f64,
    norm_g: f64,
    alpha: f64,
    beta: f64,
    inner: f64,
}

impl TwoFactor {
    pub fn new(kernel: &FredholmKernel, f: &StepFunction, g: &StepFunction) -> Result<Self> {
        let ff = ht_inner(kernel, f, f)?;
        let fg = ht_inner(kernel, f, g)?;
        let gg = ht_inner(kernel, g, g)?;
        let norm_f = ff.max(0.0).sqrt();
        if !(norm_f > 0.0) {
            return Err(Error::DegenerateIntegrand("‖f‖ = 0".into()));
        }
        let alpha = fg / norm_f;
        let beta2 = gg - alpha * alpha;
        // orthogonal remainder below rounding is treated as aligned
        let beta = if beta2 > 1e-14 * gg.max(f64::MIN_POSITIVE) { beta2.sqrt() } else { 0.0 };
        Ok(Self {
            loading_f: wiener_loading(kernel, f)?,
            loading_g: wiener_loading(kernel, g)?,
            norm_f,
            norm_g: gg.max(0.0).sqrt(),
            alpha,
            beta,
            inner: fg,
        })
    }

    pub fn norm_f(&self) -> f64 {
        self.norm_f
    }

    pub fn norm_g(&self) -> f64 {
        self.norm_g
    }

    /// `⟨f, g⟩_{H_T}`.
    pub fn inner(&self) -> f64 {
        self.inner
    }

    /// `(X(f), X(g))` for one noise draw.
    pub fn integrals(&self, noise: &[f64]) -> (f64, f64) {
        (dot(&self.loading_f, noise), dot(&self.loading_g, noise))
    }

    /// `I_{a+b}(f^{⊗a} ⊗̃ g^{⊗b})` from `X(f)` and `X(g)`.
    pub fn evaluate(&self, a: usize, b: usize, xf: f64, xg: f64) -> Result<f64> {
        if a + b > MAX_TWO_FACTOR_ORDER {
            return Err(Error::UnsupportedOrder {
                order: a + b,
                max: MAX_TWO_FACTOR_ORDER,
            });
        }
        let u = xf / self.norm_f;
        let v = if self.beta > 0.0 { (xg - self.alpha * u) / self.beta } else { 0.0 };
        let mut s = 0.0;
        for k in 0..=b {
            let coeff = binomial(b, k) * self.alpha.powi((b - k) as i32) * self.beta.powi(k as i32);
            if coeff == 0.0 {
                continue;
            }
            let m = a + b - k;
            s += coeff * factorial(m) * hermite(m, u) * factorial(k) * hermite(k, v);
        }
        Ok(self.norm_f.powi(a as i32) * s)
    }
}

/// `I_{a+b}(f^{⊗a} ⊗̃ g^{⊗b})` for one noise draw.
pub fn mwi_two_factor(
    kernel: &FredholmKernel,
    f: &StepFunction,
    g: &StepFunction,
    a: usize,
    b: usize,
    noise: &NoiseVector,
) -> Result<f64> {
    if a + b > MAX_TWO_FACTOR_ORDER {
        return Err(Error::UnsupportedOrder {
            order: a + b,
            max: MAX_TWO_FACTOR_ORDER,
        });
    }
    let tf = TwoFactor::new(kernel, f, g)?;
    let (xf, xg) = tf.integrals(noise.values());
    tf.evaluate(a, b, xf, xg)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProductFormulaReport {
    pub p: usize,
    pub q: usize,
    pub inner: f64,
    pub n_draws: u64,
    pub max_abs_deviation: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Per-draw check of `I_p(f^{⊗p}) I_q(g^{⊗q}) = Σ_r r! C(p,r) C(q,r) ⟨f,g⟩^r I_{p+q-2r}(f^{⊗(p-r)} ⊗̃ g^{⊗(q-r)})`.
pub fn product_formula_check(
    kernel: &FredholmKernel,
    f: &StepFunction,
    g: &StepFunction,
    p: usize,
    q: usize,
    n_draws: u64,
    seed: u64,
    tol: f64,
) -> Result<ProductFormulaReport> {
    if p + q > MAX_TWO_FACTOR_ORDER {
        return Err(Error::UnsupportedOrder {
            order: p + q,
            max: MAX_TWO_FACTOR_ORDER,
        });
    }
    let tf = TwoFactor::new(kernel, f, g)?;
    if !(tf.norm_g > 0.0) {
        return Err(Error::DegenerateIntegrand("‖g‖ = 0".into()));
    }
    let len = kernel.grid().len();
    let chunks = noise::run_chunked(n_draws, |range| -> Result<f64> {
        let mut worst: f64 = 0.0;
        let mut xi = vec![0.0; len];
        for path in range {
            noise::fill_normals(seed, path, &mut xi);
            let (xf, xg) = tf.integrals(&xi);
            let lhs = hermite_chaos(p, tf.norm_f, xf) * hermite_chaos(q, tf.norm_g, xg);
            let mut rhs = 0.0;
            for r in 0..=p.min(q) {
                rhs += factorial(r)
                    * binomial(p, r)
                    * binomial(q, r)
                    * tf.inner.powi(r as i32)
                    * tf.evaluate(p - r, q - r, xf, xg)?;
            }
            worst = worst.max((lhs - rhs).abs());
        }
        Ok(worst)
    });
    let mut max_abs_deviation: f64 = 0.0;
    for c in chunks {
        max_abs_deviation = max_abs_deviation.max(c?);
    }
    Ok(ProductFormulaReport {
        p,
        q,
        inner: tf.inner,
        n_draws,
        max_abs_deviation,
        tol,
        pass: max_abs_deviation <= tol,
    })
}

/// A function `f(t, x)` with the derivatives used by the Itô formula.
pub trait ItoFunction: Send + Sync {
    fn value(&self, t: f64, x: f64) -> f64;
    /// `∂_x f`.
    fn d1(&self, t: f64, x: f64) -> f64;
    /// `∂_xx f`.
    fn d2(&self, t: f64, x: f64) -> f64;
    /// `∂_t f`.
    fn dt(&self, _t: f64, _x: f64) -> f64 {
        0.0
    }
    fn describe(&self) -> String;
}

/// `Σ_k a_k x^k`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn monomial(degree: usize) -> Self {
        let mut coeffs = vec![0.0; degree + 1];
        coeffs[degree] = 1.0;
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.iter().rposition(|&c| c != 0.0).unwrap_or(0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn derivative(&self) -> Self {
        Self {
            coeffs: self
                .coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| k as f64 * c)
                .collect(),
        }
    }

    /// An envelope `c e^{λx²}` with `λ = 1/(8 sup R)`.
    ///
    /// Uses `|x|^k e^{-λx²} ≤ (k/(2λe))^{k/2}` on each monomial of `f`, `f'` and `f''`.
    pub fn envelope(&self, sup_variance: f64) -> GrowthEnvelope {
        let lambda = 1.0 / (8.0 * sup_variance.max(f64::MIN_POSITIVE));
        let bound = |p: &Polynomial| -> f64 {
            p.coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    let m = if k == 0 {
                        1.0
                    } else {
                        (k as f64 / (2.0 * lambda * std::f64::consts::E)).powf(k as f64 / 2.0)
                    };
                    c.abs() * m
                })
                .sum()
        };
        let d1 = self.derivative();
        let d2 = d1.derivative();
        // each term's bound is attained, so leave room for rounding at the maximizer
        let c = bound(self).max(bound(&d1)).max(bound(&d2)).max(f64::MIN_POSITIVE) * (1.0 + 1e-9);
        GrowthEnvelope { c, lambda }
    }
}

impl ItoFunction for Polynomial {
    fn value(&self, _t: f64, x: f64) -> f64 {
        self.eval(x)
    }

    fn d1(&self, _t: f64, x: f64) -> f64 {
        self.derivative().eval(x)
    }

    fn d2(&self, _t: f64, x: f64) -> f64 {
        self.derivative().derivative().eval(x)
    }

    fn describe(&self) -> String {
        let terms: Vec<String> = self
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(k, c)| format!("{c}*x^{k}"))
            .collect();
        if terms.is_empty() {
            "0".into()
        } else {
            terms.join(" + ")
        }
    }
}

/// `f(t, x) = t^k p(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeScaledPolynomial {
    pub time_power: i32,
    pub poly: Polynomial,
}

impl ItoFunction for TimeScaledPolynomial {
    fn value(&self, t: f64, x: f64) -> f64 {
        t.powi(self.time_power) * self.poly.eval(x)
    }

    fn d1(&self, t: f64, x: f64) -> f64 {
        t.powi(self.time_power) * self.poly.derivative().eval(x)
    }

    fn d2(&self, t: f64, x: f64) -> f64 {
        t.powi(self.time_power) * self.poly.derivative().derivative().eval(x)
    }

    fn dt(&self, t: f64, x: f64) -> f64 {
        if self.time_power == 0 {
            0.0
        } else {
            self.time_power as f64 * t.powi(self.time_power - 1) * self.poly.eval(x)
        }
    }

    fn describe(&self) -> String {
        format!("t^{} * ({})", self.time_power, self.poly.describe())
    }
}

/// `f(x) = e^{a x²}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianExponential {
    pub a: f64,
}

impl ItoFunction for GaussianExponential {
    fn value(&self, _t: f64, x: f64) -> f64 {
        (self.a * x * x).exp()
    }

    fn d1(&self, _t: f64, x: f64) -> f64 {
        2.0 * self.a * x * (self.a * x * x).exp()
    }

    fn d2(&self, _t: f64, x: f64) -> f64 {
        (2.0 * self.a + 4.0 * self.a * self.a * x * x) * (self.a * x * x).exp()
    }

    fn describe(&self) -> String {
        format!("exp({}*x^2)", self.a)
    }
}

/// Bound `|f|, |f'|, |f''| ≤ c e^{λx²}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GrowthEnvelope {
    pub c: f64,
    pub lambda: f64,
}

impl GrowthEnvelope {
    pub fn new(c: f64, lambda: f64) -> Result<Self> {
        if !(c > 0.0) || !(lambda > 0.0) {
            return Err(invalid("growth envelope needs c > 0 and λ > 0"));
        }
        Ok(Self { c, lambda })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GrowthViolation {
    pub x: f64,
    pub t: f64,
    /// 0 for `f`, 1 for `f'`, 2 for `f''`.
    pub derivative: u8,
    pub value: f64,
    pub bound: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GrowthReport {
    pub c: f64,
    pub lambda: f64,
    /// `1 / (4 sup_t R(t, t))`; `λ` must lie strictly below it.
    pub lambda_bound: f64,
    pub lambda_ok: bool,
    pub samples: usize,
    pub first_violation: Option<GrowthViolation>,
    pub pass: bool,
}

fn sup_variance(model: &CovarianceModel, grid: &TimeGrid) -> f64 {
    grid.nodes().iter().map(|&t| model.variance(t)).fold(0.0, f64::max)
}

/// Checks `λ < 1/(4 sup R(t,t))` and spot-samples the envelope on `[-6σ, 6σ]`.
pub fn growth_check(
    f: &dyn ItoFunction,
    envelope: &GrowthEnvelope,
    model: &CovarianceModel,
    grid: &TimeGrid,
    samples: usize,
) -> GrowthReport {
    let sup = sup_variance(model, grid);
    let lambda_bound = if sup > 0.0 { 0.25 / sup } else { f64::INFINITY };
    let lambda_ok = envelope.lambda < lambda_bound;
    let sigma = sup.sqrt();
    let times = [0.0, 0.5 * grid.horizon(), grid.horizon()];
    let mut first_violation = None;
    let samples = samples.max(2);
    'outer: for i in 0..samples {
        let x = -6.0 * sigma + 12.0 * sigma * i as f64 / (samples - 1) as f64;
        let bound = envelope.c * (envelope.lambda * x * x).exp();
        for &t in &times {
            for (d, v) in [(0u8, f.value(t, x)), (1, f.d1(t, x)), (2, f.d2(t, x))] {
                if !(v.abs() <= bound) {
                    first_violation = Some(GrowthViolation {
                        x,
                        t,
                        derivative: d,
                        value: v,
                        bound,
                    });
                    break 'outer;
                }
            }
        }
    }
    GrowthReport {
        c: envelope.c,
        lambda: envelope.lambda,
        lambda_bound,
        lambda_ok,
        samples,
        first_violation,
        pass: lambda_ok && first_violation.is_none(),
    }
}

/// A polynomial `G(X_{τ_1}, …, X_{τ_k})` of path values at grid nodes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestVariable {
    anchors: Vec<f64>,
    /// `(coefficient, exponents)` with one exponent per anchor.
    terms: Vec<(f64, Vec<u32>)>,
}

impl TestVariable {
    pub fn new(anchors: Vec<f64>, terms: Vec<(f64, Vec<u32>)>) -> Result<Self> {
        if anchors.is_empty() {
            return Err(invalid("a test variable needs at least one anchor"));
        }
        if terms.iter().any(|(_, e)| e.len() != anchors.len()) {
            return Err(invalid("each term needs one exponent per anchor"));
        }
        Ok(Self { anchors, terms })
    }

    /// `X_τ^k`.
    pub fn power(anchor: f64, k: u32) -> Self {
        Self {
            anchors: vec![anchor],
            terms: vec![(1.0, vec![k])],
        }
    }

    /// `Π_i X_{τ_i}^{k_i}`.
    pub fn monomial(anchors: Vec<f64>, exponents: Vec<u32>) -> Result<Self> {
        Self::new(anchors, vec![(1.0, exponents)])
    }

    pub fn anchors(&self) -> &[f64] {
        &self.anchors
    }

    pub fn terms(&self) -> &[(f64, Vec<u32>)] {
        &self.terms
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(|(_, e)| e.iter().sum()).max().unwrap_or(0)
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, e)| c * e.iter().zip(x).map(|(&k, &xi)| xi.powi(k as i32)).product::<f64>())
            .sum()
    }

    /// `∂_i G`; the Malliavin derivative is `DG = Σ_i ∂_i G · 1_{τ_i}`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (0..self.anchors.len())
            .map(|i| {
                self.terms
                    .iter()
                    .filter(|(_, e)| e[i] > 0)
                    .map(|(c, e)| {
                        let mut v = c * e[i] as f64;
                        for (j, (&k, &xj)) in e.iter().zip(x).enumerate() {
                            let k = if j == i { k - 1 } else { k };
                            v *= xj.powi(k as i32);
                        }
                        v
                    })
                    .sum()
            })
            .collect()
    }

    pub fn describe(&self) -> String {
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(c, e)| {
                let factors: Vec<String> = self
                    .anchors
                    .iter()
                    .zip(e)
                    .filter(|(_, &k)| k > 0)
                    .map(|(a, k)| format!("X({a})^{k}"))
                    .collect();
                format!("{c}*{}", factors.join("*"))
            })
            .collect();
        parts.join(" + ")
    }
}

/// Everything the Itô formula needs from the model on a fixed grid.
struct ItoGrid {
    times: Vec<f64>,
    variance: Vec<f64>,
    head: Vec<Vec<f64>>,
}

impl ItoGrid {
    fn new(model: &CovarianceModel, grid: &TimeGrid) -> Self {
        Self {
            times: grid.nodes().to_vec(),
            variance: grid.nodes().iter().map(|&t| model.variance(t)).collect(),
            head: Vec::new(),
        }
    }

    fn with_head(mut self, grid: &TimeGrid, it: usize) -> Self {
        if self.head.len() <= it {
            self.head.resize(it + 1, Vec::new());
        }
        self.head[it] = grid.head_weights(it);
        self
    }

    /// `f(t, X_t) - f(0, X_0) - ½ ∫_0^t f''(s, X_s) dR(s,s) - ∫_0^t ∂_t f(s, X_s) ds`.
    fn lhs(&self, f: &dyn ItoFunction, path: &[f64], it: usize) -> f64 {
        let s = &self.times;
        let mut correction = 0.0;
        for j in 0..it {
            let a = f.d2(s[j], path[j]);
            let b = f.d2(s[j + 1], path[j + 1]);
            correction += 0.5 * (a + b) * (self.variance[j + 1] - self.variance[j]);
        }
        let mut drift = 0.0;
        if let Some(w) = self.head.get(it).filter(|w| !w.is_empty()) {
            for j in 0..=it {
                drift += w[j] * f.dt(s[j], path[j]);
            }
        }
        f.value(s[it], path[it]) - f.value(s[0], path[0]) - 0.5 * correction - drift
    }
}

fn require_bounded_variation(model: &CovarianceModel) -> Result<()> {
    if model.satisfies_bounded_variation() {
        Ok(())
    } else {
        Err(Error::UnsupportedModel(format!(
            "{} has no declared bounded-variation covariance",
            model.name()
        )))
    }
}

fn require_growth(
    f: &dyn ItoFunction,
    envelope: &GrowthEnvelope,
    model: &CovarianceModel,
    grid: &TimeGrid,
) -> Result<()> {
    let report = growth_check(f, envelope, model, grid, 1000);
    if report.pass {
        return Ok(());
    }
    Err(Error::GrowthConditionViolated(match report.first_violation {
        Some(v) => format!(
            "|f^({})({})| = {:e} exceeds {:e}",
            v.derivative, v.x, v.value.abs(), v.bound
        ),
        None => format!("λ = {} is not below {}", report.lambda, report.lambda_bound),
    }))
}

/// Itô formula residual without the divergence term, for one path on the grid.
pub fn ito_lhs(
    model: &CovarianceModel,
    grid: &TimeGrid,
    f: &dyn ItoFunction,
    envelope: &GrowthEnvelope,
    path: &GridFunction,
    t: f64,
) -> Result<f64> {
    require_growth(f, envelope, model, grid)?;
    if path.len() != grid.len() {
        return Err(invalid("path length does not match the grid"));
    }
    let it = grid.require_node(t)?;
    let ig = ItoGrid::new(model, grid).with_head(grid, it);
    Ok(ig.lhs(f, path.values(), it))
}

/// One case of the duality check.
pub struct ItoCase<'a> {
    pub f: &'a dyn ItoFunction,
    pub envelope: GrowthEnvelope,
    pub t: f64,
    pub g: &'a TestVariable,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ItoReport {
    pub f: String,
    pub g: String,
    pub t: f64,
    pub lhs_mean: f64,
    pub rhs_mean: f64,
    pub lhs_se: f64,
    pub rhs_se: f64,
    /// `sqrt(lhs_se² + rhs_se²)`.
    pub combined_se: f64,
    pub z_threshold: f64,
    pub n_paths: u64,
    pub seed: u64,
    pub pass: bool,
}

/// Significance threshold of the duality check, in combined standard errors.
pub const ITO_Z: f64 = 3.5;

/// Monte Carlo check of `E[G (f(X_t) - f(X_0) - ½∫f'' dR)] = E[Σ_i ∂_iG ∫_0^t f'(X_s) R(τ_i, ds)]`.
pub fn ito_duality_check(
    model: &CovarianceModel,
    kernel: &FredholmKernel,
    case: &ItoCase<'_>,
    n_paths: u64,
    seed: u64,
) -> Result<ItoReport> {
    Ok(ito_duality_batch(model, kernel, std::slice::from_ref(case), n_paths, seed)?.remove(0))
}

/// Several duality checks on one set of simulated paths.
pub fn ito_duality_batch(
    model: &CovarianceModel,
    kernel: &FredholmKernel,
    cases: &[ItoCase<'_>],
    n_paths: u64,
    seed: u64,
) -> Result<Vec<ItoReport>> {
    if n_paths < 2 {
        return Err(invalid("the duality check needs at least two paths"));
    }
    require_bounded_variation(model)?;
    let grid = kernel.grid();
    let mut ig = ItoGrid::new(model, grid);
    struct Prepared {
        it: usize,
        anchors: Vec<usize>,
        /// `R(τ_i, s_{j+1}) - R(τ_i, s_j)` for `j < it`.
        increments: Vec<Vec<f64>>,
    }
    let mut prepared = Vec::with_capacity(cases.len());
    for case in cases {
        require_growth(case.f, &case.envelope, model, grid)?;
        let it = grid.require_node(case.t)?;
        ig = ig.with_head(grid, it);
        let anchors: Vec<usize> = case
            .g
            .anchors()
            .iter()
            .map(|&a| grid.require_node(a))
            .collect::<Result<_>>()?;
        let s = grid.nodes();
        let increments = case
            .g
            .anchors()
            .iter()
            .map(|&tau| (0..it).map(|j| model.eval(tau, s[j + 1]) - model.eval(tau, s[j])).collect())
            .collect();
        prepared.push(Prepared {
            it,
            anchors,
            increments,
        });
    }

    let loading = kernel.noise_loading();
    let chunks = noise::run_chunked(n_paths, |range| {
        let paths: DMatrix<f64> = noise::simulate_block(&loading, seed, range);
        let mut acc = vec![(Moments::new(), Moments::new()); cases.len()];
        let mut xs = Vec::new();
        for col in paths.column_iter() {
            let path = col.as_slice();
            for ((case, prep), (ml, mr)) in cases.iter().zip(&prepared).zip(acc.iter_mut()) {
                xs.clear();
                xs.extend(prep.anchors.iter().map(|&i| path[i]));
                let gv = case.g.evaluate(&xs);
                let grad = case.g.gradient(&xs);
                ml.push(gv * ig.lhs(case.f, path, prep.it));
                let s = &ig.times;
                let mut rhs = 0.0;
                for (dg, inc) in grad.iter().zip(&prep.increments) {
                    if *dg == 0.0 {
                        continue;
                    }
                    let mut pairing = 0.0;
                    for j in 0..prep.it {
                        let a = case.f.d1(s[j], path[j]);
                        let b = case.f.d1(s[j + 1], path[j + 1]);
                        pairing += 0.5 * (a + b) * inc[j];
                    }
                    rhs += dg * pairing;
                }
                mr.push(rhs);
            }
        }
        acc
    });
    let mut total = vec![(Moments::new(), Moments::new()); cases.len()];
    for chunk in chunks {
        for ((tl, tr), (cl, cr)) in total.iter_mut().zip(&chunk) {
            tl.merge(cl);
            tr.merge(cr);
        }
    }
    Ok(cases
        .iter()
        .zip(total)
        .map(|(case, (l, r))| {
            let combined_se = (l.standard_error().powi(2) + r.standard_error().powi(2)).sqrt();
            ItoReport {
                f: case.f.describe(),
                g: case.g.describe(),
                t: case.t,
                lhs_mean: l.mean(),
                rhs_mean: r.mean(),
                lhs_se: l.standard_error(),
                rhs_se: r.standard_error(),
                combined_se,
                z_threshold: ITO_Z,
                n_paths,
                seed,
                pass: (l.mean() - r.mean()).abs() <= ITO_Z * combined_se,
            }
        })
        .collect())
}
