//! Step functions, the adjoint associated operator `K*` and Wiener integrals.

use serde::Serialize;

use crate::covariance::CovarianceModel;
use crate::error::{invalid, Error, Result};
use crate::factorize::FredholmKernel;
use crate::numerics::{bv_stieltjes_integrate, indicator, TimeGrid};

/// A piecewise-constant function on `[0, T)`.
///
/// Piece `k` takes the value `values[k]` on `[breakpoints[k], breakpoints[k + 1])`;
/// the first breakpoint is `0` and the last is `T`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepFunction {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 || values.len() + 1 != breakpoints.len() {
            return Err(invalid("a step function needs m + 1 breakpoints for m pieces"));
        }
        if breakpoints[0] != 0.0 {
            return Err(invalid("the first breakpoint must be 0"));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("breakpoints must be strictly increasing"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("step values must be finite"));
        }
        Ok(Self {
            breakpoints,
            values,
        })
    }

    /// Step function whose breakpoints all lie on `grid`.
    pub fn on_grid(grid: &TimeGrid, breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let f = Self::new(breakpoints, values)?;
        f.check_grid(grid)?;
        Ok(f)
    }

    pub fn zero(horizon: f64) -> Self {
        Self {
            breakpoints: vec![0.0, horizon],
            values: vec![0.0],
        }
    }

    pub fn constant(horizon: f64, c: f64) -> Self {
        Self {
            breakpoints: vec![0.0, horizon],
            values: vec![c],
        }
    }

    /// `1_t = 1_{[0, t)}`.
    pub fn indicator(horizon: f64, t: f64) -> Result<Self> {
        Self::interval(horizon, 0.0, t, 1.0)
    }

    /// `c · 1_{[a, b)}`.
    pub fn interval(horizon: f64, a: f64, b: f64, c: f64) -> Result<Self> {
        if !(0.0 <= a && a <= b && b <= horizon) {
            return Err(invalid(format!("interval [{a}, {b}) not inside [0, {horizon}]")));
        }
        let mut bp = vec![0.0];
        let mut vals = Vec::new();
        if a > 0.0 {
            bp.push(a);
            vals.push(0.0);
        }
        if b > a {
            if b < horizon {
                bp.push(b);
                vals.push(c);
            } else {
                vals.push(c);
            }
        }
        if *bp.last().unwrap() < horizon {
            bp.push(horizon);
            if vals.len() + 1 < bp.len() {
                vals.push(0.0);
            }
        }
        Self::new(bp, vals)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn horizon(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    /// `f = Σ_k c_k 1_{τ_k}` as pairs `(τ_k, c_k)` with `τ_k` the breakpoints.
    pub fn indicator_expansion(&self) -> Vec<(f64, f64)> {
        let m = self.values.len();
        (0..=m)
            .map(|k| {
                let left = if k > 0 { self.values[k - 1] } else { 0.0 };
                let right = if k < m { self.values[k] } else { 0.0 };
                (self.breakpoints[k], left - right)
            })
            // 1_0 vanishes identically
            .filter(|&(tau, c)| c != 0.0 && tau > 0.0)
            .collect()
    }

    /// `a f + b g` on the union of breakpoints.
    pub fn linear_combination(a: f64, f: &StepFunction, b: f64, g: &StepFunction) -> Result<Self> {
        if (f.horizon() - g.horizon()).abs() > 1e-12 * f.horizon() {
            return Err(invalid("step functions have different horizons"));
        }
        let mut bp: Vec<f64> = f.breakpoints.iter().chain(&g.breakpoints).copied().collect();
        bp.sort_by(f64::total_cmp);
        bp.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * f.horizon());
        let values = bp
            .windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                a * f.value_at(mid) + b * g.value_at(mid)
            })
            .collect();
        Self::new(bp, values)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            breakpoints: self.breakpoints.clone(),
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    /// Value at a point strictly inside a piece; right-continuous elsewhere.
    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.breakpoints.partition_point(|&b| b <= t);
        if k == 0 || k > self.values.len() {
            0.0
        } else {
            self.values[k - 1]
        }
    }

    /// Node values, with jumps taking the mean of the one-sided limits.
    pub fn tabulate(&self, grid: &TimeGrid) -> GridFunction {
        let horizon = grid.horizon();
        let expansion = self.indicator_expansion();
        GridFunction(
            grid.nodes()
                .iter()
                .map(|&s| expansion.iter().map(|&(tau, c)| c * indicator(s, tau, horizon)).sum())
                .collect(),
        )
    }

    fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        if (self.horizon() - grid.horizon()).abs() > 1e-12 * grid.horizon() {
            return Err(invalid(format!(
                "step function horizon {} differs from grid horizon {}",
                self.horizon(),
                grid.horizon()
            )));
        }
        for &b in &self.breakpoints[1..] {
            grid.require_node(b)?;
        }
        Ok(())
    }
}

/// Values of a function at the nodes of a grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridFunction(pub Vec<f64>);

impl GridFunction {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn from_fn(grid: &TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        Self(grid.nodes().iter().map(|&t| f(t)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `Σ_j w_j f(s_j) g(s_j)`.
    pub fn inner(&self, other: &GridFunction, grid: &TimeGrid) -> f64 {
        grid.weights()
            .iter()
            .zip(&self.0)
            .zip(&other.0)
            .map(|((w, a), b)| w * a * b)
            .sum()
    }
}

/// `K* f = Σ_k c_k K(τ_k, ·)` for `f = Σ_k c_k 1_{τ_k}`.
pub fn adjoint_apply(kernel: &FredholmKernel, f: &StepFunction) -> Result<GridFunction> {
    let grid = kernel.grid();
    f.check_grid(grid)?;
    let mut out = vec![0.0; grid.len()];
    let m = kernel.matrix();
    for (tau, c) in f.indicator_expansion() {
        let i = grid.require_node(tau)?;
        for (j, o) in out.iter_mut().enumerate() {
            *o += c * m[(i, j)];
        }
    }
    Ok(GridFunction(out))
}

/// `⟨f, g⟩_{H_T} = ⟨K* f, K* g⟩_{L²}` by the grid quadrature.
pub fn ht_inner(kernel: &FredholmKernel, f: &StepFunction, g: &StepFunction) -> Result<f64> {
    let a = adjoint_apply(kernel, f)?;
    let b = adjoint_apply(kernel, g)?;
    Ok(a.inner(&b, kernel.grid()))
}

/// `⟨f, g⟩_{H_T} = Σ_ij c_i d_j R(τ_i, σ_j)` straight from the covariance.
pub fn covariance_inner(model: &CovarianceModel, f: &StepFunction, g: &StepFunction) -> Result<f64> {
    let mut s = 0.0;
    for (tau, c) in f.indicator_expansion() {
        for (sigma, d) in g.indicator_expansion() {
            s += c * d * model.evaluate(tau, sigma)?;
        }
    }
    Ok(s)
}

/// Coefficients `c = K* f` such that `Σ_j c_j √w_j ξ_j` has the law of `X(f)`.
pub fn wiener_coeffs(kernel: &FredholmKernel, f: &StepFunction) -> Result<GridFunction> {
    adjoint_apply(kernel, f)
}

/// Wiener-integral loading `c_j √w_j`, to be dotted with white noise.
pub fn wiener_loading(kernel: &FredholmKernel, f: &StepFunction) -> Result<Vec<f64>> {
    let c = wiener_coeffs(kernel, f)?;
    Ok(c.0
        .iter()
        .zip(kernel.grid().weights())
        .map(|(c, w)| c * w.sqrt())
        .collect())
}

/// `Σ_j l_j ξ_j`.
pub fn dot(loading: &[f64], noise: &[f64]) -> f64 {
    loading.iter().zip(noise).map(|(a, b)| a * b).sum()
}

/// `∫_0^t u(s) R(anchor, ds)` as a midpoint Stieltjes sum on the grid.
///
/// This is the pairing `⟨u 1_t, 1_anchor⟩_{H_T}`, defined when `s ↦ R(anchor, s)`
/// is of bounded variation.
pub fn extended_inner_indicator(
    model: &CovarianceModel,
    grid: &TimeGrid,
    u: &GridFunction,
    t: f64,
    anchor: f64,
) -> Result<f64> {
    if !model.satisfies_bounded_variation() {
        return Err(Error::UnsupportedModel(format!(
            "{} has no declared bounded-variation covariance",
            model.name()
        )));
    }
    if u.len() != grid.len() {
        return Err(invalid("grid function length does not match the grid"));
    }
    let it = grid.require_node(t)?;
    grid.require_node(anchor)?;
    let r: Vec<f64> = grid.nodes()[..=it]
        .iter()
        .map(|&s| model.evaluate(anchor, s))
        .collect::<Result<_>>()?;
    bv_stieltjes_integrate(&u.0[..=it], &r)
}

/// Increments `R(anchor, s_{j+1}) - R(anchor, s_j)`, the discrete measure `R(anchor, ds)`.
pub fn covariance_increments(model: &CovarianceModel, grid: &TimeGrid, anchor: f64) -> Vec<f64> {
    grid.nodes()
        .windows(2)
        .map(|w| model.eval(anchor, w[1]) - model.eval(anchor, w[0]))
        .collect()
}
