//! Time grids, quadrature, normalized Hermite polynomials and Riemann–Stieltjes sums.
//!
//! Every other module discretizes `[0, T]` through a [`TimeGrid`]. The default
//! rule is the trapezoid rule on equispaced nodes; Gauss–Legendre is available
//! for smooth covariances.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Quadrature rule a [`TimeGrid`] was built with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureRule {
    /// Trapezoid weights on nodes that include both endpoints `0` and `T`.
    Trapezoid,
    /// Interior Gauss–Legendre nodes only; the endpoints are *not* nodes.
    GaussLegendre,
}

impl std::fmt::Display for QuadratureRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QuadratureRule::Trapezoid => f.write_str("trapezoid"),
            QuadratureRule::GaussLegendre => f.write_str("gauss-legendre"),
        }
    }
}

impl std::str::FromStr for QuadratureRule {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trapezoid" | "uniform" => Ok(QuadratureRule::Trapezoid),
            "gauss-legendre" | "gl" => Ok(QuadratureRule::GaussLegendre),
            other => Err(invalid(format!("unknown quadrature rule `{other}`"))),
        }
    }
}

/// Discretization of `[0, T]`: increasing nodes with positive quadrature weights.
///
/// Trapezoid grids start at `0` and end at `T`. Gauss–Legendre grids keep only
/// the interior nodes, so for them the endpoint invariant is relaxed and
/// [`TimeGrid::includes_endpoints`] returns `false`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    rule: QuadratureRule,
}

impl TimeGrid {
    /// `n + 1` equispaced nodes on `[0, T]` with trapezoid weights.
    pub fn uniform(horizon: f64, n: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        if n < 2 {
            return Err(invalid(format!("need at least 2 intervals, got {n}")));
        }
        let h = horizon / n as f64;
        let mut nodes: Vec<f64> = (0..=n).map(|i| i as f64 * h).collect();
        nodes[n] = horizon;
        let weights = (0..=n)
            .map(|i| if i == 0 || i == n { 0.5 * h } else { h })
            .collect();
        Ok(Self {
            horizon,
            nodes,
            weights,
            rule: QuadratureRule::Trapezoid,
        })
    }

    /// Trapezoid weights on arbitrary increasing nodes running from `0` to `T`.
    pub fn trapezoid(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(invalid("trapezoid grid needs at least 3 nodes"));
        }
        if nodes[0] != 0.0 {
            return Err(invalid(format!("first node must be 0, got {}", nodes[0])));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("nodes must be strictly increasing"));
        }
        let n = nodes.len() - 1;
        let horizon = nodes[n];
        let weights = (0..=n)
            .map(|i| {
                let left = if i > 0 { nodes[i] - nodes[i - 1] } else { 0.0 };
                let right = if i < n { nodes[i + 1] - nodes[i] } else { 0.0 };
                0.5 * (left + right)
            })
            .collect();
        Ok(Self {
            horizon,
            nodes,
            weights,
            rule: QuadratureRule::Trapezoid,
        })
    }

    /// `n` Gauss–Legendre nodes mapped to `(0, T)`.
    pub fn gauss_legendre(horizon: f64, n: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        if n < 2 {
            return Err(invalid(format!("need at least 2 Gauss–Legendre nodes, got {n}")));
        }
        let (x, w) = gauss_legendre_reference(n);
        let half = 0.5 * horizon;
        let nodes = x.iter().map(|&x| half * (x + 1.0)).collect();
        let weights = w.iter().map(|&w| half * w).collect();
        Ok(Self {
            horizon,
            nodes,
            weights,
            rule: QuadratureRule::GaussLegendre,
        })
    }

    /// Builds a grid of the given rule with `n` intervals (trapezoid) or `n` nodes (Gauss–Legendre).
    pub fn with_rule(rule: QuadratureRule, horizon: f64, n: usize) -> Result<Self> {
        match rule {
            QuadratureRule::Trapezoid => Self::uniform(horizon, n),
            QuadratureRule::GaussLegendre => Self::gauss_legendre(horizon, n),
        }
    }

    /// Reassembles a grid from stored nodes and weights, validating the invariants.
    pub fn from_parts(
        horizon: f64,
        nodes: Vec<f64>,
        weights: Vec<f64>,
        rule: QuadratureRule,
    ) -> Result<Self> {
        if nodes.len() != weights.len() || nodes.len() < 2 {
            return Err(invalid("nodes and weights must have equal length >= 2"));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("nodes must be strictly increasing"));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(invalid("weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - horizon).abs() > 1e-9 * horizon {
            return Err(invalid(format!("weights sum to {total}, expected {horizon}")));
        }
        if rule == QuadratureRule::Trapezoid
            && (nodes[0] != 0.0 || (nodes[nodes.len() - 1] - horizon).abs() > 1e-12 * horizon)
        {
            return Err(invalid("trapezoid grid must start at 0 and end at T"));
        }
        Ok(Self {
            horizon,
            nodes,
            weights,
            rule,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index of the last node.
    pub fn last(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn node(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    pub fn rule(&self) -> QuadratureRule {
        self.rule
    }

    pub fn includes_endpoints(&self) -> bool {
        self.rule == QuadratureRule::Trapezoid
    }

    pub fn sqrt_weights(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.sqrt()).collect()
    }

    /// Index of the node equal to `t` (up to `1e-9 * T`).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * self.horizon;
        let pos = self.nodes.partition_point(|&x| x < t - tol);
        (pos < self.nodes.len() && (self.nodes[pos] - t).abs() <= tol).then_some(pos)
    }

    /// Like [`TimeGrid::index_of`] but returns an error naming the offending time.
    pub fn require_node(&self, t: f64) -> Result<usize> {
        self.index_of(t)
            .ok_or_else(|| invalid(format!("time {t} is not a grid node")))
    }

    /// The same rule with twice the resolution.
    pub fn refined(&self) -> Result<Self> {
        match self.rule {
            QuadratureRule::Trapezoid => {
                let mut nodes = Vec::with_capacity(2 * self.nodes.len() - 1);
                for w in self.nodes.windows(2) {
                    nodes.push(w[0]);
                    nodes.push(0.5 * (w[0] + w[1]));
                }
                nodes.push(self.nodes[self.nodes.len() - 1]);
                Self::trapezoid(nodes)
            }
            QuadratureRule::GaussLegendre => Self::gauss_legendre(self.horizon, 2 * self.len()),
        }
    }

    /// Trapezoid weights for `∫_0^{t_i}` restricted to nodes `0..=i`.
    ///
    /// The segment between `0` and the first node (non-empty only for
    /// Gauss–Legendre grids) is attributed to node 0.
    pub fn head_weights(&self, i: usize) -> Vec<f64> {
        let x = &self.nodes;
        let mut w = vec![0.0; i + 1];
        w[0] = x[0];
        for j in 0..i {
            let half = 0.5 * (x[j + 1] - x[j]);
            w[j] += half;
            w[j + 1] += half;
        }
        w
    }

    /// Trapezoid weights for `∫_{t_i}^T` on nodes `i..=last`; entry `k` belongs to node `i + k`.
    pub fn tail_weights(&self, i: usize) -> Vec<f64> {
        let x = &self.nodes;
        let n = self.last();
        let mut w = vec![0.0; n + 1 - i];
        for j in i..n {
            let half = 0.5 * (x[j + 1] - x[j]);
            w[j - i] += half;
            w[j + 1 - i] += half;
        }
        w[n - i] += self.horizon - x[n];
        w
    }
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`, ascending.
fn gauss_legendre_reference(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-15 {
                let (_, d) = legendre_with_derivative(n, z);
                dp = d;
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// `(P_n(z), P_n'(z))` by the Bonnet recursion.
fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Normalized Hermite polynomial `H_p = He_p / p!`.
///
/// Uses `(n+1) H_{n+1}(x) = x H_n(x) - H_{n-1}(x)` with `H_0 = 1`, `H_1 = x`.
pub fn hermite(p: usize, x: f64) -> f64 {
    match p {
        0 => 1.0,
        1 => x,
        _ => {
            let mut prev = 1.0;
            let mut cur = x;
            for k in 1..p {
                let next = (x * cur - prev) / (k as f64 + 1.0);
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// All of `H_0(x), …, H_{p_max}(x)`.
pub fn hermite_all(p_max: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(p_max + 1);
    out.push(1.0);
    if p_max >= 1 {
        out.push(x);
    }
    for k in 1..p_max {
        let next = (x * out[k] - out[k - 1]) / (k as f64 + 1.0);
        out.push(next);
    }
    out
}

/// `H_p'(x) = H_{p-1}(x)` under the `He_p / p!` normalization; zero for `p = 0`.
pub fn hermite_derivative(p: usize, x: f64) -> f64 {
    if p == 0 {
        0.0
    } else {
        hermite(p - 1, x)
    }
}

/// Riemann–Stieltjes sum `Σ ½(f_i + f_{i+1})(g_{i+1} - g_i)` approximating `∫ f dg`.
pub fn bv_stieltjes_integrate(f: &[f64], g: &[f64]) -> Result<f64> {
    if f.len() != g.len() {
        return Err(invalid(format!(
            "integrand has {} values but integrator has {}",
            f.len(),
            g.len()
        )));
    }
    Ok(f.windows(2)
        .zip(g.windows(2))
        .map(|(f, g)| 0.5 * (f[0] + f[1]) * (g[1] - g[0]))
        .sum())
}

/// Node value of the indicator `1_{[0, a)}(s)` on `[0, T]`.
///
/// At the jump `s = a` the value is the mean of the one-sided limits, except at
/// the ends of the horizon: `1_T` includes `T` and `1_0` vanishes identically.
/// With this convention the trapezoid rule integrates indicators exactly.
pub fn indicator(s: f64, a: f64, horizon: f64) -> f64 {
    let tol = 1e-12 * horizon;
    if (s - a).abs() <= tol {
        if a <= tol {
            0.0
        } else if a >= horizon - tol {
            1.0
        } else {
            0.5
        }
    } else if s < a {
        1.0
    } else {
        0.0
    }
}

/// `n!` as a float.
pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Binomial coefficient as a float.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
