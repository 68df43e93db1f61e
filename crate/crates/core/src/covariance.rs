//! Covariance functions `R(t, s)` on a finite horizon.

use nalgebra::DMatrix;
use serde_json::json;

use crate::error::{invalid, Error, Result};
use crate::numerics::TimeGrid;

/// A function known through its values on increasing nodes, linearly interpolated in between.
#[derive(Clone, Debug, PartialEq)]
pub struct TabulatedFunction {
    nodes: Vec<f64>,
    values: Vec<f64>,
}

impl TabulatedFunction {
    pub fn new(nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if nodes.len() != values.len() || nodes.is_empty() {
            return Err(invalid("tabulated function needs matching, non-empty nodes and values"));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("tabulation nodes must be strictly increasing"));
        }
        Ok(Self { nodes, values })
    }

    /// Tabulates `f` on the grid nodes.
    pub fn from_fn(grid: &TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        let nodes = grid.nodes().to_vec();
        let values = nodes.iter().map(|&t| f(t)).collect();
        Self { nodes, values }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, t: f64) -> f64 {
        let (i, frac) = locate(&self.nodes, t);
        if frac == 0.0 {
            self.values[i]
        } else {
            self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
        }
    }
}

/// Cell index and fractional position of `t` inside `nodes`, clamped to the table.
fn locate(nodes: &[f64], t: f64) -> (usize, f64) {
    let n = nodes.len();
    if n == 1 || t <= nodes[0] {
        return (0, 0.0);
    }
    if t >= nodes[n - 1] {
        return (n - 1, 0.0);
    }
    let j = nodes.partition_point(|&x| x <= t) - 1;
    let frac = (t - nodes[j]) / (nodes[j + 1] - nodes[j]);
    (j, frac)
}

/// The catalog of covariance families.
#[derive(Clone, Debug, PartialEq)]
pub enum CovarianceKind {
    BrownianMotion,
    FractionalBrownian {
        hurst: f64,
    },
    BrownianBridge,
    /// Ornstein–Uhlenbeck process started at zero, `dY = -θY dt + σ dW`.
    OrnsteinUhlenbeck {
        theta: f64,
        sigma: f64,
    },
    /// `R(t, s) = f(t) f(s)`.
    RankOne {
        f: TabulatedFunction,
    },
    /// `R(t, s) = Σ_k e_k(t) e_k(s)`.
    TruncatedSeries {
        basis: Vec<TabulatedFunction>,
    },
    /// A covariance matrix on fixed nodes, bilinearly interpolated off the nodes.
    UserTabulated {
        nodes: Vec<f64>,
        matrix: DMatrix<f64>,
        bounded_variation: bool,
    },
}

/// A covariance function on `[0, T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceModel {
    kind: CovarianceKind,
    horizon: f64,
}

fn check_horizon(horizon: f64) -> Result<()> {
    if horizon > 0.0 && horizon.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("horizon must be positive and finite, got {horizon}")))
    }
}

impl CovarianceModel {
    pub fn brownian_motion(horizon: f64) -> Result<Self> {
        check_horizon(horizon)?;
        Ok(Self {
            kind: CovarianceKind::BrownianMotion,
            horizon,
        })
    }

    pub fn fractional_brownian(hurst: f64, horizon: f64) -> Result<Self> {
        check_horizon(horizon)?;
        if !(hurst > 0.0 && hurst < 1.0) {
            return Err(invalid(format!("Hurst index must lie in (0, 1), got {hurst}")));
        }
        Ok(Self {
            kind: CovarianceKind::FractionalBrownian { hurst },
            horizon,
        })
    }

    pub fn brownian_bridge(horizon: f64) -> Result<Self> {
        check_horizon(horizon)?;
        Ok(Self {
            kind: CovarianceKind::BrownianBridge,
            horizon,
        })
    }

    pub fn ornstein_uhlenbeck(theta: f64, sigma: f64, horizon: f64) -> Result<Self> {
        check_horizon(horizon)?;
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(invalid(format!("mean reversion θ must be positive, got {theta}")));
        }
        if !sigma.is_finite() {
            return Err(invalid("σ must be finite"));
        }
        Ok(Self {
            kind: CovarianceKind::OrnsteinUhlenbeck { theta, sigma },
            horizon,
        })
    }

    pub fn rank_one(f: TabulatedFunction, horizon: f64) -> Result<Self> {
        check_horizon(horizon)?;
        Ok(Self {
            kind: CovarianceKind::RankOne { f },
            horizon,
        })
    }

    pub fn truncated_series(basis: Vec<TabulatedFunction>, horizon: f64) -> Result<Self> {
        check_horizon(horizon)?;
        if basis.is_empty() {
            return Err(invalid("truncated series needs at least one basis function"));
        }
        Ok(Self {
            kind: CovarianceKind::TruncatedSeries { basis },
            horizon,
        })
    }

    /// Covariance matrix given on `nodes`; the horizon is the last node.
    ///
    /// Rejected unless symmetric to `1e-9` relative to the largest entry.
    pub fn user_tabulated(nodes: Vec<f64>, matrix: DMatrix<f64>) -> Result<Self> {
        let n = nodes.len();
        if n < 2 || matrix.nrows() != n || matrix.ncols() != n {
            return Err(invalid(format!(
                "tabulated covariance is {}x{} but has {} nodes",
                matrix.nrows(),
                matrix.ncols(),
                n
            )));
        }
        if nodes[0] < 0.0 || nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("covariance nodes must be non-negative and strictly increasing"));
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > 1e-9 * scale {
            return Err(invalid(format!(
                "tabulated covariance is not symmetric (max |R - Rᵀ| = {asym:e})"
            )));
        }
        let horizon = nodes[n - 1];
        check_horizon(horizon)?;
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        Ok(Self {
            kind: CovarianceKind::UserTabulated {
                nodes,
                matrix,
                bounded_variation: false,
            },
            horizon,
        })
    }

    /// Declares that `s ↦ R(t, s)` is of bounded variation, enabling the extended pairing.
    ///
    /// Only user-tabulated models carry this flag; every other family satisfies it already.
    pub fn declare_bounded_variation(mut self) -> Self {
        if let CovarianceKind::UserTabulated {
            bounded_variation, ..
        } = &mut self.kind
        {
            *bounded_variation = true;
        }
        self
    }

    pub fn kind(&self) -> &CovarianceKind {
        &self.kind
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Short identifier of the family.
    pub fn name(&self) -> &'static str {
        match self.kind {
            CovarianceKind::BrownianMotion => "brownian-motion",
            CovarianceKind::FractionalBrownian { .. } => "fractional-brownian",
            CovarianceKind::BrownianBridge => "brownian-bridge",
            CovarianceKind::OrnsteinUhlenbeck { .. } => "ornstein-uhlenbeck",
            CovarianceKind::RankOne { .. } => "rank-one",
            CovarianceKind::TruncatedSeries { .. } => "truncated-series",
            CovarianceKind::UserTabulated { .. } => "user-tabulated",
        }
    }

    /// Parameters as JSON, for manifests.
    pub fn parameters(&self) -> serde_json::Value {
        match &self.kind {
            CovarianceKind::BrownianMotion | CovarianceKind::BrownianBridge => {
                json!({ "T": self.horizon })
            }
            CovarianceKind::FractionalBrownian { hurst } => json!({ "T": self.horizon, "H": hurst }),
            CovarianceKind::OrnsteinUhlenbeck { theta, sigma } => {
                json!({ "T": self.horizon, "theta": theta, "sigma": sigma })
            }
            CovarianceKind::RankOne { f } => json!({ "T": self.horizon, "f_nodes": f.nodes().len() }),
            CovarianceKind::TruncatedSeries { basis } => {
                json!({ "T": self.horizon, "rank": basis.len() })
            }
            CovarianceKind::UserTabulated {
                nodes,
                bounded_variation,
                ..
            } => json!({ "T": self.horizon, "nodes": nodes.len(), "bounded_variation": bounded_variation }),
        }
    }

    /// Whether `s ↦ R(t, s)` is known to be of bounded variation uniformly in `t`.
    pub fn satisfies_bounded_variation(&self) -> bool {
        match &self.kind {
            CovarianceKind::UserTabulated {
                bounded_variation, ..
            } => *bounded_variation,
            _ => true,
        }
    }

    /// `R(t, s)`; both times must lie in `[0, T]`.
    pub fn evaluate(&self, t: f64, s: f64) -> Result<f64> {
        let tol = 1e-12 * self.horizon;
        for x in [t, s] {
            if !(x >= -tol && x <= self.horizon + tol) {
                return Err(Error::OutOfDomain {
                    time: x,
                    horizon: self.horizon,
                });
            }
        }
        Ok(self.eval(t.clamp(0.0, self.horizon), s.clamp(0.0, self.horizon)))
    }

    pub(crate) fn eval(&self, t: f64, s: f64) -> f64 {
        match &self.kind {
            CovarianceKind::BrownianMotion => t.min(s),
            CovarianceKind::FractionalBrownian { hurst } => {
                let a = 2.0 * hurst;
                0.5 * (t.powf(a) + s.powf(a) - (t - s).abs().powf(a))
            }
            CovarianceKind::BrownianBridge => t.min(s) - t * s / self.horizon,
            CovarianceKind::OrnsteinUhlenbeck { theta, sigma } => {
                sigma * sigma / (2.0 * theta)
                    * ((-theta * (t - s).abs()).exp() - (-theta * (t + s)).exp())
            }
            CovarianceKind::RankOne { f } => f.eval(t) * f.eval(s),
            CovarianceKind::TruncatedSeries { basis } => {
                basis.iter().map(|e| e.eval(t) * e.eval(s)).sum()
            }
            CovarianceKind::UserTabulated { nodes, matrix, .. } => {
                let (i, a) = locate(nodes, t);
                let (j, b) = locate(nodes, s);
                let at = |di: usize, dj: usize| matrix[(i + di, j + dj)];
                let mut v = (1.0 - a) * (1.0 - b) * at(0, 0);
                if a > 0.0 {
                    v += a * (1.0 - b) * at(1, 0);
                }
                if b > 0.0 {
                    v += (1.0 - a) * b * at(0, 1);
                }
                if a > 0.0 && b > 0.0 {
                    v += a * b * at(1, 1);
                }
                v
            }
        }
    }

    /// `R(t, t)`.
    pub fn variance(&self, t: f64) -> f64 {
        self.eval(t, t)
    }
}

/// Outcome of the trace-condition check.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct TraceReport {
    /// `∫_0^T R(t, t) dt` by the grid quadrature.
    pub value: f64,
    /// The same integral on the grid refined by a factor of two.
    pub refined_value: f64,
    /// Finite and stable to 1% under refinement.
    pub finite: bool,
}

/// Quadrature of `∫_0^T R(t, t) dt` with a refinement stability flag.
pub fn trace(model: &CovarianceModel, grid: &TimeGrid) -> Result<TraceReport> {
    let q = |g: &TimeGrid| -> f64 {
        g.nodes()
            .iter()
            .zip(g.weights())
            .map(|(&t, &w)| w * model.variance(t))
            .sum()
    };
    let value = q(grid);
    let refined_value = q(&grid.refined()?);
    let finite = value.is_finite()
        && refined_value.is_finite()
        && (refined_value - value).abs() <= 0.01 * value.abs().max(f64::MIN_POSITIVE);
    Ok(TraceReport {
        value,
        refined_value,
        finite,
    })
}

/// `R(t_i, t_j)` on the grid; exactly symmetric.
pub fn gram(model: &CovarianceModel, grid: &TimeGrid) -> DMatrix<f64> {
    let x = grid.nodes();
    let n = x.len();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = model.eval(x[i], x[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Eigenvalue-based positive-semidefiniteness check.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct PsdReport {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Passes when `λ_min ≥ -tol · λ_max`.
pub fn check_psd(gram: &DMatrix<f64>, tol: f64) -> Result<PsdReport> {
    if gram.nrows() != gram.ncols() || gram.nrows() == 0 {
        return Err(invalid("PSD check needs a non-empty square matrix"));
    }
    let scale = gram.amax().max(f64::MIN_POSITIVE);
    if (gram - gram.transpose()).amax() > 1e-10 * scale {
        return Err(invalid("PSD check needs a symmetric matrix"));
    }
    let eig = gram.clone().symmetric_eigenvalues();
    let min_eigenvalue = eig.min();
    let max_eigenvalue = eig.max();
    Ok(PsdReport {
        min_eigenvalue,
        max_eigenvalue,
        tol,
        pass: min_eigenvalue >= -tol * max_eigenvalue.abs(),
    })
}

/// Increments `R(t_{i+1}, t_{i+1}) - R(t_i, t_i)` of the variance along the grid.
pub fn variance_increments(model: &CovarianceModel, grid: &TimeGrid) -> Vec<f64> {
    grid.nodes()
        .windows(2)
        .map(|w| model.variance(w[1]) - model.variance(w[0]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn catalog(t: f64) -> Vec<CovarianceModel> {
        let grid = TimeGrid::uniform(t, 64).unwrap();
        vec![
            CovarianceModel::brownian_motion(t).unwrap(),
            CovarianceModel::fractional_brownian(0.75, t).unwrap(),
            CovarianceModel::fractional_brownian(0.3, t).unwrap(),
            CovarianceModel::brownian_bridge(t).unwrap(),
            CovarianceModel::ornstein_uhlenbeck(1.0, 1.0, t).unwrap(),
            CovarianceModel::rank_one(TabulatedFunction::from_fn(&grid, |x| x), t).unwrap(),
            CovarianceModel::truncated_series(
                (1..=3)
                    .map(|k| {
                        TabulatedFunction::from_fn(&grid, move |x| {
                            (k as f64 * x).sin() / k as f64
                        })
                    })
                    .collect(),
                t,
            )
            .unwrap(),
        ]
    }

    #[test]
    fn evaluate_examples() {
        let bm = CovarianceModel::brownian_motion(1.0).unwrap();
        assert_eq!(bm.evaluate(0.3, 0.7).unwrap(), 0.3);
        let bb = CovarianceModel::brownian_bridge(1.0).unwrap();
        assert_eq!(bb.evaluate(0.5, 0.5).unwrap(), 0.25);
        let fbm = CovarianceModel::fractional_brownian(0.5, 1.0).unwrap();
        for &(t, s) in &[(0.1, 0.9), (0.5, 0.5), (0.77, 0.2)] {
            assert_abs_diff_eq!(fbm.evaluate(t, s).unwrap(), bm.evaluate(t, s).unwrap(), epsilon = 1e-12);
        }
        assert!(matches!(
            bm.evaluate(1.5, 0.2),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(bm.evaluate(-0.1, 0.2).is_err());
    }

    #[test]
    fn constructors_validate_parameters() {
        assert!(CovarianceModel::fractional_brownian(1.0, 1.0).is_err());
        assert!(CovarianceModel::fractional_brownian(0.0, 1.0).is_err());
        assert!(CovarianceModel::ornstein_uhlenbeck(0.0, 1.0, 1.0).is_err());
        assert!(CovarianceModel::brownian_motion(0.0).is_err());
    }

    #[test]
    fn evaluate_is_symmetric_for_catalog() {
        for m in catalog(1.5) {
            for i in 0..=20 {
                for j in 0..=20 {
                    let t = 1.5 * i as f64 / 20.0;
                    let s = 1.5 * j as f64 / 20.0;
                    let a = m.eval(t, s);
                    let b = m.eval(s, t);
                    assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{}", m.name());
                }
            }
        }
    }

    #[test]
    fn catalog_grams_are_psd() {
        let grid = TimeGrid::uniform(1.5, 64).unwrap();
        for m in catalog(1.5) {
            let tr = trace(&m, &grid).unwrap();
            assert!(tr.finite);
            let g = gram(&m, &grid);
            assert_eq!(g, g.transpose());
            let rep = check_psd(&g, 1e-10).unwrap();
            assert!(rep.pass, "{} min eig {}", m.name(), rep.min_eigenvalue);
        }
    }

    #[test]
    fn trace_examples() {
        let grid = TimeGrid::uniform(1.0, 256).unwrap();
        let bm = CovarianceModel::brownian_motion(1.0).unwrap();
        assert_abs_diff_eq!(trace(&bm, &grid).unwrap().value, 0.5, epsilon = 1e-12);
        // trapezoid error for t(1-t) is h²/6 · (1/2)... closed form 1/6
        let bb = CovarianceModel::brownian_bridge(1.0).unwrap();
        assert_abs_diff_eq!(trace(&bb, &grid).unwrap().value, 1.0 / 6.0, epsilon = 1e-5);
        let grid = TimeGrid::uniform(1.0, 1024).unwrap();
        assert_abs_diff_eq!(trace(&bb, &grid).unwrap().value, 1.0 / 6.0, epsilon = 1e-6);
        let grid2 = TimeGrid::uniform(2.0, 2048).unwrap();
        let r1 = CovarianceModel::rank_one(TabulatedFunction::from_fn(&grid2, |x| x), 2.0).unwrap();
        assert_abs_diff_eq!(trace(&r1, &grid2).unwrap().value, 8.0 / 3.0, epsilon = 1e-6);
    }

    #[test]
    fn gram_examples() {
        let grid = TimeGrid::uniform(1.0, 2).unwrap();
        let bm = CovarianceModel::brownian_motion(1.0).unwrap();
        let g = gram(&bm, &grid);
        let expected = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.5, 1.0]);
        assert_eq!(g, expected);

        let grid = TimeGrid::uniform(2.0, 2).unwrap();
        let r1 = CovarianceModel::rank_one(TabulatedFunction::from_fn(&grid, |x| x), 2.0).unwrap();
        let g = gram(&r1, &grid);
        let v = nalgebra::DVector::from_vec(vec![0.0, 1.0, 2.0]);
        assert_eq!(g, &v * v.transpose());
    }

    #[test]
    fn psd_examples() {
        let id = DMatrix::<f64>::identity(4, 4);
        let r = check_psd(&id, 1e-10).unwrap();
        assert!(r.pass);
        assert_abs_diff_eq!(r.min_eigenvalue, 1.0, epsilon = 1e-14);

        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let r = check_psd(&bad, 1e-10).unwrap();
        assert!(!r.pass);
        assert_abs_diff_eq!(r.min_eigenvalue, -1.0, epsilon = 1e-14);

        let nonsym = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(check_psd(&nonsym, 1e-10).is_err());
    }

    #[test]
    fn variance_increment_examples() {
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let bm = CovarianceModel::brownian_motion(1.0).unwrap();
        assert_eq!(variance_increments(&bm, &grid), vec![0.25; 4]);

        let bb = CovarianceModel::brownian_bridge(1.0).unwrap();
        let d = variance_increments(&bb, &grid);
        let closed: Vec<f64> = grid
            .nodes()
            .windows(2)
            .map(|w| w[1] * (1.0 - w[1]) - w[0] * (1.0 - w[0]))
            .collect();
        for (a, b) in d.iter().zip(&closed) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        assert!(d[0] > 0.0 && d[1] > 0.0 && d[2] < 0.0 && d[3] < 0.0);
        let grid = TimeGrid::uniform(1.0, 37).unwrap();
        let ou = CovarianceModel::ornstein_uhlenbeck(2.0, 0.5, 1.0).unwrap();
        let s: f64 = variance_increments(&ou, &grid).iter().sum();
        assert_abs_diff_eq!(s, ou.variance(1.0) - ou.variance(0.0), epsilon = 1e-14);
    }

    #[test]
    fn user_tabulated_interpolates_and_validates() {
        let grid = TimeGrid::uniform(1.0, 8).unwrap();
        let bm = CovarianceModel::brownian_motion(1.0).unwrap();
        let g = gram(&bm, &grid);
        let user = CovarianceModel::user_tabulated(grid.nodes().to_vec(), g.clone()).unwrap();
        assert_eq!(user.evaluate(0.25, 0.5).unwrap(), 0.25);
        // bilinear interpolation of min at an off-grid point inside one cell
        assert_abs_diff_eq!(user.evaluate(0.3, 0.8).unwrap(), 0.3, epsilon = 1e-12);
        assert!(!user.satisfies_bounded_variation());
        assert!(user.declare_bounded_variation().satisfies_bounded_variation());

        let mut asym = g;
        asym[(1, 2)] += 1e-3;
        assert!(CovarianceModel::user_tabulated(grid.nodes().to_vec(), asym).is_err());
    }
}
