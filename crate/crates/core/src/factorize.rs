//! Nyström discretization of the covariance operator and Fredholm square roots.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{self, CovarianceModel, TabulatedFunction};
use crate::error::{invalid, Error, Result};
use crate::numerics::{indicator, TimeGrid};

pub const DEFAULT_TRACE_FRACTION: f64 = 1.0 - 1e-10;
pub const DEFAULT_CLIP_TOL: f64 = 1e-12;

/// Discrete Mercer expansion `R(t_i, t_j) ≈ Σ_k λ_k e_k(t_i) e_k(t_j)`.
#[derive(Clone, Debug)]
pub struct MercerDecomposition {
    grid: TimeGrid,
    eigenvalues: Vec<f64>,
    /// Column `k` holds `e_k` at the grid nodes.
    eigenfunctions: DMatrix<f64>,
    quadrature_trace: f64,
    captured_trace_fraction: f64,
    min_eigenvalue: f64,
}

impl MercerDecomposition {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Kept eigenvalues, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenfunctions(&self) -> &DMatrix<f64> {
        &self.eigenfunctions
    }

    pub fn eigenfunction(&self, k: usize) -> Vec<f64> {
        self.eigenfunctions.column(k).iter().copied().collect()
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `Σ_i w_i R(t_i, t_i)`.
    pub fn quadrature_trace(&self) -> f64 {
        self.quadrature_trace
    }

    pub fn captured_trace_fraction(&self) -> f64 {
        self.captured_trace_fraction
    }

    /// Smallest eigenvalue of the weighted Gram before clipping.
    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    /// The leading `m` terms.
    pub fn truncated(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.rank() {
            return Err(invalid(format!("rank {m} outside 1..={}", self.rank())));
        }
        let eigenvalues = self.eigenvalues[..m].to_vec();
        let captured = eigenvalues.iter().sum::<f64>() / self.quadrature_trace;
        Ok(Self {
            grid: self.grid.clone(),
            eigenfunctions: self.eigenfunctions.columns(0, m).into_owned(),
            eigenvalues,
            quadrature_trace: self.quadrature_trace,
            captured_trace_fraction: captured,
            min_eigenvalue: self.min_eigenvalue,
        })
    }
}

/// Eigendecomposition of `W^{1/2} R W^{1/2}` with `e_k = W^{-1/2} v_k`.
///
/// Eigenvalues below `clip_tol · λ_1` are dropped. The rank is the smallest `m`
/// whose captured trace fraction reaches `trace_fraction_target`, or all kept
/// eigenvalues when clipping leaves the target out of reach.
pub fn mercer_decompose(
    model: &CovarianceModel,
    grid: &TimeGrid,
    trace_fraction_target: f64,
    clip_tol: f64,
) -> Result<MercerDecomposition> {
    check_horizons(model, grid)?;
    mercer_decompose_gram(&covariance::gram(model, grid), grid, trace_fraction_target, clip_tol)
}

/// [`mercer_decompose`] on a precomputed Gram matrix `R(t_i, t_j)`.
pub fn mercer_decompose_gram(
    gram: &DMatrix<f64>,
    grid: &TimeGrid,
    trace_fraction_target: f64,
    clip_tol: f64,
) -> Result<MercerDecomposition> {
    if !(trace_fraction_target > 0.0 && trace_fraction_target <= 1.0) {
        return Err(invalid(format!(
            "trace fraction target must lie in (0, 1], got {trace_fraction_target}"
        )));
    }
    if !(clip_tol >= 0.0) {
        return Err(invalid("clip tolerance must be non-negative"));
    }
    let n = grid.len();
    if gram.nrows() != n || gram.ncols() != n {
        return Err(invalid("Gram matrix does not match the grid"));
    }
    let sw = DVector::from_vec(grid.sqrt_weights());
    let mut a = gram.clone();
    for j in 0..n {
        for i in 0..n {
            a[(i, j)] *= sw[i] * sw[j];
        }
    }
    let quadrature_trace = a.trace();
    if !(quadrature_trace > 0.0) || !quadrature_trace.is_finite() {
        return Err(Error::DegenerateModel(format!(
            "quadrature trace is {quadrature_trace}"
        )));
    }

    let eig = a.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let lambda_max = eig.eigenvalues[order[0]];
    let min_eigenvalue = eig.eigenvalues[order[n - 1]];
    if min_eigenvalue < -clip_tol * lambda_max {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue,
            max_eigenvalue: lambda_max,
            tol: clip_tol,
        });
    }
    let kept: Vec<usize> = order
        .into_iter()
        .take_while(|&k| eig.eigenvalues[k] > clip_tol * lambda_max && eig.eigenvalues[k] > 0.0)
        .collect();

    let mut m = kept.len();
    let mut running = 0.0;
    for (idx, &k) in kept.iter().enumerate() {
        running += eig.eigenvalues[k];
        if running / quadrature_trace >= trace_fraction_target {
            m = idx + 1;
            break;
        }
    }
    let eigenvalues: Vec<f64> = kept[..m].iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut eigenfunctions = DMatrix::zeros(n, m);
    for (c, &k) in kept[..m].iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        // fix the sign so that the function starts upward at its first non-negligible value
        let pivot = v.iter().copied().find(|x| x.abs() > 1e-8).unwrap_or(1.0);
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            eigenfunctions[(i, c)] = sign * v[i] / sw[i];
        }
    }
    let captured_trace_fraction = eigenvalues.iter().sum::<f64>() / quadrature_trace;
    Ok(MercerDecomposition {
        grid: grid.clone(),
        eigenvalues,
        eigenfunctions,
        quadrature_trace,
        captured_trace_fraction,
        min_eigenvalue,
    })
}

fn check_horizons(model: &CovarianceModel, grid: &TimeGrid) -> Result<()> {
    if (model.horizon() - grid.horizon()).abs() > 1e-12 * grid.horizon() {
        return Err(invalid(format!(
            "model horizon {} differs from grid horizon {}",
            model.horizon(),
            grid.horizon()
        )));
    }
    Ok(())
}

/// A kernel `K(t_i, s_j)` tabulated on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FredholmKernel {
    grid: TimeGrid,
    matrix: DMatrix<f64>,
    symmetric: bool,
    provenance: String,
}

impl FredholmKernel {
    /// Wraps a tabulated kernel. A kernel flagged symmetric must be symmetric to `1e-12`.
    pub fn new(
        grid: TimeGrid,
        matrix: DMatrix<f64>,
        symmetric: bool,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let n = grid.len();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(invalid(format!(
                "kernel is {}x{} but the grid has {n} nodes",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(invalid("kernel has non-finite entries"));
        }
        if symmetric && (&matrix - matrix.transpose()).amax() > 1e-12 * matrix.amax().max(1.0) {
            return Err(invalid("kernel flagged symmetric is not symmetric"));
        }
        Ok(Self {
            grid,
            matrix,
            symmetric,
            provenance: provenance.into(),
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// `mercer`, a closed-form kernel name, or a description of the transform that produced it.
    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.matrix.row(i).iter().copied().collect()
    }

    /// `K · diag(√w)`, the map from white noise to path values.
    pub fn noise_loading(&self) -> DMatrix<f64> {
        let sw = self.grid.sqrt_weights();
        let mut l = self.matrix.clone();
        for (j, s) in sw.iter().enumerate() {
            l.column_mut(j).scale_mut(*s);
        }
        l
    }

    /// Induced covariance `K W Kᵀ`, exactly symmetric.
    pub fn covariance(&self) -> DMatrix<f64> {
        let l = self.noise_loading();
        let c = &l * l.transpose();
        (&c + c.transpose()) * 0.5
    }

    pub(crate) fn same_grid(&self, other: &TimeGrid) -> Result<()> {
        if &self.grid == other {
            Ok(())
        } else {
            Err(invalid("objects live on different grids"))
        }
    }
}

/// `K = Σ_k √λ_k e_k ⊗ e_k`.
pub fn build_fredholm_kernel(decomp: &MercerDecomposition) -> FredholmKernel {
    let mut scaled = decomp.eigenfunctions.clone();
    for (k, lambda) in decomp.eigenvalues.iter().enumerate() {
        scaled.column_mut(k).scale_mut(lambda.sqrt());
    }
    let k = &scaled * decomp.eigenfunctions.transpose();
    let matrix = (&k + k.transpose()) * 0.5;
    FredholmKernel {
        grid: decomp.grid.clone(),
        matrix,
        symmetric: true,
        provenance: "mercer".into(),
    }
}

/// Mercer kernel of a model with the default truncation and clipping.
pub fn mercer_kernel(model: &CovarianceModel, grid: &TimeGrid) -> Result<FredholmKernel> {
    let d = mercer_decompose(model, grid, DEFAULT_TRACE_FRACTION, DEFAULT_CLIP_TOL)?;
    Ok(build_fredholm_kernel(&d))
}

/// Deviation of `K W Kᵀ` from the model Gram matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// `max_ij |(K W Kᵀ)_ij - R(t_i, t_j)|`.
    pub absolute: f64,
    /// `absolute / max |R|`.
    pub relative: f64,
    /// `‖W^{1/2}(K W Kᵀ - R)W^{1/2}‖_F`, the discrete `L²([0,T]²)` norm of the residual.
    pub weighted_frobenius: f64,
}

pub fn factorization_residual(kernel: &FredholmKernel, model: &CovarianceModel) -> Result<ResidualReport> {
    check_horizons(model, &kernel.grid)?;
    Ok(residual_against(kernel, &covariance::gram(model, &kernel.grid)))
}

pub(crate) fn residual_against(kernel: &FredholmKernel, gram: &DMatrix<f64>) -> ResidualReport {
    let diff = kernel.covariance() - gram;
    let absolute = diff.amax();
    let scale = gram.amax();
    let sw = kernel.grid.sqrt_weights();
    let mut fro = 0.0;
    for j in 0..diff.ncols() {
        for i in 0..diff.nrows() {
            let v = diff[(i, j)] * sw[i] * sw[j];
            fro += v * v;
        }
    }
    ResidualReport {
        absolute,
        relative: if scale > 0.0 { absolute / scale } else { absolute },
        weighted_frobenius: fro.sqrt(),
    }
}

/// Closed-form kernels.
#[derive(Clone, Debug, PartialEq)]
pub enum KnownKernel {
    /// `K(t, s) = 1_{[0,t)}(s)`.
    BrownianMotionIndicator,
    /// `K(t, s) = 1_{[0,t)}(s) - t/T`.
    BrownianBridgeOrthogonal,
    /// `K(t, s) = f(t) 1_{[0,1)}(s)`.
    DegenerateRankOne { f: TabulatedFunction },
    /// `K(t, s) = (T - t)/(T - s)` for `s < t`, zero otherwise.
    BrownianBridgeCanonicalVolterra,
}

impl KnownKernel {
    pub fn name(&self) -> &'static str {
        match self {
            KnownKernel::BrownianMotionIndicator => "brownian-motion-indicator",
            KnownKernel::BrownianBridgeOrthogonal => "brownian-bridge-orthogonal",
            KnownKernel::DegenerateRankOne { .. } => "degenerate-rank-one",
            KnownKernel::BrownianBridgeCanonicalVolterra => "brownian-bridge-canonical-volterra",
        }
    }

    /// Looks a kernel up by name; `f` is required for `degenerate-rank-one`.
    pub fn from_name(name: &str, f: Option<TabulatedFunction>) -> Result<Self> {
        Ok(match name {
            "brownian-motion-indicator" => KnownKernel::BrownianMotionIndicator,
            "brownian-bridge-orthogonal" => KnownKernel::BrownianBridgeOrthogonal,
            "brownian-bridge-canonical-volterra" => KnownKernel::BrownianBridgeCanonicalVolterra,
            "degenerate-rank-one" => KnownKernel::DegenerateRankOne {
                f: f.ok_or_else(|| invalid("degenerate-rank-one needs a function f"))?,
            },
            other => return Err(invalid(format!("unknown kernel `{other}`"))),
        })
    }

    /// `K(t, s)`; at a jump the kernel takes the mean of its one-sided limits.
    pub fn value(&self, t: f64, s: f64, horizon: f64) -> f64 {
        match self {
            KnownKernel::BrownianMotionIndicator => indicator(s, t, horizon),
            KnownKernel::BrownianBridgeOrthogonal => indicator(s, t, horizon) - t / horizon,
            KnownKernel::DegenerateRankOne { f } => f.eval(t) * indicator(s, 1.0_f64.min(horizon), horizon),
            KnownKernel::BrownianBridgeCanonicalVolterra => {
                let gap = horizon - s;
                if gap <= 1e-12 * horizon {
                    0.0
                } else {
                    indicator(s, t, horizon) * (horizon - t) / gap
                }
            }
        }
    }

    pub fn tabulate(&self, grid: &TimeGrid) -> FredholmKernel {
        let x = grid.nodes();
        let n = x.len();
        let matrix = DMatrix::from_fn(n, n, |i, j| self.value(x[i], x[j], grid.horizon()));
        FredholmKernel {
            grid: grid.clone(),
            matrix,
            symmetric: false,
            provenance: self.name().into(),
        }
    }
}

impl fmt::Display for KnownKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KnownKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_name(s, None)
    }
}

/// Tabulated closed-form kernel by name.
pub fn known_kernel(kernel: &KnownKernel, grid: &TimeGrid) -> FredholmKernel {
    kernel.tabulate(grid)
}

/// Result of comparing the covariances induced by two kernels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub max_abs_difference: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Two kernels are unitarily related iff `K1 W K1ᵀ = K2 W K2ᵀ`.
pub fn unitary_equivalence_check(
    k1: &FredholmKernel,
    k2: &FredholmKernel,
    tol: f64,
) -> Result<EquivalenceReport> {
    k1.same_grid(&k2.grid)?;
    let max_abs_difference = (k1.covariance() - k2.covariance()).amax();
    Ok(EquivalenceReport {
        max_abs_difference,
        tol,
        pass: max_abs_difference <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn bm_lambda(k: usize) -> f64 {
        1.0 / ((k as f64 - 0.5) * PI).powi(2)
    }

    fn catalog() -> Vec<CovarianceModel> {
        vec![
            CovarianceModel::brownian_motion(1.0).unwrap(),
            CovarianceModel::brownian_bridge(1.0).unwrap(),
            CovarianceModel::ornstein_uhlenbeck(1.0, 1.0, 1.0).unwrap(),
            CovarianceModel::fractional_brownian(0.75, 1.0).unwrap(),
            CovarianceModel::fractional_brownian(0.3, 1.0).unwrap(),
        ]
    }

    #[test]
    fn brownian_leading_eigenvalue() {
        let grid = TimeGrid::uniform(1.0, 512).unwrap();
        let bm = CovarianceModel::brownian_motion(1.0).unwrap();
        let d = mercer_decompose(&bm, &grid, DEFAULT_TRACE_FRACTION, DEFAULT_CLIP_TOL).unwrap();
        let l1 = d.eigenvalues()[0];
        assert!((l1 / (4.0 / PI / PI) - 1.0).abs() < 1e-3, "{l1}");
        // independent check at doubled resolution
        let fine = TimeGrid::uniform(1.0, 1024).unwrap();
        let df = mercer_decompose(&bm, &fine, 0.5, DEFAULT_CLIP_TOL).unwrap();
        assert!((df.eigenvalues()[0] - l1).abs() < 1e-4);
        assert!(d.captured_trace_fraction() >= DEFAULT_TRACE_FRACTION || d.rank() > 500);
    }

    #[test]
    fn brownian_eigenvalues_converge_monotonically() {
        let bm = CovarianceModel::brownian_motion(1.0).unwrap();
        let mut prev: Option<Vec<f64>> = None;
        for n in [128, 256, 512, 1024] {
            let grid = TimeGrid::uniform(1.0, n).unwrap();
            let d = mercer_decompose(&bm, &grid, 1.0, DEFAULT_CLIP_TOL).unwrap();
            let err: Vec<f64> = (1..=10)
                .map(|k| (d.eigenvalues()[k - 1] / bm_lambda(k) - 1.0).abs())
                .collect();
            if let Some(p) = &prev {
                for k in 0..10 {
                    assert!(err[k] < p[k], "k={} n={n}: {} !< {}", k + 1, err[k], p[k]);
                }
            }
            prev = Some(err);
        }
    }

    #[test]
    fn rank_one_model_has_rank_one() {
        let grid = TimeGrid::uniform(2.0, 256).unwrap();
        let f = TabulatedFunction::from_fn(&grid, |t| t);
        let model = CovarianceModel::rank_one(f, 2.0).unwrap();
        let d = mercer_decompose(&model, &grid, DEFAULT_TRACE_FRACTION, DEFAULT_CLIP_TOL).unwrap();
        assert_eq!(d.rank(), 1);
        assert_abs_diff_eq!(d.eigenvalues()[0], 8.0 / 3.0, epsilon = 1e-4);
        let k = build_fredholm_kernel(&d);
        let c = (8.0f64 / 3.0).sqrt();
        for (i, &t) in grid.nodes().iter().enumerate().step_by(17) {
            for (j, &s) in grid.nodes().iter().enumerate().step_by(13) {
                assert_abs_diff_eq!(k.value(i, j), t * s / c, epsilon = 1e-4);
            }
        }
    }

    #[test]
    fn decomposition_invariants_for_catalog() {
        for n in [64, 256, 512] {
            let grid = TimeGrid::uniform(1.0, n).unwrap();
            for model in catalog() {
                let d = mercer_decompose(&model, &grid, DEFAULT_TRACE_FRACTION, DEFAULT_CLIP_TOL)
                    .unwrap();
                assert!(d.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
                assert!(d.eigenvalues().iter().all(|&l| l >= 0.0));
                assert!(d.captured_trace_fraction() <= 1.0 + 1e-8);
                let m = d.rank().min(40);
                let e = d.eigenfunctions();
                let w = grid.weights();
                for a in 0..m {
                    for b in 0..m {
                        let ip: f64 = (0..grid.len()).map(|j| w[j] * e[(j, a)] * e[(j, b)]).sum();
                        let target = if a == b { 1.0 } else { 0.0 };
                        assert!((ip - target).abs() <= 1e-8, "{} n={n} ({a},{b}) {ip}", model.name());
                    }
                }
            }
        }
    }

    #[test]
    fn full_rank_kernel_reconstructs_the_gram_matrix() {
        let grid = TimeGrid::uniform(1.0, 256).unwrap();
        for model in catalog() {
            let d = mercer_decompose(&model, &grid, 1.0, DEFAULT_CLIP_TOL).unwrap();
            let k = build_fredholm_kernel(&d);
            assert!(k.is_symmetric());
            assert!((k.matrix() - k.matrix().transpose()).amax() <= 1e-12);
            let r = factorization_residual(&k, &model).unwrap();
            assert!(r.absolute <= 1e-10, "{}: {}", model.name(), r.absolute);
        }
    }

    #[test]
    fn truncation_residual_is_bounded_by_the_tail() {
        let grid = TimeGrid::uniform(1.0, 256).unwrap();
        let bm = CovarianceModel::brownian_motion(1.0).unwrap();
        let full = mercer_decompose(&bm, &grid, 1.0, DEFAULT_CLIP_TOL).unwrap();
        for eps in [1e-2, 1e-3] {
            let d = mercer_decompose(&bm, &grid, 1.0 - eps, DEFAULT_CLIP_TOL).unwrap();
            let tail: f64 = full.eigenvalues()[d.rank()..].iter().sum();
            let r = factorization_residual(&build_fredholm_kernel(&d), &bm).unwrap();
            assert!(r.weighted_frobenius <= tail * (1.0 + 1e-9));
            assert!(r.weighted_frobenius <= eps * full.quadrature_trace());
        }
    }

    #[test]
    fn known_kernel_values() {
        let bb = KnownKernel::BrownianBridgeOrthogonal;
        assert_eq!(bb.value(0.25, 0.75, 1.0), -0.25);
        let grid = TimeGrid::uniform(2.0, 8).unwrap();
        let f = TabulatedFunction::from_fn(&grid, |t| t);
        let deg = KnownKernel::DegenerateRankOne { f };
        assert_eq!(deg.value(1.5, 0.5, 2.0), 1.5);
        assert_eq!(deg.value(1.5, 1.5, 2.0), 0.0);
        let can = KnownKernel::BrownianBridgeCanonicalVolterra;
        assert_abs_diff_eq!(can.value(0.5, 0.25, 1.0), 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(can.value(0.25, 0.5, 1.0), 0.0);
        let bm = KnownKernel::BrownianMotionIndicator;
        assert_eq!(bm.value(0.5, 0.25, 1.0), 1.0);
        assert_eq!(bm.value(0.5, 0.75, 1.0), 0.0);
        assert!("nope".parse::<KnownKernel>().is_err());
        assert!("degenerate-rank-one".parse::<KnownKernel>().is_err());
        let k = known_kernel(&bm, &TimeGrid::uniform(1.0, 4).unwrap());
        assert!(!k.is_symmetric());
        assert_eq!(k.provenance(), "brownian-motion-indicator");
    }

    #[test]
    fn closed_form_bridge_kernel_integrates_to_the_variance() {
        let grid = TimeGrid::uniform(1.0, 64).unwrap();
        let k = known_kernel(&KnownKernel::BrownianBridgeOrthogonal, &grid);
        let i = grid.require_node(0.5).unwrap();
        // direct quadrature of ∫ (1_{0.5}(u) - 0.5)² du against R(0.5, 0.5)
        let direct: f64 = grid
            .weights()
            .iter()
            .zip(grid.nodes())
            .map(|(w, &u)| {
                let v = if u < 0.5 { 0.5 } else if u > 0.5 { -0.5 } else { 0.0 };
                w * v * v
            })
            .sum();
        assert_abs_diff_eq!(k.covariance()[(i, i)], direct, epsilon = 1e-12);
        assert_abs_diff_eq!(direct, 0.25, epsilon = 1.0 / 64.0);
    }

    #[test]
    fn unitary_equivalence_examples() {
        let grid = TimeGrid::uniform(1.0, 512).unwrap();
        let bb = CovarianceModel::brownian_bridge(1.0).unwrap();
        let mercer = mercer_kernel(&bb, &grid).unwrap();
        let closed = known_kernel(&KnownKernel::BrownianBridgeOrthogonal, &grid);
        assert!(unitary_equivalence_check(&mercer, &closed, 1e-3).unwrap().pass);
        assert!(factorization_residual(&closed, &bb).unwrap().absolute <= 1e-3);
        assert!(unitary_equivalence_check(&closed, &closed, 0.0).unwrap().pass);

        let f = TabulatedFunction::from_fn(&grid, |t| t);
        let deg = known_kernel(&KnownKernel::DegenerateRankOne { f }, &grid);
        let bm = known_kernel(&KnownKernel::BrownianMotionIndicator, &grid);
        assert!(!unitary_equivalence_check(&bm, &deg, 1e-3).unwrap().pass);

        let other = TimeGrid::uniform(1.0, 256).unwrap();
        let k2 = known_kernel(&KnownKernel::BrownianMotionIndicator, &other);
        assert!(unitary_equivalence_check(&bm, &k2, 1.0).is_err());
    }

    #[test]
    fn indicator_kernel_factorizes_brownian_motion_off_the_diagonal() {
        let grid = TimeGrid::uniform(1.0, 32).unwrap();
        let k = known_kernel(&KnownKernel::BrownianMotionIndicator, &grid);
        let c = k.covariance();
        let h = 1.0 / 32.0;
        for i in 0..grid.len() {
            for j in 0..grid.len() {
                let t = grid.node(i).min(grid.node(j));
                let expected = if i == j && i != 0 && i != grid.last() { t - h / 4.0 } else { t };
                assert_abs_diff_eq!(c[(i, j)], expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn errors_are_reported() {
        let grid = TimeGrid::uniform(1.0, 8).unwrap();
        let bm = CovarianceModel::brownian_motion(2.0).unwrap();
        assert!(mercer_decompose(&bm, &grid, 0.9, 1e-12).is_err());
        let bm = CovarianceModel::brownian_motion(1.0).unwrap();
        assert!(mercer_decompose(&bm, &grid, 0.0, 1e-12).is_err());
        let nodes = vec![0.0, 0.5, 1.0];
        let bad = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let model = CovarianceModel::user_tabulated(nodes, bad).unwrap();
        let g3 = TimeGrid::uniform(1.0, 2).unwrap();
        assert!(matches!(
            mercer_decompose(&model, &g3, 0.9, 1e-12),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
        let zero = CovarianceModel::user_tabulated(vec![0.0, 0.5, 1.0], DMatrix::zeros(3, 3)).unwrap();
        assert!(matches!(
            mercer_decompose(&zero, &g3, 0.9, 1e-12),
            Err(Error::DegenerateModel(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn random_psd_matrices_are_reconstructed(
            n in 2usize..12,
            entries in prop::collection::vec(-1.0f64..1.0, 144),
            rank in 1usize..12,
        ) {
            let grid = TimeGrid::uniform(1.0, n).unwrap();
            let size = grid.len();
            let a = DMatrix::from_fn(size, rank, |i, j| entries[i * 12 + j]);
            let r = &a * a.transpose();
            let model = CovarianceModel::user_tabulated(grid.nodes().to_vec(), r.clone()).unwrap();
            prop_assume!(r.amax() > 1e-3);
            let d = mercer_decompose(&model, &grid, 1.0, DEFAULT_CLIP_TOL).unwrap();
            let k = build_fredholm_kernel(&d);
            let res = factorization_residual(&k, &model).unwrap();
            prop_assert!(res.absolute <= 1e-10 * r.amax().max(1.0), "{}", res.absolute);
            prop_assert!(d.rank() <= rank.min(size));
        }

        #[test]
        fn mercer_kernels_are_symmetric(n in 4usize..40, hurst in 0.1f64..0.9) {
            let grid = TimeGrid::uniform(1.0, n).unwrap();
            let model = CovarianceModel::fractional_brownian(hurst, 1.0).unwrap();
            let k = mercer_kernel(&model, &grid).unwrap();
            prop_assert!((k.matrix() - k.matrix().transpose()).amax() <= 1e-12);
        }
    }
}
