//! Path simulation, series expansions, bridges, equivalent-in-law perturbations
//! and Langevin kernels.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::covariance::CovarianceModel;
use crate::error::{invalid, Error, Result};
use crate::factorize::FredholmKernel;
use crate::noise::{self, CovarianceAccumulator, CovarianceEstimate, NoiseVector};
use crate::numerics::{QuadratureRule, TimeGrid};
use crate::transfer::{adjoint_apply, GridFunction, StepFunction};

/// Simulated paths on a grid, one column per path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    grid: TimeGrid,
    paths: DMatrix<f64>,
    seed: u64,
    provenance: String,
}

impl PathEnsemble {
    pub fn new(grid: TimeGrid, paths: DMatrix<f64>, seed: u64, provenance: impl Into<String>) -> Result<Self> {
        if paths.nrows() != grid.len() {
            return Err(invalid("path length does not match the grid"));
        }
        Ok(Self {
            grid,
            paths,
            seed,
            provenance: provenance.into(),
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// `nodes × paths` matrix of path values.
    pub fn paths(&self) -> &DMatrix<f64> {
        &self.paths
    }

    pub fn n_paths(&self) -> usize {
        self.paths.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn path(&self, p: usize) -> Vec<f64> {
        self.paths.column(p).iter().copied().collect()
    }
}

fn assemble(blocks: Vec<DMatrix<f64>>, rows: usize) -> DMatrix<f64> {
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.columns_mut(c, b.ncols()).copy_from(&b);
        c += b.ncols();
    }
    out
}

fn check_paths(n_paths: u64) -> Result<()> {
    if n_paths == 0 {
        Err(invalid("number of paths must be positive"))
    } else {
        Ok(())
    }
}

/// `X_p(t_i) = Σ_j K(t_i, s_j) √w_j ξ_j^{(p)}`.
pub fn simulate(kernel: &FredholmKernel, n_paths: u64, seed: u64) -> Result<PathEnsemble> {
    check_paths(n_paths)?;
    let loading = kernel.noise_loading();
    let blocks = noise::run_chunked(n_paths, |r| noise::simulate_block(&loading, seed, r));
    PathEnsemble::new(
        kernel.grid().clone(),
        assemble(blocks, loading.nrows()),
        seed,
        kernel.provenance(),
    )
}

/// Covariance at `nodes` of paths produced chunk by chunk, without storing them.
pub fn stream_covariance<F>(n_paths: u64, nodes: &[usize], block: F) -> Result<CovarianceEstimate>
where
    F: Fn(Range<u64>) -> DMatrix<f64> + Sync + Send,
{
    if n_paths < 2 {
        return Err(invalid("covariance needs at least two paths"));
    }
    let chunks = noise::run_chunked(n_paths, |r| {
        let paths = block(r);
        let mut acc = CovarianceAccumulator::new(nodes.len());
        let mut x = vec![0.0; nodes.len()];
        for col in paths.column_iter() {
            for (v, &i) in x.iter_mut().zip(nodes) {
                *v = col[i];
            }
            acc.push(&x);
        }
        acc
    });
    let mut total = CovarianceAccumulator::new(nodes.len());
    for c in &chunks {
        total.merge(c);
    }
    total.finish()
}

/// Kernel simulation summarized by the covariance at `nodes`.
pub fn simulate_covariance(
    kernel: &FredholmKernel,
    n_paths: u64,
    seed: u64,
    nodes: &[usize],
) -> Result<CovarianceEstimate> {
    let loading = kernel.noise_loading();
    stream_covariance(n_paths, nodes, |r| noise::simulate_block(&loading, seed, r))
}

/// Unbiased sample covariance and delta-method standard errors at the given node times.
pub fn empirical_covariance(ensemble: &PathEnsemble, times: &[f64]) -> Result<CovarianceEstimate> {
    let idx: Vec<usize> = times
        .iter()
        .map(|&t| ensemble.grid.require_node(t))
        .collect::<Result<_>>()?;
    stream_covariance(ensemble.n_paths() as u64, &idx, |r| {
        ensemble
            .paths
            .columns(r.start as usize, (r.end - r.start) as usize)
            .into_owned()
    })
}

/// Orthonormal systems used for series expansions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Basis {
    /// Eigenfunctions of the covariance induced by the kernel (Karhunen–Loève).
    MercerEigen,
    /// `1/√T`, `√(2/T) cos(jπs/T)` and the half-weighted top frequency.
    Trigonometric,
    /// Haar functions on recursive halves of the node set, weighted by the quadrature.
    Haar,
}

impl std::fmt::Display for Basis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Basis::MercerEigen => "mercer-eigen",
            Basis::Trigonometric => "trigonometric",
            Basis::Haar => "haar",
        })
    }
}

impl std::str::FromStr for Basis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mercer-eigen" | "mercer" | "kl" => Ok(Basis::MercerEigen),
            "trigonometric" | "trig" | "cosine" => Ok(Basis::Trigonometric),
            "haar" => Ok(Basis::Haar),
            other => Err(invalid(format!("unknown basis `{other}`"))),
        }
    }
}

/// Basis functions at the grid nodes, one column each, in their natural order.
pub fn basis_functions(basis: Basis, kernel: &FredholmKernel) -> Result<DMatrix<f64>> {
    let grid = kernel.grid();
    let n = grid.len();
    let horizon = grid.horizon();
    Ok(match basis {
        Basis::MercerEigen => full_eigenbasis(&kernel.covariance(), grid),
        Basis::Trigonometric => {
            let top = n - 1;
            DMatrix::from_fn(n, n, |i, j| {
                let s = grid.node(i);
                let c = (j as f64 * std::f64::consts::PI * s / horizon).cos();
                if j == 0 || j == top {
                    c / horizon.sqrt()
                } else {
                    c * (2.0 / horizon).sqrt()
                }
            })
        }
        Basis::Haar => haar_basis(grid),
    })
}

/// All `n` eigenfunctions of the weighted covariance, including its null space,
/// ordered by decreasing eigenvalue.
fn full_eigenbasis(cov: &DMatrix<f64>, grid: &TimeGrid) -> DMatrix<f64> {
    let sw = grid.sqrt_weights();
    let n = grid.len();
    let b = DMatrix::from_fn(n, n, |i, j| sw[i] * cov[(i, j)] * sw[j]);
    let eig = ((&b + b.transpose()) * 0.5).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    DMatrix::from_fn(n, n, |i, k| eig.eigenvectors[(i, order[k])] / sw[i])
}

fn haar_basis(grid: &TimeGrid) -> DMatrix<f64> {
    let n = grid.len();
    let w = grid.weights();
    let total: f64 = w.iter().sum();
    let mut out = DMatrix::zeros(n, n);
    out.column_mut(0).fill(1.0 / total.sqrt());
    let mut queue = std::collections::VecDeque::from([(0usize, n)]);
    let mut col = 1;
    while let Some((lo, hi)) = queue.pop_front() {
        if hi - lo < 2 {
            continue;
        }
        let mid = lo + (hi - lo) / 2;
        let wl: f64 = w[lo..mid].iter().sum();
        let wr: f64 = w[mid..hi].iter().sum();
        let ws = wl + wr;
        let a = (wr / (wl * ws)).sqrt();
        let b = (wl / (wr * ws)).sqrt();
        for i in lo..mid {
            out[(i, col)] = a;
        }
        for i in mid..hi {
            out[(i, col)] = -b;
        }
        col += 1;
        queue.push_back((lo, mid));
        queue.push_back((mid, hi));
    }
    out
}

/// Expansion functions `a_j(t_i) = Σ_k w_k φ_j(s_k) K(t_i, s_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesExpansion {
    grid: TimeGrid,
    basis: Basis,
    /// `nodes × m`.
    table: DMatrix<f64>,
}

impl SeriesExpansion {
    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn rank(&self) -> usize {
        self.table.ncols()
    }

    pub fn table(&self) -> &DMatrix<f64> {
        &self.table
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn function(&self, j: usize) -> Vec<f64> {
        self.table.column(j).iter().copied().collect()
    }
}

/// Projects the kernel onto the first `m` basis functions.
pub fn series_expand(kernel: &FredholmKernel, basis: Basis, m: usize) -> Result<SeriesExpansion> {
    let grid = kernel.grid();
    let phi = basis_functions(basis, kernel)?;
    if m > phi.ncols() {
        return Err(Error::InvalidBasis(format!(
            "rank {m} exceeds the {} available functions",
            phi.ncols()
        )));
    }
    let phi = phi.columns(0, m).into_owned();
    let w = DVector::from_column_slice(grid.weights());
    let mut wphi = phi.clone();
    for mut c in wphi.column_iter_mut() {
        c.component_mul_assign(&w);
    }
    let gram = phi.transpose() * &wphi;
    let dev = (gram - DMatrix::<f64>::identity(m, m)).amax();
    if m > 0 && dev > 1e-8 {
        return Err(Error::InvalidBasis(format!(
            "{basis} deviates from orthonormality by {dev:e} on this grid"
        )));
    }
    Ok(SeriesExpansion {
        grid: grid.clone(),
        basis,
        table: kernel.matrix() * wphi,
    })
}

/// `R(t, t) - Σ_{j<m} a_j(t)²`.
pub fn series_truncation_error(expansion: &SeriesExpansion, model: &CovarianceModel, t: f64) -> Result<f64> {
    let i = expansion.grid.require_node(t)?;
    let captured: f64 = expansion.table.row(i).iter().map(|a| a * a).sum();
    Ok(model.evaluate(t, t)? - captured)
}

/// `Σ_i w_i (R(t_i, t_i) - Σ_j a_j(t_i)²)`.
pub fn integrated_truncation_error(expansion: &SeriesExpansion, model: &CovarianceModel) -> Result<f64> {
    let g = &expansion.grid;
    g.nodes()
        .iter()
        .zip(g.weights())
        .map(|(&t, w)| Ok(w * series_truncation_error(expansion, model, t)?))
        .sum()
}

/// Simulates `X = Σ_j a_j ξ_j` from an expansion.
pub fn simulate_series(expansion: &SeriesExpansion, n_paths: u64, seed: u64) -> Result<PathEnsemble> {
    check_paths(n_paths)?;
    let a = &expansion.table;
    let blocks = noise::run_chunked(n_paths, |r| noise::simulate_block(a, seed, r));
    PathEnsemble::new(
        expansion.grid.clone(),
        assemble(blocks, a.nrows()),
        seed,
        format!("series:{}", expansion.basis),
    )
}

/// Conditioning data for bridges on `∫ g_i dX = 0`.
#[derive(Clone, Debug)]
pub struct BridgeSpec {
    functionals: Vec<StepFunction>,
    /// `g*_i = K* g_i`, one column per functional.
    transferred: DMatrix<f64>,
    gram: DMatrix<f64>,
    gram_inverse: DMatrix<f64>,
    condition: f64,
}

/// Largest admissible condition number of the conditioning Gram matrix.
pub const MAX_BRIDGE_CONDITION: f64 = 1e12;

impl BridgeSpec {
    pub fn functionals(&self) -> &[StepFunction] {
        &self.functionals
    }

    pub fn transferred(&self) -> &DMatrix<f64> {
        &self.transferred
    }

    /// `⟨g_i, g_j⟩_{H_T}`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn len(&self) -> usize {
        self.functionals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functionals.is_empty()
    }

    /// `∫_{t_k}^T g*(v) g*(v)ᵀ dv` by the trapezoid tail rule.
    pub fn running_gram(&self, grid: &TimeGrid, k: usize) -> DMatrix<f64> {
        let tw = grid.tail_weights(k);
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for (off, w) in tw.iter().enumerate() {
            let g = self.transferred.row(k + off);
            m += *w * g.transpose() * g;
        }
        m
    }
}

/// Transfers the functionals and checks that they are independent.
pub fn bridge_gram(kernel: &FredholmKernel, g: Vec<StepFunction>) -> Result<BridgeSpec> {
    if g.is_empty() {
        return Err(invalid("a bridge needs at least one functional"));
    }
    let grid = kernel.grid();
    let n = grid.len();
    let mut transferred = DMatrix::zeros(n, g.len());
    for (i, gi) in g.iter().enumerate() {
        let col = adjoint_apply(kernel, gi)?;
        transferred.column_mut(i).copy_from_slice(col.values());
    }
    let mut weighted = transferred.clone();
    for (j, w) in grid.weights().iter().enumerate() {
        weighted.row_mut(j).scale_mut(*w);
    }
    let gram = transferred.transpose() * &weighted;
    let gram = (&gram + gram.transpose()) * 0.5;
    let eig = gram.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_BRIDGE_CONDITION) {
        return Err(Error::DependentFunctionals { condition });
    }
    let gram_inverse = gram
        .clone()
        .try_inverse()
        .ok_or(Error::DependentFunctionals { condition })?;
    Ok(BridgeSpec {
        functionals: g,
        transferred,
        gram,
        gram_inverse,
        condition,
    })
}

/// `⟨1_{t_i}, g_j⟩_{H_T} = Σ_k w_k K(t_i, s_k) g*_j(s_k)`, one row per node.
fn bridge_loadings(kernel: &FredholmKernel, spec: &BridgeSpec) -> DMatrix<f64> {
    let mut wg = spec.transferred.clone();
    for (j, w) in kernel.grid().weights().iter().enumerate() {
        wg.row_mut(j).scale_mut(*w);
    }
    kernel.matrix() * wg
}

/// `∫ g_i dX = Σ_k c_k X(τ_k)` for each path column, one row per functional.
pub fn functional_values(spec: &BridgeSpec, grid: &TimeGrid, paths: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut y = DMatrix::zeros(spec.len(), paths.ncols());
    for (i, g) in spec.functionals.iter().enumerate() {
        for (tau, c) in g.indicator_expansion() {
            let k = grid.require_node(tau)?;
            for p in 0..paths.ncols() {
                y[(i, p)] += c * paths[(k, p)];
            }
        }
    }
    Ok(y)
}

/// Covariance of the bridge at all nodes, `C - L G^{-1} Lᵀ` with `C = K W Kᵀ`
/// and `L_{ij} = ⟨1_{t_i}, g_j⟩_{H_T}`.
pub fn bridge_covariance(kernel: &FredholmKernel, spec: &BridgeSpec) -> DMatrix<f64> {
    let l = bridge_loadings(kernel, spec);
    let c = kernel.covariance() - &l * &spec.gram_inverse * l.transpose();
    (&c + c.transpose()) * 0.5
}

/// Kernel of the orthogonal bridge, `K - L G^{-1} g*ᵀ`, driven by the same noise as `K`.
pub fn orthogonal_bridge_kernel(kernel: &FredholmKernel, spec: &BridgeSpec) -> Result<FredholmKernel> {
    let l = bridge_loadings(kernel, spec);
    let matrix = kernel.matrix() - l * &spec.gram_inverse * spec.transferred.transpose();
    FredholmKernel::new(
        kernel.grid().clone(),
        matrix,
        false,
        format!("orthogonal-bridge:{}", kernel.provenance()),
    )
}

/// Precomputed orthogonal projection `X ↦ X - C G^{-1} ∫g dX`.
#[derive(Clone, Debug)]
pub struct OrthogonalBridge {
    grid: TimeGrid,
    spec: BridgeSpec,
    projection: DMatrix<f64>,
}

impl OrthogonalBridge {
    pub fn new(kernel: &FredholmKernel, spec: &BridgeSpec) -> Self {
        Self {
            grid: kernel.grid().clone(),
            spec: spec.clone(),
            projection: bridge_loadings(kernel, spec) * &spec.gram_inverse,
        }
    }

    /// Bridged copies of the path columns.
    pub fn apply(&self, paths: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let y = functional_values(&self.spec, &self.grid, paths)?;
        Ok(paths - &self.projection * y)
    }
}

/// Orthogonal bridge of every path of the ensemble.
pub fn bridge_orthogonal(kernel: &FredholmKernel, spec: &BridgeSpec, ensemble: &PathEnsemble) -> Result<PathEnsemble> {
    kernel.same_grid_public(ensemble.grid())?;
    let bridge = OrthogonalBridge::new(kernel, spec);
    PathEnsemble::new(
        ensemble.grid.clone(),
        bridge.apply(&ensemble.paths)?,
        ensemble.seed,
        format!("orthogonal-bridge:{}", ensemble.provenance),
    )
}

/// `∫ g_i dX` for each path of an ensemble, one row per functional.
pub fn bridge_functionals(spec: &BridgeSpec, ensemble: &PathEnsemble) -> Result<DMatrix<f64>> {
    functional_values(spec, &ensemble.grid, &ensemble.paths)
}

/// Sequential conditioning of the white noise on `Σ_j g*_j √w_j ξ_j = 0`.
///
/// With `M_j = Σ_{v ≥ j} w_v g*_v g*_vᵀ` and `Y_j = Σ_{u<j} g*_u ζ_u`, the increment
/// `ζ_j` is drawn from its conditional law given the remaining sum equals `-Y_j`:
/// mean `-w_j g*_jᵀ M_j⁺ Y_j` and variance `w_j - w_j² g*_jᵀ M_j⁺ g*_j`.
/// The drift is adapted to the noise. Paths are finished by removing the rounding
/// residual of the constraint along `w ⊙ g* G^{-1}`.
#[derive(Clone, Debug)]
pub struct CanonicalBridge {
    kernel: DMatrix<f64>,
    transferred: DMatrix<f64>,
    /// `w ⊙ g* G^{-1}`, `nodes × functionals`.
    correction: DMatrix<f64>,
    /// Row `j` is `w_j M_j⁺ g*_j`.
    drift: DMatrix<f64>,
    sd: Vec<f64>,
}

fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let top = eig.eigenvalues.amax();
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l > 1e-12 * top && l > 0.0 {
            let v = eig.eigenvectors.column(k);
            out += (1.0 / l) * v * v.transpose();
        }
    }
    out
}

impl CanonicalBridge {
    pub fn new(kernel: &FredholmKernel, spec: &BridgeSpec) -> Self {
        let grid = kernel.grid();
        let w = grid.weights();
        let n = grid.len();
        let g = &spec.transferred;
        let k = spec.len();
        let mut drift = DMatrix::zeros(n, k);
        let mut sd = vec![0.0; n];
        let mut tail = DMatrix::zeros(k, k);
        let mut tails = Vec::with_capacity(n);
        for j in (0..n).rev() {
            let gj = g.row(j);
            tail += w[j] * gj.transpose() * gj;
            tails.push(tail.clone());
        }
        tails.reverse();
        for j in 0..n {
            let pinv = pseudo_inverse(&tails[j]);
            let gj = g.row(j).transpose();
            let a = w[j] * &pinv * &gj;
            let var = w[j] - w[j] * (gj.transpose() * &a)[(0, 0)];
            drift.row_mut(j).copy_from(&a.transpose());
            sd[j] = var.max(0.0).sqrt();
        }
        let mut correction = g * &spec.gram_inverse;
        for (j, wj) in w.iter().enumerate() {
            correction.row_mut(j).scale_mut(*wj);
        }
        Self {
            kernel: kernel.matrix().clone(),
            transferred: g.clone(),
            correction,
            drift,
            sd,
        }
    }

    /// Conditioned noise increments `ζ_j` for one vector of standard normals.
    pub fn conditioned_increments(&self, xi: &[f64]) -> Vec<f64> {
        let k = self.transferred.ncols();
        let mut y = vec![0.0; k];
        let mut zeta = vec![0.0; xi.len()];
        for j in 0..xi.len() {
            let mut z = self.sd[j] * xi[j];
            for i in 0..k {
                z -= self.drift[(j, i)] * y[i];
            }
            zeta[j] = z;
            for i in 0..k {
                y[i] += self.transferred[(j, i)] * z;
            }
        }
        zeta
    }

    fn finish(&self, zeta: DMatrix<f64>) -> DMatrix<f64> {
        let residual = self.transferred.transpose() * &zeta;
        &self.kernel * (zeta - &self.correction * residual)
    }

    pub fn path(&self, xi: &[f64]) -> Vec<f64> {
        let z = DMatrix::from_vec(xi.len(), 1, self.conditioned_increments(xi));
        self.finish(z).iter().copied().collect()
    }

    /// Bridged paths for a range of noise streams, one column per path.
    pub fn block(&self, seed: u64, paths: Range<u64>) -> DMatrix<f64> {
        let n = self.kernel.ncols();
        let xi = noise::noise_block(seed, paths, n);
        let mut zeta = DMatrix::zeros(n, xi.ncols());
        for (c, col) in xi.column_iter().enumerate() {
            zeta.column_mut(c)
                .copy_from_slice(&self.conditioned_increments(col.as_slice()));
        }
        self.finish(zeta)
    }
}

/// Canonical-type bridge path for one noise vector.
pub fn bridge_canonical(kernel: &FredholmKernel, spec: &BridgeSpec, noise: &NoiseVector) -> Result<GridFunction> {
    if noise.len() != kernel.grid().len() {
        return Err(invalid("noise length does not match the grid"));
    }
    Ok(GridFunction(CanonicalBridge::new(kernel, spec).path(noise.values())))
}

/// Canonical-type bridge ensemble.
pub fn simulate_canonical_bridge(
    kernel: &FredholmKernel,
    spec: &BridgeSpec,
    n_paths: u64,
    seed: u64,
) -> Result<PathEnsemble> {
    check_paths(n_paths)?;
    let bridge = CanonicalBridge::new(kernel, spec);
    let blocks = noise::run_chunked(n_paths, |r| bridge.block(seed, r));
    PathEnsemble::new(
        kernel.grid().clone(),
        assemble(blocks, kernel.grid().len()),
        seed,
        format!("canonical-bridge:{}", kernel.provenance()),
    )
}

/// Drift kernel `g*(s)ᵀ M(u)^{-1} g*(u)` of the canonical bridge, with `M(u) = ∫_u^T g* g*ᵀ`.
///
/// For one functional this is `g*(s) g*(u) / ∫_u^T g*(v)² dv`.
pub fn canonical_drift_kernel(spec: &BridgeSpec, grid: &TimeGrid, s: usize, u: usize) -> Result<f64> {
    let m = spec.running_gram(grid, u);
    let inv = m
        .clone()
        .try_inverse()
        .filter(|_| m.determinant().abs() > 0.0)
        .ok_or(Error::DependentFunctionals { condition: f64::INFINITY })?;
    let gs = spec.transferred.row(s);
    let gu = spec.transferred.row(u).transpose();
    Ok((gs * inv * gu)[(0, 0)])
}

/// `ℓ(s, u)` tabulated on a grid, zero for `u > s`.
#[derive(Clone, Debug, PartialEq)]
pub struct VolterraKernel {
    grid: TimeGrid,
    matrix: DMatrix<f64>,
}

impl VolterraKernel {
    pub fn new(grid: TimeGrid, matrix: DMatrix<f64>) -> Result<Self> {
        let n = grid.len();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(invalid("Volterra kernel does not match the grid"));
        }
        for i in 0..n {
            for j in i + 1..n {
                if matrix[(i, j)] != 0.0 {
                    return Err(invalid("Volterra kernel must vanish for u > s"));
                }
            }
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(invalid("Volterra kernel has non-finite entries"));
        }
        Ok(Self { grid, matrix })
    }

    pub fn from_fn(grid: &TimeGrid, ell: impl Fn(f64, f64) -> f64) -> Self {
        let x = grid.nodes();
        let n = x.len();
        let matrix = DMatrix::from_fn(n, n, |i, j| if j <= i { ell(x[i], x[j]) } else { 0.0 });
        Self {
            grid: grid.clone(),
            matrix,
        }
    }

    /// `θ e^{-θ(s-u)} 1_{u ≤ s}`, the perturbation turning Brownian motion into the Langevin process.
    pub fn exponential(grid: &TimeGrid, theta: f64) -> Self {
        Self::from_fn(grid, |s, u| theta * (-theta * (s - u)).exp())
    }

    pub fn zero(grid: &TimeGrid) -> Self {
        let n = grid.len();
        Self {
            grid: grid.clone(),
            matrix: DMatrix::zeros(n, n),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

/// `K̃(t, s) = K(t, s) - ∫_s^T K(t, u) ℓ(u, s) du`.
pub fn volterra_perturb(kernel: &FredholmKernel, ell: &VolterraKernel) -> Result<FredholmKernel> {
    kernel.same_grid_public(&ell.grid)?;
    let grid = kernel.grid();
    let n = grid.len();
    let mut b = DMatrix::zeros(n, n);
    for k in 0..n {
        let tw = grid.tail_weights(k);
        for (off, w) in tw.iter().enumerate() {
            let j = k + off;
            b[(j, k)] = w * ell.matrix[(j, k)];
        }
    }
    let matrix = kernel.matrix() - kernel.matrix() * b;
    FredholmKernel::new(
        grid.clone(),
        matrix,
        false,
        format!("volterra-perturbation:{}", kernel.provenance()),
    )
}

/// `K^θ(t, u) = K(t, u) - θ ∫_0^t e^{-θ(t-s)} K(s, u) ds`.
pub fn langevin_kernel(kernel: &FredholmKernel, theta: f64) -> Result<FredholmKernel> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(invalid(format!("θ must be positive, got {theta}")));
    }
    let grid = kernel.grid();
    let x = grid.nodes();
    let n = grid.len();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        let hw = grid.head_weights(i);
        for (k, w) in hw.iter().enumerate() {
            a[(i, k)] = theta * w * (-theta * (x[i] - x[k])).exp();
        }
    }
    let matrix = kernel.matrix() - a * kernel.matrix();
    FredholmKernel::new(
        grid.clone(),
        matrix,
        false,
        format!("langevin(theta={theta}):{}", kernel.provenance()),
    )
}

/// Explicit Euler for `Y_t = -θ ∫_0^t Y_s ds + X_t`, one column per path.
pub fn euler_langevin(paths: &DMatrix<f64>, grid: &TimeGrid, theta: f64) -> DMatrix<f64> {
    let x = grid.nodes();
    let mut y = DMatrix::zeros(paths.nrows(), paths.ncols());
    for p in 0..paths.ncols() {
        let mut v = 0.0;
        for i in 1..paths.nrows() {
            v += -theta * v * (x[i] - x[i - 1]) + paths[(i, p)] - paths[(i - 1, p)];
            y[(i, p)] = v;
        }
    }
    y
}

/// Euler oracle for the Langevin equation driven by paths of `driver`.
pub fn langevin_simulate_euler(driver: &FredholmKernel, theta: f64, n_paths: u64, seed: u64) -> Result<PathEnsemble> {
    check_paths(n_paths)?;
    if !theta.is_finite() {
        return Err(invalid("θ must be finite"));
    }
    if driver.grid().rule() != QuadratureRule::Trapezoid {
        return Err(invalid("the Euler scheme needs a grid starting at 0"));
    }
    let loading = driver.noise_loading();
    let grid = driver.grid().clone();
    let blocks = noise::run_chunked(n_paths, |r| {
        euler_langevin(&noise::simulate_block(&loading, seed, r), &grid, theta)
    });
    PathEnsemble::new(
        grid,
        assemble(blocks, loading.nrows()),
        seed,
        format!("euler-langevin(theta={theta}):{}", driver.provenance()),
    )
}

impl FredholmKernel {
    pub(crate) fn same_grid_public(&self, other: &TimeGrid) -> Result<()> {
        if self.grid() == other {
            Ok(())
        } else {
            Err(invalid("objects live on different grids"))
        }
    }
}
