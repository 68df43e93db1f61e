//! CSV and JSON exchange formats for kernels, covariances and path ensembles.
//!
//! Matrices are written with a header row of node times. Numbers use the shortest
//! representation that round-trips, so identical inputs give identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceModel;
use crate::error::{invalid, Error, Result};
use crate::factorize::{FredholmKernel, ResidualReport};
use crate::numerics::{QuadratureRule, TimeGrid};
use crate::processes::PathEnsemble;

/// Grid description stored in manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub horizon: f64,
    pub rule: QuadratureRule,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GridRecord {
    pub fn of(grid: &TimeGrid) -> Self {
        Self {
            horizon: grid.horizon(),
            rule: grid.rule(),
            nodes: grid.nodes().to_vec(),
            weights: grid.weights().to_vec(),
        }
    }

    pub fn to_grid(&self) -> Result<TimeGrid> {
        TimeGrid::from_parts(self.horizon, self.nodes.clone(), self.weights.clone(), self.rule)
    }
}

/// JSON sidecar of an exported kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelManifest {
    pub provenance: String,
    pub symmetric: bool,
    pub residual: Option<ResidualReport>,
    #[serde(flatten)]
    pub grid: GridRecord,
}

/// JSON manifest of an exported ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub seed: u64,
    pub n_paths: usize,
    pub provenance: String,
    pub grid: GridRecord,
}

/// Path of the JSON file that accompanies a CSV file.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Writes `rows` under a header line, one record per row.
pub fn write_table<I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|x| x.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn time_header(times: &[f64]) -> Vec<String> {
    times.iter().map(|t| t.to_string()).collect()
}

fn parse_cell(cell: &str) -> Result<f64> {
    cell.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("`{cell}` is not a number")))
}

/// Reads a square matrix with a header row of node times.
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let times: Vec<f64> = r.headers()?.iter().map(parse_cell).collect::<Result<_>>()?;
    let n = times.len();
    let mut values = Vec::with_capacity(n * n);
    let mut rows = 0;
    for record in r.records() {
        let record = record?;
        if record.len() != n {
            return Err(Error::Parse(format!(
                "row {} has {} entries, expected {n}",
                rows + 1,
                record.len()
            )));
        }
        for cell in record.iter() {
            values.push(parse_cell(cell)?);
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Parse(format!("{rows} rows for {n} node times")));
    }
    Ok((times, DMatrix::from_row_slice(n, n, &values)))
}

fn matrix_rows(m: &DMatrix<f64>) -> impl Iterator<Item = Vec<f64>> + '_ {
    m.row_iter().map(|r| r.iter().copied().collect())
}

/// Writes the kernel matrix and its sidecar manifest.
pub fn write_kernel(path: &Path, kernel: &FredholmKernel, residual: Option<ResidualReport>) -> Result<()> {
    write_table(path, &time_header(kernel.grid().nodes()), matrix_rows(kernel.matrix()))?;
    let manifest = KernelManifest {
        provenance: kernel.provenance().to_string(),
        symmetric: kernel.is_symmetric(),
        residual,
        grid: GridRecord::of(kernel.grid()),
    };
    write_json(&sidecar_path(path), &manifest)
}

/// Reads a kernel written by [`write_kernel`].
pub fn read_kernel(path: &Path) -> Result<(FredholmKernel, KernelManifest)> {
    let manifest: KernelManifest = read_json(&sidecar_path(path))?;
    let (times, matrix) = read_matrix_csv(path)?;
    if times != manifest.grid.nodes {
        return Err(Error::Parse("kernel header does not match the manifest nodes".into()));
    }
    let grid = manifest.grid.to_grid()?;
    let kernel = FredholmKernel::new(grid, matrix, manifest.symmetric, manifest.provenance.clone())?;
    Ok((kernel, manifest))
}

/// Covariance model from a tabulated matrix; asymmetric input is rejected.
pub fn read_covariance_csv(path: &Path) -> Result<CovarianceModel> {
    let (times, matrix) = read_matrix_csv(path)?;
    if times.first().copied() != Some(0.0) {
        return Err(invalid("tabulated covariance must start at time 0"));
    }
    CovarianceModel::user_tabulated(times, matrix)
}

pub fn write_covariance_csv(path: &Path, times: &[f64], matrix: &DMatrix<f64>) -> Result<()> {
    write_table(path, &time_header(times), matrix_rows(matrix))
}

/// Writes paths as rows under a header of node times, plus a manifest.
pub fn write_ensemble(path: &Path, ensemble: &PathEnsemble) -> Result<()> {
    let rows = ensemble
        .paths()
        .column_iter()
        .map(|c| c.iter().copied().collect::<Vec<f64>>());
    write_table(path, &time_header(ensemble.grid().nodes()), rows)?;
    let manifest = EnsembleManifest {
        seed: ensemble.seed(),
        n_paths: ensemble.n_paths(),
        provenance: ensemble.provenance().to_string(),
        grid: GridRecord::of(ensemble.grid()),
    };
    write_json(&sidecar_path(path), &manifest)
}

/// Reads an ensemble written by [`write_ensemble`].
pub fn read_ensemble(path: &Path) -> Result<PathEnsemble> {
    let manifest: EnsembleManifest = read_json(&sidecar_path(path))?;
    let grid = manifest.grid.to_grid()?;
    let mut r = csv::Reader::from_path(path)?;
    let n = grid.len();
    let mut values = Vec::with_capacity(n * manifest.n_paths);
    let mut count = 0;
    for record in r.records() {
        let record = record?;
        if record.len() != n {
            return Err(Error::Parse(format!("path {count} has {} nodes, expected {n}", record.len())));
        }
        for cell in record.iter() {
            values.push(parse_cell(cell)?);
        }
        count += 1;
    }
    if count != manifest.n_paths {
        return Err(Error::Parse(format!("{count} paths, manifest says {}", manifest.n_paths)));
    }
    PathEnsemble::new(grid, DMatrix::from_vec(n, count, values), manifest.seed, manifest.provenance)
}
