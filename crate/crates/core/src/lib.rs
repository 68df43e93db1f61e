//! Gaussian processes through Fredholm representations on a finite horizon.
//!
//! ```
//! use fredholm::covariance::CovarianceModel;
//! use fredholm::factorize::{build_fredholm_kernel, factorization_residual, mercer_decompose};
//! use fredholm::numerics::TimeGrid;
//! use fredholm::processes::simulate;
//!
//! let model = CovarianceModel::brownian_motion(1.0)?;
//! let grid = TimeGrid::uniform(1.0, 256)?;
//! let kernel = build_fredholm_kernel(&mercer_decompose(&model, &grid, 1.0, 1e-12)?);
//! assert!(factorization_residual(&kernel, &model)?.absolute < 1e-10);
//! let paths = simulate(&kernel, 1_000, 42)?;
//! assert_eq!(paths.n_paths(), 1_000);
//! # Ok::<(), fredholm::Error>(())
//! ```

// negated comparisons reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::needless_range_loop)]

pub mod chaos;
pub mod cli;
pub mod covariance;
pub mod error;
pub mod factorize;
pub mod io;
pub mod noise;
pub mod numerics;
pub mod processes;
pub mod transfer;

pub use covariance::{CovarianceKind, CovarianceModel, TabulatedFunction};
pub use error::{Error, Result};
pub use factorize::{FredholmKernel, KnownKernel, MercerDecomposition};
pub use noise::NoiseVector;
pub use numerics::{QuadratureRule, TimeGrid};
pub use transfer::{GridFunction, StepFunction};
