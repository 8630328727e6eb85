//! Design-based estimation and inference for experiments on networks.
//!
//! The crate follows one pipeline. A [`graph::Graph`] and a treatment vector
//! feed an [`exposure::ExposureMapping`]. A [`design::Design`] supplies
//! generalized propensity scores. [`estimate`] fits inverse-probability
//! weighted regressions that reproduce Hájek and Horvitz–Thompson estimators.
//! [`covariance`] turns the residuals into network-HAC standard errors, with
//! the eigen-split repair that keeps them positive semidefinite.
//! [`simulate`] and [`diagnostics`] wrap the same pieces into a
//! finite-population Monte-Carlo harness and kernel diagnostics.
//!
//! Every stochastic routine takes an explicit `u64` seed. Random streams are
//! keyed by `(seed, draw index)`, so results do not depend on the size of the
//! rayon thread pool.

pub mod covariance;
pub mod design;
pub mod diagnostics;
pub mod error;
pub mod estimate;
pub mod exposure;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod rng;
pub mod simulate;

pub use error::{Error, ErrorKind, Result};
pub use graph::Graph;
