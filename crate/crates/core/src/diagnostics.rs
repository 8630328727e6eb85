//! Growth diagnostics for the negative part of the HAC kernel.
//!
//! For each bandwidth `b` on a grid the report gives
//!
//! * `M(b,1) = n⁻¹ Σ_i Σ_j K_ij`,
//! * `M⁻(b,k) = n⁻¹ Σ_i (Σ_j |K⁻_ij|)^k` for `k = 1, 2`,
//! * `max_s J⁻(s,b)` with `J⁻(s,b) = Σ_{ℓ(i,j)=s} r_i r_j`, `r_i = Σ_k |K⁻_ik|`,
//! * the smallest kernel eigenvalue,
//!
//! and [`loglog_slope`] fits the growth rate of each column in `b`. The
//! numbers are descriptive; nothing here accepts or rejects a bandwidth.

use rayon::prelude::*;
use serde::Serialize;

use crate::covariance::{build_kernel, psd_split_with, DEFAULT_EIGEN_TOL, DEFAULT_SIZE_CAP};
use crate::error::{Error, Result};
use crate::graph::{j_count_profile, Graph};

pub fn default_grid() -> Vec<u32> {
    (1..=10).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NegativeMoments {
    pub m_minus_1: f64,
    pub m_minus_2: f64,
    pub max_j_minus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRow {
    pub b: u32,
    pub m_1: f64,
    pub m_minus_1: f64,
    pub m_minus_2: f64,
    pub max_j_minus: f64,
    pub min_eigenvalue: f64,
    pub kernel_psd: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub used: usize,
    /// Grid points left out because the value or the bandwidth was not
    /// positive.
    pub dropped: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Slopes {
    pub m_1: Option<SlopeFit>,
    pub m_minus_1: Option<SlopeFit>,
    pub m_minus_2: Option<SlopeFit>,
    pub max_j_minus: Option<SlopeFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub n: usize,
    pub grid: Vec<u32>,
    pub rows: Vec<DiagnosticsRow>,
    pub slopes: Slopes,
}

fn row_at(g: &Graph, b: u32, size_cap: usize) -> Result<DiagnosticsRow> {
    let units: Vec<usize> = (0..g.n()).collect();
    let kernel = build_kernel(g, &units, b)?;
    let split = psd_split_with(&kernel, DEFAULT_EIGEN_TOL, size_cap)?;
    let n = g.n().max(1) as f64;
    let r: Vec<f64> = split
        .k_minus
        .row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum())
        .collect();
    let m_minus_1 = r.iter().sum::<f64>() / n;
    let m_minus_2 = r.iter().map(|v| v * v).sum::<f64>() / n;
    let max_j_minus = j_count_profile(g, &r)?.into_iter().fold(0.0, f64::max);
    let m_1 = kernel.nnz() as f64 / n;
    let min_eigenvalue = if split.eigenvalues.is_empty() {
        0.0
    } else {
        split.min_eigenvalue()
    };
    Ok(DiagnosticsRow {
        b,
        m_1,
        m_minus_1,
        m_minus_2,
        max_j_minus,
        min_eigenvalue,
        kernel_psd: split.kernel_psd(),
    })
}

/// `(M⁻(b,1), M⁻(b,2), max_s J⁻(s,b))` for the kernel over all units.
pub fn kernel_negative_moments(g: &Graph, b: u32) -> Result<NegativeMoments> {
    let row = row_at(g, b, DEFAULT_SIZE_CAP)?;
    Ok(NegativeMoments {
        m_minus_1: row.m_minus_1,
        m_minus_2: row.m_minus_2,
        max_j_minus: row.max_j_minus,
    })
}

/// OLS slope of `log(value)` on `log(b)` with an intercept.
pub fn loglog_slope(values: &[f64], grid: &[u32]) -> Result<SlopeFit> {
    if values.len() != grid.len() {
        return Err(Error::Shape(format!(
            "{} values for {} grid points",
            values.len(),
            grid.len()
        )));
    }
    let mut pts = Vec::new();
    let mut dropped = Vec::new();
    for (&v, &b) in values.iter().zip(grid) {
        if v > 0.0 && b > 0 && v.is_finite() {
            pts.push(((b as f64).ln(), v.ln()));
        } else {
            dropped.push(b);
        }
    }
    if !dropped.is_empty() {
        log::warn!("log-log slope drops non-positive points at b = {dropped:?}");
    }
    let m = pts.len();
    if m < 2 {
        return Err(Error::TooFewPoints);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::TooFewPoints);
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Ok(SlopeFit {
        slope,
        intercept: my - slope * mx,
        used: m,
        dropped,
    })
}

pub fn diagnose(g: &Graph, grid: &[u32]) -> Result<DiagnosticsReport> {
    diagnose_with(g, grid, DEFAULT_SIZE_CAP)
}

pub fn diagnose_with(g: &Graph, grid: &[u32], size_cap: usize) -> Result<DiagnosticsReport> {
    if g.n() > size_cap {
        return Err(Error::SizeGuard {
            size: g.n(),
            cap: size_cap,
        });
    }
    let rows: Vec<DiagnosticsRow> = grid
        .par_iter()
        .map(|&b| row_at(g, b, size_cap))
        .collect::<Result<Vec<_>>>()?;
    let column = |f: fn(&DiagnosticsRow) -> f64| -> Option<SlopeFit> {
        let vals: Vec<f64> = rows.iter().map(f).collect();
        loglog_slope(&vals, grid).ok()
    };
    let slopes = Slopes {
        m_1: column(|r| r.m_1),
        m_minus_1: column(|r| r.m_minus_1),
        m_minus_2: column(|r| r.m_minus_2),
        max_j_minus: column(|r| r.max_j_minus),
    };
    Ok(DiagnosticsReport {
        n: g.n(),
        grid: grid.to_vec(),
        rows,
        slopes,
    })
}
