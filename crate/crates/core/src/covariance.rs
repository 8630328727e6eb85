//! Network-HAC covariance estimation.
//!
//! The uniform kernel `K_ij = 1(ℓ(i, j) ≤ b)` over the effective sample enters
//! the sandwich
//!
//! ```text
//! V = (Cᵀ W C)⁻¹ (Σ_ij u_i K_ij u_jᵀ) (Cᵀ W C)⁻¹,   u_i = w_i e_i c_i
//! ```
//!
//! `K` need not be positive semidefinite, so [`psd_split`] writes
//! `K = K⁺ − K⁻` with both parts PSD and [`hac_cov_plus`] uses `K⁺` in the
//! middle. The identity kernel gives the Eicker–Huber–White sandwich.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{Contrast, Dataset, WlsFit};
use crate::graph::{Bfs, Graph};
use crate::linalg::symmetrize;

pub const DEFAULT_EIGEN_TOL: f64 = 1e-9;
pub const DEFAULT_SIZE_CAP: usize = 20_000;
pub const Z_95: f64 = 1.96;

/// Units per parallel block in kernel sums.
const ROW_CHUNK: usize = 256;
const ROUNDOFF_TOL: f64 = 1e-12;

/// Tie rule for rounding the bandwidth to an integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    #[default]
    HalfAwayFromZero,
    HalfEven,
    HalfDown,
}

impl Rounding {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Rounding::HalfAwayFromZero => v.round(),
            Rounding::HalfEven => v.round_ties_even(),
            Rounding::HalfDown => (v - 0.5).ceil(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthBranch {
    /// `b̃ = APL/2`.
    HalfPathLength,
    /// `b̃ = APL^{1/3}`.
    CubeRoot,
    /// Cube root used because the average degree is at most one.
    CubeRootFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandwidthChoice {
    pub b: u32,
    pub b_tilde: f64,
    pub branch: BandwidthBranch,
}

/// Bandwidth rule given `ln n / ln δ` directly (`None` when `δ ≤ 1`).
pub fn bandwidth_from_ratio(
    apl: f64,
    log_ratio: Option<f64>,
    k: u32,
    rounding: Rounding,
) -> BandwidthChoice {
    let (b_tilde, branch) = match log_ratio {
        Some(r) if apl < 2.0 * r => (apl / 2.0, BandwidthBranch::HalfPathLength),
        Some(_) => (apl.cbrt(), BandwidthBranch::CubeRoot),
        None => (apl.cbrt(), BandwidthBranch::CubeRootFallback),
    };
    let b = rounding.apply(b_tilde.max(2.0 * k as f64)).max(0.0) as u32;
    BandwidthChoice { b, b_tilde, branch }
}

/// `b = round(max(b̃, 2K))` with `b̃ = APL/2` when `APL < 2 ln n / ln δ`
/// and `APL^{1/3}` otherwise.
pub fn bandwidth_select(apl: f64, n: usize, avg_degree: f64, k: u32) -> BandwidthChoice {
    bandwidth_select_with(apl, n, avg_degree, k, Rounding::default())
}

pub fn bandwidth_select_with(
    apl: f64,
    n: usize,
    avg_degree: f64,
    k: u32,
    rounding: Rounding,
) -> BandwidthChoice {
    let ratio = if avg_degree > 1.0 {
        Some((n as f64).ln() / avg_degree.ln())
    } else {
        log::warn!("average degree {avg_degree} <= 1; bandwidth falls back to APL^(1/3)");
        None
    };
    bandwidth_from_ratio(apl, ratio, k, rounding)
}

/// Quadratic forms `Uᵀ K U` for a symmetric kernel.
pub trait KernelOp: Sync {
    fn dim(&self) -> usize;
    fn quad(&self, u: &DMatrix<f64>) -> DMatrix<f64>;

    fn quad_vec(&self, a: &[f64]) -> f64 {
        let u = DMatrix::from_column_slice(a.len(), 1, a);
        self.quad(&u)[(0, 0)]
    }
}

/// Sparse 0/1 kernel over a list of units.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub b: u32,
    /// Population ids of the rows, in row order.
    pub units: Vec<usize>,
    /// Sorted local column indices of the ones in each row.
    pub rows: Vec<Vec<usize>>,
}

pub fn build_kernel(g: &Graph, units: &[usize], b: u32) -> Result<KernelMatrix> {
    let n = g.n();
    let mut local = vec![usize::MAX; n];
    for (k, &u) in units.iter().enumerate() {
        if u >= n {
            return Err(Error::UnitOutOfRange { unit: u, n });
        }
        local[u] = k;
    }
    let rows = units
        .par_iter()
        .map_init(
            || Bfs::new(n),
            |bfs, &u| {
                let mut row = Vec::new();
                bfs.run(g, u, Some(b), |v, _| {
                    if local[v] != usize::MAX {
                        row.push(local[v]);
                    }
                });
                row.sort_unstable();
                row
            },
        )
        .collect();
    Ok(KernelMatrix {
        b,
        units: units.to_vec(),
        rows,
    })
}

impl KernelMatrix {
    pub fn identity(units: &[usize]) -> Self {
        KernelMatrix {
            b: 0,
            units: units.to_vec(),
            rows: (0..units.len()).map(|k| vec![k]).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i].binary_search(&j).is_ok() as u8 as f64
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &j in row {
                m[(i, j)] = 1.0;
            }
        }
        m
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.len() as f64).collect()
    }
}

impl KernelOp for KernelMatrix {
    fn dim(&self) -> usize {
        self.n()
    }

    fn quad(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        let p = u.ncols();
        let starts: Vec<usize> = (0..self.n()).step_by(ROW_CHUNK).collect();
        let partial: Vec<DMatrix<f64>> = starts
            .par_iter()
            .map(|&s| {
                let mut acc = DMatrix::zeros(p, p);
                let mut ku = vec![0.0; p];
                for i in s..(s + ROW_CHUNK).min(self.n()) {
                    ku.iter_mut().for_each(|v| *v = 0.0);
                    for &j in &self.rows[i] {
                        for c in 0..p {
                            ku[c] += u[(j, c)];
                        }
                    }
                    for a in 0..p {
                        let ua = u[(i, a)];
                        if ua != 0.0 {
                            for c in 0..p {
                                acc[(a, c)] += ua * ku[c];
                            }
                        }
                    }
                }
                acc
            })
            .collect();
        partial.into_iter().fold(DMatrix::zeros(p, p), |a, b| a + b)
    }
}

impl KernelOp for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn quad(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        u.transpose() * (self * u)
    }
}

/// `K = K⁺ − K⁻` with both parts positive semidefinite.
#[derive(Debug, Clone)]
pub struct KernelSplit {
    pub k_plus: DMatrix<f64>,
    pub k_minus: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub eigen_tol: f64,
    /// Spectral norm `‖K‖`.
    pub norm: f64,
}

impl KernelSplit {
    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Whether the kernel had no eigenvalue below `−eigen_tol·‖K‖`.
    pub fn kernel_psd(&self) -> bool {
        self.min_eigenvalue() >= -self.eigen_tol * self.norm
    }
}

pub fn psd_split(k: &KernelMatrix) -> Result<KernelSplit> {
    psd_split_with(k, DEFAULT_EIGEN_TOL, DEFAULT_SIZE_CAP)
}

pub fn psd_split_with(k: &KernelMatrix, eigen_tol: f64, size_cap: usize) -> Result<KernelSplit> {
    if k.n() > size_cap {
        return Err(Error::SizeGuard {
            size: k.n(),
            cap: size_cap,
        });
    }
    split_dense(&k.to_dense(), eigen_tol)
}

/// Eigen-split of any symmetric dense matrix.
pub fn split_dense(k: &DMatrix<f64>, eigen_tol: f64) -> Result<KernelSplit> {
    let n = k.nrows();
    if n == 0 {
        return Ok(KernelSplit {
            k_plus: DMatrix::zeros(0, 0),
            k_minus: DMatrix::zeros(0, 0),
            eigenvalues: Vec::new(),
            eigen_tol,
            norm: 0.0,
        });
    }
    let eig = SymmetricEigen::try_new(symmetrize(k), f64::EPSILON, 0)
        .ok_or(Error::EigenNonConvergence)?;
    let norm = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let cut = eigen_tol * norm;
    let q = &eig.eigenvectors;
    let mut qp = q.clone();
    let mut qm = q.clone();
    for (c, &lam) in eig.eigenvalues.iter().enumerate() {
        let (pos, neg) = if lam.abs() <= cut {
            (0.0, 0.0)
        } else if lam > 0.0 {
            (lam, 0.0)
        } else {
            (0.0, -lam)
        };
        qp.column_mut(c).scale_mut(pos);
        qm.column_mut(c).scale_mut(neg);
    }
    let k_plus = symmetrize(&(qp * q.transpose()));
    let k_minus = symmetrize(&(qm * q.transpose()));
    Ok(KernelSplit {
        k_plus,
        k_minus,
        eigenvalues: eig.eigenvalues.as_slice().to_vec(),
        eigen_tol,
        norm,
    })
}

fn upper_left(v: DMatrix<f64>, s: usize, submatrix: bool) -> DMatrix<f64> {
    if submatrix {
        v.view((0, 0), (s, s)).into_owned()
    } else {
        v
    }
}

/// Sandwich covariance of the fit's coefficients with kernel `k`. With
/// `submatrix` only the `|𝒯| × |𝒯|` block of the cell coefficients is
/// returned.
pub fn hac_cov<K: KernelOp + ?Sized>(fit: &WlsFit, k: &K, submatrix: bool) -> Result<DMatrix<f64>> {
    if k.dim() != fit.n() {
        return Err(Error::Shape(format!(
            "kernel covers {} units, the fit has {}",
            k.dim(),
            fit.n()
        )));
    }
    let meat = k.quad(&fit.scores());
    let v = &fit.bread_inv * meat * &fit.bread_inv;
    Ok(upper_left(symmetrize(&v), fit.support, submatrix))
}

/// Sandwich with the repaired kernel `K⁺`. The result is positive
/// semidefinite by construction, so eigenvalues below zero are rounding
/// noise and are clipped before any submatrix is taken.
pub fn hac_cov_plus(fit: &WlsFit, split: &KernelSplit, submatrix: bool) -> Result<DMatrix<f64>> {
    let v = hac_cov(fit, &split.k_plus, false)?;
    let eig = v.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return Ok(upper_left(v, fit.support, submatrix));
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    Ok(upper_left(symmetrize(&v), fit.support, submatrix))
}

/// Eicker–Huber–White sandwich (the identity kernel).
pub fn ehw_cov(fit: &WlsFit, submatrix: bool) -> DMatrix<f64> {
    let u = fit.scores();
    let meat = u.transpose() * &u;
    let v = &fit.bread_inv * meat * &fit.bread_inv;
    upper_left(symmetrize(&v), fit.support, submatrix)
}

#[derive(Debug, Clone)]
pub struct HacResult {
    pub bandwidth: u32,
    pub v: DMatrix<f64>,
    pub v_plus: DMatrix<f64>,
    pub v_ehw: DMatrix<f64>,
    pub kernel_psd: bool,
}

/// Raw, adjusted and EHW covariances of the cell coefficients.
pub fn hac_result(fit: &WlsFit, kernel: &KernelMatrix, split: &KernelSplit) -> Result<HacResult> {
    let sub = fit.nparams() > fit.support;
    Ok(HacResult {
        bandwidth: kernel.b,
        v: hac_cov(fit, kernel, sub)?,
        v_plus: hac_cov_plus(fit, split, sub)?,
        v_ehw: ehw_cov(fit, sub),
        kernel_psd: split.kernel_psd(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContrastSe {
    /// `sqrt(g V gᵀ)`, NaN when the variance is negative.
    pub se: f64,
    pub variance: f64,
    pub negative: bool,
}

/// Standard errors `sqrt(diag(G V Gᵀ))` per contrast row.
pub fn contrast_se(v: &DMatrix<f64>, g: &Contrast) -> Result<Vec<ContrastSe>> {
    g.check_width(v.nrows())?;
    let gm = g.matrix();
    let gv = &gm * v * gm.transpose();
    let ga = gm.abs();
    let magnitude = &ga * v.abs() * ga.transpose();
    Ok((0..gm.nrows())
        .map(|r| {
            let mut var = gv[(r, r)];
            // cancellation noise around an exact zero is not a negative variance
            if var < 0.0 && -var <= ROUNDOFF_TOL * magnitude[(r, r)] {
                var = 0.0;
            }
            let negative = var < 0.0;
            ContrastSe {
                se: if negative { f64::NAN } else { var.sqrt() },
                variance: var,
                negative,
            }
        })
        .collect())
}

/// `Δ_i = (1_i(t)/π_i(t) − 1_i(t')/π_i(t'))·Y_i`.
pub fn leung_delta(ds: &Dataset, t: usize, t_prime: usize) -> Vec<f64> {
    (0..ds.n())
        .map(|k| {
            let ti = ds.t()[k];
            let a = if ti == t { 1.0 / ds.pi(k, t) } else { 0.0 };
            let b = if ti == t_prime {
                1.0 / ds.pi(k, t_prime)
            } else {
                0.0
            };
            (a - b) * ds.y()[k]
        })
        .collect()
}

/// `σ̂² = n⁻¹ Σ_ij (Δ_i − τ̂)(Δ_j − τ̂) K_ij`.
pub fn leung_ht_variance<K: KernelOp + ?Sized>(delta: &[f64], tau_hat: f64, k: &K) -> Result<f64> {
    if k.dim() != delta.len() {
        return Err(Error::Shape(format!(
            "kernel covers {} units, {} deltas",
            k.dim(),
            delta.len()
        )));
    }
    let centered: Vec<f64> = delta.iter().map(|d| d - tau_hat).collect();
    Ok(k.quad_vec(&centered) / delta.len() as f64)
}

/// `σ̂²` with `K⁺`; never negative since `K⁺` is positive semidefinite.
pub fn leung_ht_variance_plus(delta: &[f64], tau_hat: f64, split: &KernelSplit) -> Result<f64> {
    leung_ht_variance(delta, tau_hat, &split.k_plus).map(|v| v.max(0.0))
}

/// Standard error `sqrt(σ̂²/n)` of the HT contrast; NaN for negative `σ̂²`.
pub fn leung_se(sigma2: f64, n: usize) -> f64 {
    if sigma2 < 0.0 {
        f64::NAN
    } else {
        (sigma2 / n as f64).sqrt()
    }
}
