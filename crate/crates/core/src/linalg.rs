//! Small dense helpers: a diagonally pivoted Cholesky factorization for
//! normal equations and symmetric-matrix utilities.

use nalgebra::{DMatrix, DVector};

/// Rank tolerance relative to the largest diagonal entry.
pub const RANK_TOL: f64 = 1e-10;

/// `Pᵀ A P = L Lᵀ` for a symmetric positive definite `A`.
#[derive(Debug, Clone)]
pub struct PivotedCholesky {
    l: DMatrix<f64>,
    perm: Vec<usize>,
}

impl PivotedCholesky {
    /// Factors `a`, pivoting on the largest remaining diagonal. When a pivot
    /// falls below `rel_tol · max_i a_ii` the columns still unpivoted are
    /// returned as the error value (original indices, sorted).
    pub fn factor(a: &DMatrix<f64>, rel_tol: f64) -> Result<Self, Vec<usize>> {
        let p = a.nrows();
        assert_eq!(p, a.ncols(), "pivoted Cholesky needs a square matrix");
        let mut w = a.clone();
        let mut perm: Vec<usize> = (0..p).collect();
        let scale = (0..p).map(|i| a[(i, i)]).fold(0.0_f64, f64::max);
        let tol = rel_tol * scale;
        for k in 0..p {
            let (j, &piv) = (k..p)
                .map(|j| (j, &w[(j, j)]))
                .max_by(|x, y| x.1.total_cmp(y.1))
                .unwrap();
            if !(piv > tol) || scale <= 0.0 {
                let mut rest = perm[k..].to_vec();
                rest.sort_unstable();
                return Err(rest);
            }
            if j != k {
                w.swap_rows(j, k);
                w.swap_columns(j, k);
                perm.swap(j, k);
            }
            let d = w[(k, k)].sqrt();
            w[(k, k)] = d;
            for i in k + 1..p {
                w[(i, k)] /= d;
            }
            for c in k + 1..p {
                w[(k, c)] = w[(c, k)];
            }
            for c in k + 1..p {
                let lc = w[(c, k)];
                for r in k + 1..p {
                    let v = w[(r, k)] * lc;
                    w[(r, c)] -= v;
                }
            }
        }
        let mut l = DMatrix::zeros(p, p);
        for c in 0..p {
            for r in c..p {
                l[(r, c)] = w[(r, c)];
            }
        }
        Ok(PivotedCholesky { l, perm })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Solves `A X = B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let p = self.dim();
        let mut y = DMatrix::zeros(p, b.ncols());
        for (k, &src) in self.perm.iter().enumerate() {
            y.row_mut(k).copy_from(&b.row(src));
        }
        for col in 0..b.ncols() {
            for i in 0..p {
                let mut s = y[(i, col)];
                for k in 0..i {
                    s -= self.l[(i, k)] * y[(k, col)];
                }
                y[(i, col)] = s / self.l[(i, i)];
            }
            for i in (0..p).rev() {
                let mut s = y[(i, col)];
                for k in i + 1..p {
                    s -= self.l[(k, i)] * y[(k, col)];
                }
                y[(i, col)] = s / self.l[(i, i)];
            }
        }
        let mut x = DMatrix::zeros(p, b.ncols());
        for (k, &dst) in self.perm.iter().enumerate() {
            x.row_mut(dst).copy_from(&y.row(k));
        }
        x
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let m = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
        DVector::from_column_slice(self.solve(&m).as_slice())
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve(&DMatrix::identity(self.dim(), self.dim()))
    }
}

/// `(M + Mᵀ)/2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    symmetrize(m).symmetric_eigenvalues().min()
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0_f64, |a, v| a.max(v.abs()))
}
