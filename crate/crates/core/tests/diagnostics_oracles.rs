mod common;

use approx::assert_relative_eq;
use common::{brute_kernel, floyd_warshall, random_dataset, random_graph, rng};
use nalgebra::DMatrix;
use netexp::covariance::{build_kernel, ehw_cov, hac_cov, leung_delta, KernelMatrix};
use netexp::diagnostics::diagnose;
use netexp::estimate::{fit_wls, horvitz_thompson, WlsSpec};
use netexp::simulate::{gen_network, NetworkKind, NetworkModel};

/// Row sums of `|K⁻|` from a direct eigendecomposition.
fn brute_negative_rows(k: &DMatrix<f64>) -> Vec<f64> {
    let eig = k.clone().symmetric_eigen();
    let tol = 1e-9 * eig.eigenvalues.amax();
    let n = k.nrows();
    let mut km = DMatrix::zeros(n, n);
    for (c, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam < -tol {
            let v = eig.eigenvectors.column(c);
            km -= v * v.transpose() * lam;
        }
    }
    km.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum())
        .collect()
}

#[test]
fn rgg_diagnostics_match_brute_force() {
    let model = NetworkModel {
        kind: NetworkKind::Rgg { kappa: 5.0 },
        n: 300,
    };
    let g = gen_network(&model, 21).unwrap().0;
    let dist = floyd_warshall(&g);
    let units: Vec<usize> = (0..g.n()).collect();
    let grid = [1, 2, 3];
    let report = diagnose(&g, &grid).unwrap();
    for (row, &b) in report.rows.iter().zip(&grid) {
        let k = brute_kernel(&dist, &units, b);
        let r = brute_negative_rows(&k);
        let n = g.n() as f64;
        assert_relative_eq!(row.m_1, k.sum() / n, max_relative = 1e-12);
        assert_relative_eq!(
            row.m_minus_1,
            r.iter().sum::<f64>() / n,
            max_relative = 1e-8,
            epsilon = 1e-10
        );
        assert_relative_eq!(
            row.m_minus_2,
            r.iter().map(|v| v * v).sum::<f64>() / n,
            max_relative = 1e-8,
            epsilon = 1e-10
        );
        let mut best = 0.0f64;
        let max_d = dist
            .iter()
            .flatten()
            .filter(|&&d| d != common::INF)
            .max()
            .copied()
            .unwrap_or(0);
        for s in 0..=max_d {
            let mut j = 0.0;
            for a in 0..g.n() {
                for c in 0..g.n() {
                    if dist[a][c] == s {
                        j += r[a] * r[c];
                    }
                }
            }
            best = best.max(j);
        }
        assert_relative_eq!(row.max_j_minus, best, max_relative = 1e-7, epsilon = 1e-9);
    }
}

#[test]
fn negative_part_vanishes_exactly_when_psd() {
    let mut r = rng(61);
    for trial in 0..30 {
        let g = random_graph(&mut r, 25, 0.1, trial % 2 == 0);
        for row in diagnose(&g, &[1, 2, 3]).unwrap().rows {
            assert_eq!(
                row.kernel_psd,
                row.m_minus_1 == 0.0,
                "b={} M⁻={}",
                row.b,
                row.m_minus_1
            );
            assert_eq!(row.kernel_psd, row.max_j_minus == 0.0);
        }
    }
}

#[test]
fn zero_bandwidth_sandwich_is_ehw() {
    let mut r = rng(62);
    for _ in 0..20 {
        let ds = random_dataset(&mut r, 30, 3, 1, 3);
        let units: Vec<usize> = (0..30).collect();
        let g = random_graph(&mut r, 30, 0.1, false);
        let k0 = build_kernel(&g, &units, 0).unwrap();
        assert_eq!(k0, KernelMatrix::identity(&units));
        for spec in [
            WlsSpec::Unadjusted,
            WlsSpec::Additive,
            WlsSpec::FullyInteracted,
            WlsSpec::HtTransformed,
        ] {
            let fit = fit_wls(&ds, spec).unwrap();
            let v = hac_cov(&fit, &k0, false).unwrap();
            let e = ehw_cov(&fit, false);
            assert_relative_eq!(v, e, max_relative = 1e-12, epsilon = 1e-14);
        }
    }
}

#[test]
fn leung_delta_averages_to_ht_contrast() {
    let mut r = rng(63);
    for _ in 0..20 {
        let ds = random_dataset(&mut r, 40, 2, 0, 4);
        let delta = leung_delta(&ds, 1, 0);
        let tau = delta.iter().sum::<f64>() / ds.n() as f64;
        assert_relative_eq!(
            tau,
            horvitz_thompson(&ds, 1) - horvitz_thompson(&ds, 0),
            max_relative = 1e-12
        );
    }
}
