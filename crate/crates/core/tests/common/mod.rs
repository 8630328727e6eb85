#![allow(dead_code)]

use nalgebra::DMatrix;
use netexp::design::{PropensityMethod, PropensityTable};
use netexp::estimate::Dataset;
use netexp::Graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INF: u32 = u32::MAX;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Erdős–Rényi style edge list; undirected unless `directed`.
pub fn random_graph(r: &mut ChaCha8Rng, n: usize, p: f64, directed: bool) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && (directed || i < j) && r.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Graph::from_edges(n, &edges, directed).unwrap().0
}

/// All-pairs distances on the symmetric view by Floyd–Warshall.
pub fn floyd_warshall(g: &Graph) -> Vec<Vec<u32>> {
    let n = g.n();
    let mut d = vec![vec![INF; n]; n];
    for i in 0..n {
        d[i][i] = 0;
        for &j in g.out_neighbors(i) {
            d[i][j] = 1;
            d[j][i] = 1;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] != INF && d[k][j] != INF && d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

/// Dense kernel `1(ℓ(u_a, u_b) ≤ b)` over `units` from an all-pairs table.
pub fn brute_kernel(dist: &[Vec<u32>], units: &[usize], b: u32) -> DMatrix<f64> {
    DMatrix::from_fn(units.len(), units.len(), |a, c| {
        (dist[units[a]][units[c]] <= b) as u8 as f64
    })
}

/// Random propensity rows bounded away from 0 and 1.
pub fn random_pi(r: &mut ChaCha8Rng, n: usize, s: usize) -> PropensityTable {
    let mut flat = Vec::with_capacity(n * s);
    for _ in 0..n {
        let raw: Vec<f64> = (0..s).map(|_| 0.2 + r.random::<f64>()).collect();
        let tot: f64 = raw.iter().sum();
        flat.extend(raw.iter().map(|v| v / tot));
    }
    PropensityTable::new(n, s, flat, PropensityMethod::Supplied).unwrap()
}

pub fn labels(s: usize) -> Vec<String> {
    (0..s).map(|t| t.to_string()).collect()
}

/// Dataset with every cell holding at least `min_cell` units.
pub fn random_dataset(
    r: &mut ChaCha8Rng,
    n: usize,
    s: usize,
    j: usize,
    min_cell: usize,
) -> Dataset {
    assert!(n >= s * min_cell);
    let mut t: Vec<usize> = (0..n)
        .map(|k| {
            if k < s * min_cell {
                k % s
            } else {
                r.random_range(0..s)
            }
        })
        .collect();
    for k in (1..n).rev() {
        let o = r.random_range(0..=k);
        t.swap(k, o);
    }
    let x = DMatrix::from_fn(n, j, |_, _| r.random::<f64>() * 4.0 - 2.0);
    let y: Vec<f64> = (0..n)
        .map(|k| {
            1.0 + t[k] as f64
                + (0..j).map(|c| (c as f64 + 0.5) * x[(k, c)]).sum::<f64>()
                + 2.0 * r.random::<f64>()
        })
        .collect();
    let pi = random_pi(r, n, s);
    Dataset::new((0..n).collect(), y, x, t, &pi, labels(s)).unwrap()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

pub fn max_rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = a.amax().max(b.amax()).max(1e-300);
    (a - b).amax() / scale
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Literal sandwich `B⁻¹ (Σ_i Σ_j w_i e_i c_i K_ij w_j e_j c_jᵀ) B⁻¹` with
/// the coefficients re-solved from the normal equations, together with the
/// same sum over absolute values as a scale for rounding error.
pub fn brute_sandwich(
    c: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    k: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, p) = c.shape();
    let mut b: DMatrix<f64> = DMatrix::zeros(p, p);
    let mut rhs: nalgebra::DVector<f64> = nalgebra::DVector::zeros(p);
    for i in 0..n {
        for a in 0..p {
            rhs[a] += w[i] * c[(i, a)] * y[i];
            for q in 0..p {
                b[(a, q)] += w[i] * c[(i, a)] * c[(i, q)];
            }
        }
    }
    let binv = b.clone().try_inverse().expect("full rank");
    let coef = &binv * rhs;
    let e: Vec<f64> = (0..n)
        .map(|i| y[i] - (0..p).map(|a| c[(i, a)] * coef[a]).sum::<f64>())
        .collect();
    let mut meat = DMatrix::zeros(p, p);
    let mut abs_meat = DMatrix::zeros(p, p);
    for i in 0..n {
        for j in 0..n {
            if k[(i, j)] == 0.0 {
                continue;
            }
            let f = k[(i, j)] * w[i] * e[i] * w[j] * e[j];
            for a in 0..p {
                for q in 0..p {
                    meat[(a, q)] += f * c[(i, a)] * c[(j, q)];
                    abs_meat[(a, q)] += (f * c[(i, a)] * c[(j, q)]).abs();
                }
            }
        }
    }
    let babs = binv.abs();
    (&binv * meat * &binv, &babs * abs_meat * &babs)
}

/// `|B⁻¹| (|U|ᵀ |K| |U|) |B⁻¹|`, the scale of rounding error in a sandwich.
pub fn sandwich_magnitude(
    bread_inv: &DMatrix<f64>,
    scores: &DMatrix<f64>,
    k: &DMatrix<f64>,
) -> DMatrix<f64> {
    let (b, u) = (bread_inv.abs(), scores.abs());
    &b * (u.transpose() * k.abs() * &u) * &b
}

/// Largest entrywise gap between `a` and `b` measured against `scale`.
pub fn scaled_gap(a: &DMatrix<f64>, b: &DMatrix<f64>, scale: &DMatrix<f64>) -> f64 {
    (a - b).amax() / scale.amax().max(1e-300)
}
