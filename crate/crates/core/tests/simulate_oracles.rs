mod common;

use common::{random_graph, rng};
use netexp::simulate::{
    complex_contagion, gen_network, homophily_errors, linear_in_means, preset, row_normalize,
    run_monte_carlo, NetworkKind, NetworkModel, PeerParams, Population,
};
use rand::Rng;

const LIM: PeerParams = PeerParams {
    alpha: -1.0,
    beta: 0.8,
    delta: 1.0,
    xi: 1.0,
    gamma: 3.0,
};

fn dense_rows(g: &netexp::Graph) -> Vec<Vec<f64>> {
    (0..g.n())
        .map(|i| {
            let nb = g.out_neighbors(i);
            let mut row = vec![0.0; g.n()];
            for &j in nb {
                row[j] = 1.0 / nb.len() as f64;
            }
            row
        })
        .collect()
}

fn matvec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum())
        .collect()
}

#[test]
fn linear_in_means_equals_neumann_series() {
    let mut r = rng(41);
    let g = random_graph(&mut r, 50, 0.08, false);
    let a = dense_rows(&g);
    let d: Vec<u8> = (0..50).map(|_| r.random_range(0..2)).collect();
    let x: Vec<f64> = (0..50).map(|_| r.random::<f64>()).collect();
    let eps: Vec<f64> = (0..50).map(|_| r.random::<f64>() - 0.5).collect();
    let df: Vec<f64> = d.iter().map(|&v| v as f64).collect();
    let ad = matvec(&a, &df);
    let rhs: Vec<f64> = (0..50)
        .map(|i| LIM.alpha + LIM.delta * ad[i] + LIM.xi * df[i] + LIM.gamma * x[i] + eps[i])
        .collect();
    let mut term = rhs.clone();
    let mut sum = rhs;
    for _ in 0..200 {
        term = matvec(&a, &term)
            .into_iter()
            .map(|v| v * LIM.beta)
            .collect();
        sum.iter_mut().zip(&term).for_each(|(s, t)| *s += t);
    }
    let y = linear_in_means(&row_normalize(&g), &d, &x, &eps, &LIM).unwrap();
    for (got, want) in y.iter().zip(&sum) {
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }
}

/// Literal synchronous threshold iteration from the activation at zero peers.
fn contagion_reference(
    a: &[Vec<f64>],
    d: &[u8],
    x: &[f64],
    eps: &[f64],
    p: &PeerParams,
) -> Vec<f64> {
    let n = d.len();
    let df: Vec<f64> = d.iter().map(|&v| v as f64).collect();
    let ad = matvec(a, &df);
    let base: Vec<f64> = (0..n)
        .map(|i| p.alpha + p.delta * ad[i] + p.xi * df[i] + p.gamma * x[i] + eps[i])
        .collect();
    let mut y: Vec<f64> = base
        .iter()
        .map(|&b| if b > 0.0 { 1.0 } else { 0.0 })
        .collect();
    loop {
        let ay = matvec(a, &y);
        let next: Vec<f64> = (0..n)
            .map(|i| {
                if base[i] + p.beta * ay[i] > 0.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        if next == y {
            return y;
        }
        y = next;
    }
}

#[test]
fn contagion_matches_reference_and_is_monotone() {
    let mut r = rng(42);
    for trial in 0..20 {
        let n = 60;
        let g = random_graph(&mut r, n, 0.06, trial % 2 == 0);
        let a = dense_rows(&g);
        let at = row_normalize(&g);
        let x: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let eps: Vec<f64> = (0..n).map(|_| 2.0 * r.random::<f64>() - 1.0).collect();
        let mut d: Vec<u8> = (0..n).map(|_| (r.random::<f64>() < 0.3) as u8).collect();
        let p = PeerParams {
            alpha: -2.0,
            beta: 1.5,
            delta: 1.0,
            xi: 1.0,
            gamma: 1.0,
        };
        let y = complex_contagion(&at, &d, &x, &eps, &p, None).unwrap();
        assert_eq!(y, contagion_reference(&a, &d, &x, &eps, &p));
        assert!(y.iter().all(|&v| v == 0.0 || v == 1.0));
        for i in 0..n {
            if d[i] == 0 && r.random::<f64>() < 0.3 {
                d[i] = 1;
            }
        }
        let more = complex_contagion(&at, &d, &x, &eps, &p, None).unwrap();
        assert!(
            y.iter().zip(&more).all(|(a, b)| a <= b),
            "treating more units lowered an outcome"
        );
    }
}

#[test]
fn homophily_error_moments() {
    let mut r = rng(43);
    let n = 200_000;
    let pos: Vec<[f64; 2]> = (0..n)
        .map(|_| [r.random::<f64>(), r.random::<f64>()])
        .collect();
    let e = homophily_errors(&pos, &mut r);
    let mean = e.iter().sum::<f64>() / n as f64;
    let var = e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let target = 1.0 + 1.0 / 12.0;
    assert!(mean.abs() < 4.0 * (target / n as f64).sqrt(), "mean {mean}");
    assert!((var - target).abs() < 0.015, "variance {var}");
    let cov = e
        .iter()
        .zip(&pos)
        .map(|(v, p)| v * (p[0] - 0.5))
        .sum::<f64>()
        / n as f64;
    assert!(
        (cov - 1.0 / 12.0).abs() < 0.005,
        "covariance with the first coordinate {cov}"
    );
}

#[test]
fn rgg_degree_tracks_kappa() {
    let model = NetworkModel {
        kind: NetworkKind::Rgg { kappa: 5.0 },
        n: 4000,
    };
    let (g, pos) = gen_network(&model, 3).unwrap();
    let pos = pos.unwrap();
    let deg = g.arc_count() as f64 / g.n() as f64;
    // boundary effects on the unit square pull the mean below kappa
    assert!(deg > 4.3 && deg < 5.0, "average degree {deg}");
    let radius = (5.0 / (std::f64::consts::PI * 4000.0)).sqrt();
    for i in 0..50 {
        for j in 0..g.n() {
            let d = ((pos[i][0] - pos[j][0]).powi(2) + (pos[i][1] - pos[j][1]).powi(2)).sqrt();
            assert_eq!(i != j && d <= radius, g.out_neighbors(i).contains(&j));
        }
    }
}

#[test]
fn identical_seeds_identical_results() {
    let mut cfg = preset("table1-desk", 11).unwrap();
    cfg.network.n = 150;
    cfg.draws_estimand = 50;
    cfg.draws_estimation = 50;
    let a = run_monte_carlo(&cfg).unwrap();
    let b = run_monte_carlo(&cfg).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    cfg.seed = 12;
    let c = run_monte_carlo(&cfg).unwrap();
    assert_ne!(a.estimand, c.estimand);
}

#[test]
fn population_outcomes_are_fixed_given_assignment() {
    let mut cfg = preset("table1-desk", 5).unwrap();
    cfg.network.n = 120;
    let pop = Population::build(&cfg).unwrap();
    let d = pop.design.draw_indexed(9, 0);
    assert_eq!(pop.outcome(&d).unwrap(), pop.outcome(&d).unwrap());
    let ds = pop.dataset(&d).unwrap();
    assert_eq!(ds.n(), pop.sample.units.len());
}
