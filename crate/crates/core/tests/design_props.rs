mod common;

use std::sync::Arc;

use common::{random_graph, rng};
use nalgebra::DMatrix;
use netexp::design::{enumerate_propensity, for_each_assignment, mc_propensity, Design};
use netexp::estimate::{horvitz_thompson, Dataset};
use netexp::exposure::{effective_sample, ExposureEvaluator, ExposureMapping};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn block_draws_hit_exact_counts(
        blocks in proptest::collection::vec(0usize..3, 4..40),
        frac in 0.0f64..1.0,
        seed in any::<u64>(),
        mask in proptest::collection::vec(any::<bool>(), 40),
    ) {
        let n = blocks.len();
        let eligible: Vec<bool> = mask[..n].to_vec();
        let d = Design::block_complete_frac(&blocks, Some(eligible.clone()), frac).unwrap();
        let draw = d.draw_indexed(seed, 3);
        for b in 0..3 {
            let members: Vec<usize> = (0..n).filter(|&i| blocks[i] == b && eligible[i]).collect();
            let want = (frac * members.len() as f64).round() as usize;
            let got = members.iter().filter(|&&i| draw[i] == 1).count();
            prop_assert_eq!(got, want);
        }
        for i in 0..n {
            if !eligible[i] {
                prop_assert_eq!(draw[i], 0);
            }
        }
    }

    #[test]
    fn indexed_draws_are_reproducible(p in 0.05f64..0.95, seed in any::<u64>(), index in any::<u64>()) {
        let d = Design::iid_constant(30, p).unwrap();
        prop_assert_eq!(d.draw_indexed(seed, index), d.draw_indexed(seed, index));
    }

    #[test]
    fn enumeration_probabilities_sum_to_one(n in 2usize..10, seed in any::<u64>()) {
        let mut r = rng(seed);
        let p: Vec<f64> = (0..n).map(|_| 0.1 + 0.8 * r.random::<f64>()).collect();
        let d = Design::iid(p, None).unwrap();
        let mut total = 0.0;
        let count = for_each_assignment(&d, 1 << 12, |_, prob| total += prob).unwrap();
        prop_assert_eq!(count, 1 << n);
        prop_assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn ht_is_unbiased_over_the_assignment_space() {
    let mut r = rng(51);
    for trial in 0..6 {
        let n = 9;
        let g = random_graph(&mut r, n, 0.3, trial % 2 == 1);
        let p: Vec<f64> = (0..n).map(|_| 0.2 + 0.6 * r.random::<f64>()).collect();
        let design = Design::iid(p, None).unwrap();
        let m = ExposureMapping::any_treated_neighbor();
        let pi = enumerate_propensity(&m, &design, &g, 1 << 12)
            .unwrap()
            .unwrap();
        let sample = effective_sample(&m, &pi).unwrap();
        let units = sample.units.clone();
        let mu: Vec<[f64; 2]> = (0..n)
            .map(|_| [r.random::<f64>() * 5.0, r.random::<f64>() * 5.0])
            .collect();
        let eval = ExposureEvaluator::new(&m, &g);
        let mut mean = [0.0; 2];
        for_each_assignment(&design, 1 << 12, |d, prob| {
            let t = eval.evaluate(d).unwrap();
            let y: Vec<f64> = units.iter().map(|&i| mu[i][t[i]]).collect();
            let ds = Dataset::new(
                units.clone(),
                y,
                DMatrix::zeros(units.len(), 0),
                units.iter().map(|&i| t[i]).collect(),
                &pi.restrict(&units),
                m.labels(),
            )
            .unwrap();
            for (tt, acc) in mean.iter_mut().enumerate() {
                *acc += prob * horvitz_thompson(&ds, tt);
            }
        })
        .unwrap();
        for t in 0..2 {
            let want = units.iter().map(|&i| mu[i][t]).sum::<f64>() / units.len() as f64;
            assert!(
                (mean[t] - want).abs() < 1e-10,
                "cell {t}: {} vs {want}",
                mean[t]
            );
        }
    }
}

#[test]
fn sequential_with_unit_multiplier_is_bernoulli() {
    let mut r = rng(52);
    let n = 30;
    let g = Arc::new(random_graph(&mut r, n, 0.2, false));
    let p: Vec<f64> = (0..n).map(|_| 0.2 + 0.6 * r.random::<f64>()).collect();
    let d = Design::sequential(p.clone(), None, 1.0, g.clone()).unwrap();
    let draws = 40_000;
    let pi = mc_propensity(&ExposureMapping::direct(), &d, &g, draws, 5).unwrap();
    for i in 0..n {
        let se = (p[i] * (1.0 - p[i]) / draws as f64).sqrt();
        assert!(
            (pi.get(i, 1) - p[i]).abs() < 4.5 * se,
            "unit {i}: {} vs {}",
            pi.get(i, 1),
            p[i]
        );
    }
}

#[test]
fn sequential_multiplier_raises_treatment_near_treated_units() {
    let mut r = rng(53);
    let n = 40;
    let g = Arc::new(random_graph(&mut r, n, 0.15, false));
    let p = vec![0.3; n];
    let boosted = Design::sequential(p, None, 2.0, g.clone()).unwrap();
    let pi = mc_propensity(&ExposureMapping::direct(), &boosted, &g, 20_000, 6).unwrap();
    for i in 0..n {
        let q = pi.get(i, 1);
        if g.neighbors(i).is_empty() {
            assert!((q - 0.3).abs() < 0.02, "isolated unit {i}: {q}");
        } else {
            assert!(q > 0.3 && q < 0.6, "unit {i}: {q}");
        }
    }
}
