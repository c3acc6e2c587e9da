use std::collections::BTreeSet;

use mixrank::collection::{build_collection, rank_vectors, CollectionConfig, RankMode};
use mixrank::lasso_em::{LassoProblem, LassoState};
use mixrank::metrics::ari;
use mixrank::model::Dataset;
use mixrank::nalgebra::DMatrix;
use mixrank::simgen::{generate, SimConfig};
use mixrank::{lasso_em_fit, ols_fit, rank_em_fit, LassoFitConfig, RankFitConfig, Responsibilities};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn small_sim(seed: u64) -> Dataset {
    let cfg = SimConfig { n: 60, p: 8, q: 4, j_size: 3, ranks: vec![2, 2], rho: 1.0, ..SimConfig::p_lt_n(seed) };
    generate(&cfg).unwrap().0
}

#[test]
fn noiseless_refit_recovers_the_clustering() {
    let mut perfect = 0;
    for seed in 0..20 {
        let mut cfg = SimConfig::p_lt_n(seed);
        cfg.noise_sd = 1e-3;
        let (train, _, truth) = generate(&cfg).unwrap();
        let lasso = lasso_em_fit(&train, 2, &LassoFitConfig { lambda: 1e-3, seed, ..Default::default() }).unwrap();
        let fit =
            rank_em_fit(&train, &truth.support, 2, &RankFitConfig::new(vec![3, 3]), &lasso.responsibilities).unwrap();
        if ari(&fit.labels, train.labels().unwrap()).unwrap() == 1.0 {
            perfect += 1;
        }
    }
    assert!(perfect >= 19, "{perfect}/20");
}

#[test]
fn single_cluster_full_rank_collection_is_ols() {
    let data = small_sim(1);
    let cfg = CollectionConfig { k_set: vec![1], grid_size: 4, r_min: 4, r_max: 4, ..Default::default() };
    let col = build_collection(&data, &cfg).unwrap();
    assert!(!col.is_empty());
    for fit in &col.fits {
        let s = &fit.index.support;
        if s.len() < data.q() {
            continue;
        }
        let (b, _) = ols_fit(&data.restricted_x(s), data.y());
        for (c, &j) in s.iter().enumerate() {
            for z in 0..data.q() {
                assert!((fit.model.beta()[0][(z, j)] - b[(z, c)]).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn cartesian_ranks_give_every_pair() {
    let data = small_sim(2);
    let cfg = CollectionConfig { k_set: vec![2], grid_size: 5, r_min: 1, r_max: 2, ..Default::default() };
    let col = build_collection(&data, &cfg).unwrap();
    let supports: BTreeSet<Vec<usize>> = col.provenance.iter().map(|p| p.support.clone()).collect();
    for s in supports {
        let mut ranks: Vec<Vec<usize>> = col
            .provenance
            .iter()
            .filter(|p| p.support == s)
            .map(|p| p.ranks.clone())
            .chain(col.failures.iter().filter(|(p, _)| p.support == s).map(|(p, _)| p.ranks.clone()))
            .collect();
        ranks.sort();
        let want = rank_vectors(2, 1, 2.min(s.len()), RankMode::Cartesian);
        assert_eq!(ranks, want, "support {s:?}");
    }
    assert_eq!(rank_vectors(2, 1, 2, RankMode::Cartesian).len(), 4);
}

#[test]
fn collection_is_deterministic_and_bounded() {
    let data = small_sim(3);
    let cfg = CollectionConfig { k_set: vec![1, 2], grid_size: 5, r_min: 1, r_max: 2, seed: 9, ..Default::default() };
    let a = build_collection(&data, &cfg).unwrap();
    let b = build_collection(&data, &cfg).unwrap();
    assert_eq!(a.provenance, b.provenance);
    for (x, y) in a.fits.iter().zip(&b.fits) {
        assert_eq!(x.model, y.model);
        assert_eq!(x.loglik, y.loglik);
    }
    let keys: BTreeSet<_> = a.provenance.iter().map(|p| (p.k, p.support.clone(), p.ranks.clone())).collect();
    assert_eq!(keys.len(), a.len());
    assert!(a.len() <= 2 * 5 * 4);
    for (f, p) in a.fits.iter().zip(&a.provenance) {
        assert_eq!((f.index.k, &f.index.support, &f.index.ranks), (p.k, &p.support, &p.ranks));
        assert!(f.index.ranks.iter().all(|&r| (1..=2).contains(&r)));
    }
    let sorted: Vec<_> = a.fits.iter().map(|f| f.index.clone()).collect();
    assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
}

fn random_data(seed: u64, n: usize, p: usize, q: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let y = DMatrix::from_fn(n, q, |i, z| {
        let sign = if labels[i] == 0 { 1.0 } else { -1.0 };
        sign * 2.0 * x[(i, z % p)] + rng.sample::<f64, _>(StandardNormal)
    });
    Dataset::new(x, y, None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn block_updates_descend(seed in 0u64..10_000, lambda in 0.0..0.5f64, k in 1usize..4) {
        let data = random_data(seed, 30, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
        let raw = DMatrix::from_fn(30, k, |_, _| rng.random_range(0.05..1.0));
        let gamma = DMatrix::from_fn(30, k, |i, c| raw[(i, c)] / raw.row(i).sum());
        let mut gamma = Responsibilities::new(gamma).unwrap();
        let problem = LassoProblem::new(&data, k, lambda);
        let mut state = LassoState::null(&data, &gamma).unwrap();
        for _ in 0..3 {
            for t in problem.instrumented_m_step(&mut state, &gamma).unwrap() {
                prop_assert!(t.after <= t.before + 1e-9, "{:?}", t);
            }
            gamma = problem.objective_and_estep(&state).1;
        }
    }

    #[test]
    fn objective_never_rises(seed in 0u64..10_000, lambda in 0.001..0.3f64) {
        let data = random_data(seed, 40, 5, 2);
        let fit = lasso_em_fit(&data, 2, &LassoFitConfig { lambda, n_restarts: 2, seed, ..Default::default() }).unwrap();
        for w in fit.objective_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-6, "{} -> {}", w[0], w[1]);
        }
    }
}
