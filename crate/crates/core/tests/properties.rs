mod common;

use common::*;
use dflsim::fedalgo::{self, gossip_round};
use dflsim::metrics::{self, phi};
use dflsim::model::{self, ModelSpec, ParamVector};
use dflsim::optimizer::{self, OptState};
use dflsim::partition::{self, make_synthetic, PartitionSpec};
use dflsim::topology::{self, build_graph, grid_shape, TopologyKind, TopologySpec};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn kind_strategy() -> impl Strategy<Value = TopologyKind> {
    prop::sample::select(all_kinds().to_vec())
}

fn valid_m(kind: TopologyKind, m: usize) -> bool {
    kind != TopologyKind::Grid || grid_shape(m).is_some()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gossip_matrix_properties(kind in kind_strategy(), m in 2usize..=64, seed: u64, round in 0u64..20) {
        prop_assume!(valid_m(kind, m));
        let w = mixing(kind, m, seed, round);
        let wm = w.matrix();
        let p = DMatrix::from_element(m, m, 1.0 / m as f64);
        prop_assert!(topology::validate_gossip(wm, None).all_passed());
        for i in 0..m {
            prop_assert!((wm.row(i).sum() - 1.0).abs() <= 1e-12);
            for j in 0..m {
                prop_assert_eq!(wm[(i, j)], wm[(j, i)]);
            }
        }
        prop_assert!((wm * &p - &p).amax() <= 1e-12);
        prop_assert!((&p * wm - &p).amax() <= 1e-12);
        for t in [0u32, 1, 2, 5, 13, 49] {
            prop_assert!(topology::power_deviation(&w, t) <= w.lambda().powi(t as i32) + 1e-9);
        }
    }

    #[test]
    fn graphs_are_deterministic(kind in kind_strategy(), m in 2usize..=40, seed: u64, round in 0u64..50) {
        prop_assume!(valid_m(kind, m));
        let spec = if kind == TopologyKind::TimeVaryingK {
            TopologySpec::time_varying(m, 3.min(m - 1), seed)
        } else {
            TopologySpec::new(kind, m)
        };
        let a = build_graph(&spec, round).unwrap();
        let b = std::thread::spawn(move || build_graph(&spec, round).unwrap()).join().unwrap();
        prop_assert_eq!(a.edges(), b.edges());
        prop_assert!(a.is_connected());
    }

    #[test]
    fn gossip_preserves_mean_and_contracts(kind in kind_strategy(), m in 2usize..=36, q in 1usize..=4, seed: u64) {
        prop_assume!(valid_m(kind, m));
        let w = mixing(kind, m, seed, 0);
        let mut r = rng(seed);
        let xs: Vec<ParamVector> = (0..m).map(|_| normal_vec(&mut r, 3, 1.0).into()).collect();
        let out = gossip_round(&xs, &w, q).unwrap();
        let before = metrics::mean_model(&xs);
        let after = metrics::mean_model(&out);
        for (a, b) in before.iter().zip(after.iter()) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
        let c0 = consensus_oracle(&xs);
        let c1 = consensus_oracle(&out);
        prop_assert!(c1 <= w.lambda().powi(q as i32) * c0 + 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences(seed: u64, fam in 0usize..3) {
        let spec = &families()[fam];
        let mut r = rng(seed);
        let b = random_batch(spec, 12, &mut r);
        let theta = normal_vec(&mut r, spec.num_params(), 0.5);
        let g = model::gradient(spec, &theta, &b).unwrap();
        prop_assert!(rel_err(&g, &fd_gradient(spec, &theta, &b, 1e-5)) < 1e-5);
        let v = normal_vec(&mut r, spec.num_params(), 1.0);
        let hv = model::hvp(spec, &theta, &b, &v).unwrap();
        prop_assert!(rel_err(&hv, &fd_hvp(spec, &theta, &b, &v, 1e-5)) < 1e-4);
        let u = normal_vec(&mut r, spec.num_params(), 1.0);
        let hu = model::hvp(spec, &theta, &b, &u).unwrap();
        prop_assert!((model::dot(&v, &hu) - model::dot(&u, &hv)).abs() < 1e-8);
    }

    #[test]
    fn loss_ignores_order_and_gradient_is_mean(seed: u64, fam in 0usize..3) {
        let spec = &families()[fam];
        let mut r = rng(seed);
        let b = random_batch(spec, 10, &mut r);
        let theta = normal_vec(&mut r, spec.num_params(), 0.5);
        let rev: Vec<usize> = (0..10).rev().collect();
        let l = model::loss(spec, &theta, &b).unwrap();
        prop_assert!((l - model::loss(spec, &theta, &b.select(&rev)).unwrap()).abs() < 1e-12);
        let lo: Vec<usize> = (0..4).collect();
        let hi: Vec<usize> = (4..10).collect();
        let g = model::gradient(spec, &theta, &b).unwrap();
        let g1 = model::gradient(spec, &theta, &b.select(&lo)).unwrap();
        let g2 = model::gradient(spec, &theta, &b.select(&hi)).unwrap();
        for i in 0..g.len() {
            prop_assert!((g[i] - (0.4 * g1[i] + 0.6 * g2[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn rayleigh_quotient_is_monotone(seed: u64, n in 2usize..8) {
        let mut r = rng(seed);
        let a = DMatrix::from_vec(n, n, normal_vec(&mut r, n * n, 1.0));
        let psd = &a * a.transpose();
        let mut prev = f64::NEG_INFINITY;
        for iters in 1..30 {
            let est = model::power_iteration(n, seed, iters, -1.0, |v| {
                Ok((&psd * nalgebra::DVector::from_column_slice(v)).iter().copied().collect())
            })
            .unwrap();
            prop_assert!(est.value >= prev - 1e-12 * prev.abs().max(1.0));
            prev = est.value;
        }
    }

    #[test]
    fn sam_without_radius_is_sgd(seed: u64, fam in 0usize..3, eta in 0.0f64..1.0) {
        let spec = &families()[fam];
        let mut r = rng(seed);
        let b = random_batch(spec, 8, &mut r);
        let theta = normal_vec(&mut r, spec.num_params(), 0.5);
        let sam = OptState::sam(eta, 0.0).step_on(spec, &theta, &b).unwrap();
        let sgd = OptState::sgd(eta).step_on(spec, &theta, &b).unwrap();
        prop_assert_eq!(sam, sgd);
    }

    #[test]
    fn perturbation_has_radius_rho(g in prop::collection::vec(-10.0f64..10.0, 1..20), rho in 0.0f64..5.0) {
        let d = optimizer::perturbation(&g, rho);
        let n = norm(&d);
        prop_assert!(n <= rho * (1.0 + 1e-12));
        if norm(&g) >= 1e-12 {
            prop_assert!((n - rho).abs() <= 1e-12 * rho.max(1.0));
        }
    }

    #[test]
    fn shards_cover_train_exactly(seed: u64, kind in 0usize..3, m in 1usize..12) {
        let ds = make_synthetic(600, 3, 4, 2.0, seed).unwrap();
        let spec = match kind {
            0 => PartitionSpec::iid(m, seed),
            1 => PartitionSpec::dirichlet(m, 0.5, seed),
            _ => PartitionSpec::pathological(m, 2, seed),
        };
        let shards = partition::partition(&ds, &spec).unwrap();
        let mut all: Vec<usize> = shards.iter().flat_map(|s| s.indices.iter().copied()).collect();
        all.sort_unstable();
        let mut train = ds.train().to_vec();
        train.sort_unstable();
        prop_assert_eq!(all, train);
        prop_assert!(shards.iter().all(|s| !s.indices.is_empty()));
        let lspec = ModelSpec::logistic(3, 4);
        let mut r = rng(seed);
        let probes: Vec<ParamVector> = (0..3).map(|_| normal_vec(&mut r, lspec.num_params(), 1.0).into()).collect();
        let beta = partition::estimate_beta(&lspec, &ds, &shards, &probes).unwrap();
        prop_assert!(beta >= 0.0);
        if m == 1 {
            prop_assert_eq!(beta, 0.0);
        }
    }

    #[test]
    fn phi_q1_identity(lambda in 0.0f64..0.999, m in 2usize..1000) {
        let want = 2.0 * (lambda + 1.0) / (1.0 - lambda).powi(2);
        prop_assert!((phi(lambda, m, 1).unwrap() - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn phi_nonincreasing_in_m(lambda in 0.01f64..0.99, m in 2usize..500, q in 2u32..6) {
        prop_assert!(phi(lambda, m + 1, q).unwrap() <= phi(lambda, m, q).unwrap());
    }

    #[test]
    fn metrics_are_permutation_invariant(seed: u64, m in 2usize..8) {
        let spec = ModelSpec::logistic(3, 2);
        let mut r = rng(seed);
        let xs: Vec<ParamVector> = (0..m).map(|_| normal_vec(&mut r, spec.num_params(), 1.0).into()).collect();
        let shards: Vec<_> = (0..m).map(|_| random_batch(&spec, 5, &mut r)).collect();
        let mut perm = xs.clone();
        perm.reverse();
        let c = metrics::consensus_distance(&xs);
        prop_assert!((c - metrics::consensus_distance(&perm)).abs() <= 1e-12 * c.max(1.0));
        prop_assert!((c - consensus_oracle(&xs)).abs() <= 1e-12 * c.max(1.0));
        let g = metrics::avg_model_grad_norm_sq(&spec, &xs, &shards).unwrap();
        let gp = metrics::avg_model_grad_norm_sq(&spec, &perm, &shards).unwrap();
        prop_assert!((g - gp).abs() <= 1e-12 * g.max(1.0));
        prop_assert!(g >= 0.0 && c >= 0.0);
    }
}

#[test]
fn spectral_ordering_of_static_topologies() {
    for m in [16, 36, 64] {
        let l: Vec<f64> = [TopologyKind::Ring, TopologyKind::Grid, TopologyKind::Exponential, TopologyKind::Full]
            .into_iter()
            .map(|k| mixing(k, m, 0, 0).lambda())
            .collect();
        assert!(l.windows(2).all(|p| p[0] >= p[1]), "m = {m}: {l:?}");
    }
}

#[test]
fn logistic_eigenvalue_matches_dense_oracle() {
    let spec = ModelSpec::logistic(6, 2);
    let mut r = rng(3);
    let mut b = random_batch(&spec, 40, &mut r);
    b.y = (0..40).map(|i| i % 2).collect();
    let theta = vec![0.0; spec.num_params()];
    let dense = logistic_hessian(&spec, &theta, &b);
    let want = dense.symmetric_eigen().eigenvalues.max();
    let got = model::largest_hessian_eig(&spec, &theta, &b, 5000, 1e-13).unwrap();
    assert!((got.value - want).abs() < 1e-6, "{} vs {want}", got.value);

    let theta = normal_vec(&mut r, spec.num_params(), 0.7);
    let dense = logistic_hessian(&spec, &theta, &b);
    let v = normal_vec(&mut r, spec.num_params(), 1.0);
    let hv = model::hvp(&spec, &theta, &b, &v).unwrap();
    let want = &dense * nalgebra::DVector::from_vec(v);
    assert!(rel_err(&hv, want.as_slice()) < 1e-12);
}

#[test]
fn full_graph_training_converges_to_center() {
    for alg in [fedalgo::Algorithm::Dfedavg, fedalgo::Algorithm::Dfedsam] {
        let ds = partition::Dataset::new(vec![0.0, 2.0], vec![0, 0], 1, 1, vec![0, 1], vec![]).unwrap();
        let shards = vec![
            partition::ClientShard { client_id: 0, indices: vec![0], rng_stream: 0 },
            partition::ClientShard { client_id: 1, indices: vec![1], rng_stream: 1 },
        ];
        let cfg = fedalgo::FedConfig {
            algorithm: alg,
            m: 2,
            rounds: 200,
            local_steps: 1,
            eta0: 0.1,
            eta_decay: 1.0,
            rho: 0.1,
            topology: fedalgo::TopologyConfig { kind: TopologyKind::Full, k: None },
            model: fedalgo::ModelConfig { kind: model::ModelKind::Quadratic, l2: 0.0, ..Default::default() },
            metrics: fedalgo::MetricsConfig { hessian_every: 0, hessian_probe: 1 },
            ..Default::default()
        };
        let h = fedalgo::Simulation::from_parts(cfg, ds, shards)
            .unwrap()
            .with_initial_models(vec![vec![5.0].into(), vec![-3.0].into()])
            .unwrap()
            .run()
            .unwrap();
        let mean = metrics::mean_model(&h.final_models);
        assert!((mean[0] - 1.0).abs() < 1e-6, "{alg}: {}", mean[0]);
    }
}
