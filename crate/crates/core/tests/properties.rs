//! Randomised invariants across the library.

use std::collections::HashSet;

use moefl::aggregation::{
    aggregate, compute_weights, default_tau, entropic_from_distances, exact_from_costs, softmax_scores,
    weights_opt_exact, weights_softmax, weights_uniform, weights_utility, AggregatorKind, Utility,
};
use moefl::analysis::{bias_bound, lemma2_pure_threshold, pca2, BiasScenario, BoundParams};
use moefl::attack::{forge_model, poison_dataset, AttackKind};
use moefl::data::{gen_synthetic, partition_iid, partition_noniid, split_public, Dataset, SyntheticParams};
use moefl::nn::{
    esgd_step, init_model, loss, loss_and_grad, Activation, Elastic, ModelSpec, ParamVector,
};
use moefl::rng::stream_from;
use moefl::server::{curate_online, train_server, ServerState};
use moefl::nn::SgdParams;
use proptest::prelude::*;
use rand::seq::index;

fn blobs(classes: usize, dim: usize, per_class: usize, seed: u64) -> Dataset {
    gen_synthetic(SyntheticParams { class_count: classes, dim, per_class, spread: 0.2, seed }).unwrap()
}

fn models(values: Vec<Vec<f64>>) -> Vec<ParamVector> {
    values.into_iter().map(ParamVector::new).collect()
}

fn cohort(dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>)> {
    (
        prop::collection::vec(-3.0..3.0f64, dim),
        prop::collection::vec(prop::collection::vec(-3.0..3.0f64, dim), 1..8),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn loss_is_non_negative(seed in 0u64..1000, hidden in 1usize..6) {
        let data = blobs(3, 5, 4, seed);
        let spec = ModelSpec::dense(vec![5, hidden, 3], Activation::Relu).unwrap();
        let w = init_model(&spec, seed);
        let l = loss(&spec, &w, &data).unwrap();
        prop_assert!(l >= 0.0 && l.is_finite());
    }

    #[test]
    fn zero_coupling_elastic_step_is_plain_sgd(
        w in prop::collection::vec(-2.0..2.0f64, 12),
        anchor in prop::collection::vec(-2.0..2.0f64, 12),
        bar in prop::collection::vec(-2.0..2.0f64, 12),
        g in prop::collection::vec(-2.0..2.0f64, 12),
        lr in 0.0..1.0f64,
    ) {
        let (w, anchor, bar, g) = (ParamVector::new(w), ParamVector::new(anchor), ParamVector::new(bar), ParamVector::new(g));
        let (next, _) = esgd_step(&w, &anchor, &bar, &g, Elastic { alpha: 0.0, beta: 0.0 }, lr).unwrap();
        let mut sgd = w.clone();
        sgd.axpy(-lr, &g).unwrap();
        let same = next.as_slice().iter().zip(sgd.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }

    #[test]
    fn gradient_matches_central_differences_on_random_coordinates(seed in 0u64..10_000) {
        let data = blobs(4, 6, 3, seed);
        let spec = ModelSpec::dense(vec![6, 10, 4], Activation::Tanh).unwrap();
        let w = init_model(&spec, seed ^ 0x5a5a);
        let (_, g) = loss_and_grad(&spec, &w, &data).unwrap();
        let mut rng = stream_from(seed);
        let coords = index::sample(&mut rng, w.len(), 50).into_vec();
        let h = 1e-5;
        let mut num = Vec::new();
        let mut ana = Vec::new();
        for &i in &coords {
            let mut up = w.clone();
            up.as_mut_slice()[i] += h;
            let mut down = w.clone();
            down.as_mut_slice()[i] -= h;
            num.push((loss(&spec, &up, &data).unwrap() - loss(&spec, &down, &data).unwrap()) / (2.0 * h));
            ana.push(g.as_slice()[i]);
        }
        let diff = num.iter().zip(&ana).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = ana.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-8);
        prop_assert!(diff / scale < 1e-6, "relative error {}", diff / scale);
    }

    #[test]
    fn partitions_are_disjoint_and_cover_whole_shards(
        seed in 0u64..1000,
        clients in 1usize..6,
        per_client in 1usize..4,
        noniid in any::<bool>(),
    ) {
        let data = blobs(5, 3, 13, seed);
        let shards = clients * per_client;
        let p = if noniid {
            partition_noniid(&data, clients, shards, seed).unwrap()
        } else {
            partition_iid(&data, clients, shards, seed).unwrap()
        };
        let mut seen = HashSet::new();
        for owned in &p.client_indices {
            for &i in owned {
                prop_assert!(seen.insert(i), "sample {} assigned twice", i);
            }
        }
        prop_assert_eq!(seen.len(), shards * (data.len() / shards));
    }

    #[test]
    fn noniid_clients_hold_at_most_four_labels(seed in 0u64..1000) {
        // two shards per client; equal class sizes divisible by the shard size
        let data = blobs(10, 4, 20, seed);
        let p = partition_noniid(&data, 10, 20, seed).unwrap();
        for owned in &p.client_indices {
            let labels: HashSet<usize> = owned.iter().map(|&i| data.labels()[i]).collect();
            prop_assert!(labels.len() <= 4);
        }
    }

    #[test]
    fn public_split_is_reproducible(seed in 0u64..1000, fraction in 0.05..0.95f64) {
        let data = blobs(4, 3, 10, 1);
        let p = partition_iid(&data, 4, 8, 3).unwrap();
        let a = split_public(&p, fraction, seed).unwrap();
        let b = split_public(&p, fraction, seed).unwrap();
        prop_assert_eq!(&a, &b);
        for (owned, public) in a.client_indices.iter().zip(&a.public_indices) {
            prop_assert!(public.iter().all(|i| owned.contains(i)));
        }
    }

    #[test]
    fn pixel_shuffle_keeps_multisets_and_labels(seed in 0u64..1000) {
        let data = blobs(3, 7, 5, seed);
        let out = poison_dataset(&data, AttackKind::PixelShuffle, &mut stream_from(seed)).unwrap();
        prop_assert_eq!(out.labels(), data.labels());
        for i in 0..data.len() {
            let mut a = data.row(i).to_vec();
            let mut b = out.row(i).to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn data_attacks_keep_shape(seed in 0u64..1000, which in 0usize..3) {
        let kind = [AttackKind::LabelFlipStatic, AttackKind::LabelFlipAdaptive, AttackKind::PixelShuffle][which];
        let data = blobs(4, 5, 6, seed);
        let out = poison_dataset(&data, kind, &mut stream_from(seed)).unwrap();
        prop_assert_eq!(out.len(), data.len());
        prop_assert_eq!(out.dim(), data.dim());
        prop_assert_eq!(out.class_count(), data.class_count());
    }

    #[test]
    fn negative_forgery_cancels_the_broadcast(
        honest in prop::collection::vec(-5.0..5.0f64, 9),
        broadcast in prop::collection::vec(-5.0..5.0f64, 9),
    ) {
        let b = ParamVector::new(broadcast);
        let forged = forge_model(AttackKind::NegativeWeight, &ParamVector::new(honest), &b, 1.0, &mut stream_from(0)).unwrap();
        prop_assert!(forged.as_slice().iter().zip(b.as_slice()).all(|(f, x)| f + x == 0.0));
    }

    #[test]
    fn every_weighting_lies_on_the_simplex((w0, ws) in cohort(5)) {
        let w0 = ParamVector::new(w0);
        let ws = models(ws);
        let kinds = [
            AggregatorKind::Fedavg,
            AggregatorKind::Softmax,
            AggregatorKind::opt_exact(),
            AggregatorKind::opt_entropic(),
            AggregatorKind::OptEntropic { tau: Some(0.5) },
            AggregatorKind::Utility { utility: Utility::Log, tie_tol: 1e-12 },
            AggregatorKind::Utility { utility: Utility::Exp, tie_tol: 1e-12 },
        ];
        for kind in kinds {
            let rho = compute_weights(&kind, &w0, &ws).unwrap().rho;
            prop_assert!(rho.as_slice().iter().all(|&r| r >= 0.0));
            prop_assert!((rho.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        prop_assert_eq!(weights_uniform(ws.len()).unwrap().len(), ws.len());
        prop_assert!(weights_softmax(&w0, &ws).is_ok());
    }

    #[test]
    fn softmax_ignores_a_constant_shift(
        scores in prop::collection::vec(-20.0..20.0f64, 1..10),
        shift in -100.0..100.0f64,
    ) {
        let a = softmax_scores(&scores).unwrap();
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let b = softmax_scores(&shifted).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn exact_support_is_the_tied_argmin((w0, ws) in cohort(4), tie_tol in 0.0..0.5f64) {
        let w0 = ParamVector::new(w0);
        let ws = models(ws);
        let rho = weights_opt_exact(&w0, &ws, tie_tol).unwrap();
        let dist: Vec<f64> = ws.iter().map(|w| moefl::nn::param_dist(w, &w0).unwrap()).collect();
        let min = dist.iter().cloned().fold(f64::INFINITY, f64::min);
        let support: Vec<bool> = dist.iter().map(|&d| d <= min + tie_tol).collect();
        let k = support.iter().filter(|&&s| s).count() as f64;
        for (&r, &s) in rho.as_slice().iter().zip(&support) {
            prop_assert_eq!(r, if s { 1.0 / k } else { 0.0 });
        }
    }

    #[test]
    fn entropic_weights_decrease_with_distance(
        dist in prop::collection::vec(0.1..5.0f64, 2..8),
        tau in 0.2..5.0f64,
    ) {
        // bounded distance ratios keep every weight representable
        let rho = entropic_from_distances(&dist, tau).unwrap();
        for i in 0..dist.len() {
            for j in 0..dist.len() {
                if dist[i] < dist[j] {
                    prop_assert!(rho.as_slice()[i] > rho.as_slice()[j]);
                }
            }
        }
        prop_assert!(default_tau(&dist) > 0.0);
    }

    #[test]
    fn increasing_utilities_share_the_exact_support(
        (w0, ws) in cohort(3),
        dup in any::<bool>(),
    ) {
        let w0 = ParamVector::new(w0);
        let mut ws = models(ws);
        if dup {
            // force an exact tie
            ws.push(ws[0].clone());
        }
        let exact = weights_opt_exact(&w0, &ws, 0.0).unwrap();
        for u in [Utility::Linear, Utility::Log, Utility::Exp] {
            let rho = weights_utility(u, &w0, &ws, 0.0).unwrap();
            let a: Vec<bool> = exact.as_slice().iter().map(|&r| r > 0.0).collect();
            let b: Vec<bool> = rho.as_slice().iter().map(|&r| r > 0.0).collect();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn aggregate_stays_in_the_coordinate_hull((w0, ws) in cohort(6), which in 0usize..4) {
        let w0 = ParamVector::new(w0);
        let ws = models(ws);
        let kind = [AggregatorKind::Fedavg, AggregatorKind::Softmax, AggregatorKind::opt_exact(), AggregatorKind::opt_entropic()][which];
        let rho = compute_weights(&kind, &w0, &ws).unwrap().rho;
        let agg = aggregate(&rho, &ws).unwrap();
        for (k, &v) in agg.as_slice().iter().enumerate() {
            let lo = ws.iter().map(|w| w.as_slice()[k]).fold(f64::INFINITY, f64::min);
            let hi = ws.iter().map(|w| w.as_slice()[k]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }
    }

    #[test]
    fn param_vectors_round_trip_through_bytes(values in prop::collection::vec(any::<f64>(), 0..40)) {
        let w = ParamVector::new(values);
        let back = ParamVector::read_from(&w.to_bytes()[..]).unwrap();
        let same = w.len() == back.len()
            && w.as_slice().iter().zip(back.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }

    #[test]
    fn pca_projections_ignore_translation(
        rows in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 4), 3..7),
        shift in prop::collection::vec(-50.0..50.0f64, 4),
    ) {
        let moved: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&shift).map(|(a, s)| a + s).collect()).collect();
        let a = pca2(&rows).unwrap();
        let b = pca2(&moved).unwrap();
        for k in 0..2 {
            prop_assert!((a.explained_variance[k] - b.explained_variance[k]).abs() <= 1e-7 * (1.0 + a.explained_variance[k]));
        }
        // projections are only pinned down when the leading variances are distinct
        let gap = a.explained_variance[0] - a.explained_variance[1];
        if gap > 1e-3 && a.explained_variance[1] > 1e-3 {
            for (p, q) in a.projections.iter().zip(&b.projections) {
                prop_assert!((p[0] - q[0]).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn pure_threshold_is_monotone_in_each_constant(
        l1 in 0.1..5.0f64, sigma1 in 0.01..1.0f64, eta1 in 0.01..1.0f64,
        b in 0.1..5.0f64, r in 1.0..200.0f64, step in 0.01..2.0f64,
    ) {
        let base = BoundParams {
            L1: l1, L2: 1.0, sigma1, sigma2: 1.0, eta1, eta2: 1.0,
            B: b, R: r, K: 5.0, N: 10.0, E: 0.0,
        };
        let t = lemma2_pure_threshold(&base).unwrap();
        for up in [
            BoundParams { L1: l1 + step, ..base },
            BoundParams { sigma1: sigma1 + step, ..base },
            BoundParams { eta1: eta1 + step, ..base },
            BoundParams { B: b + step, ..base },
        ] {
            let raised = lemma2_pure_threshold(&up).unwrap();
            prop_assert!(raised >= t - 1e-12);
        }
        let longer = lemma2_pure_threshold(&BoundParams { R: r + step, ..base }).unwrap();
        prop_assert!(longer <= t + 1e-12);
    }

    #[test]
    fn bias_bounds_grow_with_costlier_attackers(
        sigma1 in 0.01..1.0f64, eta1 in 0.01..1.0f64,
        extra_sigma in 0.0..2.0f64, extra_eta in 0.0..2.0f64,
        n in 2usize..20,
    ) {
        // each attacker term dominates the legitimate one it replaces
        let base = BoundParams {
            L1: 1.0, L2: 1.0, sigma1, sigma2: sigma1 + extra_sigma, eta1, eta2: sigma1 + eta1 + extra_eta,
            B: 1.0, R: 50.0, K: 5.0, N: n as f64, E: 0.0,
        };
        for scenario in [BiasScenario::Impure, BiasScenario::Pure] {
            let mut last = f64::NEG_INFINITY;
            for e in 0..n {
                let b = bias_bound(&BoundParams { E: e as f64, ..base }, scenario).unwrap();
                prop_assert!(b >= last - 1e-12);
                last = b;
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn rejected_curation_steps_leave_state_untouched(seed in 0u64..1000) {
        let data = blobs(3, 6, 10, seed);
        let spec = ModelSpec::dense(vec![6, 5, 3], Activation::Relu).unwrap();
        let trusted = data.subset(&(0..12).collect::<Vec<_>>());
        let untrusted = vec![(1, data.subset(&(12..20).collect::<Vec<_>>())), (2, data.subset(&(20..30).collect::<Vec<_>>()))];
        let sgd = SgdParams { epochs: 1, lr: 0.1, batch_size: 4 };
        let state = ServerState::new(init_model(&spec, seed), Dataset::empty(6, 3), 3);

        // a threshold nothing can beat rejects every candidate
        let d0 = f64::MIN_POSITIVE;
        let curated = curate_online(&state, &spec, &trusted, &untrusted, d0, sgd, &mut stream_from(seed)).unwrap();
        let trained = train_server(
            &ServerState { curated: trusted.clone(), ..state.clone() },
            &spec, sgd, &mut stream_from(seed),
        ).unwrap();
        prop_assert_eq!(&curated.curated, &trusted);
        prop_assert_eq!(&curated.w0, &trained.w0);
        prop_assert_eq!(&curated.outlier_labels, &vec![false, true, true]);

        // the labels only ever gain entries on a later pass
        let again = curate_online(&curated, &spec, &trusted, &untrusted[..1], 1e9, sgd, &mut stream_from(seed + 1)).unwrap();
        for (before, after) in curated.outlier_labels.iter().zip(&again.outlier_labels) {
            prop_assert!(!before || *after);
        }
    }

    #[test]
    fn online_curation_without_untrusted_data_is_server_training(seed in 0u64..1000) {
        let data = blobs(3, 6, 8, seed);
        let spec = ModelSpec::dense(vec![6, 4, 3], Activation::Relu).unwrap();
        let sgd = SgdParams { epochs: 2, lr: 0.05, batch_size: 5 };
        let state = ServerState::new(init_model(&spec, seed), Dataset::empty(6, 3), 4);
        let curated = curate_online(&state, &spec, &data, &[], 1.0, sgd, &mut stream_from(seed)).unwrap();
        let trained = train_server(
            &ServerState { curated: data.clone(), ..state.clone() },
            &spec, sgd, &mut stream_from(seed),
        ).unwrap();
        prop_assert_eq!(curated.w0, trained.w0);
        prop_assert_eq!(curated.curated, data);
    }
}

#[test]
fn exact_weights_split_ties_evenly() {
    let rho = exact_from_costs(&[2.0, 1.0, 1.0, 3.0], 0.0).unwrap();
    assert_eq!(rho.as_slice(), &[0.0, 0.5, 0.5, 0.0]);
}
