mod common;

use common::{
    brute_force_aggregate, check_plan, ema_closed_form, ema_recursion, random_global, random_updates, sum_mean,
};
use legend_core::aggregator::{layerwise_aggregate, DeviceUpdate};
use legend_core::capacity::{CapacityEstimate, DeviceStatus};
use legend_core::lora::{LoraAdapter, LoraConfig};
use legend_core::numerics::{Matrix, SeededRng};
use legend_core::planner::{
    avg_waiting, depth_gap, global_rank_distribution, min_feasible_psi, plan_from_times, DepthRule, DeviceBudget,
    PlannerParams,
};
use legend_core::sim::payload_bytes;
use proptest::prelude::*;

fn status(round: usize, mu: f64, beta: f64) -> DeviceStatus {
    DeviceStatus {
        device_id: 0,
        round,
        mu_hat: mu,
        beta_hat: beta,
        forward_time: 0.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rank_distribution_is_feasible_arithmetic(layers in 1usize..20, lambda in 0usize..4, extra in 0usize..200) {
        let psi = min_feasible_psi(layers, lambda) + extra;
        let dist = global_rank_distribution(layers, psi, lambda).unwrap();
        prop_assert_eq!(dist.len(), layers);
        prop_assert!(dist[0] >= 1);
        prop_assert!(dist.iter().sum::<usize>() <= psi);
        prop_assert!(psi - dist.iter().sum::<usize>() < layers);
        prop_assert!(dist.windows(2).all(|w| w[1] == w[0] + lambda));
        prop_assert!(global_rank_distribution(layers, min_feasible_psi(layers, lambda) - 1, lambda).is_err());
    }

    #[test]
    fn plans_satisfy_constraints(
        times in prop::collection::vec(0.5f64..500.0, 1..12),
        layers in 1usize..16,
        lambda in 0usize..3,
        extra in 0usize..80,
        budgets in prop::collection::vec((1.0f64..400.0, 1.0f64..400.0, any::<bool>()), 12),
        slowest in any::<bool>(),
    ) {
        let params = PlannerParams {
            layers,
            psi: min_feasible_psi(layers, lambda) + extra,
            lambda,
            forward_compute: 2.0,
            compute_per_rank: 1.5,
            comm_per_rank: 0.5,
            depth_rule: if slowest { DepthRule::SlowestNormalized } else { DepthRule::EndpointNormalized },
            ..PlannerParams::default()
        };
        let budgets: Vec<DeviceBudget> = budgets
            .iter()
            .take(times.len())
            .map(|&(c, b, unlimited)| if unlimited { DeviceBudget::unlimited() } else { DeviceBudget { compute: c, comm: b } })
            .collect();
        let devices: Vec<(usize, DeviceBudget)> = budgets.iter().copied().enumerate().collect();
        let plan = plan_from_times(&devices, &times, &params).unwrap();
        if let Err(msg) = check_plan(&plan, &times, &budgets, &params) {
            return Err(TestCaseError::fail(msg));
        }
        let gap = depth_gap(&times, layers).unwrap();
        prop_assert_eq!(plan.depth_gap, gap);
        let max = times.iter().copied().fold(f64::MIN, f64::max);
        let min = times.iter().copied().fold(f64::MAX, f64::min);
        for (d, &t) in plan.devices.iter().zip(&times) {
            if t == max {
                prop_assert_eq!(d.target_depth, layers - gap);
            }
            if t == min && !slowest {
                prop_assert_eq!(d.target_depth, layers);
            }
        }
    }

    #[test]
    fn waiting_is_non_negative_and_shift_invariant(times in prop::collection::vec(0.0f64..100.0, 1..20), shift in 0.0f64..50.0) {
        let w = avg_waiting(&times);
        prop_assert!(w >= 0.0);
        let shifted: Vec<f64> = times.iter().map(|t| t + shift).collect();
        prop_assert!((avg_waiting(&shifted) - w).abs() <= 1e-9);
    }

    #[test]
    fn ema_matches_recursion_and_stays_in_hull(values in prop::collection::vec(0.0f64..100.0, 2..50), rho in 0.0f64..=1.0) {
        let mut est = CapacityEstimate::initial(&status(0, values[0], values[0] / 2.0), rho).unwrap();
        let expected = ema_recursion(&values, rho);
        let mut lo = values[0];
        let mut hi = values[0];
        for (h, &v) in values.iter().enumerate().skip(1) {
            est = est.update(&status(h, v, v / 2.0)).unwrap();
            prop_assert_eq!(est.mu, expected[h]);
            lo = lo.min(v);
            hi = hi.max(v);
            prop_assert!(est.mu >= lo - 1e-12 && est.mu <= hi + 1e-12);
            let closed = ema_closed_form(&values, rho, h);
            prop_assert!((est.mu - closed).abs() <= 1e-9 * hi.max(1.0));
        }
    }

    #[test]
    fn ema_error_contracts(initial in 0.0f64..100.0, actual in 0.0f64..100.0, rho in 0.0f64..1.0, rounds in 1usize..40) {
        let mut est = CapacityEstimate::initial(&status(0, initial, 0.0), rho).unwrap();
        let err0 = (initial - actual).abs();
        for h in 1..=rounds {
            est = est.update(&status(h, actual, 0.0)).unwrap();
            prop_assert!((est.mu - actual).abs() <= rho.powi(h as i32) * err0 + 1e-9);
        }
    }

    #[test]
    fn payload_is_linear_in_ranks(ranks in prop::collection::vec(1usize..8, 0..10), m in 1usize..64, q in 1usize..64, linears in 1usize..7, head in 0u64..1000) {
        let mut sorted = ranks.clone();
        sorted.sort_unstable();
        let config = LoraConfig::new(sorted.clone()).unwrap();
        let doubled = LoraConfig::new(sorted.iter().map(|r| 2 * r).collect()).unwrap();
        let single = payload_bytes(&config, m, q, linears, head);
        prop_assert_eq!(payload_bytes(&doubled, m, q, linears, head) - head, 2 * (single - head));
        prop_assert_eq!(single - head, sorted.iter().sum::<usize>() as u64 * (m + q) as u64 * linears as u64 * 4);
    }
}

#[test]
fn aggregation_matches_brute_force_and_plain_mean() {
    for case in 0..200u64 {
        let mut rng = SeededRng::new(case, 3);
        let layers = 1 + rng.index(6);
        let width = 2 + rng.index(5);
        let ranks: Vec<usize> = (0..layers).map(|l| 1 + (l % width.min(3)).min(width - 1)).collect();
        let prev = random_global(&mut rng, layers, width, &ranks);
        let devices = 1 + rng.index(6);
        let updates = random_updates(&mut rng, layers, width, &ranks, devices);
        let agg = layerwise_aggregate(&prev, &updates).unwrap();
        let (oracle_layers, oracle_head) = brute_force_aggregate(&prev, &updates);
        for (l, (b, a)) in oracle_layers.iter().enumerate() {
            assert_eq!(agg.adapter(l).b(), b, "case {case} layer {l}");
            assert_eq!(agg.adapter(l).a(), a, "case {case} layer {l}");
            let contributors: Vec<&LoraAdapter> = updates
                .iter()
                .flat_map(|u| u.adapters.iter())
                .filter(|x| x.layer() == l)
                .collect();
            assert_eq!(agg.counts()[l], contributors.len());
            if !contributors.is_empty() {
                let plain: Vec<&Matrix> = contributors.iter().map(|x| x.b()).collect();
                assert!(agg.adapter(l).b().max_abs_diff(&sum_mean(&plain)).unwrap() <= 1e-12);
            }
        }
        assert_eq!(agg.head(), &oracle_head);
    }
}

#[test]
fn aggregating_identical_copies_is_identity() {
    for case in 0..50u64 {
        let mut rng = SeededRng::new(case, 4);
        let layers = 1 + rng.index(5);
        let ranks = vec![2; layers];
        let prev = random_global(&mut rng, layers, 4, &ranks);
        let one = random_updates(&mut rng, layers, 4, &ranks, 1).remove(0);
        let n = 1 + rng.index(7);
        let copies: Vec<DeviceUpdate> = (0..n)
            .map(|i| DeviceUpdate {
                device_id: i,
                ..one.clone()
            })
            .collect();
        let agg = layerwise_aggregate(&prev, &copies).unwrap();
        for a in &one.adapters {
            assert_eq!(agg.adapter(a.layer()), a);
        }
        assert_eq!(agg.head(), &one.head);
    }
}
