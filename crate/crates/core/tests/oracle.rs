mod common;

use common::{all_partitions, random_sample};
use genmatch::audit;
use genmatch::matcher::match_in_space;
use genmatch::{
    att_estimate, implied_weights, objective, optimal_matching_bruteforce, Constraints, MatchOptions, Matching, Metric,
    MetricSpace, Objective,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn oracle_matches_unpruned_enumeration() {
    for seed in 0..12u64 {
        let n = 5 + (seed as usize % 4);
        let s = random_sample(seed, n, 2, 1);
        let space = MetricSpace::new(&Metric::Euclidean, &s).unwrap();
        for c in [
            Constraints::traditional(2),
            Constraints::new(vec![1, 1], 3),
            Constraints::new(vec![0, 1], 2),
        ] {
            if c.check_feasible(&s).is_err() {
                continue;
            }
            for which in Objective::ALL {
                let mut best: Option<f64> = None;
                for rgs in all_partitions(n) {
                    let m = Matching::from_labels(rgs.into_iter().map(Some).collect());
                    if audit::admissible(&m, &s, &c).is_err() {
                        continue;
                    }
                    if let Ok(v) = objective(&m, &s, &space, which) {
                        best = Some(best.map_or(v, |b: f64| b.min(v)));
                    }
                }
                let got = optimal_matching_bruteforce(&s, &Metric::Euclidean, &c, which);
                match best {
                    None => assert!(got.is_err(), "seed {seed} {c} {which}"),
                    Some(b) => {
                        let r = got.unwrap();
                        assert!(
                            (r.value - b).abs() < 1e-12,
                            "seed {seed} {c} {which}: {} vs {b}",
                            r.value
                        );
                        assert!(audit::admissible(&r.matching, &s, &c).is_ok());
                    }
                }
            }
        }
    }
}

#[test]
fn oracle_beats_random_admissible_partitions() {
    for seed in 0..5u64 {
        let n = 10;
        let s = random_sample(100 + seed, n, 2, 2);
        let space = MetricSpace::new(&Metric::Euclidean, &s).unwrap();
        let c = Constraints::traditional(2);
        let best = optimal_matching_bruteforce(&s, &Metric::Euclidean, &c, Objective::Max).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut checked = 0;
        while checked < 1000 {
            let blocks = rng.random_range(1..=n / 2);
            let labels: Vec<Option<usize>> = (0..n).map(|_| Some(rng.random_range(0..blocks))).collect();
            let m = Matching::from_labels(labels);
            if audit::admissible(&m, &s, &c).is_err() {
                continue;
            }
            checked += 1;
            assert!(best.value <= objective(&m, &s, &space, Objective::Max).unwrap());
        }
    }
}

#[test]
fn algorithm_within_four_of_optimum() {
    let c = Constraints::traditional(2);
    for seed in 0..60u64 {
        let n = 4 + (seed as usize % 7);
        let s = random_sample(500 + seed, n, 2, 1);
        let space = MetricSpace::new(&Metric::Euclidean, &s).unwrap();
        let trace = match_in_space(&s, &space, &c, &MatchOptions::default()).unwrap();
        let opt = optimal_matching_bruteforce(&s, &Metric::Euclidean, &c, Objective::Max).unwrap();
        let opt_tc = optimal_matching_bruteforce(&s, &Metric::Euclidean, &c, Objective::MaxTc).unwrap();
        let alg = objective(&trace.matching, &s, &space, Objective::Max).unwrap();
        let alg_tc = objective(&trace.matching, &s, &space, Objective::MaxTc).unwrap();
        assert!(opt.value <= alg && alg <= 4.0 * opt.value + 1e-12, "seed {seed}");
        assert!(alg_tc <= 4.0 * opt_tc.value + 1e-12, "seed {seed}");
        assert!(trace.digraph.max_arc_weight() <= opt.value);
        assert!(trace.digraph.max_cross_arc_weight(&s) <= opt_tc.value);
    }
}

#[test]
fn att_equals_weighted_difference() {
    for seed in 0..20u64 {
        let s = random_sample(900 + seed, 60, 2, 5).with_treated_label("g0").unwrap();
        let c = Constraints::new(vec![1, 2], 3);
        let space = MetricSpace::new(&Metric::Euclidean, &s).unwrap();
        let m = match_in_space(&s, &space, &c, &MatchOptions::default())
            .unwrap()
            .matching;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..s.len()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let w = implied_weights(&m, &s).unwrap();
        let weighted: f64 = (0..s.len())
            .map(|u| if s.is_treated(u) { w[u] * y[u] } else { -w[u] * y[u] })
            .sum();
        assert!((att_estimate(&m, &s, &y).unwrap() - weighted).abs() < 1e-12);
    }
}

#[test]
fn objectives_match_naive_loops() {
    for seed in 0..20u64 {
        let s = random_sample(1300 + seed, 40, 2, 4);
        let space = MetricSpace::new(&Metric::Euclidean, &s).unwrap();
        let m = match_in_space(&s, &space, &Constraints::traditional(2), &MatchOptions::default())
            .unwrap()
            .matching;
        let (mut max, mut max_tc, mut sum_tc) = (0.0f64, 0.0f64, 0.0);
        for a in 0..s.len() {
            for b in 0..s.len() {
                if a < b && m.group_of(a) == m.group_of(b) {
                    let d = genmatch::distance(&Metric::Euclidean, a, b, &s).unwrap();
                    max = max.max(d);
                    if s.condition_of(a) != s.condition_of(b) {
                        max_tc = max_tc.max(d);
                        sum_tc += d;
                    }
                }
            }
        }
        assert_eq!(objective(&m, &s, &space, Objective::Max).unwrap(), max);
        assert_eq!(objective(&m, &s, &space, Objective::MaxTc).unwrap(), max_tc);
        assert!((objective(&m, &s, &space, Objective::SumTc).unwrap() - sum_tc).abs() < 1e-9);
        assert!(max_tc <= max);
    }
}
