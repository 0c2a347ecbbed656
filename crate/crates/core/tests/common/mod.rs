#![allow(dead_code)]

use genmatch::{validate_sample, Constraints, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random points in the unit square with `k` conditions, each condition
/// present at least `min_per` times.
pub fn random_sample(seed: u64, n: usize, k: usize, min_per: usize) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
    let mut conds: Vec<usize> = (0..n)
        .map(|i| if i < k * min_per { i % k } else { rng.random_range(0..k) })
        .collect();
    // Shuffle so that the guaranteed units are not always first.
    for i in (1..n).rev() {
        conds.swap(i, rng.random_range(0..=i));
    }
    let labels: Vec<String> = conds.iter().map(|c| format!("g{c}")).collect();
    validate_sample(&rows, &labels).unwrap()
}

/// Random constraints the sample can satisfy.
pub fn random_constraints(seed: u64, sample: &Sample) -> Constraints {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let k = sample.conditions();
    let per: Vec<usize> = (0..k)
        .map(|j| rng.random_range(0..=sample.treatment_set(j).len().min(3)))
        .collect();
    let sum: usize = per.iter().sum();
    let total = rng.random_range(sum.max(1)..=(sum + 3).min(sample.len()).max(sum.max(1)));
    Constraints::new(per, total)
}

/// Every partition of `0..n` as a restricted growth string.
pub fn all_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let next = prefix.iter().max().map_or(0, |m| m + 1);
        for b in 0..=next {
            prefix.push(b);
            rec(prefix, n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), n, &mut out);
    out
}
