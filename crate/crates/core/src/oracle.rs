//! Exact optimum by exhaustive partition search, and the simple greedy
//! matchers used as comparison methods.

use crate::error::{Error, Result};
use crate::evaluate::{objective, Objective};
use crate::matcher::Matching;
use crate::metric::{Metric, MetricSpace};
use crate::nnsearch::NnIndex;
use crate::sample::{Constraints, Sample};
use crate::scalar::Scalar;

/// Largest sample the exhaustive search accepts.
pub const ORACLE_MAX_UNITS: usize = 13;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult<T> {
    pub matching: Matching,
    pub value: T,
    /// Complete admissible partitions scored during the search.
    pub examined: u64,
}

/// Running statistics of one block of a partial partition.
#[derive(Debug, Clone, Default)]
struct Block<T> {
    members: Vec<usize>,
    counts: Vec<usize>,
    max: T,
    max_tc: T,
    sum: T,
    sum_tc: T,
    pairs: usize,
    pairs_tc: usize,
}

struct Search<'a, T> {
    n: usize,
    dist: Vec<T>,
    cond: &'a [usize],
    treated: usize,
    /// Per-condition minimum a block must reach.
    minimum: Vec<usize>,
    total: usize,
    /// `suffix[i][j]`: units of condition `j` among `i..n`.
    suffix: Vec<Vec<usize>>,
    which: Objective,
    blocks: Vec<Block<T>>,
    rgs: Vec<usize>,
    best: Option<(T, Vec<usize>)>,
    examined: u64,
}

impl<T: Scalar> Search<'_, T> {
    fn monotone(&self) -> bool {
        matches!(self.which, Objective::Max | Objective::MaxTc | Objective::SumTc)
    }

    /// Objective over the current blocks; a lower bound on every completion
    /// for the monotone objectives.
    fn value(&self) -> T {
        let mut v = T::zero();
        let n_treated = T::from_count(self.blocks.iter().map(|b| b.counts[self.treated]).sum());
        for b in &self.blocks {
            v = match self.which {
                Objective::Max => v.max(b.max),
                Objective::MaxTc => v.max(b.max_tc),
                Objective::SumTc => v + b.sum_tc,
                Objective::Mean if b.pairs > 0 => {
                    v + T::from_count(b.counts[self.treated]) / n_treated * (b.sum / T::from_count(b.pairs))
                }
                Objective::Mean => v,
                Objective::MeanTc => {
                    v + T::from_count(b.counts[self.treated]) / n_treated * (b.sum_tc / T::from_count(b.pairs_tc))
                }
            };
        }
        v
    }

    /// Whether the units from `next` on can still bring every block up to
    /// the constraints.
    fn completable(&self, next: usize) -> bool {
        let remaining = &self.suffix[next];
        let mut need_total = 0;
        let mut need = vec![0; self.minimum.len()];
        for b in &self.blocks {
            let mut deficit = 0;
            for (j, &c) in self.minimum.iter().enumerate() {
                let d = c.saturating_sub(b.counts[j]);
                need[j] += d;
                deficit += d;
            }
            need_total += deficit.max(self.total.saturating_sub(b.members.len()));
        }
        need.iter().zip(remaining).all(|(a, b)| a <= b) && need_total <= self.n - next
    }

    fn push(&mut self, unit: usize, block: usize) {
        if block == self.blocks.len() {
            self.blocks.push(Block {
                counts: vec![0; self.minimum.len()],
                ..Block::default()
            });
        }
        let b = &mut self.blocks[block];
        for &v in &b.members {
            let d = self.dist[unit * self.n + v];
            b.max = b.max.max(d);
            b.sum = b.sum + d;
            b.pairs += 1;
            if self.cond[v] != self.cond[unit] {
                b.max_tc = b.max_tc.max(d);
                b.sum_tc = b.sum_tc + d;
                b.pairs_tc += 1;
            }
        }
        b.members.push(unit);
        b.counts[self.cond[unit]] += 1;
        self.rgs.push(block);
    }

    fn pop(&mut self, unit: usize, block: usize, saved: Block<T>) {
        self.rgs.pop();
        if saved.members.is_empty() {
            self.blocks.pop();
        } else {
            self.blocks[block] = saved;
        }
        debug_assert!(self.blocks.iter().all(|b| !b.members.contains(&unit)));
    }

    fn visit(&mut self, unit: usize) {
        if unit == self.n {
            self.examined += 1;
            let v = self.value();
            if self.best.as_ref().is_none_or(|(b, _)| v < *b) {
                self.best = Some((v, self.rgs.clone()));
            }
            return;
        }
        for block in 0..=self.blocks.len() {
            let saved = self.blocks.get(block).cloned().unwrap_or_default();
            self.push(unit, block);
            // Partitions are visited in lexicographic order, so a later
            // partition only replaces the incumbent when strictly better.
            let pruned = !self.completable(unit + 1)
                || (self.monotone() && self.best.as_ref().is_some_and(|(b, _)| self.value() >= *b));
            if !pruned {
                self.visit(unit + 1);
            }
            self.pop(unit, block, saved);
        }
    }
}

/// Minimum of `which` over all admissible partitions of the sample.
///
/// Partitions are enumerated as restricted growth strings, cutting any
/// prefix whose blocks can no longer reach the constraints with the units
/// left and, for the objectives that never decrease as blocks grow, any
/// prefix already no better than the incumbent. Among equal optima the
/// lexicographically smallest encoding wins. Treated-control objectives
/// consider only partitions in which every group holds both conditions.
pub fn optimal_matching_bruteforce<T: Scalar>(
    sample: &Sample<T>,
    metric: &Metric<T>,
    constraints: &Constraints,
    which: Objective,
) -> Result<OracleResult<T>> {
    let n = sample.len();
    if n > ORACLE_MAX_UNITS {
        return Err(Error::OracleTooLarge {
            n,
            cap: ORACLE_MAX_UNITS,
        });
    }
    constraints.check_arity(sample.conditions())?;
    if which.needs_two_conditions() {
        sample.require_two_conditions()?;
    }
    let space = MetricSpace::new(metric, sample)?;
    let mut dist = vec![T::zero(); n * n];
    for a in 0..n {
        for b in 0..n {
            dist[a * n + b] = space.dist(a, b);
        }
    }
    let k = sample.conditions();
    let mut minimum = constraints.per_treatment().to_vec();
    if matches!(which, Objective::MaxTc | Objective::MeanTc | Objective::SumTc) {
        minimum.iter_mut().for_each(|c| *c = (*c).max(1));
    }
    let mut suffix = vec![vec![0; k]; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1].clone();
        suffix[i][sample.condition_of(i)] += 1;
    }
    let mut search = Search {
        n,
        dist,
        cond: sample.treatment(),
        treated: sample.treated_condition(),
        minimum,
        total: constraints.total(),
        suffix,
        which,
        blocks: Vec::new(),
        rgs: Vec::with_capacity(n),
        best: None,
        examined: 0,
    };
    search.visit(0);
    let (_, rgs) = search.best.ok_or(Error::NoAdmissiblePartition)?;
    let matching = Matching::from_labels(rgs.into_iter().map(Some).collect());
    let value = objective(&matching, sample, &space, which)?;
    Ok(OracleResult {
        matching,
        value,
        examined: search.examined,
    })
}

/// Greedy comparison matchers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// Each treated unit, in index order, takes its nearest unused control.
    Greedy1to1,
    /// Each treated unit takes its nearest control; treated units sharing a
    /// control form one group.
    Replacement1to1,
    /// Each treated unit, in index order, takes its `k` nearest unused controls.
    Greedy1toK(usize),
}

/// Matches treated units to controls with one of the [`Baseline`] rules.
/// Controls left over are unassigned. Ties go to the lower index.
pub fn baseline_match<T: Scalar>(sample: &Sample<T>, metric: &Metric<T>, method: Baseline) -> Result<Matching> {
    sample.require_two_conditions()?;
    let space = MetricSpace::new(metric, sample)?;
    let treated_cond = sample.treated_condition();
    let treated = sample.treatment_set(treated_cond);
    let controls = sample.treatment_set(1 - treated_cond);
    let index = NnIndex::build(&space, controls)?;
    let mut labels = vec![None; sample.len()];

    let per_treated = match method {
        Baseline::Greedy1to1 => 1,
        Baseline::Greedy1toK(k) => k,
        Baseline::Replacement1to1 => {
            let mut group_of_control = vec![None; sample.len()];
            let mut groups = 0;
            for &t in treated {
                let c = index.knn(t, 1, None)?[0].unit;
                let g = *group_of_control[c].get_or_insert_with(|| {
                    groups += 1;
                    groups - 1
                });
                labels[c] = Some(g);
                labels[t] = Some(g);
            }
            return Ok(Matching::from_labels(labels));
        }
    };
    if per_treated == 0 {
        return Err(Error::InvalidConfig("1:k matching needs k >= 1".into()));
    }
    if controls.len() < per_treated * treated.len() {
        return Err(Error::InfeasibleConstraints(format!(
            "{} treated units need {} controls each, only {} controls",
            treated.len(),
            per_treated,
            controls.len()
        )));
    }
    let mut used = vec![false; sample.len()];
    for (g, &t) in treated.iter().enumerate() {
        labels[t] = Some(g);
        let mut kappa = (2 * per_treated).max(8);
        // Widen the query until enough unused controls turn up.
        let picks = loop {
            let kappa_now = kappa.min(index.len());
            let free: Vec<usize> = index
                .knn(t, kappa_now, None)?
                .into_iter()
                .map(|nb| nb.unit)
                .filter(|&c| !used[c])
                .take(per_treated)
                .collect();
            if free.len() == per_treated {
                break free;
            }
            kappa *= 4;
        };
        for c in picks {
            used[c] = true;
            labels[c] = Some(g);
        }
    }
    Ok(Matching::from_labels(labels))
}
