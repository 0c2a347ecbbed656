//! Seed selection, seed labeling and residual assignment on top of the
//! compatible digraph, plus the end-to-end [`full_match`].

use rayon::prelude::*;

use crate::digraph::{build_compatible_digraph, CompatibleDigraph};
use crate::error::{Error, Result};
use crate::metric::{Metric, MetricSpace};
use crate::nnsearch::NnIndex;
use crate::options::MatchOptions;
use crate::sample::{Constraints, Sample};
use crate::scalar::Scalar;

/// Disjoint matched groups over the units of a sample. Units outside every
/// group are unassigned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    labels: Vec<Option<usize>>,
    groups: Vec<Vec<usize>>,
}

impl Matching {
    /// Builds a matching from per-unit group ids. Ids need not be contiguous;
    /// groups are numbered by ascending id.
    pub fn from_labels(labels: Vec<Option<usize>>) -> Self {
        let mut ids: Vec<usize> = labels.iter().flatten().copied().collect();
        ids.sort_unstable();
        ids.dedup();
        let mut groups = vec![Vec::new(); ids.len()];
        let labels: Vec<Option<usize>> = labels
            .iter()
            .enumerate()
            .map(|(unit, id)| {
                id.map(|id| {
                    let g = ids.binary_search(&id).expect("id collected above");
                    groups[g].push(unit);
                    g
                })
            })
            .collect();
        Matching { labels, groups }
    }

    /// Builds a matching over `n` units from explicit member lists.
    pub fn from_groups(n: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut labels = vec![None; n];
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::InvalidConfig(format!("group {g} is empty")));
            }
            for &u in members {
                match labels.get_mut(u) {
                    None => return Err(Error::IndexOutOfBounds { index: u, n }),
                    Some(Some(_)) => return Err(Error::InvalidConfig(format!("unit {u} is in two groups"))),
                    Some(slot) => *slot = Some(g),
                }
            }
        }
        Ok(Matching::from_labels(labels))
    }

    /// Number of units covered (assigned or not).
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn group_of(&self, unit: usize) -> Option<usize> {
        self.labels[unit]
    }

    /// Member lists, each ascending.
    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn unassigned(&self) -> Vec<usize> {
        (0..self.len()).filter(|&u| self.labels[u].is_none()).collect()
    }

    pub fn assigned_count(&self) -> usize {
        self.labels.iter().flatten().count()
    }
}

/// Seeds and a snapshot of their closed neighborhoods.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedSet {
    pub seeds: Vec<usize>,
    pub neighborhoods: Vec<Vec<usize>>,
}

/// Greedy maximal set of feasible sources with pairwise disjoint closed
/// neighborhoods.
///
/// The base scan visits sources in ascending index. The refined scan visits
/// them by ascending number of other sources whose neighborhoods overlap
/// theirs (ties by index), which tends to find more seeds.
pub fn find_seeds<T: Scalar>(g: &CompatibleDigraph<T>, refined: bool) -> SeedSet {
    let order: Vec<usize> = if refined {
        let degree = conflict_degrees(g);
        let mut order: Vec<usize> = g.feasible_sources().collect();
        order.sort_by_key(|&u| (degree[u], u));
        order
    } else {
        g.feasible_sources().collect()
    };

    let mut covered = vec![false; g.len()];
    let mut seeds = Vec::new();
    let mut neighborhoods = Vec::new();
    for u in order {
        let nb = g.closed_neighborhood(u);
        if nb.iter().all(|&v| !covered[v]) {
            for &v in &nb {
                covered[v] = true;
            }
            seeds.push(u);
            neighborhoods.push(nb);
        }
    }
    SeedSet { seeds, neighborhoods }
}

/// For every feasible source, the number of other feasible sources whose
/// closed neighborhood intersects its own: its degree in the graph with
/// adjacency `AA' + A + A'`.
pub fn conflict_degrees<T: Scalar>(g: &CompatibleDigraph<T>) -> Vec<usize> {
    let n = g.len();
    let mut start = vec![0usize; n + 1];
    for s in g.feasible_sources() {
        for v in g.closed_neighborhood(s) {
            start[v + 1] += 1;
        }
    }
    for v in 0..n {
        start[v + 1] += start[v];
    }
    let mut fill = start.clone();
    let mut members = vec![0usize; start[n]];
    for s in g.feasible_sources() {
        for v in g.closed_neighborhood(s) {
            members[fill[v]] = s;
            fill[v] += 1;
        }
    }

    let mut degree = vec![0usize; n];
    let mut stamp = vec![usize::MAX; n];
    for s in g.feasible_sources() {
        stamp[s] = s;
        for v in g.closed_neighborhood(s) {
            for &other in &members[start[v]..start[v + 1]] {
                if stamp[other] != s {
                    stamp[other] = s;
                    degree[s] += 1;
                }
            }
        }
    }
    degree
}

/// Gives every unit in a seed's closed neighborhood that seed's group id;
/// ids follow seed order.
pub fn label_seed_neighborhoods<T: Scalar>(g: &CompatibleDigraph<T>, seeds: &SeedSet) -> Vec<Option<usize>> {
    let mut labels = vec![None; g.len()];
    for (group, nb) in seeds.neighborhoods.iter().enumerate() {
        for &v in nb {
            debug_assert!(labels[v].is_none(), "seed neighborhoods overlap");
            labels[v] = Some(group);
        }
    }
    labels
}

/// Assigns units left unlabeled after seed labeling.
///
/// Every assignment copies the label of a unit labeled by
/// [`label_seed_neighborhoods`]; assignments made here are never used as
/// anchors for other units. Feasible sources join their nearest labeled
/// arc target, or with `global_step5` the nearest labeled unit anywhere.
/// `caliper_step5` bounds the assignment distance in both cases. Units
/// that are outside the focus set or could not meet the digraph caliper
/// are only assigned with `global_step5`, bounded by `caliper_step5` or,
/// if unset, by `caliper_gc`.
pub fn assign_residual<T: Scalar>(
    g: &CompatibleDigraph<T>,
    labels: &[Option<usize>],
    space: &MetricSpace<T>,
    options: &MatchOptions<T>,
) -> Result<Matching> {
    let caliper = options.caliper_step5;
    let unlabeled: Vec<usize> = (0..g.len()).filter(|&u| labels[u].is_none()).collect();

    let labeled: Vec<usize> = (0..g.len()).filter(|&u| labels[u].is_some()).collect();
    let index = if options.global_step5 && !labeled.is_empty() && !unlabeled.is_empty() {
        Some(NnIndex::build(space, &labeled)?)
    } else {
        None
    };

    let assigned: Vec<Option<usize>> = unlabeled
        .par_iter()
        .map(|&u| -> Result<Option<usize>> {
            if let Some(index) = &index {
                let bound = if g.is_feasible(u) {
                    caliper
                } else {
                    caliper.or(options.caliper_gc)
                };
                let nearest = index.knn(u, 1, bound)?;
                return Ok(nearest.first().and_then(|nb| labels[nb.unit]));
            }
            let best = g
                .arcs(u)
                .iter()
                .zip(g.arc_distances(u))
                .filter(|(&v, _)| labels[v].is_some())
                .min_by(|a, b| {
                    a.1.partial_cmp(b.1)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.0.cmp(b.0))
                });
            Ok(match best {
                Some((&v, &d)) if caliper.is_none_or(|c| d <= c) => labels[v],
                _ => None,
            })
        })
        .collect::<Result<_>>()?;

    let mut out = labels.to_vec();
    for (&u, group) in unlabeled.iter().zip(assigned) {
        out[u] = group;
    }
    Ok(Matching::from_labels(out))
}

/// Everything [`full_match`] computes on the way to the matching.
#[derive(Debug, Clone)]
pub struct MatchTrace<T> {
    pub digraph: CompatibleDigraph<T>,
    pub seeds: SeedSet,
    pub matching: Matching,
}

/// Runs the whole algorithm in a prepared metric space.
pub fn match_in_space<T: Scalar>(
    sample: &Sample<T>,
    space: &MetricSpace<T>,
    constraints: &Constraints,
    options: &MatchOptions<T>,
) -> Result<MatchTrace<T>> {
    let digraph = build_compatible_digraph(sample, space, constraints, options)?;
    let seeds = find_seeds(&digraph, options.refined_seeds);
    let labels = label_seed_neighborhoods(&digraph, &seeds);
    let matching = assign_residual(&digraph, &labels, space, options)?;
    Ok(MatchTrace {
        digraph,
        seeds,
        matching,
    })
}

/// Generalized full matching of `sample` under `constraints`.
///
/// Without calipers or a focus set, every unit is matched, every group
/// satisfies the constraints, and the largest within-group distance is at
/// most four times the optimum.
pub fn full_match<T: Scalar>(
    sample: &Sample<T>,
    metric: &Metric<T>,
    constraints: &Constraints,
    options: &MatchOptions<T>,
) -> Result<Matching> {
    let space = MetricSpace::new(metric, sample)?;
    match_in_space(sample, &space, constraints, options).map(|t| t.matching)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit;
    use crate::sample::validate_sample;

    fn line(xs: &[f64], labels: &[&str]) -> (Sample<f64>, MetricSpace<f64>) {
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let s = validate_sample(&rows, labels).unwrap();
        let space = MetricSpace::new(&Metric::Euclidean, &s).unwrap();
        (s, space)
    }

    fn pair_constraints() -> Constraints {
        Constraints::new(vec![1, 1], 2)
    }

    #[test]
    fn four_point_line_trace() {
        let (s, space) = line(&[0.0, 1.0, 10.0, 11.0], &["T", "C", "T", "C"]);
        let t = match_in_space(&s, &space, &pair_constraints(), &MatchOptions::default()).unwrap();
        assert_eq!(t.seeds.seeds, vec![0, 2]);
        assert_eq!(t.seeds.neighborhoods, vec![vec![0, 1], vec![2, 3]]);
        let labels = label_seed_neighborhoods(&t.digraph, &t.seeds);
        assert_eq!(labels, vec![Some(0), Some(0), Some(1), Some(1)]);
        assert_eq!(t.matching.groups(), &[vec![0, 1], vec![2, 3]]);
        assert!(t.matching.unassigned().is_empty());
    }

    #[test]
    fn single_source_is_the_seed() {
        let (s, space) = line(&[0.0, 1.0, 5.0], &["T", "C", "C"]);
        let opts = MatchOptions {
            focus: Some(vec![2]),
            ..Default::default()
        };
        let g = build_compatible_digraph(&s, &space, &pair_constraints(), &opts).unwrap();
        let seeds = find_seeds(&g, false);
        assert_eq!(seeds.seeds, vec![2]);
        assert_eq!(find_seeds(&g, true).seeds, vec![2]);
    }

    #[test]
    fn whole_sample_neighborhood_gives_one_group() {
        let (s, space) = line(&[0.0, 1.0, 2.0], &["T", "C", "C"]);
        let c = Constraints::new(vec![1, 2], 3);
        let t = match_in_space(&s, &space, &c, &MatchOptions::default()).unwrap();
        assert_eq!(t.seeds.seeds, vec![0]);
        assert_eq!(t.matching.groups(), &[vec![0, 1, 2]]);
    }

    #[test]
    fn leftover_unit_joins_neighborhood_group() {
        let (s, space) = line(&[0.0, 1.0, 2.0, 10.0, 11.0], &["T", "C", "C", "T", "C"]);
        let t = match_in_space(&s, &space, &pair_constraints(), &MatchOptions::default()).unwrap();
        assert_eq!(t.seeds.seeds, vec![0, 3]);
        let step4 = label_seed_neighborhoods(&t.digraph, &t.seeds);
        assert_eq!(step4[2], None);
        assert_eq!(t.matching.groups(), &[vec![0, 1, 2], vec![3, 4]]);

        let opts = MatchOptions {
            global_step5: true,
            caliper_step5: Some(0.5),
            ..Default::default()
        };
        let t = match_in_space(&s, &space, &pair_constraints(), &opts).unwrap();
        assert_eq!(t.matching.unassigned(), vec![2]);
        assert_eq!(t.matching.groups(), &[vec![0, 1], vec![3, 4]]);

        let opts = MatchOptions {
            global_step5: true,
            ..Default::default()
        };
        let t = match_in_space(&s, &space, &pair_constraints(), &opts).unwrap();
        assert_eq!(t.matching.groups(), &[vec![0, 1, 2], vec![3, 4]]);
    }

    #[test]
    fn global_step_picks_nearer_group_than_neighborhood() {
        // unit 2 (C at 4.0) only points to T units; its neighborhood holds
        // the T at 0.0 while the labeled C at 5.0 of the other group is closer
        let (s, space) = line(&[0.0, 0.5, 4.0, 9.0, 5.0], &["T", "C", "C", "T", "C"]);
        let base = match_in_space(&s, &space, &pair_constraints(), &MatchOptions::default()).unwrap();
        let global = match_in_space(
            &s,
            &space,
            &pair_constraints(),
            &MatchOptions {
                global_step5: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(base.seeds.seeds, vec![0, 3]);
        assert_eq!(base.matching.group_of(2), Some(0));
        assert_eq!(global.matching.group_of(2), Some(1));
    }

    #[test]
    fn identical_points() {
        let (s, _) = line(&[2.0; 7], &["T", "C", "C", "T", "C", "C", "T"]);
        let m = full_match(&s, &Metric::Euclidean, &pair_constraints(), &MatchOptions::default()).unwrap();
        audit::admissible(&m, &s, &pair_constraints()).unwrap();
        assert!(m.unassigned().is_empty());
    }

    #[test]
    fn caliper_discards_isolated_units() {
        let (s, space) = line(&[0.0, 1.0, 10.0, 11.0, 30.0], &["T", "C", "T", "C", "T"]);
        let opts = MatchOptions {
            caliper_gc: Some(2.0),
            ..Default::default()
        };
        let t = match_in_space(&s, &space, &pair_constraints(), &opts).unwrap();
        assert_eq!(t.matching.unassigned(), vec![4]);
        audit::groups_satisfy(&t.matching, &s, &pair_constraints()).unwrap();

        let opts = MatchOptions {
            caliper_gc: Some(2.0),
            global_step5: true,
            ..Default::default()
        };
        let t = match_in_space(&s, &space, &pair_constraints(), &opts).unwrap();
        assert_eq!(t.matching.unassigned(), vec![4]);
    }

    #[test]
    fn focus_on_treated_leaves_spare_controls() {
        let (s, space) = line(&[0.0, 0.2, 5.0, 10.0, 10.3, 20.0], &["T", "C", "C", "T", "C", "C"]);
        let opts = MatchOptions {
            focus: Some(s.treatment_set(0).to_vec()),
            ..Default::default()
        };
        let t = match_in_space(&s, &space, &pair_constraints(), &opts).unwrap();
        assert_eq!(t.matching.groups(), &[vec![0, 1], vec![3, 4]]);
        assert_eq!(t.matching.unassigned(), vec![2, 5]);

        let opts = MatchOptions {
            global_step5: true,
            caliper_step5: Some(6.0),
            ..opts
        };
        let t = match_in_space(&s, &space, &pair_constraints(), &opts).unwrap();
        assert_eq!(t.matching.unassigned(), vec![5]);
        assert_eq!(t.matching.group_of(2), Some(0));
    }

    #[test]
    fn refined_seeds_order_by_conflicts() {
        // the middle T's neighborhood overlaps both ends; the base scan starts
        // from unit 0 while the refined scan prefers the low-conflict ends
        let (s, space) = line(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0], &["C", "T", "C", "T", "C", "T"]);
        let g = build_compatible_digraph(&s, &space, &pair_constraints(), &MatchOptions::default()).unwrap();
        let degree = conflict_degrees(&g);
        for (u, &got) in degree.iter().enumerate() {
            let expect = (0..6)
                .filter(|&v| v != u)
                .filter(|&v| {
                    let a = g.closed_neighborhood(u);
                    g.closed_neighborhood(v).iter().any(|x| a.contains(x))
                })
                .count();
            assert_eq!(got, expect);
        }
        for refined in [false, true] {
            let seeds = find_seeds(&g, refined);
            audit::seed_set(&g, &seeds.seeds).unwrap();
        }
    }

    #[test]
    fn matching_from_groups_validates() {
        assert!(Matching::from_groups(3, vec![vec![0, 1], vec![1, 2]]).is_err());
        assert!(Matching::from_groups(3, vec![vec![0, 5]]).is_err());
        assert!(Matching::from_groups(3, vec![vec![]]).is_err());
        let m = Matching::from_groups(4, vec![vec![3, 1], vec![0]]).unwrap();
        assert_eq!(m.groups(), &[vec![1, 3], vec![0]]);
        assert_eq!(m.unassigned(), vec![2]);
        let relabeled = Matching::from_labels(vec![Some(7), Some(2), None, Some(2)]);
        assert_eq!(relabeled.groups(), &[vec![1, 3], vec![0]]);
    }

    #[test]
    fn f32_matching() {
        let rows: Vec<Vec<f32>> = vec![vec![0.0], vec![1.0], vec![10.0], vec![11.0]];
        let s = validate_sample(&rows, &["T", "C", "T", "C"]).unwrap();
        let m = full_match(&s, &Metric::Euclidean, &pair_constraints(), &MatchOptions::default()).unwrap();
        assert_eq!(m.groups(), &[vec![0, 1], vec![2, 3]]);
    }
}
