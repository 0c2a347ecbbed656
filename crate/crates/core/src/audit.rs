//! Direct checks of the structural guarantees of the matching algorithm.
//!
//! Each audit re-derives its property from the definitions rather than from
//! the code paths that produced the object, and reports the first violation
//! it finds.

use crate::digraph::CompatibleDigraph;
use crate::matcher::Matching;
use crate::metric::MetricSpace;
use crate::sample::{Constraints, Sample};
use crate::scalar::Scalar;

pub type AuditResult = std::result::Result<(), String>;

fn condition_counts<T: Scalar>(units: &[usize], sample: &Sample<T>) -> Vec<usize> {
    let mut counts = vec![0; sample.conditions()];
    for &u in units {
        counts[sample.condition_of(u)] += 1;
    }
    counts
}

/// Every feasible source's closed neighborhood satisfies the constraints.
pub fn neighborhoods_satisfy<T: Scalar>(g: &CompatibleDigraph<T>, sample: &Sample<T>) -> AuditResult {
    let c = g.constraints();
    for u in g.feasible_sources() {
        let mut nb = g.closed_neighborhood(u);
        nb.sort_unstable();
        if nb.windows(2).any(|w| w[0] == w[1]) {
            return Err(format!("unit {u} has duplicate arc targets"));
        }
        let counts = condition_counts(&nb, sample);
        if !c.admits(&counts) {
            return Err(format!(
                "closed neighborhood of unit {u} has condition counts {counts:?}, constraints {c}"
            ));
        }
    }
    Ok(())
}

/// Smallest radius around `unit` whose closed ball satisfies the constraints.
fn smallest_compatible_radius<T: Scalar>(
    unit: usize,
    sample: &Sample<T>,
    space: &MetricSpace<T>,
    c: &Constraints,
) -> Option<T> {
    let mut by_distance: Vec<(T, usize)> = (0..sample.len()).map(|v| (space.dist(unit, v), v)).collect();
    by_distance.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut counts = vec![0; sample.conditions()];
    let mut radius = T::zero();
    if c.admits(&counts) {
        return Some(radius);
    }
    // The unit itself is always in its closed neighborhood, at distance zero.
    counts[sample.condition_of(unit)] += 1;
    if c.admits(&counts) {
        return Some(radius);
    }
    for (d, v) in by_distance.into_iter().filter(|&(_, v)| v != unit) {
        counts[sample.condition_of(v)] += 1;
        radius = d;
        if c.admits(&counts) {
            return Some(radius);
        }
    }
    None
}

/// For every feasible source, the longest arc equals the smallest radius
/// that any constraint-compatible neighborhood of that source could have.
pub fn minimal_arcs<T: Scalar>(g: &CompatibleDigraph<T>, sample: &Sample<T>, space: &MetricSpace<T>) -> AuditResult {
    for u in g.feasible_sources() {
        let longest = g.arc_distances(u).iter().copied().fold(T::zero(), T::max);
        match smallest_compatible_radius(u, sample, space, g.constraints()) {
            Some(r) if r == longest => {}
            other => {
                return Err(format!(
                    "unit {u}: longest arc {longest}, smallest compatible radius {other:?}"
                ))
            }
        }
    }
    Ok(())
}

/// Seeds are feasible, have pairwise disjoint closed neighborhoods, and
/// every other feasible source overlaps some seed's neighborhood.
pub fn seed_set<T: Scalar>(g: &CompatibleDigraph<T>, seeds: &[usize]) -> AuditResult {
    let mut owner = vec![None; g.len()];
    for &s in seeds {
        if !g.is_feasible(s) {
            return Err(format!("seed {s} is not a feasible source"));
        }
        for v in g.closed_neighborhood(s) {
            if let Some(other) = owner[v] {
                return Err(format!("seeds {other} and {s} share unit {v}"));
            }
            owner[v] = Some(s);
        }
    }
    for u in g.feasible_sources() {
        if owner[u] == Some(u) {
            continue;
        }
        if g.closed_neighborhood(u).iter().all(|&v| owner[v].is_none()) {
            return Err(format!("unit {u} could be added as a seed"));
        }
    }
    Ok(())
}

/// Every group satisfies the constraints. Unassigned units are allowed.
pub fn groups_satisfy<T: Scalar>(m: &Matching, sample: &Sample<T>, c: &Constraints) -> AuditResult {
    if m.len() != sample.len() {
        return Err(format!("matching has {} units, sample {}", m.len(), sample.len()));
    }
    for (g, members) in m.groups().iter().enumerate() {
        let counts = condition_counts(members, sample);
        if !c.admits(&counts) {
            return Err(format!("group {g} has condition counts {counts:?}, constraints {c}"));
        }
    }
    Ok(())
}

/// Spanning, disjoint, and every group satisfies the constraints.
pub fn admissible<T: Scalar>(m: &Matching, sample: &Sample<T>, c: &Constraints) -> AuditResult {
    if let Some(u) = m.unassigned().first() {
        return Err(format!("unit {u} is unassigned"));
    }
    let mut seen = vec![false; sample.len()];
    for (g, members) in m.groups().iter().enumerate() {
        if members.is_empty() {
            return Err(format!("group {g} is empty"));
        }
        for &u in members {
            if std::mem::replace(&mut seen[u], true) {
                return Err(format!("unit {u} appears twice"));
            }
            if m.group_of(u) != Some(g) {
                return Err(format!("unit {u} listed in group {g} but labeled {:?}", m.group_of(u)));
            }
        }
    }
    groups_satisfy(m, sample, c)
}

/// One seed per group, each group holds its seed's whole closed
/// neighborhood, and every other member has an arc into that neighborhood.
pub fn seed_structure<T: Scalar>(g: &CompatibleDigraph<T>, seeds: &[usize], m: &Matching) -> AuditResult {
    let mut seed_of_group = vec![None; m.group_count()];
    for &s in seeds {
        let group = m.group_of(s).ok_or_else(|| format!("seed {s} is unassigned"))?;
        if seed_of_group[group].replace(s).is_some() {
            return Err(format!("group {group} has two seeds"));
        }
        for v in g.closed_neighborhood(s) {
            if m.group_of(v) != Some(group) {
                return Err(format!("unit {v} of seed {s}'s neighborhood left its group"));
            }
        }
    }
    for (group, members) in m.groups().iter().enumerate() {
        let seed = seed_of_group[group].ok_or_else(|| format!("group {group} has no seed"))?;
        let core = g.closed_neighborhood(seed);
        for &u in members {
            if !core.contains(&u) && !g.arcs(u).iter().any(|v| core.contains(v)) {
                return Err(format!("unit {u} is more than two arcs from seed {seed}"));
            }
        }
    }
    Ok(())
}
