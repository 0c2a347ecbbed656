//! The constraint-compatible nearest-neighbor digraph.
//!
//! Every source draws `c_j` arcs to its nearest units of each condition `j`
//! and then `r = max(0, t - sum c_j)` arcs to its nearest remaining units of
//! any condition. Closed neighborhoods (a vertex plus its arc targets) then
//! satisfy the matching constraints, and no other digraph with that property
//! has shorter arcs.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metric::MetricSpace;
use crate::nnsearch::{spatial_order, Neighbor, NnIndex};
use crate::options::MatchOptions;
use crate::sample::{Constraints, Sample};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceState {
    /// Not in the focus set; carries no arcs.
    Outside,
    Feasible,
    /// Could not draw its required arcs within the caliper; carries no arcs.
    Infeasible,
}

/// `NN(kappa, G(sources -> targets))`: per source, the `kappa` nearest targets.
pub fn nn_subgraph<T: Scalar>(
    space: &MetricSpace<T>,
    sources: &[usize],
    targets: &[usize],
    kappa: usize,
    caliper: Option<T>,
) -> Result<Vec<Vec<Neighbor<T>>>> {
    let index = NnIndex::build(space, targets)?;
    index.knn_batch(sources, kappa, caliper)
}

/// Arcs are stored in a flat array of fixed width per unit. Within a row the
/// per-condition arcs come first, in condition order, followed by the
/// residual arcs.
#[derive(Debug, Clone)]
pub struct CompatibleDigraph<T> {
    width: usize,
    state: Vec<SourceState>,
    targets: Vec<usize>,
    distances: Vec<T>,
    constraints: Constraints,
}

pub fn build_compatible_digraph<T: Scalar>(
    sample: &Sample<T>,
    space: &MetricSpace<T>,
    constraints: &Constraints,
    options: &MatchOptions<T>,
) -> Result<CompatibleDigraph<T>> {
    let n = sample.len();
    if space.len() != n {
        return Err(Error::InvalidMetric(format!(
            "metric space has {} points, sample has {n} units",
            space.len()
        )));
    }
    constraints.check_feasible(sample)?;
    options.validate(n)?;

    let per = constraints.per_treatment();
    let residual = constraints.residual();
    let width = constraints.degree();
    let caliper = options.caliper_gc;

    let by_condition = per
        .iter()
        .enumerate()
        .map(|(cond, &c)| {
            if c > 0 {
                NnIndex::build(space, sample.treatment_set(cond)).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let everyone = if residual > 0 {
        let all: Vec<usize> = (0..n).collect();
        Some(NnIndex::build(space, &all)?)
    } else {
        None
    };

    let mut in_focus = vec![options.focus.is_none(); n];
    if let Some(focus) = &options.focus {
        for &u in focus {
            in_focus[u] = true;
        }
    }

    let mut state = vec![SourceState::Outside; n];
    let mut targets = vec![usize::MAX; n * width];
    let mut distances = vec![T::zero(); n * width];

    let fill_row = |unit: usize, row_t: &mut [usize], row_d: &mut [T]| -> Result<SourceState> {
        if !in_focus[unit] {
            return Ok(SourceState::Outside);
        }
        let mut filled = 0;
        for (index, &c) in by_condition.iter().zip(per) {
            if let Some(index) = index {
                let found = index.knn(unit, c, caliper)?;
                if found.len() < c {
                    return Ok(SourceState::Infeasible);
                }
                for nb in found {
                    row_t[filled] = nb.unit;
                    row_d[filled] = nb.distance;
                    filled += 1;
                }
            }
        }
        if let Some(index) = &everyone {
            let found = index.knn_excluding(unit, residual, &row_t[..filled], caliper)?;
            if found.len() < residual {
                return Ok(SourceState::Infeasible);
            }
            for nb in found {
                row_t[filled] = nb.unit;
                row_d[filled] = nb.distance;
                filled += 1;
            }
        }
        debug_assert_eq!(filled, row_t.len());
        Ok(SourceState::Feasible)
    };

    if width == 0 {
        for (u, s) in state.iter_mut().enumerate() {
            if in_focus[u] {
                *s = SourceState::Feasible;
            }
        }
    } else {
        // Sources are visited in spatial order so that consecutive queries walk
        // the same parts of the trees; rows are then moved to their unit slots.
        let order = spatial_order(space, &(0..n).collect::<Vec<_>>());
        let mut found_state = vec![SourceState::Outside; n];
        let mut found_t = vec![usize::MAX; n * width];
        let mut found_d = vec![T::zero(); n * width];
        found_state
            .par_iter_mut()
            .zip(found_t.par_chunks_mut(width))
            .zip(found_d.par_chunks_mut(width))
            .zip(order.par_iter())
            .try_for_each(|(((s, row_t), row_d), &unit)| {
                *s = fill_row(unit, row_t, row_d)?;
                if *s != SourceState::Feasible {
                    row_t.fill(usize::MAX);
                    row_d.fill(T::zero());
                }
                Ok::<(), Error>(())
            })?;
        for (pos, &unit) in order.iter().enumerate() {
            state[unit] = found_state[pos];
            let (from, to) = (pos * width, unit * width);
            targets[to..to + width].copy_from_slice(&found_t[from..from + width]);
            distances[to..to + width].copy_from_slice(&found_d[from..from + width]);
        }
    }

    let g = CompatibleDigraph {
        width,
        state,
        targets,
        distances,
        constraints: constraints.clone(),
    };
    if g.feasible_sources().next().is_none() {
        return Err(Error::NoFeasibleUnits {
            units: g.infeasible_units(),
        });
    }
    Ok(g)
}

impl<T: Scalar> CompatibleDigraph<T> {
    /// Number of vertices (units in the sample).
    pub fn len(&self) -> usize {
        self.state.len()
    }

    pub fn is_empty(&self) -> bool {
        self.state.is_empty()
    }

    /// Out-degree of every feasible source.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn constraints(&self) -> &Constraints {
        &self.constraints
    }

    pub fn state(&self, unit: usize) -> SourceState {
        self.state[unit]
    }

    pub fn is_feasible(&self, unit: usize) -> bool {
        self.state[unit] == SourceState::Feasible
    }

    pub fn feasible_sources(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&u| self.is_feasible(u))
    }

    pub fn infeasible_units(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&u| self.state[u] == SourceState::Infeasible)
            .collect()
    }

    /// Arc targets of `unit`; empty unless it is a feasible source.
    pub fn arcs(&self, unit: usize) -> &[usize] {
        if self.is_feasible(unit) {
            &self.targets[unit * self.width..(unit + 1) * self.width]
        } else {
            &[]
        }
    }

    pub fn arc_distances(&self, unit: usize) -> &[T] {
        if self.is_feasible(unit) {
            &self.distances[unit * self.width..(unit + 1) * self.width]
        } else {
            &[]
        }
    }

    /// Arcs drawn to meet the per-condition minima.
    pub fn condition_arcs(&self, unit: usize) -> &[usize] {
        let arcs = self.arcs(unit);
        &arcs[..arcs.len().min(self.constraints.per_treatment_sum())]
    }

    /// Arcs drawn to meet the overall size minimum.
    pub fn residual_arcs(&self, unit: usize) -> &[usize] {
        let arcs = self.arcs(unit);
        &arcs[arcs.len().min(self.constraints.per_treatment_sum())..]
    }

    /// `unit` followed by its arc targets other than itself.
    pub fn closed_neighborhood(&self, unit: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.width + 1);
        out.push(unit);
        out.extend(self.arcs(unit).iter().copied().filter(|&v| v != unit));
        out
    }

    pub fn arc_count(&self) -> usize {
        self.feasible_sources().count() * self.width
    }

    /// Largest arc distance; zero when there are no arcs.
    pub fn max_arc_weight(&self) -> T {
        self.feasible_sources()
            .flat_map(|u| self.arc_distances(u).iter().copied())
            .fold(T::zero(), T::max)
    }

    /// Largest distance over arcs joining units of different conditions.
    pub fn max_cross_arc_weight(&self, sample: &Sample<T>) -> T {
        self.feasible_sources()
            .flat_map(|u| {
                let cu = sample.condition_of(u);
                self.arcs(u)
                    .iter()
                    .zip(self.arc_distances(u))
                    .filter(move |(&v, _)| sample.condition_of(v) != cu)
                    .map(|(_, &d)| d)
            })
            .fold(T::zero(), T::max)
    }

    /// Writes one `source target distance` line per arc.
    pub fn write_edge_list<W: Write>(&self, mut out: W, name: impl Fn(usize) -> String) -> io::Result<()> {
        for u in self.feasible_sources() {
            for (&v, d) in self.arcs(u).iter().zip(self.arc_distances(u)) {
                writeln!(out, "{} {} {}", name(u), name(v), d)?;
            }
        }
        Ok(())
    }
}
