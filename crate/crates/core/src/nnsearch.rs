//! Exact k-nearest-neighbor queries over a fixed search set.
//!
//! Results are ordered by distance; ties go to the query unit itself and then
//! to the smaller unit index. The kd-tree and the linear scan share the same
//! ordering key, so both backends return identical lists.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metric::{squared_euclidean, MetricSpace};
use crate::scalar::Scalar;

const LEAF_SIZE: usize = 8;

/// Exclusion lists up to this length are served by over-fetching from the
/// index and filtering; longer lists fall back to a filtered scan.
pub const EXCLUSION_REWRITE_LIMIT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<T> {
    pub unit: usize,
    pub distance: T,
}

/// Ordering key: squared distance, then self before others, then index.
#[derive(Debug, Clone, Copy)]
struct Key<T> {
    dist_sq: T,
    other: bool,
    unit: usize,
}

impl<T: Scalar> Key<T> {
    #[inline]
    fn cmp(&self, rhs: &Self) -> Ordering {
        self.dist_sq
            .partial_cmp(&rhs.dist_sq)
            .unwrap_or(Ordering::Equal)
            .then(self.other.cmp(&rhs.other))
            .then(self.unit.cmp(&rhs.unit))
    }
}

/// Bounded sorted buffer of the best keys seen so far.
struct Best<T> {
    keys: Vec<Key<T>>,
    cap: usize,
}

impl<T: Scalar> Best<T> {
    fn new(cap: usize) -> Self {
        Best {
            keys: Vec::with_capacity(cap.min(1024) + 1),
            cap,
        }
    }

    #[inline]
    fn full(&self) -> bool {
        self.keys.len() >= self.cap
    }

    #[inline]
    fn worst(&self) -> T {
        self.keys.last().map(|k| k.dist_sq).unwrap_or_else(T::infinity)
    }

    #[inline]
    fn offer(&mut self, key: Key<T>) {
        if self.full() {
            match self.keys.last() {
                Some(last) if key.cmp(last) == Ordering::Less => {}
                _ => return,
            }
            self.keys.pop();
        }
        let pos = self.keys.partition_point(|k| k.cmp(&key) == Ordering::Less);
        self.keys.insert(pos, key);
    }
}

#[derive(Debug, Clone)]
enum Node<T> {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: T,
        left: usize,
        right: usize,
    },
}

/// Buffers reused across the levels of a kd-tree build.
struct Scratch<T> {
    keys: Vec<(T, usize, usize)>,
    points: Vec<T>,
}

impl<T> Default for Scratch<T> {
    fn default() -> Self {
        Scratch {
            keys: Vec::new(),
            points: Vec::new(),
        }
    }
}

/// Static bucket kd-tree over a subset of a [`MetricSpace`].
#[derive(Debug, Clone)]
struct KdTree<T> {
    dim: usize,
    points: Vec<T>,
    units: Vec<usize>,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> KdTree<T> {
    fn build(space: &MetricSpace<T>, members: &[usize]) -> Self {
        let dim = space.dim();
        let mut units = members.to_vec();
        let mut points = Vec::with_capacity(units.len() * dim);
        for &u in &units {
            points.extend_from_slice(space.point(u));
        }
        let mut nodes = Vec::with_capacity(2 * units.len() / LEAF_SIZE + 1);
        let mut scratch = Scratch::default();
        Self::build_rec(dim, &mut units, &mut points, 0, &mut nodes, &mut scratch);
        KdTree {
            dim,
            points,
            units,
            nodes,
        }
    }

    /// Splits `units` and their coordinates `points` in place, so that deeper
    /// levels only touch a contiguous block of memory.
    fn build_rec(
        dim: usize,
        units: &mut [usize],
        points: &mut [T],
        offset: usize,
        nodes: &mut Vec<Node<T>>,
        scratch: &mut Scratch<T>,
    ) -> usize {
        let id = nodes.len();
        let len = units.len();
        if len <= LEAF_SIZE {
            nodes.push(Node::Leaf {
                start: offset,
                end: offset + len,
            });
            return id;
        }
        let axis = widest_dimension(dim, points);
        let mid = len / 2;
        scratch.keys.clear();
        scratch
            .keys
            .extend((0..len).map(|i| (points[i * dim + axis], units[i], i)));
        scratch.keys.select_nth_unstable_by(mid, |a, b| {
            a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
        });
        scratch.points.clear();
        for (slot, &(_, unit, i)) in units.iter_mut().zip(&scratch.keys) {
            *slot = unit;
            scratch.points.extend_from_slice(&points[i * dim..(i + 1) * dim]);
        }
        points.copy_from_slice(&scratch.points);
        let value = points[mid * dim + axis];
        nodes.push(Node::Leaf { start: 0, end: 0 });
        let (lo_units, hi_units) = units.split_at_mut(mid);
        let (lo_points, hi_points) = points.split_at_mut(mid * dim);
        let left = Self::build_rec(dim, lo_units, lo_points, offset, nodes, scratch);
        let right = Self::build_rec(dim, hi_units, hi_points, offset + mid, nodes, scratch);
        nodes[id] = Node::Split {
            dim: axis,
            value,
            left,
            right,
        };
        id
    }

    fn search(&self, query: &[T], query_unit: usize, best: &mut Best<T>) {
        if !self.nodes.is_empty() {
            self.search_node(0, query, query_unit, best);
        }
    }

    fn search_node(&self, node: usize, query: &[T], query_unit: usize, best: &mut Best<T>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for pos in start..end {
                    let p = &self.points[pos * self.dim..(pos + 1) * self.dim];
                    let unit = self.units[pos];
                    best.offer(Key {
                        dist_sq: squared_euclidean(query, p),
                        other: unit != query_unit,
                        unit,
                    });
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = query[dim] - value;
                let (near, far) = if diff < T::zero() { (left, right) } else { (right, left) };
                self.search_node(near, query, query_unit, best);
                // A single-axis bound keeps exact ties reachable: a point beyond the
                // plane can never round to a smaller squared distance than this.
                if !best.full() || diff * diff <= best.worst() {
                    self.search_node(far, query, query_unit, best);
                }
            }
        }
    }
}

/// Dimensions up to this count are ordered along a Morton curve; higher
/// dimensions use the kd-tree median splits.
const MORTON_MAX_DIM: usize = 8;

/// `units` reordered so that spatially close units sit close together. Falls
/// back to the given order when the metric space cannot be split by
/// coordinates.
pub fn spatial_order<T: Scalar>(space: &MetricSpace<T>, units: &[usize]) -> Vec<usize> {
    let dim = space.dim();
    if !space.supports_tree() || units.is_empty() {
        return units.to_vec();
    }
    if dim > MORTON_MAX_DIM {
        return KdTree::build(space, units).units;
    }
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for &u in units {
        for (d, &v) in space.point(u).iter().enumerate() {
            lo[d] = lo[d].min(v.as_f64());
            hi[d] = hi[d].max(v.as_f64());
        }
    }
    let bits = (64 / dim as u32).min(32);
    let cells = ((1u64 << bits) - 1) as f64;
    let mut keyed: Vec<(u64, usize)> = units
        .iter()
        .map(|&u| {
            let mut code = 0u64;
            for (d, &v) in space.point(u).iter().enumerate() {
                let span = hi[d] - lo[d];
                let cell = if span > 0.0 {
                    ((v.as_f64() - lo[d]) / span * cells) as u64
                } else {
                    0
                };
                for b in 0..bits {
                    code |= ((cell >> b) & 1) << (b as usize * dim + d);
                }
            }
            (code, u)
        })
        .collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, u)| u).collect()
}

/// Axis with the largest coordinate range over row-major `points`.
fn widest_dimension<T: Scalar>(dim: usize, points: &[T]) -> usize {
    let mut lo = vec![T::infinity(); dim];
    let mut hi = vec![T::neg_infinity(); dim];
    for p in points.chunks_exact(dim) {
        for (d, &v) in p.iter().enumerate() {
            lo[d] = lo[d].min(v);
            hi[d] = hi[d].max(v);
        }
    }
    let mut best = (0, T::neg_infinity());
    for d in 0..dim {
        if hi[d] - lo[d] > best.1 {
            best = (d, hi[d] - lo[d]);
        }
    }
    best.0
}

/// Exact nearest-neighbor index over a fixed set of units.
#[derive(Debug, Clone)]
pub struct NnIndex<'a, T> {
    space: &'a MetricSpace<T>,
    members: Vec<usize>,
    tree: Option<KdTree<T>>,
}

impl<'a, T: Scalar> NnIndex<'a, T> {
    /// Indexes `search_set`, using a kd-tree when the metric space allows it.
    pub fn build(space: &'a MetricSpace<T>, search_set: &[usize]) -> Result<Self> {
        Self::with_backend(space, search_set, space.supports_tree())
    }

    /// Always answers queries by linear scan.
    pub fn linear(space: &'a MetricSpace<T>, search_set: &[usize]) -> Result<Self> {
        Self::with_backend(space, search_set, false)
    }

    /// Always answers queries with a kd-tree, whatever the dimension.
    pub fn kd_tree(space: &'a MetricSpace<T>, search_set: &[usize]) -> Result<Self> {
        Self::with_backend(space, search_set, true)
    }

    fn with_backend(space: &'a MetricSpace<T>, search_set: &[usize], tree: bool) -> Result<Self> {
        if search_set.is_empty() {
            return Err(Error::EmptySearchSet);
        }
        let mut members = search_set.to_vec();
        members.sort_unstable();
        members.dedup();
        if let Some(&last) = members.last() {
            if last >= space.len() {
                return Err(Error::IndexOutOfBounds {
                    index: last,
                    n: space.len(),
                });
            }
        }
        let tree = tree.then(|| KdTree::build(space, &members));
        Ok(NnIndex { space, members, tree })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn uses_tree(&self) -> bool {
        self.tree.is_some()
    }

    pub fn contains(&self, unit: usize) -> bool {
        self.members.binary_search(&unit).is_ok()
    }

    /// The `kappa` nearest members to `query`. Members farther than `caliper`
    /// are dropped, so fewer than `kappa` may come back when one is set.
    pub fn knn(&self, query: usize, kappa: usize, caliper: Option<T>) -> Result<Vec<Neighbor<T>>> {
        self.check_query(query)?;
        if caliper.is_none() && kappa > self.members.len() {
            return Err(Error::InfeasibleNeighbors {
                requested: kappa,
                available: self.members.len(),
            });
        }
        let keys = self.nearest_keys(query, kappa.min(self.members.len()));
        Ok(self.finish(keys, kappa, caliper, |_| false))
    }

    /// Like [`knn`](Self::knn) but never returns a unit in `excluded`.
    pub fn knn_excluding(
        &self,
        query: usize,
        kappa: usize,
        excluded: &[usize],
        caliper: Option<T>,
    ) -> Result<Vec<Neighbor<T>>> {
        self.check_query(query)?;
        let mut excl = excluded.to_vec();
        excl.sort_unstable();
        excl.dedup();
        let blocked = excl.iter().filter(|u| self.contains(**u)).count();
        let available = self.members.len() - blocked;
        if caliper.is_none() && kappa > available {
            return Err(Error::InfeasibleNeighbors {
                requested: kappa,
                available,
            });
        }
        let is_excluded = |u: usize| excl.binary_search(&u).is_ok();
        let keys = if excl.len() <= EXCLUSION_REWRITE_LIMIT {
            // NN(kappa, G - X) = NN(kappa, NN(kappa + |X|, G) - X)
            self.nearest_keys(query, (kappa + blocked).min(self.members.len()))
        } else {
            self.scan(query, kappa.min(available), is_excluded)
        };
        Ok(self.finish(keys, kappa, caliper, is_excluded))
    }

    /// [`knn`](Self::knn) for many queries; results are in query order.
    pub fn knn_batch(&self, queries: &[usize], kappa: usize, caliper: Option<T>) -> Result<Vec<Vec<Neighbor<T>>>> {
        queries.par_iter().map(|&q| self.knn(q, kappa, caliper)).collect()
    }

    fn check_query(&self, query: usize) -> Result<()> {
        if query < self.space.len() {
            Ok(())
        } else {
            Err(Error::IndexOutOfBounds {
                index: query,
                n: self.space.len(),
            })
        }
    }

    fn nearest_keys(&self, query: usize, count: usize) -> Vec<Key<T>> {
        if count == 0 {
            return Vec::new();
        }
        match &self.tree {
            Some(tree) => {
                let mut best = Best::new(count);
                tree.search(self.space.point(query), query, &mut best);
                best.keys
            }
            None => self.scan(query, count, |_| false),
        }
    }

    fn scan(&self, query: usize, count: usize, skip: impl Fn(usize) -> bool) -> Vec<Key<T>> {
        let q = self.space.point(query);
        let mut keys: Vec<Key<T>> = self
            .members
            .iter()
            .filter(|&&u| !skip(u))
            .map(|&unit| Key {
                dist_sq: squared_euclidean(q, self.space.point(unit)),
                other: unit != query,
                unit,
            })
            .collect();
        if count < keys.len() {
            if count == 0 {
                return Vec::new();
            }
            keys.select_nth_unstable_by(count - 1, Key::cmp);
            keys.truncate(count);
        }
        keys.sort_unstable_by(Key::cmp);
        keys
    }

    fn finish(
        &self,
        keys: Vec<Key<T>>,
        kappa: usize,
        caliper: Option<T>,
        excluded: impl Fn(usize) -> bool,
    ) -> Vec<Neighbor<T>> {
        keys.into_iter()
            .filter(|k| !excluded(k.unit))
            .take(kappa)
            .map(|k| Neighbor {
                unit: k.unit,
                distance: if k.other { k.dist_sq.sqrt() } else { T::zero() },
            })
            .take_while(|n| caliper.is_none_or(|c| n.distance <= c))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::Metric;
    use crate::sample::{validate_sample, Sample};
    use proptest::prelude::*;

    fn line(xs: &[f64]) -> (Sample<f64>, MetricSpace<f64>) {
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let s = validate_sample(&rows, &vec!["a"; xs.len()]).unwrap();
        let space = MetricSpace::new(&Metric::Euclidean, &s).unwrap();
        (s, space)
    }

    fn units(ns: &[Neighbor<f64>]) -> Vec<usize> {
        ns.iter().map(|n| n.unit).collect()
    }

    #[test]
    fn self_first_then_nearest() {
        let (_, space) = line(&[0.0, 1.0, 10.0, 11.0]);
        let idx = NnIndex::build(&space, &[0, 1]).unwrap();
        assert_eq!(idx.len(), 2);
        assert_eq!(units(&idx.knn(0, 2, None).unwrap()), vec![0, 1]);
        let idx = NnIndex::build(&space, &[1, 3]).unwrap();
        assert_eq!(units(&idx.knn(2, 1, None).unwrap()), vec![3]);
    }

    #[test]
    fn caliper_can_empty_the_result() {
        let (_, space) = line(&[0.0, 1.0, 10.0, 11.0]);
        let idx = NnIndex::build(&space, &[1]).unwrap();
        assert!(idx.knn(0, 1, Some(0.5)).unwrap().is_empty());
        assert_eq!(units(&idx.knn(0, 1, Some(1.0)).unwrap()), vec![1]);
    }

    #[test]
    fn infeasible_kappa() {
        let (_, space) = line(&[0.0, 1.0, 10.0, 11.0]);
        let idx = NnIndex::build(&space, &[1, 3]).unwrap();
        assert_eq!(
            idx.knn(0, 3, None),
            Err(Error::InfeasibleNeighbors {
                requested: 3,
                available: 2
            })
        );
        assert_eq!(idx.knn(0, 3, Some(100.0)).unwrap().len(), 2);
        assert!(matches!(NnIndex::build(&space, &[]), Err(Error::EmptySearchSet)));
    }

    #[test]
    fn exclusion() {
        let (_, space) = line(&[0.0, 1.0, 10.0, 11.0]);
        let idx = NnIndex::build(&space, &[0, 1, 2, 3]).unwrap();
        assert_eq!(units(&idx.knn_excluding(0, 1, &[0, 1], None).unwrap()), vec![2]);
        assert_eq!(units(&idx.knn_excluding(0, 2, &[0, 1], None).unwrap()), vec![2, 3]);
        assert!(idx.knn_excluding(0, 3, &[0, 1], None).is_err());
        // excluded units outside the search set do not reduce availability
        let idx = NnIndex::build(&space, &[2, 3]).unwrap();
        assert_eq!(units(&idx.knn_excluding(0, 2, &[0, 1], None).unwrap()), vec![2, 3]);
    }

    #[test]
    fn duplicates_prefer_self_then_index() {
        let (_, space) = line(&[5.0, 5.0, 5.0, 5.0, 5.0]);
        for idx in [
            NnIndex::kd_tree(&space, &[0, 1, 2, 3, 4]).unwrap(),
            NnIndex::linear(&space, &[0, 1, 2, 3, 4]).unwrap(),
        ] {
            assert_eq!(units(&idx.knn(3, 5, None).unwrap()), vec![3, 0, 1, 2, 4]);
            assert!(idx.knn(3, 5, None).unwrap().iter().all(|n| n.distance == 0.0));
        }
    }

    fn random_space(seed: u64, n: usize, d: usize, grid: bool) -> MetricSpace<f64> {
        let mut state = seed | 1;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let u = (state >> 11) as f64 / (1u64 << 53) as f64;
            if grid {
                (u * 6.0).floor()
            } else {
                u * 2.0 - 1.0
            }
        };
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| next()).collect()).collect();
        let s = validate_sample(&rows, &vec!["a"; n]).unwrap();
        MetricSpace::new(&Metric::Euclidean, &s).unwrap()
    }

    #[test]
    fn full_set_query_sorts_everything() {
        let space = random_space(99, 1000, 2, false);
        let all: Vec<usize> = (0..1000).collect();
        let idx = NnIndex::build(&space, &all).unwrap();
        assert!(idx.uses_tree());
        let got = idx.knn(17, 1000, None).unwrap();
        let mut expect: Vec<usize> = all.clone();
        expect.sort_by(|&a, &b| {
            space
                .dist_sq(17, a)
                .partial_cmp(&space.dist_sq(17, b))
                .unwrap()
                .then((a != 17).cmp(&(b != 17)))
                .then(a.cmp(&b))
        });
        assert_eq!(units(&got), expect);
        assert!(got.windows(2).all(|w| w[0].distance <= w[1].distance));
    }

    #[test]
    fn spatial_order_is_a_permutation() {
        for d in [1, 2, 5, 12] {
            let space = random_space(d as u64, 400, d, d == 2);
            let units: Vec<usize> = (0..400).filter(|u| u % 3 != 0).collect();
            let mut order = spatial_order(&space, &units);
            order.sort_unstable();
            assert_eq!(order, units, "dim {d}");
        }
    }

    #[test]
    fn repeated_queries_are_identical() {
        let space = random_space(5, 300, 3, true);
        let all: Vec<usize> = (0..300).collect();
        let idx = NnIndex::build(&space, &all).unwrap();
        let a = idx.knn_batch(&all, 4, None).unwrap();
        let b = idx.knn_batch(&all, 4, None).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn tree_matches_scan(
            seed in any::<u64>(),
            n in 1usize..500,
            d in 1usize..6,
            grid in any::<bool>(),
            kappa in 1usize..8,
            caliper in proptest::option::of(0.05f64..1.5),
        ) {
            let space = random_space(seed, n, d, grid);
            let set: Vec<usize> = (0..n).filter(|u| !(u * 7 + seed as usize).is_multiple_of(3)).collect();
            prop_assume!(!set.is_empty());
            let tree = NnIndex::kd_tree(&space, &set).unwrap();
            let scan = NnIndex::linear(&space, &set).unwrap();
            let kappa = kappa.min(set.len());
            for q in 0..n.min(60) {
                prop_assert_eq!(tree.knn(q, kappa, caliper).unwrap(), scan.knn(q, kappa, caliper).unwrap());
                let excluded: Vec<usize> = (0..n).filter(|u| (u + q) % 5 == 0).take(6).collect();
                prop_assert_eq!(
                    tree.knn_excluding(q, 1, &excluded, caliper),
                    scan.knn_excluding(q, 1, &excluded, caliper)
                );
            }
        }

        #[test]
        fn empty_exclusion_is_plain_knn(seed in any::<u64>(), kappa in 1usize..6) {
            let space = random_space(seed, 200, 2, false);
            let all: Vec<usize> = (0..200).collect();
            let idx = NnIndex::build(&space, &all).unwrap();
            for q in 0..200 {
                prop_assert_eq!(idx.knn_excluding(q, kappa, &[], None).unwrap(), idx.knn(q, kappa, None).unwrap());
            }
        }

        #[test]
        fn long_exclusion_lists_use_scan(seed in any::<u64>()) {
            let space = random_space(seed, 150, 2, true);
            let all: Vec<usize> = (0..150).collect();
            let idx = NnIndex::build(&space, &all).unwrap();
            let excluded: Vec<usize> = (0..150).step_by(2).collect();
            let got = idx.knn_excluding(3, 75, &excluded, None).unwrap();
            let mut expect: Vec<usize> = (1..150).step_by(2).collect();
            expect.sort_by(|&a, &b| {
                space.dist_sq(3, a).partial_cmp(&space.dist_sq(3, b)).unwrap()
                    .then((a != 3).cmp(&(b != 3))).then(a.cmp(&b))
            });
            prop_assert_eq!(units(&got), expect);
        }
    }
}
