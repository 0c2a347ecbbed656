//! Generalized full matching.
//!
//! Units with covariates and a treatment condition are partitioned into
//! groups so that each group holds at least a given number of units of every
//! condition and at least a given total. Matching builds the
//! nearest-neighbor digraph whose closed neighborhoods satisfy the
//! constraints, picks seeds with disjoint neighborhoods, and attaches every
//! remaining unit to a nearby seed group. The largest within-group distance
//! is at most four times the optimum.
//!
//! The library is generic over the scalar type ([`Scalar`], implemented for
//! `f32` and `f64`). The aliases at the crate root fix the scalar to `f64`.
//!
//! ```
//! use genmatch::{full_match, validate_sample, Constraints, MatchOptions, Metric};
//!
//! let rows = vec![vec![0.0], vec![1.0], vec![10.0], vec![11.0]];
//! let sample = validate_sample(&rows, &["T", "C", "T", "C"]).unwrap();
//! let c = Constraints::traditional(2);
//! let m = full_match(&sample, &Metric::Euclidean, &c, &MatchOptions::default()).unwrap();
//! assert_eq!(m.groups(), &[vec![0, 1], vec![2, 3]]);
//! ```

pub mod audit;
pub mod digraph;
pub mod error;
pub mod evaluate;
pub mod matcher;
pub mod metric;
pub mod nnsearch;
pub mod options;
pub mod oracle;
pub mod sample;
pub mod scalar;
pub mod sim;

pub use digraph::{build_compatible_digraph, SourceState};
pub use error::{Error, Result};
pub use evaluate::{
    att_estimate, balance, group_stats, implied_weights, moments, objective, unadjusted_estimate, Adjustment,
    GroupStats, MatchReport, Moment, Objective,
};
pub use matcher::{find_seeds, full_match, match_in_space, Matching, SeedSet};
pub use metric::distance;
pub use nnsearch::Neighbor;
pub use oracle::{baseline_match, optimal_matching_bruteforce, Baseline, OracleResult, ORACLE_MAX_UNITS};
pub use sample::{validate_sample, Constraints};
pub use scalar::Scalar;
pub use sim::{generate_sample, run_experiment, Method, SimConfig, SimMetric, SimReport};

/// Sample with `f64` covariates.
pub type Sample = sample::Sample<f64>;
/// Metric over `f64` covariates.
pub type Metric = metric::Metric<f64>;
/// Mahalanobis scaling over `f64` covariates.
pub type Mahalanobis = metric::Mahalanobis<f64>;
/// Embedded `f64` points.
pub type MetricSpace = metric::MetricSpace<f64>;
/// Compatible digraph with `f64` arc weights.
pub type CompatibleDigraph = digraph::CompatibleDigraph<f64>;
/// Nearest-neighbor index over `f64` points.
pub type NnIndex<'a> = nnsearch::NnIndex<'a, f64>;
/// Matching options with `f64` calipers.
pub type MatchOptions = options::MatchOptions<f64>;
/// Intermediate results of an `f64` matching run.
pub type MatchTrace = matcher::MatchTrace<f64>;
