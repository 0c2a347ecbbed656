//! Distance objectives, group structure, implied weights, covariate balance
//! and the ATT estimator for a matching.
//!
//! Two-condition measures contrast the sample's treated condition with the
//! other one. Treated units that end up unassigned are outside the estimand:
//! the treated count used in weights and objectives is the number of
//! assigned treated units.

use std::fmt;
use std::str::FromStr;

use serde_json::{Map, Number, Value};

use crate::error::{Error, Result};
use crate::matcher::Matching;
use crate::metric::MetricSpace;
use crate::sample::Sample;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    /// Largest within-group distance.
    Max,
    /// Largest within-group treated-control distance.
    MaxTc,
    /// Treated-weighted mean over groups of the mean distance between distinct members.
    Mean,
    /// Treated-weighted mean over groups of the mean treated-control distance.
    MeanTc,
    /// Sum of all within-group treated-control distances.
    SumTc,
}

impl Objective {
    pub const ALL: [Objective; 5] = [
        Objective::Max,
        Objective::MaxTc,
        Objective::Mean,
        Objective::MeanTc,
        Objective::SumTc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Max => "lmax",
            Objective::MaxTc => "lmax_tc",
            Objective::Mean => "lmean",
            Objective::MeanTc => "lmean_tc",
            Objective::SumTc => "lsum_tc",
        }
    }

    /// Defined only for two treatment conditions.
    pub fn needs_two_conditions(self) -> bool {
        !matches!(self, Objective::Max)
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| format!("unknown objective `{s}` (expected lmax, lmax_tc, lmean, lmean_tc or lsum_tc)"))
    }
}

fn check_cover<T: Scalar>(m: &Matching, sample: &Sample<T>) -> Result<()> {
    if m.len() != sample.len() {
        return Err(Error::MatchingSize {
            expected: sample.len(),
            found: m.len(),
        });
    }
    Ok(())
}

fn treated_assigned<T: Scalar>(m: &Matching, sample: &Sample<T>) -> usize {
    m.groups().iter().flatten().filter(|&&u| sample.is_treated(u)).count()
}

/// Distances between members of one group.
struct PairStats<T> {
    max: T,
    max_tc: T,
    sum: T,
    pairs: usize,
    sum_tc: T,
    pairs_tc: usize,
}

fn pair_stats<T: Scalar>(members: &[usize], sample: &Sample<T>, space: &MetricSpace<T>) -> PairStats<T> {
    let mut s = PairStats {
        max: T::zero(),
        max_tc: T::zero(),
        sum: T::zero(),
        pairs: 0,
        sum_tc: T::zero(),
        pairs_tc: 0,
    };
    for (pos, &a) in members.iter().enumerate() {
        for &b in &members[pos + 1..] {
            let d = space.dist(a, b);
            s.max = s.max.max(d);
            s.sum = s.sum + d;
            s.pairs += 1;
            if sample.condition_of(a) != sample.condition_of(b) {
                s.max_tc = s.max_tc.max(d);
                s.sum_tc = s.sum_tc + d;
                s.pairs_tc += 1;
            }
        }
    }
    s
}

/// Value of one distance objective for a matching; unassigned units are ignored.
pub fn objective<T: Scalar>(m: &Matching, sample: &Sample<T>, space: &MetricSpace<T>, which: Objective) -> Result<T> {
    check_cover(m, sample)?;
    if m.group_count() == 0 {
        return Err(Error::EmptyMatching);
    }
    if which.needs_two_conditions() {
        sample.require_two_conditions()?;
    }
    let tc = matches!(which, Objective::MaxTc | Objective::MeanTc | Objective::SumTc);
    let n_treated = treated_assigned(m, sample);
    if matches!(which, Objective::Mean | Objective::MeanTc) && n_treated == 0 {
        return Err(Error::NoTreatedAssigned);
    }

    let mut value = T::zero();
    for (g, members) in m.groups().iter().enumerate() {
        let stats = pair_stats(members, sample, space);
        if tc && stats.pairs_tc == 0 {
            let has_treated = members.iter().any(|&u| sample.is_treated(u));
            return Err(Error::GroupMissingCondition {
                group: g,
                missing: if has_treated { "control" } else { "treated" },
            });
        }
        let share = || {
            let nt = members.iter().filter(|&&u| sample.is_treated(u)).count();
            T::from_count(nt) / T::from_count(n_treated)
        };
        value = match which {
            Objective::Max => value.max(stats.max),
            Objective::MaxTc => value.max(stats.max_tc),
            Objective::SumTc => value + stats.sum_tc,
            Objective::Mean if stats.pairs > 0 => value + share() * (stats.sum / T::from_count(stats.pairs)),
            Objective::MeanTc => value + share() * (stats.sum_tc / T::from_count(stats.pairs_tc)),
            Objective::Mean => value,
        };
    }
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupStats {
    pub mean_size: f64,
    /// Population standard deviation (divide by the number of groups).
    pub size_sd: f64,
    pub percent_dropped: f64,
}

pub fn group_stats(m: &Matching) -> GroupStats {
    let sizes: Vec<f64> = m.groups().iter().map(|g| g.len() as f64).collect();
    let (mean, sd) = mean_and_population_sd(&sizes);
    let dropped = if m.is_empty() {
        0.0
    } else {
        100.0 * (m.len() - m.assigned_count()) as f64 / m.len() as f64
    };
    GroupStats {
        mean_size: mean,
        size_sd: sd,
        percent_dropped: dropped,
    }
}

fn mean_and_population_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-unit weights the ATT estimator puts on each unit.
///
/// Assigned treated units get `1 / N1`; a control in group `m` gets
/// `|treated in m| / (N1 * |controls in m|)`; unassigned units get zero.
pub fn implied_weights<T: Scalar>(m: &Matching, sample: &Sample<T>) -> Result<Vec<T>> {
    check_cover(m, sample)?;
    sample.require_two_conditions()?;
    let n_treated = treated_assigned(m, sample);
    if n_treated == 0 {
        return Err(Error::NoTreatedAssigned);
    }
    let n1 = T::from_count(n_treated);
    let mut weights = vec![T::zero(); sample.len()];
    for (g, members) in m.groups().iter().enumerate() {
        let nt = members.iter().filter(|&&u| sample.is_treated(u)).count();
        let nc = members.len() - nt;
        if nt > 0 && nc == 0 {
            return Err(Error::GroupMissingCondition {
                group: g,
                missing: "control",
            });
        }
        for &u in members {
            weights[u] = if sample.is_treated(u) {
                T::one() / n1
            } else {
                T::from_count(nt) / (n1 * T::from_count(nc))
            };
        }
    }
    Ok(weights)
}

fn check_outcomes<T: Scalar>(sample: &Sample<T>, outcomes: &[T]) -> Result<()> {
    if outcomes.len() != sample.len() {
        return Err(Error::OutcomeLength(outcomes.len(), sample.len()));
    }
    match outcomes.iter().position(|y| !y.is_finite()) {
        Some(u) => Err(Error::NonFiniteOutcome(u)),
        None => Ok(()),
    }
}

/// Treated-weighted average over groups of the within-group difference in
/// mean outcomes between treated and control units.
pub fn att_estimate<T: Scalar>(m: &Matching, sample: &Sample<T>, outcomes: &[T]) -> Result<T> {
    check_cover(m, sample)?;
    sample.require_two_conditions()?;
    check_outcomes(sample, outcomes)?;
    let n_treated = treated_assigned(m, sample);
    if n_treated == 0 {
        return Err(Error::NoTreatedAssigned);
    }
    let mut estimate = T::zero();
    for (g, members) in m.groups().iter().enumerate() {
        let (mut nt, mut nc, mut yt, mut yc) = (0usize, 0usize, T::zero(), T::zero());
        for &u in members {
            if sample.is_treated(u) {
                nt += 1;
                yt = yt + outcomes[u];
            } else {
                nc += 1;
                yc = yc + outcomes[u];
            }
        }
        if nt == 0 {
            continue;
        }
        if nc == 0 {
            return Err(Error::GroupMissingCondition {
                group: g,
                missing: "control",
            });
        }
        let diff = yt / T::from_count(nt) - yc / T::from_count(nc);
        estimate = estimate + T::from_count(nt) / T::from_count(n_treated) * diff;
    }
    Ok(estimate)
}

/// Difference in mean outcomes between treated and control units.
pub fn unadjusted_estimate<T: Scalar>(sample: &Sample<T>, outcomes: &[T]) -> Result<T> {
    sample.require_two_conditions()?;
    check_outcomes(sample, outcomes)?;
    let w = unadjusted_weights(sample);
    Ok((0..sample.len()).fold(T::zero(), |acc, u| {
        if sample.is_treated(u) {
            acc + w[u] * outcomes[u]
        } else {
            acc - w[u] * outcomes[u]
        }
    }))
}

fn unadjusted_weights<T: Scalar>(sample: &Sample<T>) -> Vec<T> {
    let treated = sample.treated_condition();
    let n1 = T::from_count(sample.treatment_set(treated).len());
    let n0 = T::from_count(sample.len() - sample.treatment_set(treated).len());
    (0..sample.len())
        .map(|u| {
            if sample.is_treated(u) {
                T::one() / n1
            } else {
                T::one() / n0
            }
        })
        .collect()
}

/// Population standard deviation of the control weights scaled by the
/// sample size, so that a control standing in for one treated unit in a
/// sample with treated share `p` has weight `1 / p`.
pub fn control_weight_sd<T: Scalar>(weights: &[T], sample: &Sample<T>) -> f64 {
    let n = sample.len() as f64;
    let scaled: Vec<f64> = (0..sample.len())
        .filter(|&u| !sample.is_treated(u))
        .map(|u| weights[u].as_f64() * n)
        .collect();
    mean_and_population_sd(&scaled).1
}

/// A covariate moment `X_a` or `X_a * X_b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Moment {
    pub first: usize,
    pub second: Option<usize>,
}

impl Moment {
    pub fn name(&self) -> String {
        match self.second {
            None => format!("X{}", self.first + 1),
            Some(b) if b == self.first => format!("X{}^2", self.first + 1),
            Some(b) => format!("X{}*X{}", self.first + 1, b + 1),
        }
    }

    fn eval<T: Scalar>(&self, x: &[T]) -> T {
        match self.second {
            None => x[self.first],
            Some(b) => x[self.first] * x[b],
        }
    }
}

/// First and second moments of `dim` covariates: every `X_j`, every
/// `X_j^2`, then every cross product `X_j X_l` with `j < l`.
pub fn moments(dim: usize) -> Vec<Moment> {
    let mut out: Vec<Moment> = (0..dim).map(|j| Moment { first: j, second: None }).collect();
    out.extend((0..dim).map(|j| Moment {
        first: j,
        second: Some(j),
    }));
    for j in 0..dim {
        for l in j + 1..dim {
            out.push(Moment {
                first: j,
                second: Some(l),
            });
        }
    }
    out
}

/// Weights used for a balance comparison.
#[derive(Debug, Clone, Copy)]
pub enum Adjustment<'a> {
    /// Uniform weights within each condition.
    Unadjusted,
    /// Implied weights of a matching.
    Matched(&'a Matching),
}

/// Absolute difference between the weighted treated and control means of
/// each moment.
pub fn balance<T: Scalar>(adjustment: Adjustment<'_>, sample: &Sample<T>, moments: &[Moment]) -> Result<Vec<T>> {
    sample.require_two_conditions()?;
    let weights = match adjustment {
        Adjustment::Unadjusted => unadjusted_weights(sample),
        Adjustment::Matched(m) => implied_weights(m, sample)?,
    };
    Ok(balance_with_weights(&weights, sample, moments))
}

fn balance_with_weights<T: Scalar>(weights: &[T], sample: &Sample<T>, moments: &[Moment]) -> Vec<T> {
    moments
        .iter()
        .map(|moment| {
            let (mut t, mut c) = (T::zero(), T::zero());
            for (u, &w) in weights.iter().enumerate() {
                let v = w * moment.eval(sample.row(u));
                if sample.is_treated(u) {
                    t = t + v;
                } else {
                    c = c + v;
                }
            }
            (t - c).abs()
        })
        .collect()
}

/// Summary of a matching (or of the raw sample when no matching is applied).
#[derive(Debug, Clone, PartialEq)]
pub struct MatchReport {
    pub units: usize,
    pub groups: usize,
    pub unassigned: usize,
    pub objectives: Vec<(Objective, f64)>,
    pub group_stats: GroupStats,
    /// Implied weights; present for two conditions when every group with
    /// treated units also has controls.
    pub weights: Option<Vec<f64>>,
    pub weight_sd: Option<f64>,
    pub balance: Vec<(String, f64)>,
    pub att: Option<f64>,
}

impl MatchReport {
    /// Evaluates every measure that is defined for `m`; measures whose
    /// preconditions fail are left out.
    pub fn new<T: Scalar>(
        m: &Matching,
        sample: &Sample<T>,
        space: &MetricSpace<T>,
        outcomes: Option<&[T]>,
    ) -> Result<Self> {
        check_cover(m, sample)?;
        if let Some(y) = outcomes {
            check_outcomes(sample, y)?;
        }
        let objectives = Objective::ALL
            .into_iter()
            .filter_map(|o| objective(m, sample, space, o).ok().map(|v| (o, v.as_f64())))
            .collect();
        let weights = if sample.conditions() == 2 {
            implied_weights(m, sample).ok()
        } else {
            None
        };
        let mut report = MatchReport {
            units: sample.len(),
            groups: m.group_count(),
            unassigned: m.len() - m.assigned_count(),
            objectives,
            group_stats: group_stats(m),
            weights: None,
            weight_sd: None,
            balance: Vec::new(),
            att: None,
        };
        if let Some(w) = weights {
            report.weight_sd = Some(control_weight_sd(&w, sample));
            let ms = moments(sample.dim());
            report.balance = ms
                .iter()
                .map(Moment::name)
                .zip(balance_with_weights(&w, sample, &ms).into_iter().map(Scalar::as_f64))
                .collect();
            if let Some(y) = outcomes {
                report.att = Some(att_estimate(m, sample, y)?.as_f64());
            }
            report.weights = Some(w.into_iter().map(Scalar::as_f64).collect());
        }
        Ok(report)
    }

    /// Balance and difference in means of the raw sample.
    pub fn unadjusted<T: Scalar>(sample: &Sample<T>, outcomes: Option<&[T]>) -> Result<Self> {
        sample.require_two_conditions()?;
        let w = unadjusted_weights(sample);
        let ms = moments(sample.dim());
        let att = outcomes
            .map(|y| unadjusted_estimate(sample, y).map(Scalar::as_f64))
            .transpose()?;
        Ok(MatchReport {
            units: sample.len(),
            groups: 0,
            unassigned: 0,
            objectives: Vec::new(),
            group_stats: GroupStats {
                mean_size: 0.0,
                size_sd: 0.0,
                percent_dropped: 0.0,
            },
            weight_sd: Some(control_weight_sd(&w, sample)),
            weights: Some(w.into_iter().map(Scalar::as_f64).collect()),
            balance: ms
                .iter()
                .map(Moment::name)
                .zip(
                    balance_with_weights(&unadjusted_weights(sample), sample, &ms)
                        .into_iter()
                        .map(Scalar::as_f64),
                )
                .collect(),
            att,
        })
    }

    pub fn objective(&self, which: Objective) -> Option<f64> {
        self.objectives.iter().find(|(o, _)| *o == which).map(|(_, v)| *v)
    }

    /// Numeric measures as `(key, value)` pairs in a fixed order.
    ///
    /// Keys: `lmax`, `lmax_tc`, `lmean`, `lmean_tc`, `lsum_tc`, `mean_size`,
    /// `size_sd`, `percent_dropped`, `weight_sd`, `balance_<moment>`, `att`.
    /// Undefined measures are omitted.
    pub fn measures(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self.objectives.iter().map(|(o, v)| (o.name().to_owned(), *v)).collect();
        if self.groups > 0 {
            out.push(("mean_size".into(), self.group_stats.mean_size));
            out.push(("size_sd".into(), self.group_stats.size_sd));
        }
        out.push(("percent_dropped".into(), self.group_stats.percent_dropped));
        if let Some(sd) = self.weight_sd {
            out.push(("weight_sd".into(), sd));
        }
        for (name, v) in &self.balance {
            out.push((format!("balance_{name}"), *v));
        }
        if let Some(att) = self.att {
            out.push(("att".into(), att));
        }
        out
    }

    /// Flat JSON object with the counts and every defined measure.
    pub fn to_json(&self) -> Value {
        let mut map = Map::new();
        map.insert("units".into(), Value::from(self.units));
        map.insert("groups".into(), Value::from(self.groups));
        map.insert("unassigned".into(), Value::from(self.unassigned));
        for (key, v) in self.measures() {
            map.insert(key, Number::from_f64(v).map_or(Value::Null, Value::Number));
        }
        Value::Object(map)
    }
}
