//! Units, treatment conditions and matching constraints.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A validated sample: `n` units with `d` finite covariates each and one
/// treatment condition per unit.
///
/// Conditions are dense indices `0..k` assigned in order of first
/// appearance of their labels. For two-condition estimands one condition
/// is designated as treated (the first one unless changed with
/// [`Sample::with_treated_label`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    covariates: Vec<T>,
    dim: usize,
    treatment: Vec<usize>,
    labels: Vec<String>,
    treatment_sets: Vec<Vec<usize>>,
    treated: usize,
}

/// Builds a [`Sample`] from a row-major covariate table and raw labels.
pub fn validate_sample<T: Scalar, L: AsRef<str>>(rows: &[Vec<T>], labels: &[L]) -> Result<Sample<T>> {
    if rows.len() != labels.len() {
        return Err(Error::LengthMismatch {
            rows: rows.len(),
            labels: labels.len(),
        });
    }
    let dim = rows.first().map(Vec::len).ok_or(Error::EmptySample)?;
    let mut flat = Vec::with_capacity(rows.len() * dim);
    for (row, values) in rows.iter().enumerate() {
        if values.len() != dim {
            return Err(Error::RaggedCovariates {
                row,
                expected: dim,
                found: values.len(),
            });
        }
        flat.extend_from_slice(values);
    }
    Sample::from_flat(flat, dim, labels)
}

impl<T: Scalar> Sample<T> {
    /// Same as [`validate_sample`] for an already flattened row-major table.
    pub fn from_flat<L: AsRef<str>>(covariates: Vec<T>, dim: usize, labels: &[L]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptySample);
        }
        if dim == 0 {
            return Err(Error::NoCovariates);
        }
        if covariates.len() != labels.len() * dim {
            return Err(Error::LengthMismatch {
                rows: covariates.len() / dim,
                labels: labels.len(),
            });
        }
        if let Some(pos) = covariates.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCovariate {
                row: pos / dim,
                column: pos % dim,
            });
        }

        let mut seen: HashMap<&str, usize> = HashMap::new();
        let mut names = Vec::new();
        let mut treatment = Vec::with_capacity(labels.len());
        let mut treatment_sets: Vec<Vec<usize>> = Vec::new();
        for (unit, label) in labels.iter().enumerate() {
            let label = label.as_ref();
            let cond = *seen.entry(label).or_insert_with(|| {
                names.push(label.to_owned());
                treatment_sets.push(Vec::new());
                names.len() - 1
            });
            treatment.push(cond);
            treatment_sets[cond].push(unit);
        }

        Ok(Sample {
            covariates,
            dim,
            treatment,
            labels: names,
            treatment_sets,
            treated: 0,
        })
    }

    /// Designates the condition carrying `label` as the treated condition.
    pub fn with_treated_label(mut self, label: &str) -> Result<Self> {
        self.treated = self
            .labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_owned()))?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.treatment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.treatment.is_empty()
    }

    /// Number of observed treatment conditions.
    pub fn conditions(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn covariates(&self) -> &[T] {
        &self.covariates
    }

    pub fn row(&self, unit: usize) -> &[T] {
        &self.covariates[unit * self.dim..(unit + 1) * self.dim]
    }

    /// Covariates as owned rows, suitable for feeding back into [`validate_sample`].
    pub fn rows(&self) -> Vec<Vec<T>> {
        self.covariates.chunks(self.dim).map(<[T]>::to_vec).collect()
    }

    pub fn condition_of(&self, unit: usize) -> usize {
        self.treatment[unit]
    }

    pub fn treatment(&self) -> &[usize] {
        &self.treatment
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Raw label of each unit, in unit order.
    pub fn unit_labels(&self) -> Vec<&str> {
        self.treatment.iter().map(|&c| self.labels[c].as_str()).collect()
    }

    /// Units in condition `cond`, ascending.
    pub fn treatment_set(&self, cond: usize) -> &[usize] {
        &self.treatment_sets[cond]
    }

    pub fn treatment_sets(&self) -> &[Vec<usize>] {
        &self.treatment_sets
    }

    pub fn treated_condition(&self) -> usize {
        self.treated
    }

    pub fn is_treated(&self, unit: usize) -> bool {
        self.treatment[unit] == self.treated
    }

    pub(crate) fn check_index(&self, unit: usize) -> Result<()> {
        if unit < self.len() {
            Ok(())
        } else {
            Err(Error::IndexOutOfBounds {
                index: unit,
                n: self.len(),
            })
        }
    }

    /// Fails unless the sample has exactly two conditions.
    pub fn require_two_conditions(&self) -> Result<()> {
        match self.conditions() {
            2 => Ok(()),
            k => Err(Error::RequiresTwoConditions(k)),
        }
    }
}

/// Matching constraints: each group needs at least `per_treatment[j]` units
/// of condition `j` and at least `total` units overall.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Constraints {
    per_treatment: Vec<usize>,
    total: usize,
}

impl Constraints {
    pub fn new(per_treatment: Vec<usize>, total: usize) -> Self {
        Constraints { per_treatment, total }
    }

    /// One unit of every condition, `k` units overall.
    pub fn traditional(k: usize) -> Self {
        Constraints::new(vec![1; k], k)
    }

    /// Parses `c1,...,ck,t`.
    pub fn parse(s: &str) -> std::result::Result<Self, String> {
        let values = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        match values.split_last() {
            Some((&total, per)) if !per.is_empty() => Ok(Constraints::new(per.to_vec(), total)),
            _ => Err("expected at least one per-condition value followed by the total".into()),
        }
    }

    pub fn per_treatment(&self) -> &[usize] {
        &self.per_treatment
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn per_treatment_sum(&self) -> usize {
        self.per_treatment.iter().sum()
    }

    /// Units required beyond the per-condition minima.
    pub fn residual(&self) -> usize {
        self.total.saturating_sub(self.per_treatment_sum())
    }

    /// Out-degree of every vertex in the compatible digraph.
    pub fn degree(&self) -> usize {
        self.total.max(self.per_treatment_sum())
    }

    /// `(1, ..., 1, k)`.
    pub fn is_traditional(&self) -> bool {
        self.per_treatment.iter().all(|&c| c == 1) && self.total == self.per_treatment.len()
    }

    /// Whether a unit set with the given per-condition counts satisfies the constraints.
    pub fn admits(&self, counts: &[usize]) -> bool {
        counts.len() == self.per_treatment.len()
            && counts.iter().zip(&self.per_treatment).all(|(n, c)| n >= c)
            && counts.iter().sum::<usize>() >= self.total
    }

    pub fn check_arity(&self, k: usize) -> Result<()> {
        if self.per_treatment.len() == k {
            Ok(())
        } else {
            Err(Error::ConstraintArity {
                expected: k,
                found: self.per_treatment.len(),
            })
        }
    }

    /// `|w_j| >= c_j` for every condition and `n >= max(t, sum c_j)`.
    pub fn check_feasible<T: Scalar>(&self, sample: &Sample<T>) -> Result<()> {
        self.check_arity(sample.conditions())?;
        for (cond, &c) in self.per_treatment.iter().enumerate() {
            let have = sample.treatment_set(cond).len();
            if have < c {
                return Err(Error::InfeasibleConstraints(format!(
                    "condition `{}` has {have} units, each group needs {c}",
                    sample.labels()[cond]
                )));
            }
        }
        if sample.len() < self.degree() {
            return Err(Error::InfeasibleConstraints(format!(
                "sample has {} units, each group needs {}",
                sample.len(),
                self.degree()
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Constraints {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.per_treatment {
            write!(f, "{c},")?;
        }
        write!(f, "{}", self.total)
    }
}
