//! Simulation study: a two-covariate data-generating process with
//! confounded treatment and a null effect, and a harness that runs several
//! matching methods on common draws.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{Map, Number, Value};

use crate::error::{Error, Result};
use crate::evaluate::{att_estimate, unadjusted_estimate, MatchReport, Objective};
use crate::matcher::full_match;
use crate::metric::{Metric, MetricSpace};
use crate::options::MatchOptions;
use crate::oracle::{baseline_match, optimal_matching_bruteforce, Baseline, ORACLE_MAX_UNITS};
use crate::sample::{Constraints, Sample};
use crate::scalar::Scalar;

pub const TREATED_LABEL: &str = "1";
pub const CONTROL_LABEL: &str = "0";

/// Probability of treatment at covariates `(x1, x2)`.
pub fn propensity(x1: f64, x2: f64) -> f64 {
    let z = ((x1 + 1.0).powi(2) + (x2 + 1.0).powi(2) - 5.0) / 2.0;
    1.0 / (1.0 + (-z).exp())
}

/// Untreated outcome mean at covariates `(x1, x2)`.
pub fn outcome_mean(x1: f64, x2: f64) -> f64 {
    (x1 - 1.0).powi(2) + (x2 - 1.0).powi(2)
}

/// Draws `n` units: covariates uniform on `[-1, 1]^2`, treatment from
/// [`propensity`], and outcome [`outcome_mean`] plus standard normal noise.
/// Treatment has no effect on the outcome. Units are labeled
/// [`TREATED_LABEL`] and [`CONTROL_LABEL`], with the former as the treated
/// condition; a draw without any treated unit is an error.
pub fn generate_sample<T: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<(Sample<T>, Vec<T>)> {
    let unif = Uniform::new_inclusive(-1.0, 1.0).expect("valid bounds");
    let mut covariates = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    let mut outcomes = Vec::with_capacity(n);
    for _ in 0..n {
        let x1: f64 = unif.sample(rng);
        let x2: f64 = unif.sample(rng);
        let treated = rng.random::<f64>() < propensity(x1, x2);
        let noise: f64 = StandardNormal.sample(rng);
        covariates.push(T::cast_f64(x1));
        covariates.push(T::cast_f64(x2));
        labels.push(if treated { TREATED_LABEL } else { CONTROL_LABEL });
        outcomes.push(T::cast_f64(outcome_mean(x1, x2) + noise));
    }
    let sample = Sample::from_flat(covariates, 2, &labels)?.with_treated_label(TREATED_LABEL)?;
    Ok((sample, outcomes))
}

/// A method compared in the simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(into = "String")]
pub enum Method {
    /// Difference in means without matching.
    Unadjusted,
    /// Generalized full matching.
    Gfm,
    /// Generalized full matching with refined seeds and global assignment.
    GfmRefined,
    Greedy11,
    Replacement11,
    Greedy12,
    /// Exact optimum of the largest within-group distance; tiny samples only.
    Oracle,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Unadjusted,
        Method::Gfm,
        Method::GfmRefined,
        Method::Greedy11,
        Method::Replacement11,
        Method::Greedy12,
        Method::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Unadjusted => "unadjusted",
            Method::Gfm => "gfm",
            Method::GfmRefined => "gfm_refined",
            Method::Greedy11 => "greedy11",
            Method::Replacement11 => "replacement11",
            Method::Greedy12 => "greedy12",
            Method::Oracle => "oracle",
        }
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.name().to_owned()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
            format!("unknown method `{s}` (expected one of {})", names.join(", "))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMetric {
    Euclidean,
    Mahalanobis,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    /// Units per replicate.
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub constraints: Constraints,
    pub metric: SimMetric,
    /// Method whose standard error and RMSE scale the others.
    pub normalize_to: Option<Method>,
    /// Keep every replicate's estimate and measures.
    pub keep_raw: bool,
}

impl SimConfig {
    pub fn new(n: usize, reps: usize, seed: u64, methods: Vec<Method>) -> Self {
        SimConfig {
            n,
            reps,
            seed,
            methods,
            constraints: Constraints::traditional(2),
            metric: SimMetric::Euclidean,
            normalize_to: None,
            keep_raw: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::InvalidConfig(format!("n must be at least 4, got {}", self.n)));
        }
        if self.reps == 0 {
            return Err(Error::InvalidConfig("at least one replicate is required".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no methods selected".into()));
        }
        self.constraints.check_arity(2)?;
        if self.methods.contains(&Method::Oracle) && self.n > ORACLE_MAX_UNITS {
            return Err(Error::OracleTooLarge {
                n: self.n,
                cap: ORACLE_MAX_UNITS,
            });
        }
        if let Some(r) = self.normalize_to {
            if !self.methods.contains(&r) {
                return Err(Error::InvalidConfig(format!(
                    "reference method {r} is not among the methods"
                )));
            }
        }
        Ok(())
    }
}

/// One method on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub rep: usize,
    pub method: Method,
    /// `None` when the method failed on this replicate.
    pub estimate: Option<f64>,
    pub error: Option<String>,
    pub measures: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub successes: usize,
    pub failures: usize,
    /// Mean of each report measure over successful replicates, in first-seen order.
    pub measures: Vec<(String, f64)>,
    pub bias: f64,
    /// Population standard deviation of the estimates.
    pub se: f64,
    pub rmse: f64,
    pub bias_over_rmse: f64,
    pub se_relative: Option<f64>,
    pub rmse_relative: Option<f64>,
}

impl MethodSummary {
    pub fn measure(&self, key: &str) -> Option<f64> {
        self.measures.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub config: SimConfig,
    /// Mean share of treated units across replicates.
    pub treated_share: f64,
    pub methods: Vec<MethodSummary>,
    pub raw: Option<Vec<ReplicateRecord>>,
}

impl SimReport {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }

    /// Column names of [`SimReport::rows`].
    pub fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = [
            "method",
            "successes",
            "failures",
            "bias",
            "se",
            "rmse",
            "bias_over_rmse",
            "se_relative",
            "rmse_relative",
        ]
        .map(String::from)
        .to_vec();
        for s in &self.methods {
            for (k, _) in &s.measures {
                if !cols.contains(k) {
                    cols.push(k.clone());
                }
            }
        }
        cols
    }

    /// One row per method, aligned with [`SimReport::columns`]; undefined
    /// cells are empty.
    pub fn rows(&self) -> Vec<Vec<String>> {
        let cols = self.columns();
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        self.methods
            .iter()
            .map(|s| {
                let mut row = vec![
                    s.method.name().to_owned(),
                    s.successes.to_string(),
                    s.failures.to_string(),
                    s.bias.to_string(),
                    s.se.to_string(),
                    s.rmse.to_string(),
                    s.bias_over_rmse.to_string(),
                    opt(s.se_relative),
                    opt(s.rmse_relative),
                ];
                row.extend(cols[row.len()..].iter().map(|c| opt(s.measure(c))));
                row
            })
            .collect()
    }

    pub fn to_json(&self) -> Value {
        let pairs =
            |ms: &[(String, f64)]| Value::Object(ms.iter().map(|(k, v)| (k.clone(), num(*v))).collect::<Map<_, _>>());
        let methods: Vec<Value> = self
            .methods
            .iter()
            .map(|s| {
                let mut m = Map::new();
                m.insert("method".into(), s.method.name().into());
                m.insert("successes".into(), s.successes.into());
                m.insert("failures".into(), s.failures.into());
                m.insert("bias".into(), num(s.bias));
                m.insert("se".into(), num(s.se));
                m.insert("rmse".into(), num(s.rmse));
                m.insert("bias_over_rmse".into(), num(s.bias_over_rmse));
                m.insert("se_relative".into(), s.se_relative.map_or(Value::Null, num));
                m.insert("rmse_relative".into(), s.rmse_relative.map_or(Value::Null, num));
                m.insert("measures".into(), pairs(&s.measures));
                Value::Object(m)
            })
            .collect();
        let mut out = Map::new();
        out.insert(
            "config".into(),
            serde_json::to_value(&self.config).expect("config serializes"),
        );
        out.insert("treated_share".into(), num(self.treated_share));
        out.insert("methods".into(), Value::Array(methods));
        if let Some(raw) = &self.raw {
            let recs = raw
                .iter()
                .map(|r| {
                    let mut m = Map::new();
                    m.insert("rep".into(), r.rep.into());
                    m.insert("method".into(), r.method.name().into());
                    m.insert("estimate".into(), r.estimate.map_or(Value::Null, num));
                    m.insert("error".into(), r.error.clone().map_or(Value::Null, Value::String));
                    m.insert("measures".into(), pairs(&r.measures));
                    Value::Object(m)
                })
                .collect();
            out.insert("raw".into(), Value::Array(recs));
        }
        Value::Object(out)
    }
}

fn num(v: f64) -> Value {
    Number::from_f64(v).map_or(Value::Null, Value::Number)
}

/// Compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Neumaier {
    sum: f64,
    carry: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(self) -> f64 {
        self.sum + self.carry
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = Neumaier::default();
    let mut count = 0usize;
    for x in xs {
        acc.add(x);
        count += 1;
    }
    if count == 0 {
        f64::NAN
    } else {
        acc.total() / count as f64
    }
}

/// Random stream of replicate `rep`; every method in a replicate sees the
/// same draw.
pub fn replicate_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

fn run_method(
    method: Method,
    sample: &Sample<f64>,
    outcomes: &[f64],
    metric: &Metric<f64>,
    space: &MetricSpace<f64>,
    constraints: &Constraints,
) -> Result<(f64, MatchReport)> {
    let matching = match method {
        Method::Unadjusted => {
            let est = unadjusted_estimate(sample, outcomes)?;
            return Ok((est, MatchReport::unadjusted(sample, Some(outcomes))?));
        }
        Method::Gfm => full_match(sample, metric, constraints, &MatchOptions::default())?,
        Method::GfmRefined => full_match(sample, metric, constraints, &MatchOptions::refined())?,
        Method::Greedy11 => baseline_match(sample, metric, Baseline::Greedy1to1)?,
        Method::Replacement11 => baseline_match(sample, metric, Baseline::Replacement1to1)?,
        Method::Greedy12 => baseline_match(sample, metric, Baseline::Greedy1toK(2))?,
        Method::Oracle => optimal_matching_bruteforce(sample, metric, constraints, Objective::Max)?.matching,
    };
    let est = att_estimate(&matching, sample, outcomes)?;
    Ok((est, MatchReport::new(&matching, sample, space, Some(outcomes))?))
}

fn run_replicate(config: &SimConfig, rep: usize) -> (Option<f64>, Vec<ReplicateRecord>) {
    let mut rng = replicate_rng(config.seed, rep);
    let drawn = generate_sample::<f64, _>(config.n, &mut rng).and_then(|(sample, y)| {
        let metric = match config.metric {
            SimMetric::Euclidean => Metric::Euclidean,
            SimMetric::Mahalanobis => Metric::mahalanobis_from_sample(&sample)?,
        };
        let space = MetricSpace::new(&metric, &sample)?;
        Ok((sample, y, metric, space))
    });
    let (sample, outcomes, metric, space) = match drawn {
        Ok(d) => d,
        Err(e) => {
            let records = config
                .methods
                .iter()
                .map(|&method| ReplicateRecord {
                    rep,
                    method,
                    estimate: None,
                    error: Some(e.to_string()),
                    measures: Vec::new(),
                })
                .collect();
            return (None, records);
        }
    };
    let share = sample.treatment_set(sample.treated_condition()).len() as f64 / sample.len() as f64;
    let records = config
        .methods
        .iter()
        .map(
            |&method| match run_method(method, &sample, &outcomes, &metric, &space, &config.constraints) {
                Ok((est, report)) => ReplicateRecord {
                    rep,
                    method,
                    estimate: Some(est),
                    error: None,
                    measures: report.measures(),
                },
                Err(e) => ReplicateRecord {
                    rep,
                    method,
                    estimate: None,
                    error: Some(e.to_string()),
                    measures: Vec::new(),
                },
            },
        )
        .collect();
    (Some(share), records)
}

fn summarize(method: Method, records: &[&ReplicateRecord]) -> MethodSummary {
    let estimates: Vec<f64> = records.iter().filter_map(|r| r.estimate).collect();
    let mut keys: Vec<&str> = Vec::new();
    for r in records {
        for (k, _) in &r.measures {
            if !keys.contains(&k.as_str()) {
                keys.push(k);
            }
        }
    }
    let measures = keys
        .into_iter()
        .map(|k| {
            let v = mean(
                records
                    .iter()
                    .flat_map(|r| r.measures.iter().filter(|(key, _)| key == k).map(|(_, v)| *v)),
            );
            (k.to_owned(), v)
        })
        .collect();
    // The true effect is zero, so the mean estimate is the bias.
    let bias = mean(estimates.iter().copied());
    let se = mean(estimates.iter().map(|e| (e - bias) * (e - bias))).sqrt();
    let rmse = mean(estimates.iter().map(|e| e * e)).sqrt();
    MethodSummary {
        method,
        successes: estimates.len(),
        failures: records.len() - estimates.len(),
        measures,
        bias,
        se,
        rmse,
        bias_over_rmse: bias.abs() / rmse,
        se_relative: None,
        rmse_relative: None,
    }
}

/// Runs every method on `config.reps` independent draws of `config.n`
/// units. Replicates run in parallel; results do not depend on the number
/// of threads. A method failing on a replicate is counted, not fatal.
pub fn run_experiment(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let results: Vec<(Option<f64>, Vec<ReplicateRecord>)> = (0..config.reps)
        .into_par_iter()
        .map(|rep| run_replicate(config, rep))
        .collect();
    let treated_share = mean(results.iter().filter_map(|(s, _)| *s));
    let records: Vec<ReplicateRecord> = results.into_iter().flat_map(|(_, r)| r).collect();
    let mut methods: Vec<MethodSummary> = config
        .methods
        .iter()
        .map(|&m| {
            let mine: Vec<&ReplicateRecord> = records.iter().filter(|r| r.method == m).collect();
            summarize(m, &mine)
        })
        .collect();
    if let Some(reference) = config.normalize_to {
        let (se_ref, rmse_ref) = methods
            .iter()
            .find(|s| s.method == reference)
            .map(|s| (s.se, s.rmse))
            .expect("validated");
        for s in &mut methods {
            s.se_relative = Some(s.se / se_ref);
            s.rmse_relative = Some(s.rmse / rmse_ref);
        }
    }
    Ok(SimReport {
        config: config.clone(),
        treated_share,
        methods,
        raw: config.keep_raw.then_some(records),
    })
}
