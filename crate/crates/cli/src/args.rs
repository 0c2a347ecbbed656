use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::failure::Failure;

#[derive(Debug, Parser)]
#[command(
    name = "genmatch",
    version,
    about = "Generalized full matching for observational studies"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Match units of a CSV file and write matches.csv and report.json.
    Match(MatchArgs),
    /// Score an existing matches.csv against its data file.
    Evaluate(EvaluateArgs),
    /// Run the simulation study and write sim_report.csv and sim_report.json.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricName {
    Euclidean,
    Mahalanobis,
    /// Absolute difference on the first covariate column.
    Scalar,
}

/// Where the data lives and how to read it.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Column holding the treatment condition of each unit.
    #[arg(long)]
    pub treatment_col: Option<String>,
    /// Comma-separated covariate columns; defaults to every other column.
    #[arg(long, value_delimiter = ',')]
    pub covariate_cols: Option<Vec<String>>,
    /// Column of unit ids; defaults to 1-based row numbers.
    #[arg(long)]
    pub id_col: Option<String>,
    /// Outcome column, used for the effect estimate.
    #[arg(long)]
    pub outcome_col: Option<String>,
    /// Treatment value of treated units; defaults to "1" when present.
    #[arg(long)]
    pub treated_label: Option<String>,
    #[arg(long, value_enum)]
    pub metric: Option<MetricName>,
}

impl DataArgs {
    const KEYS: &'static [&'static str] = &[
        "input",
        "treatment_col",
        "covariate_cols",
        "id_col",
        "outcome_col",
        "treated_label",
        "metric",
    ];

    fn merge(self, file: Self) -> Self {
        DataArgs {
            input: self.input.or(file.input),
            treatment_col: self.treatment_col.or(file.treatment_col),
            covariate_cols: self.covariate_cols.or(file.covariate_cols),
            id_col: self.id_col.or(file.id_col),
            outcome_col: self.outcome_col.or(file.outcome_col),
            treated_label: self.treated_label.or(file.treated_label),
            metric: self.metric.or(file.metric),
        }
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct MatchArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub data: DataArgs,
    /// Minimum units per condition then minimum group size: c1,...,ck,t.
    #[arg(long)]
    pub constraints: Option<String>,
    /// Longest admissible arc in the nearest-neighbor digraph.
    #[arg(long)]
    pub caliper_gc: Option<f64>,
    /// Longest admissible distance when attaching leftover units.
    #[arg(long)]
    pub caliper_step5: Option<f64>,
    /// Choose seeds fewest-conflicts-first.
    #[arg(long)]
    pub refined_seeds: bool,
    /// Attach leftover units to the nearest labeled unit anywhere.
    #[arg(long)]
    pub global_step5: bool,
    /// Units guaranteed a group: all, treated, or a file of unit ids.
    #[arg(long)]
    pub focus: Option<String>,
    /// Write the nearest-neighbor digraph as an edge list to this file.
    #[arg(long)]
    pub dump_digraph: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
}

impl MatchArgs {
    const KEYS: &'static [&'static str] = &[
        "constraints",
        "caliper_gc",
        "caliper_step5",
        "refined_seeds",
        "global_step5",
        "focus",
        "dump_digraph",
    ];

    /// Fills unset flags from the `--config` file, if any.
    pub fn resolve(self) -> Result<Self, Failure> {
        let Some(path) = self.common.config.clone() else {
            return Ok(self);
        };
        let map = read_config(&path, &[DataArgs::KEYS, CommonArgs::KEYS, Self::KEYS])?;
        let file: Self = from_map(&map, &path)?;
        let data: DataArgs = from_map(&map, &path)?;
        Ok(MatchArgs {
            data: self.data.merge(data),
            constraints: self.constraints.or(file.constraints),
            caliper_gc: self.caliper_gc.or(file.caliper_gc),
            caliper_step5: self.caliper_step5.or(file.caliper_step5),
            refined_seeds: self.refined_seeds || file.refined_seeds,
            global_step5: self.global_step5 || file.global_step5,
            focus: self.focus.or(file.focus),
            dump_digraph: self.dump_digraph.or(file.dump_digraph),
            common: self.common.merge(file.common),
        })
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct EvaluateArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub data: DataArgs,
    /// matches.csv with `id` and `group` columns.
    #[arg(long)]
    pub matches: Option<PathBuf>,
    /// Check every group against these constraints.
    #[arg(long)]
    pub constraints: Option<String>,
    /// Print one objective: lmax, lmax_tc, lmean, lmean_tc or lsum_tc.
    #[arg(long)]
    pub objective: Option<String>,
    /// Fail when a group violates the constraints.
    #[arg(long)]
    pub strict: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
}

impl EvaluateArgs {
    const KEYS: &'static [&'static str] = &["matches", "constraints", "objective", "strict"];

    pub fn resolve(self) -> Result<Self, Failure> {
        let Some(path) = self.common.config.clone() else {
            return Ok(self);
        };
        let map = read_config(&path, &[DataArgs::KEYS, CommonArgs::KEYS, Self::KEYS])?;
        let file: Self = from_map(&map, &path)?;
        let data: DataArgs = from_map(&map, &path)?;
        Ok(EvaluateArgs {
            data: self.data.merge(data),
            matches: self.matches.or(file.matches),
            constraints: self.constraints.or(file.constraints),
            objective: self.objective.or(file.objective),
            strict: self.strict || file.strict,
            common: self.common.merge(file.common),
        })
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct SimulateArgs {
    /// Units per replicate [default: 1000].
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of replicates [default: 1000].
    #[arg(long)]
    pub reps: Option<usize>,
    /// Random seed; one is generated and printed when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated methods: unadjusted, gfm, gfm_refined, greedy11,
    /// replacement11, greedy12, oracle [default: unadjusted,gfm,greedy11].
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Constraint tuple for the matching methods [default: 1,1,2].
    #[arg(long)]
    pub constraints: Option<String>,
    /// euclidean or mahalanobis [default: euclidean].
    #[arg(long, value_enum)]
    pub metric: Option<MetricName>,
    /// Report standard error and RMSE relative to this method.
    #[arg(long)]
    pub normalize_to: Option<String>,
    /// Also write every replicate's estimate to sim_raw.csv.
    #[arg(long)]
    pub raw: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
}

impl SimulateArgs {
    const KEYS: &'static [&'static str] = &[
        "n",
        "reps",
        "seed",
        "methods",
        "constraints",
        "metric",
        "normalize_to",
        "raw",
    ];

    pub fn resolve(self) -> Result<Self, Failure> {
        let Some(path) = self.common.config.clone() else {
            return Ok(self);
        };
        let map = read_config(&path, &[CommonArgs::KEYS, Self::KEYS])?;
        let file: Self = from_map(&map, &path)?;
        Ok(SimulateArgs {
            n: self.n.or(file.n),
            reps: self.reps.or(file.reps),
            seed: self.seed.or(file.seed),
            methods: self.methods.or(file.methods),
            constraints: self.constraints.or(file.constraints),
            metric: self.metric.or(file.metric),
            normalize_to: self.normalize_to.or(file.normalize_to),
            raw: self.raw || file.raw,
            common: self.common.merge(file.common),
        })
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct CommonArgs {
    /// Directory for output files [default: current directory].
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Worker threads; falls back to GENMATCH_THREADS, then all cores.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Flat JSON object with any of the flags above (underscored names);
    /// flags given on the command line take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl CommonArgs {
    const KEYS: &'static [&'static str] = &["output_dir", "threads"];

    fn merge(self, file: Self) -> Self {
        CommonArgs {
            output_dir: self.output_dir.or(file.output_dir),
            threads: self.threads.or(file.threads),
            config: self.config,
        }
    }
}

fn read_config(path: &Path, allowed: &[&[&str]]) -> Result<Map<String, Value>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Failure::usage(format!("config {} is not valid JSON: {e}", path.display())))?;
    let Value::Object(map) = value else {
        return Err(Failure::usage(format!(
            "config {} must be a JSON object",
            path.display()
        )));
    };
    if let Some(key) = map
        .keys()
        .find(|k| !allowed.iter().any(|keys| keys.contains(&k.as_str())))
    {
        return Err(Failure::usage(format!(
            "config {}: unknown key `{key}`",
            path.display()
        )));
    }
    Ok(map)
}

fn from_map<T: DeserializeOwned>(map: &Map<String, Value>, path: &Path) -> Result<T, Failure> {
    // Each part ignores keys that belong to the others.
    T::deserialize(Value::Object(map.clone())).map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))
}
