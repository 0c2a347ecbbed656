use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use genmatch::audit;
use genmatch::matcher::match_in_space;
use genmatch::sim::{Method, SimMetric};
use genmatch::{
    objective, run_experiment, Constraints, MatchOptions, MatchReport, Matching, MetricSpace, Objective, SimConfig,
};

use crate::args::{EvaluateArgs, MatchArgs, MetricName, SimulateArgs};
use crate::data::Table;
use crate::failure::Failure;

fn parse_constraints(text: &str) -> Result<Constraints, Failure> {
    Constraints::parse(text).map_err(|e| Failure::usage(format!("--constraints: {e}")))
}

fn output_dir(dir: &Option<PathBuf>) -> Result<PathBuf, Failure> {
    let dir = dir.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| Failure::io(dir.display(), e))?;
    Ok(dir)
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::io(path.display(), e))
}

fn write_report(dir: &Path, report: &MatchReport) -> Result<PathBuf, Failure> {
    let path = dir.join("report.json");
    let text = serde_json::to_string_pretty(&report.to_json()).expect("report serializes");
    write_file(&path, &(text + "\n"))?;
    Ok(path)
}

fn focus_units(focus: &str, table: &Table) -> Result<Option<Vec<usize>>, Failure> {
    match focus {
        "all" => Ok(None),
        "treated" => {
            if table.sample.conditions() != 2 {
                return Err(Failure::usage("--focus treated needs exactly two treatment conditions"));
            }
            Ok(Some(
                table.sample.treatment_set(table.sample.treated_condition()).to_vec(),
            ))
        }
        path => {
            let text = fs::read_to_string(path).map_err(|e| Failure::io(format!("focus file {path}"), e))?;
            let index = table.index();
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(|id| {
                    index
                        .get(id)
                        .copied()
                        .ok_or_else(|| Failure::usage(format!("focus file {path}: unknown unit id `{id}`")))
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some)
        }
    }
}

pub fn run_match(args: MatchArgs) -> Result<(), Failure> {
    let table = Table::read(&args.data)?;
    let sample = &table.sample;
    let constraints = parse_constraints(
        args.constraints
            .as_deref()
            .ok_or_else(|| Failure::usage("--constraints is required"))?,
    )?;
    constraints.check_arity(sample.conditions())?;
    constraints.check_feasible(sample)?;
    let options = MatchOptions {
        refined_seeds: args.refined_seeds,
        global_step5: args.global_step5,
        caliper_gc: args.caliper_gc,
        caliper_step5: args.caliper_step5,
        focus: focus_units(args.focus.as_deref().unwrap_or("all"), &table)?,
    };
    let metric = table.metric(args.data.metric)?;
    let space = MetricSpace::new(&metric, sample)?;
    let trace = match_in_space(sample, &space, &constraints, &options).map_err(|e| match e {
        genmatch::Error::NoFeasibleUnits { units } => Failure::infeasible(format!(
            "no unit can satisfy the constraints within the caliper; infeasible units: {}",
            table.names(&units)
        )),
        e => e.into(),
    })?;
    let infeasible = trace.digraph.infeasible_units();
    if !infeasible.is_empty() {
        eprintln!(
            "warning: {} units cannot satisfy the constraints within the caliper: {}",
            infeasible.len(),
            table.names(&infeasible)
        );
    }

    let dir = output_dir(&args.common.output_dir)?;
    if let Some(path) = &args.dump_digraph {
        let file = File::create(path).map_err(|e| Failure::io(path.display(), e))?;
        let mut out = BufWriter::new(file);
        trace
            .digraph
            .write_edge_list(&mut out, |u| table.ids[u].clone())
            .and_then(|_| out.flush())
            .map_err(|e| Failure::io(path.display(), e))?;
    }
    let m = &trace.matching;
    let report = MatchReport::new(m, sample, &space, table.outcomes.as_deref())?;
    let matches_path = dir.join("matches.csv");
    write_matches(&matches_path, &table, m, report.weights.as_deref())?;
    let report_path = write_report(&dir, &report)?;
    println!(
        "{} units in {} groups, {} unassigned; wrote {} and {}",
        m.len(),
        m.group_count(),
        m.len() - m.assigned_count(),
        matches_path.display(),
        report_path.display()
    );
    Ok(())
}

fn write_matches(path: &Path, table: &Table, m: &Matching, weights: Option<&[f64]>) -> Result<(), Failure> {
    let err = |e: csv::Error| Failure::io(path.display(), e);
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["id", "group", "weight"]).map_err(err)?;
    for (u, id) in table.ids.iter().enumerate() {
        let group = m.group_of(u).map(|g| (g + 1).to_string()).unwrap_or_default();
        let weight = weights.map(|w| w[u].to_string()).unwrap_or_default();
        w.write_record([id.as_str(), &group, &weight]).map_err(err)?;
    }
    w.flush().map_err(|e| Failure::io(path.display(), e))
}

fn read_matches(path: &Path, table: &Table) -> Result<Matching, Failure> {
    let err = |e: csv::Error| Failure::io(path.display(), e);
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    let headers = r.headers().map_err(err)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Failure::usage(format!("{}: no `{name}` column", path.display())))
    };
    let (id_col, group_col) = (col("id")?, col("group")?);
    let index = table.index();
    let mut labels: Vec<Option<Option<usize>>> = vec![None; table.ids.len()];
    for (row, record) in r.records().enumerate() {
        let record = record.map_err(err)?;
        let id = record.get(id_col).unwrap_or("");
        let unit = *index.get(id).ok_or_else(|| {
            Failure::usage(format!(
                "unit id mismatch: `{id}` in {} is not in the data",
                path.display()
            ))
        })?;
        let group = match record.get(group_col).unwrap_or("").trim() {
            "" => None,
            g => Some(
                g.parse::<usize>()
                    .map_err(|_| Failure::usage(format!("{} line {}: bad group id `{g}`", path.display(), row + 2)))?,
            ),
        };
        if labels[unit].replace(group).is_some() {
            return Err(Failure::usage(format!(
                "unit id mismatch: `{id}` listed twice in {}",
                path.display()
            )));
        }
    }
    let missing: Vec<usize> = (0..labels.len()).filter(|&u| labels[u].is_none()).collect();
    if !missing.is_empty() {
        return Err(Failure::usage(format!(
            "unit id mismatch: {} data units missing from {}: {}",
            missing.len(),
            path.display(),
            table.names(&missing)
        )));
    }
    Ok(Matching::from_labels(labels.into_iter().flatten().collect()))
}

pub fn run_evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let table = Table::read(&args.data)?;
    let sample = &table.sample;
    let path = args
        .matches
        .as_deref()
        .ok_or_else(|| Failure::usage("--matches is required"))?;
    let m = read_matches(path, &table)?;
    let metric = table.metric(args.data.metric)?;
    let space = MetricSpace::new(&metric, sample)?;

    if let Some(text) = &args.constraints {
        let c = parse_constraints(text)?;
        c.check_arity(sample.conditions())?;
        if let Err(violation) = audit::groups_satisfy(&m, sample, &c) {
            // Report groups with the 1-based ids used in matches.csv.
            let mut bad = Vec::new();
            for (g, members) in m.groups().iter().enumerate() {
                let mut counts = vec![0; sample.conditions()];
                members.iter().for_each(|&u| counts[sample.condition_of(u)] += 1);
                if !c.admits(&counts) {
                    bad.push(format!("group {} has condition counts {counts:?}", g + 1));
                }
            }
            debug_assert!(!bad.is_empty(), "{violation}");
            let message = format!("constraints {c} violated: {}", bad.join("; "));
            if args.strict {
                return Err(Failure::infeasible(message));
            }
            eprintln!("warning: {message}");
        }
    }
    if let Some(name) = &args.objective {
        let which: Objective = name.parse().map_err(Failure::usage)?;
        let value = objective(&m, sample, &space, which)?;
        println!("{which} {value}");
    }
    let report = MatchReport::new(&m, sample, &space, table.outcomes.as_deref())?;
    let dir = output_dir(&args.common.output_dir)?;
    let report_path = write_report(&dir, &report)?;
    eprintln!("wrote {}", report_path.display());
    Ok(())
}

pub fn run_simulate(args: SimulateArgs) -> Result<(), Failure> {
    let seed = args.seed.unwrap_or_else(|| {
        let seed = rand::random::<u64>();
        eprintln!("seed: {seed}");
        seed
    });
    let methods = match &args.methods {
        Some(names) => names
            .iter()
            .map(|n| n.trim().parse::<Method>().map_err(Failure::usage))
            .collect::<Result<Vec<_>, _>>()?,
        None => vec![Method::Unadjusted, Method::Gfm, Method::Greedy11],
    };
    let mut config = SimConfig::new(args.n.unwrap_or(1000), args.reps.unwrap_or(1000), seed, methods);
    if let Some(text) = &args.constraints {
        config.constraints = parse_constraints(text)?;
    }
    config.metric = match args.metric.unwrap_or(MetricName::Euclidean) {
        MetricName::Euclidean => SimMetric::Euclidean,
        MetricName::Mahalanobis => SimMetric::Mahalanobis,
        MetricName::Scalar => return Err(Failure::usage("simulate supports euclidean and mahalanobis metrics")),
    };
    config.normalize_to = args
        .normalize_to
        .as_deref()
        .map(|n| n.parse::<Method>().map_err(Failure::usage))
        .transpose()?;
    config.keep_raw = args.raw;
    // Every configuration problem is a usage error here, including the
    // oracle size cap.
    let report = run_experiment(&config).map_err(|e| Failure::usage(e.to_string()))?;

    let dir = output_dir(&args.common.output_dir)?;
    let csv_path = dir.join("sim_report.csv");
    let err = |e: csv::Error| Failure::io(csv_path.display(), e);
    let mut w = csv::Writer::from_path(&csv_path).map_err(err)?;
    w.write_record(report.columns()).map_err(err)?;
    for row in report.rows() {
        w.write_record(row).map_err(err)?;
    }
    w.flush().map_err(|e| Failure::io(csv_path.display(), e))?;

    let json_path = dir.join("sim_report.json");
    let mut json = report.to_json();
    if let Some(obj) = json.as_object_mut() {
        // Per-replicate records go to their own file.
        obj.remove("raw");
    }
    write_file(
        &json_path,
        &(serde_json::to_string_pretty(&json).expect("report serializes") + "\n"),
    )?;

    if let Some(raw) = &report.raw {
        let raw_path = dir.join("sim_raw.csv");
        let err = |e: csv::Error| Failure::io(raw_path.display(), e);
        let mut w = csv::Writer::from_path(&raw_path).map_err(err)?;
        w.write_record(["rep", "method", "estimate", "error"]).map_err(err)?;
        for r in raw {
            let estimate = r.estimate.map(|e| e.to_string()).unwrap_or_default();
            w.write_record([
                r.rep.to_string(),
                r.method.to_string(),
                estimate,
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Failure::io(raw_path.display(), e))?;
    }

    println!("treated share {:.4}", report.treated_share);
    for s in &report.methods {
        println!(
            "{:<14} bias {:>9.5} se {:>8.5} rmse {:>8.5} |bias|/rmse {:>6.3} failures {}",
            s.method.name(),
            s.bias,
            s.se,
            s.rmse,
            s.bias_over_rmse,
            s.failures
        );
    }
    Ok(())
}
