use std::collections::HashMap;
use std::path::Path;

use genmatch::{Metric, Sample};

use crate::args::{DataArgs, MetricName};
use crate::failure::Failure;

/// A CSV data file turned into a sample.
pub struct Table {
    pub ids: Vec<String>,
    pub sample: Sample,
    pub outcomes: Option<Vec<f64>>,
}

impl Table {
    pub fn read(args: &DataArgs) -> Result<Table, Failure> {
        let path = args
            .input
            .as_deref()
            .ok_or_else(|| Failure::usage("--input is required"))?;
        let treatment_col = args
            .treatment_col
            .as_deref()
            .ok_or_else(|| Failure::usage("--treatment-col is required"))?;
        let mut reader = csv::Reader::from_path(path).map_err(|e| Failure::io(path.display(), e))?;
        let headers = reader.headers().map_err(|e| Failure::io(path.display(), e))?.clone();
        let column = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Failure::usage(format!("{}: no column named `{name}`", path.display())))
        };
        let treatment = column(treatment_col)?;
        let id = args.id_col.as_deref().map(column).transpose()?;
        let outcome = args.outcome_col.as_deref().map(column).transpose()?;
        let covariates: Vec<usize> = match &args.covariate_cols {
            Some(names) => names.iter().map(|n| column(n)).collect::<Result<_, _>>()?,
            None => (0..headers.len())
                .filter(|c| *c != treatment && Some(*c) != id && Some(*c) != outcome)
                .collect(),
        };
        if covariates.is_empty() {
            return Err(Failure::usage("no covariate columns"));
        }

        let mut ids = Vec::new();
        let mut labels = Vec::new();
        let mut flat = Vec::new();
        let mut outcomes = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Failure::io(path.display(), e))?;
            let line = row + 2;
            let cell = |c: usize| record.get(c).unwrap_or("");
            ids.push(id.map_or_else(|| (row + 1).to_string(), |c| cell(c).to_owned()));
            labels.push(cell(treatment).to_owned());
            for &c in &covariates {
                flat.push(parse_number(cell(c), &headers[c], line, path)?);
            }
            if let Some(c) = outcome {
                outcomes.push(parse_number(cell(c), &headers[c], line, path)?);
            }
        }
        let mut seen = HashMap::new();
        for (unit, id) in ids.iter().enumerate() {
            if let Some(first) = seen.insert(id.as_str(), unit) {
                return Err(Failure::usage(format!(
                    "unit id `{id}` appears on data rows {} and {}",
                    first + 1,
                    unit + 1
                )));
            }
        }

        let sample = Sample::from_flat(flat, covariates.len(), &labels)?;
        let sample = match &args.treated_label {
            Some(label) => sample.with_treated_label(label)?,
            None if sample.labels().iter().any(|l| l == "1") => sample.with_treated_label("1")?,
            None => sample,
        };
        Ok(Table {
            ids,
            sample,
            outcomes: outcome.map(|_| outcomes),
        })
    }

    pub fn metric(&self, name: Option<MetricName>) -> Result<Metric, Failure> {
        Ok(match name.unwrap_or(MetricName::Euclidean) {
            MetricName::Euclidean => Metric::Euclidean,
            MetricName::Mahalanobis => Metric::mahalanobis_from_sample(&self.sample)?,
            MetricName::Scalar => Metric::AbsDifference { column: 0 },
        })
    }

    /// Unit index of every id.
    pub fn index(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(u, id)| (id.as_str(), u)).collect()
    }

    pub fn names(&self, units: &[usize]) -> String {
        let names: Vec<&str> = units.iter().map(|&u| self.ids[u].as_str()).collect();
        names.join(", ")
    }
}

fn parse_number(text: &str, column: &str, line: usize, path: &Path) -> Result<f64, Failure> {
    text.trim().parse::<f64>().map_err(|_| {
        Failure::usage(format!(
            "{} line {line}: column `{column}` has non-numeric value `{text}`",
            path.display()
        ))
    })
}
