//! Composite indices from raw variables.
//!
//! Each raw variable is z-scored within each time point across objects
//! (sample standard deviation), then the z-scores are averaged within each
//! index. Time points are the `t` column unless a period column is named,
//! which suits panels where objects enter at different calendar times.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use longclust_core::PanelDataset;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::panel::{assemble, csv_error, parse_covariates, parse_id, parse_number, parse_t, PanelRow};

/// One output index and the raw columns averaged into it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSpec {
    pub name: String,
    pub columns: Vec<String>,
}

pub fn load_mapping(path: &Path) -> Result<Vec<IndexSpec>> {
    crate::params::read_json(path)
}

/// Builds the index panel from a raw CSV with `object_id`, `t`, the raw
/// columns named in `mapping`, optional `w_1..w_d` covariates passed
/// through unchanged, and optionally a period column.
pub fn build_indices(input: impl Read, mapping: &[IndexSpec], period_column: Option<&str>) -> Result<PanelDataset> {
    if mapping.is_empty() || mapping.iter().any(|m| m.columns.is_empty()) {
        return Err(CliError::format("every index needs at least one raw column"));
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers().map_err(csv_error)?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let find = |name: &str| {
        names
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| CliError::format(format!("raw file has no column {name:?}")))
    };
    let (id_col, t_col) = (find("object_id")?, find("t")?);
    let period_col = period_column.map(find).transpose()?;

    // distinct raw variables in first-use order
    let mut raw: Vec<&str> = Vec::new();
    for m in mapping {
        for c in &m.columns {
            if !raw.contains(&c.as_str()) {
                raw.push(c);
            }
        }
    }
    let raw_cols = raw.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let mut w_cols: Vec<(usize, &str)> = Vec::new();
    while let Some(c) = names.iter().position(|n| *n == format!("w_{}", w_cols.len() + 1)) {
        w_cols.push((c, names[c]));
    }

    let mut rows = Vec::new();
    let mut periods = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != names.len() {
            return Err(CliError::format(format!(
                "line {line}: expected {} fields, found {}",
                names.len(),
                record.len()
            )));
        }
        let id = parse_id(&record[id_col], line)?;
        let t = parse_t(&record[t_col], line)?;
        let x = raw_cols
            .iter()
            .map(|&c| parse_number(&record[c], line, names[c]))
            .collect::<Result<Vec<_>>>()?;
        let w = parse_covariates(&record, &w_cols, line)?;
        periods.push(match period_col {
            Some(c) => record[c].to_string(),
            None => t.to_string(),
        });
        rows.push(PanelRow { id, t, line, x, w });
    }

    standardize(&mut rows, &periods, &raw, period_column.unwrap_or("t"))?;
    let position: HashMap<&str, usize> = raw.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    for r in &mut rows {
        let z = std::mem::take(&mut r.x);
        r.x = mapping
            .iter()
            .map(|m| m.columns.iter().map(|c| z[position[c.as_str()]]).sum::<f64>() / m.columns.len() as f64)
            .collect();
    }
    assemble(rows, mapping.len())
}

/// Z-scores each column of `rows[..].x` within groups of equal `periods`.
fn standardize(rows: &mut [PanelRow], periods: &[String], raw: &[&str], period_name: &str) -> Result<()> {
    let mut groups: Vec<(&str, Vec<usize>)> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, p) in periods.iter().enumerate() {
        let g = *index.entry(p.as_str()).or_insert_with(|| {
            groups.push((p.as_str(), Vec::new()));
            groups.len() - 1
        });
        groups[g].1.push(i);
    }
    for (period, members) in &groups {
        for (j, name) in raw.iter().enumerate() {
            let n = members.len() as f64;
            if members.len() < 2 {
                return Err(CliError::format(format!(
                    "variable {name}: {period_name} = {period} has a single object, so no standard deviation"
                )));
            }
            let mean = members.iter().map(|&i| rows[i].x[j]).sum::<f64>() / n;
            let var = members.iter().map(|&i| (rows[i].x[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let sd = var.sqrt();
            if sd.is_nan() || sd <= 0.0 {
                return Err(CliError::format(format!(
                    "variable {name}: zero standard deviation at {period_name} = {period}"
                )));
            }
            for &i in members {
                rows[i].x[j] = (rows[i].x[j] - mean) / sd;
            }
        }
    }
    Ok(())
}
