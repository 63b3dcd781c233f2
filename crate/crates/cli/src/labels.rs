//! Label files accepted by `eval`: a truth JSON written by `simulate`, or a
//! CSV with a `hard`, `label` or `z` column (posterior CSVs from `fit`
//! qualify). Labels are read in file order.

use std::path::Path;

use longclust_core::FlatLabeling;

use crate::error::{CliError, Result};
use crate::params::{read_json, TruthJson};

const LABEL_COLUMNS: [&str; 3] = ["hard", "label", "z"];

pub fn load_labels(path: &Path) -> Result<FlatLabeling> {
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let truth: TruthJson = read_json(path)?;
        return Ok(FlatLabeling::new(truth.labels.into_iter().flat_map(|o| o.z).collect()));
    }
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    read_label_csv(file).map_err(|e| match e {
        CliError::Format(m) => CliError::format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn read_label_csv(input: impl std::io::Read) -> Result<FlatLabeling> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers().map_err(|e| CliError::format(format!("csv: {e}")))?.clone();
    let col = headers
        .iter()
        .position(|h| LABEL_COLUMNS.contains(&h))
        .ok_or_else(|| CliError::format(format!("no label column; expected one of {LABEL_COLUMNS:?}")))?;
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::format(format!("csv: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = record.get(col).unwrap_or("");
        let v: usize = cell.parse().map_err(|_| {
            CliError::format(format!("line {line}, column {}: {cell:?} is not a label", &headers[col]))
        })?;
        labels.push(v);
    }
    Ok(FlatLabeling::new(labels))
}
