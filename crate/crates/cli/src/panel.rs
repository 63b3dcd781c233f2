//! Long-format panel CSV: one row per object and time point.
//!
//! ```text
//! object_id,t,x_1,...,x_p[,w_1,...,w_d]
//! ```
//!
//! `t` runs 1, 2, ... within each object without gaps; rows may appear in
//! any order. Objects keep the order of their first row.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use longclust_core::{ObjectSeries, PanelDataset};

use crate::error::{CliError, Result};

/// Column layout parsed from a header row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PanelHeader {
    pub p: usize,
    pub d: usize,
}

/// Checks `object_id,t,x_1..x_p,w_1..w_d`.
pub fn parse_header(names: &[&str]) -> Result<PanelHeader> {
    if names.len() < 3 || names[0] != "object_id" || names[1] != "t" {
        return Err(CliError::format(format!(
            "header must start with object_id,t followed by x_1..x_p; found {:?}",
            names
        )));
    }
    let mut p = 0;
    let mut d = 0;
    for (col, name) in names.iter().enumerate().skip(2) {
        let expected_x = format!("x_{}", p + 1);
        let expected_w = format!("w_{}", d + 1);
        if d == 0 && *name == expected_x {
            p += 1;
        } else if p > 0 && *name == expected_w {
            d += 1;
        } else {
            return Err(CliError::format(format!(
                "header column {} is {name:?}; expected {}",
                col + 1,
                if d == 0 { format!("{expected_x} or {expected_w}") } else { expected_w }
            )));
        }
    }
    if p == 0 {
        return Err(CliError::format("header has no x_ columns"));
    }
    Ok(PanelHeader { p, d })
}

pub(crate) fn parse_number(cell: &str, line: u64, column: &str) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| CliError::format(format!("line {line}, column {column}: {cell:?} is not a number")))?;
    if !v.is_finite() {
        return Err(CliError::format(format!("line {line}, column {column}: value {cell:?} is not finite")));
    }
    Ok(v)
}

/// One parsed data row before grouping into objects.
pub(crate) struct PanelRow {
    pub id: String,
    pub t: usize,
    pub line: u64,
    pub x: Vec<f64>,
    pub w: Option<Vec<f64>>,
}

pub(crate) fn parse_t(cell: &str, line: u64) -> Result<usize> {
    cell.parse()
        .ok()
        .filter(|&t| t >= 1)
        .ok_or_else(|| CliError::format(format!("line {line}, column t: {cell:?} is not a positive integer")))
}

pub(crate) fn parse_id(cell: &str, line: u64) -> Result<String> {
    if cell.is_empty() {
        return Err(CliError::format(format!("line {line}, column object_id: empty id")));
    }
    Ok(cell.to_string())
}

/// Groups rows by object (first-appearance order), sorts each object by
/// `t` and checks that `t` runs 1, 2, ... without duplicates or gaps.
pub(crate) fn assemble(rows: Vec<PanelRow>, p: usize) -> Result<PanelDataset> {
    if rows.is_empty() {
        return Err(CliError::format("no data rows"));
    }
    let has_w = rows[0].w.is_some();
    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, Vec<PanelRow>> = HashMap::new();
    for r in rows {
        if r.w.is_some() != has_w {
            return Err(CliError::format(format!(
                "line {}, object {}: ragged covariates (present on some rows, missing on others)",
                r.line, r.id
            )));
        }
        if !grouped.contains_key(&r.id) {
            order.push(r.id.clone());
        }
        grouped.entry(r.id.clone()).or_default().push(r);
    }
    let mut objects = Vec::with_capacity(order.len());
    for id in order {
        let mut series = grouped.remove(&id).expect("recorded id");
        series.sort_by_key(|r| r.t);
        for (pos, r) in series.iter().enumerate() {
            if pos > 0 && series[pos - 1].t == r.t {
                return Err(CliError::format(format!(
                    "object {id}: duplicate t = {} on lines {} and {}",
                    r.t,
                    series[pos - 1].line,
                    r.line
                )));
            }
            if r.t != pos + 1 {
                return Err(CliError::format(format!(
                    "object {id}: gap in t, expected t = {} but next is t = {} (line {})",
                    pos + 1,
                    r.t,
                    r.line
                )));
            }
        }
        let x: Vec<f64> = series.iter().flat_map(|r| r.x.iter().copied()).collect();
        let mut obj = ObjectSeries::new(id.clone(), p, x)?;
        if has_w {
            let d = series[0].w.as_ref().map_or(0, Vec::len);
            let w: Vec<f64> = series.iter().flat_map(|r| r.w.clone().expect("checked")).collect();
            obj = obj.with_covariates(d, w)?;
        }
        objects.push(obj);
    }
    Ok(PanelDataset::new(objects)?)
}

/// Reads covariate cells `cols`; all empty means no covariates on this row.
pub(crate) fn parse_covariates(record: &csv::StringRecord, cols: &[(usize, &str)], line: u64) -> Result<Option<Vec<f64>>> {
    if cols.is_empty() {
        return Ok(None);
    }
    let filled: Vec<bool> = cols.iter().map(|&(c, _)| !record[c].is_empty()).collect();
    if let Some(j) = filled.iter().position(|&f| f != filled[0]) {
        return Err(CliError::format(format!(
            "line {line}, column {}: ragged covariates (some w columns empty, others not)",
            cols[j].1
        )));
    }
    if !filled[0] {
        return Ok(None);
    }
    cols.iter()
        .map(|&(c, name)| parse_number(&record[c], line, name))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

pub fn load_panel(path: &Path) -> Result<PanelDataset> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    read_panel(file).map_err(|e| match e {
        CliError::Format(m) => CliError::format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn read_panel(input: impl Read) -> Result<PanelDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers().map_err(csv_error)?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let header = parse_header(&names)?;
    let (p, d) = (header.p, header.d);

    let w_cols: Vec<(usize, &str)> = (0..d).map(|j| (2 + p + j, names[2 + p + j])).collect();
    let mut rows = Vec::new();
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
        let id = parse_id(&record[0], line)?;
        let t = parse_t(&record[1], line)?;
        let x = (0..p)
            .map(|j| parse_number(&record[2 + j], line, names[2 + j]))
            .collect::<Result<Vec<_>>>()?;
        let w = parse_covariates(&record, &w_cols, line)?;
        rows.push(PanelRow { id, t, line, x, w });
    }
    assemble(rows, p)
}

pub(crate) fn csv_error(e: csv::Error) -> CliError {
    CliError::format(format!("csv: {e}"))
}

/// Header names for a panel with `p` responses and `d` covariates.
pub fn header_names(p: usize, d: usize) -> Vec<String> {
    let mut h = vec!["object_id".to_string(), "t".to_string()];
    h.extend((1..=p).map(|j| format!("x_{j}")));
    h.extend((1..=d).map(|j| format!("w_{j}")));
    h
}

/// Writes values with the shortest representation that parses back to the
/// same `f64`.
pub fn write_panel(out: impl Write, ds: &PanelDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header_names(ds.p(), ds.d())).map_err(csv_error)?;
    for o in ds.objects() {
        for t in 0..o.len() {
            let mut rec = vec![o.id().to_string(), (t + 1).to_string()];
            rec.extend(o.x(t).iter().map(|v| v.to_string()));
            if let Some(wt) = o.w(t) {
                rec.extend(wt.iter().map(|v| v.to_string()));
            }
            w.write_record(&rec).map_err(csv_error)?;
        }
    }
    w.flush().map_err(|e| CliError::format(format!("write: {e}")))?;
    Ok(())
}

pub fn save_panel(path: &Path, ds: &PanelDataset) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    write_panel(std::io::BufWriter::new(file), ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(s: &str) -> Result<PanelDataset> {
        read_panel(s.as_bytes())
    }

    #[test]
    fn round_trip_two_objects() {
        let src = "object_id,t,x_1,x_2\nb,2,0.1,3\na,1,1e-3,-2.5\nb,1,7,8\n";
        let ds = read(src).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.objects()[0].id(), "b");
        assert_eq!(ds.objects()[0].x(0), &[7.0, 8.0]);
        assert_eq!(ds.objects()[0].x(1), &[0.1, 3.0]);
        let mut buf = Vec::new();
        write_panel(&mut buf, &ds).unwrap();
        let back = read_panel(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn covariates_parsed() {
        let ds = read("object_id,t,x_1,w_1,w_2\na,1,0,1,2\na,2,0,3,4\n").unwrap();
        assert_eq!(ds.d(), 2);
        assert_eq!(ds.objects()[0].w(1), Some(&[3.0, 4.0][..]));
    }

    #[test]
    fn diagnostics_name_the_problem() {
        let gap = read("object_id,t,x_1\nalpha,1,0\nalpha,3,1\n").unwrap_err().to_string();
        assert!(gap.contains("alpha") && gap.contains("gap"), "{gap}");
        let dup = read("object_id,t,x_1\na,1,0\na,1,1\n").unwrap_err().to_string();
        assert!(dup.contains("duplicate") && dup.contains("lines 2 and 3"), "{dup}");
        let nan = read("object_id,t,x_1,x_2\na,1,0,zz\n").unwrap_err().to_string();
        assert!(nan.contains("line 2") && nan.contains("x_2"), "{nan}");
        let ragged = read("object_id,t,x_1,w_1\na,1,0,1\na,2,0,\n").unwrap_err().to_string();
        assert!(ragged.contains("ragged") && ragged.contains("line 3"), "{ragged}");
        let header = read("id,t,x_1\n").unwrap_err().to_string();
        assert!(header.contains("object_id"), "{header}");
        let order = read("object_id,t,w_1,x_1\n").unwrap_err().to_string();
        assert!(order.contains("column 3"), "{order}");
        let t0 = read("object_id,t,x_1\na,0,1\n").unwrap_err().to_string();
        assert!(t0.contains("column t"), "{t0}");
    }

    #[test]
    fn values_survive_exactly() {
        let vals = [0.1 + 0.2, 1.0 / 3.0, -2.2250738585072014e-308, 1.7976931348623157e308, 5e-324];
        let x: Vec<f64> = vals.to_vec();
        let ds = PanelDataset::new(vec![ObjectSeries::new("o", 1, x).unwrap()]).unwrap();
        let mut buf = Vec::new();
        write_panel(&mut buf, &ds).unwrap();
        let back = read_panel(buf.as_slice()).unwrap();
        for (a, b) in back.objects()[0].responses().iter().zip(&vals) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
