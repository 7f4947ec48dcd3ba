//! Long-format CSV ingestion.

use std::collections::HashMap;
use std::io::Read;

use mrstd_core::{validate, LongFormatBuilder, LongRow, TrialData, Violation, ViolationKind};

use crate::config::Columns;
use crate::CliError;

/// Trial data plus any cluster-constant weight columns, keyed by column name
/// and then by cluster id.
#[derive(Debug)]
pub struct Loaded {
    pub data: TrialData,
    pub weight_columns: HashMap<String, HashMap<String, f64>>,
}

fn find(headers: &csv::StringRecord, name: &str) -> Result<usize, CliError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::input(format!("column '{name}' is not in the input header")))
}

fn number(field: &str, raw: &str, line: usize, id: &str, out: &mut Vec<Violation>) -> f64 {
    match raw.trim().parse::<f64>() {
        Ok(v) => v,
        Err(_) => {
            let kind = if raw.trim().is_empty() || raw.trim().eq_ignore_ascii_case("na") {
                ViolationKind::NonFiniteValue { field: field.to_owned() }
            } else {
                ViolationKind::Unparseable { field: field.to_owned(), value: raw.to_owned() }
            };
            out.push(Violation::new(Some(id), kind).at_line(line));
            f64::NAN
        }
    }
}

/// Reads the CSV, reporting every row-level and structural violation at once.
pub fn read_long<R: Read>(reader: R, columns: &Columns, weight_columns: &[String]) -> Result<Loaded, CliError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| CliError::input(format!("input header: {e}")))?.clone();
    let id_col = find(&headers, &columns.cluster_id)?;
    let trt_col = find(&headers, &columns.treatment)?;
    let y_col = find(&headers, &columns.outcome)?;
    let x_cols = columns.covariates.iter().map(|c| find(&headers, c)).collect::<Result<Vec<_>, _>>()?;
    let h_cols = columns.cluster_covariates.iter().map(|c| find(&headers, c)).collect::<Result<Vec<_>, _>>()?;
    let s_col = columns.stratum.as_deref().map(|c| find(&headers, c)).transpose()?;
    let w_cols = weight_columns.iter().map(|c| find(&headers, c)).collect::<Result<Vec<_>, _>>()?;

    let mut builder = LongFormatBuilder::new(x_cols.len(), h_cols.len());
    let mut violations = Vec::new();
    let mut weights: Vec<HashMap<String, f64>> = vec![HashMap::new(); w_cols.len()];
    let mut x = Vec::with_capacity(x_cols.len());
    let mut h = Vec::with_capacity(h_cols.len());
    for record in rdr.records() {
        let record = record.map_err(|e| CliError::input(format!("input: {e}")))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let id = &record[id_col];
        let treated = match record[trt_col].trim() {
            "1" | "1.0" => true,
            "0" | "0.0" => false,
            other => {
                violations.push(
                    Violation::new(Some(id), ViolationKind::InvalidTreatment { value: other.to_owned() }).at_line(line),
                );
                continue;
            }
        };
        let outcome = number(&columns.outcome, &record[y_col], line, id, &mut violations);
        x.clear();
        for (&c, name) in x_cols.iter().zip(&columns.covariates) {
            x.push(number(name, &record[c], line, id, &mut violations));
        }
        h.clear();
        for (&c, name) in h_cols.iter().zip(&columns.cluster_covariates) {
            h.push(number(name, &record[c], line, id, &mut violations));
        }
        for ((&c, name), map) in w_cols.iter().zip(weight_columns).zip(&mut weights) {
            let w = number(name, &record[c], line, id, &mut violations);
            let prev = *map.entry(id.to_owned()).or_insert(w);
            if prev.to_bits() != w.to_bits() {
                violations.push(Violation::new(Some(id), ViolationKind::ClusterCovariateNotConstant).at_line(line));
            }
        }
        builder.push(LongRow {
            line,
            cluster_id: id,
            treated,
            outcome,
            covariates: &x,
            cluster_covariates: &h,
            stratum: s_col.map(|c| &record[c]),
        });
    }
    let (data, row_violations) = builder.finish();
    violations.extend(row_violations);
    // row-level problems already carry line numbers; skip their structural echoes
    let has_rows = !violations.is_empty();
    violations.extend(
        validate(&data).into_iter().filter(|v| !(has_rows && matches!(v.kind, ViolationKind::NonFiniteValue { .. }))),
    );
    for treated in [true, false] {
        if data.clusters.iter().filter(|c| c.treated == treated).count() == 1 {
            violations.push(Violation::new(None, ViolationKind::SingleClusterArm { treated }));
        }
    }
    if !violations.is_empty() {
        return Err(CliError::validation(&violations));
    }
    Ok(Loaded { data, weight_columns: weight_columns.iter().cloned().zip(weights).collect() })
}
