//! CSV ingestion: RFC-4180, UTF-8, header row required, comma delimiter,
//! decimal point, missing marker = empty field or "NA" (outcome only, and
//! only where the selection is 0).

use crate::config::{Equation, ModelConfig, EQUATIONS};
use crate::{CliError, CliResult};
use genheck::Dataset;
use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;
use std::path::Path;

fn is_missing(field: &str) -> bool {
    field.is_empty() || field == "NA"
}

fn parse_number(field: &str, row: usize, column: &str) -> CliResult<f64> {
    field.trim().parse::<f64>().map_err(|_| CliError::Parse {
        row,
        column: column.to_string(),
        message: format!("cannot parse {field:?} as a number"),
    })
}

/// The ingested dataset plus per-equation coefficient labels.
pub struct Ingested {
    pub dataset: Dataset,
    pub names: HashMap<&'static str, Vec<String>>,
}

pub fn ingest(path: &Path, config: &ModelConfig) -> CliResult<Ingested> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => CliError::Schema(format!("cannot open {}: {e}", path.display())),
            _ => CliError::Schema(format!("{e}")),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Schema(format!("cannot read header row: {e}")))?
        .clone();
    let mut col_index = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        col_index.insert(h.to_string(), i);
    }
    let lookup = |name: &str| -> CliResult<usize> {
        col_index
            .get(name)
            .copied()
            .ok_or_else(|| CliError::Schema(format!("column {name:?} not found in header")))
    };

    let outcome_idx = lookup(&config.outcome)?;
    let selection_idx = lookup(&config.selection)?;
    let mut covariate_idx: HashMap<Equation, Vec<usize>> = HashMap::new();
    for eq in EQUATIONS {
        let cols = match eq {
            Equation::Outcome => &config.outcome_covariates,
            Equation::Selection => &config.selection_covariates,
            Equation::Dispersion => &config.dispersion_covariates,
            Equation::Correlation => &config.correlation_covariates,
        };
        let idx: CliResult<Vec<usize>> = cols.iter().map(|c| lookup(c)).collect();
        covariate_idx.insert(eq, idx?);
    }

    let mut y = Vec::new();
    let mut u = Vec::new();
    let mut columns: HashMap<Equation, Vec<Vec<f64>>> = EQUATIONS
        .iter()
        .map(|eq| (*eq, vec![Vec::new(); covariate_idx[eq].len()]))
        .collect();

    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| CliError::Parse {
            row,
            column: "<record>".to_string(),
            message: format!("{e}"),
        })?;
        let sel_field = record.get(selection_idx).unwrap_or("");
        let sel = parse_number(sel_field, row, &config.selection)?;
        let selected = if sel == 0.0 {
            false
        } else if sel == 1.0 {
            true
        } else {
            return Err(CliError::Value {
                row,
                message: format!(
                    "selection column {:?} must be 0 or 1, got {sel_field:?}",
                    config.selection
                ),
            });
        };
        let out_field = record.get(outcome_idx).unwrap_or("");
        let outcome = if is_missing(out_field.trim()) {
            if selected {
                return Err(CliError::Value {
                    row,
                    message: format!(
                        "outcome {:?} is missing but the selection indicator is 1",
                        config.outcome
                    ),
                });
            }
            f64::NAN
        } else {
            let v = parse_number(out_field, row, &config.outcome)?;
            if selected && !v.is_finite() {
                return Err(CliError::Value {
                    row,
                    message: format!("outcome {:?} is not finite for a selected row", config.outcome),
                });
            }
            v
        };
        y.push(if selected { outcome } else { 0.0 });
        u.push(selected);
        for eq in EQUATIONS {
            for (j, &ci) in covariate_idx[&eq].iter().enumerate() {
                let field = record.get(ci).unwrap_or("");
                if is_missing(field.trim()) {
                    return Err(CliError::Value {
                        row,
                        message: format!("covariate {:?} is missing", headers.get(ci).unwrap_or("?")),
                    });
                }
                let v = parse_number(field, row, headers.get(ci).unwrap_or("?"))?;
                columns.get_mut(&eq).unwrap()[j].push(v);
            }
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(CliError::Schema("no data rows".to_string()));
    }

    let build = |eq: Equation, with_intercept: bool| -> DMatrix<f64> {
        let cols = &columns[&eq];
        let extra = usize::from(with_intercept);
        DMatrix::from_fn(n, cols.len() + extra, |i, j| {
            if with_intercept && j == 0 {
                1.0
            } else {
                cols[j - extra][i]
            }
        })
    };
    let x = build(Equation::Outcome, config.intercepts.outcome);
    let w = build(Equation::Selection, config.intercepts.selection);
    let e = build(Equation::Dispersion, config.intercepts.dispersion);
    let v = build(Equation::Correlation, config.intercepts.correlation);

    let dataset = Dataset::new(DVector::from_vec(y), u, x, w, e, v)?;
    let names = EQUATIONS
        .iter()
        .map(|eq| (eq.label(), config.equation_names(*eq)))
        .collect();
    Ok(Ingested { dataset, names })
}

/// True when every selection column also appears (bitwise equal) among the
/// outcome columns: no selection-only covariate is present, which is the
/// situation the exclusion-restriction advice warns about.
pub fn lacks_exclusion_restriction(data: &Dataset) -> bool {
    let x = data.x();
    let w = data.w();
    for wj in 0..w.ncols() {
        let mut found = false;
        for xj in 0..x.ncols() {
            if (0..data.n()).all(|i| w[(i, wj)] == x[(i, xj)]) {
                found = true;
                break;
            }
        }
        if !found {
            return false;
        }
    }
    true
}
