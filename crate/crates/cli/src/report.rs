//! JSON report types. The shapes are frozen by the schemas shipped under
//! `schemas/`; a test validates every generated report against them.

use genheck::{FitResult, SummaryRow};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct CoefficientRow {
    pub equation: String,
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Serialize)]
pub struct FitReport {
    pub model: String,
    pub coefficients: Vec<CoefficientRow>,
    pub loglik: f64,
    pub n: usize,
    pub n_selected: usize,
    pub converged: bool,
    pub iterations: usize,
    pub boundary_warning: bool,
}

impl FitReport {
    pub fn new(
        model: &str,
        fit: &FitResult,
        rows: &[SummaryRow],
        names: &[(String, Vec<String>)],
    ) -> FitReport {
        let mut coefficients = Vec::with_capacity(rows.len());
        let mut k = 0;
        for (equation, labels) in names {
            for label in labels {
                let row = &rows[k];
                coefficients.push(CoefficientRow {
                    equation: equation.clone(),
                    name: label.clone(),
                    estimate: row.estimate,
                    std_error: row.std_error,
                    z: row.z_value,
                    p: row.p_value,
                    ci_low: row.ci_low,
                    ci_high: row.ci_high,
                });
                k += 1;
            }
        }
        debug_assert_eq!(k, rows.len());
        FitReport {
            model: model.to_string(),
            coefficients,
            loglik: fit.loglik,
            n: fit.n,
            n_selected: fit.n_selected,
            converged: fit.converged,
            iterations: fit.iterations,
            boundary_warning: fit.boundary_warning,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct TestRow {
    pub kind: String,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub floored_negative: bool,
}

#[derive(Debug, Serialize)]
pub struct TestReport {
    pub model: String,
    pub restriction: Vec<String>,
    pub df: usize,
    pub loglik_full: f64,
    pub loglik_restricted: f64,
    pub tests: Vec<TestRow>,
    pub n: usize,
}
