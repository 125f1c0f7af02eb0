//! Column-name-based model specification. No formula language: each equation
//! lists the CSV columns it uses, plus an intercept switch (default on).

use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Intercepts {
    pub outcome: bool,
    pub selection: bool,
    pub dispersion: bool,
    pub correlation: bool,
}

impl Default for Intercepts {
    fn default() -> Self {
        Intercepts {
            outcome: true,
            selection: true,
            dispersion: true,
            correlation: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelConfig {
    /// Outcome column; may be empty/NA exactly where the selection is 0.
    pub outcome: String,
    /// Selection column with values in {0, 1}.
    pub selection: String,
    pub outcome_covariates: Vec<String>,
    pub selection_covariates: Vec<String>,
    pub dispersion_covariates: Vec<String>,
    pub correlation_covariates: Vec<String>,
    pub intercepts: Intercepts,
}

impl ModelConfig {
    /// Column labels per equation, including the intercept when present.
    pub fn equation_names(&self, eq: Equation) -> Vec<String> {
        let (with_intercept, cov) = match eq {
            Equation::Outcome => (self.intercepts.outcome, &self.outcome_covariates),
            Equation::Selection => (self.intercepts.selection, &self.selection_covariates),
            Equation::Dispersion => (self.intercepts.dispersion, &self.dispersion_covariates),
            Equation::Correlation => (self.intercepts.correlation, &self.correlation_covariates),
        };
        let mut names = Vec::with_capacity(cov.len() + 1);
        if with_intercept {
            names.push("intercept".to_string());
        }
        names.extend(cov.iter().cloned());
        names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Equation {
    Outcome,
    Selection,
    Dispersion,
    Correlation,
}

impl Equation {
    pub fn label(&self) -> &'static str {
        match self {
            Equation::Outcome => "outcome",
            Equation::Selection => "selection",
            Equation::Dispersion => "dispersion",
            Equation::Correlation => "correlation",
        }
    }

    pub fn parse(s: &str) -> Option<Equation> {
        match s {
            "outcome" => Some(Equation::Outcome),
            "selection" => Some(Equation::Selection),
            "dispersion" => Some(Equation::Dispersion),
            "correlation" => Some(Equation::Correlation),
            _ => None,
        }
    }

    pub fn block(&self) -> genheck::Block {
        match self {
            Equation::Outcome => genheck::Block::Beta,
            Equation::Selection => genheck::Block::Gamma,
            Equation::Dispersion => genheck::Block::Lambda,
            Equation::Correlation => genheck::Block::Kappa,
        }
    }
}

pub const EQUATIONS: [Equation; 4] = [
    Equation::Outcome,
    Equation::Selection,
    Equation::Dispersion,
    Equation::Correlation,
];
