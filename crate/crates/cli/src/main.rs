use clap::{Args, Parser, Subcommand, ValueEnum};
use genheck::diagnostics::{cook_distance_with, envelope, score_residuals, GcdWeight};
use genheck::infer::{fit_with_zero_columns, gradient_test, lr_test, wald_test, Restriction};
use genheck::simulate::{monte_carlo, scenario, size_power, split_seed, ModelKind, Scenario};
use genheck::{fit, fit_classic, summary, Dataset, FitOptions, FitResult};
use genheck_cli::config::{Equation, Intercepts, ModelConfig};
use genheck_cli::ingest::{ingest, lacks_exclusion_restriction};
use genheck_cli::report::{FitReport, TestReport, TestRow};
use genheck_cli::{CliError, CliResult};
use serde_json::json;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "genheck",
    version,
    about = "Sample-selection regression with covariate-dependent selection bias and dispersion"
)]
struct Cli {
    /// Worker threads for fits and Monte Carlo runs; defaults to
    /// GENHECK_THREADS or all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModelChoice {
    Generalized,
    Classic,
}

impl ModelChoice {
    fn label(self) -> &'static str {
        match self {
            ModelChoice::Generalized => "generalized",
            ModelChoice::Classic => "classic",
        }
    }

    fn kind(self) -> ModelKind {
        match self {
            ModelChoice::Generalized => ModelKind::Generalized,
            ModelChoice::Classic => ModelKind::Classic,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum WeightChoice {
    /// Observed information (the standard generalized Cook distance).
    Info,
    /// Literal covariance weighting.
    Cov,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Outcome column (may be empty or NA exactly where selection is 0).
    #[arg(long)]
    outcome: String,
    /// Selection indicator column with values in {0, 1}.
    #[arg(long)]
    selection: String,
    /// Comma-separated covariate columns of the outcome mean equation.
    #[arg(long, default_value = "")]
    outcome_covariates: String,
    /// Comma-separated covariate columns of the selection equation.
    #[arg(long, default_value = "")]
    selection_covariates: String,
    /// Comma-separated covariate columns of the log-dispersion equation.
    #[arg(long, default_value = "")]
    dispersion_covariates: String,
    /// Comma-separated covariate columns of the arctanh-correlation equation.
    #[arg(long, default_value = "")]
    correlation_covariates: String,
    #[arg(long)]
    no_intercept_outcome: bool,
    #[arg(long)]
    no_intercept_selection: bool,
    #[arg(long)]
    no_intercept_dispersion: bool,
    #[arg(long)]
    no_intercept_correlation: bool,
}

fn split_names(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

impl DataArgs {
    fn config(&self) -> ModelConfig {
        ModelConfig {
            outcome: self.outcome.clone(),
            selection: self.selection.clone(),
            outcome_covariates: split_names(&self.outcome_covariates),
            selection_covariates: split_names(&self.selection_covariates),
            dispersion_covariates: split_names(&self.dispersion_covariates),
            correlation_covariates: split_names(&self.correlation_covariates),
            intercepts: Intercepts {
                outcome: !self.no_intercept_outcome,
                selection: !self.no_intercept_selection,
                dispersion: !self.no_intercept_dispersion,
                correlation: !self.no_intercept_correlation,
            },
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the model and write a JSON coefficient report.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value_t = ModelChoice::Generalized)]
        model: ModelChoice,
        /// Confidence level of the reported intervals.
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// LR, Wald, and gradient tests of zero restrictions.
    Test {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value_t = ModelChoice::Generalized)]
        model: ModelChoice,
        /// Coefficients to pin at zero as equation:name, where name is a
        /// covariate column, "intercept", or "*" for the whole equation.
        /// Repeatable; comma-separated values are accepted.
        #[arg(long = "zero", required = true)]
        zero: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score residuals as CSV.
    Residuals {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value_t = ModelChoice::Generalized)]
        model: ModelChoice,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulated envelope for the residual QQ plot, as CSV.
    Envelope {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value_t = ModelChoice::Generalized)]
        model: ModelChoice,
        #[arg(long, default_value_t = 100)]
        n_sim: usize,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Case-deletion influence (generalized Cook distance) as CSV.
    Cook {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value_t = ModelChoice::Generalized)]
        model: ModelChoice,
        /// Refit only this many randomly chosen observations.
        #[arg(long)]
        subsample: Option<usize>,
        #[arg(long, value_enum, default_value_t = WeightChoice::Info)]
        weight: WeightChoice,
        /// Seed for the subsample draw.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw one scenario dataset and write it as CSV.
    Simulate {
        #[arg(long)]
        scenario: u8,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Zero the correlation coefficients (the no-selection-bias null).
        #[arg(long)]
        null: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo tables: per-parameter mean/RMSE and, with --tests,
    /// empirical rejection rates.
    Mc {
        #[arg(long)]
        scenario: u8,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 200)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ModelChoice::Generalized)]
        model: ModelChoice,
        #[arg(long)]
        null: bool,
        /// Also run the LR/gradient/Wald size-power study.
        #[arg(long)]
        tests: bool,
        /// Comma-separated test levels.
        #[arg(long, default_value = "0.01,0.05,0.10")]
        levels: String,
        /// Output prefix: writes <out>.csv, <out>.json and, with --tests,
        /// <out>_tests.csv. Without it everything goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads(cli.threads);
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn init_threads(cli_threads: Option<usize>) {
    let threads = cli_threads.or_else(|| {
        std::env::var("GENHECK_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
    });
    if let Some(t) = threads {
        if t > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
        }
    }
}

fn write_output(out: Option<&Path>, content: &str) -> CliResult<()> {
    match out {
        Some(path) => {
            std::fs::write(path, content)?;
            Ok(())
        }
        None => {
            std::io::stdout().write_all(content.as_bytes())?;
            Ok(())
        }
    }
}

fn provenance(command: &str, detail: serde_json::Value) {
    eprintln!("config: {}", json!({ "command": command, "args": detail }));
}

fn fit_for(model: ModelChoice, dataset: &Dataset) -> CliResult<FitResult> {
    let options = FitOptions::default();
    Ok(match model {
        ModelChoice::Generalized => fit(dataset, &options)?,
        ModelChoice::Classic => fit_classic(dataset, &options)?,
    })
}

/// Coefficient labels per equation matching the fitted layout.
fn equation_names(
    model: ModelChoice,
    names: &std::collections::HashMap<&'static str, Vec<String>>,
) -> Vec<(String, Vec<String>)> {
    let intercept_only = vec!["intercept".to_string()];
    [
        Equation::Outcome,
        Equation::Selection,
        Equation::Dispersion,
        Equation::Correlation,
    ]
    .iter()
    .map(|eq| {
        let labels = match (model, eq) {
            (ModelChoice::Classic, Equation::Dispersion)
            | (ModelChoice::Classic, Equation::Correlation) => intercept_only.clone(),
            _ => names[eq.label()].clone(),
        };
        (eq.label().to_string(), labels)
    })
    .collect()
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Fit {
            data,
            model,
            level,
            out,
        } => cmd_fit(&data, model, level, out.as_deref()),
        Command::Test {
            data,
            model,
            zero,
            out,
        } => cmd_test(&data, model, &zero, out.as_deref()),
        Command::Residuals { data, model, out } => cmd_residuals(&data, model, out.as_deref()),
        Command::Envelope {
            data,
            model,
            n_sim,
            level,
            seed,
            out,
        } => cmd_envelope(&data, model, n_sim, level, seed, out.as_deref()),
        Command::Cook {
            data,
            model,
            subsample,
            weight,
            seed,
            out,
        } => cmd_cook(&data, model, subsample, weight, seed, out.as_deref()),
        Command::Simulate {
            scenario,
            n,
            seed,
            null,
            out,
        } => cmd_simulate(scenario, n, seed, null, out.as_deref()),
        Command::Mc {
            scenario,
            n,
            reps,
            seed,
            model,
            null,
            tests,
            levels,
            out,
        } => cmd_mc(scenario, n, reps, seed, model, null, tests, &levels, out.as_deref()),
    }
}

type Loaded = (Dataset, ModelConfig, genheck_cli::ingest::Ingested);

fn load(data: &DataArgs, model: ModelChoice) -> CliResult<Loaded> {
    let config = data.config();
    let ingested = ingest(&data.data, &config)?;
    eprintln!(
        "data: {} rows, {} selected, {} censored",
        ingested.dataset.n(),
        ingested.dataset.n_selected(),
        ingested.dataset.n_censored()
    );
    if lacks_exclusion_restriction(&ingested.dataset) {
        eprintln!(
            "warning: no selection covariate outside the outcome equation; \
             an exclusion restriction is advisable"
        );
    }
    let dataset = match model {
        ModelChoice::Generalized => ingested.dataset.clone(),
        // Tests and diagnostics for the classic model operate on the
        // intercept-only dispersion/correlation view.
        ModelChoice::Classic => ingested.dataset.classic_view(),
    };
    Ok((dataset, config, ingested))
}

fn cmd_fit(data: &DataArgs, model: ModelChoice, level: f64, out: Option<&Path>) -> CliResult<()> {
    provenance(
        "fit",
        json!({"data": data.data, "model": model.label(), "level": level, "config": data.config()}),
    );
    let (_, _, ingested) = load(data, model)?;
    let fitted = fit_for(model, &ingested.dataset)?;
    let rows = summary(&fitted, level)?;
    let names = equation_names(model, &ingested.names);
    let report = FitReport::new(model.label(), &fitted, &rows, &names);
    let content = serde_json::to_string_pretty(&report).expect("report serializes");
    write_output(out, &format!("{content}\n"))
}

/// Parse `equation:name` restriction specs into per-block column drops.
fn parse_zero_specs(
    specs: &[String],
    config: &ModelConfig,
    model: ModelChoice,
) -> CliResult<(Vec<(genheck::Block, Vec<usize>)>, Vec<String>)> {
    let mut drops: std::collections::HashMap<Equation, Vec<usize>> = std::collections::HashMap::new();
    let mut labels = Vec::new();
    for spec in specs.iter().flat_map(|s| s.split(',')) {
        let spec = spec.trim();
        if spec.is_empty() {
            continue;
        }
        let (eq_str, name) = spec.split_once(':').ok_or_else(|| {
            CliError::Usage(format!("restriction {spec:?} is not of the form equation:name"))
        })?;
        let eq = Equation::parse(eq_str)
            .ok_or_else(|| CliError::Usage(format!("unknown equation {eq_str:?}")))?;
        let names = match (model, eq) {
            (ModelChoice::Classic, Equation::Dispersion)
            | (ModelChoice::Classic, Equation::Correlation) => vec!["intercept".to_string()],
            _ => config.equation_names(eq),
        };
        let entry = drops.entry(eq).or_default();
        if name == "*" {
            for (j, label) in names.iter().enumerate() {
                if !entry.contains(&j) {
                    entry.push(j);
                    labels.push(format!("{}:{}", eq.label(), label));
                }
            }
        } else {
            let j = names.iter().position(|c| c == name).ok_or_else(|| {
                CliError::Usage(format!(
                    "{name:?} is not a coefficient of the {} equation (have: {})",
                    eq.label(),
                    names.join(", ")
                ))
            })?;
            if !entry.contains(&j) {
                entry.push(j);
                labels.push(format!("{}:{}", eq.label(), name));
            }
        }
    }
    if labels.is_empty() {
        return Err(CliError::Usage("no restriction given".to_string()));
    }
    let drops = drops
        .into_iter()
        .map(|(eq, mut cols)| {
            cols.sort_unstable();
            (eq.block(), cols)
        })
        .collect();
    Ok((drops, labels))
}

fn cmd_test(
    data: &DataArgs,
    model: ModelChoice,
    zero: &[String],
    out: Option<&Path>,
) -> CliResult<()> {
    provenance(
        "test",
        json!({"data": data.data, "model": model.label(), "zero": zero, "config": data.config()}),
    );
    let (dataset, config, _) = load(data, model)?;
    let (drops, labels) = parse_zero_specs(zero, &config, model)?;
    let df: usize = drops.iter().map(|(_, cols)| cols.len()).sum();

    let options = FitOptions::default();
    let full = fit(&dataset, &options)?;
    let restricted = fit_with_zero_columns(&dataset, &options, &drops)?;

    let layout = dataset.layout();
    let mut indices = Vec::with_capacity(df);
    for (block, cols) in &drops {
        let range = layout.block_range(*block);
        for &c in cols {
            indices.push(range.start + c);
        }
    }
    let lr = lr_test(&full, &restricted.fit, df)?;
    let wald = wald_test(
        &full,
        &Restriction {
            values: vec![0.0; indices.len()],
            indices,
        },
    )?;
    let grad = gradient_test(&restricted.theta_full_space, &full.theta_hat, &dataset, df)?;

    let report = TestReport {
        model: model.label().to_string(),
        restriction: labels,
        df,
        loglik_full: full.loglik,
        loglik_restricted: restricted.fit.loglik,
        tests: [lr, wald, grad]
            .iter()
            .map(|t| TestRow {
                kind: t.kind.to_string(),
                statistic: t.statistic,
                df: t.df,
                p_value: t.p_value,
                floored_negative: t.floored_negative,
            })
            .collect(),
        n: dataset.n(),
    };
    let content = serde_json::to_string_pretty(&report).expect("report serializes");
    write_output(out, &format!("{content}\n"))
}

fn csv_number(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

fn cmd_residuals(data: &DataArgs, model: ModelChoice, out: Option<&Path>) -> CliResult<()> {
    provenance(
        "residuals",
        json!({"data": data.data, "model": model.label(), "config": data.config()}),
    );
    let (dataset, _, _) = load(data, model)?;
    let fitted = fit_for(model, &dataset)?;
    let rep = score_residuals(&fitted, &dataset)?;
    let mut csv = String::from("index,u,ordinary,standardized,all_obs\n");
    let mut sel = 0usize;
    for i in 0..dataset.n() {
        let selected = dataset.u()[i];
        let (ord, std) = if selected {
            let row = (csv_number(rep.ordinary[sel]), csv_number(rep.standardized[sel]));
            sel += 1;
            row
        } else {
            (String::new(), String::new())
        };
        csv.push_str(&format!(
            "{i},{},{ord},{std},{}\n",
            u8::from(selected),
            csv_number(rep.all_obs[i])
        ));
    }
    write_output(out, &csv)
}

fn cmd_envelope(
    data: &DataArgs,
    model: ModelChoice,
    n_sim: usize,
    level: f64,
    seed: u64,
    out: Option<&Path>,
) -> CliResult<()> {
    provenance(
        "envelope",
        json!({"data": data.data, "model": model.label(), "n_sim": n_sim, "level": level, "seed": seed, "config": data.config()}),
    );
    let (dataset, _, _) = load(data, model)?;
    let fitted = fit_for(model, &dataset)?;
    let band = envelope(&fitted, &dataset, n_sim, level, seed)?;
    if band.n_failed > 0 {
        eprintln!(
            "warning: {} of {n_sim} envelope refits failed and were dropped",
            band.n_failed
        );
    }
    let rep = score_residuals(&fitted, &dataset)?;
    let mut order: Vec<usize> = (0..dataset.n()).collect();
    order.sort_by(|&a, &b| rep.all_obs[a].partial_cmp(&rep.all_obs[b]).expect("finite"));
    let mut csv = String::from("index,u,theoretical_quantile,residual,lower,upper\n");
    for (rank, &i) in order.iter().enumerate() {
        csv.push_str(&format!(
            "{i},{},{},{},{},{}\n",
            u8::from(dataset.u()[i]),
            csv_number(band.sorted_theoretical[rank]),
            csv_number(rep.all_obs[i]),
            csv_number(band.lower[rank]),
            csv_number(band.upper[rank]),
        ));
    }
    write_output(out, &csv)
}

fn cmd_cook(
    data: &DataArgs,
    model: ModelChoice,
    subsample: Option<usize>,
    weight: WeightChoice,
    seed: u64,
    out: Option<&Path>,
) -> CliResult<()> {
    provenance(
        "cook",
        json!({"data": data.data, "model": model.label(), "subsample": subsample, "weight": format!("{weight:?}"), "seed": seed, "config": data.config()}),
    );
    let (dataset, _, _) = load(data, model)?;
    let fitted = fit_for(model, &dataset)?;
    let subset = subsample.map(|k| pick_subsample(dataset.n(), k, seed));
    let gcd_weight = match weight {
        WeightChoice::Info => GcdWeight::ObservedInformation,
        WeightChoice::Cov => GcdWeight::Covariance,
    };
    let report = cook_distance_with(&fitted, &dataset, gcd_weight, subset.as_deref())?;
    eprintln!(
        "threshold 2*dim/n = {}, {} flagged, {} failed refits",
        report.threshold,
        report.flagged.len(),
        report.n_failed
    );
    let mut csv = String::from("index,u,gcd,flagged\n");
    for i in 0..dataset.n() {
        let flagged = report.gcd[i].is_finite() && report.gcd[i] > report.threshold;
        csv.push_str(&format!(
            "{i},{},{},{}\n",
            u8::from(dataset.u()[i]),
            csv_number(report.gcd[i]),
            u8::from(flagged)
        ));
    }
    write_output(out, &csv)
}

// Deterministic distinct subsample: Fisher-Yates driven by the split-seed
// stream.
fn pick_subsample(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (split_seed(seed, i as u64) % (i as u64 + 1)) as usize;
        idx.swap(i, j);
    }
    idx.truncate(k.min(n));
    idx.sort_unstable();
    idx
}

fn cmd_simulate(
    scenario_id: u8,
    n: usize,
    seed: u64,
    null: bool,
    out: Option<&Path>,
) -> CliResult<()> {
    provenance(
        "simulate",
        json!({"scenario": scenario_id, "n": n, "seed": seed, "null": null}),
    );
    let spec = if null {
        Scenario::new_null(scenario_id, n)?
    } else {
        Scenario::new(scenario_id, n)?
    };
    eprintln!(
        "scenario {scenario_id}: target censoring {:.3}, exclusion restriction {}",
        spec.target_censoring, spec.exclusion_restriction
    );
    let data = scenario(&spec, seed)?;
    let mut csv = String::from(if spec.exclusion_restriction {
        "y,u,x1,x2,x3\n"
    } else {
        "y,u,x1,x2\n"
    });
    for i in 0..data.n() {
        let y = if data.u()[i] {
            format!("{}", data.y()[i])
        } else {
            String::new()
        };
        let x1 = data.x()[(i, 1)];
        let x2 = data.x()[(i, 2)];
        if spec.exclusion_restriction {
            let x3 = data.w()[(i, 3)];
            csv.push_str(&format!("{y},{},{x1},{x2},{x3}\n", u8::from(data.u()[i])));
        } else {
            csv.push_str(&format!("{y},{},{x1},{x2}\n", u8::from(data.u()[i])));
        }
    }
    write_output(out, &csv)
}

#[allow(clippy::too_many_arguments)]
fn cmd_mc(
    scenario_id: u8,
    n: usize,
    reps: usize,
    seed: u64,
    model: ModelChoice,
    null: bool,
    tests: bool,
    levels: &str,
    out: Option<&Path>,
) -> CliResult<()> {
    provenance(
        "mc",
        json!({"scenario": scenario_id, "n": n, "reps": reps, "seed": seed, "model": model.label(), "null": null, "tests": tests, "levels": levels}),
    );
    let spec = if null {
        Scenario::new_null(scenario_id, n)?
    } else {
        Scenario::new(scenario_id, n)?
    };
    let mut summary = monte_carlo(&spec, reps, seed, model.kind())?;
    if tests {
        let parsed: Result<Vec<f64>, _> = levels
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse::<f64>)
            .collect();
        let parsed = parsed.map_err(|e| CliError::Usage(format!("bad --levels: {e}")))?;
        let sp = size_power(&spec, reps, seed, &parsed, model.kind())?;
        summary.tests = sp.tests;
        summary.n_failed = summary.n_failed.max(sp.n_failed);
    }
    eprintln!("{} replicates, {} failed", summary.n_reps, summary.n_failed);
    match out {
        Some(prefix) => {
            let base = prefix.to_string_lossy();
            std::fs::write(format!("{base}.csv"), summary.params_csv())?;
            std::fs::write(format!("{base}.json"), format!("{}\n", summary.to_json()))?;
            if tests {
                std::fs::write(format!("{base}_tests.csv"), summary.tests_csv())?;
            }
            Ok(())
        }
        None => {
            let mut content = summary.params_csv();
            if tests {
                content.push_str(&summary.tests_csv());
            }
            write_output(None, &content)
        }
    }
}
