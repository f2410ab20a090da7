mod args;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use robospline::cv::{cross_validate, CvOptions};
use robospline::design::{load_combined, load_dataset, load_predictors};
use robospline::simulate::{run_bench, run_monte_carlo, write_bench_csv, SimulationConfig};
use robospline::{fit_model, FittedModel, FunctionalDataset};
use serde_json::json;

use args::{BenchArgs, Cli, Command, CvArgs, DataArgs, FitArgs, Format, PredictArgs, SimulateArgs};

const COEF_POINTS: usize = 200;

#[derive(Debug)]
enum CliError {
    Core(robospline::Error),
    Usage(String),
}

impl From<robospline::Error> for CliError {
    fn from(e: robospline::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn report(&self) -> serde_json::Value {
        let (kind, message) = match self {
            CliError::Core(e) => (e.kind(), e.to_string()),
            CliError::Usage(m) => ("usage", m.clone()),
        };
        json!({ "error": { "kind": kind, "message": message } })
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Cv(a) => cmd_cv(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Bench(a) => cmd_bench(&a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.report());
            match e {
                CliError::Usage(_) => ExitCode::from(2),
                CliError::Core(_) => ExitCode::FAILURE,
            }
        }
    }
}

fn same_file(a: &Path, b: &Path) -> bool {
    if a == b {
        return true;
    }
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

fn check_distinct(inputs: &[&PathBuf], outputs: &[&PathBuf]) -> Result<()> {
    for (i, o) in outputs.iter().enumerate() {
        if let Some(clash) = inputs.iter().find(|p| same_file(p, o)) {
            return Err(CliError::Usage(format!(
                "output {} would overwrite input {}",
                o.display(),
                clash.display()
            )));
        }
        if outputs[..i].iter().any(|p| same_file(p, o)) {
            return Err(CliError::Usage(format!("output {} is given twice", o.display())));
        }
    }
    Ok(())
}

fn load(data: &DataArgs) -> Result<FunctionalDataset> {
    match (&data.data, &data.predictors, &data.responses) {
        (Some(path), None, None) => Ok(load_combined(path)?),
        (None, Some(x), Some(y)) => Ok(load_dataset(x, y)?),
        _ => Err(CliError::Usage(
            "give either --data or both --predictors and --responses".into(),
        )),
    }
}

/// Write to `path`, or standard output when absent.
fn emit(path: Option<&PathBuf>, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            write(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            write(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn write_json(w: &mut dyn Write, body: &str) -> Result<()> {
    w.write_all(body.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}

fn default_coef_path(model: &Path) -> PathBuf {
    let stem = model.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    model.with_file_name(format!("{stem}.beta.csv"))
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let coef = a.coef.clone().unwrap_or_else(|| default_coef_path(&a.output));
    check_distinct(&a.data.paths(), &[&a.output, &coef])?;
    let options = a.estimator.options(a.estimator.loss, a.seed).map_err(CliError::Usage)?;
    let data = load(&a.data)?;
    let model = fit_model(&data, &options)?;
    let beta = model.coefficient_function(COEF_POINTS)?;

    model.save(&a.output)?;
    emit(Some(&coef), |w| {
        let mut csv = csv::Writer::from_writer(w);
        let io = |e: csv::Error| CliError::Core(robospline::Error::Io(e.to_string()));
        csv.write_record(["t", "beta"]).map_err(io)?;
        for (t, b) in &beta {
            csv.write_record([t.to_string(), b.to_string()]).map_err(io)?;
        }
        csv.flush()?;
        Ok(())
    })?;
    println!(
        "{}",
        json!({
            "model": a.output,
            "coefficients": coef,
            "lambda": model.lambda,
            "edf": model.edf,
            "sigma": model.sigma.sigma,
            "converged": model.convergence.converged,
            "flagged": model.flagged.len(),
        })
    );
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    if let Some(o) = &a.output {
        check_distinct(&[&a.model, &a.predictors], &[o])?;
    }
    let model = FittedModel::load(&a.model)?;
    let curves = load_predictors(&a.predictors)?;
    let yhat = model.predict(&curves)?;
    emit(a.output.as_ref(), |w| match a.format {
        Format::Json => write_json(w, &serde_json::to_string_pretty(&json!({ "predictions": yhat })).unwrap()),
        Format::Csv => {
            writeln!(w, "y_hat")?;
            for v in &yhat {
                writeln!(w, "{v}")?;
            }
            Ok(())
        }
    })
}

fn cmd_cv(a: &CvArgs) -> Result<()> {
    if let Some(o) = &a.output {
        check_distinct(&a.data.paths(), &[o])?;
    }
    let options = a.estimator.options(a.estimator.loss, a.seed).map_err(CliError::Usage)?;
    let cv = CvOptions {
        folds: a.folds,
        trim: a.trim,
        seed: a.seed,
    };
    let data = load(&a.data)?;
    let report = cross_validate(&data, &options, &cv)?;
    emit(a.output.as_ref(), |w| match a.format {
        Format::Json => write_json(w, &report.to_json()?),
        Format::Csv => Ok(report.write_csv(w)?),
    })?;
    if a.output.is_some() {
        println!("{}", json!({ "rmspe": report.rmspe, "rmspe_trimmed": report.rmspe_trimmed, "trim": report.trim }));
    }
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let s = &a.scenario;
    let config = SimulationConfig {
        process: a.process,
        phi_variant: s.phi_variant,
        beta: a.beta.clone(),
        error: a.error,
        n: s.n,
        grid_size: s.grid_size,
        replications: s.replications,
        seed: s.seed,
        estimator: a.estimator.options(a.estimator.loss, 0).map_err(CliError::Usage)?,
        ..SimulationConfig::default()
    };
    let report = run_monte_carlo(&config)?;
    emit(a.output.as_ref(), |w| match a.format {
        Format::Json => write_json(w, &report.to_json()?),
        Format::Csv => Ok(report.write_csv(w)?),
    })
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let s = &a.scenario;
    let base = SimulationConfig {
        phi_variant: s.phi_variant,
        n: s.n,
        grid_size: s.grid_size,
        replications: s.replications,
        seed: s.seed,
        ..SimulationConfig::default()
    };
    let estimators: Vec<_> = a
        .losses
        .iter()
        .map(|&family| {
            let mut o = robospline::EstimatorOptions::with_loss(robospline::RobustLoss::with_default_tuning(family));
            o.order = a.estimator.p;
            o.penalty_order = a.estimator.q;
            o.basis_dim = a.estimator.basis_dim;
            o
        })
        .collect();
    let rows = run_bench(&base, &a.processes, &a.betas, &a.errors, &estimators)?;
    emit(a.output.as_ref(), |w| match a.format {
        Format::Json => write_json(w, &serde_json::to_string_pretty(&rows).unwrap()),
        Format::Csv => Ok(write_bench_csv(w, &rows)?),
    })
}
