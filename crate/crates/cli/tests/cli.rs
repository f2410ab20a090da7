use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robospline::design::{write_predictors, write_responses};
use robospline::quadrature::linspace01;
use robospline::simulate::{gen_curves, gen_errors, ErrorLaw, SimulationConfig};
use robospline::{BSplineBasis, FittedModel, PredictorCurves};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_robospline"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn curves(n: usize, grid_size: usize, seed: u64) -> PredictorCurves {
    let config = SimulationConfig {
        n,
        grid_size,
        ..SimulationConfig::default()
    };
    gen_curves(&config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// Spline coefficients of a smooth `β` in a cubic basis of dimension 12.
fn spline_truth() -> (BSplineBasis, Vec<f64>) {
    let basis = BSplineBasis::with_dimension(4, 12).unwrap();
    let coefs = (0..12).map(|j| (j as f64 * 0.5).sin() * 2.0).collect();
    (basis, coefs)
}

struct Files {
    dir: TempDir,
    x: PathBuf,
    y: PathBuf,
}

fn write_data(curves: &PredictorCurves, y: &[f64]) -> Files {
    let dir = TempDir::new().unwrap();
    let x = dir.path().join("x.csv");
    let yp = dir.path().join("y.csv");
    write_predictors(std::fs::File::create(&x).unwrap(), curves).unwrap();
    write_responses(std::fs::File::create(&yp).unwrap(), y).unwrap();
    Files { dir, x, y: yp }
}

/// Curves with independent standard normal values at every grid point; the
/// spline regression they induce is well conditioned.
fn white_curves(n: usize, grid_size: usize, seed: u64) -> PredictorCurves {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = gen_errors(ErrorLaw::Gaussian, n * grid_size, &mut rng);
    PredictorCurves::new(
        linspace01(grid_size),
        nalgebra::DMatrix::from_row_slice(n, grid_size, &values),
    )
    .unwrap()
}

fn noiseless(n: usize, seed: u64) -> (PredictorCurves, Vec<f64>, BSplineBasis, Vec<f64>) {
    let c = white_curves(n, 100, seed);
    let (basis, coefs) = spline_truth();
    let x = c.inner_products(&basis).unwrap();
    let y: Vec<f64> = (0..n)
        .map(|i| 0.7 + (0..12).map(|j| x[(i, j)] * coefs[j]).sum::<f64>())
        .collect();
    (c, y, basis, coefs)
}

fn read_coef_csv(path: &Path) -> Vec<(f64, f64)> {
    let mut r = csv::Reader::from_path(path).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["t", "beta"]);
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            (rec[0].parse().unwrap(), rec[1].parse().unwrap())
        })
        .collect()
}

#[test]
fn fit_recovers_spline_coefficient_function() {
    let (c, y, basis, coefs) = noiseless(80, 1);
    let f = write_data(&c, &y);
    let model = f.dir.path().join("model.json");
    let out = run(&[
        "fit", "--predictors", p(&f.x), "--responses", p(&f.y), "--loss", "square",
        "--lambda", "0", "--basis-dim", "12", "-o", p(&model),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let beta = read_coef_csv(&f.dir.path().join("model.beta.csv"));
    assert_eq!(beta.len(), 200);
    assert_eq!(beta[0].0, 0.0);
    assert_eq!(beta[199].0, 1.0);
    let worst = beta
        .iter()
        .map(|(t, b)| (b - basis.eval_spline(&coefs, *t).unwrap()).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-4, "max |beta_hat - beta| = {worst}");

    let m = FittedModel::load(&model).unwrap();
    assert_eq!(m.format_version, 1);
    assert!((m.intercept - 0.7).abs() < 1e-4);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    for key in ["intercept", "coefficients", "basis", "penalty_order", "lambda", "sigma", "edf", "convergence"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn huber_fit_flags_shifted_responses() {
    let n = 100;
    let (c, mut y, _, _) = noiseless(n, 2);
    let noise = gen_errors(ErrorLaw::Gaussian, n, &mut ChaCha8Rng::seed_from_u64(3));
    for (v, e) in y.iter_mut().zip(noise) {
        *v += e;
    }
    let shifted: Vec<usize> = (0..n).step_by(10).collect();
    for &i in &shifted {
        y[i] += 10.0;
    }
    let f = write_data(&c, &y);
    let model = f.dir.path().join("m.json");
    let out = run(&["fit", "--predictors", p(&f.x), "--responses", p(&f.y), "-o", p(&model)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let m = FittedModel::load(&model).unwrap();
    let hits = shifted
        .iter()
        .filter(|&&i| m.standardized_residuals[i].abs() > 2.5)
        .count();
    assert!(hits * 10 >= shifted.len() * 9, "{hits}/{}", shifted.len());
    assert!(shifted.iter().all(|i| m.flagged.contains(i) == (m.standardized_residuals[*i].abs() > 2.5)));
}

#[test]
fn malformed_row_names_line() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("d.csv");
    std::fs::write(&data, "y,0,0.5,1\n1,0.1,0.2,0.3\n2,0.1,oops,0.3\n").unwrap();
    let out = run(&["fit", "--data", p(&data), "-o", p(&dir.path().join("m.json"))]);
    assert!(!out.status.success());
    let err = stderr(&out);
    let v: serde_json::Value = serde_json::from_str(err.trim()).expect("structured error");
    assert_eq!(v["error"]["kind"], "parse");
    assert!(v["error"]["message"].as_str().unwrap().contains("line 3"), "{err}");
    assert!(!dir.path().join("m.json").exists());
}

#[test]
fn predict_round_trips_fitted_values() {
    let (c, mut y, _, _) = noiseless(60, 4);
    let noise = gen_errors(ErrorLaw::Gaussian, 60, &mut ChaCha8Rng::seed_from_u64(5));
    for (v, e) in y.iter_mut().zip(noise) {
        *v += 0.3 * e;
    }
    let f = write_data(&c, &y);
    let model = f.dir.path().join("m.json");
    let preds = f.dir.path().join("pred.json");
    let out = run(&["fit", "--predictors", p(&f.x), "--responses", p(&f.y), "--center", "-o", p(&model)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = run(&["predict", "--model", p(&model), "--predictors", p(&f.x), "--format", "json", "-o", p(&preds)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&preds).unwrap()).unwrap();
    let m = FittedModel::load(&model).unwrap();
    let yhat = v["predictions"].as_array().unwrap();
    assert_eq!(yhat.len(), 60);
    for (a, b) in yhat.iter().zip(&m.fitted_values) {
        assert!((a.as_f64().unwrap() - b).abs() < 1e-10);
    }
}

#[test]
fn predict_constant_and_zero_curves() {
    let (c, y, _, _) = noiseless(60, 6);
    let f = write_data(&c, &y);
    let model = f.dir.path().join("m.json");
    let out = run(&["fit", "--predictors", p(&f.x), "--responses", p(&f.y), "--basis-dim", "12", "-o", p(&model)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let m = FittedModel::load(&model).unwrap();

    let grid = linspace01(100);
    let new = PredictorCurves::new(
        grid.clone(),
        nalgebra::DMatrix::from_fn(2, 100, |i, _| if i == 0 { 0.0 } else { 1.0 }),
    )
    .unwrap();
    let xp = f.dir.path().join("new.csv");
    write_predictors(std::fs::File::create(&xp).unwrap(), &new).unwrap();
    let out = run(&["predict", "--model", p(&model), "--predictors", p(&xp)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("y_hat"));
    let vals: Vec<f64> = lines.map(|l| l.parse().unwrap()).collect();
    assert_eq!(vals[0], m.intercept);
    // trapezoid rule applied to β̂ on the grid
    let beta = m.beta_on(&grid).unwrap();
    let h = grid[1] - grid[0];
    let trapezoid = h * (beta.iter().sum::<f64>() - 0.5 * (beta[0] + beta[99]));
    assert!((vals[1] - m.intercept - trapezoid).abs() < 1e-10);
    // exact ∫ B_j = (t_{j+p} − t_j) / p, up to the O(h²) quadrature error
    let k = m.basis.knots();
    let exact: f64 = m
        .coefficients
        .iter()
        .enumerate()
        .map(|(j, b)| b * (k[j + 4] - k[j]) / 4.0)
        .sum();
    let scale = m.coefficients.iter().map(|b| b.abs()).sum::<f64>().max(1.0);
    assert!((vals[1] - m.intercept - exact).abs() < h * h * scale, "{} vs {exact}", vals[1] - m.intercept);
}

#[test]
fn predict_rejects_other_grid() {
    let (c, y, _, _) = noiseless(40, 7);
    let f = write_data(&c, &y);
    let model = f.dir.path().join("m.json");
    assert!(run(&["fit", "--predictors", p(&f.x), "--responses", p(&f.y), "--basis-dim", "12", "-o", p(&model)])
        .status
        .success());
    let other = curves(5, 50, 8);
    let xp = f.dir.path().join("other.csv");
    write_predictors(std::fs::File::create(&xp).unwrap(), &other).unwrap();
    let out = run(&["predict", "--model", p(&model), "--predictors", p(&xp)]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("grid_mismatch"));
}

#[test]
fn cv_noise_free_and_untrimmed() {
    let (c, y, _, _) = noiseless(60, 9);
    let f = write_data(&c, &y);
    let report = f.dir.path().join("cv.json");
    let out = run(&[
        "cv", "--predictors", p(&f.x), "--responses", p(&f.y), "--loss", "square", "--lambda", "0",
        "--basis-dim", "12", "--trim", "0", "--seed", "3", "-o", p(&report),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["rmspe"], v["rmspe_trimmed"]);
    assert!(v["rmspe"].as_f64().unwrap() < 1e-4, "{}", v["rmspe"]);
    assert_eq!(v["predictions"].as_array().unwrap().len(), 60);

    let csv_out = f.dir.path().join("cv.csv");
    let out = run(&[
        "cv", "--predictors", p(&f.x), "--responses", p(&f.y), "--loss", "square", "--lambda", "0",
        "--basis-dim", "12", "--format", "csv", "-o", p(&csv_out),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv_out).unwrap();
    assert_eq!(text.lines().next(), Some("index,fold,observed,predicted,error"));
    assert_eq!(text.lines().count(), 61);
}

#[test]
fn cv_rejects_bad_options() {
    let (c, y, _, _) = noiseless(20, 10);
    let f = write_data(&c, &y);
    let out = run(&["cv", "--predictors", p(&f.x), "--responses", p(&f.y), "--folds", "1"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("config"));
    let out = run(&["cv", "--predictors", p(&f.x), "--responses", p(&f.y), "--trim", "0.5"]);
    assert!(!out.status.success());
    let out = run(&["cv", "--predictors", p(&f.x), "--responses", p(&f.y), "--folds", "11"]);
    assert!(!out.status.success());
}

#[test]
fn simulate_single_replication_csv() {
    let dir = TempDir::new().unwrap();
    let out_path = dir.path().join("mc.csv");
    let out = run(&[
        "simulate", "--replications", "1", "--n", "60", "--basis-dim", "12", "--seed", "2", "--format", "csv",
        "-o", p(&out_path),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&out_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("replication,mse,lambda"));
}

#[test]
fn simulate_is_deterministic() {
    let args = ["simulate", "--replications", "3", "--n", "50", "--basis-dim", "12", "--seed", "11", "--error", "t3"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["completed"], 3);
    assert_eq!(v["scenario"]["error"], "t3");
}

#[test]
fn fit_output_is_byte_identical_across_runs() {
    let (c, y, _, _) = noiseless(50, 12);
    let f = write_data(&c, &y);
    let m1 = f.dir.path().join("a.json");
    let m2 = f.dir.path().join("b.json");
    for m in [&m1, &m2] {
        let out = run(&["fit", "--predictors", p(&f.x), "--responses", p(&f.y), "--basis-dim", "15", "--seed", "4", "-o", p(m)]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    assert_eq!(std::fs::read(&m1).unwrap(), std::fs::read(&m2).unwrap());
    assert_eq!(
        std::fs::read(f.dir.path().join("a.beta.csv")).unwrap(),
        std::fs::read(f.dir.path().join("b.beta.csv")).unwrap()
    );
}

#[test]
fn bench_orders_robust_losses() {
    let out = run(&[
        "bench", "--betas", "b1", "--errors", "gaussian,mix_gaussian", "--losses", "square,huber",
        "--replications", "20", "--n", "100", "--basis-dim", "20", "--seed", "5",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mut r = csv::Reader::from_reader(out.stdout.as_slice());
    let header = r.headers().unwrap().clone();
    assert_eq!(&header.iter().take(4).collect::<Vec<_>>(), &["scenario", "loss", "mean", "median"]);
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 4);
    let median = |scenario: &str, loss: &str| -> f64 {
        rows.iter()
            .find(|r| r[0].contains(scenario) && &r[1] == loss)
            .map(|r| r[3].parse().unwrap())
            .unwrap()
    };
    assert!(median("mix_gaussian", "huber") < median("mix_gaussian", "square"));
}

#[test]
fn unknown_beta_is_usage_error() {
    let out = run(&["simulate", "--beta", "b9"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("b9"));
}

#[test]
fn output_may_not_overwrite_input() {
    let (c, y, _, _) = noiseless(20, 13);
    let f = write_data(&c, &y);
    let before = std::fs::read(&f.x).unwrap();
    let out = run(&["fit", "--predictors", p(&f.x), "--responses", p(&f.y), "-o", p(&f.x)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("usage"));
    assert_eq!(std::fs::read(&f.x).unwrap(), before);
}

#[test]
fn missing_input_is_reported() {
    let dir = TempDir::new().unwrap();
    let out = run(&["fit", "--data", p(&dir.path().join("nope.csv")), "-o", p(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_str(stderr(&out).trim()).unwrap();
    assert_eq!(v["error"]["kind"], "io");
}
