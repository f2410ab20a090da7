//! Monte Carlo machinery: random predictor curves, coefficient functions,
//! error laws and the replication driver.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::distr::Open01;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, StudentT, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{gamma_n_seminorm_sq, FunctionalDataset, PredictorCurves};
use crate::error::{Error, Result};
use crate::model::{fit_model, EstimatorOptions};
use crate::quadrature::linspace01;
use crate::select::Criterion;

/// More than this fraction of failed replications aborts a run.
pub const MAX_FAILURE_RATE: f64 = 0.05;

macro_rules! string_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl $name {
            pub fn name(&self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!(
                        "unknown {} '{}' (expected one of: {})",
                        stringify!($name),
                        other,
                        [$($text),+].join(", ")
                    )),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Process {
    /// `γ_j = √2/((j−½)π)`, `Z_j ~ N(0,1)`, `φ_j(t) = sin((j−½)πt)`.
    WellSpaced,
    /// Eigenvalues that differ little within blocks of five, `Z_j ~ U[−√3, √3]`.
    CloselySpaced,
}

string_enum!(Process { WellSpaced => "well_spaced", CloselySpaced => "closely_spaced" });

/// Basis functions of the closely-spaced process for `j ≥ 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiVariant {
    /// `φ_j(t) = √2 cos(2πt)` for every `j ≥ 2`.
    #[default]
    Verbatim,
    /// `φ_j(t) = √2 cos(jπt)`.
    FrequencyJ,
}

string_enum!(PhiVariant { Verbatim => "verbatim", FrequencyJ => "frequency_j" });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaId {
    B1,
    B2,
    B3,
    B4,
    /// Samples on an equispaced grid of `[0, 1]`, linearly interpolated.
    Custom(Vec<f64>),
}

impl BetaId {
    pub fn name(&self) -> &'static str {
        match self {
            BetaId::B1 => "b1",
            BetaId::B2 => "b2",
            BetaId::B3 => "b3",
            BetaId::B4 => "b4",
            BetaId::Custom(_) => "custom",
        }
    }
}

impl FromStr for BetaId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "b1" => Ok(BetaId::B1),
            "b2" => Ok(BetaId::B2),
            "b3" => Ok(BetaId::B3),
            "b4" => Ok(BetaId::B4),
            other => Err(format!("unknown beta '{other}' (expected b1, b2, b3 or b4)")),
        }
    }
}

impl fmt::Display for BetaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorLaw {
    Gaussian,
    T3,
    /// `0.9 N(0,1) + 0.1 N(10,1)`.
    MixGaussian,
    /// `N(0,1) / U(0,1)`.
    Slash,
}

string_enum!(ErrorLaw {
    Gaussian => "gaussian",
    T3 => "t3",
    MixGaussian => "mix_gaussian",
    Slash => "slash",
});

/// Gaussian density with mean `mu` and standard deviation `s`.
fn normal_pdf(x: f64, mu: f64, s: f64) -> f64 {
    let z = (x - mu) / s;
    (-0.5 * z * z).exp() / (s * (2.0 * PI).sqrt())
}

pub fn beta_eval(beta: &BetaId, x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::OutOfDomain(x));
    }
    Ok(match beta {
        BetaId::B1 => (2.0 * PI * x).cos(),
        BetaId::B2 => {
            -normal_pdf(x, 0.2, 0.03) + 3.0 * normal_pdf(x, 0.5, 0.4) + normal_pdf(x, 0.75, 0.05)
        }
        BetaId::B3 => 1.0 / (1.0 + (-20.0 * (x - 0.5)).exp()),
        BetaId::B4 => 1.0 / (0.1 + x) + 8.0 * (-400.0 * (x - 0.5).powi(2)).exp(),
        BetaId::Custom(samples) => {
            if samples.len() < 2 {
                return Err(Error::Config("custom beta needs at least 2 samples".into()));
            }
            let h = (samples.len() - 1) as f64;
            let pos = x * h;
            let i = (pos.floor() as usize).min(samples.len() - 2);
            let frac = pos - i as f64;
            samples[i] * (1.0 - frac) + samples[i + 1] * frac
        }
    })
}

pub fn beta_on_grid(beta: &BetaId, grid: &[f64]) -> Result<Vec<f64>> {
    grid.iter().map(|&t| beta_eval(beta, t)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub process: Process,
    pub phi_variant: PhiVariant,
    pub beta: BetaId,
    pub error: ErrorLaw,
    pub n: usize,
    pub grid_size: usize,
    /// Series truncation.
    pub n_terms: usize,
    pub replications: usize,
    pub seed: u64,
    pub estimator: EstimatorOptions,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            process: Process::WellSpaced,
            phi_variant: PhiVariant::Verbatim,
            beta: BetaId::B1,
            error: ErrorLaw::Gaussian,
            n: 100,
            grid_size: 100,
            n_terms: 50,
            replications: 200,
            seed: 0,
            estimator: EstimatorOptions::default(),
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::Config(format!("n must be at least 10, got {}", self.n)));
        }
        if self.grid_size < 20 {
            return Err(Error::Config(format!("grid size must be at least 20, got {}", self.grid_size)));
        }
        if self.replications == 0 {
            return Err(Error::Config("at least one replication is required".into()));
        }
        if self.n_terms == 0 {
            return Err(Error::Config("series needs at least one term".into()));
        }
        if let BetaId::Custom(s) = &self.beta {
            if s.len() < 2 || s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("custom beta needs at least 2 finite samples".into()));
            }
        }
        self.estimator.validate()
    }

    pub fn grid(&self) -> Vec<f64> {
        linspace01(self.grid_size)
    }

    /// Serializable description of the scenario.
    pub fn scenario(&self) -> Scenario {
        Scenario {
            process: self.process,
            phi_variant: self.phi_variant,
            beta: self.beta.name().to_string(),
            error: self.error,
            n: self.n,
            grid_size: self.grid_size,
            n_terms: self.n_terms,
            replications: self.replications,
            seed: self.seed,
            loss: self.estimator.loss.family.name().to_string(),
            tuning: self.estimator.loss.tuning,
            order: self.estimator.order,
            penalty_order: self.estimator.penalty_order,
            basis_dim: self.estimator.basis_dim,
            criterion: self.estimator.selection.criterion,
            lambda: self.estimator.lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub process: Process,
    pub phi_variant: PhiVariant,
    pub beta: String,
    pub error: ErrorLaw,
    pub n: usize,
    pub grid_size: usize,
    pub n_terms: usize,
    pub replications: usize,
    pub seed: u64,
    pub loss: String,
    pub tuning: f64,
    pub order: usize,
    pub penalty_order: usize,
    pub basis_dim: usize,
    pub criterion: Criterion,
    pub lambda: Option<f64>,
}

impl Scenario {
    pub fn label(&self) -> String {
        format!("{}/{}/{}", self.process, self.beta, self.error)
    }
}

/// `(γ_j, φ_j on the grid)` for `j = 1..=n_terms`.
fn series_terms(process: Process, phi: PhiVariant, n_terms: usize, grid: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let mut gamma = Vec::with_capacity(n_terms);
    let mut basis = DMatrix::zeros(n_terms, grid.len());
    for j in 1..=n_terms {
        let jf = j as f64;
        let (g, f): (f64, Box<dyn Fn(f64) -> f64>) = match process {
            Process::WellSpaced => {
                let g = 2f64.sqrt() / ((jf - 0.5) * PI);
                (g, Box::new(move |t: f64| ((jf - 0.5) * PI * t).sin()))
            }
            Process::CloselySpaced => {
                let sign = if j % 2 == 0 { -1.0 } else { 1.0 };
                let g = match j {
                    1 => 1.0,
                    2..=4 => 0.2 * sign * (1.0 - 0.0001 * jf),
                    _ => {
                        let block = (5 * (j / 5)) as f64;
                        0.2 * sign * (block.powf(-0.75) - 0.0001 * (j % 5) as f64)
                    }
                };
                let f: Box<dyn Fn(f64) -> f64> = match (j, phi) {
                    (1, _) => Box::new(|_| 1.0),
                    (_, PhiVariant::Verbatim) => Box::new(|t: f64| 2f64.sqrt() * (2.0 * PI * t).cos()),
                    (_, PhiVariant::FrequencyJ) => Box::new(move |t: f64| 2f64.sqrt() * (jf * PI * t).cos()),
                };
                (g, f)
            }
        };
        gamma.push(g);
        for (k, &t) in grid.iter().enumerate() {
            basis[(j - 1, k)] = f(t);
        }
    }
    (gamma, basis)
}

/// Scores `Z_j` for one process.
fn draw_scores<R: Rng + ?Sized>(process: Process, rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    match process {
        Process::WellSpaced => DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal)),
        Process::CloselySpaced => {
            let r = 3f64.sqrt();
            let u = Uniform::new_inclusive(-r, r).expect("valid bounds");
            DMatrix::from_fn(rows, cols, |_, _| rng.sample(u))
        }
    }
}

/// `X_i(t) = Σ_j γ_j Z_ij φ_j(t)` on the configured grid.
pub fn gen_curves<R: Rng + ?Sized>(config: &SimulationConfig, rng: &mut R) -> Result<PredictorCurves> {
    let grid = config.grid();
    let (gamma, phi) = series_terms(config.process, config.phi_variant, config.n_terms, &grid);
    // row-major draw order: all terms of curve 1, then curve 2, ...
    let mut scores = draw_scores(config.process, config.n_terms, config.n, rng).transpose();
    for (j, g) in gamma.iter().enumerate() {
        scores.column_mut(j).scale_mut(*g);
    }
    PredictorCurves::new(grid, scores * phi)
}

pub fn gen_errors<R: Rng + ?Sized>(law: ErrorLaw, n: usize, rng: &mut R) -> Vec<f64> {
    match law {
        ErrorLaw::Gaussian => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        ErrorLaw::T3 => {
            let t = StudentT::new(3.0).expect("valid degrees of freedom");
            (0..n).map(|_| rng.sample(t)).collect()
        }
        ErrorLaw::MixGaussian => (0..n)
            .map(|_| {
                let contaminated = rng.random::<f64>() < 0.1;
                let z: f64 = rng.sample(StandardNormal);
                if contaminated {
                    10.0 + z
                } else {
                    z
                }
            })
            .collect(),
        ErrorLaw::Slash => (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                let u: f64 = rng.sample(Open01);
                z / u
            })
            .collect(),
    }
}

/// `Y_i = ∫ X_i β + ε_i` with `α = 0` and the trapezoid rule on the grid.
pub fn gen_responses<R: Rng + ?Sized>(
    predictors: PredictorCurves,
    beta: &BetaId,
    law: ErrorLaw,
    rng: &mut R,
) -> Result<FunctionalDataset> {
    let b = beta_on_grid(beta, predictors.grid())?;
    let signal = predictors.integrate_against(&b)?;
    let eps = gen_errors(law, predictors.len(), rng);
    let y = signal.iter().zip(eps).map(|(s, e)| s + e).collect();
    FunctionalDataset::new(predictors, y)
}

/// Generator for replication `index`: stream `index` of the seeded ChaCha8.
pub fn replication_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Data for one replication plus the seed for the estimator's subsampling.
pub fn replication_data(config: &SimulationConfig, index: usize) -> Result<(FunctionalDataset, u64)> {
    let mut rng = replication_rng(config.seed, index);
    let curves = gen_curves(config, &mut rng)?;
    let data = gen_responses(curves, &config.beta, config.error, &mut rng)?;
    Ok((data, rng.next_u64()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub mse: f64,
    pub lambda: f64,
    pub edf: f64,
    pub sigma: f64,
    pub converged: bool,
    pub at_boundary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub replication: usize,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCReport {
    pub scenario: Scenario,
    pub completed: usize,
    pub failed: usize,
    pub mean_mse: f64,
    pub median_mse: f64,
    pub records: Vec<ReplicationRecord>,
    pub failures: Vec<FailureRecord>,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

impl MCReport {
    pub fn mses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mse).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    /// One row per completed replication.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fit one replication and measure `‖β̂ − β‖²` in the empirical `Γ_n` semi-norm.
pub fn run_replication(config: &SimulationConfig, index: usize) -> Result<ReplicationRecord> {
    let (data, fit_seed) = replication_data(config, index)?;
    let mut options = config.estimator.clone();
    options.initial.seed = fit_seed;
    let model = fit_model(&data, &options)?;
    let grid = data.grid();
    let truth = beta_on_grid(&config.beta, grid)?;
    let est = model.beta_on(grid)?;
    let diff: Vec<f64> = est.iter().zip(&truth).map(|(a, b)| a - b).collect();
    let mse = gamma_n_seminorm_sq(data.predictors(), &diff)?;
    if !mse.is_finite() {
        return Err(Error::Divergence(format!("non-finite MSE in replication {index}")));
    }
    Ok(ReplicationRecord {
        replication: index,
        mse,
        lambda: model.lambda,
        edf: model.edf,
        sigma: model.sigma.sigma,
        converged: model.convergence.converged,
        at_boundary: model.selection.as_ref().is_some_and(|s| s.at_boundary),
    })
}

/// Run every replication (in parallel; results do not depend on scheduling).
pub fn run_monte_carlo(config: &SimulationConfig) -> Result<MCReport> {
    config.validate()?;
    let outcomes: Vec<Result<ReplicationRecord>> = (0..config.replications)
        .into_par_iter()
        .map(|i| run_replication(config, i))
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => records.push(r),
            Err(e) => failures.push(FailureRecord {
                replication: i,
                kind: e.kind().to_string(),
                message: e.to_string(),
            }),
        }
    }
    let total = config.replications;
    if failures.len() as f64 > MAX_FAILURE_RATE * total as f64 {
        let first = &failures[0];
        return Err(Error::Harness {
            failed: failures.len(),
            total,
            first: format!("replication {}: {}", first.replication, first.message),
        });
    }
    let mses: Vec<f64> = records.iter().map(|r| r.mse).collect();
    Ok(MCReport {
        scenario: config.scenario(),
        completed: records.len(),
        failed: failures.len(),
        mean_mse: mean(&mses),
        median_mse: median(&mses),
        records,
        failures,
    })
}

/// One row of a scenario-by-loss summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scenario: String,
    pub loss: String,
    pub mean: f64,
    pub median: f64,
    pub completed: usize,
    pub failed: usize,
}

/// Run every `(process, beta, error)` combination for each estimator.
pub fn run_bench(
    base: &SimulationConfig,
    processes: &[Process],
    betas: &[BetaId],
    errors: &[ErrorLaw],
    estimators: &[EstimatorOptions],
) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &process in processes {
        for beta in betas {
            for &error in errors {
                for est in estimators {
                    let config = SimulationConfig {
                        process,
                        beta: beta.clone(),
                        error,
                        estimator: est.clone(),
                        ..base.clone()
                    };
                    let report = run_monte_carlo(&config)?;
                    rows.push(BenchRow {
                        scenario: report.scenario.label(),
                        loss: report.scenario.loss.clone(),
                        mean: report.mean_mse,
                        median: report.median_mse,
                        completed: report.completed,
                        failed: report.failed,
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_bench_csv<W: std::io::Write>(writer: W, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{gauss_legendre, trapezoid};
    use crate::robust::loss::RobustLoss;

    fn small_config() -> SimulationConfig {
        SimulationConfig {
            n: 40,
            replications: 3,
            seed: 17,
            estimator: EstimatorOptions {
                basis_dim: 12,
                ..EstimatorOptions::default()
            },
            ..SimulationConfig::default()
        }
    }

    #[test]
    fn beta_values() {
        assert!((beta_eval(&BetaId::B1, 0.5).unwrap() + 1.0).abs() < 1e-15);
        assert!((beta_eval(&BetaId::B3, 0.5).unwrap() - 0.5).abs() < 1e-15);
        assert!((beta_eval(&BetaId::B4, 0.5).unwrap() - (1.0 / 0.6 + 8.0)).abs() < 1e-12);
        let b2 = beta_eval(&BetaId::B2, 0.5).unwrap();
        let oracle = -(-0.5f64 * 100.0).exp() / (0.03 * (2.0 * PI).sqrt())
            + 3.0 / (0.4 * (2.0 * PI).sqrt())
            + (-0.5f64 * 25.0).exp() / (0.05 * (2.0 * PI).sqrt());
        assert!((b2 - oracle).abs() < 1e-12);
        assert!(beta_eval(&BetaId::B1, 1.5).is_err());
        let custom = BetaId::Custom(vec![0.0, 2.0, 4.0]);
        assert!((beta_eval(&custom, 0.25).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(beta_eval(&custom, 1.0).unwrap(), 4.0);
    }

    #[test]
    fn closely_spaced_eigenvalues() {
        let (g, _) = series_terms(Process::CloselySpaced, PhiVariant::FrequencyJ, 12, &[0.0, 1.0]);
        assert_eq!(g[0], 1.0);
        assert!((g[1] + 0.2 * (1.0 - 0.0002)).abs() < 1e-15);
        assert!((g[3] + 0.2 * (1.0 - 0.0004)).abs() < 1e-15);
        // j = 5: block 5, j mod 5 = 0
        assert!((g[4] - 0.2 * 5f64.powf(-0.75)).abs() < 1e-15);
        // j = 7: block 5, j mod 5 = 2, odd j -> positive
        assert!((g[6] - 0.2 * (5f64.powf(-0.75) - 0.0002)).abs() < 1e-15);
        // j = 10: block 10, even j -> negative
        assert!((g[9] + 0.2 * 10f64.powf(-0.75)).abs() < 1e-15);
    }

    #[test]
    fn well_spaced_variance_matches_series() {
        let config = SimulationConfig {
            n: 5000,
            grid_size: 21,
            ..SimulationConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let curves = gen_curves(&config, &mut rng).unwrap();
        let mid = 10;
        assert!((config.grid()[mid] - 0.5).abs() < 1e-15);
        let col = curves.values().column(mid);
        let m = col.mean();
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (col.len() - 1) as f64;
        let oracle: f64 = (1..=50)
            .map(|j| {
                let a = (j as f64 - 0.5) * PI;
                (2f64.sqrt() / a).powi(2) * (a * 0.5).sin().powi(2)
            })
            .sum();
        assert!((var / oracle - 1.0).abs() < 0.05, "var {var} oracle {oracle}");
    }

    #[test]
    fn uniform_score_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = draw_scores(Process::CloselySpaced, 1, 100_000, &mut rng);
        let m = z.mean();
        let v = z.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (z.len() - 1) as f64;
        assert!(m.abs() < 0.02);
        assert!((v - 1.0).abs() < 0.02);
    }

    #[test]
    fn error_law_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = gen_errors(ErrorLaw::Gaussian, 1_000_000, &mut rng);
        assert!(mean(&g).abs() < 0.005);
        let mix = gen_errors(ErrorLaw::MixGaussian, 1_000_000, &mut rng);
        assert!((mean(&mix) - 1.0).abs() < 0.02);
        let slash = gen_errors(ErrorLaw::Slash, 1_000_000, &mut rng);
        assert!(median(&slash).abs() < 0.01);
        assert!(slash.iter().all(|v| v.is_finite()));
        let t = gen_errors(ErrorLaw::T3, 200_000, &mut rng);
        assert!(median(&t).abs() < 0.01);
    }

    #[test]
    fn zero_curves_give_pure_noise() {
        let curves = PredictorCurves::new(linspace01(30), DMatrix::zeros(5, 30)).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(4);
        let mut b = a.clone();
        let data = gen_responses(curves, &BetaId::B2, ErrorLaw::Gaussian, &mut a).unwrap();
        let eps = gen_errors(ErrorLaw::Gaussian, 5, &mut b);
        assert_eq!(data.responses().as_slice(), eps.as_slice());
    }

    #[test]
    fn constant_curves_integrate_cosine() {
        let grid = linspace01(100);
        let curves = PredictorCurves::new(grid.clone(), DMatrix::from_element(2, 100, 1.0)).unwrap();
        let y = curves.integrate_against(&beta_on_grid(&BetaId::B1, &grid).unwrap()).unwrap();
        assert!(y.amax() < 1e-12);
    }

    #[test]
    fn linear_curve_against_sigmoid() {
        let grid = linspace01(100);
        let t = DMatrix::from_row_slice(1, 100, &grid);
        let curves = PredictorCurves::new(grid.clone(), t).unwrap();
        let y = curves.integrate_against(&beta_on_grid(&BetaId::B3, &grid).unwrap()).unwrap();
        // composite Gauss-Legendre oracle
        let (x, w) = gauss_legendre(20);
        let mut oracle = 0.0;
        for k in 0..50 {
            let (a, b) = (k as f64 / 50.0, (k + 1) as f64 / 50.0);
            for (xi, wi) in x.iter().zip(&w) {
                let s = 0.5 * (a + b) + 0.5 * (b - a) * xi;
                oracle += 0.5 * (b - a) * wi * s / (1.0 + (-20.0 * (s - 0.5)).exp());
            }
        }
        assert!((y[0] - oracle).abs() < 1e-4, "{} vs {oracle}", y[0]);
        let direct = trapezoid(&grid, &grid.iter().map(|s| s / (1.0 + (-20.0 * (s - 0.5)).exp())).collect::<Vec<_>>());
        assert!((y[0] - direct).abs() < 1e-14);
    }

    #[test]
    fn forced_zero_scores_give_zero_curves() {
        let config = SimulationConfig::default();
        let grid = config.grid();
        let (gamma, phi) = series_terms(Process::WellSpaced, PhiVariant::Verbatim, 50, &grid);
        let scores = DMatrix::<f64>::zeros(3, 50);
        let mut s = scores.clone();
        for (j, g) in gamma.iter().enumerate() {
            s.column_mut(j).scale_mut(*g);
        }
        assert_eq!((s * phi).amax(), 0.0);
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let config = small_config();
        let a = run_monte_carlo(&config).unwrap();
        let b = run_monte_carlo(&config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.completed, 3);
        assert_eq!(a.mean_mse, mean(&a.mses()));
        assert_eq!(a.median_mse, median(&a.mses()));
    }

    #[test]
    fn single_replication_matches_direct_fit() {
        let config = SimulationConfig {
            replications: 1,
            ..small_config()
        };
        let report = run_monte_carlo(&config).unwrap();
        let direct = run_replication(&config, 0).unwrap();
        assert_eq!(report.records, vec![direct.clone()]);
        assert_eq!(report.mean_mse, direct.mse);
        assert_eq!(report.median_mse, direct.mse);
    }

    #[test]
    fn verbatim_closely_spaced_is_rank_deficient() {
        let config = SimulationConfig {
            process: Process::CloselySpaced,
            ..small_config()
        };
        let err = run_monte_carlo(&config).unwrap_err();
        assert!(matches!(err, Error::Harness { failed: 3, total: 3, .. }), "{err:?}");
        let fixed = SimulationConfig {
            phi_variant: PhiVariant::FrequencyJ,
            ..config
        };
        assert_eq!(run_monte_carlo(&fixed).unwrap().completed, 3);
    }

    #[test]
    fn config_validation() {
        let bad = SimulationConfig {
            n: 5,
            ..SimulationConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = SimulationConfig {
            grid_size: 10,
            ..SimulationConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!("b5".parse::<BetaId>().is_err());
        assert_eq!("mix_gaussian".parse::<ErrorLaw>().unwrap(), ErrorLaw::MixGaussian);
        assert_eq!("frequency_j".parse::<PhiVariant>().unwrap(), PhiVariant::FrequencyJ);
    }

    #[test]
    fn report_csv_has_one_row_per_replication() {
        let config = SimulationConfig {
            replications: 2,
            estimator: EstimatorOptions {
                basis_dim: 10,
                ..EstimatorOptions::with_loss(RobustLoss::square())
            },
            ..small_config()
        };
        let report = run_monte_carlo(&config).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("replication,mse,lambda,edf,sigma,converged,at_boundary"));
    }
}
