//! K-fold cross-validated prediction error.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::FunctionalDataset;
use crate::error::{Error, Result};
use crate::model::{fit_model, EstimatorOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub folds: usize,
    /// Fraction of the largest squared errors dropped for the trimmed RMSPE.
    pub trim: f64,
    pub seed: u64,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            folds: 5,
            trim: 0.1,
            seed: 0,
        }
    }
}

impl CvOptions {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {}", self.folds)));
        }
        if !(0.0..0.5).contains(&self.trim) {
            return Err(Error::Config(format!("trim must lie in [0, 0.5), got {}", self.trim)));
        }
        if n / self.folds < 2 {
            return Err(Error::Config(format!(
                "{} observations give folds with fewer than 2 observations for {} folds",
                n, self.folds
            )));
        }
        Ok(())
    }
}

/// Fold label of every observation: a seeded shuffle cut into contiguous
/// blocks whose sizes differ by at most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut labels = vec![0; n];
    let (base, extra) = (n / folds, n % folds);
    let mut pos = 0;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        for &i in &order[pos..pos + size] {
            labels[i] = f;
        }
        pos += size;
    }
    labels
}

pub fn rmspe(errors: &[f64]) -> f64 {
    trimmed_rmspe(errors, 0.0)
}

/// RMSPE after dropping the `⌈trim · n⌉` largest squared errors.
pub fn trimmed_rmspe(errors: &[f64], trim: f64) -> f64 {
    let n = errors.len();
    let drop = (trim * n as f64).ceil() as usize;
    let mut keep = vec![true; n];
    if drop > 0 {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| (errors[b] * errors[b]).total_cmp(&(errors[a] * errors[a])));
        for &i in idx.iter().take(drop) {
            keep[i] = false;
        }
    }
    let kept = n - drop.min(n);
    let ss: f64 = errors
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(e, _)| e * e)
        .sum();
    (ss / kept as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPrediction {
    pub index: usize,
    pub fold: usize,
    pub observed: f64,
    pub predicted: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub trim: f64,
    pub rmspe: f64,
    pub rmspe_trimmed: f64,
    /// `λ` chosen on each training split.
    pub fold_lambdas: Vec<f64>,
    pub predictions: Vec<CvPrediction>,
}

impl CvReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for p in &self.predictions {
            w.serialize(p).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Refit (scale and `λ` included) on each training split and predict the
/// held-out fold.
pub fn cross_validate(
    data: &FunctionalDataset,
    estimator: &EstimatorOptions,
    options: &CvOptions,
) -> Result<CvReport> {
    let n = data.len();
    options.validate(n)?;
    let labels = fold_assignment(n, options.folds, options.seed);
    type FoldOutcome = Result<(f64, Vec<(usize, f64)>)>;
    let per_fold: Vec<FoldOutcome> = (0..options.folds)
        .into_par_iter()
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| labels[i] == f);
            let model = fit_model(&data.select_rows(&train), estimator)?;
            let pred = model.predict(&data.predictors().select_rows(&test))?;
            Ok((model.lambda, test.into_iter().zip(pred).collect()))
        })
        .collect();

    let mut predicted = vec![f64::NAN; n];
    let mut fold_lambdas = Vec::with_capacity(options.folds);
    for r in per_fold {
        let (lambda, preds) = r?;
        fold_lambdas.push(lambda);
        for (i, p) in preds {
            predicted[i] = p;
        }
    }
    let y = data.responses();
    let predictions: Vec<CvPrediction> = (0..n)
        .map(|i| CvPrediction {
            index: i,
            fold: labels[i],
            observed: y[i],
            predicted: predicted[i],
            error: y[i] - predicted[i],
        })
        .collect();
    let errors: Vec<f64> = predictions.iter().map(|p| p.error).collect();
    Ok(CvReport {
        folds: options.folds,
        trim: options.trim,
        rmspe: rmspe(&errors),
        rmspe_trimmed: trimmed_rmspe(&errors, options.trim),
        fold_lambdas,
        predictions,
    })
}
