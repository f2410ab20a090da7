//! End-to-end estimator: basis and design assembly, preliminary scale,
//! smoothing parameter selection and the final fit, plus the persisted model.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::basis::BSplineBasis;
use crate::design::{DesignMatrices, FunctionalDataset, PredictorCurves};
use crate::error::{Error, Result};
use crate::quadrature::linspace01;
use crate::robust::irls::{irls_fit, FitResult};
use crate::robust::loss::{LossFamily, RobustLoss};
use crate::robust::scale::{initial_scale, InitialScaleConfig, ScaleEstimate};
use crate::select::{select_lambda, Criterion, SelectionOptions};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Standardized residuals beyond this magnitude are flagged as outlying.
pub const OUTLIER_THRESHOLD: f64 = 2.5;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorOptions {
    pub loss: RobustLoss,
    /// Spline order `p` (4 is cubic).
    pub order: usize,
    /// Penalized derivative `q`.
    pub penalty_order: usize,
    /// `K + p`.
    pub basis_dim: usize,
    /// Skip selection and fit at this `λ`.
    pub lambda: Option<f64>,
    pub selection: SelectionOptions,
    pub initial: InitialScaleConfig,
    /// Subtract the pointwise mean curve before fitting.
    pub center: bool,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            loss: RobustLoss::huber(1.345),
            order: 4,
            penalty_order: 2,
            basis_dim: 40,
            lambda: None,
            selection: SelectionOptions::default(),
            initial: InitialScaleConfig::default(),
            center: false,
        }
    }
}

impl EstimatorOptions {
    pub fn with_loss(loss: RobustLoss) -> Self {
        let criterion = match loss.family {
            LossFamily::Square => Criterion::Gcv,
            _ => Criterion::Aicc,
        };
        Self {
            loss,
            selection: SelectionOptions {
                criterion,
                ..SelectionOptions::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::InvalidOrder(self.order));
        }
        if self.penalty_order >= self.order {
            return Err(Error::InvalidPenaltyOrder {
                q: self.penalty_order,
                order: self.order,
            });
        }
        if self.basis_dim < self.order {
            return Err(Error::Config(format!(
                "basis dimension {} is below the spline order {}",
                self.basis_dim, self.order
            )));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(Error::Config(format!("lambda must be finite and >= 0, got {l}")));
            }
        }
        if self.selection.criterion == Criterion::Gcv && self.loss.family != LossFamily::Square {
            return Err(Error::Config("GCV selection requires the square loss".into()));
        }
        Ok(())
    }
}

/// Summary of the automatic choice of `λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub criterion: Criterion,
    pub criterion_value: f64,
    pub at_boundary: bool,
    pub bounds: (f64, f64),
    pub trace_path: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
}

/// A fitted scalar-on-function regression model.
///
/// This is also the on-disk JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub format_version: u32,
    pub basis: BSplineBasis,
    pub penalty_order: usize,
    pub loss: RobustLoss,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub selection: Option<SelectionSummary>,
    pub sigma: ScaleEstimate,
    pub edf: f64,
    pub convergence: Convergence,
    pub grid: Vec<f64>,
    pub mean_curve: Option<Vec<f64>>,
    pub fitted_values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub weights: Vec<f64>,
    pub standardized_residuals: Vec<f64>,
    pub outlier_threshold: f64,
    /// Rows with `|r / σ̂| > outlier_threshold`.
    pub flagged: Vec<usize>,
}

impl FittedModel {
    fn from_fit(
        basis: BSplineBasis,
        options: &EstimatorOptions,
        grid: Vec<f64>,
        mean_curve: Option<Vec<f64>>,
        design: &DesignMatrices,
        fit: FitResult,
        selection: Option<SelectionSummary>,
    ) -> Self {
        let fitted = (&design.z * fit.gamma()).as_slice().to_vec();
        let standardized = fit.standardized_residuals();
        let flagged = standardized
            .iter()
            .enumerate()
            .filter(|(_, r)| r.abs() > OUTLIER_THRESHOLD)
            .map(|(i, _)| i)
            .collect();
        Self {
            format_version: MODEL_FORMAT_VERSION,
            basis,
            penalty_order: options.penalty_order,
            loss: fit.loss,
            intercept: fit.intercept,
            coefficients: fit.coefficients,
            lambda: fit.lambda,
            selection,
            sigma: fit.sigma,
            edf: fit.edf,
            convergence: Convergence {
                iterations: fit.iterations,
                converged: fit.converged,
                objective: fit.objective,
            },
            grid,
            mean_curve,
            fitted_values: fitted,
            residuals: fit.residuals,
            weights: fit.weights,
            standardized_residuals: standardized,
            outlier_threshold: OUTLIER_THRESHOLD,
            flagged,
        }
    }

    /// `β̂(t)`.
    pub fn beta(&self, t: f64) -> Result<f64> {
        self.basis.eval_spline(&self.coefficients, t)
    }

    pub fn beta_on(&self, points: &[f64]) -> Result<Vec<f64>> {
        points.iter().map(|&t| self.beta(t)).collect()
    }

    /// `β̂` on `n` equispaced points of `[0, 1]`.
    pub fn coefficient_function(&self, n: usize) -> Result<Vec<(f64, f64)>> {
        let t = linspace01(n);
        let b = self.beta_on(&t)?;
        Ok(t.into_iter().zip(b).collect())
    }

    /// `ŷ_i = α̂ + ∫ X_i β̂` with the training quadrature.
    pub fn predict(&self, curves: &PredictorCurves) -> Result<Vec<f64>> {
        if !curves.same_grid(&self.grid) {
            return Err(Error::GridMismatch(format!(
                "model was fitted on a {}-point grid; predictors use a different {}-point grid",
                self.grid.len(),
                curves.grid_size()
            )));
        }
        let centered;
        let curves = match &self.mean_curve {
            Some(m) => {
                centered = curves.subtract_curve(m)?;
                &centered
            }
            None => curves,
        };
        let x = curves.inner_products(&self.basis)?;
        let beta = DVector::from_column_slice(&self.coefficients);
        Ok((x * beta).iter().map(|v| v + self.intercept).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: Self =
            serde_json::from_str(s).map_err(|e| Error::InvalidDataset(format!("model file: {e}")))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidDataset(format!(
                "unsupported model format_version {} (expected {MODEL_FORMAT_VERSION})",
                model.format_version
            )));
        }
        if model.coefficients.len() != model.basis.dimension() {
            return Err(Error::InvalidDataset(format!(
                "model has {} coefficients for a basis of dimension {}",
                model.coefficients.len(),
                model.basis.dimension()
            )));
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

/// Fit the penalized M-estimator.
///
/// The preliminary scale comes from the unpenalized S-estimator fit. The
/// square loss does not use the scale in its fit, so a degenerate scale there
/// falls back to `σ̂ = 1`.
pub fn fit_model(data: &FunctionalDataset, options: &EstimatorOptions) -> Result<FittedModel> {
    options.validate()?;
    let (predictors, mean_curve) = if options.center {
        let m = data.predictors().mean_curve();
        (data.predictors().subtract_curve(&m)?, Some(m))
    } else {
        (data.predictors().clone(), None)
    };
    let y = data.responses();
    let basis = BSplineBasis::with_dimension(options.order, options.basis_dim)?;
    let penalty = basis.penalty_matrix(options.penalty_order)?;
    let design = DesignMatrices::assemble(&predictors, &basis, &penalty)?;
    if design.n() < 3 {
        return Err(Error::InvalidDataset(format!("need at least 3 curves, got {}", design.n())));
    }

    let (sigma, warm) = match initial_scale(&predictors, &basis, y, &options.initial) {
        Ok(init) => (init.scale, Some(init.gamma)),
        Err(Error::DegenerateScale) if options.loss.family == LossFamily::Square => {
            (ScaleEstimate::fixed(1.0), None)
        }
        Err(e) => return Err(e),
    };

    let (fit, selection) = match options.lambda {
        Some(lambda) => {
            let fit = irls_fit(&design, y, lambda, &options.loss, &sigma, warm.as_ref(), &options.selection.irls)?;
            (fit, None)
        }
        None => {
            let sel = select_lambda(&design, y, &options.loss, &sigma, warm.as_ref(), &options.selection)?;
            let summary = SelectionSummary {
                criterion: sel.criterion,
                criterion_value: sel.criterion_value,
                at_boundary: sel.at_boundary,
                bounds: options.selection.bounds,
                trace_path: sel.trace_path,
            };
            (sel.fit, Some(summary))
        }
    };
    Ok(FittedModel::from_fit(
        basis,
        options,
        predictors.grid().to_vec(),
        mean_curve,
        &design,
        fit,
        selection,
    ))
}
