//! Penalized M-estimation by iteratively reweighted least squares.
//!
//! With preliminary scale `s` the fit minimizes
//!
//! ```text
//! n⁻¹ Σ s² ρ(r_i / s) + λ γᵀ D* γ,     r_i = y_i − z_iᵀ γ.
//! ```
//!
//! Writing `W_i = ψ(r_i/s) / (r_i/s)`, the stationarity conditions
//! `n⁻¹ Σ s ψ(r_i/s) z_i = 2λ D* γ` become
//! `(n⁻¹ ZᵀWZ + 2λ D*) γ = n⁻¹ ZᵀWy`: the scale enters only through the
//! standardized residuals inside `W`, because `s ψ(r/s) = W · r`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::design::DesignMatrices;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, weighted_cross, weighted_gram};
use crate::robust::loss::{LossFamily, RobustLoss};
use crate::robust::scale::ScaleEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrlsOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub loss: RobustLoss,
    pub sigma: ScaleEstimate,
    pub edf: f64,
    pub residuals: Vec<f64>,
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    /// Objective at the start value followed by one entry per accepted step,
    /// each obtained by adding the term-wise change of that step.
    pub objective_trace: Vec<f64>,
}

impl FitResult {
    /// `(alpha, beta)` stacked.
    pub fn gamma(&self) -> DVector<f64> {
        let mut g = DVector::zeros(self.coefficients.len() + 1);
        g[0] = self.intercept;
        g.rows_mut(1, self.coefficients.len())
            .copy_from_slice(&self.coefficients);
        g
    }

    pub fn n(&self) -> usize {
        self.residuals.len()
    }

    /// `residuals / sigma`.
    pub fn standardized_residuals(&self) -> Vec<f64> {
        standardized_residuals(&self.residuals, &self.sigma)
    }
}

pub fn standardized_residuals(residuals: &[f64], sigma: &ScaleEstimate) -> Vec<f64> {
    residuals.iter().map(|r| r / sigma.sigma).collect()
}

fn residual_vector(design: &DesignMatrices, y: &DVector<f64>, gamma: &DVector<f64>) -> DVector<f64> {
    y - &design.z * gamma
}

/// `n⁻¹ Σ s² ρ(r_i / s) + λ γᵀ D* γ`.
pub fn penalized_objective(
    design: &DesignMatrices,
    y: &DVector<f64>,
    gamma: &DVector<f64>,
    lambda: f64,
    loss: &RobustLoss,
    sigma: f64,
) -> f64 {
    let r = residual_vector(design, y, gamma);
    let data = r.iter().map(|r| sigma * sigma * loss.rho(r / sigma)).sum::<f64>() / r.len() as f64;
    let pen = (gamma.transpose() * &design.penalty_star * gamma)[(0, 0)];
    data + lambda * pen
}

/// Residual of the estimating equations,
/// `−n⁻¹ Σ s ψ(r_i/s) z_i + 2λ D* γ`, which vanishes at a stationary point.
pub fn estimating_equation_residual(
    design: &DesignMatrices,
    y: &DVector<f64>,
    gamma: &DVector<f64>,
    lambda: f64,
    loss: &RobustLoss,
    sigma: f64,
) -> DVector<f64> {
    let r = residual_vector(design, y, gamma);
    let n = r.len() as f64;
    let score = DVector::from_iterator(r.len(), r.iter().map(|r| sigma * loss.psi(r / sigma)));
    -(design.z.transpose() * score) / n + &design.penalty_star * gamma * (2.0 * lambda)
}

fn irls_weights(r: &DVector<f64>, loss: &RobustLoss, sigma: f64) -> Vec<f64> {
    r.iter().map(|r| loss.weight(r / sigma)).collect()
}

/// `ZᵀWZ + 2nλ D*` in the eigenbasis of `D*`, equilibrated to unit
/// diagonal. Returns the Cholesky factor and the scaling `S`.
///
/// With the penalty diagonal, the directions it leaves free keep their
/// accuracy however large `λ` is.
fn rotated_factor(design: &DesignMatrices, w: &[f64], lambda: f64) -> Result<(Cholesky<f64, Dyn>, DVector<f64>)> {
    let n = design.n() as f64;
    let mut a = weighted_gram(design.z_rotated(), w);
    for (i, e) in design.penalty_eigenvalues().iter().enumerate() {
        a[(i, i)] += 2.0 * n * lambda * e;
    }
    let scale = DVector::from_iterator(a.nrows(), a.diagonal().iter().map(|d| {
        if *d > 0.0 {
            1.0 / d.sqrt()
        } else {
            1.0
        }
    }));
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            a[(i, j)] *= scale[i] * scale[j];
        }
    }
    Ok((cholesky(&a)?, scale))
}

fn weighted_step(
    design: &DesignMatrices,
    y: &DVector<f64>,
    w: &[f64],
    lambda: f64,
) -> Result<DVector<f64>> {
    let (chol, scale) = rotated_factor(design, w, lambda)?;
    let b = weighted_cross(design.z_rotated(), w, y).component_mul(&scale);
    let theta = chol.solve(&b).component_mul(&scale);
    Ok(design.rotation() * theta)
}

/// Objective change from `gamma` to `gamma + step`, summed term by term so
/// that it stays accurate when the change is near rounding level.
fn objective_change(
    design: &DesignMatrices,
    r: &DVector<f64>,
    gamma: &DVector<f64>,
    step: &DVector<f64>,
    lambda: f64,
    loss: &RobustLoss,
    sigma: f64,
) -> f64 {
    let dr = &design.z * step;
    let data: f64 = r
        .iter()
        .zip(dr.iter())
        .map(|(r, d)| loss.rho_difference(r / sigma, -d / sigma))
        .sum::<f64>()
        * sigma
        * sigma
        / r.len() as f64;
    let pen = (step.transpose() * &design.penalty_star * (gamma * 2.0 + step))[(0, 0)];
    data + lambda * pen
}

/// Penalized M-estimate at fixed `lambda` and scale.
///
/// Each step solves `(n⁻¹ ZᵀW(γ_k)Z + 2λD*) γ_{k+1} = n⁻¹ ZᵀW(γ_k) y`.
/// A step that would increase the objective is halved back towards the
/// previous iterate; iteration stops once the relative change in `γ`
/// drops below `tol`.
pub fn irls_fit(
    design: &DesignMatrices,
    y: &DVector<f64>,
    lambda: f64,
    loss: &RobustLoss,
    sigma: &ScaleEstimate,
    start: Option<&DVector<f64>>,
    options: &IrlsOptions,
) -> Result<FitResult> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if !(sigma.sigma > 0.0) || !sigma.sigma.is_finite() {
        return Err(Error::DegenerateScale);
    }
    if y.len() != design.n() {
        return Err(Error::RowCountMismatch {
            curves: design.n(),
            responses: y.len(),
        });
    }
    let s = sigma.sigma;
    let objective = |g: &DVector<f64>| penalized_objective(design, y, g, lambda, loss, s);

    let mut gamma = match start {
        Some(g) if g.len() != design.columns() => {
            return Err(Error::Config(format!(
                "start vector has length {}, expected {}",
                g.len(),
                design.columns()
            )));
        }
        Some(g) => g.clone(),
        None => DVector::zeros(design.columns()),
    };
    let mut current = objective(&gamma);
    if !current.is_finite() {
        return Err(Error::Divergence("objective at start is not finite".into()));
    }
    let mut trace = vec![current];
    let mut iterations = 0;
    let mut converged = false;

    if loss.family == LossFamily::Square {
        // constant weights: one solve is exact
        gamma = weighted_step(design, y, &vec![1.0; design.n()], lambda)?;
        current = objective(&gamma);
        trace.push(current);
        iterations = 1;
        converged = true;
    }

    while !converged && iterations < options.max_iter {
        let r = residual_vector(design, y, &gamma);
        let w = irls_weights(&r, loss, s);
        let mut step = weighted_step(design, y, &w, lambda)? - &gamma;
        let mut delta = objective_change(design, &r, &gamma, &step, lambda, loss, s);
        if !delta.is_finite() {
            return Err(Error::Divergence(format!(
                "objective became non-finite at iteration {}",
                iterations + 1
            )));
        }
        let mut halvings = 0;
        while delta > 0.0 && halvings < 30 {
            step *= 0.5;
            delta = objective_change(design, &r, &gamma, &step, lambda, loss, s);
            halvings += 1;
        }
        iterations += 1;
        if delta > 0.0 {
            // no descent along the IRLS direction, only rounding is left
            converged = true;
            break;
        }
        gamma += &step;
        let change = step.norm() / gamma.norm().max(f64::MIN_POSITIVE);
        current += delta;
        trace.push(current);
        if change < options.tol {
            converged = true;
        }
    }
    if loss.family != LossFamily::Square {
        current = objective(&gamma);
    }

    let r = residual_vector(design, y, &gamma);
    let weights = irls_weights(&r, loss, s);
    let edf = hat_trace(design, &weights, lambda)?;
    Ok(FitResult {
        intercept: gamma[0],
        coefficients: gamma.iter().skip(1).copied().collect(),
        lambda,
        loss: *loss,
        sigma: *sigma,
        edf,
        residuals: r.iter().copied().collect(),
        weights,
        iterations,
        converged,
        objective: current,
        objective_trace: trace,
    })
}

/// `Tr H(λ)` with `H(λ) = Z (ZᵀWZ + 2nλ D*)⁻¹ ZᵀW`, evaluated as
/// `‖L⁻¹ S Tᵀ Zᵀ W^½‖²_F` from the rotated, equilibrated factor `L Lᵀ`.
pub fn hat_trace(design: &DesignMatrices, w: &[f64], lambda: f64) -> Result<f64> {
    let (chol, scale) = rotated_factor(design, w, lambda)?;
    let mut m = design.z_rotated().transpose();
    for (j, mut col) in m.column_iter_mut().enumerate() {
        col *= w[j].max(0.0).sqrt();
        col.component_mul_assign(&scale);
    }
    chol.l().solve_lower_triangular_mut(&mut m);
    Ok(m.norm_squared())
}

/// Dense `H(λ)`; quadratic in `n`, intended for diagnostics and checks.
pub fn hat_matrix(z: &DMatrix<f64>, penalty_star: &DMatrix<f64>, w: &[f64], lambda: f64) -> Result<DMatrix<f64>> {
    let n = z.nrows() as f64;
    let a = weighted_gram(z, w) + penalty_star * (2.0 * n * lambda);
    let chol = cholesky(&a)?;
    let mut ztw = z.transpose();
    for (mut col, w) in ztw.column_iter_mut().zip(w) {
        col *= *w;
    }
    Ok(z * chol.solve(&ztw))
}
