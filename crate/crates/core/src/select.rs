//! Smoothing parameter selection.
//!
//! The robust corrected AIC (or GCV for the least-squares fit) is minimized
//! over `u = log10(λ)` with a one-dimensional Nelder–Mead search from
//! several starts. Every criterion evaluation is a full IRLS fit,
//! warm-started from the previous one.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::design::DesignMatrices;
use crate::error::{Error, Result};
use crate::robust::irls::{irls_fit, FitResult, IrlsOptions};
use crate::robust::loss::{LossFamily, RobustLoss};
use crate::robust::scale::ScaleEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Aicc,
    Gcv,
}

impl std::str::FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "aicc" => Ok(Criterion::Aicc),
            "gcv" => Ok(Criterion::Gcv),
            other => Err(format!("unknown criterion '{other}' (expected aicc or gcv)")),
        }
    }
}

/// `log σ̂²(λ) + 1 + 2 (edf + 1) / (n − edf − 2)`.
pub fn aicc_from_parts(sigma2: f64, edf: f64, n: usize) -> Result<f64> {
    let denom = n as f64 - edf - 2.0;
    if !(denom > 0.0) {
        return Err(Error::OversmoothingGuard { edf, n });
    }
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::DegenerateScale);
    }
    Ok(sigma2.ln() + 1.0 + 2.0 * (edf + 1.0) / denom)
}

/// Robust corrected AIC of a converged fit, with
/// `σ̂²(λ) = n⁻¹ Σ ρ(r_i / σ̂)` evaluated at the preliminary scale.
pub fn aicc(fit: &FitResult, n: usize) -> Result<f64> {
    let s = fit.sigma.sigma;
    let sigma2 = fit.residuals.iter().map(|r| fit.loss.rho(r / s)).sum::<f64>() / n as f64;
    aicc_from_parts(sigma2, fit.edf, n)
}

/// `n · RSS / (n − edf)²`.
pub fn gcv_from_parts(rss: f64, edf: f64, n: usize) -> Result<f64> {
    let denom = n as f64 - edf;
    if !(denom > 0.0) {
        return Err(Error::OversmoothingGuard { edf, n });
    }
    Ok(n as f64 * rss / (denom * denom))
}

/// Generalized cross-validation score of a least-squares fit.
pub fn gcv(fit: &FitResult, n: usize) -> Result<f64> {
    if fit.loss.family != LossFamily::Square {
        return Err(Error::Config("GCV is defined for the square loss only".into()));
    }
    let rss = fit.residuals.iter().map(|r| r * r).sum::<f64>();
    gcv_from_parts(rss, fit.edf, n)
}

pub fn criterion_value(fit: &FitResult, criterion: Criterion) -> Result<f64> {
    match criterion {
        Criterion::Aicc => aicc(fit, fit.n()),
        Criterion::Gcv => gcv(fit, fit.n()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub step: f64,
    /// Stop once the two simplex vertices are closer than this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            step: 1.0,
            tol: 1e-4,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadOutcome {
    pub x: f64,
    pub value: f64,
    pub diameter: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

/// Nelder–Mead on an interval with a two-vertex simplex.
///
/// Trial points are clamped to `[lo, hi]`; non-finite values count as `+∞`.
pub fn nelder_mead_1d<F: FnMut(f64) -> f64>(
    mut f: F,
    start: f64,
    lo: f64,
    hi: f64,
    options: &NelderMeadOptions,
) -> NelderMeadOutcome {
    const REFLECT: f64 = 1.0;
    const EXPAND: f64 = 2.0;
    const CONTRACT: f64 = 0.5;
    const SHRINK: f64 = 0.5;

    let mut evaluations = 0;
    let mut eval = |x: f64| {
        evaluations += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let clamp = |x: f64| x.clamp(lo, hi);

    let x0 = clamp(start);
    let x1 = if x0 + options.step <= hi {
        x0 + options.step
    } else {
        clamp(x0 - options.step)
    };
    let mut simplex = [(x0, eval(x0)), (x1, eval(x1))];
    let mut iterations = 0;
    loop {
        if simplex[1].1 < simplex[0].1 {
            simplex.swap(0, 1);
        }
        let (best, worst) = (simplex[0], simplex[1]);
        if (best.0 - worst.0).abs() < options.tol || iterations >= options.max_iter {
            break;
        }
        iterations += 1;
        // with two vertices the centroid of all but the worst is the best vertex
        let c = best.0;
        let xr = clamp(c + REFLECT * (c - worst.0));
        let fr = eval(xr);
        if fr < best.1 {
            let xe = clamp(c + EXPAND * (xr - c));
            let fe = eval(xe);
            simplex[1] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < worst.1 {
            let xc = clamp(c + CONTRACT * (xr - c));
            let fc = eval(xc);
            if fc <= fr {
                simplex[1] = (xc, fc);
                continue;
            }
        } else {
            let xc = clamp(c + CONTRACT * (worst.0 - c));
            let fc = eval(xc);
            if fc < worst.1 {
                simplex[1] = (xc, fc);
                continue;
            }
        }
        let xs = c + SHRINK * (worst.0 - c);
        simplex[1] = (xs, eval(xs));
    }
    NelderMeadOutcome {
        x: simplex[0].0,
        value: simplex[0].1,
        diameter: (simplex[0].0 - simplex[1].0).abs(),
        iterations,
        evaluations,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOptions {
    pub criterion: Criterion,
    /// Search bounds on `λ`.
    pub bounds: (f64, f64),
    /// Starting points in `log10(λ)`.
    pub starts: Vec<f64>,
    /// Size of the log-spaced scan over the bounds run before the searches;
    /// its best point becomes one more start. `0` skips the scan.
    pub scan_points: usize,
    pub nelder_mead: NelderMeadOptions,
    pub irls: IrlsOptions,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        Self {
            criterion: Criterion::Aicc,
            bounds: (1e-8, 1e4),
            starts: vec![-6.0, -3.0, 0.0],
            scan_points: 25,
            nelder_mead: NelderMeadOptions::default(),
            irls: IrlsOptions::default(),
        }
    }
}

impl SelectionOptions {
    fn validate(&self) -> Result<(f64, f64)> {
        let (lo, hi) = self.bounds;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::Config(format!(
                "lambda bounds must satisfy 0 < lo < hi, got ({lo}, {hi})"
            )));
        }
        if self.starts.is_empty() {
            return Err(Error::Config("at least one start is required".into()));
        }
        if self.scan_points == 1 {
            return Err(Error::Config("a scan needs at least 2 points".into()));
        }
        Ok((lo.log10(), hi.log10()))
    }
}

/// Outcome of a search over `log10(λ)` for an arbitrary criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLambdaSearch {
    pub log_lambda: f64,
    pub value: f64,
    pub at_boundary: bool,
    pub path: Vec<(f64, f64)>,
    pub terminals: Vec<NelderMeadOutcome>,
}

/// Minimize `criterion(λ)` over `u = log10 λ` within the bounds, returning
/// the best terminal point over all starts. The criterion may have several
/// local minima, so the best point of an optional coarse scan is searched
/// from as well.
pub fn search_log_lambda<F>(mut criterion: F, options: &SelectionOptions) -> Result<LogLambdaSearch>
where
    F: FnMut(f64) -> Option<f64>,
{
    let (ulo, uhi) = options.validate()?;
    let mut path = Vec::new();
    let mut starts = options.starts.clone();
    if options.scan_points > 0 {
        for lambda in log_grid(options.bounds, options.scan_points) {
            path.push((lambda, criterion(lambda).unwrap_or(f64::INFINITY)));
        }
        let scan_best = path
            .iter()
            .filter(|(_, v)| v.is_finite())
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(l, _)| l.log10().clamp(ulo, uhi));
        if let Some(u) = scan_best {
            if starts.iter().all(|s| (s - u).abs() > options.nelder_mead.tol) {
                starts.push(u);
            }
        }
    }
    let mut terminals = Vec::with_capacity(starts.len());
    for &start in &starts {
        let out = nelder_mead_1d(
            |u| {
                let lambda = 10f64.powf(u);
                let v = criterion(lambda).unwrap_or(f64::INFINITY);
                path.push((lambda, v));
                v
            },
            start,
            ulo,
            uhi,
            &options.nelder_mead,
        );
        terminals.push(out);
    }
    let best = terminals
        .iter()
        .filter(|t| t.value.is_finite())
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .cloned()
        .ok_or_else(|| {
            Error::SelectionFailure("no start produced a finite criterion value".into())
        })?;
    let edge = options.nelder_mead.tol;
    Ok(LogLambdaSearch {
        log_lambda: best.x,
        value: best.value,
        at_boundary: (best.x - ulo).abs() < edge || (uhi - best.x).abs() < edge,
        path,
        terminals,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub lambda_opt: f64,
    pub criterion: Criterion,
    pub criterion_value: f64,
    pub at_boundary: bool,
    /// Every `(λ, criterion)` pair evaluated, in order; failures are `+∞`.
    pub trace_path: Vec<(f64, f64)>,
    pub fit: FitResult,
}

/// Select `λ` for a fixed design, loss and preliminary scale.
///
/// `fallback_start` seeds IRLS whenever the previous evaluation failed.
pub fn select_lambda(
    design: &DesignMatrices,
    y: &DVector<f64>,
    loss: &RobustLoss,
    sigma: &ScaleEstimate,
    fallback_start: Option<&DVector<f64>>,
    options: &SelectionOptions,
) -> Result<SelectionResult> {
    if options.criterion == Criterion::Gcv && loss.family != LossFamily::Square {
        return Err(Error::Config("GCV selection requires the square loss".into()));
    }
    let mut warm: Option<DVector<f64>> = None;
    let mut best: Option<(f64, f64, FitResult)> = None;
    let mut last_err: Option<Error> = None;
    let search = search_log_lambda(
        |lambda| {
            let start = warm.as_ref().or(fallback_start);
            let outcome = irls_fit(design, y, lambda, loss, sigma, start, &options.irls)
                .and_then(|fit| criterion_value(&fit, options.criterion).map(|v| (v, fit)));
            match outcome {
                Ok((value, fit)) => {
                    warm = Some(fit.gamma());
                    if best.as_ref().is_none_or(|(_, b, _)| value < *b) {
                        best = Some((lambda, value, fit));
                    }
                    Some(value)
                }
                Err(e) => {
                    warm = None;
                    last_err = Some(e);
                    None
                }
            }
        },
        options,
    );
    let search = search.map_err(|e| match last_err.take() {
        Some(cause) => Error::SelectionFailure(format!("{e}; last fit error: {cause}")),
        None => e,
    })?;
    let (_, _, fit) = best.expect("finite search value implies a stored fit");
    // the best terminal vertex is the best evaluated point of its run; report
    // the fit actually evaluated at that vertex
    let lambda_opt = 10f64.powf(search.log_lambda);
    let fit = if fit.lambda == lambda_opt {
        fit
    } else {
        irls_fit(design, y, lambda_opt, loss, sigma, Some(&fit.gamma()), &options.irls)?
    };
    let criterion_value = criterion_value(&fit, options.criterion)?;
    Ok(SelectionResult {
        lambda_opt,
        criterion: options.criterion,
        criterion_value,
        at_boundary: search.at_boundary,
        trace_path: search.path,
        fit,
    })
}

/// `n` log-spaced values covering the bounds inclusively.
pub fn log_grid(bounds: (f64, f64), n: usize) -> Vec<f64> {
    let (a, b) = (bounds.0.log10(), bounds.1.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1).max(1) as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aicc_direct_formula() {
        let v = aicc_from_parts(1.0, 5.0, 100).unwrap();
        assert!((v - (1.0 + 12.0 / 93.0)).abs() < 1e-15);
        assert!((v - 1.129_032_258_064_516).abs() < 1e-12);
    }

    #[test]
    fn aicc_guard() {
        assert_eq!(
            aicc_from_parts(1.0, 98.0, 100),
            Err(Error::OversmoothingGuard { edf: 98.0, n: 100 })
        );
    }

    #[test]
    fn gcv_direct_formula() {
        assert_eq!(gcv_from_parts(0.0, 3.0, 10).unwrap(), 0.0);
        assert!((gcv_from_parts(10.0, 2.0, 10).unwrap() - 1.5625).abs() < 1e-15);
        assert!(matches!(
            gcv_from_parts(1.0, 10.0, 10),
            Err(Error::OversmoothingGuard { .. })
        ));
    }

    #[test]
    fn nelder_mead_finds_interior_minimum() {
        let target = -2.345;
        let options = SelectionOptions::default();
        let out = search_log_lambda(|l| Some((l.log10() - target).powi(2) + 1.0), &options).unwrap();
        assert!((out.log_lambda - target).abs() < 1e-3, "{}", out.log_lambda);
        assert!(!out.at_boundary);
        for t in &out.terminals {
            assert!(t.diameter < 1e-4);
        }
    }

    #[test]
    fn scan_catches_basin_missed_by_starts() {
        // shallow bowl around u = 1 plus a deeper, narrow well at u = -7.3
        let f = |l: f64| {
            let u = l.log10();
            Some((u - 1.0).powi(2) / 100.0 + 0.5 - 1.2 * (-(u + 7.3).powi(2) / 0.1).exp())
        };
        let without = SelectionOptions {
            scan_points: 0,
            ..SelectionOptions::default()
        };
        let out = search_log_lambda(f, &without).unwrap();
        assert!(out.log_lambda > -2.0, "{}", out.log_lambda);
        let out = search_log_lambda(f, &SelectionOptions::default()).unwrap();
        assert!((out.log_lambda + 7.3).abs() < 0.01, "{}", out.log_lambda);
        assert_eq!(out.terminals.len(), 4);
        assert!(out.path.len() >= 25);
    }

    #[test]
    fn monotone_criterion_hits_upper_bound() {
        let options = SelectionOptions {
            bounds: (1e-8, 1e2),
            ..SelectionOptions::default()
        };
        let out = search_log_lambda(|l| Some(-l.log10()), &options).unwrap();
        assert!((out.log_lambda - 2.0).abs() < 1e-4);
        assert!(out.at_boundary);
    }

    #[test]
    fn all_failures_is_selection_failure() {
        let out = search_log_lambda(|_| None, &SelectionOptions::default());
        assert!(matches!(out, Err(Error::SelectionFailure(_))));
    }

    #[test]
    fn infeasible_region_is_avoided() {
        // undefined below 10^-1, minimum at 10^0.5
        let out = search_log_lambda(
            |l| {
                let u = l.log10();
                (u > -1.0).then(|| (u - 0.5).powi(2))
            },
            &SelectionOptions::default(),
        )
        .unwrap();
        assert!((out.log_lambda - 0.5).abs() < 1e-3);
    }

    #[test]
    fn log_grid_spans_bounds() {
        let g = log_grid((1e-8, 1e4), 25);
        assert_eq!(g.len(), 25);
        assert!((g[0] - 1e-8).abs() < 1e-20);
        assert!((g[24] - 1e4).abs() < 1e-9);
        assert!((g[1] / g[0] - 10f64.powf(0.5)).abs() < 1e-12);
    }

    #[test]
    fn invalid_bounds_rejected() {
        let options = SelectionOptions {
            bounds: (1.0, 0.5),
            ..SelectionOptions::default()
        };
        assert!(matches!(search_log_lambda(|_| Some(0.0), &options), Err(Error::Config(_))));
    }

    fn real_problem() -> (DesignMatrices, DVector<f64>) {
        use crate::basis::BSplineBasis;
        use crate::design::PredictorCurves;
        use crate::quadrature::linspace01;
        use nalgebra::DMatrix;
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;
        use rand_distr::StandardNormal;

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let grid = linspace01(60);
        let n = 80;
        let mut values = DMatrix::zeros(n, grid.len());
        for i in 0..n {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            let c: f64 = rng.sample(StandardNormal);
            for (j, &t) in grid.iter().enumerate() {
                values[(i, j)] = a * (std::f64::consts::PI * t).sin()
                    + b * (2.0 * std::f64::consts::PI * t).cos()
                    + c * t;
            }
        }
        let curves = PredictorCurves::new(grid.clone(), values).unwrap();
        let basis = BSplineBasis::with_dimension(4, 12).unwrap();
        let pen = basis.penalty_matrix(2).unwrap();
        let design = DesignMatrices::assemble(&curves, &basis, &pen).unwrap();
        let beta: Vec<f64> = grid.iter().map(|t| (2.0 * std::f64::consts::PI * t).sin()).collect();
        let signal = curves.integrate_against(&beta).unwrap();
        let y = DVector::from_fn(n, |i, _| signal[i] + 0.3 * rng.sample::<f64, _>(StandardNormal));
        (design, y)
    }

    #[test]
    fn selection_beats_coarse_grid() {
        let (design, y) = real_problem();
        let sigma = ScaleEstimate::fixed(0.3);
        for (loss, criterion) in [
            (RobustLoss::huber(1.345), Criterion::Aicc),
            (RobustLoss::square(), Criterion::Gcv),
            (RobustLoss::square(), Criterion::Aicc),
        ] {
            let options = SelectionOptions {
                criterion,
                ..SelectionOptions::default()
            };
            let sel = select_lambda(&design, &y, &loss, &sigma, None, &options).unwrap();
            let recomputed = criterion_value(&sel.fit, criterion).unwrap();
            assert_eq!(recomputed, sel.criterion_value);
            assert_eq!(sel.fit.lambda, sel.lambda_opt);
            let grid_min = log_grid(options.bounds, 25)
                .into_iter()
                .filter_map(|l| {
                    let fit = irls_fit(&design, &y, l, &loss, &sigma, None, &options.irls).ok()?;
                    criterion_value(&fit, criterion).ok()
                })
                .fold(f64::INFINITY, f64::min);
            assert!(
                sel.criterion_value <= grid_min + 1e-6,
                "{criterion:?}: {} vs grid {}",
                sel.criterion_value,
                grid_min
            );
        }
    }

    #[test]
    fn square_aicc_is_offset_classical() {
        let (design, y) = real_problem();
        let s = 0.7;
        let fit = irls_fit(
            &design,
            &y,
            1e-3,
            &RobustLoss::square(),
            &ScaleEstimate::fixed(s),
            None,
            &IrlsOptions::default(),
        )
        .unwrap();
        let n = fit.n() as f64;
        let rss: f64 = fit.residuals.iter().map(|r| r * r).sum();
        let classical = (rss / n).ln() + 1.0 + 2.0 * (fit.edf + 1.0) / (n - fit.edf - 2.0);
        let robust = aicc(&fit, fit.n()).unwrap();
        assert!((robust - (classical - (2.0 * s * s).ln())).abs() < 1e-12);
    }
}
