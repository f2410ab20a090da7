//! Preliminary residual scale: M-scale of an unpenalized S-estimator fit.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::BSplineBasis;
use crate::design::PredictorCurves;
use crate::error::{Error, Result};
use crate::linalg::lstsq;
use crate::quadrature::{gauss_legendre, linspace01};

/// Tuning of the bisquare `chi` that makes the M-scale consistent at the
/// standard normal for breakdown point 0.5.
pub const BISQUARE_CHI_HALF: f64 = 1.547_645;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMethod {
    Mad,
    MScale,
    /// Supplied by the caller rather than estimated.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleEstimate {
    pub sigma: f64,
    pub method: ScaleMethod,
    pub breakdown: f64,
}

impl ScaleEstimate {
    pub fn fixed(sigma: f64) -> Self {
        assert!(sigma > 0.0 && sigma.is_finite(), "scale must be positive");
        Self {
            sigma,
            method: ScaleMethod::Fixed,
            breakdown: 0.5,
        }
    }
}

/// Bisquare `rho` normalized so that `chi(±∞) = 1`.
pub fn bisquare_chi(x: f64, c: f64) -> f64 {
    let u = x / c;
    if u.abs() >= 1.0 {
        1.0
    } else {
        let v = 1.0 - u * u;
        1.0 - v * v * v
    }
}

fn bisquare_weight(x: f64, c: f64) -> f64 {
    let u = x / c;
    if u.abs() >= 1.0 {
        0.0
    } else {
        let v = 1.0 - u * u;
        v * v
    }
}

/// `E chi(Z; c)` for `Z ~ N(0, 1)`.
pub fn expected_chi_normal(c: f64) -> f64 {
    let (x, w) = gauss_legendre(48);
    let density = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let (mut inner, mut mass) = (0.0, 0.0);
    for (x, w) in x.iter().zip(&w) {
        let t = c * x;
        let f = density(t) * c * w;
        inner += bisquare_chi(t, c) * f;
        mass += f;
    }
    inner + (1.0 - mass)
}

/// Tuning constant `c` solving `E chi(Z; c) = b` under the standard normal.
pub fn consistency_constant(b: f64) -> f64 {
    assert!(b > 0.0 && b < 1.0, "breakdown target must lie in (0, 1)");
    // E chi decreases in c
    let (mut lo, mut hi) = (1e-3, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected_chi_normal(mid) > b {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    values.sort_by(f64::total_cmp);
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Normalized median absolute deviation about zero.
pub fn mad_scale(residuals: &[f64]) -> f64 {
    let mut abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    median(&mut abs) / 0.674_489_750_196_081_7
}

/// M-scale: the `sigma` solving `n⁻¹ Σ chi(r_i / sigma) = b`.
///
/// Solved by the fixed-point iteration `sigma² ← sigma² · mean(chi) / b`,
/// started from the normalized MAD.
pub fn m_scale(residuals: &[f64], b: f64, c: f64) -> Result<f64> {
    if residuals.iter().all(|r| *r == 0.0) {
        return Err(Error::DegenerateScale);
    }
    let n = residuals.len() as f64;
    let mut sigma = mad_scale(residuals);
    if sigma == 0.0 {
        sigma = residuals.iter().map(|r| r.abs()).sum::<f64>() / n;
    }
    for _ in 0..1000 {
        let mean_chi = residuals.iter().map(|r| bisquare_chi(r / sigma, c)).sum::<f64>() / n;
        let next = sigma * (mean_chi / b).sqrt();
        if !(next > f64::MIN_POSITIVE) {
            return Err(Error::DegenerateScale);
        }
        let done = ((next - sigma) / sigma).abs() < 1e-13;
        sigma = next;
        if done {
            break;
        }
    }
    if !sigma.is_finite() {
        return Err(Error::DegenerateScale);
    }
    Ok(sigma)
}

/// Unpenalized S-estimator fit: coefficients and residual M-scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SFit {
    pub gamma: DVector<f64>,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SEstimatorConfig {
    pub breakdown: f64,
    pub subsamples: usize,
    pub refine_steps: usize,
    pub keep_best: usize,
    pub max_iter: usize,
}

impl Default for SEstimatorConfig {
    fn default() -> Self {
        Self {
            breakdown: 0.5,
            subsamples: 50,
            refine_steps: 2,
            keep_best: 5,
            max_iter: 200,
        }
    }
}

fn weighted_lstsq(z: &DMatrix<f64>, y: &DVector<f64>, w: &[f64]) -> Result<DVector<f64>> {
    let mut zw = z.clone();
    let mut yw = y.clone();
    for (i, w) in w.iter().enumerate() {
        let s = w.sqrt();
        zw.row_mut(i).scale_mut(s);
        yw[i] *= s;
    }
    lstsq(&zw, &yw)
}

fn residuals(z: &DMatrix<f64>, y: &DVector<f64>, gamma: &DVector<f64>) -> Vec<f64> {
    (y - z * gamma).iter().copied().collect()
}

/// One reweighting step from `gamma`: returns the refit and its M-scale.
fn s_step(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    gamma: &DVector<f64>,
    sigma: f64,
    b: f64,
    c: f64,
) -> Result<(DVector<f64>, f64)> {
    let r = residuals(z, y, gamma);
    let w: Vec<f64> = r.iter().map(|r| bisquare_weight(r / sigma, c)).collect();
    let next = weighted_lstsq(z, y, &w)?;
    let s = m_scale(&residuals(z, y, &next), b, c)?;
    Ok((next, s))
}

/// S-estimator of regression by random elemental subsets.
///
/// Each subset of `ncols` rows gives an exact fit, refined by a few
/// reweighting steps; the best candidates by M-scale are iterated to
/// convergence and the smallest scale wins. The reported scale solves the
/// M-scale equation with `n - ncols` in place of `n`.
pub fn s_estimate(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    config: &SEstimatorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SFit> {
    let (n, m) = z.shape();
    if n <= m {
        return Err(Error::Config(format!(
            "S-estimator needs more observations ({n}) than columns ({m})"
        )));
    }
    let b = config.breakdown;
    let c = if (b - 0.5).abs() < 1e-12 {
        BISQUARE_CHI_HALF
    } else {
        consistency_constant(b)
    };

    let mut candidates: Vec<(f64, DVector<f64>)> = Vec::new();
    let mut last_err = Error::DegenerateScale;
    for _ in 0..config.subsamples {
        let idx: Vec<usize> = sample(rng, n, m).into_iter().collect();
        let zs = z.select_rows(&idx);
        let ys = DVector::from_iterator(m, idx.iter().map(|&i| y[i]));
        let attempt = (|| {
            let mut gamma = lstsq(&zs, &ys)?;
            let mut sigma = m_scale(&residuals(z, y, &gamma), b, c)?;
            for _ in 0..config.refine_steps {
                (gamma, sigma) = s_step(z, y, &gamma, sigma, b, c)?;
            }
            Ok((sigma, gamma))
        })();
        match attempt {
            Ok(cand) => candidates.push(cand),
            Err(e) => last_err = e,
        }
    }
    if candidates.is_empty() {
        return Err(last_err);
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    candidates.truncate(config.keep_best.max(1));

    let mut best: Option<SFit> = None;
    for (mut sigma, mut gamma) in candidates {
        for _ in 0..config.max_iter {
            let (g, s) = match s_step(z, y, &gamma, sigma, b, c) {
                Ok(v) => v,
                Err(_) => break,
            };
            let done = ((s - sigma) / sigma).abs() < 1e-10;
            if s <= sigma {
                gamma = g;
                sigma = s;
            }
            if done || s > sigma {
                break;
            }
        }
        if best.as_ref().is_none_or(|f| sigma < f.sigma) {
            best = Some(SFit { gamma, sigma });
        }
    }
    let mut best = best.ok_or(Error::DegenerateScale)?;
    // an exact fit leaves only rounding noise in the residuals
    let y_scale = y.amax();
    if !(best.sigma > 1e-10 * y_scale) {
        return Err(Error::DegenerateScale);
    }
    // degrees-of-freedom correction: (n - m)⁻¹ Σ chi(r_i / sigma) = b
    best.sigma = m_scale(&residuals(z, y, &best.gamma), b * (n - m) as f64 / n as f64, c)?;
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialScaleConfig {
    /// Dimension of the reduced regression-spline basis, capped at `K + p`.
    pub reduced_dimension: usize,
    pub s_estimator: SEstimatorConfig,
    pub seed: u64,
}

impl Default for InitialScaleConfig {
    fn default() -> Self {
        Self {
            reduced_dimension: 10,
            s_estimator: SEstimatorConfig::default(),
            seed: 0,
        }
    }
}

/// Preliminary scale plus a warm start for the penalized fit.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialFit {
    pub scale: ScaleEstimate,
    /// `(alpha, beta)` expressed in the full basis.
    pub gamma: DVector<f64>,
    pub reduced_basis: BSplineBasis,
    pub reduced_gamma: DVector<f64>,
}

/// Fit a low-dimensional unpenalized regression spline by S-estimation and
/// return the M-scale of its residuals with the fit embedded in `basis`.
pub fn initial_scale(
    predictors: &PredictorCurves,
    basis: &BSplineBasis,
    y: &DVector<f64>,
    config: &InitialScaleConfig,
) -> Result<InitialFit> {
    let p = basis.order();
    let dim = config.reduced_dimension.min(basis.dimension()).max(p);
    let reduced_basis = BSplineBasis::with_dimension(p, dim)?;
    let x0 = predictors.inner_products(&reduced_basis)?;
    let n = x0.nrows();
    let mut z0 = DMatrix::from_element(n, dim + 1, 1.0);
    z0.view_mut((0, 1), (n, dim)).copy_from(&x0);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let fit = s_estimate(&z0, y, &config.s_estimator, &mut rng)?;
    let gamma = embed(&reduced_basis, &fit.gamma, basis)?;
    Ok(InitialFit {
        scale: ScaleEstimate {
            sigma: fit.sigma,
            method: ScaleMethod::MScale,
            breakdown: config.s_estimator.breakdown,
        },
        gamma,
        reduced_basis,
        reduced_gamma: fit.gamma,
    })
}

/// Re-express `(alpha, beta)` from one basis in another by least squares on
/// a dense grid.
pub fn embed(from: &BSplineBasis, gamma: &DVector<f64>, to: &BSplineBasis) -> Result<DVector<f64>> {
    if from == to {
        return Ok(gamma.clone());
    }
    let pts = linspace01(8 * to.dimension() + 100);
    let coefs: Vec<f64> = gamma.iter().skip(1).copied().collect();
    let target = DVector::from_iterator(
        pts.len(),
        pts.iter().map(|&t| from.eval_spline(&coefs, t)),
    )
    .map(|v| v.unwrap_or(0.0));
    let b = to.eval_matrix(&pts)?;
    let beta = lstsq(&b, &target)?;
    let mut out = DVector::zeros(to.dimension() + 1);
    out[0] = gamma[0];
    out.rows_mut(1, to.dimension()).copy_from(&beta);
    Ok(out)
}
