//! Robust losses, preliminary scale and the penalized IRLS solver.

pub mod irls;
pub mod loss;
pub mod scale;

pub use irls::{
    estimating_equation_residual, hat_matrix, hat_trace, irls_fit, penalized_objective,
    standardized_residuals, FitResult, IrlsOptions,
};
pub use loss::{LossFamily, LossValues, RobustLoss};
pub use scale::{
    initial_scale, m_scale, mad_scale, s_estimate, InitialFit, InitialScaleConfig, SEstimatorConfig,
    ScaleEstimate, ScaleMethod,
};
