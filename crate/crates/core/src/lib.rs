#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod cv;
pub mod design;
pub mod error;
pub mod linalg;
pub mod model;
pub mod quadrature;
pub mod robust;
pub mod select;
pub mod simulate;

pub use basis::{BSplineBasis, KnotRule, PenaltyMatrix};
pub use error::{Error, Result};
pub use design::{DesignMatrices, FunctionalDataset, PredictorCurves};
pub use model::{fit_model, EstimatorOptions, FittedModel};
pub use robust::{FitResult, LossFamily, RobustLoss, ScaleEstimate};
pub use select::{Criterion, SelectionOptions, SelectionResult};
