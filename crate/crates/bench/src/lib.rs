//! Fixtures shared by the benchmarks.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robospline::simulate::{gen_curves, gen_responses, BetaId, ErrorLaw, SimulationConfig};
use robospline::{BSplineBasis, DesignMatrices, FunctionalDataset};

/// Well-spaced curves with `β₁` and the given error law.
pub fn dataset(n: usize, error: ErrorLaw, seed: u64) -> FunctionalDataset {
    let config = SimulationConfig {
        n,
        error,
        ..SimulationConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let curves = gen_curves(&config, &mut rng).expect("valid config");
    gen_responses(curves, &BetaId::B1, error, &mut rng).expect("valid responses")
}

/// Cubic basis of dimension `dim`, second-derivative penalty.
pub fn design(data: &FunctionalDataset, dim: usize) -> (BSplineBasis, DesignMatrices, DVector<f64>) {
    let basis = BSplineBasis::with_dimension(4, dim).expect("valid basis");
    let pen = basis.penalty_matrix(2).expect("valid penalty");
    let design = DesignMatrices::assemble(data.predictors(), &basis, &pen).expect("design");
    (basis, design, data.responses().clone())
}
