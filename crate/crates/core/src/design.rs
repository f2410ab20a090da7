//! Discretized predictor curves and the penalized regression design.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::basis::{BSplineBasis, PenaltyMatrix};
use crate::error::{Error, Result};
use crate::quadrature::trapezoid_weights;

/// Curves sampled on a shared grid in `[0, 1]`; row `i` is `X_i(t_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorCurves {
    grid: Vec<f64>,
    values: DMatrix<f64>,
}

impl PredictorCurves {
    pub fn new(grid: Vec<f64>, values: DMatrix<f64>) -> Result<Self> {
        validate_grid(&grid)?;
        if values.ncols() != grid.len() {
            return Err(Error::InvalidDataset(format!(
                "curves have {} columns but the grid has {} points",
                values.ncols(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite curve value".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn grid_size(&self) -> usize {
        self.grid.len()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.select_rows(rows),
        }
    }

    /// Pointwise sample mean curve.
    pub fn mean_curve(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        self.values.row_sum().iter().map(|s| s / n).collect()
    }

    /// Subtract a curve from every row.
    pub fn subtract_curve(&self, curve: &[f64]) -> Result<Self> {
        if curve.len() != self.grid.len() {
            return Err(Error::GridMismatch(format!(
                "curve has {} samples, grid has {}",
                curve.len(),
                self.grid.len()
            )));
        }
        let mut values = self.values.clone();
        for mut row in values.row_iter_mut() {
            for (v, c) in row.iter_mut().zip(curve) {
                *v -= c;
            }
        }
        Ok(Self {
            grid: self.grid.clone(),
            values,
        })
    }

    /// `true` when both grids agree to rounding.
    pub fn same_grid(&self, grid: &[f64]) -> bool {
        self.grid.len() == grid.len()
            && self
                .grid
                .iter()
                .zip(grid)
                .all(|(a, b)| (a - b).abs() <= 1e-12)
    }

    /// Spline design `X[i][j] = <B_j, X_i>` by the trapezoid rule on the grid.
    pub fn inner_products(&self, basis: &BSplineBasis) -> Result<DMatrix<f64>> {
        let weighted = weighted_basis(&self.grid, basis)?;
        Ok(&self.values * weighted)
    }

    /// Trapezoid integrals `∫ X_i f` for a function sampled on the grid.
    pub fn integrate_against(&self, f: &[f64]) -> Result<DVector<f64>> {
        if f.len() != self.grid.len() {
            return Err(Error::GridMismatch(format!(
                "function has {} samples, grid has {}",
                f.len(),
                self.grid.len()
            )));
        }
        let w = trapezoid_weights(&self.grid);
        let wf = DVector::from_iterator(f.len(), w.iter().zip(f).map(|(w, f)| w * f));
        Ok(&self.values * wf)
    }
}

/// Predictor curves paired with scalar responses.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    predictors: PredictorCurves,
    responses: DVector<f64>,
}

impl FunctionalDataset {
    pub fn new(predictors: PredictorCurves, responses: Vec<f64>) -> Result<Self> {
        if predictors.len() != responses.len() {
            return Err(Error::RowCountMismatch {
                curves: predictors.len(),
                responses: responses.len(),
            });
        }
        if responses.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite response".into()));
        }
        Ok(Self {
            predictors,
            responses: DVector::from_vec(responses),
        })
    }

    pub fn predictors(&self) -> &PredictorCurves {
        &self.predictors
    }

    pub fn responses(&self) -> &DVector<f64> {
        &self.responses
    }

    pub fn grid(&self) -> &[f64] {
        self.predictors.grid()
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            predictors: self.predictors.select_rows(rows),
            responses: DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.responses[i])),
        }
    }

    pub fn with_responses(&self, responses: Vec<f64>) -> Result<Self> {
        Self::new(self.predictors.clone(), responses)
    }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InvalidDataset(format!(
            "grid needs at least 2 points, got {}",
            grid.len()
        )));
    }
    if let Some(t) = grid.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::InvalidDataset(format!("grid point {t} outside [0, 1]")));
    }
    if let Some(i) = grid.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::InvalidDataset(format!(
            "grid not strictly increasing at column {}",
            i + 2
        )));
    }
    Ok(())
}

/// `diag(w) B` where `B[j][m] = B_m(t_j)` and `w` are trapezoid weights.
///
/// Fails when some basis function is nonzero at fewer than two grid points.
pub fn weighted_basis(grid: &[f64], basis: &BSplineBasis) -> Result<DMatrix<f64>> {
    let mut b = basis.eval_matrix(grid)?;
    for (index, col) in b.column_iter().enumerate() {
        let points = col.iter().filter(|v| **v != 0.0).count();
        if points < 2 {
            return Err(Error::InsufficientResolution { index, points });
        }
    }
    let w = trapezoid_weights(grid);
    for (mut row, w) in b.row_iter_mut().zip(&w) {
        row *= *w;
    }
    Ok(b)
}

const NULL_EIGENVALUE_RATIO: f64 = 1e-11;

/// `X`, the intercept-augmented `Z = [1, X]` and `D*_q = diag(0, D_q)`.
///
/// Also keeps `Z` expressed in the eigenbasis of `D*`, where the penalty is
/// diagonal; the penalized solves work there.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrices {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub penalty_star: DMatrix<f64>,
    rotation: DMatrix<f64>,
    penalty_eigenvalues: DVector<f64>,
    z_rotated: DMatrix<f64>,
}

impl DesignMatrices {
    pub fn assemble(
        predictors: &PredictorCurves,
        basis: &BSplineBasis,
        penalty: &PenaltyMatrix,
    ) -> Result<Self> {
        let x = predictors.inner_products(basis)?;
        Ok(Self::from_parts(x, &penalty.matrix))
    }

    pub fn from_parts(x: DMatrix<f64>, penalty: &DMatrix<f64>) -> Self {
        let (n, dim) = x.shape();
        assert_eq!(penalty.shape(), (dim, dim), "penalty does not match design");
        let mut z = DMatrix::from_element(n, dim + 1, 1.0);
        z.view_mut((0, 1), (n, dim)).copy_from(&x);
        let mut penalty_star = DMatrix::zeros(dim + 1, dim + 1);
        penalty_star.view_mut((1, 1), (dim, dim)).copy_from(penalty);
        let eig = penalty.clone().symmetric_eigen();
        let mut rotation = DMatrix::zeros(dim + 1, dim + 1);
        rotation[(0, 0)] = 1.0;
        rotation.view_mut((1, 1), (dim, dim)).copy_from(&eig.eigenvectors);
        // eigenvalues at rounding level belong to the polynomial null space
        let cutoff = eig.eigenvalues.amax() * NULL_EIGENVALUE_RATIO;
        let mut penalty_eigenvalues = DVector::zeros(dim + 1);
        for (i, v) in eig.eigenvalues.iter().enumerate() {
            penalty_eigenvalues[i + 1] = if *v > cutoff { *v } else { 0.0 };
        }
        let z_rotated = &z * &rotation;
        Self {
            x,
            z,
            penalty_star,
            rotation,
            penalty_eigenvalues,
            z_rotated,
        }
    }

    /// Orthogonal `T` with `Tᵀ D* T` diagonal.
    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    /// Diagonal of `Tᵀ D* T`, with rounding-level entries set to zero.
    pub fn penalty_eigenvalues(&self) -> &DVector<f64> {
        &self.penalty_eigenvalues
    }

    /// `Z T`.
    pub fn z_rotated(&self) -> &DMatrix<f64> {
        &self.z_rotated
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn columns(&self) -> usize {
        self.z.ncols()
    }
}

/// `n⁻¹ Σ_i (∫ X_i f)²`, the empirical covariance semi-norm of `f`.
pub fn gamma_n_seminorm_sq(predictors: &PredictorCurves, f: &[f64]) -> Result<f64> {
    let proj = predictors.integrate_against(f)?;
    Ok(proj.norm_squared() / predictors.len() as f64)
}

// ---------------------------------------------------------------------------
// CSV ingestion

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader)
}

fn parse_field(field: &str, line: usize, column: usize) -> Result<f64> {
    field.parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("column {column}: '{field}' is not a number"),
    })
}

fn csv_err(err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse {
        line,
        message: err.to_string(),
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<(usize, Vec<f64>)>,
}

fn read_table<R: Read>(reader: R, what: &str) -> Result<Table> {
    let mut rdr = csv_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::EmptyInput(format!("{what} has no header row")));
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != header.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let values = record
            .iter()
            .enumerate()
            .map(|(c, f)| parse_field(f, line, c + 1))
            .collect::<Result<Vec<_>>>()?;
        rows.push((line, values));
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!("{what} has no data rows")));
    }
    Ok(Table { header, rows })
}

fn parse_grid(header: &[String]) -> Result<Vec<f64>> {
    header
        .iter()
        .enumerate()
        .map(|(c, h)| parse_field(h, 1, c + 1))
        .collect()
}

fn curves_from_rows(grid: Vec<f64>, rows: &[(usize, Vec<f64>)], skip: usize) -> Result<PredictorCurves> {
    let k = grid.len();
    let n = rows.len();
    let mut values = DMatrix::zeros(n, k);
    for (i, (line, row)) in rows.iter().enumerate() {
        for (j, v) in row[skip..].iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: *line,
                    message: format!("column {}: non-finite value", j + skip + 1),
                });
            }
            values[(i, j)] = *v;
        }
    }
    PredictorCurves::new(grid, values)
}

/// Predictor CSV: a header of grid values, then one curve per row.
pub fn read_predictors<R: Read>(reader: R) -> Result<PredictorCurves> {
    let table = read_table(reader, "predictor file")?;
    let grid = parse_grid(&table.header)?;
    curves_from_rows(grid, &table.rows, 0)
}

/// Response CSV: a single `y` column.
pub fn read_responses<R: Read>(reader: R) -> Result<Vec<f64>> {
    let table = read_table(reader, "response file")?;
    if table.header.len() != 1 {
        return Err(Error::Parse {
            line: 1,
            message: format!("response file must have one column, found {}", table.header.len()),
        });
    }
    Ok(table.rows.into_iter().map(|(_, r)| r[0]).collect())
}

/// Combined CSV: a leading `y` column followed by grid columns.
pub fn read_combined<R: Read>(reader: R) -> Result<FunctionalDataset> {
    let table = read_table(reader, "data file")?;
    if table.header[0] != "y" {
        return Err(Error::Parse {
            line: 1,
            message: format!("first column of a combined file must be 'y', found '{}'", table.header[0]),
        });
    }
    let grid = parse_grid(&table.header[1..])?;
    let curves = curves_from_rows(grid, &table.rows, 1)?;
    let y = table.rows.iter().map(|(_, r)| r[0]).collect();
    FunctionalDataset::new(curves, y)
}

pub fn load_predictors(path: &Path) -> Result<PredictorCurves> {
    read_predictors(std::fs::File::open(path)?)
}

/// Load separate predictor and response files, aligned by row order.
pub fn load_dataset(predictors: &Path, responses: &Path) -> Result<FunctionalDataset> {
    let curves = load_predictors(predictors)?;
    let y = read_responses(std::fs::File::open(responses)?)?;
    FunctionalDataset::new(curves, y)
}

pub fn load_combined(path: &Path) -> Result<FunctionalDataset> {
    read_combined(std::fs::File::open(path)?)
}

/// Write curves in the predictor CSV layout.
pub fn write_predictors<W: std::io::Write>(writer: W, curves: &PredictorCurves) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(curves.grid().iter().map(|t| format!("{t}")))
        .map_err(io)?;
    for row in curves.values().row_iter() {
        w.write_record(row.iter().map(|v| format!("{v}"))).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Write responses in the single-column `y` layout.
pub fn write_responses<W: std::io::Write>(writer: W, y: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["y"]).map_err(io)?;
    for v in y {
        w.write_record([format!("{v}")]).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
