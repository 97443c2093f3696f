//! The VAR(Q) structural causal model and its file representation.
//!
//! Each node obeys `x_{i,t} := sum_q b_{q,i}^T x_{t-q} + w_{i,t}` with
//! `w_t ~ N(0, C)`. Models are immutable once built.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::effects;
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct VarModel {
    coeffs: Vec<DMatrix<f64>>,
    noise_cov: DMatrix<f64>,
    /// Square root `L` of the noise covariance, `L L^T = C`.
    noise_factor: DMatrix<f64>,
}

impl VarModel {
    /// Builds a model from lag matrices `B_1..B_Q` and the noise covariance.
    ///
    /// Rejects empty lag lists, non-square or mismatched blocks, and a
    /// covariance that is not symmetric positive semidefinite.
    pub fn new(coeffs: Vec<DMatrix<f64>>, noise_cov: DMatrix<f64>) -> Result<Self> {
        let lag = coeffs.len();
        if lag == 0 {
            return Err(Error::InvalidModel("lag order must be at least 1".into()));
        }
        let dim = coeffs[0].nrows();
        if dim == 0 {
            return Err(Error::InvalidModel("dimension must be at least 1".into()));
        }
        for (q, b) in coeffs.iter().enumerate() {
            if b.shape() != (dim, dim) {
                return Err(Error::InvalidModel(format!(
                    "coefficient matrix B_{} has shape {}x{}, expected {dim}x{dim}",
                    q + 1,
                    b.nrows(),
                    b.ncols()
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "coefficient matrix B_{} has non-finite entries",
                    q + 1
                )));
            }
        }
        if noise_cov.shape() != (dim, dim) {
            return Err(Error::InvalidModel(format!(
                "noise covariance has shape {}x{}, expected {dim}x{dim}",
                noise_cov.nrows(),
                noise_cov.ncols()
            )));
        }
        if noise_cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel(
                "noise covariance has non-finite entries".into(),
            ));
        }
        for i in 0..dim {
            for j in 0..i {
                let gap = (noise_cov[(i, j)] - noise_cov[(j, i)]).abs();
                if gap > SYMMETRY_TOL {
                    return Err(Error::InvalidModel(format!(
                        "noise covariance is not symmetric: |C[{},{}] - C[{},{}]| = {gap:e}",
                        i + 1,
                        j + 1,
                        j + 1,
                        i + 1
                    )));
                }
            }
        }
        let noise_factor = covariance_factor(&noise_cov)?;
        Ok(Self {
            coeffs,
            noise_cov,
            noise_factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.noise_cov.nrows()
    }

    pub fn lag(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    /// `B_q` for `q` in `1..=Q`.
    pub fn coeff(&self, q: usize) -> &DMatrix<f64> {
        &self.coeffs[q - 1]
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    pub fn noise_factor(&self) -> &DMatrix<f64> {
        &self.noise_factor
    }

    /// Natural mechanism output without noise: `sum_q b_{q,i}^T x_{t-q}`.
    ///
    /// `history[q - 1]` is the state `x_{t-q}`.
    pub fn predict_node(&self, node: usize, history: &[&[f64]]) -> f64 {
        let mut acc = 0.0;
        for (b, state) in self.coeffs.iter().zip(history) {
            for (j, x) in state.iter().enumerate() {
                acc += b[(node, j)] * x;
            }
        }
        acc
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            dim: self.dim(),
            lag: self.lag(),
            coeffs: self.coeffs.iter().map(matrix_to_rows).collect(),
            noise_cov: matrix_to_rows(&self.noise_cov),
        }
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        if file.coeffs.len() != file.lag {
            return Err(Error::InvalidModel(format!(
                "lag is {} but {} coefficient matrices were given",
                file.lag,
                file.coeffs.len()
            )));
        }
        let coeffs = file
            .coeffs
            .iter()
            .enumerate()
            .map(|(q, rows)| rows_to_matrix(rows, file.dim, &format!("B_{}", q + 1)))
            .collect::<Result<Vec<_>>>()?;
        let noise_cov = rows_to_matrix(&file.noise_cov, file.dim, "noise_cov")?;
        Self::new(coeffs, noise_cov)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_file(&file).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(&self.to_file()).expect("model serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// On-disk model document. Matrices are lists of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub dim: usize,
    pub lag: usize,
    pub coeffs: Vec<Vec<Vec<f64>>>,
    pub noise_cov: Vec<Vec<f64>>,
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>], dim: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::InvalidModel(format!("{what} must be {dim}x{dim}")));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

/// Cholesky factor when `C` is positive definite, otherwise the symmetric
/// eigen square root with eigenvalues clipped at zero.
fn covariance_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eigen = SymmetricEigen::new(cov.clone());
    if let Some(min) = eigen.eigenvalues.iter().copied().reduce(f64::min) {
        if min < -PSD_TOL {
            return Err(Error::InvalidModel(format!(
                "noise covariance is not positive semidefinite (min eigenvalue {min:e})"
            )));
        }
    }
    if let Some(chol) = cov.clone().cholesky() {
        return Ok(chol.unpack());
    }
    let sqrt = eigen.eigenvalues.map(|l| l.max(0.0).sqrt());
    let mut factor = eigen.eigenvectors.clone();
    for (j, s) in sqrt.iter().enumerate() {
        factor.column_mut(j).scale_mut(*s);
    }
    Ok(factor)
}

/// Noise covariance families used by the random generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceSpec {
    /// Tridiagonal Toeplitz: `diag` on the diagonal, `off` on the first off-diagonals.
    Toeplitz {
        diag: f64,
        off: f64,
    },
    /// `value * I`.
    Scaled {
        value: f64,
    },
    Zero,
    Full {
        matrix: Vec<Vec<f64>>,
    },
}

impl CovarianceSpec {
    pub fn build(&self, dim: usize) -> Result<DMatrix<f64>> {
        match self {
            CovarianceSpec::Toeplitz { diag, off } => {
                Ok(DMatrix::from_fn(dim, dim, |i, j| match i.abs_diff(j) {
                    0 => *diag,
                    1 => *off,
                    _ => 0.0,
                }))
            }
            CovarianceSpec::Scaled { value } => Ok(DMatrix::identity(dim, dim) * *value),
            CovarianceSpec::Zero => Ok(DMatrix::zeros(dim, dim)),
            CovarianceSpec::Full { matrix } => rows_to_matrix(matrix, dim, "covariance"),
        }
    }
}

fn default_stable_attempts() -> usize {
    1000
}

/// Random sparse VAR generator: entries `U(low, high)`, each independently
/// zeroed with probability `zero_prob`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomModelSpec {
    pub dim: usize,
    pub lag: usize,
    pub coeff_low: f64,
    pub coeff_high: f64,
    pub zero_prob: f64,
    pub covariance: CovarianceSpec,
    pub seed: u64,
    /// Redraw (continuing the same random stream) until the companion
    /// spectral radius is below one.
    #[serde(default)]
    pub require_stable: bool,
    #[serde(default = "default_stable_attempts")]
    pub max_attempts: usize,
}

impl RandomModelSpec {
    pub fn generate(&self) -> Result<VarModel> {
        if self.dim == 0 || self.lag == 0 {
            return Err(Error::InvalidModel("dim and lag must be positive".into()));
        }
        if !(self.coeff_low < self.coeff_high) {
            return Err(Error::InvalidModel(format!(
                "coefficient range [{}, {}) is empty",
                self.coeff_low, self.coeff_high
            )));
        }
        if !(0.0..=1.0).contains(&self.zero_prob) {
            return Err(Error::InvalidModel(format!(
                "zero probability {} outside [0, 1]",
                self.zero_prob
            )));
        }
        let noise_cov = self.covariance.build(self.dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let attempts = if self.require_stable {
            self.max_attempts.max(1)
        } else {
            1
        };
        for _ in 0..attempts {
            let coeffs = (0..self.lag)
                .map(|_| {
                    let mut b = DMatrix::zeros(self.dim, self.dim);
                    for i in 0..self.dim {
                        for j in 0..self.dim {
                            let value = rng.random_range(self.coeff_low..self.coeff_high);
                            let zeroed = rng.random_bool(self.zero_prob);
                            b[(i, j)] = if zeroed { 0.0 } else { value };
                        }
                    }
                    b
                })
                .collect();
            let model = VarModel::new(coeffs, noise_cov.clone())?;
            if !self.require_stable || effects::stability(&model).stable {
                return Ok(model);
            }
        }
        Err(Error::InvalidModel(format!(
            "no stable model found in {} draws",
            self.max_attempts
        )))
    }
}
