//! Joint coefficient estimation from stratified regression rows.
//!
//! Node `i`'s row `theta_i` of `Theta = [B_1 ... B_Q]` is fitted only from
//! time steps in `T_{-i}`, so each node is an independent least-squares
//! (or L1-penalized) subproblem.

mod cv;
mod lasso;
mod objective;
mod ols;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::NodeDesign;
use crate::error::{Error, Result};
use crate::model::{matrix_to_rows, VarModel};
use crate::simulate::Residuals;

pub use cv::{cross_validate_lambda, log_grid, CvReport};
pub use lasso::{critical_lambda, fit_lasso, soft_threshold};
pub use objective::{objective_naive, objective_stratified};
pub use ols::fit_ols;

/// `Theta = [B_1 ... B_Q]`, a `D x (D Q)` matrix whose row `i` is `theta_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedCoefficients {
    theta: DMatrix<f64>,
    lag: usize,
}

impl StackedCoefficients {
    pub fn new(theta: DMatrix<f64>, lag: usize) -> Result<Self> {
        if lag == 0 || theta.ncols() != theta.nrows() * lag {
            return Err(Error::DimensionMismatch(format!(
                "stacked coefficients must be D x (D*Q); got {}x{} with Q={lag}",
                theta.nrows(),
                theta.ncols()
            )));
        }
        Ok(Self { theta, lag })
    }

    pub fn zeros(dim: usize, lag: usize) -> Self {
        Self {
            theta: DMatrix::zeros(dim, dim * lag),
            lag,
        }
    }

    pub fn from_blocks(blocks: &[DMatrix<f64>]) -> Result<Self> {
        let lag = blocks.len();
        let dim = blocks.first().map_or(0, |b| b.nrows());
        if lag == 0 || blocks.iter().any(|b| b.shape() != (dim, dim)) {
            return Err(Error::DimensionMismatch(
                "lag blocks must be a non-empty list of equal square matrices".into(),
            ));
        }
        let mut theta = DMatrix::zeros(dim, dim * lag);
        for (q, b) in blocks.iter().enumerate() {
            theta.view_mut((0, q * dim), (dim, dim)).copy_from(b);
        }
        Ok(Self { theta, lag })
    }

    pub fn from_model(model: &VarModel) -> Self {
        Self::from_blocks(model.coeffs()).expect("model blocks are consistent")
    }

    pub fn dim(&self) -> usize {
        self.theta.nrows()
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    /// `theta_i` as a column vector.
    pub fn node_row(&self, node: usize) -> DVector<f64> {
        self.theta.row(node).transpose()
    }

    /// `B_q` for `q` in `1..=Q`.
    pub fn block(&self, q: usize) -> DMatrix<f64> {
        let d = self.dim();
        self.theta.view((0, (q - 1) * d), (d, d)).into_owned()
    }

    pub fn blocks(&self) -> Vec<DMatrix<f64>> {
        (1..=self.lag).map(|q| self.block(q)).collect()
    }

    pub fn to_model(&self, noise_cov: DMatrix<f64>) -> Result<VarModel> {
        VarModel::new(self.blocks(), noise_cov)
    }

    /// Long-format heat-map data `q,i,j,value` with 1-based indices.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "q,i,j,value").map_err(io)?;
        for q in 1..=self.lag {
            let b = self.block(q);
            for i in 0..b.nrows() {
                for j in 0..b.ncols() {
                    writeln!(out, "{q},{},{},{}", i + 1, j + 1, b[(i, j)]).map_err(io)?;
                }
            }
        }
        out.flush().map_err(io)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ols,
    Lasso,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub method: Method,
    pub lambda: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the largest coordinate change per sweep.
    pub tolerance: f64,
    /// Fit on unit-RMS columns internally; coefficients are always reported
    /// in the original units.
    pub standardize: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            method: Method::Ols,
            lambda: 0.0,
            max_iterations: 10_000,
            tolerance: 1e-8,
            standardize: false,
        }
    }
}

impl FitConfig {
    pub fn lasso(lambda: f64) -> Self {
        Self {
            method: Method::Lasso,
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!(
                "lambda must be a finite nonnegative number, got {}",
                self.lambda
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeFailure {
    /// Design not of full column rank; `condition` is `sigma_max / sigma_min`
    /// (infinite when there are fewer rows than columns).
    RankDeficient { condition: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFit {
    /// 1-based in serialized reports.
    #[serde(with = "one_based")]
    pub node: usize,
    pub rows: usize,
    /// Node objective at the estimate: residual sum of squares, plus
    /// `lambda * ||theta_i||_1` for the LASSO.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub failure: Option<NodeFailure>,
}

mod one_based {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &usize, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(*v as u64 + 1)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<usize, D::Error> {
        let v = u64::deserialize(d)?;
        v.checked_sub(1)
            .map(|v| v as usize)
            .ok_or_else(|| serde::de::Error::custom("node numbers start at 1"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub method: Method,
    pub lambda: f64,
    pub estimate: StackedCoefficients,
    pub nodes: Vec<NodeFit>,
}

impl FitReport {
    pub fn all_converged(&self) -> bool {
        self.nodes.iter().all(|n| n.converged)
    }

    pub fn failures(&self) -> impl Iterator<Item = &NodeFit> {
        self.nodes.iter().filter(|n| n.failure.is_some())
    }

    pub fn total_objective(&self) -> f64 {
        self.nodes.iter().map(|n| n.objective).sum()
    }

    pub fn to_file(&self) -> FitReportFile {
        FitReportFile {
            method: self.method,
            lambda: self.lambda,
            dim: self.estimate.dim(),
            lag: self.estimate.lag(),
            blocks: self.estimate.blocks().iter().map(matrix_to_rows).collect(),
            nodes: self.nodes.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(&self.to_file()).expect("report serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Serialized fit report; `blocks[q - 1]` is `B_q` as a list of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReportFile {
    pub method: Method,
    pub lambda: f64,
    pub dim: usize,
    pub lag: usize,
    pub blocks: Vec<Vec<Vec<f64>>>,
    pub nodes: Vec<NodeFit>,
}

fn check_designs(designs: &[NodeDesign], dim: usize, lag: usize) -> Result<()> {
    if designs.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "expected one design per node ({dim}), got {}",
            designs.len()
        )));
    }
    for (i, d) in designs.iter().enumerate() {
        if d.node != i || d.width() != dim * lag || d.response.len() != d.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "design {} must target node {} with {} columns",
                i + 1,
                i + 1,
                dim * lag
            )));
        }
    }
    Ok(())
}

/// Dispatches on `config.method`.
pub fn fit(
    designs: &[NodeDesign],
    dim: usize,
    lag: usize,
    config: &FitConfig,
) -> Result<FitReport> {
    match config.method {
        Method::Ols => fit_ols(designs, dim, lag),
        Method::Lasso => fit_lasso(designs, dim, lag, config),
    }
}

/// Per lag `MSE_q = (1/D^2) sum_{i,j} (b_{q,i,j} - b^_{q,i,j})^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseReport {
    pub per_lag: Vec<f64>,
    pub mean: f64,
}

pub fn coefficient_mse(
    estimate: &StackedCoefficients,
    truth: &StackedCoefficients,
) -> Result<MseReport> {
    if estimate.dim() != truth.dim() || estimate.lag() != truth.lag() {
        return Err(Error::DimensionMismatch(format!(
            "estimate is D={}, Q={} but truth is D={}, Q={}",
            estimate.dim(),
            estimate.lag(),
            truth.dim(),
            truth.lag()
        )));
    }
    let d2 = (estimate.dim() * estimate.dim()) as f64;
    let per_lag: Vec<f64> = (1..=estimate.lag())
        .map(|q| (estimate.block(q) - truth.block(q)).norm_squared() / d2)
        .collect();
    let mean = per_lag.iter().sum::<f64>() / per_lag.len() as f64;
    Ok(MseReport { per_lag, mean })
}

/// Empirical covariance (about zero) of recovered residuals over time
/// steps where every node's residual is recoverable.
pub fn empirical_noise_cov(residuals: &Residuals) -> Result<DMatrix<f64>> {
    let times = residuals.complete_times();
    if times.is_empty() {
        return Err(Error::Numerical(
            "no time step with fully recoverable residuals".into(),
        ));
    }
    let dim = residuals.dim();
    let w = residuals.filled();
    let mut cov = DMatrix::zeros(dim, dim);
    for &t in &times {
        let row = w.row(t - 1);
        cov += row.transpose() * row;
    }
    Ok(cov / times.len() as f64)
}
