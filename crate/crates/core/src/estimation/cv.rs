use serde::Serialize;

use super::{check_designs, fit_lasso, FitConfig};
use crate::dataset::NodeDesign;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub lambdas: Vec<f64>,
    /// Held-out residual sum of squares over all folds and nodes, per lambda.
    pub errors: Vec<f64>,
    pub best_lambda: f64,
}

/// `n` values spaced log-uniformly from `max` down to `max * ratio`.
pub fn log_grid(max: f64, ratio: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![max];
    }
    let step = ratio.ln() / (n - 1) as f64;
    (0..n).map(|k| max * (step * k as f64).exp()).collect()
}

/// K-fold selection of a shared lambda with contiguous row blocks as folds.
///
/// Ties resolve to the larger lambda (sparser fit).
pub fn cross_validate_lambda(
    designs: &[NodeDesign],
    dim: usize,
    lag: usize,
    grid: &[f64],
    folds: usize,
    config: &FitConfig,
) -> Result<CvReport> {
    check_designs(designs, dim, lag)?;
    if grid.is_empty() {
        return Err(Error::Config("lambda grid is empty".into()));
    }
    let min_rows = designs.iter().map(|d| d.nrows()).min().unwrap_or(0);
    if folds < 2 || folds > min_rows {
        return Err(Error::Config(format!(
            "need 2 <= folds <= {min_rows} (smallest node row count), got {folds}"
        )));
    }
    let splits: Vec<Vec<(NodeDesign, NodeDesign)>> = (0..folds)
        .map(|k| {
            designs
                .iter()
                .map(|d| {
                    let n = d.nrows();
                    d.split(k * n / folds, (k + 1) * n / folds)
                })
                .collect()
        })
        .collect();
    let mut errors = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let cfg = FitConfig {
            lambda,
            ..config.clone()
        };
        let mut sse = 0.0;
        for fold in &splits {
            let train: Vec<NodeDesign> = fold.iter().map(|(tr, _)| tr.clone()).collect();
            let report = fit_lasso(&train, dim, lag, &cfg)?;
            for (i, (_, test)) in fold.iter().enumerate() {
                let theta = report.estimate.node_row(i);
                sse += (&test.response - &test.design * theta).norm_squared();
            }
        }
        errors.push(sse);
    }
    let mut best = 0;
    for (k, e) in errors.iter().enumerate() {
        let better = *e < errors[best] || (*e == errors[best] && grid[k] > grid[best]);
        if better {
            best = k;
        }
    }
    Ok(CvReport {
        lambdas: grid.to_vec(),
        errors,
        best_lambda: grid[best],
    })
}
