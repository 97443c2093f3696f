use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{check_designs, FitConfig, FitReport, Method, NodeFit, StackedCoefficients};
use crate::dataset::NodeDesign;
use crate::error::Result;

/// `sign(z) * max(|z| - gamma, 0)`.
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Smallest penalty at which the all-zero solution is optimal for every
/// node: `2 max_{i,j} |X_i^T y_i|_j`.
pub fn critical_lambda(designs: &[NodeDesign]) -> f64 {
    designs
        .iter()
        .map(|d| (d.design.transpose() * &d.response).amax() * 2.0)
        .fold(0.0, f64::max)
}

/// Per-node LASSO, `||y_i - X_i theta_i||^2 + lambda ||theta_i||_1`, by cyclic
/// coordinate descent from a zero start.
///
/// A node converges once a full sweep moves no coordinate by more than
/// `tolerance` and every coordinate meets the subgradient conditions within
/// `tolerance`. Nodes that hit `max_iterations` keep their last iterate and
/// are flagged as not converged.
pub fn fit_lasso(
    designs: &[NodeDesign],
    dim: usize,
    lag: usize,
    config: &FitConfig,
) -> Result<FitReport> {
    config.validate()?;
    check_designs(designs, dim, lag)?;
    let fits: Vec<(DVector<f64>, NodeFit)> =
        designs.par_iter().map(|d| solve_node(d, config)).collect();
    let mut estimate = StackedCoefficients::zeros(dim, lag);
    let mut nodes = Vec::with_capacity(dim);
    for (i, (theta, fit)) in fits.into_iter().enumerate() {
        estimate.theta.row_mut(i).copy_from(&theta.transpose());
        nodes.push(fit);
    }
    Ok(FitReport {
        method: Method::Lasso,
        lambda: config.lambda,
        estimate,
        nodes,
    })
}

fn solve_node(d: &NodeDesign, config: &FitConfig) -> (DVector<f64>, NodeFit) {
    let rows = d.nrows();
    let scale: Vec<f64> = if config.standardize && rows > 0 {
        d.design
            .column_iter()
            .map(|c| {
                let rms = (c.norm_squared() / rows as f64).sqrt();
                if rms > 0.0 {
                    rms
                } else {
                    1.0
                }
            })
            .collect()
    } else {
        vec![1.0; d.width()]
    };
    let mut x = d.design.clone();
    for (j, s) in scale.iter().enumerate() {
        if *s != 1.0 {
            x.column_mut(j).unscale_mut(*s);
        }
    }
    let (scaled, iterations, converged) = coordinate_descent(
        &x,
        &d.response,
        config.lambda,
        config.max_iterations,
        config.tolerance,
    );
    let theta = DVector::from_fn(scaled.len(), |j, _| scaled[j] / scale[j]);
    let objective =
        (&d.response - &d.design * &theta).norm_squared() + config.lambda * theta.lp_norm(1);
    (
        theta,
        NodeFit {
            node: d.node,
            rows,
            objective,
            iterations,
            converged,
            failure: None,
        },
    )
}

/// Largest violation of the optimality conditions of
/// `||y - X b||^2 + lambda ||b||_1` at `b` given the residual `r = y - X b`.
pub(crate) fn kkt_violation(
    x: &DMatrix<f64>,
    r: &DVector<f64>,
    b: &DVector<f64>,
    lambda: f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for (j, col) in x.column_iter().enumerate() {
        let g = 2.0 * col.dot(r);
        let v = if b[j] != 0.0 {
            (g - lambda * b[j].signum()).abs()
        } else {
            (g.abs() - lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

fn coordinate_descent(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    max_iterations: usize,
    tolerance: f64,
) -> (DVector<f64>, usize, bool) {
    let p = x.ncols();
    let col_sq: Vec<f64> = x.column_iter().map(|c| c.norm_squared()).collect();
    let mut b: DVector<f64> = DVector::zeros(p);
    let mut r = y.clone();
    let half = lambda / 2.0;
    for iteration in 1..=max_iterations {
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = x.column(j);
            let rho = col.dot(&r) + col_sq[j] * b[j];
            let next = soft_threshold(rho, half) / col_sq[j];
            let change = next - b[j];
            if change != 0.0 {
                r.axpy(-change, &col, 1.0);
                b[j] = next;
            }
            max_change = max_change.max(change.abs());
        }
        if max_change <= tolerance {
            // refresh the residual so accumulated updates do not bias the check
            r = y - x * &b;
            if kkt_violation(x, &r, &b, lambda) <= tolerance {
                return (b, iteration, true);
            }
        }
    }
    (b, max_iterations, false)
}
