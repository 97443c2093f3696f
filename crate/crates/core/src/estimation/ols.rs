use nalgebra::{DVector, SVD};
use rayon::prelude::*;

use super::{check_designs, FitReport, Method, NodeFailure, NodeFit, StackedCoefficients};
use crate::dataset::NodeDesign;
use crate::error::Result;

/// Per-node ordinary least squares through a thin SVD of the design.
///
/// A node whose design is rank deficient keeps a zero row in the estimate and
/// reports its condition number; the remaining nodes are still fitted.
pub fn fit_ols(designs: &[NodeDesign], dim: usize, lag: usize) -> Result<FitReport> {
    check_designs(designs, dim, lag)?;
    let fits: Vec<(DVector<f64>, NodeFit)> = designs.par_iter().map(solve_node).collect();
    let mut estimate = StackedCoefficients::zeros(dim, lag);
    let mut nodes = Vec::with_capacity(dim);
    for (i, (theta, fit)) in fits.into_iter().enumerate() {
        estimate.theta.row_mut(i).copy_from(&theta.transpose());
        nodes.push(fit);
    }
    Ok(FitReport {
        method: Method::Ols,
        lambda: 0.0,
        estimate,
        nodes,
    })
}

fn solve_node(d: &NodeDesign) -> (DVector<f64>, NodeFit) {
    let width = d.width();
    let rows = d.nrows();
    let failed = |condition: f64| {
        (
            DVector::zeros(width),
            NodeFit {
                node: d.node,
                rows,
                objective: d.response.norm_squared(),
                iterations: 0,
                converged: false,
                failure: Some(NodeFailure::RankDeficient { condition }),
            },
        )
    };
    if rows < width || width == 0 {
        return failed(f64::INFINITY);
    }
    let svd = SVD::new(d.design.clone(), true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    let rank_tol = rows.max(width) as f64 * f64::EPSILON * s_max;
    if !(s_min > rank_tol) {
        let condition = if s_min > 0.0 {
            s_max / s_min
        } else {
            f64::INFINITY
        };
        return failed(condition);
    }
    let theta = svd
        .solve(&d.response, 0.0)
        .expect("both singular factors were computed");
    let objective = (&d.response - &d.design * &theta).norm_squared();
    (
        theta,
        NodeFit {
            node: d.node,
            rows,
            objective,
            iterations: 1,
            converged: true,
            failure: None,
        },
    )
}
