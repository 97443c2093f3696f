use nalgebra::DVector;

use super::StackedCoefficients;
use crate::dataset::{NodeDesign, Trial};
use crate::error::{Error, Result};

/// Joint objective written over whole state vectors:
/// `sum_{t in T_0} ||x_t - Theta xbar_t||^2 + sum_i sum_{t in T_i} ||x_t^[-i] - Theta^[-i] xbar_t||^2`,
/// where `^[-i]` deletes row `i`.
pub fn objective_naive(theta: &StackedCoefficients, trials: &[Trial]) -> Result<f64> {
    let dim = theta.dim();
    let lag = theta.lag();
    let mut total = 0.0;
    for (k, trial) in trials.iter().enumerate() {
        let rec = trial.recording();
        if rec.dim() != dim {
            return Err(Error::DimensionMismatch(format!(
                "trial {} has {} nodes, coefficients have {dim}",
                k + 1,
                rec.dim()
            )));
        }
        for t in lag + 1..=rec.len() {
            if !trial.is_selected(t) {
                continue;
            }
            let xbar = DVector::from_fn(dim * lag, |c, _| {
                rec.values()[(t - 1 - (c / dim + 1), c % dim)]
            });
            let x = rec.state(t);
            let term = match trial.partition().owner(t) {
                None => (x - theta.theta() * &xbar).norm_squared(),
                Some(i) => {
                    let x_minus = x.remove_row(i);
                    let theta_minus = theta.theta().clone().remove_row(i);
                    (x_minus - theta_minus * &xbar).norm_squared()
                }
            };
            total += term;
        }
    }
    Ok(total)
}

/// Stratified objective `sum_i sum_{t in T_{-i}} (x_{i,t} - theta_i^T xbar_t)^2`.
pub fn objective_stratified(theta: &StackedCoefficients, designs: &[NodeDesign]) -> Result<f64> {
    let mut total = 0.0;
    for d in designs {
        if d.node >= theta.dim() || d.width() != theta.theta().ncols() {
            return Err(Error::DimensionMismatch(format!(
                "design for node {} does not match {}x{} coefficients",
                d.node + 1,
                theta.dim(),
                theta.theta().ncols()
            )));
        }
        let row = theta.node_row(d.node);
        total += (&d.response - &d.design * row).norm_squared();
    }
    Ok(total)
}
