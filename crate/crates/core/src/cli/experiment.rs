//! Joint versus observational-only fits, singly or over a seed sweep.

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{budget_selection, build_designs, IndexPartition, Trial};
use crate::error::Result;
use crate::estimation::{
    coefficient_mse, fit, FitConfig, FitReport, MseReport, StackedCoefficients,
};
use crate::intervention::InterventionSchedule;
use crate::model::{RandomModelSpec, VarModel};
use crate::simulate::{simulate, Recording};

#[derive(Debug, Clone)]
pub struct Comparison {
    /// Rows from every regime that leaves the node's mechanism intact.
    pub joint: FitReport,
    /// Rows from unintervened steps only.
    pub observational: FitReport,
}

impl Comparison {
    pub fn failed(&self) -> bool {
        [&self.joint, &self.observational]
            .iter()
            .any(|r| r.failures().next().is_some() || !r.all_converged())
    }
}

/// Fits both estimators to one recording. With a budget, each fit sees at
/// most `budget` time points: the joint fit all intervened steps first,
/// both fits the earliest observational steps.
pub fn compare_fits(
    recording: &Recording,
    schedule: &InterventionSchedule,
    lag: usize,
    budget: Option<usize>,
    config: &FitConfig,
) -> Result<Comparison> {
    let dim = recording.dim();
    let base = Trial::from_schedule(recording.clone(), schedule)?;
    let partition = base.partition().clone();
    let joint_trial = match budget {
        Some(b) => base
            .clone()
            .with_selection(budget_selection(&partition, b, true)?)?,
        None => base.clone(),
    };
    let observational_mask = match budget {
        Some(b) => budget_selection(&partition, b, false)?,
        None => observational_mask(&partition),
    };
    let observational_trial = base.with_selection(observational_mask)?;
    let joint = fit(&build_designs(&[joint_trial], lag)?, dim, lag, config)?;
    let observational = fit(
        &build_designs(&[observational_trial], lag)?,
        dim,
        lag,
        config,
    )?;
    Ok(Comparison {
        joint,
        observational,
    })
}

fn observational_mask(partition: &IndexPartition) -> Vec<bool> {
    (1..=partition.horizon())
        .map(|t| partition.owner(t).is_none())
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialScore {
    pub joint: MseReport,
    pub observational: MseReport,
}

pub fn score(comparison: &Comparison, truth: &VarModel) -> Result<TrialScore> {
    let truth = StackedCoefficients::from_model(truth);
    Ok(TrialScore {
        joint: coefficient_mse(&comparison.joint.estimate, &truth)?,
        observational: coefficient_mse(&comparison.observational.estimate, &truth)?,
    })
}

/// Everything needed to rerun one trial of a sweep.
#[derive(Debug, Clone)]
pub struct SweepSetup<'a> {
    /// `None` keeps `fixed_model` for every trial.
    pub random: Option<&'a RandomModelSpec>,
    pub fixed_model: Option<&'a VarModel>,
    pub schedule: &'a InterventionSchedule,
    pub horizon: usize,
    pub seed: u64,
    pub budget: Option<usize>,
    pub config: &'a FitConfig,
}

#[derive(Debug, Clone)]
pub struct SweepTrial {
    /// Offset added to both seeds.
    pub offset: u64,
    pub truth: VarModel,
    pub comparison: Comparison,
    pub score: TrialScore,
}

impl SweepSetup<'_> {
    pub fn trial(&self, offset: u64) -> Result<SweepTrial> {
        let truth = match (self.random, self.fixed_model) {
            (Some(spec), _) => RandomModelSpec {
                seed: spec.seed.wrapping_add(offset),
                ..spec.clone()
            }
            .generate()?,
            (None, Some(model)) => model.clone(),
            (None, None) => {
                return Err(crate::error::Error::Config(
                    "a seed sweep needs a model".into(),
                ))
            }
        };
        let recording = simulate(
            &truth,
            self.schedule,
            self.horizon,
            None,
            self.seed.wrapping_add(offset),
        )?;
        let comparison = compare_fits(
            &recording,
            self.schedule,
            truth.lag(),
            self.budget,
            self.config,
        )?;
        let score = score(&comparison, &truth)?;
        Ok(SweepTrial {
            offset,
            truth,
            comparison,
            score,
        })
    }

    /// Trials run in parallel; results come back in offset order.
    pub fn run(&self, start: u64, count: usize) -> Result<Vec<SweepTrial>> {
        (0..count as u64)
            .into_par_iter()
            .map(|k| self.trial(start + k))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub trials: usize,
    /// Per-lag medians over trials.
    pub joint_median: Vec<f64>,
    pub observational_median: Vec<f64>,
    pub joint_better: Vec<bool>,
}

pub fn summarize(trials: &[SweepTrial]) -> SweepSummary {
    let lags = trials.first().map_or(0, |t| t.score.joint.per_lag.len());
    let per_lag = |pick: fn(&TrialScore) -> &MseReport| -> Vec<f64> {
        (0..lags)
            .map(|q| median(trials.iter().map(|t| pick(&t.score).per_lag[q]).collect()))
            .collect()
    };
    let joint_median = per_lag(|s| &s.joint);
    let observational_median = per_lag(|s| &s.observational);
    let joint_better = joint_median
        .iter()
        .zip(&observational_median)
        .map(|(j, o)| j < o)
        .collect();
    SweepSummary {
        trials: trials.len(),
        joint_median,
        observational_median,
        joint_better,
    }
}

/// Mean of the two middle values for even lengths; NaN when empty.
pub fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intervention::{ScheduleEntry, Window};
    use crate::model::CovarianceSpec;

    #[test]
    fn medians() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(vec![]).is_nan());
    }

    #[test]
    fn budgeted_fits_use_matching_row_counts() {
        let spec = RandomModelSpec {
            dim: 3,
            lag: 2,
            coeff_low: -0.5,
            coeff_high: 0.5,
            zero_prob: 0.3,
            covariance: CovarianceSpec::Scaled { value: 1.0 },
            seed: 4,
            require_stable: true,
            max_attempts: 1000,
        };
        let model = spec.generate().unwrap();
        let wave: Vec<f64> = (31..=50).map(|t| (t as f64 / 2.0).sin()).collect();
        let schedule = InterventionSchedule::new(vec![ScheduleEntry::clamp(
            0,
            Window::new(31, 50).unwrap(),
            wave,
        )
        .unwrap()])
        .unwrap();
        let rec = simulate(&model, &schedule, 120, None, 1).unwrap();
        let c = compare_fits(&rec, &schedule, 2, Some(80), &FitConfig::default()).unwrap();
        // observational: t = 3..=30 and 51..=100
        assert!(c.observational.nodes.iter().all(|n| n.rows == 78));
        // joint: node 1 loses its 20 clamped steps, the others keep them
        assert_eq!(c.joint.nodes[0].rows, 58);
        assert_eq!(c.joint.nodes[1].rows, 78);
        assert!(!c.failed());
        let s = score(&c, &model).unwrap();
        assert_eq!(s.joint.per_lag.len(), 2);
    }
}
