//! Counterfactual prediction for past hypothetical interventions.
//!
//! Two routes are provided. Delta propagation runs the noise-free recursion
//! on `dx_t = x~_t - x_t`: with additive noise and linear mechanisms the
//! noise terms cancel whenever the intervened node's noise coefficient is
//! unchanged (or irrelevant, as under a clamp). Abduction recovers the noise
//! realization from the factual data and re-simulates the modified model.
//!
//! A hypothetical entry replaces the factual mechanism of its node over its
//! window; every other factual mechanism is kept.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervention::{InterventionSchedule, Mechanism};
use crate::model::VarModel;
use crate::simulate::{
    recover_residuals, run_table, slot_deterministic, slot_noise_scale, MechanismTable, Recording,
};

/// Whether the model is the data-generating one or an estimate; in the
/// latter case results are predictions rather than exact counterfactuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelProvenance {
    True,
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterfactualMethod {
    DeltaPropagation,
    AbductionResimulation,
}

#[derive(Debug, Clone, Copy)]
pub struct CounterfactualQuery<'a> {
    pub factual: &'a Recording,
    pub model: &'a VarModel,
    pub hypothetical: &'a InterventionSchedule,
    /// Interventions that really took place while the factual data were recorded.
    pub factual_schedule: &'a InterventionSchedule,
    pub provenance: ModelProvenance,
}

impl<'a> CounterfactualQuery<'a> {
    /// A query against the true model with a purely observational factual run.
    pub fn new(
        factual: &'a Recording,
        model: &'a VarModel,
        hypothetical: &'a InterventionSchedule,
    ) -> Self {
        static EMPTY: InterventionSchedule = InterventionSchedule::EMPTY;
        Self {
            factual,
            model,
            hypothetical,
            factual_schedule: &EMPTY,
            provenance: ModelProvenance::True,
        }
    }

    pub fn with_factual_schedule(mut self, schedule: &'a InterventionSchedule) -> Self {
        self.factual_schedule = schedule;
        self
    }

    pub fn with_provenance(mut self, provenance: ModelProvenance) -> Self {
        self.provenance = provenance;
        self
    }

    fn validate(&self) -> Result<()> {
        let dim = self.model.dim();
        let lag = self.model.lag();
        if self.factual.dim() != dim {
            return Err(Error::DimensionMismatch(format!(
                "factual recording has {} columns, model has {dim} nodes",
                self.factual.dim()
            )));
        }
        let horizon = self.factual.len();
        if horizon <= lag {
            return Err(Error::DimensionMismatch(format!(
                "factual recording length {horizon} must exceed lag {lag}"
            )));
        }
        self.factual_schedule.validate_for(dim, lag, horizon)?;
        self.hypothetical.validate_for(dim, lag, horizon)
    }

    /// Mechanisms of the counterfactual world.
    fn combined_table(&self) -> MechanismTable<'a> {
        let mut table = MechanismTable::from_schedule(
            self.factual_schedule,
            self.model.dim(),
            self.factual.len(),
        );
        table.overlay(self.hypothetical);
        table
    }

    /// Simulates the counterfactual world with a supplied noise realization.
    pub fn resimulate(&self, noise: &DMatrix<f64>) -> Result<Recording> {
        self.validate()?;
        if noise.shape() != self.factual.values().shape() {
            return Err(Error::DimensionMismatch(
                "noise realization must match the factual recording".into(),
            ));
        }
        let initial = self.factual.initial(self.model.lag());
        let values = run_table(self.model, &self.combined_table(), &initial, noise);
        Recording::with_noise(values, noise.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualResult {
    pub factual: DMatrix<f64>,
    pub counterfactual: DMatrix<f64>,
    /// `counterfactual - factual`.
    pub delta: DMatrix<f64>,
    pub method: CounterfactualMethod,
    pub provenance: ModelProvenance,
}

impl CounterfactualResult {
    pub fn dim(&self) -> usize {
        self.factual.ncols()
    }

    pub fn len(&self) -> usize {
        self.factual.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.factual.nrows() == 0
    }

    /// CSV with columns `t, x_1..x_D, xcf_1..xcf_D, delta_1..delta_D`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        let dim = self.dim();
        let mut header = String::from("t");
        for prefix in ["x", "xcf", "delta"] {
            for j in 1..=dim {
                header.push_str(&format!(",{prefix}_{j}"));
            }
        }
        writeln!(out, "{header}").map_err(io)?;
        for r in 0..self.len() {
            write!(out, "{}", r + 1).map_err(io)?;
            for m in [&self.factual, &self.counterfactual, &self.delta] {
                for j in 0..dim {
                    write!(out, ",{}", m[(r, j)]).map_err(io)?;
                }
            }
            writeln!(out).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Noise-free forward propagation of the counterfactual change.
///
/// Every hypothetical mechanism must leave the node's noise coefficient as
/// it was in the factual world (a clamp qualifies wherever the factual node
/// was clamped too, and always when its own value is forced); otherwise
/// [`Error::RequiresNoise`] directs the caller to [`predict_abduction`].
pub fn predict_delta(query: &CounterfactualQuery<'_>) -> Result<CounterfactualResult> {
    query.validate()?;
    let model = query.model;
    let dim = model.dim();
    let lag = model.lag();
    let horizon = query.factual.len();
    let x = query.factual.values();
    let factual_table = MechanismTable::from_schedule(query.factual_schedule, dim, horizon);
    let hyp_table = MechanismTable::from_schedule(query.hypothetical, dim, horizon);

    let factual_rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut delta_rows: Vec<Vec<f64>> = vec![vec![0.0; dim]; horizon];
    let mut cf_rows: Vec<Vec<f64>> = factual_rows.clone();

    for t in lag + 1..=horizon {
        let mut next = vec![0.0; dim];
        {
            let hist_x: Vec<&[f64]> = (1..=lag)
                .map(|q| factual_rows[t - 1 - q].as_slice())
                .collect();
            let hist_d: Vec<&[f64]> = (1..=lag)
                .map(|q| delta_rows[t - 1 - q].as_slice())
                .collect();
            let hist_cf: Vec<&[f64]> = (1..=lag).map(|q| cf_rows[t - 1 - q].as_slice()).collect();
            for (j, d) in next.iter_mut().enumerate() {
                let factual_entry = factual_table.get(j, t);
                *d = match hyp_table.get(j, t) {
                    Some(h) => match h.mechanism() {
                        Mechanism::Clamp { .. } => h.signal_at(t)? - x[(t - 1, j)],
                        Mechanism::Modify { sigma, .. } => {
                            if *sigma != slot_noise_scale(factual_entry) {
                                return Err(Error::RequiresNoise { node: j, t });
                            }
                            h.deterministic(&hist_cf, t)
                                - slot_deterministic(model, factual_entry, j, &hist_x, t)
                        }
                    },
                    None => match factual_entry {
                        None => model.predict_node(j, &hist_d),
                        Some(e) => e.linear_part(&hist_d),
                    },
                };
            }
        }
        for j in 0..dim {
            cf_rows[t - 1][j] = factual_rows[t - 1][j] + next[j];
        }
        delta_rows[t - 1] = next;
    }

    Ok(CounterfactualResult {
        factual: x.clone(),
        counterfactual: DMatrix::from_fn(horizon, dim, |r, c| cf_rows[r][c]),
        delta: DMatrix::from_fn(horizon, dim, |r, c| delta_rows[r][c]),
        method: CounterfactualMethod::DeltaPropagation,
        provenance: query.provenance,
    })
}

/// Abduction, action, prediction: recover `w_t` from the factual data under
/// the factual mechanisms, then re-simulate the counterfactual world with
/// the same realization. Handles any intervention mechanism, provided every
/// residual the counterfactual world needs survived the factual mechanisms.
pub fn predict_abduction(query: &CounterfactualQuery<'_>) -> Result<CounterfactualResult> {
    query.validate()?;
    let model = query.model;
    let lag = model.lag();
    let horizon = query.factual.len();
    let residuals = recover_residuals(model, query.factual, query.factual_schedule)?;
    let table = query.combined_table();
    for t in lag + 1..=horizon {
        for j in 0..model.dim() {
            if slot_noise_scale(table.get(j, t)) != 0.0 && !residuals.is_recoverable(j, t) {
                return Err(Error::UnrecoverableResidual { node: j, t });
            }
        }
    }
    let initial = query.factual.initial(lag);
    let counterfactual = run_table(model, &table, &initial, residuals.filled());
    let delta = &counterfactual - query.factual.values();
    Ok(CounterfactualResult {
        factual: query.factual.values().clone(),
        counterfactual,
        delta,
        method: CounterfactualMethod::AbductionResimulation,
        provenance: query.provenance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectSummary {
    /// `||dx_t||_2` for `t = 1..T` (index `t - 1`).
    pub norms: Vec<f64>,
    /// First time step with a nonzero change.
    pub onset: Option<usize>,
}

pub fn effect_summary(result: &CounterfactualResult) -> EffectSummary {
    let norms: Vec<f64> = result.delta.row_iter().map(|r| r.norm()).collect();
    let onset = norms.iter().position(|n| *n != 0.0).map(|k| k + 1);
    EffectSummary { norms, onset }
}
