//! Vector autoregressive processes treated as structural causal models.
//!
//! The crate simulates VAR(Q) systems under interventions, estimates their
//! coefficients jointly from observational and interventional data,
//! computes total causal effect matrices, and answers counterfactual
//! queries about past hypothetical interventions.
//!
//! Time indices are 1-based throughout; the first Q steps of a recording
//! are initial conditions. Node indices are 0-based in the API and 1-based
//! in every file format.

pub mod cli;
pub mod counterfactual;
pub mod dataset;
pub mod effects;
pub mod error;
pub mod estimation;
pub mod intervention;
pub mod io;
pub mod model;
pub mod simulate;

pub use counterfactual::{
    effect_summary, predict_abduction, predict_delta, CounterfactualQuery, CounterfactualResult,
};
pub use dataset::{build_designs, build_rows, partition, IndexPartition, NodeDesign, Trial};
pub use effects::{companion_matrix, stability, total_effects, EffectMatrices, StabilityReport};
pub use error::{Error, Result};
pub use estimation::{fit, fit_lasso, fit_ols, FitConfig, FitReport, StackedCoefficients};
pub use intervention::{InterventionSchedule, Mechanism, ScheduleEntry, Window};
pub use model::VarModel;
pub use simulate::{recover_residuals, simulate, simulate_with_noise, Recording, Residuals};
