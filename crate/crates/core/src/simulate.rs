//! Trajectory simulation under interventions and residual recovery.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::intervention::{InterventionSchedule, Mechanism, ScheduleEntry};
use crate::model::VarModel;

/// A realized trajectory: row `t - 1` of `values` is `x_t`.
///
/// The first Q rows are initial conditions. `noise`, when present, holds the
/// realization `w_t` (zero on the initial rows).
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    values: DMatrix<f64>,
    noise: Option<DMatrix<f64>>,
}

impl Recording {
    pub fn new(values: DMatrix<f64>) -> Self {
        Self {
            values,
            noise: None,
        }
    }

    pub fn with_noise(values: DMatrix<f64>, noise: DMatrix<f64>) -> Result<Self> {
        if values.shape() != noise.shape() {
            return Err(Error::DimensionMismatch(format!(
                "values are {}x{} but noise is {}x{}",
                values.nrows(),
                values.ncols(),
                noise.nrows(),
                noise.ncols()
            )));
        }
        Ok(Self {
            values,
            noise: Some(noise),
        })
    }

    /// Number of time steps `T`.
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn noise(&self) -> Option<&DMatrix<f64>> {
        self.noise.as_ref()
    }

    /// `x_{node, t}` with 1-based `t`.
    pub fn value(&self, node: usize, t: usize) -> f64 {
        self.values[(t - 1, node)]
    }

    /// `x_t` as a vector.
    pub fn state(&self, t: usize) -> DVector<f64> {
        self.values.row(t - 1).transpose()
    }

    /// The first `lag` rows.
    pub fn initial(&self, lag: usize) -> DMatrix<f64> {
        self.values.rows(0, lag).into_owned()
    }

    pub fn into_parts(self) -> (DMatrix<f64>, Option<DMatrix<f64>>) {
        (self.values, self.noise)
    }
}

/// Per-(node, time) lookup of the mechanism in force. `None` is the natural
/// mechanism of the model.
#[derive(Debug, Clone)]
pub(crate) struct MechanismTable<'a> {
    dim: usize,
    slots: Vec<Option<&'a ScheduleEntry>>,
}

impl<'a> MechanismTable<'a> {
    pub(crate) fn new(dim: usize, horizon: usize) -> Self {
        Self {
            dim,
            slots: vec![None; dim * horizon],
        }
    }

    pub(crate) fn from_schedule(
        schedule: &'a InterventionSchedule,
        dim: usize,
        horizon: usize,
    ) -> Self {
        let mut table = Self::new(dim, horizon);
        table.overlay(schedule);
        table
    }

    /// Installs every entry of `schedule`, replacing whatever governed the
    /// same `(node, t)` before.
    pub(crate) fn overlay(&mut self, schedule: &'a InterventionSchedule) {
        for entry in schedule.entries() {
            for t in entry.window().times() {
                self.slots[(t - 1) * self.dim + entry.node()] = Some(entry);
            }
        }
    }

    pub(crate) fn get(&self, node: usize, t: usize) -> Option<&'a ScheduleEntry> {
        self.slots[(t - 1) * self.dim + node]
    }
}

/// Noise coefficient of the mechanism at a slot.
pub(crate) fn slot_noise_scale(entry: Option<&ScheduleEntry>) -> f64 {
    entry.map_or(1.0, |e| e.mechanism().noise_scale())
}

/// Deterministic part of the mechanism at a slot, everything except the noise.
pub(crate) fn slot_deterministic(
    model: &VarModel,
    entry: Option<&ScheduleEntry>,
    node: usize,
    history: &[&[f64]],
    t: usize,
) -> f64 {
    match entry {
        None => model.predict_node(node, history),
        Some(e) => e.deterministic(history, t),
    }
}

fn slot_value(
    model: &VarModel,
    entry: Option<&ScheduleEntry>,
    node: usize,
    history: &[&[f64]],
    noise: f64,
    t: usize,
) -> f64 {
    match entry {
        None => model.predict_node(node, history) + noise,
        Some(e) => e.evaluate(history, noise, t),
    }
}

fn check_initial(model: &VarModel, initial: &DMatrix<f64>) -> Result<()> {
    if initial.nrows() != model.lag() {
        return Err(Error::DimensionMismatch(format!(
            "initial block has {} rows, expected lag {}",
            initial.nrows(),
            model.lag()
        )));
    }
    if initial.ncols() != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "initial block has {} columns, expected {}",
            initial.ncols(),
            model.dim()
        )));
    }
    Ok(())
}

/// Runs the recursion for `t` in `(Q, T]` where `T = noise.nrows()`.
pub(crate) fn run_table(
    model: &VarModel,
    table: &MechanismTable<'_>,
    initial: &DMatrix<f64>,
    noise: &DMatrix<f64>,
) -> DMatrix<f64> {
    let dim = model.dim();
    let lag = model.lag();
    let horizon = noise.nrows();
    let mut states: Vec<Vec<f64>> = Vec::with_capacity(horizon);
    for r in 0..lag.min(horizon) {
        states.push(initial.row(r).iter().copied().collect());
    }
    for t in lag + 1..=horizon {
        let history: Vec<&[f64]> = (1..=lag).map(|q| states[t - 1 - q].as_slice()).collect();
        let next: Vec<f64> = (0..dim)
            .map(|i| slot_value(model, table.get(i, t), i, &history, noise[(t - 1, i)], t))
            .collect();
        states.push(next);
    }
    DMatrix::from_fn(states.len(), dim, |r, c| states[r][c])
}

/// Draws `w_t = L z_t` for `t` in `(Q, T]`; initial rows are zero.
pub fn draw_noise(model: &VarModel, horizon: usize, seed: u64) -> DMatrix<f64> {
    let dim = model.dim();
    let factor = model.noise_factor();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = DMatrix::zeros(horizon, dim);
    let mut z = DVector::zeros(dim);
    for t in model.lag() + 1..=horizon {
        for zj in z.iter_mut() {
            *zj = StandardNormal.sample(&mut rng);
        }
        let w = factor * &z;
        noise.row_mut(t - 1).copy_from(&w.transpose());
    }
    noise
}

/// Simulates `horizon` steps under `schedule` with noise drawn from a
/// ChaCha8 stream seeded by `seed`. `initial` defaults to zeros.
pub fn simulate(
    model: &VarModel,
    schedule: &InterventionSchedule,
    horizon: usize,
    initial: Option<&DMatrix<f64>>,
    seed: u64,
) -> Result<Recording> {
    if horizon <= model.lag() {
        return Err(Error::DimensionMismatch(format!(
            "horizon {horizon} must exceed lag {}",
            model.lag()
        )));
    }
    let noise = draw_noise(model, horizon, seed);
    simulate_with_noise(model, schedule, initial, noise)
}

/// Simulates with a given noise realization; the horizon is `noise.nrows()`.
pub fn simulate_with_noise(
    model: &VarModel,
    schedule: &InterventionSchedule,
    initial: Option<&DMatrix<f64>>,
    noise: DMatrix<f64>,
) -> Result<Recording> {
    let horizon = noise.nrows();
    if noise.ncols() != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "noise has {} columns, expected {}",
            noise.ncols(),
            model.dim()
        )));
    }
    schedule.validate_for(model.dim(), model.lag(), horizon)?;
    let zeros;
    let initial = match initial {
        Some(m) => m,
        None => {
            zeros = DMatrix::zeros(model.lag(), model.dim());
            &zeros
        }
    };
    check_initial(model, initial)?;
    let table = MechanismTable::from_schedule(schedule, model.dim(), horizon);
    let values = run_table(model, &table, initial, &noise);
    Recording::with_noise(values, noise)
}

/// Noise recovered from a recording by inverting each mechanism.
///
/// Positions where the mechanism removed the noise (clamps, `sigma~ = 0`) and
/// the initial block are unrecoverable.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    values: DMatrix<f64>,
    recoverable: DMatrix<bool>,
}

impl Residuals {
    pub fn get(&self, node: usize, t: usize) -> Result<f64> {
        if !self.recoverable[(t - 1, node)] {
            return Err(Error::UnrecoverableResidual { node, t });
        }
        Ok(self.values[(t - 1, node)])
    }

    pub fn is_recoverable(&self, node: usize, t: usize) -> bool {
        self.recoverable[(t - 1, node)]
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// Residual matrix with zeros at unrecoverable positions.
    pub fn filled(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Times (1-based) at which every node's residual is recoverable.
    pub fn complete_times(&self) -> Vec<usize> {
        (1..=self.len())
            .filter(|&t| (0..self.dim()).all(|i| self.recoverable[(t - 1, i)]))
            .collect()
    }
}

/// Inverts the additive-noise mechanisms:
/// `w_{i,t} = (x_{i,t} - deterministic part) / sigma` with `sigma = 1` for
/// natural mechanisms.
pub fn recover_residuals(
    model: &VarModel,
    recording: &Recording,
    schedule: &InterventionSchedule,
) -> Result<Residuals> {
    let dim = model.dim();
    let lag = model.lag();
    if recording.dim() != dim {
        return Err(Error::DimensionMismatch(format!(
            "recording has {} columns, model has {dim} nodes",
            recording.dim()
        )));
    }
    let horizon = recording.len();
    if horizon <= lag {
        return Err(Error::DimensionMismatch(format!(
            "recording length {horizon} must exceed lag {lag}"
        )));
    }
    schedule.validate_for(dim, lag, horizon)?;
    let table = MechanismTable::from_schedule(schedule, dim, horizon);
    let x = recording.values();
    let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut values = DMatrix::zeros(horizon, dim);
    let mut recoverable = DMatrix::from_element(horizon, dim, false);
    for t in lag + 1..=horizon {
        let history: Vec<&[f64]> = (1..=lag).map(|q| rows[t - 1 - q].as_slice()).collect();
        for i in 0..dim {
            let entry = table.get(i, t);
            let sigma = slot_noise_scale(entry);
            if matches!(entry.map(|e| e.mechanism()), Some(Mechanism::Clamp { .. })) || sigma == 0.0
            {
                continue;
            }
            let det = slot_deterministic(model, entry, i, &history, t);
            let r = x[(t - 1, i)] - det;
            values[(t - 1, i)] = if entry.is_none() { r } else { r / sigma };
            recoverable[(t - 1, i)] = true;
        }
    }
    Ok(Residuals {
        values,
        recoverable,
    })
}
