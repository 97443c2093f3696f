//! Index partitions and stratified regression rows.
//!
//! Every time step of a trial belongs to exactly one set: `T_0` (no
//! intervention) or `T_i` (node `i` intervened). Rows for fitting node `i`
//! come from `T_{-i}`, every step where `i` kept its natural mechanism.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervention::InterventionSchedule;
use crate::simulate::Recording;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexPartition {
    dim: usize,
    /// `owner[t - 1]` is the intervened node at `t`, `None` for `T_0`.
    owner: Vec<Option<usize>>,
}

/// Splits `1..=horizon` into `T_0, T_1, .., T_D` from the schedule windows.
pub fn partition(
    schedule: &InterventionSchedule,
    dim: usize,
    horizon: usize,
) -> Result<IndexPartition> {
    let mut owner: Vec<Option<usize>> = vec![None; horizon];
    let mut claimed_by: Vec<Option<usize>> = vec![None; horizon];
    for (k, entry) in schedule.entries().iter().enumerate() {
        let w = entry.window();
        if entry.node() >= dim {
            return Err(Error::NodeOutOfRange {
                node: entry.node(),
                dim,
            });
        }
        if w.end > horizon {
            return Err(Error::WindowOutOfRange {
                node: entry.node(),
                start: w.start,
                end: w.end,
                min: 1,
                max: horizon,
            });
        }
        for t in w.times() {
            if let Some(other) = claimed_by[t - 1] {
                let first = &schedule.entries()[other];
                return Err(Error::OverlappingWindows {
                    first_node: first.node(),
                    first_start: first.window().start,
                    first_end: first.window().end,
                    second_node: entry.node(),
                    second_start: w.start,
                    second_end: w.end,
                });
            }
            claimed_by[t - 1] = Some(k);
            owner[t - 1] = Some(entry.node());
        }
    }
    Ok(IndexPartition { dim, owner })
}

impl IndexPartition {
    /// A partition with every step in `T_0`.
    pub fn observational(dim: usize, horizon: usize) -> Self {
        Self {
            dim,
            owner: vec![None; horizon],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> usize {
        self.owner.len()
    }

    /// Intervened node at `t`, `None` when `t` is in `T_0`.
    pub fn owner(&self, t: usize) -> Option<usize> {
        self.owner[t - 1]
    }

    /// `T_0`.
    pub fn observational_set(&self) -> Vec<usize> {
        self.times_where(|o| o.is_none())
    }

    /// `T_i`.
    pub fn intervened_set(&self, node: usize) -> Vec<usize> {
        self.times_where(|o| o == Some(node))
    }

    /// `T_{-i}`: the union of all sets minus `T_i`.
    pub fn complement_set(&self, node: usize) -> Vec<usize> {
        self.times_where(|o| o != Some(node))
    }

    pub fn in_complement(&self, node: usize, t: usize) -> bool {
        self.owner[t - 1] != Some(node)
    }

    fn times_where(&self, keep: impl Fn(Option<usize>) -> bool) -> Vec<usize> {
        (1..=self.horizon())
            .filter(|&t| keep(self.owner[t - 1]))
            .collect()
    }

    pub fn to_file(&self) -> PartitionFile {
        PartitionFile {
            horizon: self.horizon(),
            observational: ranges(&self.observational_set()),
            intervened: (0..self.dim)
                .map(|i| NodeRanges {
                    node: i + 1,
                    ranges: ranges(&self.intervened_set(i)),
                })
                .collect(),
            complement: (0..self.dim)
                .map(|i| NodeRanges {
                    node: i + 1,
                    ranges: ranges(&self.complement_set(i)),
                })
                .collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(&self.to_file()).expect("partition serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Partition export; each set is a list of closed `[start, end]` ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionFile {
    pub horizon: usize,
    pub observational: Vec<[usize; 2]>,
    pub intervened: Vec<NodeRanges>,
    pub complement: Vec<NodeRanges>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRanges {
    pub node: usize,
    pub ranges: Vec<[usize; 2]>,
}

fn ranges(times: &[usize]) -> Vec<[usize; 2]> {
    let mut out: Vec<[usize; 2]> = Vec::new();
    for &t in times {
        match out.last_mut() {
            Some(r) if r[1] + 1 == t => r[1] = t,
            _ => out.push([t, t]),
        }
    }
    out
}

/// One recording trial with its partition and an optional mask of the
/// target times that may contribute rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    recording: Recording,
    partition: IndexPartition,
    selection: Option<Vec<bool>>,
}

impl Trial {
    pub fn new(recording: Recording, partition: IndexPartition) -> Result<Self> {
        if recording.len() != partition.horizon() || recording.dim() != partition.dim() {
            return Err(Error::DimensionMismatch(format!(
                "recording is {}x{} but partition covers {} steps of {} nodes",
                recording.len(),
                recording.dim(),
                partition.horizon(),
                partition.dim()
            )));
        }
        Ok(Self {
            recording,
            partition,
            selection: None,
        })
    }

    /// Builds the partition from the schedule that produced the recording.
    pub fn from_schedule(recording: Recording, schedule: &InterventionSchedule) -> Result<Self> {
        let partition = partition(schedule, recording.dim(), recording.len())?;
        Self::new(recording, partition)
    }

    /// Restricts the usable target times; `mask[t - 1]` selects `t`.
    pub fn with_selection(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.recording.len() {
            return Err(Error::DimensionMismatch(format!(
                "selection mask has {} entries for {} steps",
                mask.len(),
                self.recording.len()
            )));
        }
        self.selection = Some(mask);
        Ok(self)
    }

    pub fn recording(&self) -> &Recording {
        &self.recording
    }

    pub fn partition(&self) -> &IndexPartition {
        &self.partition
    }

    pub fn is_selected(&self, t: usize) -> bool {
        self.selection.as_ref().is_none_or(|m| m[t - 1])
    }

    /// Target times usable for node `i`: `Q < t <= T`, `t` in `T_{-i}`, selected.
    pub fn eligible_times(&self, node: usize, lag: usize) -> Vec<usize> {
        (lag + 1..=self.recording.len())
            .filter(|&t| self.partition.in_complement(node, t) && self.is_selected(t))
            .collect()
    }
}

/// Selects the earliest `budget` time points of a trial.
///
/// With `use_interventional`, every intervened step is taken first and the
/// remainder of the budget is filled with observational steps in time order;
/// otherwise only observational steps are used. Initial-condition steps
/// count toward the budget even though they never form rows.
pub fn budget_selection(
    partition: &IndexPartition,
    budget: usize,
    use_interventional: bool,
) -> Result<Vec<bool>> {
    let horizon = partition.horizon();
    let mut mask = vec![false; horizon];
    let mut left = budget;
    if use_interventional {
        for t in 1..=horizon {
            if partition.owner(t).is_some() && left > 0 {
                mask[t - 1] = true;
                left -= 1;
            }
        }
    }
    for t in 1..=horizon {
        if left == 0 {
            break;
        }
        if partition.owner(t).is_none() {
            mask[t - 1] = true;
            left -= 1;
        }
    }
    if left > 0 {
        return Err(Error::Config(format!(
            "budget of {budget} time points exceeds the {} available",
            budget - left
        )));
    }
    Ok(mask)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionRow {
    pub node: usize,
    /// Index of the trial the row came from.
    pub trial: usize,
    pub t: usize,
    pub response: f64,
    /// `[x_{t-1}; ...; x_{t-Q}]`, length `D * Q`.
    pub regressor: DVector<f64>,
}

fn check_trials(trials: &[Trial], lag: usize) -> Result<usize> {
    let dim = trials
        .first()
        .map(|t| t.recording.dim())
        .ok_or_else(|| Error::DimensionMismatch("no trials given".into()))?;
    for (k, trial) in trials.iter().enumerate() {
        if trial.recording.dim() != dim {
            return Err(Error::DimensionMismatch(format!(
                "trial {} has {} nodes, trial 1 has {dim}",
                k + 1,
                trial.recording.dim()
            )));
        }
        if trial.recording.len() < lag + 1 {
            return Err(Error::DimensionMismatch(format!(
                "trial {} has {} steps, at least {} needed for lag {lag}",
                k + 1,
                trial.recording.len(),
                lag + 1
            )));
        }
    }
    Ok(dim)
}

fn stacked_regressor(values: &DMatrix<f64>, t: usize, lag: usize) -> DVector<f64> {
    let dim = values.ncols();
    DVector::from_fn(dim * lag, |c, _| {
        let q = c / dim + 1;
        values[(t - 1 - q, c % dim)]
    })
}

/// Rows for node `node`, concatenated over trials; no row straddles a trial.
pub fn build_rows(trials: &[Trial], node: usize, lag: usize) -> Result<Vec<RegressionRow>> {
    let dim = check_trials(trials, lag)?;
    if node >= dim {
        return Err(Error::NodeOutOfRange { node, dim });
    }
    let mut rows = Vec::new();
    for (k, trial) in trials.iter().enumerate() {
        let values = trial.recording.values();
        for t in trial.eligible_times(node, lag) {
            rows.push(RegressionRow {
                node,
                trial: k,
                t,
                response: values[(t - 1, node)],
                regressor: stacked_regressor(values, t, lag),
            });
        }
    }
    Ok(rows)
}

/// Dense least-squares problem for one node: `response ~ design * theta_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeDesign {
    pub node: usize,
    pub design: DMatrix<f64>,
    pub response: DVector<f64>,
    /// `(trial, t)` of each row.
    pub times: Vec<(usize, usize)>,
}

impl NodeDesign {
    pub fn from_rows(node: usize, width: usize, rows: &[RegressionRow]) -> Self {
        let design = DMatrix::from_fn(rows.len(), width, |r, c| rows[r].regressor[c]);
        let response = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.response));
        Self {
            node,
            design,
            response,
            times: rows.iter().map(|r| (r.trial, r.t)).collect(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.design.nrows()
    }

    pub fn width(&self) -> usize {
        self.design.ncols()
    }

    /// `(rows outside start..end, rows inside start..end)`.
    pub(crate) fn split(&self, start: usize, end: usize) -> (NodeDesign, NodeDesign) {
        let pick = |keep: &dyn Fn(usize) -> bool| {
            let idx: Vec<usize> = (0..self.nrows()).filter(|&r| keep(r)).collect();
            NodeDesign {
                node: self.node,
                design: self.design.select_rows(idx.iter()),
                response: self.response.select_rows(idx.iter()),
                times: idx.iter().map(|&r| self.times[r]).collect(),
            }
        };
        let train = pick(&|r| r < start || r >= end);
        let test = pick(&|r| r >= start && r < end);
        (train, test)
    }
}

/// One design per node, in node order.
pub fn build_designs(trials: &[Trial], lag: usize) -> Result<Vec<NodeDesign>> {
    let dim = check_trials(trials, lag)?;
    (0..dim)
        .map(|i| {
            let rows = build_rows(trials, i, lag)?;
            Ok(NodeDesign::from_rows(i, dim * lag, &rows))
        })
        .collect()
}
