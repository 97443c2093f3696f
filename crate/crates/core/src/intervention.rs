//! Intervention mechanisms and schedules.
//!
//! An intervention replaces a node's mechanism over a closed window of time
//! steps with `x_{i,t} := sum_q b~_{q,i}^T x_{t-q} + sigma~ w_{i,t} + u~_{i,t}`.
//! `Clamp` is the ideal-control special case `b~ = 0`, `sigma~ = 0`.
//!
//! Times are 1-based. Node indices are 0-based in the API and 1-based in
//! schedule files.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::VarModel;

/// Closed interval `[start, end]` of 1-based time steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start < 1 || start > end {
            return Err(Error::InvalidSchedule(format!(
                "window [{start}, {end}] must satisfy 1 <= start <= end"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn contains(&self, t: usize) -> bool {
        self.start <= t && t <= self.end
    }

    pub fn overlaps(&self, other: &Window) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn times(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mechanism {
    /// Forces the node to `signal[t - start]`.
    Clamp { signal: Vec<f64> },
    /// `rows[q - 1]` replaces `b_{q,i}`; `sigma` scales the node's own noise.
    Modify {
        rows: Vec<Vec<f64>>,
        sigma: f64,
        signal: Vec<f64>,
    },
}

impl Mechanism {
    pub fn signal(&self) -> &[f64] {
        match self {
            Mechanism::Clamp { signal } | Mechanism::Modify { signal, .. } => signal,
        }
    }

    /// Coefficient on the node's noise term.
    pub fn noise_scale(&self) -> f64 {
        match self {
            Mechanism::Clamp { .. } => 0.0,
            Mechanism::Modify { sigma, .. } => *sigma,
        }
    }

    /// The equivalent `Modify` form of a clamp for a model of the given shape.
    pub fn as_modify(&self, dim: usize, lag: usize) -> Mechanism {
        match self {
            Mechanism::Clamp { signal } => Mechanism::Modify {
                rows: vec![vec![0.0; dim]; lag],
                sigma: 0.0,
                signal: signal.clone(),
            },
            m => m.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleEntry {
    node: usize,
    window: Window,
    mechanism: Mechanism,
}

impl ScheduleEntry {
    pub fn new(node: usize, window: Window, mechanism: Mechanism) -> Result<Self> {
        if mechanism.signal().len() != window.len() {
            return Err(Error::InvalidSchedule(format!(
                "signal for node {} has {} values but window [{}, {}] spans {} steps",
                node + 1,
                mechanism.signal().len(),
                window.start,
                window.end,
                window.len()
            )));
        }
        if let Mechanism::Modify { rows, sigma, .. } = &mechanism {
            if !(0.0..=1.0).contains(sigma) {
                return Err(Error::InvalidSchedule(format!(
                    "noise scale {sigma} for node {} outside [0, 1]",
                    node + 1
                )));
            }
            if let Some(first) = rows.first() {
                if rows.iter().any(|r| r.len() != first.len()) {
                    return Err(Error::InvalidSchedule(format!(
                        "replacement rows for node {} have unequal lengths",
                        node + 1
                    )));
                }
            }
        }
        Ok(Self {
            node,
            window,
            mechanism,
        })
    }

    pub fn clamp(node: usize, window: Window, signal: Vec<f64>) -> Result<Self> {
        Self::new(node, window, Mechanism::Clamp { signal })
    }

    pub fn node(&self) -> usize {
        self.node
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn mechanism(&self) -> &Mechanism {
        &self.mechanism
    }

    pub fn signal_at(&self, t: usize) -> Result<f64> {
        if !self.window.contains(t) {
            return Err(Error::TimeOutsideWindow {
                t,
                start: self.window.start,
                end: self.window.end,
            });
        }
        Ok(self.mechanism.signal()[t - self.window.start])
    }

    /// Deterministic part of the mechanism, everything except `sigma~ w`.
    /// Caller guarantees `t` is inside the window and `history` has Q rows.
    pub(crate) fn deterministic(&self, history: &[&[f64]], t: usize) -> f64 {
        let u = self.mechanism.signal()[t - self.window.start];
        match &self.mechanism {
            Mechanism::Clamp { .. } => u,
            Mechanism::Modify { .. } => self.linear_part(history) + u,
        }
    }

    /// `sum_q b~_{q,i}^T history[q - 1]`; zero for a clamp.
    pub(crate) fn linear_part(&self, history: &[&[f64]]) -> f64 {
        match &self.mechanism {
            Mechanism::Clamp { .. } => 0.0,
            Mechanism::Modify { rows, .. } => {
                let mut acc = 0.0;
                for (row, state) in rows.iter().zip(history) {
                    for (b, x) in row.iter().zip(state.iter()) {
                        acc += b * x;
                    }
                }
                acc
            }
        }
    }

    /// Value produced at `t`, with `history[q - 1] = x_{t-q}`.
    pub(crate) fn evaluate(&self, history: &[&[f64]], noise: f64, t: usize) -> f64 {
        match &self.mechanism {
            Mechanism::Clamp { .. } => self.deterministic(history, t),
            Mechanism::Modify { sigma, .. } => self.deterministic(history, t) + sigma * noise,
        }
    }

    fn check_against(&self, dim: usize, lag: usize) -> Result<()> {
        if self.node >= dim {
            return Err(Error::NodeOutOfRange {
                node: self.node,
                dim,
            });
        }
        if let Mechanism::Modify { rows, .. } = &self.mechanism {
            if rows.len() != lag || rows.iter().any(|r| r.len() != dim) {
                return Err(Error::InvalidSchedule(format!(
                    "node {} needs {lag} replacement rows of length {dim}",
                    self.node + 1
                )));
            }
        }
        Ok(())
    }
}

/// Output of an intervened node: `sum_q b~_{q,i}^T x_{t-q} + sigma~ w + u~`,
/// or exactly `u~` under a clamp.
///
/// `history` holds the Q most recent states, most recent first.
pub fn mechanism_output(
    model: &VarModel,
    entry: &ScheduleEntry,
    node: usize,
    history: &[&[f64]],
    noise: f64,
    t: usize,
) -> Result<f64> {
    let dim = model.dim();
    if node >= dim {
        return Err(Error::NodeOutOfRange { node, dim });
    }
    if node != entry.node {
        return Err(Error::InvalidSchedule(format!(
            "mechanism targets node {}, not node {}",
            entry.node + 1,
            node + 1
        )));
    }
    entry.check_against(dim, model.lag())?;
    if !entry.window.contains(t) {
        return Err(Error::TimeOutsideWindow {
            t,
            start: entry.window.start,
            end: entry.window.end,
        });
    }
    if history.len() != model.lag() || history.iter().any(|h| h.len() != dim) {
        return Err(Error::DimensionMismatch(format!(
            "history must hold {} states of length {dim}",
            model.lag()
        )));
    }
    Ok(entry.evaluate(history, noise, t))
}

/// A set of interventions; at most one node is intervened per time step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InterventionSchedule {
    entries: Vec<ScheduleEntry>,
}

impl InterventionSchedule {
    pub const EMPTY: InterventionSchedule = InterventionSchedule {
        entries: Vec::new(),
    };

    pub fn new(entries: Vec<ScheduleEntry>) -> Result<Self> {
        check_disjoint(&entries)?;
        Ok(Self { entries })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[ScheduleEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The entry active at time `t`, if any.
    pub fn active_at(&self, t: usize) -> Option<&ScheduleEntry> {
        self.entries.iter().find(|e| e.window.contains(t))
    }

    /// The entry controlling `node` at time `t`, if any.
    pub fn entry_for(&self, node: usize, t: usize) -> Option<&ScheduleEntry> {
        self.entries
            .iter()
            .find(|e| e.node == node && e.window.contains(t))
    }

    pub fn first_start(&self) -> Option<usize> {
        self.entries.iter().map(|e| e.window.start).min()
    }

    pub fn last_end(&self) -> Option<usize> {
        self.entries.iter().map(|e| e.window.end).max()
    }

    /// Checks node indices and row shapes against a model, and that every
    /// window lies within `[lag + 1, horizon]`.
    pub fn validate_for(&self, dim: usize, lag: usize, horizon: usize) -> Result<()> {
        for e in &self.entries {
            e.check_against(dim, lag)?;
            if e.window.start <= lag || e.window.end > horizon {
                return Err(Error::WindowOutOfRange {
                    node: e.node,
                    start: e.window.start,
                    end: e.window.end,
                    min: lag + 1,
                    max: horizon,
                });
            }
        }
        Ok(())
    }

    pub fn to_file(&self) -> Vec<EntryFile> {
        self.entries
            .iter()
            .map(|e| EntryFile {
                node: e.node + 1,
                t_start: e.window.start,
                t_end: e.window.end,
                mechanism: match &e.mechanism {
                    Mechanism::Clamp { signal } => MechanismFile::Clamp {
                        signal: SignalSpec::Values(signal.clone()),
                    },
                    Mechanism::Modify {
                        rows,
                        sigma,
                        signal,
                    } => MechanismFile::Modify {
                        rows: rows.clone(),
                        sigma: *sigma,
                        signal: SignalSpec::Values(signal.clone()),
                    },
                },
            })
            .collect()
    }

    pub fn from_file(entries: &[EntryFile]) -> Result<Self> {
        let entries = entries
            .iter()
            .map(EntryFile::resolve)
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<EntryFile> = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_file(&entries)
    }

    /// Writes the schedule with every signal resolved to explicit values.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(&self.to_file()).expect("schedule serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn check_disjoint(entries: &[ScheduleEntry]) -> Result<()> {
    let mut sorted: Vec<&ScheduleEntry> = entries.iter().collect();
    sorted.sort_by_key(|e| (e.window.start, e.window.end, e.node));
    for pair in sorted.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a.window.overlaps(&b.window) {
            return Err(Error::OverlappingWindows {
                first_node: a.node,
                first_start: a.window.start,
                first_end: a.window.end,
                second_node: b.node,
                second_start: b.window.start,
                second_end: b.window.end,
            });
        }
    }
    Ok(())
}

/// One schedule entry as written in schedule files and configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEntry")]
pub struct EntryFile {
    /// 1-based node number.
    pub node: usize,
    pub t_start: usize,
    pub t_end: usize,
    #[serde(flatten)]
    pub mechanism: MechanismFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MechanismFile {
    Clamp {
        signal: SignalSpec,
    },
    Modify {
        rows: Vec<Vec<f64>>,
        sigma: f64,
        signal: SignalSpec,
    },
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum Mode {
    Clamp,
    Modify,
}

/// Flat form used for parsing so that unknown keys are rejected.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    node: usize,
    t_start: usize,
    t_end: usize,
    mode: Mode,
    signal: SignalSpec,
    rows: Option<Vec<Vec<f64>>>,
    sigma: Option<f64>,
}

impl TryFrom<RawEntry> for EntryFile {
    type Error = String;

    fn try_from(raw: RawEntry) -> std::result::Result<Self, String> {
        let mechanism = match (raw.mode, raw.rows, raw.sigma) {
            (Mode::Clamp, None, None) => MechanismFile::Clamp { signal: raw.signal },
            (Mode::Clamp, _, _) => {
                return Err("a clamp takes no `rows` or `sigma`".into());
            }
            (Mode::Modify, Some(rows), Some(sigma)) => MechanismFile::Modify {
                rows,
                sigma,
                signal: raw.signal,
            },
            (Mode::Modify, _, _) => {
                return Err("a modify entry needs `rows` and `sigma`".into());
            }
        };
        Ok(EntryFile {
            node: raw.node,
            t_start: raw.t_start,
            t_end: raw.t_end,
            mechanism,
        })
    }
}

impl EntryFile {
    pub fn resolve(&self) -> Result<ScheduleEntry> {
        if self.node == 0 {
            return Err(Error::InvalidSchedule("node numbers start at 1".into()));
        }
        let window = Window::new(self.t_start, self.t_end)?;
        let mechanism = match &self.mechanism {
            MechanismFile::Clamp { signal } => Mechanism::Clamp {
                signal: signal.resolve(window)?,
            },
            MechanismFile::Modify {
                rows,
                sigma,
                signal,
            } => Mechanism::Modify {
                rows: rows.clone(),
                sigma: *sigma,
                signal: signal.resolve(window)?,
            },
        };
        ScheduleEntry::new(self.node - 1, window, mechanism)
    }
}

/// An injected signal: explicit values for every step of the window, or a
/// generator evaluated at the absolute time index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SignalSpec {
    Values(Vec<f64>),
    Generator(SignalGenerator),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalGenerator {
    /// `amplitude * sin(rate * t + phase)`.
    Sine {
        amplitude: f64,
        rate: f64,
        #[serde(default)]
        phase: f64,
    },
    Constant {
        value: f64,
    },
    /// i.i.d. `N(mean, std^2)` draws, one per window step, from a seeded stream.
    Gaussian {
        mean: f64,
        std: f64,
        seed: u64,
    },
}

impl SignalSpec {
    pub fn resolve(&self, window: Window) -> Result<Vec<f64>> {
        match self {
            SignalSpec::Values(v) => {
                if v.len() != window.len() {
                    return Err(Error::InvalidSchedule(format!(
                        "signal has {} values but window [{}, {}] spans {} steps",
                        v.len(),
                        window.start,
                        window.end,
                        window.len()
                    )));
                }
                Ok(v.clone())
            }
            SignalSpec::Generator(SignalGenerator::Sine {
                amplitude,
                rate,
                phase,
            }) => Ok(window
                .times()
                .map(|t| amplitude * (rate * t as f64 + phase).sin())
                .collect()),
            SignalSpec::Generator(SignalGenerator::Constant { value }) => {
                Ok(vec![*value; window.len()])
            }
            SignalSpec::Generator(SignalGenerator::Gaussian { mean, std, seed }) => {
                let normal = Normal::new(*mean, *std)
                    .map_err(|e| Error::InvalidSchedule(format!("gaussian signal: {e}")))?;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Ok(window.times().map(|_| normal.sample(&mut rng)).collect())
            }
        }
    }
}
