//! TOML experiment configuration.
//!
//! Relative paths are resolved against the directory of the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::counterfactual::ModelProvenance;
use crate::error::{Error, Result};
use crate::estimation::{FitConfig, Method};
use crate::intervention::{EntryFile, InterventionSchedule};
use crate::io::{load_recording, load_recording_with_noise};
use crate::model::{RandomModelSpec, VarModel};
use crate::simulate::Recording;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seed of the simulation noise stream.
    pub seed: u64,
    pub horizon: Option<usize>,
    pub out: Option<PathBuf>,
    pub model: Option<ModelSource>,
    #[serde(default)]
    pub schedule: Vec<EntryFile>,
    pub schedule_file: Option<PathBuf>,
    pub fit: Option<FitSection>,
    pub effects: Option<EffectsSection>,
    pub whatif: Option<WhatIfSection>,
    #[serde(skip)]
    base: PathBuf,
}

/// Exactly one of `file` and `random`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSource {
    pub file: Option<PathBuf>,
    pub random: Option<RandomModelSpec>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub method: Option<Method>,
    pub lambda: Option<f64>,
    pub max_iterations: Option<usize>,
    pub tolerance: Option<f64>,
    pub standardize: Option<bool>,
    /// Time points available to each fit.
    pub budget: Option<usize>,
    /// Existing recording to fit instead of simulating one.
    pub recording: Option<PathBuf>,
    /// Model to score the estimates against.
    pub truth: Option<PathBuf>,
    /// Needed only when neither a model nor a truth file gives it.
    pub lag: Option<usize>,
    pub sweep: Option<Sweep>,
}

/// Trial `k` in `0..count` uses model seed `random.seed + start + k` and
/// simulation seed `seed + start + k`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default)]
    pub start: u64,
    pub count: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectsSection {
    pub max_horizon: usize,
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WhatIfMethod {
    Delta,
    Abduction,
    #[default]
    Both,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfSection {
    #[serde(default)]
    pub method: WhatIfMethod,
    /// Recorded factual run; simulated from the model when absent.
    pub factual: Option<PathBuf>,
    /// Noise companion of `factual`, enabling the ground-truth check.
    pub noise: Option<PathBuf>,
    #[serde(default)]
    pub hypothetical: Vec<EntryFile>,
    pub hypothetical_file: Option<PathBuf>,
    pub provenance: Option<ModelProvenance>,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: Self = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        config.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    pub fn resolve_path(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base.join(path)
        }
    }

    fn existing(&self, path: &Path, what: &str) -> Result<PathBuf> {
        let resolved = self.resolve_path(path);
        if !resolved.is_file() {
            return Err(Error::Config(format!(
                "{what} `{}` does not exist",
                resolved.display()
            )));
        }
        Ok(resolved)
    }

    pub fn out_dir(&self) -> PathBuf {
        match &self.out {
            Some(p) => self.resolve_path(p),
            None => PathBuf::from("out"),
        }
    }

    pub fn horizon(&self) -> Result<usize> {
        self.horizon
            .ok_or_else(|| Error::Config("`horizon` is required to simulate".into()))
    }

    /// The configured model; `offset` shifts the seed of a random generator.
    pub fn model(&self, offset: u64) -> Result<VarModel> {
        let source = self
            .model
            .as_ref()
            .ok_or_else(|| Error::Config("a `[model]` section is required".into()))?;
        match (&source.file, &source.random) {
            (Some(file), None) => VarModel::load(self.existing(file, "model file")?),
            (None, Some(spec)) => RandomModelSpec {
                seed: spec.seed.wrapping_add(offset),
                ..spec.clone()
            }
            .generate(),
            _ => Err(Error::Config(
                "`[model]` needs exactly one of `file` and `random`".into(),
            )),
        }
    }

    pub fn schedule(&self) -> Result<InterventionSchedule> {
        entries_or_file(
            self,
            &self.schedule,
            self.schedule_file.as_deref(),
            "schedule",
        )
    }

    pub fn load_model_file(&self, path: &Path, what: &str) -> Result<VarModel> {
        VarModel::load(self.existing(path, what)?)
    }

    pub fn load_recording(&self, path: &Path, noise: Option<&Path>) -> Result<Recording> {
        let values = self.existing(path, "recording")?;
        match noise {
            Some(n) => load_recording_with_noise(values, self.existing(n, "noise file")?),
            None => load_recording(values),
        }
    }

    pub fn hypothetical(&self, section: &WhatIfSection) -> Result<InterventionSchedule> {
        entries_or_file(
            self,
            &section.hypothetical,
            section.hypothetical_file.as_deref(),
            "hypothetical schedule",
        )
    }
}

fn entries_or_file(
    config: &ExperimentConfig,
    entries: &[EntryFile],
    file: Option<&Path>,
    what: &str,
) -> Result<InterventionSchedule> {
    match file {
        Some(_) if !entries.is_empty() => Err(Error::Config(format!(
            "{what} given both inline and as a file"
        ))),
        Some(path) => InterventionSchedule::load(config.existing(path, what)?),
        None => InterventionSchedule::from_file(entries),
    }
}

impl FitSection {
    /// Fit settings after applying a command-line `lambda`, which also
    /// selects the LASSO.
    pub fn fit_config(&self, lambda: Option<f64>) -> Result<FitConfig> {
        let defaults = FitConfig::default();
        let config = FitConfig {
            method: if lambda.is_some() {
                Method::Lasso
            } else {
                self.method.unwrap_or(defaults.method)
            },
            lambda: lambda.or(self.lambda).unwrap_or(defaults.lambda),
            max_iterations: self.max_iterations.unwrap_or(defaults.max_iterations),
            tolerance: self.tolerance.unwrap_or(defaults.tolerance),
            standardize: self.standardize.unwrap_or(defaults.standardize),
        };
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    #[test]
    fn full_config_parses() {
        let config = parse(
            r#"
seed = 3
horizon = 50

[model.random]
dim = 2
lag = 1
coeff_low = -0.5
coeff_high = 0.5
zero_prob = 0.3
seed = 9
covariance = { kind = "toeplitz", diag = 1.0, off = 0.5 }

[[schedule]]
node = 1
t_start = 10
t_end = 20
mode = "clamp"
signal = { kind = "sine", amplitude = 4.0, rate = 0.5 }

[fit]
method = "lasso"
lambda = 0.5
budget = 40
sweep = { count = 3 }

[effects]
max_horizon = 10

[whatif]
method = "delta"

[[whatif.hypothetical]]
node = 2
t_start = 30
t_end = 31
mode = "clamp"
signal = [1.0, 2.0]
"#,
        )
        .unwrap();
        assert_eq!(config.seed, 3);
        let schedule = config.schedule().unwrap();
        assert_eq!(schedule.entries().len(), 1);
        assert!((schedule.entries()[0].signal_at(10).unwrap() - 4.0 * 5f64.sin()).abs() < 1e-15);
        let model = config.model(0).unwrap();
        assert_eq!(model.dim(), 2);
        assert_ne!(model, config.model(1).unwrap());
        let fit = config.fit.as_ref().unwrap();
        assert_eq!(fit.sweep.as_ref().unwrap().start, 0);
        assert_eq!(fit.fit_config(None).unwrap().method, Method::Lasso);
        let whatif = config.whatif.as_ref().unwrap();
        assert_eq!(whatif.method, WhatIfMethod::Delta);
        assert_eq!(config.hypothetical(whatif).unwrap().entries()[0].node(), 1);
    }

    #[test]
    fn lambda_override_selects_lasso() {
        let fit = FitSection::default();
        assert_eq!(fit.fit_config(None).unwrap().method, Method::Ols);
        let c = fit.fit_config(Some(0.25)).unwrap();
        assert_eq!((c.method, c.lambda), (Method::Lasso, 0.25));
        assert!(fit.fit_config(Some(-1.0)).is_err());
    }

    #[test]
    fn rejects_unknown_keys_and_ambiguous_models() {
        assert!(parse("seed = 1\nhorizn = 3\n").is_err());
        assert!(parse("horizon = 3\n").is_err());
        let both = parse(
            "seed = 1\n[model]\nfile = \"m.json\"\n[model.random]\ndim = 1\nlag = 1\ncoeff_low = 0.0\ncoeff_high = 1.0\nzero_prob = 0.0\nseed = 1\ncovariance = { kind = \"zero\" }\n",
        )
        .unwrap();
        assert!(matches!(both.model(0), Err(Error::Config(_))));
        let missing = parse("seed = 1\n[model]\nfile = \"nowhere.json\"\n").unwrap();
        let err = missing.model(0).unwrap_err().to_string();
        assert!(err.contains("does not exist"), "{err}");
    }
}
