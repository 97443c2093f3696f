//! Config-driven command-line front end.
//!
//! Exit codes: 0 on success, 1 when a numerical failure is reported (the
//! report files are still written), 2 for configuration or validation
//! errors.

pub mod config;
pub mod experiment;

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::counterfactual::{
    effect_summary, predict_abduction, predict_delta, CounterfactualQuery, CounterfactualResult,
    ModelProvenance,
};
use crate::dataset::partition;
use crate::effects::{stability, total_effects};
use crate::error::{Error, Result};
use crate::estimation::{FitReport, StackedCoefficients};
use crate::io::{save_noise, save_recording};
use crate::model::VarModel;
use crate::simulate::{simulate, Recording};

use config::{ExperimentConfig, WhatIfMethod, WhatIfSection};
use experiment::{compare_fits, score, summarize, Comparison, SweepSetup, TrialScore};

#[derive(Debug, Parser)]
#[command(
    name = "varcf",
    version,
    about = "Simulate, fit and query VAR structural causal models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a recording under the configured schedule.
    Simulate(Overrides),
    /// Fit coefficients jointly and from observational data alone.
    Fit(Overrides),
    /// Total effect matrices and stability of a model.
    Effects(Overrides),
    /// Counterfactual prediction for a hypothetical past intervention.
    Whatif(Overrides),
}

#[derive(Debug, Clone, Args)]
pub struct Overrides {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Simulation seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// LASSO penalty; selects the LASSO.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Whether a command finished cleanly or reported a numerical failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    NumericalFailure,
}

pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Numerical(_) => 1,
        _ => 2,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(Status::Ok) => 0,
        Ok(Status::NumericalFailure) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(command: &Command) -> Result<Status> {
    let (overrides, action): (&Overrides, fn(&Context) -> Result<Status>) = match command {
        Command::Simulate(o) => (o, cmd_simulate),
        Command::Fit(o) => (o, cmd_fit),
        Command::Effects(o) => (o, cmd_effects),
        Command::Whatif(o) => (o, cmd_whatif),
    };
    let mut config = ExperimentConfig::load(&overrides.config)?;
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    let out = overrides.out.clone().unwrap_or_else(|| config.out_dir());
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    action(&Context {
        config,
        out,
        lambda: overrides.lambda,
    })
}

pub struct Context {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub lambda: Option<f64>,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("summary serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for line in lines {
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn cmd_simulate(ctx: &Context) -> Result<Status> {
    let cfg = &ctx.config;
    let model = cfg.model(0)?;
    let schedule = cfg.schedule()?;
    let horizon = cfg.horizon()?;
    let recording = simulate(&model, &schedule, horizon, None, cfg.seed)?;
    save_recording(&recording, ctx.path("recording.csv"))?;
    save_noise(&recording, ctx.path("noise.csv"))?;
    model.save(ctx.path("model.json"))?;
    schedule.save(ctx.path("schedule.json"))?;
    partition(&schedule, model.dim(), horizon)?.save(ctx.path("partition.json"))?;
    println!(
        "simulated {horizon} steps of {} nodes with {} intervention(s)",
        model.dim(),
        schedule.entries().len()
    );
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct FitSummary<'a> {
    method: crate::estimation::Method,
    lambda: f64,
    budget: Option<usize>,
    joint_rows: Vec<usize>,
    observational_rows: Vec<usize>,
    mse: Option<&'a TrialScore>,
}

fn report_failures(label: &str, report: &FitReport) {
    for node in &report.nodes {
        if let Some(failure) = &node.failure {
            eprintln!("{label} fit, node {}: {failure:?}", node.node + 1);
        } else if !node.converged {
            eprintln!(
                "{label} fit, node {}: no convergence after {} iterations",
                node.node + 1,
                node.iterations
            );
        }
    }
}

fn write_comparison(ctx: &Context, comparison: &Comparison, suffix: &str) -> Result<()> {
    comparison
        .joint
        .save(ctx.path(&format!("fit_joint{suffix}.json")))?;
    comparison
        .observational
        .save(ctx.path(&format!("fit_observational{suffix}.json")))?;
    comparison
        .joint
        .estimate
        .write_csv(ctx.path(&format!("coeffs_joint{suffix}.csv")))?;
    comparison
        .observational
        .estimate
        .write_csv(ctx.path(&format!("coeffs_observational{suffix}.csv")))
}

fn mse_lines(score: &TrialScore) -> Vec<String> {
    let mut lines = vec!["fit,q,mse".to_string()];
    for (label, report) in [
        ("joint", &score.joint),
        ("observational", &score.observational),
    ] {
        for (q, v) in report.per_lag.iter().enumerate() {
            lines.push(format!("{label},{},{v}", q + 1));
        }
    }
    lines
}

fn cmd_fit(ctx: &Context) -> Result<Status> {
    let cfg = &ctx.config;
    let section = cfg.fit.clone().unwrap_or_default();
    let fit_config = section.fit_config(ctx.lambda)?;
    let schedule = cfg.schedule()?;

    if let Some(sweep) = &section.sweep {
        if section.recording.is_some() {
            return Err(Error::Config(
                "a seed sweep simulates its own recordings; drop `fit.recording`".into(),
            ));
        }
        let random = cfg.model.as_ref().and_then(|m| m.random.as_ref());
        let fixed = if random.is_none() {
            Some(cfg.model(0)?)
        } else {
            None
        };
        let setup = SweepSetup {
            random,
            fixed_model: fixed.as_ref(),
            schedule: &schedule,
            horizon: cfg.horizon()?,
            seed: cfg.seed,
            budget: section.budget,
            config: &fit_config,
        };
        let trials = setup.run(sweep.start, sweep.count)?;
        let mut rows = vec!["offset,model_seed,sim_seed,fit,q,mse".to_string()];
        let mut failed = false;
        for trial in &trials {
            let suffix = format!("_seed{}", trial.offset);
            write_comparison(ctx, &trial.comparison, &suffix)?;
            StackedCoefficients::from_model(&trial.truth)
                .write_csv(ctx.path(&format!("coeffs_truth{suffix}.csv")))?;
            write_lines(
                &ctx.path(&format!("mse{suffix}.csv")),
                &mse_lines(&trial.score),
            )?;
            let model_seed = random.map_or(String::new(), |r| {
                r.seed.wrapping_add(trial.offset).to_string()
            });
            let sim_seed = cfg.seed.wrapping_add(trial.offset);
            for (label, report) in [
                ("joint", &trial.score.joint),
                ("observational", &trial.score.observational),
            ] {
                for (q, v) in report.per_lag.iter().enumerate() {
                    rows.push(format!(
                        "{},{model_seed},{sim_seed},{label},{},{v}",
                        trial.offset,
                        q + 1
                    ));
                }
            }
            if trial.comparison.failed() {
                failed = true;
                eprintln!("trial {}:", trial.offset);
                report_failures("joint", &trial.comparison.joint);
                report_failures("observational", &trial.comparison.observational);
            }
        }
        write_lines(&ctx.path("summary.csv"), &rows)?;
        let summary = summarize(&trials);
        write_json(&summary, &ctx.path("summary.json"))?;
        for (q, (j, o)) in summary
            .joint_median
            .iter()
            .zip(&summary.observational_median)
            .enumerate()
        {
            println!(
                "lag {}: median MSE joint {j:.6e}, observational {o:.6e} over {} trials",
                q + 1,
                summary.trials
            );
        }
        return Ok(if failed {
            Status::NumericalFailure
        } else {
            Status::Ok
        });
    }

    let (recording, truth) = match &section.recording {
        Some(path) => {
            let truth = match &section.truth {
                Some(t) => Some(cfg.load_model_file(t, "truth file")?),
                None => None,
            };
            (cfg.load_recording(path, None)?, truth)
        }
        None => {
            let model = cfg.model(0)?;
            let recording = simulate(&model, &schedule, cfg.horizon()?, None, cfg.seed)?;
            let truth = match &section.truth {
                Some(t) => cfg.load_model_file(t, "truth file")?,
                None => model,
            };
            (recording, Some(truth))
        }
    };
    let lag = match (&section.lag, &truth) {
        (Some(lag), _) => *lag,
        (None, Some(t)) => t.lag(),
        (None, None) => cfg.model(0)?.lag(),
    };
    let comparison = compare_fits(&recording, &schedule, lag, section.budget, &fit_config)?;
    write_comparison(ctx, &comparison, "")?;
    let scored = match &truth {
        Some(t) => {
            let s = score(&comparison, t)?;
            write_lines(&ctx.path("mse.csv"), &mse_lines(&s))?;
            StackedCoefficients::from_model(t).write_csv(ctx.path("coeffs_truth.csv"))?;
            for (q, (j, o)) in s
                .joint
                .per_lag
                .iter()
                .zip(&s.observational.per_lag)
                .enumerate()
            {
                println!("lag {}: MSE joint {j:.6e}, observational {o:.6e}", q + 1);
            }
            Some(s)
        }
        None => {
            println!("no truth model configured; MSE table omitted");
            None
        }
    };
    write_json(
        &FitSummary {
            method: fit_config.method,
            lambda: fit_config.lambda,
            budget: section.budget,
            joint_rows: comparison.joint.nodes.iter().map(|n| n.rows).collect(),
            observational_rows: comparison
                .observational
                .nodes
                .iter()
                .map(|n| n.rows)
                .collect(),
            mse: scored.as_ref(),
        },
        &ctx.path("fit_summary.json"),
    )?;
    if comparison.failed() {
        report_failures("joint", &comparison.joint);
        report_failures("observational", &comparison.observational);
        return Ok(Status::NumericalFailure);
    }
    Ok(Status::Ok)
}

fn cmd_effects(ctx: &Context) -> Result<Status> {
    let cfg = &ctx.config;
    let section = cfg
        .effects
        .as_ref()
        .ok_or_else(|| Error::Config("an `[effects]` section is required".into()))?;
    let model = match &section.model {
        Some(path) => cfg.load_model_file(path, "model file")?,
        None => cfg.model(0)?,
    };
    let effects = total_effects(&model, section.max_horizon);
    effects.write_csv(ctx.path("effects.csv"))?;
    let report = stability(&model);
    write_json(&report, &ctx.path("stability.json"))?;
    println!(
        "T_0..T_{} written; spectral radius {:.12} ({})",
        section.max_horizon,
        report.spectral_radius,
        if report.stable {
            "stable"
        } else {
            "not stable"
        }
    );
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct WhatIfSummary {
    method: WhatIfMethod,
    provenance: ModelProvenance,
    onset: Option<usize>,
    /// Max elementwise |predicted - resimulated| when the noise is known.
    delta_error: Option<f64>,
    abduction_error: Option<f64>,
    /// Max elementwise |delta - abduction| in both-mode.
    agreement: Option<f64>,
}

fn max_abs_diff(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    (a - b).amax()
}

fn cmd_whatif(ctx: &Context) -> Result<Status> {
    let cfg = &ctx.config;
    let section: WhatIfSection = cfg
        .whatif
        .clone()
        .ok_or_else(|| Error::Config("a `[whatif]` section is required".into()))?;
    let model: VarModel = cfg.model(0)?;
    let factual_schedule = cfg.schedule()?;
    let hypothetical = cfg.hypothetical(&section)?;
    let factual: Recording = match &section.factual {
        Some(path) => cfg.load_recording(path, section.noise.as_deref())?,
        None => simulate(&model, &factual_schedule, cfg.horizon()?, None, cfg.seed)?,
    };
    let provenance = section.provenance.unwrap_or(ModelProvenance::True);
    let query = CounterfactualQuery::new(&factual, &model, &hypothetical)
        .with_factual_schedule(&factual_schedule)
        .with_provenance(provenance);

    let delta = match section.method {
        WhatIfMethod::Delta | WhatIfMethod::Both => Some(predict_delta(&query)?),
        WhatIfMethod::Abduction => None,
    };
    let abduction = match section.method {
        WhatIfMethod::Abduction | WhatIfMethod::Both => Some(predict_abduction(&query)?),
        WhatIfMethod::Delta => None,
    };
    let truth = match factual.noise() {
        Some(noise) => {
            let resim = query.resimulate(noise)?;
            save_recording(&resim, ctx.path("counterfactual_resimulated.csv"))?;
            Some(resim)
        }
        None => None,
    };
    let error = |r: &Option<CounterfactualResult>| -> Option<f64> {
        match (r, &truth) {
            (Some(r), Some(t)) => Some(max_abs_diff(&r.counterfactual, t.values())),
            _ => None,
        }
    };
    if let Some(r) = &delta {
        r.write_csv(ctx.path("counterfactual_delta.csv"))?;
    }
    if let Some(r) = &abduction {
        r.write_csv(ctx.path("counterfactual_abduction.csv"))?;
    }
    let primary = delta
        .as_ref()
        .or(abduction.as_ref())
        .expect("one method ran");
    let effect = effect_summary(primary);
    let mut norms = vec!["t,norm".to_string()];
    norms.extend(
        effect
            .norms
            .iter()
            .enumerate()
            .map(|(k, n)| format!("{},{n}", k + 1)),
    );
    write_lines(&ctx.path("effect_norms.csv"), &norms)?;

    let summary = WhatIfSummary {
        method: section.method,
        provenance,
        onset: effect.onset,
        delta_error: error(&delta),
        abduction_error: error(&abduction),
        agreement: match (&delta, &abduction) {
            (Some(d), Some(a)) => Some(max_abs_diff(&d.counterfactual, &a.counterfactual)),
            _ => None,
        },
    };
    write_json(&summary, &ctx.path("whatif_summary.json"))?;
    match effect.onset {
        Some(t) => println!("counterfactual diverges from the factual run at t={t}"),
        None => println!("counterfactual run equals the factual run"),
    }
    if let Some(e) = summary.delta_error {
        println!("delta propagation: max |predicted - resimulated| = {e:.3e}");
    }
    if let Some(e) = summary.abduction_error {
        println!("abduction: max |predicted - resimulated| = {e:.3e}");
    }
    if let Some(a) = summary.agreement {
        println!("agreement: max |delta - abduction| = {a:.3e}");
    }
    Ok(Status::Ok)
}
