//! One pass/fail line per acceptance criterion; exits nonzero if any fails.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use common::{any_model, max_abs, random_clamps, rng, shift, stable_model};
use varcf::cli::config::ExperimentConfig;
use varcf::cli::experiment::{summarize, SweepSetup};
use varcf::dataset::NodeDesign;
use varcf::estimation::{critical_lambda, objective_naive, objective_stratified, soft_threshold};
use varcf::{
    build_designs, companion_matrix, fit_lasso, fit_ols, predict_abduction, predict_delta,
    recover_residuals, simulate, simulate_with_noise, total_effects, CounterfactualQuery,
    FitConfig, InterventionSchedule, StackedCoefficients, Trial,
};

type Criterion = (&'static str, Option<Duration>, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let elapsed = start.elapsed();
    if let Some(limit) = limit {
        if elapsed >= limit {
            o.passed = false;
        }
        o.detail = format!("{}; {:.2?} (limit {:?})", o.detail, elapsed, limit);
    }
    o
}

fn counterfactual_exactness() -> Outcome {
    let cfg = ExperimentConfig::load(configs().join("exp2.cfg")).unwrap();
    let model = cfg.model(0).unwrap();
    let factual_schedule = cfg.schedule().unwrap();
    let hypothetical = cfg.hypothetical(cfg.whatif.as_ref().unwrap()).unwrap();
    let factual = simulate(
        &model,
        &factual_schedule,
        cfg.horizon().unwrap(),
        None,
        cfg.seed,
    )
    .unwrap();
    let entry = &hypothetical.entries()[0];
    let shape_ok = (model.dim(), model.lag(), factual.len()) == (2, 2, 100)
        && factual_schedule.is_empty()
        && (entry.node(), entry.window().start, entry.window().end) == (0, 40, 100);
    let query = CounterfactualQuery::new(&factual, &model, &hypothetical);
    let truth = query.resimulate(factual.noise().unwrap()).unwrap();
    let delta = predict_delta(&query).unwrap();
    let abduction = predict_abduction(&query).unwrap();
    let e_delta = max_abs(&delta.counterfactual, truth.values());
    let e_abd = max_abs(&abduction.counterfactual, truth.values());
    let untouched = delta.delta.rows(0, 39).iter().all(|v| *v == 0.0);
    outcome(
        shape_ok && untouched && e_delta <= 1e-10 && e_abd <= 1e-10,
        format!("max error delta {e_delta:.2e}, abduction {e_abd:.2e} (bound 1e-10)"),
    )
}

fn joint_regression_improvement() -> Outcome {
    let cfg = ExperimentConfig::load(configs().join("exp1.cfg")).unwrap();
    let fit = cfg.fit.as_ref().unwrap();
    let sweep = fit.sweep.as_ref().unwrap();
    let schedule = cfg.schedule().unwrap();
    let config = fit.fit_config(None).unwrap();
    let setup = SweepSetup {
        random: cfg.model.as_ref().unwrap().random.as_ref(),
        fixed_model: None,
        schedule: &schedule,
        horizon: cfg.horizon().unwrap(),
        seed: cfg.seed,
        budget: fit.budget,
        config: &config,
    };
    let trials = setup.run(sweep.start, sweep.count).unwrap();
    let s = summarize(&trials);
    let setup_ok = s.trials == 20
        && fit.budget == Some(250)
        && trials.iter().all(|t| {
            t.comparison.joint.nodes.iter().all(|n| n.rows <= 250)
                && t.comparison
                    .observational
                    .nodes
                    .iter()
                    .all(|n| n.rows <= 250)
        });
    outcome(
        setup_ok && s.joint_better.iter().all(|b| *b) && s.joint_better.len() == 2,
        format!(
            "median MSE joint {:.3e}/{:.3e} vs observational {:.3e}/{:.3e} (lag 1/lag 2, {} seeds)",
            s.joint_median[0],
            s.joint_median[1],
            s.observational_median[0],
            s.observational_median[1],
            s.trials
        ),
    )
}

fn effect_oracle() -> Outcome {
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    for m in 0..100u64 {
        let dim = r.random_range(1..=5);
        let lag = r.random_range(1..=3);
        let model = any_model(dim, lag, 1000 + m);
        let fx = total_effects(&model, 30);
        let a = companion_matrix(&model);
        let mut power = DMatrix::<f64>::identity(dim * lag, dim * lag);
        for k in 0..=30 {
            let block = power.view((0, 0), (dim, dim));
            worst = worst.max((fx.get(k).unwrap() - block).amax());
            power = &a * power;
        }
    }
    outcome(
        worst <= 1e-10,
        format!("100 models, k <= 30, max error {worst:.2e} (bound 1e-10)"),
    )
}

fn objective_identity() -> Outcome {
    let mut r = rng(4);
    let mut worst: f64 = 0.0;
    for case in 0..50u64 {
        let dim = r.random_range(1..=5);
        let lag = r.random_range(1..=3);
        let horizon = r.random_range(lag + 5..120);
        let model = any_model(dim, lag, 2000 + case);
        let schedule = random_clamps(&mut r, dim, lag + 1, horizon, 3);
        let rec = simulate(&model, &schedule, horizon, None, case).unwrap();
        let trials = [Trial::from_schedule(rec, &schedule).unwrap()];
        let designs = build_designs(&trials, lag).unwrap();
        let theta = StackedCoefficients::new(
            DMatrix::from_fn(dim, dim * lag, |_, _| r.random_range(-1.0..1.0)),
            lag,
        )
        .unwrap();
        let naive = objective_naive(&theta, &trials).unwrap();
        let stratified = objective_stratified(&theta, &designs).unwrap();
        worst = worst.max((naive - stratified).abs() / naive.abs());
    }
    outcome(
        worst <= 1e-12,
        format!("50 datasets, max relative error {worst:.2e} (bound 1e-12)"),
    )
}

fn lasso_correctness() -> Outcome {
    let mut ols_gap: f64 = 0.0;
    let mut above_zero = true;
    let mut kkt_worst: f64 = 0.0;
    let mut converged = true;
    let tol = FitConfig::default().tolerance;
    for seed in 0..10u64 {
        let dim = 2 + (seed as usize % 4);
        let model = stable_model(dim, 2, 3000 + seed);
        let mut r = rng(seed);
        let schedule = random_clamps(&mut r, dim, 3, 200, 2);
        let rec = simulate(&model, &schedule, 200, None, seed).unwrap();
        let designs = build_designs(&[Trial::from_schedule(rec, &schedule).unwrap()], 2).unwrap();
        let ols = fit_ols(&designs, dim, 2).unwrap();
        let zero = fit_lasso(&designs, dim, 2, &FitConfig::lasso(0.0)).unwrap();
        ols_gap = ols_gap.max(max_abs(ols.estimate.theta(), zero.estimate.theta()));

        let critical = critical_lambda(&designs);
        for factor in [1.0 + 1e-9, 1.5, 10.0] {
            let fit = fit_lasso(&designs, dim, 2, &FitConfig::lasso(critical * factor)).unwrap();
            above_zero &= fit.estimate.theta().iter().all(|v| *v == 0.0);
        }
        for frac in [0.01, 0.1, 0.3, 0.7, 0.95] {
            let config = FitConfig::lasso(critical * frac);
            let fit = fit_lasso(&designs, dim, 2, &config).unwrap();
            converged &= fit.all_converged();
            for d in &designs {
                let theta = fit.estimate.node_row(d.node);
                let res = &d.response - &d.design * &theta;
                for (j, col) in d.design.column_iter().enumerate() {
                    let g = 2.0 * col.dot(&res);
                    let v = if theta[j] == 0.0 {
                        (g.abs() - config.lambda).max(0.0)
                    } else {
                        (g - config.lambda * theta[j].signum()).abs()
                    };
                    kkt_worst = kkt_worst.max(v);
                }
            }
        }
    }
    let mut r = rng(5);
    let mut closed_form: f64 = 0.0;
    for _ in 0..100 {
        let n = r.random_range(2..50);
        let z = DVector::from_fn(n, |_, _| r.random_range(-2.0..2.0));
        let y = DVector::from_fn(n, |_, _| r.random_range(-2.0..2.0));
        let zy: f64 = z.dot(&y);
        let lambda = r.random_range(0.0..2.0 * zy.abs() + 1.0);
        let design = NodeDesign {
            node: 0,
            design: DMatrix::from_column_slice(n, 1, z.as_slice()),
            response: y.clone(),
            times: (0..n).map(|t| (0, t + 2)).collect(),
        };
        let fit = fit_lasso(&[design], 1, 1, &FitConfig::lasso(lambda)).unwrap();
        let expected = soft_threshold(z.dot(&y), lambda / 2.0) / z.norm_squared();
        closed_form = closed_form.max((fit.estimate.theta()[(0, 0)] - expected).abs());
    }
    outcome(
        ols_gap <= 1e-6 && above_zero && closed_form <= 1e-10 && kkt_worst <= 10.0 * tol && converged,
        format!(
            "lambda=0 vs OLS {ols_gap:.2e}; zero above critical: {above_zero}; closed form {closed_form:.2e}; subgradient {kkt_worst:.2e} (bound {:.0e})",
            10.0 * tol
        ),
    )
}

fn round_trip_and_superposition() -> Outcome {
    let mut r = rng(6);
    let mut residual: f64 = 0.0;
    let mut replay: f64 = 0.0;
    let mut superposition: f64 = 0.0;
    let mut agreement: f64 = 0.0;
    for case in 0..200u64 {
        let dim = r.random_range(1..=4);
        let lag = r.random_range(1..=3);
        let horizon = r.random_range(lag + 10..100);
        let model = stable_model(dim, lag, 4000 + case);
        let factual_schedule = random_clamps(&mut r, dim, lag + 1, horizon, 2);
        let factual = simulate(&model, &factual_schedule, horizon, None, case).unwrap();

        let res = recover_residuals(&model, &factual, &factual_schedule).unwrap();
        let noise = factual.noise().unwrap();
        for t in 1..=horizon {
            for i in 0..dim {
                if res.is_recoverable(i, t) {
                    residual = residual.max((res.get(i, t).unwrap() - noise[(t - 1, i)]).abs());
                }
            }
        }
        let again = simulate_with_noise(
            &model,
            &factual_schedule,
            Some(&factual.initial(lag)),
            res.filled().clone(),
        )
        .unwrap();
        replay = replay.max(max_abs(again.values(), factual.values()));

        let hypothetical = random_clamps(&mut r, dim, lag + 1, horizon, 3);
        let query = CounterfactualQuery::new(&factual, &model, &hypothetical)
            .with_factual_schedule(&factual_schedule);
        let d = predict_delta(&query).unwrap();
        let a = predict_abduction(&query).unwrap();
        agreement = agreement.max(max_abs(&d.counterfactual, &a.counterfactual));

        let t1 = r.random_range(lag + 1..horizon);
        let t2 = if t1 + 1 < horizon { t1 + 1 } else { t1 - 1 }.max(lag + 1);
        if t1 != t2 {
            let observational =
                simulate(&model, &InterventionSchedule::empty(), horizon, None, case).unwrap();
            let p = shift(
                &model,
                r.random_range(0..dim),
                t1,
                r.random_range(-3.0..3.0),
            );
            let q = shift(
                &model,
                r.random_range(0..dim),
                t2,
                r.random_range(-3.0..3.0),
            );
            let delta = |entries| {
                let h = InterventionSchedule::new(entries).unwrap();
                predict_delta(&CounterfactualQuery::new(&observational, &model, &h))
                    .unwrap()
                    .delta
            };
            let both = delta(vec![p.clone(), q.clone()]);
            let sum = delta(vec![p]) + delta(vec![q]);
            superposition = superposition.max(max_abs(&both, &sum));
        }
    }
    outcome(
        residual <= 1e-12 && replay <= 1e-12 && superposition <= 1e-10 && agreement <= 1e-10,
        format!(
            "200 cases: residuals {residual:.2e}, replay {replay:.2e}, superposition {superposition:.2e}, delta vs abduction {agreement:.2e}"
        ),
    )
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn cli_determinism() -> Outcome {
    let work = tempfile::tempdir().unwrap();
    let runs = [
        ("fig2", &["simulate", "fit", "effects"][..]),
        ("exp1", &["simulate", "fit"][..]),
        ("exp2", &["simulate", "fit", "effects", "whatif"][..]),
    ];
    let mut checked = Vec::new();
    let mut passed = true;
    for (name, subs) in runs {
        let config = configs().join(format!("{name}.cfg"));
        for sub in subs {
            let mut outputs = Vec::new();
            for copy in ["a", "b"] {
                let out = work.path().join(format!("{name}_{sub}_{copy}"));
                let o = Command::new(env!("CARGO_BIN_EXE_varcf"))
                    .args([sub, "--config"])
                    .arg(&config)
                    .arg("--out")
                    .arg(&out)
                    .output()
                    .unwrap();
                passed &= o.status.success();
                outputs.push((snapshot(&out), o.stdout));
            }
            let same = outputs[0] == outputs[1] && !outputs[0].0.is_empty();
            passed &= same;
            checked.push(format!(
                "{name}:{sub}{}",
                if same { "" } else { " DIFFERS" }
            ));
        }
    }
    outcome(
        passed,
        format!("identical across two runs: {}", checked.join(", ")),
    )
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        (
            "1 counterfactual exactness",
            Some(Duration::from_secs(1)),
            counterfactual_exactness,
        ),
        (
            "2 joint regression improvement",
            Some(Duration::from_secs(30)),
            joint_regression_improvement,
        ),
        (
            "3 total effect oracle",
            Some(Duration::from_secs(5)),
            effect_oracle,
        ),
        ("4 objective identity", None, objective_identity),
        ("5 lasso correctness", None, lasso_correctness),
        (
            "6 round trip and superposition",
            Some(Duration::from_secs(10)),
            round_trip_and_superposition,
        ),
        ("7 cli determinism", None, cli_determinism),
    ];
    let mut failures = 0;
    for (name, limit, check) in criteria {
        let o = timed(limit, check);
        if !o.passed {
            failures += 1;
        }
        println!(
            "{} criterion {name}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
