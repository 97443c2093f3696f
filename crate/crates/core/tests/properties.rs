mod common;

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use common::{any_model, max_abs, random_clamps, rng, shift, stable_model};
use varcf::dataset::NodeDesign;
use varcf::estimation::{critical_lambda, objective_naive, objective_stratified, soft_threshold};
use varcf::intervention::Mechanism;
use varcf::{
    build_designs, build_rows, fit_lasso, fit_ols, partition, predict_abduction, predict_delta,
    recover_residuals, simulate, simulate_with_noise, CounterfactualQuery, FitConfig,
    InterventionSchedule, ScheduleEntry, StackedCoefficients, Trial, Window,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_is_exhaustive_and_disjoint(
        dim in 1usize..6, horizon in 2usize..120, seed in any::<u64>()
    ) {
        let mut r = rng(seed);
        let schedule = random_clamps(&mut r, dim, 1, horizon, 4);
        let p = partition(&schedule, dim, horizon).unwrap();
        let all: BTreeSet<usize> = (1..=horizon).collect();
        let mut seen = p.observational_set();
        for i in 0..dim {
            let own = p.intervened_set(i);
            let complement: BTreeSet<usize> = p.complement_set(i).into_iter().collect();
            let own_set: BTreeSet<usize> = own.iter().copied().collect();
            prop_assert!(own_set.is_disjoint(&complement));
            prop_assert_eq!(own_set.union(&complement).copied().collect::<BTreeSet<_>>(), all.clone());
            seen.extend(own);
        }
        seen.sort_unstable();
        prop_assert_eq!(seen, (1..=horizon).collect::<Vec<_>>());

        let mut shuffled = schedule.entries().to_vec();
        shuffled.shuffle(&mut r);
        let again = partition(&InterventionSchedule::new(shuffled).unwrap(), dim, horizon).unwrap();
        prop_assert_eq!(again, p);
    }

    #[test]
    fn row_counts_match_eligible_times(
        dim in 1usize..5, lag in 1usize..4, horizon in 5usize..80, seed in any::<u64>()
    ) {
        let mut r = rng(seed);
        let model = any_model(dim, lag, seed);
        let schedule = random_clamps(&mut r, dim, lag + 1, horizon, 3);
        let rec = simulate(&model, &schedule, horizon, None, seed).unwrap();
        let p = partition(&schedule, dim, horizon).unwrap();
        let trial = Trial::from_schedule(rec, &schedule).unwrap();
        for i in 0..dim {
            let expected = (lag + 1..=horizon).filter(|&t| p.in_complement(i, t)).count();
            prop_assert_eq!(build_rows(std::slice::from_ref(&trial), i, lag).unwrap().len(), expected);
        }
    }

    #[test]
    fn residuals_round_trip(
        dim in 1usize..5, lag in 1usize..4, horizon in 5usize..80, seed in any::<u64>()
    ) {
        let mut r = rng(seed ^ 0x5eed);
        let model = stable_model(dim, lag, seed);
        let schedule = random_clamps(&mut r, dim, lag + 1, horizon, 3);
        let rec = simulate(&model, &schedule, horizon, None, seed).unwrap();
        let res = recover_residuals(&model, &rec, &schedule).unwrap();
        let noise = rec.noise().unwrap();
        for t in 1..=horizon {
            for i in 0..dim {
                if res.is_recoverable(i, t) {
                    prop_assert!((res.get(i, t).unwrap() - noise[(t - 1, i)]).abs() <= 1e-12);
                }
            }
        }
        let again = simulate_with_noise(
            &model, &schedule, Some(&rec.initial(lag)), res.filled().clone()
        ).unwrap();
        prop_assert!(max_abs(again.values(), rec.values()) <= 1e-12);
    }

    #[test]
    fn clamp_ignores_history_and_noise(seed in any::<u64>(), other in any::<u64>()) {
        let model = any_model(3, 2, seed);
        let signal: Vec<f64> = (10..=14).map(|t| 4.0 * (t as f64 / 2.0).sin()).collect();
        let schedule = InterventionSchedule::new(vec![
            ScheduleEntry::clamp(1, Window::new(10, 14).unwrap(), signal.clone()).unwrap(),
        ]).unwrap();
        let init = DMatrix::from_fn(2, 3, |r, c| (r + 2 * c) as f64 - 2.0);
        let a = simulate(&model, &schedule, 20, None, seed).unwrap();
        let b = simulate(&model, &schedule, 20, Some(&init), other).unwrap();
        for (k, t) in (10..=14).enumerate() {
            prop_assert_eq!(a.value(1, t), signal[k]);
            prop_assert_eq!(b.value(1, t), signal[k]);
        }
    }

    #[test]
    fn clamp_equals_zeroed_modify(seed in any::<u64>()) {
        let model = stable_model(3, 2, seed);
        let w = Window::new(8, 20).unwrap();
        let signal: Vec<f64> = w.times().map(|t| (t as f64).cos()).collect();
        let clamp = ScheduleEntry::clamp(2, w, signal.clone()).unwrap();
        let modify = ScheduleEntry::new(
            2, w, Mechanism::Clamp { signal }.as_modify(3, 2)
        ).unwrap();
        let a = simulate(&model, &InterventionSchedule::new(vec![clamp]).unwrap(), 40, None, seed).unwrap();
        let b = simulate(&model, &InterventionSchedule::new(vec![modify]).unwrap(), 40, None, seed).unwrap();
        prop_assert_eq!(a.values(), b.values());
    }

    #[test]
    fn point_overrides_superpose(
        dim in 1usize..5, lag in 1usize..4, seed in any::<u64>(),
        d1 in -5.0f64..5.0, d2 in -5.0f64..5.0
    ) {
        let mut r = rng(seed);
        let horizon = 60;
        let model = stable_model(dim, lag, seed);
        let factual = simulate(&model, &InterventionSchedule::empty(), horizon, None, seed).unwrap();
        let t1 = r.random_range(lag + 1..horizon);
        let mut t2 = r.random_range(lag + 1..horizon);
        if t2 == t1 {
            t2 += 1;
        }
        let a = shift(&model, r.random_range(0..dim), t1, d1);
        let b = shift(&model, r.random_range(0..dim), t2, d2);
        let delta = |entries: Vec<ScheduleEntry>| {
            let hyp = InterventionSchedule::new(entries).unwrap();
            predict_delta(&CounterfactualQuery::new(&factual, &model, &hyp)).unwrap().delta
        };
        let both = delta(vec![a.clone(), b.clone()]);
        let sum = delta(vec![a]) + delta(vec![b]);
        prop_assert!(max_abs(&both, &sum) <= 1e-10);
    }

    #[test]
    fn delta_depends_only_on_clamp_offsets(seed in any::<u64>(), other in any::<u64>()) {
        let model = stable_model(3, 2, seed);
        let horizon = 50;
        let empty = InterventionSchedule::empty();
        let x = simulate(&model, &empty, horizon, None, seed).unwrap();
        let y = simulate(&model, &empty, horizon, None, other).unwrap();
        let w = Window::new(20, 35).unwrap();
        let offsets: Vec<f64> = w.times().map(|t| (t as f64 * 0.3).sin()).collect();
        let clamp_for = |rec: &varcf::Recording| {
            let signal = w.times().zip(&offsets).map(|(t, o)| rec.value(0, t) + o).collect();
            InterventionSchedule::new(vec![ScheduleEntry::clamp(0, w, signal).unwrap()]).unwrap()
        };
        let (hx, hy) = (clamp_for(&x), clamp_for(&y));
        let dx = predict_delta(&CounterfactualQuery::new(&x, &model, &hx)).unwrap().delta;
        let dy = predict_delta(&CounterfactualQuery::new(&y, &model, &hy)).unwrap().delta;
        prop_assert!(max_abs(&dx, &dy) <= 1e-12);
        prop_assert!(dx.rows(0, 19).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn lasso_l1_norm_shrinks_with_lambda(seed in any::<u64>()) {
        let model = stable_model(3, 2, seed);
        let rec = simulate(&model, &InterventionSchedule::empty(), 120, None, seed).unwrap();
        let designs = build_designs(&[Trial::from_schedule(rec, &InterventionSchedule::empty()).unwrap()], 2).unwrap();
        let top = critical_lambda(&designs);
        let mut previous = [f64::INFINITY; 3];
        for k in 0..=10 {
            let lambda = top * k as f64 / 10.0;
            let report = fit_lasso(&designs, 3, 2, &FitConfig::lasso(lambda)).unwrap();
            prop_assert!(report.all_converged());
            for (i, prev) in previous.iter_mut().enumerate() {
                let norm = report.estimate.node_row(i).lp_norm(1);
                prop_assert!(norm <= *prev + 1e-7, "node {i} lambda {lambda}: {norm} > {prev}");
                *prev = norm;
            }
        }
    }

    #[test]
    fn lasso_meets_subgradient_conditions(seed in any::<u64>(), frac in 0.0f64..1.2) {
        let model = stable_model(4, 2, seed);
        let rec = simulate(&model, &InterventionSchedule::empty(), 150, None, seed).unwrap();
        let designs = build_designs(&[Trial::from_schedule(rec, &InterventionSchedule::empty()).unwrap()], 2).unwrap();
        let config = FitConfig::lasso(critical_lambda(&designs) * frac);
        let report = fit_lasso(&designs, 4, 2, &config).unwrap();
        let bound = 10.0 * config.tolerance;
        for d in &designs {
            let theta = report.estimate.node_row(d.node);
            let residual = &d.response - &d.design * &theta;
            for (j, col) in d.design.column_iter().enumerate() {
                let g = 2.0 * col.dot(&residual);
                if theta[j] == 0.0 {
                    prop_assert!(g.abs() <= config.lambda + bound);
                } else {
                    prop_assert!((g - config.lambda * theta[j].signum()).abs() <= bound);
                }
            }
        }
    }

    #[test]
    fn single_column_lasso_is_soft_threshold(
        values in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 2..40),
        lambda in 0.0f64..20.0
    ) {
        let z = DVector::from_iterator(values.len(), values.iter().map(|v| v.0));
        prop_assume!(z.norm_squared() > 1e-3);
        let y = DVector::from_iterator(values.len(), values.iter().map(|v| v.1));
        let design = NodeDesign {
            node: 0,
            design: DMatrix::from_column_slice(values.len(), 1, z.as_slice()),
            response: y.clone(),
            times: (0..values.len()).map(|t| (0, t + 2)).collect(),
        };
        let report = fit_lasso(&[design], 1, 1, &FitConfig::lasso(lambda)).unwrap();
        let expected = soft_threshold(z.dot(&y), lambda / 2.0) / z.norm_squared();
        prop_assert!((report.estimate.theta()[(0, 0)] - expected).abs() <= 1e-10);
    }

    #[test]
    fn node_fits_are_separable(seed in any::<u64>(), keep in 5usize..60) {
        let model = stable_model(3, 2, seed);
        let rec = simulate(&model, &InterventionSchedule::empty(), 100, None, seed).unwrap();
        let designs = build_designs(&[Trial::from_schedule(rec, &InterventionSchedule::empty()).unwrap()], 2).unwrap();
        let mut altered = designs.clone();
        let d = &mut altered[2];
        d.design = d.design.rows(0, keep).into_owned();
        d.response = d.response.rows(0, keep).into_owned();
        d.times.truncate(keep);
        for config in [FitConfig::default(), FitConfig::lasso(3.0)] {
            let a = varcf::fit(&designs, 3, 2, &config).unwrap();
            let b = varcf::fit(&altered, 3, 2, &config).unwrap();
            for i in 0..2 {
                prop_assert_eq!(a.estimate.node_row(i), b.estimate.node_row(i));
            }
        }
    }

    #[test]
    fn objective_forms_agree(
        dim in 1usize..5, lag in 1usize..4, horizon in 6usize..60, seed in any::<u64>()
    ) {
        let mut r = rng(seed);
        let model = any_model(dim, lag, seed);
        let schedule = random_clamps(&mut r, dim, lag + 1, horizon, 3);
        let rec = simulate(&model, &schedule, horizon, None, seed).unwrap();
        let trials = [Trial::from_schedule(rec, &schedule).unwrap()];
        let designs = build_designs(&trials, lag).unwrap();
        let theta = StackedCoefficients::new(
            DMatrix::from_fn(dim, dim * lag, |_, _| r.random_range(-1.0..1.0)), lag
        ).unwrap();
        let naive = objective_naive(&theta, &trials).unwrap();
        let stratified = objective_stratified(&theta, &designs).unwrap();
        prop_assert!((naive - stratified).abs() <= 1e-12 * naive.abs().max(1e-300));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn delta_and_abduction_agree_on_clamps(
        dim in 1usize..5, lag in 1usize..4, horizon in 10usize..80, seed in any::<u64>()
    ) {
        let mut r = rng(seed);
        let model = stable_model(dim, lag, seed);
        let factual_schedule = random_clamps(&mut r, dim, lag + 1, horizon, 2);
        let factual = simulate(&model, &factual_schedule, horizon, None, seed).unwrap();
        let hypothetical = random_clamps(&mut r, dim, lag + 1, horizon, 3);
        let query = CounterfactualQuery::new(&factual, &model, &hypothetical)
            .with_factual_schedule(&factual_schedule);
        let delta = predict_delta(&query).unwrap();
        let abduction = predict_abduction(&query).unwrap();
        let truth = query.resimulate(factual.noise().unwrap()).unwrap();
        prop_assert!(max_abs(&delta.counterfactual, &abduction.counterfactual) <= 1e-10);
        prop_assert!(max_abs(&delta.counterfactual, truth.values()) <= 1e-10);
        if let Some(start) = hypothetical.first_start() {
            prop_assert!(delta.delta.rows(0, start - 1).iter().all(|v| *v == 0.0));
        }
    }
}

#[test]
fn noise_free_ols_recovers_generator() {
    for seed in 0..10 {
        let mut model = stable_model(3, 2, seed);
        model = varcf::VarModel::new(model.coeffs().to_vec(), DMatrix::zeros(3, 3)).unwrap();
        let mut r = rng(seed);
        let init = DMatrix::from_fn(2, 3, |_, _| r.random_range(-1.0..1.0));
        // keep the trajectory away from zero by kicking it with clamps
        let schedule = random_clamps(&mut r, 3, 3, 200, 4);
        let rec = simulate(&model, &schedule, 200, Some(&init), seed).unwrap();
        let designs = build_designs(&[Trial::from_schedule(rec, &schedule).unwrap()], 2).unwrap();
        let report = fit_ols(&designs, 3, 2).unwrap();
        let truth = StackedCoefficients::from_model(&model);
        assert!(
            max_abs(report.estimate.theta(), truth.theta()) <= 1e-8,
            "seed {seed}"
        );
    }
}
