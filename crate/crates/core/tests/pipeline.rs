use bayfactor::data::{load_csv, IngestOptions};
use bayfactor::sim::{auc, compute_metrics, gen_scenario, ScenarioSpec, Task};
use bayfactor::validation::binomial_instance;
use bayfactor::vb_linear::{predict_bayes_mc, LinearPosterior, VbLinear, VbOptions};
use bayfactor::vb_logistic::VbLogistic;
use bayfactor::{EbMode, HyperParams, PredictionRule};
use nalgebra::DVector;

fn opts() -> VbOptions {
    VbOptions { tol: 1e-7, ..VbOptions::default() }
}

#[test]
fn eb_vb_on_scenario_two_beats_the_null_rule_and_orders_the_groups() {
    let mut spec = ScenarioSpec::scenario2(21);
    spec.m = 100;
    spec.n_test = 500;
    let sc = gen_scenario(&spec).unwrap();
    let hyper = HyperParams::new(4, sc.train.n_groups()).with_eb(EbMode::Constrained);
    let fit = VbLinear::new(&sc.train, 4).unwrap().fit(&hyper, &opts()).unwrap();
    assert!(fit.converged);
    let vb = compute_metrics(&fit.rule, Some(&sc.truth), &sc.test, Task::Linear).unwrap();
    let null = PredictionRule { intercept: 0.0, coefficients: DVector::zeros(sc.train.p()) };
    let null = compute_metrics(&null, Some(&sc.truth), &sc.test, Task::Linear).unwrap();
    assert!(vb.pmse < null.pmse, "vb {} vs null {}", vb.pmse, null.pmse);
    assert!(vb.emse.unwrap() < null.emse.unwrap());
    // the high-variance second group is shrunk less
    let g = &fit.hyper.gamma_group;
    assert!(g[1] > g[0], "{g:?}");
    assert!((50.0 * g[0].ln() + 50.0 * g[1].ln()).abs() < 1e-8);
}

#[test]
fn unlabeled_rows_do_not_hurt_on_average() {
    let (mut with_m, mut without) = (0.0, 0.0);
    for seed in 0..5 {
        let mut spec = ScenarioSpec::scenario2(100 + seed);
        spec.m = 100;
        spec.n_test = 300;
        let sc = gen_scenario(&spec).unwrap();
        for (m, acc) in [(0, &mut without), (100, &mut with_m)] {
            let data = sc.train.with_unlabeled(m);
            let hyper = HyperParams::new(4, data.n_groups()).with_eb(EbMode::Constrained);
            let fit = VbLinear::new(&data, 4).unwrap().fit(&hyper, &opts()).unwrap();
            *acc += compute_metrics(&fit.rule, None, &sc.test, Task::Linear).unwrap().pmse;
        }
    }
    assert!(with_m <= without * 1.02, "with m {with_m}, without {without}");
}

#[test]
fn posterior_survives_serialization_and_predicts_identically() {
    let sc = gen_scenario(&ScenarioSpec::scenario1(4)).unwrap();
    let hyper = HyperParams::new(3, sc.train.n_groups());
    let prob = VbLinear::new(&sc.train, 3).unwrap();
    let fit = prob.fit(&hyper, &opts()).unwrap();
    let post = prob.posterior(&fit.corrected, &fit.hyper);
    let back: LinearPosterior = serde_json::from_str(&serde_json::to_string(&post).unwrap()).unwrap();
    assert_eq!(back, post);
    let a = predict_bayes_mc(&post, &sc.test.x, 200, 9).mean;
    let b = predict_bayes_mc(&back, &sc.test.x, 200, 9).mean;
    assert_eq!(a, b);
}

#[test]
fn csv_ingest_recovers_the_simulated_training_set() {
    let mut spec = ScenarioSpec::scenario1(6);
    spec.m = 10;
    let sc = gen_scenario(&spec).unwrap();
    let mut text = (1..=sc.train.p()).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",") + ",y\n";
    let y = sc.train.y();
    for i in 0..sc.train.n_total() {
        let row: Vec<String> = (0..sc.train.p()).map(|j| format!("{}", sc.train.x[(i, j)])).collect();
        let label = if i < sc.train.n() { format!("{}", y[i]) } else { String::new() };
        text.push_str(&format!("{},{label}\n", row.join(",")));
    }
    let path = std::env::temp_dir().join(format!("bayfactor-pipeline-{}.csv", std::process::id()));
    std::fs::write(&path, text).unwrap();
    let loaded = load_csv(&path, None, &IngestOptions::default());
    std::fs::remove_file(&path).unwrap();
    let loaded = loaded.unwrap();
    assert_eq!((loaded.n(), loaded.m(), loaded.p()), (spec.n, 10, spec.p));
    assert_eq!(loaded.x, sc.train.x);
    assert_eq!(loaded.y(), y);
}

#[test]
fn logistic_vb_ranks_training_cases() {
    let data = binomial_instance(200, 50, 10, 2, 3);
    let hyper = HyperParams::new(2, data.n_groups()).with_eb(EbMode::Constrained);
    let fit = VbLogistic::new(&data, 2).unwrap().fit(&hyper, &opts()).unwrap();
    assert!(fit.converged);
    let score = fit.rule.predict(&data.labeled_x());
    let labels: Vec<bool> = data.y().iter().map(|&v| v > 0.5).collect();
    let a = auc(&score, &labels).unwrap();
    assert!(a > 0.7, "auc {a}");
}
