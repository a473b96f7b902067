use bayfactor::data::{load_csv, IngestOptions};
use bayfactor::model::kaiser_dimension;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn bayfactor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bayfactor"))
        .args(args)
        .env("BAYFACTOR_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fit(dir: &Path, extra: &[&str]) -> Output {
    let train = data("scenario2_sample.csv");
    let groups = data("scenario2_groups.txt");
    let mut args = vec!["fit", "--input", s(&train), "--groups", s(&groups), "--out", s(dir)];
    args.extend_from_slice(extra);
    bayfactor(&args)
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn read_column(path: &Path) -> (String, Vec<String>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().map(str::to_string);
    let header = lines.next().unwrap();
    (header, lines.collect())
}

/// Write a binomial copy of the sample: y > 0 becomes 1, otherwise 0.
fn binomial_sample(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(data("scenario2_sample.csv")).unwrap();
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let (head, y) = line.rsplit_once(',').unwrap();
        let y = match (i, y) {
            (0, _) | (_, "") => y.to_string(),
            _ => ((y.parse::<f64>().unwrap() > 0.0) as u8).to_string(),
        };
        out.push_str(&format!("{head},{y}\n"));
    }
    let path = dir.join("binomial.csv");
    std::fs::write(&path, out).unwrap();
    path
}

#[test]
fn fit_vb_writes_valid_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = fit(dir.path(), &["--method", "vb", "--d", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&dir.path().join("fit_report.json"));
    assert_eq!(report["method"], "vb");
    assert_eq!(report["outcome_type"], "linear");
    assert_eq!(report["d"], 3);
    assert_eq!(report["n_labeled"], 50);
    assert_eq!(report["n_unlabeled"], 50);
    assert_eq!(report["p"], 100);
    assert_eq!(report["runtime_ms"], 0);
    assert_eq!(report["fitted"].as_array().unwrap().len(), 50);
    let trace: Vec<f64> = report["elbo_trace"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(!trace.is_empty());
    assert!(trace.windows(2).all(|w| w[1] >= w[0] - 1e-8 * w[0].abs()));
    let model = json(&dir.path().join("model.json"));
    assert_eq!(model["posterior"]["kind"], "linear");
    assert_eq!(model["feature_names"].as_array().unwrap().len(), 100);
}

#[test]
fn kaiser_dimension_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let o = fit(dir.path(), &["--method", "eb-vb"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let raw = load_csv(&data("scenario2_sample.csv"), Some(&data("scenario2_groups.txt")), &IngestOptions::default()).unwrap();
    let (std, _) = raw.standardize().unwrap();
    let report = json(&dir.path().join("fit_report.json"));
    assert_eq!(report["d_source"], "kaiser");
    assert_eq!(report["d"].as_u64().unwrap() as usize, kaiser_dimension(&std.labeled_x()));
    assert_eq!(report["gamma_group"].as_array().unwrap().len(), 2);
}

#[test]
fn missing_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let o = bayfactor(&["fit", "--input", s(&missing), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("model.json").exists());
}

#[test]
fn invalid_dimension_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(fit(dir.path(), &["--d", "zero"]).status.code(), Some(2));
    assert_eq!(fit(dir.path(), &["--d", "0"]).status.code(), Some(2));
}

#[test]
fn plugin_prediction_on_training_rows_matches_fitted_values() {
    let dir = tempfile::tempdir().unwrap();
    assert!(fit(dir.path(), &["--method", "eb-vb", "--d", "4"]).status.success());
    // labeled rows only, in file order
    let text = std::fs::read_to_string(data("scenario2_sample.csv")).unwrap();
    let labeled: String = text.lines().enumerate().filter(|(i, l)| *i == 0 || !l.ends_with(',')).map(|(_, l)| format!("{l}\n")).collect();
    let input = dir.path().join("labeled.csv");
    std::fs::write(&input, labeled).unwrap();
    let model = dir.path().join("model.json");
    let out = dir.path().join("pred.csv");
    let o = bayfactor(&["predict", "--model", s(&model), "--input", s(&input), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_column(&out);
    assert_eq!(header, "prediction");
    let fitted = json(&dir.path().join("fit_report.json"))["fitted"].clone();
    let fitted: Vec<f64> = fitted.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(rows.len(), fitted.len());
    for (r, f) in rows.iter().zip(&fitted) {
        assert_eq!(r.parse::<f64>().unwrap().to_bits(), f.to_bits());
    }
}

#[test]
fn mc_prediction_is_deterministic_given_seed() {
    let dir = tempfile::tempdir().unwrap();
    assert!(fit(dir.path(), &["--d", "3"]).status.success());
    let model = dir.path().join("model.json");
    let test = data("scenario2_test.csv");
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = bayfactor(&[
            "predict", "--model", s(&model), "--input", s(&test), "--predict-mode", "mc", "--mc-draws", "300", "--seed", seed,
            "--out", s(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out).unwrap()
    };
    let a = run("a.csv", "4");
    assert_eq!(a, run("b.csv", "4"));
    assert_ne!(a, run("c.csv", "5"));
}

#[test]
fn feature_count_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert!(fit(dir.path(), &["--d", "2"]).status.success());
    let text = std::fs::read_to_string(data("scenario2_test.csv")).unwrap();
    let narrow: String = text.lines().map(|l| l.split(',').take(10).collect::<Vec<_>>().join(",") + "\n").collect();
    let input = dir.path().join("narrow.csv");
    std::fs::write(&input, narrow).unwrap();
    let model = dir.path().join("model.json");
    let out = dir.path().join("pred.csv");
    let o = bayfactor(&["predict", "--model", s(&model), "--input", s(&input), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("schema mismatch"));
}

#[test]
fn point_estimate_models_reject_posterior_prediction() {
    let dir = tempfile::tempdir().unwrap();
    assert!(fit(dir.path(), &["--method", "ridge"]).status.success());
    let model = dir.path().join("model.json");
    let test = data("scenario2_test.csv");
    let out = dir.path().join("pred.csv");
    let o = bayfactor(&["predict", "--model", s(&model), "--input", s(&test), "--predict-mode", "mc", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn binomial_fit_reports_binomial_and_predicts_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    let input = binomial_sample(dir.path());
    let o = bayfactor(&["fit", "--input", s(&input), "--outcome", "binomial", "--d", "2", "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&dir.path().join("fit_report.json"));
    assert_eq!(report["outcome_type"], "binomial");
    assert!(report["fitted"].as_array().unwrap().iter().all(|v| (0.0..=1.0).contains(&v.as_f64().unwrap())));
    let model = dir.path().join("model.json");
    let test = data("scenario2_test.csv");
    for mode in ["plugin", "mc", "taylor"] {
        let out = dir.path().join(format!("{mode}.csv"));
        let o = bayfactor(&["predict", "--model", s(&model), "--input", s(&test), "--predict-mode", mode, "--out", s(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let (header, rows) = read_column(&out);
        assert_eq!(header, "probability");
        assert_eq!(rows.len(), 100);
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.parse::<f64>().unwrap())));
    }
}

#[test]
fn frequentist_methods_reject_binomial_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    let input = binomial_sample(dir.path());
    let o = bayfactor(&["fit", "--input", s(&input), "--outcome", "binomial", "--method", "mle", "--d", "2", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ignoring_blank_rows_drops_unlabeled_data() {
    let dir = tempfile::tempdir().unwrap();
    let o = fit(dir.path(), &["--d", "2", "--m-unlabeled-from-blanks", "false"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&dir.path().join("fit_report.json"))["n_unlabeled"], 0);
}

#[test]
fn gibbs_fit_writes_draws() {
    let dir = tempfile::tempdir().unwrap();
    let draws = dir.path().join("draws.csv");
    let o = fit(dir.path(), &["--method", "gibbs", "--d", "2", "--n-iter", "300", "--burn-in", "100", "--thin", "2", "--draws-out", s(&draws)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (_, rows) = read_column(&draws);
    assert_eq!(rows.len(), 100);
}

#[test]
fn simulate_writes_blank_outcomes_for_unlabeled_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = bayfactor(&["simulate", "--scenario", "1", "--seed", "3", "--n", "20", "--m", "7", "--n-test", "5", "--out", s(dir.path())]);
    assert!(o.status.success());
    let (header, rows) = read_column(&dir.path().join("train.csv"));
    assert_eq!(header.split(',').count(), 101);
    assert_eq!(rows.iter().filter(|r| r.ends_with(',')).count(), 7);
    assert_eq!(read_column(&dir.path().join("test.csv")).1.len(), 5);
    let groups = std::fs::read_to_string(dir.path().join("groups.txt")).unwrap();
    assert_eq!(groups.lines().count(), 100);
    assert!(json(&dir.path().join("truth.json"))["standardized"].is_object());
}

#[test]
fn standardize_output_has_unit_scale() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("std.csv");
    let tr = dir.path().join("transform.json");
    let input = data("scenario2_sample.csv");
    let o = bayfactor(&["standardize", "--input", s(&input), "--out", s(&out), "--transform-out", s(&tr)]);
    assert!(o.status.success());
    let (_, rows) = read_column(&out);
    let labeled: Vec<f64> = rows.iter().filter(|r| !r.ends_with(',')).map(|r| r.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(labeled.len(), 50);
    let mean = labeled.iter().sum::<f64>() / 50.0;
    let ss = labeled.iter().map(|v| v * v).sum::<f64>();
    assert!(mean.abs() < 1e-12);
    assert!((ss - 50.0).abs() < 1e-9);
    assert_eq!(json(&tr)["means"].as_array().unwrap().len(), 100);
}

#[test]
fn check_runs_only_the_selected_criterion() {
    let o = bayfactor(&["check", "--criterion", "elbo-monotone"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let lines: Vec<&str> = stdout.lines().filter(|l| l.starts_with("criterion")).collect();
    assert_eq!(lines.len(), 1);
    assert!(lines[0].contains("elbo-monotone") && lines[0].contains("PASS"));
}

#[test]
fn forced_failure_exits_1() {
    let o = bayfactor(&["check", "--criterion", "1", "--force-failure"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn unknown_criterion_exits_2() {
    assert_eq!(bayfactor(&["check", "--criterion", "nope"]).status.code(), Some(2));
}

#[test]
fn benchmark_writes_both_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = bayfactor(&[
        "benchmark", "--scenarios", "1", "--methods", "null,ridge", "--m-values", "0", "--replications", "2", "--out", s(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_column(&dir.path().join("benchmark.csv"));
    assert!(header.starts_with("scenario,method,m,replication"));
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.ends_with(",ok")));
    assert_eq!(read_column(&dir.path().join("medians.csv")).1.len(), 2);
}

#[test]
fn unknown_benchmark_method_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = bayfactor(&["benchmark", "--methods", "lasso", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}
