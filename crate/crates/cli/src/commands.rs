use crate::args::*;
use bayfactor::data::{load_csv, load_features_csv, IngestOptions};
use bayfactor::freq::{
    cross_cov, cv_penalty, default_ridge_grid, em_semisupervised, fa_mle, fa_pml, ridge_fit, two_step_fit, CvBlock,
    EmOptions, FaOptions, FreqError, Penalty, PenaltyTarget, DEFAULT_PENALTY_GRID,
};
use bayfactor::gibbs::{gibbs_linear, gibbs_logistic, ChainConfig, GibbsError, GibbsSummary};
use bayfactor::model::{induced_rule, kaiser_dimension, ModelError};
use bayfactor::sim::{gen_scenario, pearson, run_benchmark, BenchmarkConfig, Method, ScenarioSpec, SimError};
use bayfactor::validation::{self, CriterionReport, CRITERIA};
use bayfactor::vb_linear::{predict_bayes_mc, predict_bayes_taylor, LinearPosterior, VbError, VbLinear, VbOptions};
use bayfactor::vb_logistic::{expit, predict_logistic, LogisticPosterior, VbLogistic};
use bayfactor::{Dataset, EbMode, FactorParams, HyperParams, OutcomeKind, PredictionRule, Standardizer};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const MODEL_FORMAT: &str = "bayfactor-model/1";

#[derive(Debug)]
pub enum CliError {
    /// Unreadable or inconsistent input (exit 2).
    Input(String),
    /// The estimator failed (exit 3).
    Estimation(String),
    /// A check ran and failed (exit 1).
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::CheckFailed(_) => 1,
            CliError::Input(_) => 2,
            CliError::Estimation(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "bad input: {m}"),
            CliError::Estimation(m) => write!(f, "estimation failed: {m}"),
            CliError::CheckFailed(m) => write!(f, "check failed: {m}"),
        }
    }
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn estimation<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Estimation(e.to_string())
}

impl From<VbError> for CliError {
    fn from(e: VbError) -> Self {
        match e {
            VbError::InvalidDimension { .. } | VbError::WrongOutcome(_) | VbError::Data(_) => input(e),
            _ => estimation(e),
        }
    }
}

impl From<GibbsError> for CliError {
    fn from(e: GibbsError) -> Self {
        match e {
            GibbsError::InvalidConfig(_) | GibbsError::InvalidDimension { .. } | GibbsError::WrongOutcome(_) => input(e),
            _ => estimation(e),
        }
    }
}

impl From<FreqError> for CliError {
    fn from(e: FreqError) -> Self {
        match e {
            FreqError::InvalidDimension { .. } | FreqError::Data(_) => input(e),
            _ => estimation(e),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        estimation(e)
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidSpec(_) => input(e),
            _ => estimation(e),
        }
    }
}

/// Files produced by a command, written by the caller.
#[derive(Debug, Default, PartialEq)]
pub struct Output {
    pub files: Vec<(PathBuf, Vec<u8>)>,
    pub stdout: String,
}

impl Output {
    fn file(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    pub fn write(&self) -> Result<(), CliError> {
        for (path, bytes) in &self.files {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| input(format!("{}: {e}", dir.display())))?;
            }
            std::fs::write(path, bytes).map_err(|e| input(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Posterior {
    Linear(LinearPosterior),
    Logistic(LogisticPosterior),
}

/// Persisted model: the standardizing transform, point parameters, the plug-in
/// rule on the standardized scale and, for VB fits, the posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub method: String,
    pub outcome_type: OutcomeKind,
    pub d: usize,
    pub feature_names: Vec<String>,
    pub label_column: String,
    pub trials_column: String,
    pub standardizer: Standardizer,
    pub params: Option<FactorParams>,
    pub rule: PredictionRule,
    pub posterior: Option<Posterior>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub method: String,
    pub outcome_type: OutcomeKind,
    pub d: usize,
    pub d_source: String,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub p: usize,
    pub seed: u64,
    pub converged: bool,
    pub n_sweeps: usize,
    /// ELBO after every sweep (VB) or the objective after every iteration (EM, FA).
    pub elbo_trace: Vec<f64>,
    pub gamma_overall: Option<f64>,
    pub gamma_group: Vec<f64>,
    pub runtime_ms: u128,
    /// Plug-in predictions for the labeled rows, in file order, on the outcome scale.
    pub fitted: Vec<f64>,
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn ingest(args: &DataArgs) -> IngestOptions {
    IngestOptions {
        outcome: match args.outcome {
            OutcomeArg::Linear => OutcomeKind::Linear,
            OutcomeArg::Binomial => OutcomeKind::Binomial,
        },
        label_column: args.label_column.clone(),
        trials_column: args.trials_column.clone(),
    }
}

/// Load, optionally drop unlabeled rows, and standardize.
pub fn load_standardized(args: &DataArgs) -> Result<(Dataset, Standardizer), CliError> {
    if !args.input.exists() {
        return Err(input(format!("{}: no such file", args.input.display())));
    }
    let raw = load_csv(&args.input, args.groups.as_deref(), &ingest(args)).map_err(input)?;
    let raw = if args.m_unlabeled_from_blanks { raw } else { raw.with_unlabeled(0) };
    raw.standardize().map_err(input)
}

/// Latent dimension from "kaiser" or a positive integer.
pub fn resolve_d(spec: &str, data: &Dataset) -> Result<(usize, &'static str), CliError> {
    if spec.eq_ignore_ascii_case("kaiser") {
        return Ok((kaiser_dimension(&data.labeled_x()), "kaiser"));
    }
    match spec.parse::<usize>() {
        Ok(d) if d > 0 => Ok((d, "user")),
        _ => Err(input(format!("--d must be a positive integer or \"kaiser\", got {spec:?}"))),
    }
}

fn eb_mode(arg: Option<EbModeArg>, method: MethodArg) -> EbMode {
    match arg {
        Some(EbModeArg::Off) => EbMode::Off,
        Some(EbModeArg::Free) => EbMode::Free,
        Some(EbModeArg::Constrained) => EbMode::Constrained,
        None if method == MethodArg::EbVb => EbMode::Constrained,
        None => EbMode::Off,
    }
}

fn check_positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(input(format!("{name} must be positive")))
    }
}

fn gibbs_params(s: &GibbsSummary) -> FactorParams {
    let mut params = FactorParams::from_joint(&s.loadings_mean, &s.psi_mean);
    params.beta0 = s.beta0_mean;
    params
}

fn plug_in(rule: &PredictionRule, x: &DMatrix<f64>, kind: OutcomeKind, t: &Standardizer) -> DVector<f64> {
    let eta = rule.predict(x);
    match kind {
        OutcomeKind::Linear => t.invert_y(&eta),
        OutcomeKind::Binomial => eta.map(expit),
    }
}

struct Fitted {
    params: Option<FactorParams>,
    rule: PredictionRule,
    posterior: Option<Posterior>,
    converged: bool,
    n_sweeps: usize,
    trace: Vec<f64>,
    gamma: Option<HyperParams>,
    draws: Option<Vec<u8>>,
}

impl Fitted {
    fn point(params: Option<FactorParams>, rule: PredictionRule, n_sweeps: usize, trace: Vec<f64>) -> Self {
        Self {
            params,
            rule,
            posterior: None,
            converged: true,
            n_sweeps,
            trace,
            gamma: None,
            draws: None,
        }
    }
}

fn fit_model(args: &FitArgs, data: &Dataset, d: usize) -> Result<Fitted, CliError> {
    let kind = data.outcome.kind();
    let fa = FaOptions { tol: args.tol, max_iter: args.max_iter, ..FaOptions::default() };
    let vb = VbOptions { tol: args.tol, max_iter: args.max_iter, seed: args.seed };
    let hyper = HyperParams::new(d, data.n_groups()).with_eb(eb_mode(args.eb_mode, args.method));
    let linear_only = |name: &str| -> Result<(), CliError> {
        if kind == OutcomeKind::Linear {
            Ok(())
        } else {
            Err(input(format!("method {name} supports linear outcomes only")))
        }
    };
    Ok(match args.method {
        MethodArg::Vb | MethodArg::EbVb => match kind {
            OutcomeKind::Linear => {
                let prob = VbLinear::new(data, d)?;
                let fit = prob.fit(&hyper, &vb)?;
                let post = prob.posterior(&fit.corrected, &fit.hyper);
                Fitted {
                    params: Some(fit.params),
                    rule: fit.rule,
                    posterior: Some(Posterior::Linear(post)),
                    converged: fit.converged,
                    n_sweeps: fit.n_sweeps,
                    trace: fit.state.elbo_trace,
                    gamma: Some(fit.hyper),
                    draws: None,
                }
            }
            OutcomeKind::Binomial => {
                let prob = VbLogistic::new(data, d)?;
                let fit = prob.fit(&hyper, &vb)?;
                let post = prob.posterior(&fit.state, &fit.hyper);
                Fitted {
                    params: Some(fit.params),
                    rule: fit.rule,
                    posterior: Some(Posterior::Logistic(post)),
                    converged: fit.converged,
                    n_sweeps: fit.n_sweeps,
                    trace: fit.state.elbo_trace,
                    gamma: Some(fit.hyper),
                    draws: None,
                }
            }
        },
        MethodArg::Gibbs => {
            let cfg = ChainConfig { n_iter: args.n_iter, burn_in: args.burn_in, thin: args.thin, seed: args.seed };
            let s = match kind {
                OutcomeKind::Linear => gibbs_linear(data, d, &hyper, &cfg)?,
                OutcomeKind::Binomial => gibbs_logistic(data, d, &hyper, &cfg)?,
            };
            let mut draws = Vec::new();
            s.draws.write_csv(&mut draws)?;
            let mut f = Fitted::point(Some(gibbs_params(&s)), s.rule.clone(), cfg.n_iter, Vec::new());
            f.draws = Some(draws);
            f
        }
        MethodArg::Mle => {
            linear_only("mle")?;
            let fit = fa_mle(&cross_cov(&data.joint_labeled()), d, &fa)?;
            let params = fit.to_params();
            Fitted::point(Some(params.clone()), induced_rule(&params)?, fit.iterations, fit.trace)
        }
        MethodArg::Pml => {
            linear_only("pml")?;
            let cv = cv_penalty(data, d, args.folds, &DEFAULT_PENALTY_GRID, PenaltyTarget::Identity, CvBlock::Joint, &fa)?;
            let pen = Penalty { gamma: cv.gamma, target: PenaltyTarget::Identity };
            let fit = fa_pml(&cross_cov(&data.joint_labeled()), d, &pen, &fa)?;
            let params = fit.to_params();
            Fitted::point(Some(params.clone()), induced_rule(&params)?, fit.iterations, fit.trace)
        }
        MethodArg::Em => {
            linear_only("em")?;
            let opts = EmOptions { tol: args.tol, max_iter: args.max_iter, ..EmOptions::default() };
            let fit = em_semisupervised(data, d, None, &opts)?;
            Fitted::point(Some(fit.params.clone()), induced_rule(&fit.params)?, fit.iterations, fit.objective_trace)
        }
        MethodArg::TwoStep => {
            linear_only("two-step")?;
            let cv = cv_penalty(data, d, args.folds, &DEFAULT_PENALTY_GRID, PenaltyTarget::Identity, CvBlock::Features, &fa)?;
            let pen = Penalty { gamma: cv.gamma, target: PenaltyTarget::Identity };
            let fit = two_step_fit(data, d, &pen, &fa)?;
            Fitted::point(None, fit.rule, 0, Vec::new())
        }
        MethodArg::Ridge => {
            linear_only("ridge")?;
            let fit = ridge_fit(data, args.folds, &default_ridge_grid())?;
            Fitted::point(None, fit.rule, 0, Vec::new())
        }
    })
}

pub fn run_fit(args: &FitArgs) -> Result<Output, CliError> {
    check_positive("--tol", args.tol)?;
    if args.max_iter == 0 || args.folds < 2 {
        return Err(input("--max-iter must be positive and --folds at least 2"));
    }
    let start = Instant::now();
    let (data, transform) = load_standardized(&args.data)?;
    let (d, d_source) = resolve_d(&args.d, &data)?;
    let fitted = fit_model(args, &data, d)?;
    let kind = data.outcome.kind();
    let runtime_ms = if args.timing { start.elapsed().as_millis() } else { 0 };
    let fit_vals = plug_in(&fitted.rule, &data.labeled_x(), kind, &transform);
    let report = FitReport {
        method: args.method.name().into(),
        outcome_type: kind,
        d,
        d_source: d_source.into(),
        n_labeled: data.n(),
        n_unlabeled: data.m(),
        p: data.p(),
        seed: args.seed,
        converged: fitted.converged,
        n_sweeps: fitted.n_sweeps,
        elbo_trace: fitted.trace,
        gamma_overall: fitted.gamma.as_ref().map(|h| h.gamma_overall),
        gamma_group: fitted.gamma.as_ref().map_or(Vec::new(), |h| h.gamma_group.clone()),
        runtime_ms,
        fitted: fit_vals.iter().copied().collect(),
    };
    let model = ModelFile {
        format: MODEL_FORMAT.into(),
        method: args.method.name().into(),
        outcome_type: kind,
        d,
        feature_names: data.feature_names.clone(),
        label_column: args.data.label_column.clone(),
        trials_column: args.data.trials_column.clone(),
        standardizer: transform,
        params: fitted.params,
        rule: fitted.rule,
        posterior: fitted.posterior,
    };
    let mut out = Output::default();
    out.file(args.out.join("model.json"), to_json(&model));
    out.file(args.out.join("fit_report.json"), to_json(&report));
    if let (Some(path), Some(bytes)) = (&args.draws_out, fitted.draws) {
        out.file(path.clone(), bytes);
    }
    out.stdout = format!(
        "fitted {} (d = {d}, {} labeled, {} unlabeled), converged: {}\n",
        report.method, report.n_labeled, report.n_unlabeled, report.converged
    );
    Ok(out)
}

pub fn read_model(path: &Path) -> Result<ModelFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    let model: ModelFile = serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))?;
    if model.format != MODEL_FORMAT {
        return Err(input(format!("unsupported model format {:?}", model.format)));
    }
    Ok(model)
}

pub fn run_predict(args: &PredictArgs) -> Result<Output, CliError> {
    let model = read_model(&args.model)?;
    if !args.input.exists() {
        return Err(input(format!("{}: no such file", args.input.display())));
    }
    let opts = IngestOptions {
        outcome: model.outcome_type,
        label_column: model.label_column.clone(),
        trials_column: model.trials_column.clone(),
    };
    let (_, raw) = load_features_csv(&args.input, &opts).map_err(input)?;
    let p = model.rule.coefficients.len();
    if raw.ncols() != p {
        return Err(input(format!("schema mismatch: model has {p} features, data has {}", raw.ncols())));
    }
    let x = model.standardizer.apply(&raw);
    let t = &model.standardizer;
    let no_post = || input(format!("{} models carry no posterior; use --predict-mode plugin", model.method));
    let pred = match (args.predict_mode, &model.posterior) {
        (PredictMode::Plugin, _) => plug_in(&model.rule, &x, model.outcome_type, t),
        (PredictMode::Mc, Some(Posterior::Linear(post))) => t.invert_y(&predict_bayes_mc(post, &x, args.mc_draws, args.seed).mean),
        (PredictMode::Taylor, Some(Posterior::Linear(post))) => {
            t.invert_y(&predict_bayes_taylor(post, &x).ok_or_else(|| estimation("Taylor expansion hit a singular covariance"))?)
        }
        (PredictMode::Mc, Some(Posterior::Logistic(post))) => predict_logistic(post, &x, args.mc_draws, args.seed).prob_mc,
        (PredictMode::Taylor, Some(Posterior::Logistic(post))) => predict_logistic(post, &x, args.mc_draws, args.seed).prob,
        (_, None) => return Err(no_post()),
    };
    let header = match model.outcome_type {
        OutcomeKind::Linear => "prediction",
        OutcomeKind::Binomial => "probability",
    };
    let mut s = String::from(header);
    s.push('\n');
    for v in pred.iter() {
        writeln!(s, "{v}").expect("write to string");
    }
    let mut out = Output::default();
    out.file(args.out.clone(), s.into_bytes());
    Ok(out)
}

fn matrix_csv(names: &[String], label: &str, x: &DMatrix<f64>, y: Option<&DVector<f64>>) -> Vec<u8> {
    let mut s = names.join(",");
    write!(s, ",{label}\n").expect("write to string");
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            write!(s, "{},", x[(i, j)]).expect("write to string");
        }
        if let Some(v) = y.and_then(|y| y.get(i)) {
            write!(s, "{v}").expect("write to string");
        }
        s.push('\n');
    }
    s.into_bytes()
}

fn groups_file(groups: &[usize]) -> Vec<u8> {
    groups.iter().map(|g| format!("{g}\n")).collect::<String>().into_bytes()
}

#[derive(Serialize)]
struct TruthFile<'a> {
    scenario: u8,
    seed: u64,
    /// Parameters on the standardized scale of train.csv.
    standardized: &'a FactorParams,
    raw: &'a FactorParams,
    induced_coefficients: Vec<f64>,
}

pub fn run_simulate(args: &SimulateArgs) -> Result<Output, CliError> {
    let mut spec = ScenarioSpec::by_id(args.scenario, args.seed)?;
    spec.n = args.n;
    spec.m = args.m;
    spec.n_test = args.n_test;
    let sc = gen_scenario(&spec)?;
    let names: Vec<String> = (1..=sc.train.p()).map(|j| format!("x{j}")).collect();
    let mut out = Output::default();
    out.file(args.out.join("train.csv"), matrix_csv(&names, "y", &sc.train.x, Some(sc.train.y())));
    out.file(args.out.join("test.csv"), matrix_csv(&names, "y", &sc.test.x, Some(sc.test.y())));
    out.file(args.out.join("groups.txt"), groups_file(&sc.train.groups));
    let rule = induced_rule(&sc.truth)?;
    let truth = TruthFile {
        scenario: spec.id,
        seed: spec.seed,
        standardized: &sc.truth,
        raw: &sc.raw_truth,
        induced_coefficients: rule.coefficients.iter().copied().collect(),
    };
    out.file(args.out.join("truth.json"), to_json(&truth));
    out.stdout = format!("scenario {} written to {}\n", spec.id, args.out.display());
    Ok(out)
}

pub fn run_benchmark_cmd(args: &BenchmarkArgs) -> Result<Output, CliError> {
    let methods = args
        .methods
        .iter()
        .map(|m| Method::parse(m).ok_or_else(|| input(format!("unknown method {m:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let (m_values, replications) = if args.full_grid {
        (vec![0, 50, 100, 200, 500], 50)
    } else {
        (args.m_values.clone(), args.replications)
    };
    let cfg = BenchmarkConfig {
        scenarios: args.scenarios.clone(),
        methods,
        m_values,
        replications,
        seed: args.seed,
        vb_tol: args.tol,
        vb_max_iter: args.max_iter,
        timing: args.timing,
        ..BenchmarkConfig::default()
    };
    let table = run_benchmark(&cfg)?;
    let (mut rows, mut meds) = (Vec::new(), Vec::new());
    table.write_rows_csv(&mut rows)?;
    table.write_medians_csv(&mut meds)?;
    let mut out = Output::default();
    out.file(args.out.join("benchmark.csv"), rows);
    out.file(args.out.join("medians.csv"), meds);
    let failed = table.rows.iter().filter(|r| r.failure.is_some()).count();
    out.stdout = format!("{} rows, {failed} failed fits\n", table.rows.len());
    Ok(out)
}

#[derive(Serialize)]
struct GibbsCheckReport {
    d: usize,
    pearson: f64,
    sign_disagreements: usize,
    vb_rule: Vec<f64>,
    gibbs_rule: Vec<f64>,
    passed: bool,
}

pub fn run_gibbs_check(args: &GibbsCheckArgs) -> Result<Output, CliError> {
    let (data, _) = load_standardized(&args.data)?;
    let (d, _) = resolve_d(&args.d, &data)?;
    let hyper = HyperParams::new(d, data.n_groups());
    let vb = VbOptions { tol: args.tol, max_iter: args.max_iter, seed: args.seed };
    let cfg = ChainConfig { n_iter: args.n_iter, burn_in: args.burn_in, thin: args.thin, seed: args.seed };
    let (vb_rule, summary) = match data.outcome.kind() {
        OutcomeKind::Linear => (VbLinear::new(&data, d)?.fit(&hyper, &vb)?.rule, gibbs_linear(&data, d, &hyper, &cfg)?),
        OutcomeKind::Binomial => (VbLogistic::new(&data, d)?.fit(&hyper, &vb)?.rule, gibbs_logistic(&data, d, &hyper, &cfg)?),
    };
    let (a, b) = (&vb_rule.coefficients, &summary.rule.coefficients);
    let cor = pearson(a, b).unwrap_or(0.0);
    let flips = (0..a.len())
        .filter(|&j| a[j].abs().max(b[j].abs()) > 0.05 && a[j].signum() != b[j].signum())
        .count();
    let report = GibbsCheckReport {
        d,
        pearson: cor,
        sign_disagreements: flips,
        vb_rule: a.iter().copied().collect(),
        gibbs_rule: b.iter().copied().collect(),
        passed: cor > 0.9 && flips == 0,
    };
    let mut out = Output::default();
    out.file(args.out.clone(), to_json(&report));
    if let Some(path) = &args.draws_out {
        let mut bytes = Vec::new();
        summary.draws.write_csv(&mut bytes)?;
        out.file(path.clone(), bytes);
    }
    out.stdout = format!("Pearson {cor:.4}, sign disagreements {flips}: {}\n", if report.passed { "PASS" } else { "FAIL" });
    if !report.passed {
        out.write()?;
        return Err(CliError::CheckFailed(out.stdout.trim().to_string()));
    }
    Ok(out)
}

pub fn run_standardize(args: &StandardizeArgs) -> Result<Output, CliError> {
    let (data, transform) = load_standardized(&args.data)?;
    let mut out = Output::default();
    let y = data.outcome.values().clone();
    out.file(args.out.clone(), matrix_csv(&data.feature_names, &args.data.label_column, &data.x, Some(&y)));
    if let Some(path) = &args.transform_out {
        out.file(path.clone(), to_json(&transform));
    }
    Ok(out)
}

/// Run fit, predict (mc), simulate and a small benchmark twice each under
/// the same seed and compare every output byte for byte.
pub fn determinism_check() -> CriterionReport {
    let t0 = Instant::now();
    let dir = std::env::temp_dir().join(format!("bayfactor-determinism-{}", std::process::id()));
    let result = (|| -> Result<Vec<String>, CliError> {
        let mut differing = Vec::new();
        let sim = |out: PathBuf| SimulateArgs { scenario: 2, seed: 3, n: 50, m: 20, n_test: 50, out };
        let a = run_simulate(&sim(dir.join("sim")))?;
        a.write()?;
        if a != run_simulate(&sim(dir.join("sim")))? {
            differing.push("simulate".to_string());
        }
        let data = DataArgs {
            input: dir.join("sim/train.csv"),
            groups: Some(dir.join("sim/groups.txt")),
            outcome: OutcomeArg::Linear,
            label_column: "y".into(),
            trials_column: "trials".into(),
            m_unlabeled_from_blanks: true,
        };
        let fit = FitArgs {
            data,
            method: MethodArg::EbVb,
            d: "kaiser".into(),
            eb_mode: None,
            seed: 11,
            tol: 1e-6,
            max_iter: 5000,
            n_iter: 5000,
            burn_in: 1000,
            thin: 2,
            folds: 5,
            draws_out: None,
            timing: false,
            out: dir.join("fit"),
        };
        let f = run_fit(&fit)?;
        f.write()?;
        if f != run_fit(&fit)? {
            differing.push("fit".to_string());
        }
        let pred = PredictArgs {
            model: dir.join("fit/model.json"),
            input: dir.join("sim/test.csv"),
            predict_mode: PredictMode::Mc,
            mc_draws: 200,
            seed: 5,
            out: dir.join("pred.csv"),
        };
        if run_predict(&pred)? != run_predict(&pred)? {
            differing.push("predict".to_string());
        }
        let bench = BenchmarkArgs {
            scenarios: vec![1],
            methods: vec!["null".into(), "vb".into()],
            m_values: vec![0, 10],
            replications: 2,
            full_grid: false,
            seed: 2,
            tol: 1e-6,
            max_iter: 5000,
            timing: false,
            out: dir.join("bench"),
        };
        if run_benchmark_cmd(&bench)? != run_benchmark_cmd(&bench)? {
            differing.push("benchmark".to_string());
        }
        Ok(differing)
    })();
    let _ = std::fs::remove_dir_all(&dir);
    match result {
        Ok(diff) if diff.is_empty() => CriterionReport::new(12, true, "simulate, fit, predict (mc), benchmark: repeated outputs byte-identical".into(), t0),
        Ok(diff) => CriterionReport::new(12, false, format!("outputs differ for: {}", diff.join(", ")), t0),
        Err(e) => CriterionReport::new(12, false, format!("command failed: {e}"), t0),
    }
}

pub fn run_check(args: &CheckArgs) -> Result<Output, CliError> {
    let ids: Vec<u8> = if args.criterion.is_empty() {
        CRITERIA.iter().map(|c| c.0).collect()
    } else {
        args.criterion
            .iter()
            .map(|k| validation::criterion_id(k).ok_or_else(|| input(format!("unknown criterion {k:?}"))))
            .collect::<Result<_, _>>()?
    };
    let mut out = Output::default();
    let mut failed = 0;
    for id in ids {
        let report = match id {
            1 if args.force_failure => validation::elbo_monotone(true),
            12 => determinism_check(),
            _ => validation::run_criterion(id).expect("known criterion"),
        };
        failed += (!report.passed) as usize;
        let line = format!("{report}\n");
        print!("{line}");
        out.stdout.push_str(&line);
    }
    if failed > 0 {
        return Err(CliError::CheckFailed(format!("{failed} criteria failed")));
    }
    Ok(Output { stdout: String::new(), ..out })
}
