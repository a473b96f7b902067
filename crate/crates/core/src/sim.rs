//! Simulation scenarios, evaluation metrics and the benchmark harness.

use crate::data::{Dataset, Outcome, Standardizer};
use crate::freq::{
    cv_penalty, em_semisupervised, ridge_fit, two_step_fit, default_ridge_grid, CvBlock, EmOptions, FaOptions,
    Penalty, PenaltyTarget, DEFAULT_PENALTY_GRID,
};
use crate::hyper::{EbMode, HyperParams};
use crate::model::{induced_coefficients, induced_rule, kaiser_dimension, FactorParams, PredictionRule};
use crate::rng;
use crate::vb_linear::{VbLinear, VbOptions};
use crate::vb_logistic::expit;
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSpec {
    StandardNormal,
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: u8,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub d_true: usize,
    pub sigma2: f64,
    pub psi: f64,
    /// Loading variances of the first and second half of the features.
    pub group_var: (f64, f64),
    pub beta: BetaSpec,
    pub n_test: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Banded loadings: every feature loads on two adjacent factors.
    pub fn scenario1(seed: u64) -> Self {
        Self {
            id: 1,
            n: 50,
            m: 0,
            p: 100,
            d_true: 10,
            sigma2: 1.0,
            psi: 1.0,
            group_var: (0.1, 1.0),
            beta: BetaSpec::StandardNormal,
            n_test: 1000,
            seed,
        }
    }

    /// Dense loadings with strongly different group variances.
    pub fn scenario2(seed: u64) -> Self {
        Self {
            id: 2,
            n: 50,
            m: 0,
            p: 100,
            d_true: 40,
            sigma2: 1.0,
            psi: 1.0,
            group_var: (0.1, 10.0),
            beta: BetaSpec::Constant(0.483),
            n_test: 1000,
            seed,
        }
    }

    pub fn by_id(id: u8, seed: u64) -> Result<Self, SimError> {
        match id {
            1 => Ok(Self::scenario1(seed)),
            2 => Ok(Self::scenario2(seed)),
            _ => Err(SimError::InvalidSpec(format!("unknown scenario {id}"))),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.p == 0 || self.p % 2 != 0 {
            return Err(SimError::InvalidSpec("p must be even and positive".into()));
        }
        if self.n < 2 || self.d_true == 0 || self.n_test < 2 {
            return Err(SimError::InvalidSpec("n, n_test must be >= 2 and d_true >= 1".into()));
        }
        if !(self.sigma2 > 0.0 && self.psi > 0.0 && self.group_var.0 > 0.0 && self.group_var.1 > 0.0) {
            return Err(SimError::InvalidSpec("variances must be positive".into()));
        }
        if self.id == 1 && self.p % self.d_true != 0 {
            return Err(SimError::InvalidSpec("scenario 1 needs p divisible by d_true".into()));
        }
        if self.id != 1 && self.id != 2 {
            return Err(SimError::InvalidSpec(format!("unknown scenario {}", self.id)));
        }
        Ok(())
    }

    /// Loadings on the raw scale (d × p).
    fn loadings<R: rand::Rng>(&self, r: &mut R) -> DMatrix<f64> {
        let (d, p) = (self.d_true, self.p);
        let sd = |j: usize| if j < p / 2 { self.group_var.0.sqrt() } else { self.group_var.1.sqrt() };
        let mut b = DMatrix::zeros(d, p);
        match self.id {
            1 => {
                // factor h covers feature blocks h and h-1, block 0 pairing with the last
                let w = p / d;
                for h in 0..d {
                    for blk in [h, (h + d - 1) % d] {
                        for j in blk * w..(blk + 1) * w {
                            let e: f64 = StandardNormal.sample(r);
                            b[(h, j)] = sd(j) * e;
                        }
                    }
                }
            }
            _ => {
                for j in 0..p {
                    for h in 0..d {
                        let e: f64 = StandardNormal.sample(r);
                        b[(h, j)] = sd(j) * e;
                    }
                }
            }
        }
        b
    }
}

/// A standardized training set, the matching truth and a test set.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub train: Dataset,
    /// Generating parameters expressed on the standardized scale.
    pub truth: FactorParams,
    /// Parameters on the raw scale.
    pub raw_truth: FactorParams,
    pub test: Dataset,
    pub transform: Standardizer,
}

pub fn gen_scenario(spec: &ScenarioSpec) -> Result<Scenario, SimError> {
    spec.validate()?;
    let mut r = rng::stream(spec.seed, "sim", spec.id as u64);
    let (d, p) = (spec.d_true, spec.p);
    let b = spec.loadings(&mut r);
    let beta = match spec.beta {
        BetaSpec::StandardNormal => DVector::from_fn(d, |_, _| StandardNormal.sample(&mut r)),
        BetaSpec::Constant(v) => DVector::from_element(d, v),
    };
    let rows = spec.n + spec.m + spec.n_test;
    let mut x = DMatrix::zeros(rows, p);
    let mut y = DVector::zeros(rows);
    let (sp, ss) = (spec.psi.sqrt(), spec.sigma2.sqrt());
    for i in 0..rows {
        let lam = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut r));
        let mean = b.transpose() * &lam;
        for j in 0..p {
            let e: f64 = StandardNormal.sample(&mut r);
            x[(i, j)] = mean[j] + sp * e;
        }
        let e: f64 = StandardNormal.sample(&mut r);
        y[i] = beta.dot(&lam) + ss * e;
    }
    let groups: Vec<usize> = (0..p).map(|j| if j < p / 2 { 1 } else { 2 }).collect();
    let n_tr = spec.n + spec.m;
    let raw = Dataset::new(
        x.rows(0, n_tr).into_owned(),
        Outcome::Continuous(y.rows(0, spec.n).into_owned()),
        Some(groups.clone()),
    )?;
    let (train, transform) = raw.standardize()?;
    let x_test = transform.apply(&x.rows(n_tr, spec.n_test).into_owned());
    let y_test = transform.apply_y(&y.rows(n_tr, spec.n_test).into_owned());
    let mut test = Dataset::new(x_test, Outcome::Continuous(y_test), Some(groups))?;
    test.standardized = true;

    let raw_truth = FactorParams {
        d,
        b: b.clone(),
        beta: beta.clone(),
        beta0: 0.0,
        psi: DVector::from_element(p, spec.psi),
        sigma2: spec.sigma2,
    };
    let mut bs = b;
    for j in 0..p {
        bs.column_mut(j).scale_mut(1.0 / transform.scales[j]);
    }
    let truth = FactorParams {
        d,
        b: bs,
        beta: beta / transform.y_scale,
        beta0: 0.0,
        psi: DVector::from_fn(p, |j, _| spec.psi / transform.scales[j].powi(2)),
        sigma2: spec.sigma2 / transform.y_scale.powi(2),
    };
    Ok(Scenario {
        train,
        truth,
        raw_truth,
        test,
        transform,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Linear,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub emse: Option<f64>,
    pub pmse: f64,
    pub cor: f64,
    /// Cor or AUC undefined because predictions are constant; reported as 0 (Cor) or 0.5 (AUC).
    pub constant_predictions: bool,
    pub bss: Option<f64>,
    pub auc: Option<f64>,
    pub runtime_ms: u128,
}

pub fn pearson(a: &DVector<f64>, b: &DVector<f64>) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.sum() / n, b.sum() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        None
    } else {
        Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
    }
}

/// Mann-Whitney estimate of P(score₁ > score₀), ties counted one half.
pub fn auc(scores: &DVector<f64>, labels: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = avg;
        }
        i = j + 1;
    }
    let n1 = labels.iter().filter(|l| **l).count() as f64;
    let n0 = labels.len() as f64 - n1;
    if n1 == 0.0 || n0 == 0.0 {
        return None;
    }
    let rsum: f64 = labels.iter().zip(&ranks).filter(|(l, _)| **l).map(|(_, r)| *r).sum();
    Some((rsum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0))
}

/// 1 - Brier/Brier_null with the null predicting the test prevalence.
pub fn brier_skill(prob: &DVector<f64>, y: &DVector<f64>, trials: &DVector<f64>) -> f64 {
    let frac = y.component_div(trials);
    let prev = y.sum() / trials.sum();
    let brier = (prob - &frac).norm_squared() / prob.len() as f64;
    let null = frac.iter().map(|f| (f - prev).powi(2)).sum::<f64>() / prob.len() as f64;
    if null > 0.0 {
        1.0 - brier / null
    } else {
        0.0
    }
}

pub fn emse(rule: &PredictionRule, truth: &FactorParams) -> Result<f64, SimError> {
    let target = induced_coefficients(truth).map_err(|e| SimError::Dimension(e.to_string()))?;
    if target.len() != rule.coefficients.len() {
        return Err(SimError::Dimension(format!("rule has {} coefficients, truth {}", rule.coefficients.len(), target.len())));
    }
    let k = target.len() as f64;
    Ok((&rule.coefficients - target).norm_squared() / k)
}

pub fn compute_metrics(
    rule: &PredictionRule,
    truth: Option<&FactorParams>,
    test: &Dataset,
    task: Task,
) -> Result<MetricsReport, SimError> {
    if rule.coefficients.len() != test.p() {
        return Err(SimError::Dimension(format!("rule has {} coefficients, data {} features", rule.coefficients.len(), test.p())));
    }
    let x = test.labeled_x();
    let yhat = rule.predict(&x);
    let emse = truth.map(|t| emse(rule, t)).transpose()?;
    match (task, &test.outcome) {
        (Task::Linear, Outcome::Continuous(y)) => {
            let pmse = (y - &yhat).norm_squared() / y.len() as f64;
            let cor = pearson(y, &yhat);
            Ok(MetricsReport {
                emse,
                pmse,
                cor: cor.unwrap_or(0.0),
                constant_predictions: cor.is_none(),
                bss: None,
                auc: None,
                runtime_ms: 0,
            })
        }
        (Task::Logistic, Outcome::Binomial { y, trials }) => {
            let prob = yhat.map(expit);
            let frac = y.component_div(trials);
            let pmse = (&prob - &frac).norm_squared() / y.len() as f64;
            let labels: Vec<bool> = frac.iter().map(|f| *f >= 0.5).collect();
            let a = auc(&prob, &labels);
            let constant = prob.iter().all(|v| *v == prob[0]);
            let cor = pearson(&frac, &prob);
            Ok(MetricsReport {
                emse,
                pmse,
                cor: cor.unwrap_or(0.0),
                constant_predictions: constant || cor.is_none(),
                bss: Some(brier_skill(&prob, y, trials)),
                auc: Some(if constant { 0.5 } else { a.unwrap_or(0.5) }),
                runtime_ms: 0,
            })
        }
        _ => Err(SimError::Dimension("task does not match the outcome type".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Null,
    Ridge,
    TwoStep,
    EmPml,
    Vb,
    EbVb,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Null, Method::Ridge, Method::TwoStep, Method::EmPml, Method::Vb, Method::EbVb];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Null => "null",
            Method::Ridge => "ridge",
            Method::TwoStep => "two-step",
            Method::EmPml => "em-pml",
            Method::Vb => "vb",
            Method::EbVb => "eb-vb",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.iter().copied().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub scenarios: Vec<u8>,
    pub methods: Vec<Method>,
    pub m_values: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    pub folds: usize,
    pub vb_tol: f64,
    pub vb_max_iter: usize,
    /// Record wall-clock times (otherwise 0, keeping output byte-stable).
    pub timing: bool,
    pub threads: Option<usize>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            scenarios: vec![1, 2],
            methods: Method::ALL.to_vec(),
            m_values: vec![0, 50, 100],
            replications: 20,
            seed: 0,
            folds: 5,
            vb_tol: 1e-6,
            vb_max_iter: 5000,
            timing: false,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub scenario: u8,
    pub method: Method,
    pub m: usize,
    pub replication: usize,
    pub emse: f64,
    pub pmse: f64,
    pub cor: f64,
    /// Group multipliers γ'₁, γ'₂ (eb-vb only).
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    pub runtime_ms: u128,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MedianRow {
    pub scenario: u8,
    pub method: Method,
    pub m: usize,
    pub n_ok: usize,
    pub emse: f64,
    pub pmse: f64,
    pub cor: f64,
    pub log_gamma1: Option<f64>,
    pub log_gamma2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkTable {
    pub rows: Vec<BenchRow>,
    pub medians: Vec<MedianRow>,
}

pub struct MethodOutput {
    pub rule: PredictionRule,
    pub gammas: Option<(f64, f64)>,
}

/// Fit one method on a standardized training set.
pub fn fit_method(method: Method, data: &Dataset, folds: usize, vb: &VbOptions) -> Result<MethodOutput, String> {
    let p = data.p();
    let plain = |rule| Ok(MethodOutput { rule, gammas: None });
    match method {
        Method::Null => plain(PredictionRule::zeros(p)),
        Method::Ridge => ridge_fit(data, folds, &default_ridge_grid()).map(|f| MethodOutput { rule: f.rule, gammas: None }).map_err(|e| e.to_string()),
        Method::TwoStep => {
            let d = kaiser_dimension(&data.labeled_x());
            let opts = FaOptions::default();
            let cv = cv_penalty(data, d, folds, &DEFAULT_PENALTY_GRID, PenaltyTarget::Identity, CvBlock::Features, &opts).map_err(|e| e.to_string())?;
            let pen = Penalty { gamma: cv.gamma, target: PenaltyTarget::Identity };
            two_step_fit(data, d, &pen, &opts).map(|f| MethodOutput { rule: f.rule, gammas: None }).map_err(|e| e.to_string())
        }
        Method::EmPml => {
            let d = kaiser_dimension(&data.labeled_x());
            let opts = EmOptions::default();
            let cv = cv_penalty(data, d, folds, &DEFAULT_PENALTY_GRID, PenaltyTarget::Identity, CvBlock::Joint, &opts.fa).map_err(|e| e.to_string())?;
            let pen = Penalty { gamma: cv.gamma, target: PenaltyTarget::Identity };
            let fit = em_semisupervised(data, d, Some(pen), &opts).map_err(|e| e.to_string())?;
            induced_rule(&fit.params).map(|rule| MethodOutput { rule, gammas: None }).map_err(|e| e.to_string())
        }
        Method::Vb | Method::EbVb => {
            let d = kaiser_dimension(&data.labeled_x());
            let (labels, hyper) = if method == Method::Vb {
                (vec![1; p], HyperParams::new(d, 1))
            } else {
                (data.groups.clone(), HyperParams::new(d, data.n_groups()).with_eb(EbMode::Constrained))
            };
            let prob = VbLinear::from_parts(data.x.clone(), data.y().clone(), &labels, d).map_err(|e| e.to_string())?;
            let fit = prob.fit(&hyper, vb).map_err(|e| e.to_string())?;
            let gammas = (method == Method::EbVb).then(|| (fit.hyper.gamma_group[0], *fit.hyper.gamma_group.get(1).unwrap_or(&f64::NAN)));
            Ok(MethodOutput { rule: fit.rule, gammas })
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn replication_seed(seed: u64, scenario: u8, rep: usize) -> u64 {
    rng::stream(seed, "replication", (scenario as u64) << 32 | rep as u64).random()
}

fn run_replication(cfg: &BenchmarkConfig, scenario: u8, rep: usize) -> Result<Vec<BenchRow>, SimError> {
    let mut spec = ScenarioSpec::by_id(scenario, replication_seed(cfg.seed, scenario, rep))?;
    spec.m = cfg.m_values.iter().copied().max().unwrap_or(0);
    let sc = gen_scenario(&spec)?;
    let vb = VbOptions {
        tol: cfg.vb_tol,
        max_iter: cfg.vb_max_iter,
        seed: spec.seed,
    };
    let mut rows = Vec::new();
    for &m in &cfg.m_values {
        let data = sc.train.with_unlabeled(m);
        for &method in &cfg.methods {
            let start = Instant::now();
            let out = fit_method(method, &data, cfg.folds, &vb);
            let ms = if cfg.timing { start.elapsed().as_millis() } else { 0 };
            let row = match out.and_then(|o| compute_metrics(&o.rule, Some(&sc.truth), &sc.test, Task::Linear).map(|r| (o, r)).map_err(|e| e.to_string())) {
                Ok((o, r)) => BenchRow {
                    scenario,
                    method,
                    m,
                    replication: rep,
                    emse: r.emse.unwrap_or(f64::NAN),
                    pmse: r.pmse,
                    cor: r.cor,
                    gamma1: o.gammas.map(|g| g.0),
                    gamma2: o.gammas.map(|g| g.1),
                    runtime_ms: ms,
                    failure: None,
                },
                Err(msg) => BenchRow {
                    scenario,
                    method,
                    m,
                    replication: rep,
                    emse: f64::NAN,
                    pmse: f64::NAN,
                    cor: f64::NAN,
                    gamma1: None,
                    gamma2: None,
                    runtime_ms: ms,
                    failure: Some(msg),
                },
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Thread count from `BAYFACTOR_THREADS`, if set to a positive integer.
pub fn env_threads() -> Option<usize> {
    std::env::var("BAYFACTOR_THREADS").ok()?.parse().ok().filter(|t: &usize| *t > 0)
}

pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkTable, SimError> {
    if cfg.replications == 0 || cfg.methods.is_empty() || cfg.m_values.is_empty() {
        return Err(SimError::InvalidSpec("need at least one replication, method and m".into()));
    }
    let jobs: Vec<(u8, usize)> = cfg.scenarios.iter().flat_map(|&s| (0..cfg.replications).map(move |r| (s, r))).collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads.or_else(env_threads) {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| SimError::Pool(e.to_string()))?;
    let results: Vec<Result<Vec<BenchRow>, SimError>> = pool.install(|| jobs.par_iter().map(|&(s, r)| run_replication(cfg, s, r)).collect());
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    rows.sort_by_key(|r| (r.scenario, r.m, r.method, r.replication));
    let medians = summarize(&rows);
    Ok(BenchmarkTable { rows, medians })
}

pub fn summarize(rows: &[BenchRow]) -> Vec<MedianRow> {
    let mut keys: Vec<(u8, usize, Method)> = rows.iter().map(|r| (r.scenario, r.m, r.method)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(s, m, method)| {
            let ok: Vec<&BenchRow> = rows.iter().filter(|r| r.scenario == s && r.m == m && r.method == method && r.failure.is_none()).collect();
            let col = |f: &dyn Fn(&BenchRow) -> f64| median(ok.iter().map(|r| f(r)).collect());
            let lg = |f: &dyn Fn(&BenchRow) -> Option<f64>| {
                let v: Vec<f64> = ok.iter().filter_map(|r| f(r)).map(f64::ln).collect();
                (!v.is_empty()).then(|| median(v))
            };
            MedianRow {
                scenario: s,
                method,
                m,
                n_ok: ok.len(),
                emse: col(&|r| r.emse),
                pmse: col(&|r| r.pmse),
                cor: col(&|r| r.cor),
                log_gamma1: lg(&|r| r.gamma1),
                log_gamma2: lg(&|r| r.gamma2),
            }
        })
        .collect()
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), fmt)
}

impl BenchmarkTable {
    pub fn write_rows_csv<W: Write>(&self, w: W) -> Result<(), SimError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["scenario", "method", "m", "replication", "emse", "pmse", "cor", "gamma1", "gamma2", "runtime_ms", "status"])
            .map_err(std::io::Error::from)?;
        for r in &self.rows {
            wr.write_record([
                r.scenario.to_string(),
                r.method.name().to_string(),
                r.m.to_string(),
                r.replication.to_string(),
                fmt(r.emse),
                fmt(r.pmse),
                fmt(r.cor),
                fmt_opt(r.gamma1),
                fmt_opt(r.gamma2),
                r.runtime_ms.to_string(),
                r.failure.as_ref().map_or("ok".to_string(), |f| format!("failed: {f}")),
            ])
            .map_err(std::io::Error::from)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_medians_csv<W: Write>(&self, w: W) -> Result<(), SimError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["scenario", "method", "m", "n_ok", "emse", "pmse", "cor", "log_gamma1", "log_gamma2"])
            .map_err(std::io::Error::from)?;
        for r in &self.medians {
            wr.write_record([
                r.scenario.to_string(),
                r.method.name().to_string(),
                r.m.to_string(),
                r.n_ok.to_string(),
                fmt(r.emse),
                fmt(r.pmse),
                fmt(r.cor),
                fmt_opt(r.log_gamma1),
                fmt_opt(r.log_gamma2),
            ])
            .map_err(std::io::Error::from)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn median_of(&self, scenario: u8, method: Method, m: usize) -> Option<&MedianRow> {
        self.medians.iter().find(|r| r.scenario == scenario && r.method == method && r.m == m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scenario1_layout() {
        let sc = gen_scenario(&ScenarioSpec::scenario1(1)).unwrap();
        let b = &sc.raw_truth.b;
        for h in 0..10 {
            assert_eq!(b.row(h).iter().filter(|v| **v != 0.0).count(), 20);
        }
        for j in 0..100 {
            assert_eq!(b.column(j).iter().filter(|v| **v != 0.0).count(), 2);
        }
        // first factor pairs with the last block
        assert!(b[(0, 0)] != 0.0 && b[(0, 95)] != 0.0 && b[(0, 15)] == 0.0);
        assert!(b[(1, 5)] != 0.0 && b[(1, 15)] != 0.0);
    }

    #[test]
    fn scenario2_beta_constant() {
        let sc = gen_scenario(&ScenarioSpec::scenario2(1)).unwrap();
        assert!(sc.raw_truth.beta.iter().all(|b| *b == 0.483));
        assert_eq!(sc.raw_truth.d, 40);
        assert_eq!(sc.train.m(), 0);
    }

    #[test]
    fn training_data_are_standardized() {
        let mut spec = ScenarioSpec::scenario1(2);
        spec.m = 10;
        let sc = gen_scenario(&spec).unwrap();
        let x = sc.train.labeled_x();
        for j in 0..x.ncols() {
            let c = x.column(j);
            assert!(c.sum().abs() / 50.0 < 1e-10);
            assert!((c.norm_squared() / 50.0 - 1.0).abs() < 1e-10);
        }
        assert_eq!(sc.train.m(), 10);
    }

    #[test]
    fn truth_rule_has_zero_emse() {
        let sc = gen_scenario(&ScenarioSpec::scenario1(3)).unwrap();
        let rule = induced_rule(&sc.truth).unwrap();
        let r = compute_metrics(&rule, Some(&sc.truth), &sc.test, Task::Linear).unwrap();
        assert_eq!(r.emse, Some(0.0));
        let mut off = rule.clone();
        off.coefficients[0] += 1e-3;
        assert!(emse(&off, &sc.truth).unwrap() > 0.0);
    }

    #[test]
    fn null_rule_is_calibrated() {
        let sc = gen_scenario(&ScenarioSpec::scenario2(4)).unwrap();
        let r = compute_metrics(&PredictionRule::zeros(100), None, &sc.test, Task::Linear).unwrap();
        assert!(r.constant_predictions && r.cor == 0.0);
        assert!(r.pmse > 0.5 && r.pmse < 2.0);
    }

    #[test]
    fn truth_rule_beats_null_on_average() {
        let mut wins = 0;
        for s in 0..5 {
            let sc = gen_scenario(&ScenarioSpec::scenario2(10 + s)).unwrap();
            let good = compute_metrics(&induced_rule(&sc.truth).unwrap(), None, &sc.test, Task::Linear).unwrap();
            let null = compute_metrics(&PredictionRule::zeros(100), None, &sc.test, Task::Linear).unwrap();
            wins += (good.pmse < null.pmse) as usize;
        }
        assert!(wins >= 4);
    }

    #[test]
    fn separating_probabilities_have_unit_auc() {
        let s = DVector::from_vec(vec![0.1, 0.2, 0.8, 0.9]);
        assert_eq!(auc(&s, &[false, false, true, true]), Some(1.0));
        assert_eq!(auc(&s, &[true, true, false, false]), Some(0.0));
    }

    /// Trapezoidal area under the empirical ROC curve.
    fn roc_area(scores: &[f64], labels: &[bool]) -> f64 {
        let mut thr: Vec<f64> = scores.to_vec();
        thr.sort_by(|a, b| b.total_cmp(a));
        thr.dedup();
        let n1 = labels.iter().filter(|l| **l).count() as f64;
        let n0 = labels.len() as f64 - n1;
        let mut pts = vec![(0.0, 0.0)];
        for t in thr {
            let tp = scores.iter().zip(labels).filter(|(s, l)| **l && **s >= t).count() as f64;
            let fp = scores.iter().zip(labels).filter(|(s, l)| !**l && **s >= t).count() as f64;
            pts.push((fp / n0, tp / n1));
        }
        pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
    }

    proptest! {
        #[test]
        fn auc_equals_roc_integral(raw in proptest::collection::vec((0u8..6, any::<bool>()), 4..40)) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 5.0).collect();
            let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|l| *l) && labels.iter().any(|l| !*l));
            let a = auc(&DVector::from_vec(scores.clone()), &labels).unwrap();
            prop_assert!((a - roc_area(&scores, &labels)).abs() < 1e-10);
        }
    }

    #[test]
    fn brier_skill_of_prevalence_is_zero() {
        let y = DVector::from_vec(vec![1.0, 0.0, 1.0, 0.0]);
        let t = DVector::from_element(4, 1.0);
        assert!(brier_skill(&DVector::from_element(4, 0.5), &y, &t).abs() < 1e-15);
        assert_eq!(brier_skill(&y, &y, &t), 1.0);
    }

    #[test]
    fn single_replication_single_method() {
        let cfg = BenchmarkConfig {
            scenarios: vec![1],
            methods: vec![Method::Null],
            m_values: vec![0],
            replications: 1,
            ..BenchmarkConfig::default()
        };
        let t = run_benchmark(&cfg).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.medians.len(), 1);
    }

    #[test]
    fn benchmark_is_deterministic() {
        let cfg = BenchmarkConfig {
            scenarios: vec![2],
            methods: vec![Method::Null, Method::Ridge, Method::EbVb],
            m_values: vec![0, 20],
            replications: 2,
            seed: 5,
            ..BenchmarkConfig::default()
        };
        let a = run_benchmark(&cfg).unwrap();
        let b = run_benchmark(&cfg).unwrap();
        let (mut wa, mut wb) = (Vec::new(), Vec::new());
        a.write_rows_csv(&mut wa).unwrap();
        b.write_rows_csv(&mut wb).unwrap();
        assert_eq!(wa, wb);
        assert!(a.rows.iter().filter(|r| r.method == Method::EbVb).all(|r| r.gamma1.is_some()));
    }
}
