//! Acceptance checks at desk scale. Each check is deterministic and returns
//! a report; the CLI `check` command and the acceptance test print them.

use crate::correlation::trunc_moments;
use crate::data::{Dataset, Outcome};
use crate::freq::{cross_cov, em_semisupervised, fa_mle, fa_objective, EmOptions, Penalty, PenaltyTarget};
use crate::gibbs::{
    draw_with_precision, gibbs_linear, latent_conditional_logistic, outcome_conditional_logistic, pg_variance,
    sample_latent, sample_loadings, sample_missing_linear, sample_pg, sample_uniquenesses, ChainConfig,
};
use crate::hyper::{eb_objective, eb_update_constrained, eb_update_free, EbMode, HyperParams};
use crate::linalg::{chol, spd_inverse};
use crate::model::induced_rule;
use crate::rng;
use crate::sim::{pearson, run_benchmark, BenchmarkConfig, Method};
use crate::vb_linear::{predict_bayes_mc, predict_bayes_taylor, PsiDist, VbLinear, VbLinearState, VbOptions};
use crate::vb_logistic::{expit, pg_mean, VbLogistic};
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use std::fmt;
use std::time::Instant;

/// (id, key, title) of every acceptance criterion.
pub const CRITERIA: [(u8, &str, &str); 12] = [
    (1, "elbo-monotone", "ELBO non-decreasing over sweeps (linear and logistic, 100 instances each)"),
    (2, "block-optimality", "converged state is a fixed point of every single block update"),
    (3, "gibbs-vb", "Gibbs and VB induced rules agree"),
    (4, "gibbs-conditionals", "Gibbs conditional samplers match closed-form moments"),
    (5, "em", "EM monotone; with m = 0 it reaches the ML objective"),
    (6, "eb", "empirical-Bayes updates maximize their objectives"),
    (7, "scenario2", "scenario 2: group shrinkage ordering and gain from unlabeled rows"),
    (8, "null-calibration", "null-model PMSE on standardized test outcomes"),
    (9, "trunc-moments", "truncated Gaussian moments match a rejection sampler"),
    (10, "pg-moments", "Polya-Gamma sampler mean"),
    (11, "prediction", "Monte Carlo, plug-in and Taylor predictions agree"),
    (12, "determinism", "repeated CLI invocations are byte-identical"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionReport {
    pub id: u8,
    pub key: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed_ms: u128,
}

impl CriterionReport {
    pub fn new(id: u8, passed: bool, detail: String, started: Instant) -> Self {
        Self {
            id,
            key: CRITERIA[(id - 1) as usize].1,
            passed,
            detail,
            elapsed_ms: started.elapsed().as_millis(),
        }
    }
}

impl fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} {:<18} {}  {} ({:.1} s)",
            self.id,
            self.key,
            if self.passed { "PASS" } else { "FAIL" },
            self.detail,
            self.elapsed_ms as f64 / 1000.0
        )
    }
}

pub fn criterion_id(key: &str) -> Option<u8> {
    CRITERIA.iter().find(|c| c.1 == key || c.0.to_string() == key).map(|c| c.0)
}

/// Run the library-level check `id` (1 to 11). Determinism is checked by the CLI.
pub fn run_criterion(id: u8) -> Option<CriterionReport> {
    Some(match id {
        1 => elbo_monotone(false),
        2 => block_optimality(),
        3 => gibbs_vb_agreement(),
        4 => gibbs_conditionals(),
        5 => em_checks(),
        6 => eb_checks(),
        7 => scenario2_reproduction(),
        8 => null_calibration(),
        9 => trunc_moment_oracle(),
        10 => pg_moments(),
        11 => prediction_consistency(),
        _ => return None,
    })
}

/// Factor-model data with `d_true` factors, two feature groups, standardized.
pub fn linear_instance(n: usize, m: usize, p: usize, d_true: usize, seed: u64) -> Dataset {
    let mut r = rng::stream(seed, "validation-data", 0);
    let b = DMatrix::from_fn(d_true, p + 1, |_, _| gauss(&mut r));
    let mut x = DMatrix::zeros(n + m, p);
    let mut y = DVector::zeros(n);
    for i in 0..n + m {
        let l = DVector::from_fn(d_true, |_, _| gauss(&mut r));
        let s = b.transpose() * &l;
        for j in 0..p {
            let e = gauss(&mut r);
            x[(i, j)] = s[j] + 0.7 * e;
        }
        if i < n {
            let e = gauss(&mut r);
            y[i] = s[p] + 0.7 * e;
        }
    }
    let groups = (0..p).map(|j| if j < p / 2 { 1 } else { 2 }).collect();
    let ds = Dataset::new(x, Outcome::Continuous(y), Some(groups)).expect("valid instance");
    ds.standardize().expect("standardizable instance").0
}

/// Binary-outcome analogue of [`linear_instance`].
pub fn binomial_instance(n: usize, m: usize, p: usize, d_true: usize, seed: u64) -> Dataset {
    let mut r = rng::stream(seed, "validation-data", 1);
    let b = DMatrix::from_fn(d_true, p, |_, _| gauss(&mut r));
    let beta = DVector::from_fn(d_true, |_, _| 1.5 * gauss(&mut r));
    let mut x = DMatrix::zeros(n + m, p);
    let mut y = DVector::zeros(n);
    for i in 0..n + m {
        let l = DVector::from_fn(d_true, |_, _| gauss(&mut r));
        let s = b.transpose() * &l;
        for j in 0..p {
            let e = gauss(&mut r);
            x[(i, j)] = s[j] + 0.7 * e;
        }
        if i < n {
            y[i] = if r.random::<f64>() < expit(beta.dot(&l)) { 1.0 } else { 0.0 };
        }
    }
    let groups = (0..p).map(|j| if j < p / 2 { 1 } else { 2 }).collect();
    let outcome = Outcome::Binomial { y, trials: DVector::from_element(n, 1.0) };
    let ds = Dataset::new(x, outcome, Some(groups)).expect("valid instance");
    ds.standardize().expect("standardizable instance").0
}

fn gauss<R: rand::Rng + ?Sized>(r: &mut R) -> f64 {
    StandardNormal.sample(r)
}

fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

/// Largest absolute change in any variational parameter.
pub fn state_change(a: &VbLinearState, b: &VbLinearState) -> f64 {
    let mut c = max_abs(&a.phi, &b.phi).max(max_abs(&a.xi, &b.xi)).max(max_abs(&a.mu, &b.mu));
    for (x, y) in a.omega.iter().zip(&b.omega) {
        c = c.max(max_abs(x, y));
    }
    c = c.max((&a.zeta - &b.zeta).amax()).max((a.chi - b.chi).abs());
    if !a.upsilon.is_empty() {
        c = c.max((&a.upsilon - &b.upsilon).amax());
    }
    c
}

/// Worst relative ELBO decrease over sweeps. With `corrupt`, the loading
/// means are perturbed after the third sweep (a failure fixture).
pub fn elbo_monotone(corrupt: bool) -> CriterionReport {
    let t0 = Instant::now();
    let (mut worst_lin, mut worst_log) = (0.0f64, 0.0f64);
    let mut errors = 0;
    for k in 0..100u64 {
        let m = if k % 2 == 0 { 0 } else { 5 };
        let data = linear_instance(20, m, 10, 2, 1000 + k);
        let prob = match VbLinear::new(&data, 2) {
            Ok(p) => p,
            Err(_) => {
                errors += 1;
                continue;
            }
        };
        let mut hyper = HyperParams::new(2, 2).with_eb(EbMode::Constrained);
        let mut st = prob.init(&hyper, k);
        let mut prev = prob.elbo(&st, &hyper);
        for s in 0..300 {
            if prob.sweep(&mut st, &mut hyper).is_err() {
                errors += 1;
                break;
            }
            if corrupt && s == 2 {
                st.mu.scale_mut(3.0);
            }
            let cur = prob.elbo(&st, &hyper);
            worst_lin = worst_lin.max((prev - cur) / prev.abs());
            if !cur.is_finite() {
                errors += 1;
                break;
            }
            if (cur - prev).abs() <= 1e-13 * prev.abs() {
                break;
            }
            prev = cur;
        }
    }
    for k in 0..100u64 {
        let m = if k % 2 == 0 { 0 } else { 5 };
        let data = binomial_instance(20, m, 10, 2, 1100 + k);
        let prob = match VbLogistic::new(&data, 2) {
            Ok(p) => p,
            Err(_) => {
                errors += 1;
                continue;
            }
        };
        let mut hyper = HyperParams::new(2, 2).with_eb(EbMode::Constrained);
        let mut st = prob.init(&hyper, k);
        let mut prev = prob.elbo(&st, &hyper);
        for _ in 0..300 {
            if prob.sweep(&mut st, &mut hyper).is_err() {
                errors += 1;
                break;
            }
            let cur = prob.elbo(&st, &hyper);
            worst_log = worst_log.max((prev - cur) / prev.abs());
            if !cur.is_finite() {
                errors += 1;
                break;
            }
            if (cur - prev).abs() <= 1e-13 * prev.abs() {
                break;
            }
            prev = cur;
        }
    }
    let passed = errors == 0 && worst_lin <= 1e-8 && worst_log <= 1e-8;
    let detail = format!("worst relative drop linear {worst_lin:.2e}, logistic {worst_log:.2e} (tol 1e-8), errors {errors}");
    CriterionReport::new(1, passed, detail, t0)
}

pub fn block_optimality() -> CriterionReport {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    let mut unconverged = 0;
    for k in 0..20u64 {
        let data = linear_instance(20, 5, 10, 2, 2000 + k);
        let prob = VbLinear::new(&data, 2).expect("valid dimension");
        let mut hyper = HyperParams::new(2, 2);
        let mut st = prob.init(&hyper, k);
        let mut done = false;
        for _ in 0..200_000 {
            let prev = st.clone();
            prob.sweep(&mut st, &mut hyper).expect("sweep");
            if state_change(&prev, &st) < 1e-13 {
                done = true;
                break;
            }
        }
        unconverged += (!done) as usize;
        let blocks: [&dyn Fn(&mut VbLinearState); 4] = [
            &|s| prob.update_latent(s, &hyper).expect("latent"),
            &|s| prob.update_loadings(s, &hyper).expect("loadings"),
            &|s| prob.update_uniquenesses(s, &hyper).expect("uniquenesses"),
            &|s| prob.update_missing(s, &hyper),
        ];
        for block in blocks {
            let mut s2 = st.clone();
            block(&mut s2);
            worst = worst.max(state_change(&st, &s2));
        }
    }
    let passed = worst <= 1e-8;
    CriterionReport::new(
        2,
        passed,
        format!("largest single-block change {worst:.2e} (tol 1e-8), {unconverged} of 20 hit the sweep cap"),
        t0,
    )
}

pub fn gibbs_vb_agreement() -> CriterionReport {
    let t0 = Instant::now();
    let mut min_cor = f64::INFINITY;
    let mut sign_flips = 0;
    let mut errors = Vec::new();
    for k in 0..10u64 {
        let data = linear_instance(200, 0, 5, 1, 3000 + k);
        let hyper = HyperParams::new(1, data.n_groups());
        let vb = VbLinear::new(&data, 1).and_then(|p| p.fit(&hyper, &VbOptions { tol: 1e-10, max_iter: 20_000, seed: k }));
        let cfg = ChainConfig { n_iter: 5000, burn_in: 1000, thin: 1, seed: k };
        let gb = gibbs_linear(&data, 1, &hyper, &cfg);
        match (vb, gb) {
            (Ok(v), Ok(g)) => {
                let (a, b) = (&v.rule.coefficients, &g.rule.coefficients);
                min_cor = min_cor.min(pearson(a, b).unwrap_or(0.0));
                for j in 0..a.len() {
                    if a[j].abs().max(b[j].abs()) > 0.05 && a[j].signum() != b[j].signum() {
                        sign_flips += 1;
                    }
                }
            }
            (v, g) => errors.push(format!("instance {k}: vb {:?} gibbs {:?}", v.err(), g.err())),
        }
    }
    let passed = errors.is_empty() && min_cor > 0.9 && sign_flips == 0;
    CriterionReport::new(
        3,
        passed,
        format!("min Pearson {min_cor:.4} (> 0.9), sign disagreements {sign_flips}, errors {}", errors.len()),
        t0,
    )
}

/// Sample moments of a scalar series: mean, variance and their standard errors.
fn moments(v: &[f64]) -> (f64, f64, f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = v.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    (mean, var, (var / n).sqrt(), ((m4 - var * var).max(0.0) / n).sqrt())
}

struct MomentCheck {
    worst_z: f64,
    checks: usize,
    failed: Vec<String>,
}

impl MomentCheck {
    fn new() -> Self {
        Self { worst_z: 0.0, checks: 0, failed: Vec::new() }
    }

    fn compare(&mut self, label: &str, draws: &[f64], mean: f64, var: f64) {
        let (m, v, se_m, se_v) = moments(draws);
        for (what, est, target, se) in [("mean", m, mean, se_m), ("var", v, var, se_v)] {
            let z = (est - target).abs() / se;
            self.checks += 1;
            self.worst_z = self.worst_z.max(z);
            if !(z <= 3.0) {
                self.failed.push(format!("{label} {what}: {est:.5} vs {target:.5} ({z:.2} SE)"));
            }
        }
    }

    fn compare_vec(&mut self, label: &str, draws: &[DVector<f64>], mean: &DVector<f64>, cov: &DMatrix<f64>) {
        for k in 0..mean.len() {
            let s: Vec<f64> = draws.iter().map(|d| d[k]).collect();
            self.compare(&format!("{label}[{k}]"), &s, mean[k], cov[(k, k)]);
        }
    }
}

pub fn gibbs_conditionals() -> CriterionReport {
    let t0 = Instant::now();
    const N: usize = 10_000;
    let mut r = rng::stream(4, "validation-conditionals", 0);
    let mut chk = MomentCheck::new();

    // Λ row given B̄, Ψ̄: precision I + B̄Ψ̄⁻¹B̄ᵀ, mean cov·B̄Ψ̄⁻¹x̄.
    let b_bar = DMatrix::from_row_slice(2, 4, &[0.8, -0.3, 0.5, 0.9, 0.1, 0.7, -0.6, 0.2]);
    let psi_bar = DVector::from_vec(vec![0.5, 0.8, 0.3, 1.2]);
    let xbar = DMatrix::from_row_slice(1, 4, &[1.0, -0.4, 0.6, 1.5]);
    let psi_inv = DMatrix::from_diagonal(&psi_bar.map(|v| 1.0 / v));
    let cov = spd_inverse(&(DMatrix::identity(2, 2) + &b_bar * &psi_inv * b_bar.transpose())).expect("spd");
    let mean = &cov * &b_bar * &psi_inv * xbar.row(0).transpose();
    let draws: Vec<DVector<f64>> = (0..N)
        .map(|_| sample_latent(&xbar, &b_bar, &psi_bar, &mut r).expect("latent").row(0).transpose())
        .collect();
    chk.compare_vec("latent", &draws, &mean, &cov);

    // b̄_j given Λ, ψ̄_j: N(G⁻¹Λᵀx̄_j, ψ̄_j G⁻¹), G = ΛᵀΛ + γ⁻¹I.
    let lambda = DMatrix::from_row_slice(6, 2, &[0.3, -1.1, 1.2, 0.4, -0.7, 0.2, 0.5, 0.9, -0.2, -0.6, 1.4, 0.1]);
    let col = DMatrix::from_column_slice(6, 1, &[0.9, 0.4, -0.8, 1.1, -0.5, 0.7]);
    let (psi_j, gamma_j) = (0.6, 0.5);
    let ginv = spd_inverse(&(lambda.transpose() * &lambda + DMatrix::identity(2, 2) / gamma_j)).expect("spd");
    let mean = &ginv * lambda.transpose() * col.column(0);
    let psi_vec = DVector::from_element(1, psi_j);
    let draws: Vec<DVector<f64>> = (0..N)
        .map(|_| sample_loadings(&col, &lambda, &psi_vec, &[gamma_j], &mut r).expect("loadings").column(0).into_owned())
        .collect();
    chk.compare_vec("loadings", &draws, &mean, &(ginv * psi_j));

    // ψ̄_j given Λ, b̄_j: inverse gamma with shape (n + d)/2 + κ.
    let b_col = DMatrix::from_column_slice(2, 1, &[0.4, -0.3]);
    let (kappa, nu) = (9.0, 4.0);
    let shape = (6.0 + 2.0) / 2.0 + kappa;
    let resid = (col.column(0) - &lambda * b_col.column(0)).norm_squared();
    let scale = 0.5 * resid + 0.5 * b_col.norm_squared() / gamma_j + nu;
    let draws: Vec<f64> = (0..N).map(|_| sample_uniquenesses(&col, &lambda, &b_col, &[gamma_j], kappa, nu, &mut r)[0]).collect();
    chk.compare(
        "uniqueness",
        &draws,
        scale / (shape - 1.0),
        scale * scale / ((shape - 1.0).powi(2) * (shape - 2.0)),
    );

    // Missing outcome given λ: N(βᵀλ, σ²).
    let lu = DMatrix::from_row_slice(1, 2, &[0.7, -1.3]);
    let beta = DVector::from_vec(vec![0.9, 0.4]);
    let draws: Vec<f64> = (0..N).map(|_| sample_missing_linear(&lu, &beta, 0.35, &mut r)[0]).collect();
    chk.compare("missing", &draws, (&lu * &beta)[0], 0.35);

    // η given the linear score: PG(1, c).
    let c = 1.3;
    let draws: Vec<f64> = (0..N).map(|_| sample_pg(1.0, c, &mut r)).collect();
    chk.compare("pg-eta", &draws, pg_mean(1.0, c), pg_variance(1.0, c));

    // Logistic λ_i: precision I + BΨ⁻¹Bᵀ + ηββᵀ, linear term BΨ⁻¹x + β(κ - ηβ₀).
    let b = b_bar.columns(0, 3).into_owned();
    let psi = psi_bar.rows(0, 3).into_owned();
    let x_i = DVector::from_vec(vec![0.5, -1.0, 0.8]);
    let (kappa_i, eta_i, beta0) = (0.5, 0.22, -0.3);
    let pinv = DMatrix::from_diagonal(&psi.map(|v| 1.0 / v));
    let prec = DMatrix::identity(2, 2) + &b * &pinv * b.transpose() + &beta * beta.transpose() * eta_i;
    let cov = spd_inverse(&prec).expect("spd");
    let mean = &cov * (&b * &pinv * &x_i + &beta * (kappa_i - eta_i * beta0));
    let (m_s, p_s) = latent_conditional_logistic(&x_i, kappa_i, eta_i, &b, &psi, beta0, &beta).expect("conditional");
    let l = chol(&p_s).expect("spd").l();
    let draws: Vec<DVector<f64>> = (0..N).map(|_| draw_with_precision(&m_s, &l, 1.0, &mut r)).collect();
    chk.compare_vec("logistic-latent", &draws, &mean, &cov);

    // Logistic (β₀, β): precision WᵀHW + diag(0, γ⁻¹I), linear term Wᵀκ.
    let lam = DMatrix::from_row_slice(5, 1, &[0.4, -0.9, 1.3, 0.1, -0.5]);
    let eta = DVector::from_vec(vec![0.21, 0.18, 0.12, 0.24, 0.2]);
    let kap = DVector::from_vec(vec![0.5, -0.5, 0.5, 0.5, -0.5]);
    let gamma = 0.8;
    let w = DMatrix::from_fn(5, 2, |i, k| if k == 0 { 1.0 } else { lam[(i, 0)] });
    let mut prec = w.transpose() * DMatrix::from_diagonal(&eta) * &w;
    prec[(1, 1)] += 1.0 / gamma;
    let cov = spd_inverse(&prec).expect("spd");
    let mean = &cov * w.transpose() * &kap;
    let (m_s, p_s) = outcome_conditional_logistic(&lam, &eta, &kap, gamma).expect("conditional");
    let l = chol(&p_s).expect("spd").l();
    let draws: Vec<DVector<f64>> = (0..N).map(|_| draw_with_precision(&m_s, &l, 1.0, &mut r)).collect();
    chk.compare_vec("logistic-outcome", &draws, &mean, &cov);

    let passed = chk.failed.is_empty();
    let mut detail = format!("{} moment checks over {N} draws, worst {:.2} SE (limit 3)", chk.checks, chk.worst_z);
    if !passed {
        detail.push_str(&format!("; failed: {}", chk.failed.join("; ")));
    }
    CriterionReport::new(4, passed, detail, t0)
}

pub fn em_checks() -> CriterionReport {
    let t0 = Instant::now();
    let mut worst_drop = 0.0f64;
    let mut worst_gap = 0.0f64;
    let mut errors = 0;
    for k in 0..10u64 {
        let data = linear_instance(30, 40, 5, 1, 5000 + k);
        let penalty = (k % 2 == 1).then_some(Penalty { gamma: 0.3, target: PenaltyTarget::Identity });
        match em_semisupervised(&data, 1, penalty, &EmOptions::default()) {
            Ok(fit) => {
                for w in fit.objective_trace.windows(2) {
                    worst_drop = worst_drop.max((w[0] - w[1]) / w[0].abs());
                }
                for &(a, b) in &fit.q_trace {
                    worst_drop = worst_drop.max((a - b) / a.abs());
                }
            }
            Err(_) => errors += 1,
        }
    }
    for k in 0..10u64 {
        let data = linear_instance(60, 0, 5, 1, 5100 + k);
        // near-Heywood instances converge slowly, so allow long runs
        let mut opts = EmOptions { max_iter: 20_000, ..EmOptions::default() };
        opts.fa.max_iter = 500_000;
        let s = cross_cov(&data.joint_labeled());
        match (em_semisupervised(&data, 1, None, &opts), fa_mle(&s, 1, &opts.fa)) {
            (Ok(em), Ok(mle)) => {
                let obj = fa_objective(&s, &em.params.joint_loadings(), &em.params.joint_psi());
                worst_gap = worst_gap.max((obj - mle.objective).abs());
            }
            _ => errors += 1,
        }
    }
    let passed = errors == 0 && worst_drop <= 1e-10 && worst_gap <= 1e-8;
    CriterionReport::new(
        5,
        passed,
        format!("worst relative decrease {worst_drop:.2e} (tol 1e-10), m = 0 objective gap {worst_gap:.2e} (tol 1e-8), errors {errors}"),
        t0,
    )
}

pub fn eb_checks() -> CriterionReport {
    let t0 = Instant::now();
    let mut r = rng::stream(6, "validation-eb", 0);
    let mut worst_rel = 0.0f64;
    let mut worst_constraint = 0.0f64;
    let mut beaten = 0;
    for _ in 0..50 {
        let n_groups = r.random_range(2..=4usize);
        let sizes: Vec<usize> = (0..n_groups).map(|_| r.random_range(2..=10usize)).collect();
        let mut groups = Vec::new();
        let mut start = 0;
        for &s in &sizes {
            groups.push((start..start + s).collect::<Vec<usize>>());
            start += s;
        }
        let d = r.random_range(1..=5usize);
        let stats: Vec<f64> = (0..start).map(|_| r.random_range(0.01..50.0)).collect();

        // free update against a grid in log γ with spacing 1e-5
        let free = eb_update_free(&stats, &groups, d);
        for (g, members) in groups.iter().enumerate() {
            let a: f64 = members.iter().map(|&j| stats[j]).sum();
            let w = (members.len() * d) as f64;
            let f = |lg: f64| -0.5 * w * lg - a / (2.0 * lg.exp());
            let (lo, hi, steps) = (-12.0f64, 8.0f64, 2_000_000usize);
            let mut best = (f(lo), lo);
            for s in 1..=steps {
                let lg = lo + (hi - lo) * s as f64 / steps as f64;
                let v = f(lg);
                if v > best.0 {
                    best = (v, lg);
                }
            }
            let grid = best.1.exp();
            worst_rel = worst_rel.max((free[g] - grid).abs() / grid);
        }

        let con = eb_update_constrained(&stats, &groups);
        let c: f64 = groups.iter().zip(&con).map(|(g, v)| g.len() as f64 * v.ln()).sum();
        worst_constraint = worst_constraint.max(c.abs());
        let best = eb_objective(&stats, &groups, d, &con);
        let total: f64 = sizes.iter().sum::<usize>() as f64;
        let normal = Normal::new(0.0, 2.0).expect("valid normal");
        for _ in 0..1000 {
            let u: Vec<f64> = (0..n_groups).map(|_| normal.sample(&mut r)).collect();
            let shift = u.iter().zip(&sizes).map(|(v, s)| v * *s as f64).sum::<f64>() / total;
            let cand: Vec<f64> = u.iter().map(|v| (v - shift).exp()).collect();
            if eb_objective(&stats, &groups, d, &cand) > best {
                beaten += 1;
            }
        }
    }
    let passed = worst_rel <= 1e-4 && worst_constraint <= 1e-10 && beaten == 0;
    CriterionReport::new(
        6,
        passed,
        format!(
            "free vs grid rel {worst_rel:.2e} (tol 1e-4), constraint residual {worst_constraint:.2e} (tol 1e-10), random feasible points better: {beaten} of 50000"
        ),
        t0,
    )
}

pub fn scenario2_reproduction() -> CriterionReport {
    let t0 = Instant::now();
    let cfg = BenchmarkConfig {
        scenarios: vec![2],
        methods: vec![Method::Vb, Method::EbVb],
        m_values: vec![0, 100],
        replications: 20,
        seed: 7,
        ..BenchmarkConfig::default()
    };
    let table = match run_benchmark(&cfg) {
        Ok(t) => t,
        Err(e) => return CriterionReport::new(7, false, format!("benchmark failed: {e}"), t0),
    };
    let mut parts = Vec::new();
    let mut passed = true;
    for m in [0usize, 100] {
        let rows: Vec<_> = table.rows.iter().filter(|r| r.method == Method::EbVb && r.m == m).collect();
        let ordered = rows.iter().filter(|r| matches!((r.gamma1, r.gamma2), (Some(a), Some(b)) if b > a)).count();
        let frac = ordered as f64 / cfg.replications as f64;
        let med = table.median_of(2, Method::EbVb, m);
        let (l1, l2) = med.map_or((f64::NAN, f64::NAN), |r| (r.log_gamma1.unwrap_or(f64::NAN), r.log_gamma2.unwrap_or(f64::NAN)));
        passed &= l2 > l1 && frac >= 0.9;
        parts.push(format!("m={m}: median log g1 {l1:.3}, log g2 {l2:.3}, g2>g1 in {:.0}%", 100.0 * frac));
    }
    let p0 = table.median_of(2, Method::Vb, 0).map_or(f64::NAN, |r| r.pmse);
    let p100 = table.median_of(2, Method::Vb, 100).map_or(f64::NAN, |r| r.pmse);
    let failures = table.rows.iter().filter(|r| r.failure.is_some()).count();
    passed &= p100 <= p0 && failures == 0;
    parts.push(format!("VB median PMSE m=0 {p0:.4}, m=100 {p100:.4}; failed fits {failures}"));
    CriterionReport::new(7, passed, parts.join("; "), t0)
}

pub fn null_calibration() -> CriterionReport {
    let t0 = Instant::now();
    let cfg = BenchmarkConfig {
        scenarios: vec![2],
        methods: vec![Method::Null],
        m_values: vec![0],
        replications: 20,
        seed: 8,
        ..BenchmarkConfig::default()
    };
    match run_benchmark(&cfg) {
        Ok(t) => {
            let pmse = t.median_of(2, Method::Null, 0).map_or(f64::NAN, |r| r.pmse);
            CriterionReport::new(8, (0.9..=1.1).contains(&pmse), format!("median null PMSE {pmse:.4} (range [0.9, 1.1])"), t0)
        }
        Err(e) => CriterionReport::new(8, false, format!("benchmark failed: {e}"), t0),
    }
}

pub fn trunc_moment_oracle() -> CriterionReport {
    let t0 = Instant::now();
    const DRAWS: usize = 1_000_000;
    let mut r = rng::stream(9, "validation-trunc", 0);
    let mut worst_z = 0.0f64;
    let mut failed = Vec::new();
    let mut checks = 0;
    for case in 0..25 {
        let d = 1 + case % 2;
        let mu = DVector::from_fn(d, |_, _| 0.3 * gauss(&mut r));
        let a = DMatrix::from_fn(d, d, |_, _| 0.3 * gauss(&mut r));
        let omega = &a * a.transpose() + DMatrix::identity(d, d) * 0.05;
        let tm = match trunc_moments(&mu, &omega, 50) {
            Ok(t) => t,
            Err(e) => {
                failed.push(format!("case {case}: {e}"));
                continue;
            }
        };
        let l = chol(&omega).expect("spd").l();
        let mut kept: Vec<DVector<f64>> = Vec::new();
        for _ in 0..DRAWS {
            let e = DVector::from_fn(d, |_, _| gauss(&mut r));
            let b = &mu + &l * e;
            if b.norm_squared() < 1.0 {
                kept.push(b);
            }
        }
        let k = kept.len() as f64;
        let mean = kept.iter().fold(DVector::zeros(d), |acc, b| acc + b) / k;
        for i in 0..d {
            let s: Vec<f64> = kept.iter().map(|b| b[i]).collect();
            let (_, var, se, _) = moments(&s);
            let _ = var;
            let z = (mean[i] - tm.mean[i]).abs() / se;
            checks += 1;
            worst_z = worst_z.max(z);
            if !(z <= 3.0) {
                failed.push(format!("case {case} mean[{i}] {z:.2} SE"));
            }
            for j in 0..=i {
                let prods: Vec<f64> = kept.iter().map(|b| (b[i] - mean[i]) * (b[j] - mean[j])).collect();
                let (c, _, se, _) = moments(&prods);
                let z = (c - tm.cov[(i, j)]).abs() / se;
                checks += 1;
                worst_z = worst_z.max(z);
                if !(z <= 3.0) {
                    failed.push(format!("case {case} cov[{i},{j}] {z:.2} SE"));
                }
            }
        }
    }
    let sym = trunc_moments(&DVector::zeros(1), &DMatrix::from_element(1, 1, 0.5), 50)
        .map(|t| t.mean[0].abs())
        .unwrap_or(f64::INFINITY);
    let passed = failed.is_empty() && sym <= 1e-10;
    let mut detail = format!("{checks} moment checks over {DRAWS} proposals, worst {worst_z:.2} SE (limit 3); symmetric mean {sym:.1e}");
    if !failed.is_empty() {
        detail.push_str(&format!("; failed: {}", failed.join("; ")));
    }
    CriterionReport::new(9, passed, detail, t0)
}

pub fn pg_moments() -> CriterionReport {
    let t0 = Instant::now();
    let mut r = rng::stream(10, "validation-pg", 0);
    let mut worst_z = 0.0f64;
    let mut failed = Vec::new();
    for n in [1.0, 2.0] {
        for c in [0.0, 0.5, 2.0, 10.0] {
            let draws: Vec<f64> = (0..100_000).map(|_| sample_pg(n, c, &mut r)).collect();
            let (m, _, se, _) = moments(&draws);
            let target = if c == 0.0 { n / 4.0 } else { n * (c / 2.0f64).tanh() / (2.0 * c) };
            let z = (m - target).abs() / se;
            worst_z = worst_z.max(z);
            if !(z <= 3.0) {
                failed.push(format!("PG({n},{c}) {m:.5} vs {target:.5}"));
            }
        }
    }
    let passed = failed.is_empty();
    let mut detail = format!("8 settings x 1e5 draws, worst {worst_z:.2} SE (limit 3)");
    if !passed {
        detail.push_str(&format!("; failed: {}", failed.join("; ")));
    }
    CriterionReport::new(10, passed, detail, t0)
}

pub fn prediction_consistency() -> CriterionReport {
    let t0 = Instant::now();
    let mut exact = true;
    let mut worst = 0.0f64;
    let mut errors = 0;
    for k in 0..5u64 {
        let data = linear_instance(40, 10, 6, 2, 11_000 + k);
        let prob = VbLinear::new(&data, 2).expect("valid dimension");
        let hyper = HyperParams::new(2, 2);
        let fit = match prob.fit(&hyper, &VbOptions { seed: k, ..VbOptions::default() }) {
            Ok(f) => f,
            Err(_) => {
                errors += 1;
                continue;
            }
        };
        let post = prob.posterior(&fit.state, &fit.hyper);
        let x = data.x.clone();

        let mut point = post.clone();
        let d = point.mu.ncols();
        point.omega = vec![DMatrix::zeros(d, d); point.omega.len()];
        point.psi = point.psi.iter().map(|p| PsiDist::Point(p.mean())).collect();
        let plug = induced_rule(&point.mean_params()).expect("rule");
        let mc = predict_bayes_mc(&point, &x, 25, k);
        exact &= mc.mean == plug.predict(&x) && mc.coefficients == plug.coefficients;

        let small = post.with_variance_scale(1e-6);
        let mc = predict_bayes_mc(&small, &x, 1000, k);
        match predict_bayes_taylor(&small, &x) {
            Some(t) => worst = worst.max((t - mc.mean).amax()),
            None => errors += 1,
        }
    }
    let passed = exact && worst <= 1e-4 && errors == 0;
    CriterionReport::new(
        11,
        passed,
        format!("degenerate MC equals plug-in exactly: {exact}; Taylor vs MC at eps 1e-6 max diff {worst:.2e} (tol 1e-4); errors {errors}"),
        t0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_resolve() {
        assert_eq!(criterion_id("elbo-monotone"), Some(1));
        assert_eq!(criterion_id("12"), Some(12));
        assert_eq!(criterion_id("nope"), None);
        assert!(run_criterion(12).is_none());
    }

    #[test]
    fn corrupted_state_fails_the_monotonicity_check() {
        assert!(!elbo_monotone(true).passed);
    }

    #[test]
    fn instances_are_standardized() {
        let d = linear_instance(20, 5, 10, 2, 1);
        assert!(d.standardized && d.m() == 5);
        let b = binomial_instance(20, 5, 10, 2, 1);
        assert!(b.y().iter().all(|v| *v == 0.0 || *v == 1.0));
    }
}
