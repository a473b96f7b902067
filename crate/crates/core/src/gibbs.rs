//! Gibbs samplers for the linear and binomial factor regression models.
//!
//! These are reference oracles for the variational approximations, not
//! production estimators: mixing is slow and no diagnostics are attempted.

use crate::data::{Dataset, Outcome};
use crate::hyper::HyperParams;
use crate::linalg::{chol, Welford};
use crate::model::{induced_coefficients, FactorParams, PredictionRule};
use crate::rng;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Binomial, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GibbsError {
    #[error("invalid chain configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid latent dimension {d}: must lie in 1..={max}")]
    InvalidDimension { d: usize, max: usize },
    #[error("conditional precision is not positive definite")]
    NonPdConditional,
    #[error("this sampler needs a {0} outcome")]
    WrongOutcome(&'static str),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_iter: 5000,
            burn_in: 1000,
            thin: 2,
            seed: 0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<(), GibbsError> {
        if self.burn_in >= self.n_iter {
            return Err(GibbsError::InvalidConfig(format!("burn_in {} >= n_iter {}", self.burn_in, self.n_iter)));
        }
        if self.thin == 0 {
            return Err(GibbsError::InvalidConfig("thin must be at least 1".into()));
        }
        Ok(())
    }
}

const PG_TERMS: usize = 200;

/// Draw from PG(n, c) by the truncated sum-of-gammas representation
///   (1/2π²) Σ_k g_k / ((k - 1/2)² + c²/4π²),  g_k ~ Gamma(n, 1),
/// with the mean of the omitted terms added back.
pub fn sample_pg<R: rand::Rng + ?Sized>(n: f64, c: f64, r: &mut R) -> f64 {
    if n <= 0.0 {
        return 0.0;
    }
    let g = Gamma::new(n, 1.0).expect("positive shape");
    let a2 = c * c / (4.0 * PI * PI);
    let mut s = 0.0;
    for k in 1..=PG_TERMS {
        let h = k as f64 - 0.5;
        s += g.sample(r) / (h * h + a2);
    }
    let a = a2.sqrt();
    let k = PG_TERMS as f64;
    let tail = if a < 1e-12 { 1.0 / k } else { (PI / 2.0 - (k / a).atan()) / a };
    (s + n * tail) / (2.0 * PI * PI)
}

/// Variance of PG(n, c).
pub fn pg_variance(n: f64, c: f64) -> f64 {
    let a = c.abs();
    if a < 1e-2 {
        let c2 = a * a;
        n * (1.0 / 24.0 - c2 / 120.0 + 17.0 * c2 * c2 / 13440.0)
    } else {
        n * (a.sinh() - a) / (4.0 * a.powi(3) * (a / 2.0).cosh().powi(2))
    }
}

fn draw_normal<R: rand::Rng + ?Sized>(k: usize, r: &mut R) -> DVector<f64> {
    DVector::from_fn(k, |_, _| StandardNormal.sample(&mut *r))
}

/// mean + scale · P^{-1/2} e for precision P = LLᵀ.
pub(crate) fn draw_with_precision<R: rand::Rng + ?Sized>(
    mean: &DVector<f64>,
    l: &DMatrix<f64>,
    scale: f64,
    r: &mut R,
) -> DVector<f64> {
    let e = draw_normal(mean.len(), r);
    let v = l.transpose().solve_upper_triangular(&e).expect("nonsingular factor");
    mean + v * scale
}

/// Λ | X̄, B̄, ψ̄: rows N((B̄Ψ̄⁻¹B̄ᵀ + I)⁻¹B̄Ψ̄⁻¹x̄_i, (B̄Ψ̄⁻¹B̄ᵀ + I)⁻¹).
/// `b_bar` is d × p̄.
pub fn latent_conditional(b_bar: &DMatrix<f64>, psi_bar: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>), GibbsError> {
    let d = b_bar.nrows();
    let mut bpsi = b_bar.clone();
    for j in 0..bpsi.ncols() {
        bpsi.column_mut(j).scale_mut(1.0 / psi_bar[j]);
    }
    let prec = DMatrix::identity(d, d) + &bpsi * b_bar.transpose();
    let c = chol(&prec).ok_or(GibbsError::NonPdConditional)?;
    let cov = c.inverse();
    // map x̄ ↦ mean is cov · B̄Ψ̄⁻¹ x̄
    Ok((&cov * bpsi, cov))
}

pub fn sample_latent<R: rand::Rng + ?Sized>(
    xbar: &DMatrix<f64>,
    b_bar: &DMatrix<f64>,
    psi_bar: &DVector<f64>,
    r: &mut R,
) -> Result<DMatrix<f64>, GibbsError> {
    let d = b_bar.nrows();
    let mut bpsi = b_bar.clone();
    for j in 0..bpsi.ncols() {
        bpsi.column_mut(j).scale_mut(1.0 / psi_bar[j]);
    }
    let c = chol(&(DMatrix::identity(d, d) + &bpsi * b_bar.transpose())).ok_or(GibbsError::NonPdConditional)?;
    let means = xbar * c.solve(&bpsi).transpose();
    let l = c.l();
    let mut out = DMatrix::zeros(xbar.nrows(), d);
    for i in 0..xbar.nrows() {
        let m = means.row(i).transpose();
        out.row_mut(i).copy_from(&draw_with_precision(&m, &l, 1.0, r).transpose());
    }
    Ok(out)
}

/// b̄_j | X̄, Λ, ψ̄_j: N(G_j⁻¹Λᵀx̄_j, ψ̄_j G_j⁻¹), G_j = ΛᵀΛ + γ_j⁻¹I.
pub fn loading_conditional(
    col: &DVector<f64>,
    lambda: &DMatrix<f64>,
    psi: f64,
    gamma: f64,
) -> Result<(DVector<f64>, DMatrix<f64>), GibbsError> {
    let d = lambda.ncols();
    let g = lambda.transpose() * lambda + DMatrix::identity(d, d) / gamma;
    let c = chol(&g).ok_or(GibbsError::NonPdConditional)?;
    Ok((c.solve(&(lambda.transpose() * col)), c.inverse() * psi))
}

pub fn sample_loadings<R: rand::Rng + ?Sized>(
    xbar: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
    psi_bar: &DVector<f64>,
    gammas: &[f64],
    r: &mut R,
) -> Result<DMatrix<f64>, GibbsError> {
    let d = lambda.ncols();
    let gram = lambda.transpose() * lambda;
    let lx = lambda.transpose() * xbar;
    let mut out = DMatrix::zeros(d, xbar.ncols());
    let mut cache: Vec<(f64, nalgebra::Cholesky<f64, nalgebra::Dyn>)> = Vec::new();
    for j in 0..xbar.ncols() {
        let gm = gammas[j];
        let pos = match cache.iter().position(|(k, _)| *k == gm) {
            Some(p) => p,
            None => {
                let c = chol(&(&gram + DMatrix::identity(d, d) / gm)).ok_or(GibbsError::NonPdConditional)?;
                cache.push((gm, c));
                cache.len() - 1
            }
        };
        let c = &cache[pos].1;
        let mean = c.solve(&lx.column(j).into_owned());
        let draw = draw_with_precision(&mean, &c.l(), psi_bar[j].sqrt(), r);
        out.column_mut(j).copy_from(&draw);
    }
    Ok(out)
}

/// ψ̄_j | X̄, Λ, b̄_j: InvGamma((n_tot + d)/2 + κ, ½‖x̄_j - Λb̄_j‖² + ½γ_j⁻¹b̄_jᵀb̄_j + ν).
pub fn uniqueness_conditional(
    col: &DVector<f64>,
    lambda: &DMatrix<f64>,
    b: &DVector<f64>,
    gamma: f64,
    kappa: f64,
    nu: f64,
) -> (f64, f64) {
    let d = b.len() as f64;
    let shape = (lambda.nrows() as f64 + d) / 2.0 + kappa;
    let resid = if lambda.nrows() == 0 { 0.0 } else { (col - lambda * b).norm_squared() };
    (shape, 0.5 * resid + 0.5 * b.norm_squared() / gamma + nu)
}

fn sample_inv_gamma<R: rand::Rng + ?Sized>(shape: f64, scale: f64, r: &mut R) -> f64 {
    1.0 / Gamma::new(shape, 1.0 / scale).expect("valid gamma").sample(r)
}

pub fn sample_uniquenesses<R: rand::Rng + ?Sized>(
    xbar: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
    b_bar: &DMatrix<f64>,
    gammas: &[f64],
    kappa: f64,
    nu: f64,
    r: &mut R,
) -> DVector<f64> {
    DVector::from_fn(xbar.ncols(), |j, _| {
        let (a, z) = uniqueness_conditional(&xbar.column(j).into_owned(), lambda, &b_bar.column(j).into_owned(), gammas[j], kappa, nu);
        sample_inv_gamma(a, z, r)
    })
}

/// z_i | · ~ N(b̄_p̄ᵀλ_i, ψ̄_p̄) for the unlabeled rows `lambda_u`.
pub fn sample_missing_linear<R: rand::Rng + ?Sized>(
    lambda_u: &DMatrix<f64>,
    beta: &DVector<f64>,
    sigma2: f64,
    r: &mut R,
) -> DVector<f64> {
    let sd = sigma2.sqrt();
    let mean = lambda_u * beta;
    mean.map(|m| {
        let e: f64 = StandardNormal.sample(&mut *r);
        m + sd * e
    })
}

/// λ_i | x_i, y_i, η_i, B, β̄, ψ for the binomial model. Returns the mean
/// and the precision B Ψ⁻¹ Bᵀ + η_i ββᵀ + I.
pub fn latent_conditional_logistic(
    x_i: &DVector<f64>,
    kappa_i: f64,
    eta_i: f64,
    b: &DMatrix<f64>,
    psi: &DVector<f64>,
    beta0: f64,
    beta: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>), GibbsError> {
    let d = b.nrows();
    let mut bpsi = b.clone();
    for j in 0..bpsi.ncols() {
        bpsi.column_mut(j).scale_mut(1.0 / psi[j]);
    }
    let prec = DMatrix::identity(d, d) + &bpsi * b.transpose() + beta * beta.transpose() * eta_i;
    let c = chol(&prec).ok_or(GibbsError::NonPdConditional)?;
    let rhs = &bpsi * x_i + beta * (kappa_i - eta_i * beta0);
    Ok((c.solve(&rhs), prec))
}

/// β̄ = (β₀, β) | η, Λ, y: Gaussian with precision
/// [[Ση, ηᵀΛ], [Λᵀη, ΛᵀHΛ + γ⁻¹I]] and linear term [Σκ; Λᵀκ].
pub fn outcome_conditional_logistic(
    lambda: &DMatrix<f64>,
    eta: &DVector<f64>,
    kappa: &DVector<f64>,
    gamma: f64,
) -> Result<(DVector<f64>, DMatrix<f64>), GibbsError> {
    let d = lambda.ncols();
    let mut w = DMatrix::zeros(lambda.nrows(), d + 1);
    w.column_mut(0).fill(1.0);
    w.columns_mut(1, d).copy_from(lambda);
    let mut we = w.clone();
    for i in 0..we.nrows() {
        we.row_mut(i).scale_mut(eta[i]);
    }
    let mut prec = w.transpose() * we;
    for h in 1..=d {
        prec[(h, h)] += 1.0 / gamma;
    }
    let c = chol(&prec).ok_or(GibbsError::NonPdConditional)?;
    Ok((c.solve(&(w.transpose() * kappa)), prec))
}

/// Retained draws in columnar form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl DrawTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), GibbsError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(&self.columns).map_err(std::io::Error::from)?;
        for row in &self.rows {
            wr.write_record(row.iter().map(|v| format!("{v:?}"))).map_err(std::io::Error::from)?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GibbsSummary {
    /// d × p̄ posterior means, outcome column last.
    pub loadings_mean: DMatrix<f64>,
    pub loadings_var: DMatrix<f64>,
    pub psi_mean: DVector<f64>,
    pub psi_var: DVector<f64>,
    /// Missing outcomes (linear) or unlabeled success counts (binomial).
    pub z_mean: DVector<f64>,
    pub z_var: DVector<f64>,
    pub beta0_mean: f64,
    /// Posterior mean of the induced rule.
    pub rule: PredictionRule,
    pub draws: DrawTable,
}

struct Accumulators {
    loadings: Welford,
    psi: Welford,
    z: Welford,
    beta0: Welford,
    rule: Welford,
    rows: Vec<Vec<f64>>,
}

impl Accumulators {
    fn new(d: usize, pbar: usize, m: usize) -> Self {
        Self {
            loadings: Welford::new(d * pbar),
            psi: Welford::new(pbar),
            z: Welford::new(m),
            beta0: Welford::new(1),
            rule: Welford::new(pbar - 1),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, b_bar: &DMatrix<f64>, psi_bar: &DVector<f64>, z: &DVector<f64>, beta0: f64, rule: &DVector<f64>) {
        self.loadings.push(&DVector::from_column_slice(b_bar.as_slice()));
        self.psi.push(psi_bar);
        self.z.push(z);
        self.beta0.push(&DVector::from_element(1, beta0));
        self.rule.push(rule);
        let mut row: Vec<f64> = psi_bar.iter().copied().collect();
        row.push(beta0);
        row.extend(rule.iter());
        self.rows.push(row);
    }

    fn finish(self, d: usize, pbar: usize) -> GibbsSummary {
        let p = pbar - 1;
        let mut columns: Vec<String> = (1..=p).map(|j| format!("psi_{j}")).collect();
        columns.push("psi_outcome".into());
        columns.push("beta0".into());
        columns.extend((1..=p).map(|j| format!("rule_{j}")));
        let beta0 = self.beta0.mean[0];
        GibbsSummary {
            loadings_mean: DMatrix::from_column_slice(d, pbar, self.loadings.mean.as_slice()),
            loadings_var: DMatrix::from_column_slice(d, pbar, self.loadings.variance().as_slice()),
            psi_var: self.psi.variance(),
            psi_mean: self.psi.mean,
            z_var: self.z.variance(),
            z_mean: self.z.mean,
            beta0_mean: beta0,
            rule: PredictionRule {
                coefficients: self.rule.mean,
                intercept: beta0,
            },
            draws: DrawTable {
                columns,
                rows: self.rows,
            },
        }
    }
}

fn keep(it: usize, cfg: &ChainConfig) -> bool {
    it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0
}

fn column_gammas(group_of: &[usize], hyper: &HyperParams) -> Vec<f64> {
    let mut g: Vec<f64> = group_of.iter().map(|&k| hyper.gamma_for(Some(k))).collect();
    g.push(hyper.gamma_for(None));
    g
}

fn check_dim(d: usize, n_tot: usize, p: usize) -> Result<(), GibbsError> {
    let max = if n_tot == 0 { p } else { n_tot.saturating_sub(1).min(p) };
    if d == 0 || d > max {
        return Err(GibbsError::InvalidDimension { d, max });
    }
    Ok(())
}

/// Start from the leading principal directions of x̄ (missing outcomes at 0).
fn pca_start(xbar: &DMatrix<f64>, d: usize, gammas: &[f64], hyper: &HyperParams) -> (DMatrix<f64>, DVector<f64>) {
    let pbar = xbar.ncols();
    let psi0 = hyper.prior_psi_mean();
    if xbar.nrows() == 0 {
        return (DMatrix::zeros(d, pbar), DVector::from_element(pbar, psi0));
    }
    let n = xbar.nrows() as f64;
    let svd = xbar.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let lambda = DMatrix::from_fn(xbar.nrows(), d, |i, h| if h < idx.len() { u[(i, idx[h])] * n.sqrt() } else { 0.0 });
    let mut b = DMatrix::zeros(d, pbar);
    let mut psi = DVector::zeros(pbar);
    for j in 0..pbar {
        let (mean, _) = loading_conditional(&xbar.column(j).into_owned(), &lambda, 1.0, gammas[j]).expect("pd gram");
        let resid = (xbar.column(j) - &lambda * &mean).norm_squared() / n;
        b.column_mut(j).copy_from(&mean);
        psi[j] = resid.max(0.05);
    }
    (b, psi)
}

/// Linear Gibbs chain on raw matrices. `x` holds all n_tot rows (labeled
/// first) and `y` the n labeled outcomes; n_tot = 0 samples the prior.
pub fn gibbs_linear_parts(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    group_of: &[usize],
    d: usize,
    hyper: &HyperParams,
    cfg: &ChainConfig,
) -> Result<GibbsSummary, GibbsError> {
    cfg.validate()?;
    let (n_tot, p, n) = (x.nrows(), x.ncols(), y.len());
    check_dim(d, n_tot, p)?;
    let m = n_tot - n;
    let pbar = p + 1;
    let gammas = column_gammas(group_of, hyper);
    let mut r = rng::stream(cfg.seed, "gibbs", 0);
    let mut xbar = DMatrix::zeros(n_tot, pbar);
    xbar.columns_mut(0, p).copy_from(x);
    xbar.view_mut((0, p), (n, 1)).copy_from(y);
    let (mut b_bar, mut psi_bar) = pca_start(&xbar, d, &gammas, hyper);
    let mut acc = Accumulators::new(d, pbar, m);
    let mut z = DVector::zeros(m);
    for it in 0..cfg.n_iter {
        let lambda = sample_latent(&xbar, &b_bar, &psi_bar, &mut r)?;
        b_bar = sample_loadings(&xbar, &lambda, &psi_bar, &gammas, &mut r)?;
        psi_bar = sample_uniquenesses(&xbar, &lambda, &b_bar, &gammas, hyper.kappa, hyper.nu, &mut r);
        if m > 0 {
            let lu = lambda.rows(n, m).into_owned();
            z = sample_missing_linear(&lu, &b_bar.column(p).into_owned(), psi_bar[p], &mut r);
            xbar.view_mut((n, p), (m, 1)).copy_from(&z);
        }
        if keep(it, cfg) {
            let params = FactorParams::from_joint(&b_bar, &psi_bar);
            let rule = induced_coefficients(&params).map_err(|_| GibbsError::NonPdConditional)?;
            acc.push(&b_bar, &psi_bar, &z, 0.0, &rule);
        }
    }
    Ok(acc.finish(d, pbar))
}

pub fn gibbs_linear(data: &Dataset, d: usize, hyper: &HyperParams, cfg: &ChainConfig) -> Result<GibbsSummary, GibbsError> {
    let y = match &data.outcome {
        Outcome::Continuous(y) => y,
        Outcome::Binomial { .. } => return Err(GibbsError::WrongOutcome("continuous")),
    };
    let group_of: Vec<usize> = data.groups.iter().map(|g| g - 1).collect();
    gibbs_linear_parts(&data.x, y, &group_of, d, hyper, cfg)
}

/// Binomial Gibbs chain. Unlabeled rows carry one trial and a latent count.
pub fn gibbs_logistic_parts(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    trials: &DVector<f64>,
    group_of: &[usize],
    d: usize,
    hyper: &HyperParams,
    cfg: &ChainConfig,
) -> Result<GibbsSummary, GibbsError> {
    cfg.validate()?;
    let (n_tot, p, n) = (x.nrows(), x.ncols(), y.len());
    check_dim(d, n_tot, p)?;
    let m = n_tot - n;
    let pbar = p + 1;
    let mut gammas = column_gammas(group_of, hyper);
    let gamma_beta = gammas.pop().expect("outcome gamma");
    let mut r = rng::stream(cfg.seed, "gibbs", 1);
    let ntr = DVector::from_fn(n_tot, |i, _| if i < n { trials[i] } else { 1.0 });
    let mut counts = DVector::from_fn(n_tot, |i, _| if i < n { y[i] } else { 0.5 });
    let (b, mut psi) = pca_start(x, d, &gammas, hyper);
    let mut b = b;
    let rate = (y.sum() / trials.sum()).clamp(0.01, 0.99);
    let mut beta0 = (rate / (1.0 - rate)).ln();
    let mut beta = DVector::zeros(d);
    let mut lambda = DMatrix::zeros(n_tot, d);
    let mut acc = Accumulators::new(d, pbar, m);
    for it in 0..cfg.n_iter {
        let score = DVector::from_fn(n_tot, |i, _| beta0 + lambda.row(i).transpose().dot(&beta));
        let eta = DVector::from_fn(n_tot, |i, _| sample_pg(ntr[i], score[i], &mut r));
        let kappa = &counts - &ntr * 0.5;
        for i in 0..n_tot {
            let xi = x.row(i).transpose();
            let (mean, prec) = latent_conditional_logistic(&xi, kappa[i], eta[i], &b, &psi, beta0, &beta)?;
            let l = chol(&prec).ok_or(GibbsError::NonPdConditional)?.l();
            lambda.row_mut(i).copy_from(&draw_with_precision(&mean, &l, 1.0, &mut r).transpose());
        }
        let (mb, prec_b) = outcome_conditional_logistic(&lambda, &eta, &kappa, gamma_beta)?;
        let lb = chol(&prec_b).ok_or(GibbsError::NonPdConditional)?.l();
        let bb = draw_with_precision(&mb, &lb, 1.0, &mut r);
        beta0 = bb[0];
        beta = bb.rows(1, d).into_owned();
        b = sample_loadings(x, &lambda, &psi, &gammas, &mut r)?;
        psi = sample_uniquenesses(x, &lambda, &b, &gammas, hyper.kappa, hyper.nu, &mut r);
        for i in n..n_tot {
            let s = beta0 + lambda.row(i).transpose().dot(&beta);
            let pr = crate::vb_logistic::expit(s);
            counts[i] = if pr >= 1.0 {
                1.0
            } else if pr <= 0.0 {
                0.0
            } else {
                Binomial::new(1, pr).expect("probability").sample(&mut r) as f64
            };
        }
        if keep(it, cfg) {
            let mut b_bar = DMatrix::zeros(d, pbar);
            b_bar.columns_mut(0, p).copy_from(&b);
            b_bar.column_mut(p).copy_from(&beta);
            let mut psi_bar = DVector::from_element(pbar, 1.0);
            psi_bar.rows_mut(0, p).copy_from(&psi);
            let params = FactorParams {
                d,
                b: b.clone(),
                beta: beta.clone(),
                beta0,
                psi: psi.clone(),
                sigma2: 1.0,
            };
            let rule = induced_coefficients(&params).map_err(|_| GibbsError::NonPdConditional)?;
            acc.push(&b_bar, &psi_bar, &counts.rows(n, m).into_owned(), beta0, &rule);
        }
    }
    Ok(acc.finish(d, pbar))
}

pub fn gibbs_logistic(data: &Dataset, d: usize, hyper: &HyperParams, cfg: &ChainConfig) -> Result<GibbsSummary, GibbsError> {
    let (y, trials) = match &data.outcome {
        Outcome::Binomial { y, trials } => (y, trials),
        Outcome::Continuous(_) => return Err(GibbsError::WrongOutcome("binomial")),
    };
    let group_of: Vec<usize> = data.groups.iter().map(|g| g - 1).collect();
    gibbs_logistic_parts(&data.x, y, trials, &group_of, d, hyper, cfg)
}

/// Batch-means standard error of a series mean.
pub fn batch_means_se(series: &[f64], n_batches: usize) -> f64 {
    let k = n_batches.max(2).min(series.len().max(2));
    let size = series.len() / k;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..k).map(|b| series[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let grand = means.iter().sum::<f64>() / k as f64;
    let var = means.iter().map(|v| (v - grand).powi(2)).sum::<f64>() / (k - 1) as f64;
    (var / k as f64).sqrt()
}
