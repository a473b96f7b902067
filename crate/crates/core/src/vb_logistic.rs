//! Mean-field variational Bayes for a binomial outcome via Pólya-Gamma
//! augmentation.
//!
//! The outcome column has no uniqueness: y_i | λ_i ~ Bin(N_i, expit(β₀ + βᵀλ_i)).
//! With η_i ~ PG(N_i, ·) the augmented model is conditionally Gaussian, so
//! the factorization q(η) q(Λ) q(β̄) q(B) q(ψ) q(z) has closed-form updates.
//! β₀ has a flat prior; β ~ N(0, γ I_d).

use crate::data::{split_groups, Dataset, Outcome};
use crate::gibbs::sample_pg;
use crate::hyper::{EbMode, HyperParams};
use crate::linalg::{chol, spd_inverse, spd_logdet, symmetrize, trace_prod, Welford};
use crate::model::{FactorParams, PredictionRule};
use crate::rng;
use crate::vb_linear::{PsiDist, VbError, VbOptions};
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};
use std::f64::consts::PI;
use std::time::Instant;

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// E(η) for η ~ PG(b, δ): b tanh(δ/2) / (2δ), with limit b/4 at δ = 0.
pub fn pg_mean(b: f64, delta: f64) -> f64 {
    let a = delta.abs();
    if a < 1e-12 {
        b / 4.0
    } else {
        b * (a / 2.0).tanh() / (2.0 * a)
    }
}

fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

fn ln_binom(n: f64, k: f64) -> f64 {
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

#[derive(Debug, Clone)]
pub struct VbLogistic {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Trials of labeled rows; unlabeled rows use one trial.
    pub trials: DVector<f64>,
    pub d: usize,
    pub group_of: Vec<usize>,
    pub groups: Vec<Vec<usize>>,
    x_sq: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VbLogisticState {
    pub phi: DMatrix<f64>,
    pub xi: Vec<DMatrix<f64>>,
    /// p × d feature loading means.
    pub mu: DMatrix<f64>,
    pub omega: Vec<DMatrix<f64>>,
    /// Mean of (β₀, β).
    pub mu_b: DVector<f64>,
    pub omega_b: DMatrix<f64>,
    pub zeta: DVector<f64>,
    pub delta: DVector<f64>,
    /// Success probabilities of the unlabeled rows.
    pub upsilon: DVector<f64>,
    pub elbo_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct VbLogisticFit {
    pub state: VbLogisticState,
    pub hyper: HyperParams,
    pub params: FactorParams,
    pub rule: PredictionRule,
    pub n_sweeps: usize,
    pub converged: bool,
    pub runtime_ms: u128,
}

impl VbLogistic {
    pub fn new(data: &Dataset, d: usize) -> Result<Self, VbError> {
        let (y, trials) = match &data.outcome {
            Outcome::Binomial { y, trials } => (y.clone(), trials.clone()),
            Outcome::Continuous(_) => return Err(VbError::WrongOutcome("binomial")),
        };
        Self::from_parts(data.x.clone(), y, trials, &data.groups, d)
    }

    pub fn from_parts(
        x: DMatrix<f64>,
        y: DVector<f64>,
        trials: DVector<f64>,
        labels: &[usize],
        d: usize,
    ) -> Result<Self, VbError> {
        let max = x.nrows().saturating_sub(1).min(x.ncols());
        if d == 0 || d > max {
            return Err(VbError::InvalidDimension { d, max });
        }
        let groups = split_groups(labels)?;
        let x_sq = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.norm_squared()));
        Ok(Self {
            group_of: labels.iter().map(|g| g - 1).collect(),
            groups,
            x,
            y,
            trials,
            d,
            x_sq,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn m(&self) -> usize {
        self.x.nrows() - self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_total(&self) -> usize {
        self.x.nrows()
    }

    pub fn shape(&self, hyper: &HyperParams) -> f64 {
        self.n_total() as f64 / 2.0 + self.d as f64 / 2.0 + hyper.kappa
    }

    fn trials_of(&self, i: usize) -> f64 {
        if i < self.n() {
            self.trials[i]
        } else {
            1.0
        }
    }

    /// E(y_i) - N_i/2, using N_i υ_i for unlabeled rows.
    fn kappa_tilde(&self, st: &VbLogisticState) -> DVector<f64> {
        DVector::from_fn(self.n_total(), |i, _| {
            let ni = self.trials_of(i);
            let ey = if i < self.n() {
                self.y[i]
            } else {
                ni * st.upsilon[i - self.n()]
            };
            ey - ni / 2.0
        })
    }

    fn eta(&self, st: &VbLogisticState) -> DVector<f64> {
        DVector::from_fn(self.n_total(), |i, _| pg_mean(self.trials_of(i), st.delta[i]))
    }

    fn second_moment_b(st: &VbLogisticState) -> DMatrix<f64> {
        &st.omega_b + &st.mu_b * st.mu_b.transpose()
    }

    /// E(s_i²) with s_i = β₀ + βᵀλ_i.
    fn expected_sq_score(&self, st: &VbLogisticState, i: usize) -> f64 {
        let d = self.d;
        let m2 = Self::second_moment_b(st);
        let phi = st.phi.row(i).transpose();
        let mbb = m2.view((1, 1), (d, d)).into_owned();
        m2[(0, 0)] + 2.0 * m2.view((1, 0), (d, 1)).column(0).dot(&phi) + phi.dot(&(&mbb * &phi)) + trace_prod(&mbb, &st.xi[i])
    }

    fn expected_score(&self, st: &VbLogisticState, i: usize) -> f64 {
        st.mu_b[0] + st.mu_b.rows(1, self.d).dot(&st.phi.row(i).transpose())
    }

    fn latent_gram(&self, st: &VbLogisticState) -> DMatrix<f64> {
        let mut g = st.phi.transpose() * &st.phi;
        for xi in &st.xi {
            g += xi;
        }
        symmetrize(&g)
    }

    fn gamma_of(&self, j: usize, hyper: &HyperParams) -> f64 {
        hyper.gamma_for(Some(self.group_of[j]))
    }

    pub fn init(&self, hyper: &HyperParams, seed: u64) -> VbLogisticState {
        let (n_tot, p, d) = (self.n_total(), self.p(), self.d);
        let mut r = rng::stream(seed, "init", 0);
        let svd = self.x.clone().svd(true, false);
        let u = svd.u.expect("left singular vectors");
        let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
        idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let smax = svd.singular_values[idx[0]].max(1e-300);
        let phi = DMatrix::from_fn(n_tot, d, |i, h| {
            if h < idx.len() && svd.singular_values[idx[h]] > 1e-10 * smax {
                u[(i, idx[h])] * (n_tot as f64).sqrt()
            } else {
                StandardNormal.sample(&mut r)
            }
        });
        let psi0 = hyper.prior_psi_mean();
        let rate = (self.y.sum() / self.trials.sum()).clamp(0.01, 0.99);
        let mut mu_b = DVector::zeros(d + 1);
        mu_b[0] = (rate / (1.0 - rate)).ln();
        let mut st = VbLogisticState {
            phi,
            xi: vec![DMatrix::identity(d, d) * 0.5; n_tot],
            mu: DMatrix::zeros(p, d),
            omega: (0..p).map(|j| DMatrix::identity(d, d) * (self.gamma_of(j, hyper) * psi0)).collect(),
            mu_b,
            omega_b: DMatrix::identity(d + 1, d + 1) * 0.1,
            zeta: DVector::from_element(p, hyper.nu + n_tot as f64 * psi0 / 2.0),
            delta: DVector::zeros(n_tot),
            upsilon: DVector::from_element(self.m(), rate),
            elbo_trace: Vec::new(),
        };
        self.update_loadings(&mut st, hyper).expect("initial loading update");
        self.update_delta(&mut st);
        self.update_outcome(&mut st, hyper).expect("initial outcome update");
        st
    }

    /// q(η_i) = PG(N_i, δ_i), δ_i² = E(β₀ + βᵀλ_i)².
    pub fn update_delta(&self, st: &mut VbLogisticState) {
        for i in 0..self.n_total() {
            st.delta[i] = self.expected_sq_score(st, i).max(0.0).sqrt();
        }
    }

    /// q(λ_i) with row-specific covariance Ξ_i.
    pub fn update_latent(&self, st: &mut VbLogisticState, hyper: &HyperParams) -> Result<(), VbError> {
        let (d, p) = (self.d, self.p());
        let a = self.shape(hyper);
        let e = st.zeta.map(|z| a / z);
        let mut w = st.mu.clone();
        for j in 0..p {
            w.row_mut(j).scale_mut(e[j]);
        }
        let mut base = DMatrix::identity(d, d) + st.mu.transpose() * &w;
        for j in 0..p {
            base += &st.omega[j] * e[j];
        }
        let m2 = Self::second_moment_b(st);
        let ebb = m2.view((1, 1), (d, d)).into_owned();
        let eb0 = m2.view((1, 0), (d, 1)).column(0).into_owned();
        let xw = &self.x * &w;
        let kt = self.kappa_tilde(st);
        let eta = self.eta(st);
        let mu_beta = st.mu_b.rows(1, d).into_owned();
        for i in 0..self.n_total() {
            let prec = &base + &ebb * eta[i];
            let xi = spd_inverse(&prec).ok_or(VbError::NumericalBreakdown)?;
            let rhs = xw.row(i).transpose() + &mu_beta * kt[i] - &eb0 * eta[i];
            st.phi.row_mut(i).copy_from(&(&xi * rhs).transpose());
            st.xi[i] = xi;
        }
        Ok(())
    }

    /// q(b_j) for the features.
    pub fn update_loadings(&self, st: &mut VbLogisticState, hyper: &HyperParams) -> Result<(), VbError> {
        let (d, p) = (self.d, self.p());
        let a = self.shape(hyper);
        let gram = self.latent_gram(st);
        let ptx = st.phi.transpose() * &self.x;
        let mut cache: Vec<(f64, DMatrix<f64>)> = Vec::new();
        for j in 0..p {
            let g = self.gamma_of(j, hyper);
            let inv = match cache.iter().find(|(k, _)| *k == g) {
                Some((_, m)) => m.clone(),
                None => {
                    let m = spd_inverse(&(&gram + DMatrix::identity(d, d) / g)).ok_or(VbError::NumericalBreakdown)?;
                    cache.push((g, m.clone()));
                    m
                }
            };
            let mu = &inv * ptx.column(j);
            st.mu.row_mut(j).copy_from(&mu.transpose());
            st.omega[j] = inv * (st.zeta[j] / a);
        }
        Ok(())
    }

    /// q(β₀, β) Gaussian.
    pub fn update_outcome(&self, st: &mut VbLogisticState, hyper: &HyperParams) -> Result<(), VbError> {
        let d = self.d;
        let eta = self.eta(st);
        let kt = self.kappa_tilde(st);
        let mut prec = DMatrix::zeros(d + 1, d + 1);
        let mut rhs = DVector::zeros(d + 1);
        for i in 0..self.n_total() {
            let phi = st.phi.row(i).transpose();
            let mut wv = DVector::zeros(d + 1);
            wv[0] = 1.0;
            wv.rows_mut(1, d).copy_from(&phi);
            prec += &wv * wv.transpose() * eta[i];
            let mut blk = prec.view_mut((1, 1), (d, d));
            blk += &st.xi[i] * eta[i];
            rhs += wv * kt[i];
        }
        let g = hyper.gamma_for(None);
        for h in 1..=d {
            prec[(h, h)] += 1.0 / g;
        }
        let inv = spd_inverse(&prec).ok_or(VbError::NumericalBreakdown)?;
        st.mu_b = &inv * rhs;
        st.omega_b = inv;
        Ok(())
    }

    pub fn update_uniquenesses(&self, st: &mut VbLogisticState, hyper: &HyperParams) -> Result<(), VbError> {
        let gram = self.latent_gram(st);
        let ptx = st.phi.transpose() * &self.x;
        for j in 0..self.p() {
            let mu = st.mu.row(j).transpose();
            let om = &st.omega[j];
            let g = self.gamma_of(j, hyper);
            let resid = self.x_sq[j] - 2.0 * mu.dot(&ptx.column(j)) + trace_prod(&gram, om) + mu.dot(&(&gram * &mu));
            let z = 0.5 * resid + 0.5 / g * (mu.norm_squared() + om.trace()) + hyper.nu;
            if !(z > 0.0) {
                return Err(VbError::NonPositiveScale(j));
            }
            st.zeta[j] = z;
        }
        Ok(())
    }

    /// q(z_i) = Bin(N_i, υ_i), υ_i = expit(E s_i).
    pub fn update_missing(&self, st: &mut VbLogisticState) {
        for k in 0..self.m() {
            st.upsilon[k] = expit(self.expected_score(st, self.n() + k));
        }
    }

    pub fn eb_stats(&self, st: &VbLogisticState, hyper: &HyperParams) -> Vec<f64> {
        let a = self.shape(hyper);
        (0..self.p())
            .map(|j| a / st.zeta[j] * (st.omega[j].trace() + st.mu.row(j).norm_squared()))
            .collect()
    }

    pub fn update_hyper(&self, st: &VbLogisticState, hyper: &mut HyperParams) {
        if hyper.eb_mode != EbMode::Off {
            let stats = self.eb_stats(st, hyper);
            hyper.eb_step(&stats, &self.groups, self.d);
        }
    }

    /// One sweep in the order δ, Λ, B, β̄, ψ, z, γ.
    pub fn sweep(&self, st: &mut VbLogisticState, hyper: &mut HyperParams) -> Result<(), VbError> {
        self.update_delta(st);
        self.update_latent(st, hyper)?;
        self.update_loadings(st, hyper)?;
        self.update_outcome(st, hyper)?;
        self.update_uniquenesses(st, hyper)?;
        self.update_missing(st);
        self.update_hyper(st, hyper);
        Ok(())
    }

    pub fn elbo(&self, st: &VbLogisticState, hyper: &HyperParams) -> f64 {
        let (n_tot, p, d) = (self.n_total(), self.p(), self.d as f64);
        let nt = n_tot as f64;
        let a = self.shape(hyper);
        let ln2pi = (2.0 * PI).ln();
        let gram = self.latent_gram(st);
        let ptx = st.phi.transpose() * &self.x;
        let (k, nu) = (hyper.kappa, hyper.nu);
        let mut total = 0.0;
        for j in 0..p {
            let mu = st.mu.row(j).transpose();
            let om = &st.omega[j];
            let z = st.zeta[j];
            let e = a / z;
            let elog = z.ln() - digamma(a);
            let g = self.gamma_of(j, hyper);
            let resid = self.x_sq[j] - 2.0 * mu.dot(&ptx.column(j)) + trace_prod(&gram, om) + mu.dot(&(&gram * &mu));
            let q = om.trace() + mu.norm_squared();
            total += -0.5 * nt * ln2pi - 0.5 * nt * elog - 0.5 * e * resid;
            total += -0.5 * d * (ln2pi + g.ln()) - 0.5 * d * elog - 0.5 * e * q / g;
            total += k * nu.ln() - ln_gamma(k) - (k + 1.0) * elog - nu * e;
            total += 0.5 * d * (1.0 + ln2pi) + 0.5 * spd_logdet(om).unwrap_or(f64::NEG_INFINITY);
            total += a + z.ln() + ln_gamma(a) - (1.0 + a) * digamma(a);
        }
        // factors
        total += -0.5 * nt * d * ln2pi - 0.5 * (st.phi.norm_squared() + st.xi.iter().map(|x| x.trace()).sum::<f64>());
        for xi in &st.xi {
            total += 0.5 * d * (1.0 + ln2pi) + 0.5 * spd_logdet(xi).unwrap_or(f64::NEG_INFINITY);
        }
        // β prior (β₀ flat) and entropy of q(β̄)
        let gb = hyper.gamma_for(None);
        let beta_sq = st.mu_b.rows(1, self.d).norm_squared() + (st.omega_b.trace() - st.omega_b[(0, 0)]);
        total += -0.5 * d * (ln2pi + gb.ln()) - 0.5 * beta_sq / gb;
        total += 0.5 * (d + 1.0) * (1.0 + ln2pi) + 0.5 * spd_logdet(&st.omega_b).unwrap_or(f64::NEG_INFINITY);
        // outcome with its Pólya-Gamma bound, and q(z)
        let eta = self.eta(st);
        let kt = self.kappa_tilde(st);
        for i in 0..n_tot {
            let ni = self.trials_of(i);
            let es = self.expected_score(st, i);
            let es2 = self.expected_sq_score(st, i);
            let dl = st.delta[i];
            total += -ni * std::f64::consts::LN_2 + kt[i] * es - 0.5 * eta[i] * (es2 - dl * dl) - ni * ln_cosh(dl / 2.0);
            if i < self.n() {
                total += ln_binom(ni, self.y[i]);
            } else {
                let u = st.upsilon[i - self.n()];
                let h = |v: f64| if v > 0.0 { v * v.ln() } else { 0.0 };
                total -= ni * (h(u) + h(1.0 - u));
            }
        }
        total
    }

    pub fn fit(&self, hyper: &HyperParams, opts: &VbOptions) -> Result<VbLogisticFit, VbError> {
        let start = Instant::now();
        let mut hyper = hyper.clone();
        let mut st = self.init(&hyper, opts.seed);
        let mut prev = self.elbo(&st, &hyper);
        let mut converged = false;
        let mut n_sweeps = 0;
        while n_sweeps < opts.max_iter {
            self.sweep(&mut st, &mut hyper)?;
            n_sweeps += 1;
            let cur = self.elbo(&st, &hyper);
            st.elbo_trace.push(cur);
            if (cur - prev).abs() <= opts.tol * cur.abs() {
                converged = true;
                break;
            }
            prev = cur;
        }
        let params = self.posterior_mean_params(&st, &hyper);
        let rule = crate::model::induced_rule(&params).map_err(|_| VbError::NumericalBreakdown)?;
        Ok(VbLogisticFit {
            state: st,
            hyper,
            params,
            rule,
            n_sweeps,
            converged,
            runtime_ms: start.elapsed().as_millis(),
        })
    }

    pub fn posterior_mean_params(&self, st: &VbLogisticState, hyper: &HyperParams) -> FactorParams {
        let a = self.shape(hyper);
        FactorParams {
            d: self.d,
            b: st.mu.transpose(),
            beta: st.mu_b.rows(1, self.d).into_owned(),
            beta0: st.mu_b[0],
            psi: st.zeta.map(|z| z / (a - 1.0)),
            sigma2: 1.0,
        }
    }

    pub fn posterior(&self, st: &VbLogisticState, hyper: &HyperParams) -> LogisticPosterior {
        let a = self.shape(hyper);
        LogisticPosterior {
            mu: st.mu.clone(),
            omega: st.omega.clone(),
            psi: st.zeta.iter().map(|&z| PsiDist::InvGamma { shape: a, scale: z }).collect(),
            mu_b: st.mu_b.clone(),
            omega_b: st.omega_b.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticPosterior {
    #[serde(with = "crate::model::row_major")]
    pub mu: DMatrix<f64>,
    #[serde(with = "crate::vb_linear::mat_vec")]
    pub omega: Vec<DMatrix<f64>>,
    pub psi: Vec<PsiDist>,
    #[serde(with = "crate::model::dvec")]
    pub mu_b: DVector<f64>,
    #[serde(with = "crate::model::row_major")]
    pub omega_b: DMatrix<f64>,
}

impl LogisticPosterior {
    pub fn with_variance_scale(&self, eps: f64) -> LogisticPosterior {
        LogisticPosterior {
            mu: self.mu.clone(),
            omega: self.omega.iter().map(|o| o * eps).collect(),
            psi: self.psi.iter().map(|d| d.scaled(eps)).collect(),
            mu_b: self.mu_b.clone(),
            omega_b: &self.omega_b * eps,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogisticPrediction {
    /// Second-order approximation of E[expit(g)].
    pub prob: DVector<f64>,
    /// Monte Carlo average of expit(g) over the same draws.
    pub prob_mc: DVector<f64>,
    pub score_mean: DVector<f64>,
    pub score_var: DVector<f64>,
}

fn factor_lower(m: &DMatrix<f64>) -> DMatrix<f64> {
    let k = m.nrows();
    if m.iter().all(|v| *v == 0.0) {
        return DMatrix::zeros(k, k);
    }
    chol(m).map(|c| c.l()).unwrap_or_else(|| DMatrix::zeros(k, k))
}

fn gaussian_draw<R: rand::Rng>(mean: DVector<f64>, l: &DMatrix<f64>, r: &mut R) -> DVector<f64> {
    if l.iter().all(|v| *v == 0.0) {
        return mean;
    }
    let z = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(r));
    mean + l * z
}

/// η with density ∝ PG(η | 1, 0) (1 + ηc)^{-1/2} exp{ηc²/(8(1 + ηc))}, by
/// rejection from PG(1, 0). The weight is bounded by exp(c/8).
pub fn sample_prediction_eta<R: rand::Rng>(c: f64, r: &mut R) -> f64 {
    let mut eta = 0.0;
    for _ in 0..1000 {
        eta = sample_pg(1.0, 0.0, r);
        let log_acc = -0.5 * (1.0 + eta * c).ln() - c / (8.0 * (1.0 + eta * c));
        if r.random::<f64>().ln() < log_acc {
            return eta;
        }
    }
    eta
}

/// Posterior predictive probabilities for one-trial outcomes.
///
/// Each draw gives g = β₀ + βᵀ(BΨ⁻¹Bᵀ + ηββᵀ + I)⁻¹BΨ⁻¹x; with c and s the
/// MC mean and variance of g, the probability is
/// expit(c) + s e(1-e)(1-2e)/2, e = expit(c).
pub fn predict_logistic(post: &LogisticPosterior, x: &DMatrix<f64>, n_draws: usize, seed: u64) -> LogisticPrediction {
    let p = post.mu.nrows();
    let d = post.mu.ncols();
    let mut r = rng::stream(seed, "mc-predict", 0);
    let chols: Vec<DMatrix<f64>> = post.omega.iter().map(factor_lower).collect();
    let chol_b = factor_lower(&post.omega_b);
    let mut acc = Welford::new(x.nrows());
    let mut acc_p = Welford::new(x.nrows());
    for _ in 0..n_draws.max(1) {
        let mut b = DMatrix::zeros(d, p);
        for j in 0..p {
            b.column_mut(j).copy_from(&gaussian_draw(post.mu.row(j).transpose(), &chols[j], &mut r));
        }
        let psi = DVector::from_iterator(p, post.psi.iter().map(|dist| dist.sample(&mut r)));
        let bb = gaussian_draw(post.mu_b.clone(), &chol_b, &mut r);
        let beta = bb.rows(1, d).into_owned();
        let c = beta.norm_squared();
        let eta = if c > 0.0 { sample_prediction_eta(c, &mut r) } else { 0.0 };
        let mut bpsi = b.clone();
        for j in 0..p {
            bpsi.column_mut(j).scale_mut(1.0 / psi[j]);
        }
        let prec = DMatrix::identity(d, d) + &bpsi * b.transpose() + &beta * beta.transpose() * eta;
        let Some(inv) = spd_inverse(&prec) else { continue };
        let w = bpsi.transpose() * (inv * &beta);
        let mut g = x * w;
        g.add_scalar_mut(bb[0]);
        acc_p.push(&g.map(expit));
        acc.push(&g);
    }
    let var = acc.variance();
    let prob = DVector::from_fn(x.nrows(), |i, _| {
        let e = expit(acc.mean[i]);
        (e + var[i] * e * (1.0 - e) * (1.0 - 2.0 * e) / 2.0).clamp(1e-12, 1.0 - 1e-12)
    });
    LogisticPrediction {
        prob,
        prob_mc: acc_p.mean,
        score_mean: acc.mean,
        score_var: var,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    pub(crate) fn binomial_data(n: usize, m: usize, p: usize, seed: u64) -> Dataset {
        let mut r = rng::stream(seed, "test-logit", 0);
        let b: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut r)).collect();
        let mut x = DMatrix::zeros(n + m, p);
        let mut y = DVector::zeros(n);
        for i in 0..n + m {
            let l: f64 = StandardNormal.sample(&mut r);
            for j in 0..p {
                let e: f64 = StandardNormal.sample(&mut r);
                x[(i, j)] = b[j] * l + 0.7 * e;
            }
            if i < n {
                y[i] = if r.random::<f64>() < expit(0.3 + 1.5 * l) { 1.0 } else { 0.0 };
            }
        }
        let groups = (0..p).map(|j| if j < p / 2 { 1 } else { 2 }).collect();
        let ds = Dataset::new(x, Outcome::Binomial { y, trials: DVector::from_element(n, 1.0) }, Some(groups)).unwrap();
        ds.standardize().unwrap().0
    }

    #[test]
    fn pg_mean_limit() {
        assert_eq!(pg_mean(1.0, 0.0), 0.25);
        assert!((pg_mean(1.0, 1e-6) - 0.25).abs() < 1e-12);
        assert!((pg_mean(2.0, 1.0) - 2.0 * (0.5f64).tanh() / 2.0).abs() < 1e-15);
    }

    proptest::proptest! {
        #[test]
        fn pg_mean_is_even_positive_and_decreasing(b in 0.5f64..5.0, start in 0.0f64..10.0) {
            let grid: Vec<f64> = (0..50).map(|k| start + 0.2 * k as f64).collect();
            for w in grid.windows(2) {
                let (lo, hi) = (pg_mean(b, w[0]), pg_mean(b, w[1]));
                proptest::prop_assert!(hi > 0.0 && hi < lo);
                proptest::prop_assert_eq!(pg_mean(b, -w[1]), hi);
            }
            proptest::prop_assert!(pg_mean(b, 0.0) == b / 4.0);
        }
    }

    #[test]
    fn elbo_is_monotone_for_every_block() {
        for (seed, m) in [(1u64, 0usize), (2, 5)] {
            let data = binomial_data(20, m, 6, seed);
            let prob = VbLogistic::new(&data, 2).unwrap();
            let mut hyper = HyperParams::new(2, 2).with_eb(EbMode::Constrained);
            let mut st = prob.init(&hyper, seed);
            let mut e = prob.elbo(&st, &hyper);
            for _ in 0..60 {
                let steps: [&dyn Fn(&mut VbLogisticState, &mut HyperParams); 7] = [
                    &|s, _| prob.update_delta(s),
                    &|s, h| prob.update_latent(s, h).unwrap(),
                    &|s, h| prob.update_loadings(s, h).unwrap(),
                    &|s, h| prob.update_outcome(s, h).unwrap(),
                    &|s, h| prob.update_uniquenesses(s, h).unwrap(),
                    &|s, _| prob.update_missing(s),
                    &|s, h| prob.update_hyper(s, h),
                ];
                for (k, step) in steps.iter().enumerate() {
                    step(&mut st, &mut hyper);
                    let e2 = prob.elbo(&st, &hyper);
                    assert!(e2 >= e - 1e-9 * e.abs(), "block {k}: {e} -> {e2}");
                    e = e2;
                }
            }
        }
    }

    #[test]
    fn fit_converges_and_predicts_in_unit_interval() {
        let data = binomial_data(60, 20, 6, 3);
        let prob = VbLogistic::new(&data, 1).unwrap();
        let fit = prob.fit(&HyperParams::new(1, 2), &VbOptions::default()).unwrap();
        assert!(fit.converged);
        let post = prob.posterior(&fit.state, &fit.hyper);
        let pr = predict_logistic(&post, &data.x, 200, 1);
        assert!(pr.prob.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn zero_posterior_predicts_one_half() {
        let post = LogisticPosterior {
            mu: DMatrix::zeros(3, 2),
            omega: vec![DMatrix::zeros(2, 2); 3],
            psi: vec![PsiDist::Point(1.0); 3],
            mu_b: DVector::zeros(3),
            omega_b: DMatrix::zeros(3, 3),
        };
        let x = DMatrix::from_element(4, 3, 0.7);
        let pr = predict_logistic(&post, &x, 10, 0);
        assert!(pr.prob.iter().all(|v| *v == 0.5));
    }
}
