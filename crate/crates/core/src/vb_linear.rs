//! Conjugate mean-field variational Bayes for the linear-outcome factor model.
//!
//! The factorization is q(Λ) q(B̄) q(ψ̄) q(z): rows of Λ are Gaussian with a
//! shared covariance Ξ, each column b̄_j of B̄ is Gaussian N(μ_j, Ω_j), each
//! ψ̄_j is InvGamma(n_tot/2 + d/2 + κ, ζ_j), and every missing outcome z_i is
//! N(υ_i, χ). Updates are exact coordinate ascent steps on the lower bound.

use crate::data::{split_groups, Dataset, Outcome};
use crate::hyper::{EbMode, HyperParams};
use crate::linalg::{chol, spd_inverse, spd_logdet, symmetrize, trace_prod, Welford};
use crate::model::{induced_coefficients, induced_rule, FactorParams, PredictionRule};
use crate::rng;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};
use std::f64::consts::PI;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VbError {
    #[error("invalid latent dimension {d}: must lie in 1..={max}")]
    InvalidDimension { d: usize, max: usize },
    #[error("precision matrix lost positive definiteness")]
    NumericalBreakdown,
    #[error("variational scale ζ_{0} is not positive")]
    NonPositiveScale(usize),
    #[error("this estimator needs a {0} outcome")]
    WrongOutcome(&'static str),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

#[derive(Debug, Clone, Copy)]
pub struct VbOptions {
    /// Stop when the relative ELBO change falls below this.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for VbOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 5000,
            seed: 0,
        }
    }
}

/// Data and design of a linear-outcome VB problem.
#[derive(Debug, Clone)]
pub struct VbLinear {
    /// Features of all rows, labeled first.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub d: usize,
    /// 0-based group of every feature.
    pub group_of: Vec<usize>,
    pub groups: Vec<Vec<usize>>,
    x_sq: DVector<f64>,
}

/// Variational parameters. Column index `p` (the last) is the outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VbLinearState {
    pub phi: DMatrix<f64>,
    pub xi: DMatrix<f64>,
    /// (p+1) × d, row j is μ_jᵀ.
    pub mu: DMatrix<f64>,
    pub omega: Vec<DMatrix<f64>>,
    pub zeta: DVector<f64>,
    pub upsilon: DVector<f64>,
    pub chi: f64,
    pub elbo_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct VbFit {
    /// Converged state before the scale correction.
    pub state: VbLinearState,
    /// State after the post-hoc unit-variance correction.
    pub corrected: VbLinearState,
    pub hyper: HyperParams,
    /// Posterior-mean parameters of the corrected state.
    pub params: FactorParams,
    pub rule: PredictionRule,
    pub n_sweeps: usize,
    pub converged: bool,
    pub runtime_ms: u128,
}

impl VbLinear {
    pub fn new(data: &Dataset, d: usize) -> Result<Self, VbError> {
        let y = match &data.outcome {
            Outcome::Continuous(y) => y.clone(),
            Outcome::Binomial { .. } => return Err(VbError::WrongOutcome("continuous")),
        };
        Self::from_parts(data.x.clone(), y, &data.groups, d)
    }

    pub fn from_parts(x: DMatrix<f64>, y: DVector<f64>, labels: &[usize], d: usize) -> Result<Self, VbError> {
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

    /// Shape of every q(ψ̄_j).
    pub fn shape(&self, hyper: &HyperParams) -> f64 {
        self.n_total() as f64 / 2.0 + self.d as f64 / 2.0 + hyper.kappa
    }

    pub fn gamma_of(&self, j: usize, hyper: &HyperParams) -> f64 {
        if j == self.p() {
            hyper.gamma_for(None)
        } else {
            hyper.gamma_for(Some(self.group_of[j]))
        }
    }

    /// [y; υ].
    pub fn outcome_column(&self, st: &VbLinearState) -> DVector<f64> {
        let mut c = DVector::zeros(self.n_total());
        c.rows_mut(0, self.n()).copy_from(&self.y);
        if self.m() > 0 {
            c.rows_mut(self.n(), self.m()).copy_from(&st.upsilon);
        }
        c
    }

    /// Φᵀx̃_j for every column (d × (p+1)).
    fn phi_t_x(&self, st: &VbLinearState) -> DMatrix<f64> {
        let p = self.p();
        let mut out = DMatrix::zeros(self.d, p + 1);
        out.columns_mut(0, p).copy_from(&(st.phi.transpose() * &self.x));
        out.column_mut(p).copy_from(&(st.phi.transpose() * self.outcome_column(st)));
        out
    }

    fn x_sq_of(&self, j: usize, st: &VbLinearState) -> f64 {
        if j == self.p() {
            self.y.norm_squared() + st.upsilon.norm_squared()
        } else {
            self.x_sq[j]
        }
    }

    /// E(ΛᵀΛ) = ΦᵀΦ + n_tot Ξ.
    fn latent_gram(&self, st: &VbLinearState) -> DMatrix<f64> {
        symmetrize(&(st.phi.transpose() * &st.phi + &st.xi * self.n_total() as f64))
    }

    fn expected_precisions(&self, st: &VbLinearState, hyper: &HyperParams) -> DVector<f64> {
        let a = self.shape(hyper);
        st.zeta.map(|z| a / z)
    }

    /// Principal-component start. The loading block is initialized by one
    /// B̄ update on the PC scores so the first Λ update has information.
    pub fn init(&self, hyper: &HyperParams, seed: u64) -> VbLinearState {
        let (n_tot, p, d) = (self.n_total(), self.p(), self.d);
        let mut r = rng::stream(seed, "init", 0);
        let svd = self.x.clone().svd(true, false);
        let u = svd.u.expect("left singular vectors");
        let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
        idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let smax = svd.singular_values[idx[0]].max(1e-300);
        let mut phi = DMatrix::zeros(n_tot, d);
        for h in 0..d {
            let ok = h < idx.len() && svd.singular_values[idx[h]] > 1e-10 * smax;
            for i in 0..n_tot {
                phi[(i, h)] = if ok {
                    u[(i, idx[h])] * (n_tot as f64).sqrt()
                } else {
                    StandardNormal.sample(&mut r)
                };
            }
        }
        let psi0 = hyper.prior_psi_mean();
        let mut st = VbLinearState {
            phi,
            xi: DMatrix::identity(d, d) * 0.5,
            mu: DMatrix::zeros(p + 1, d),
            omega: vec![DMatrix::identity(d, d); p + 1],
            zeta: DVector::from_element(p + 1, hyper.nu + n_tot as f64 * psi0 / 2.0),
            upsilon: DVector::zeros(self.m()),
            chi: 1.0,
            elbo_trace: Vec::new(),
        };
        for j in 0..=p {
            st.omega[j] = DMatrix::identity(d, d) * (self.gamma_of(j, hyper) * psi0);
        }
        self.update_loadings(&mut st, hyper).expect("initial loading update");
        st
    }

    /// q(Λ): Ξ = {Σ_j E(ψ̄_j⁻¹)[Ω_j + μ_jμ_jᵀ] + I}⁻¹, φ_i = Ξ M̄ᵀ E(Ψ̄⁻¹) x̃_i.
    pub fn update_latent(&self, st: &mut VbLinearState, hyper: &HyperParams) -> Result<(), VbError> {
        let d = self.d;
        let p = self.p();
        let e = self.expected_precisions(st, hyper);
        let mut w = st.mu.clone();
        for j in 0..=p {
            w.row_mut(j).scale_mut(e[j]);
        }
        let mut a = DMatrix::identity(d, d) + st.mu.transpose() * &w;
        for j in 0..=p {
            a += &st.omega[j] * e[j];
        }
        st.xi = spd_inverse(&a).ok_or(VbError::NumericalBreakdown)?;
        let xw = &self.x * w.rows(0, p) + self.outcome_column(st) * w.row(p);
        st.phi = xw * &st.xi;
        Ok(())
    }

    /// q(b̄_j): μ_j = (E ΛᵀΛ + γ_j⁻¹I)⁻¹Φᵀx̃_j, Ω_j = E(ψ̄_j⁻¹)⁻¹(E ΛᵀΛ + γ_j⁻¹I)⁻¹.
    pub fn update_loadings(&self, st: &mut VbLinearState, hyper: &HyperParams) -> Result<(), VbError> {
        let d = self.d;
        let p = self.p();
        let gram = self.latent_gram(st);
        let ptx = self.phi_t_x(st);
        let e = self.expected_precisions(st, hyper);
        let mut cache: Vec<(f64, DMatrix<f64>)> = Vec::new();
        for j in 0..=p {
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
            st.omega[j] = inv / e[j];
        }
        Ok(())
    }

    /// q(ψ̄_j) scale ζ_j.
    pub fn update_uniquenesses(&self, st: &mut VbLinearState, hyper: &HyperParams) -> Result<(), VbError> {
        let p = self.p();
        let gram = self.latent_gram(st);
        let ptx = self.phi_t_x(st);
        for j in 0..=p {
            let mu = st.mu.row(j).transpose();
            let om = &st.omega[j];
            let g = self.gamma_of(j, hyper);
            let resid = self.x_sq_of(j, st) - 2.0 * mu.dot(&ptx.column(j)) + trace_prod(&gram, om) + mu.dot(&(&gram * &mu));
            let mut z = 0.5 * resid + 0.5 / g * (mu.norm_squared() + om.trace()) + hyper.nu;
            if j == p {
                z += 0.5 * self.m() as f64 * st.chi;
            }
            if !(z > 0.0) {
                return Err(VbError::NonPositiveScale(j));
            }
            st.zeta[j] = z;
        }
        Ok(())
    }

    /// q(z_i): υ_i = μ_p̄ᵀφ_i, χ = 1/E(ψ̄_p̄⁻¹). A no-op when m = 0.
    pub fn update_missing(&self, st: &mut VbLinearState, hyper: &HyperParams) {
        let m = self.m();
        if m == 0 {
            return;
        }
        let p = self.p();
        let beta = st.mu.row(p).transpose();
        st.upsilon = st.phi.rows(self.n(), m) * beta;
        st.chi = st.zeta[p] / self.shape(hyper);
    }

    /// E(ψ̄_j⁻¹){tr Ω_j + μ_jᵀμ_j} for every feature.
    pub fn eb_stats(&self, st: &VbLinearState, hyper: &HyperParams) -> Vec<f64> {
        let e = self.expected_precisions(st, hyper);
        (0..self.p())
            .map(|j| e[j] * (st.omega[j].trace() + st.mu.row(j).norm_squared()))
            .collect()
    }

    pub fn update_hyper(&self, st: &VbLinearState, hyper: &mut HyperParams) {
        if hyper.eb_mode != EbMode::Off {
            let stats = self.eb_stats(st, hyper);
            hyper.eb_step(&stats, &self.groups, self.d);
        }
    }

    /// One sweep in the order Λ, B̄, ψ̄, z, γ.
    pub fn sweep(&self, st: &mut VbLinearState, hyper: &mut HyperParams) -> Result<(), VbError> {
        self.update_latent(st, hyper)?;
        self.update_loadings(st, hyper)?;
        self.update_uniquenesses(st, hyper)?;
        self.update_missing(st, hyper);
        self.update_hyper(st, hyper);
        Ok(())
    }

    /// Evidence lower bound E_q[log p(x, z, Λ, B̄, ψ̄)] - E_q[log q].
    pub fn elbo(&self, st: &VbLinearState, hyper: &HyperParams) -> f64 {
        let (n_tot, p, d) = (self.n_total() as f64, self.p(), self.d as f64);
        let m = self.m() as f64;
        let a = self.shape(hyper);
        let ln2pi = (2.0 * PI).ln();
        let gram = self.latent_gram(st);
        let ptx = self.phi_t_x(st);
        let (k, nu) = (hyper.kappa, hyper.nu);
        let mut total = 0.0;
        for j in 0..=p {
            let mu = st.mu.row(j).transpose();
            let om = &st.omega[j];
            let z = st.zeta[j];
            let e = a / z;
            let elog = z.ln() - digamma(a);
            let g = self.gamma_of(j, hyper);
            let mut resid = self.x_sq_of(j, st) - 2.0 * mu.dot(&ptx.column(j)) + trace_prod(&gram, om) + mu.dot(&(&gram * &mu));
            if j == p {
                resid += m * st.chi;
            }
            let q = om.trace() + mu.norm_squared();
            // likelihood
            total += -0.5 * n_tot * ln2pi - 0.5 * n_tot * elog - 0.5 * e * resid;
            // loading prior
            total += -0.5 * d * (ln2pi + g.ln()) - 0.5 * d * elog - 0.5 * e * q / g;
            // uniqueness prior
            total += k * nu.ln() - ln_gamma(k) - (k + 1.0) * elog - nu * e;
            // entropies of q(b̄_j) and q(ψ̄_j)
            total += 0.5 * d * (1.0 + ln2pi) + 0.5 * spd_logdet(om).unwrap_or(f64::NEG_INFINITY);
            total += a + z.ln() + ln_gamma(a) - (1.0 + a) * digamma(a);
        }
        let xi_ld = spd_logdet(&st.xi).unwrap_or(f64::NEG_INFINITY);
        total += -0.5 * n_tot * d * ln2pi - 0.5 * (st.phi.norm_squared() + n_tot * st.xi.trace());
        total += n_tot * (0.5 * d * (1.0 + ln2pi) + 0.5 * xi_ld);
        if self.m() > 0 {
            total += 0.5 * m * (1.0 + ln2pi + st.chi.ln());
        }
        total
    }

    /// Sweep to convergence, then apply the unit-variance correction.
    pub fn fit(&self, hyper: &HyperParams, opts: &VbOptions) -> Result<VbFit, VbError> {
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
        let corrected = self.posthoc_correction(&st, &hyper);
        let params = self.posterior_mean_params(&corrected, &hyper);
        let rule = induced_rule(&params).map_err(|_| VbError::NumericalBreakdown)?;
        Ok(VbFit {
            state: st,
            corrected,
            hyper,
            params,
            rule,
            n_sweeps,
            converged,
            runtime_ms: start.elapsed().as_millis(),
        })
    }

    /// E(ψ̄_j) under q.
    pub fn psi_mean(&self, st: &VbLinearState, hyper: &HyperParams) -> DVector<f64> {
        let a = self.shape(hyper);
        st.zeta.map(|z| z / (a - 1.0))
    }

    /// Rescale column j by c_j = E(b̄_jᵀb̄_j) + E(ψ̄_j) so that the implied
    /// variance of every standardized column is one.
    pub fn posthoc_correction(&self, st: &VbLinearState, hyper: &HyperParams) -> VbLinearState {
        let psi = self.psi_mean(st, hyper);
        let mut out = st.clone();
        for j in 0..=self.p() {
            let c = st.mu.row(j).norm_squared() + st.omega[j].trace() + psi[j];
            out.mu.row_mut(j).scale_mut(1.0 / c.sqrt());
            out.omega[j] = &st.omega[j] / c;
            out.zeta[j] = st.zeta[j] / c;
        }
        out
    }

    /// Plug-in parameters at the variational posterior means.
    pub fn posterior_mean_params(&self, st: &VbLinearState, hyper: &HyperParams) -> FactorParams {
        let psi = self.psi_mean(st, hyper);
        FactorParams::from_joint(&st.mu.transpose(), &psi)
    }

    pub fn posterior(&self, st: &VbLinearState, hyper: &HyperParams) -> LinearPosterior {
        let a = self.shape(hyper);
        LinearPosterior {
            mu: st.mu.clone(),
            omega: st.omega.clone(),
            psi: st.zeta.iter().map(|&z| PsiDist::InvGamma { shape: a, scale: z }).collect(),
        }
    }
}

/// Marginal law of one ψ̄_j in a posterior summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiDist {
    InvGamma { shape: f64, scale: f64 },
    Point(f64),
}

impl PsiDist {
    pub fn mean(&self) -> f64 {
        match *self {
            PsiDist::InvGamma { shape, scale } => scale / (shape - 1.0),
            PsiDist::Point(v) => v,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            PsiDist::InvGamma { shape, scale } => scale * scale / ((shape - 1.0).powi(2) * (shape - 2.0)),
            PsiDist::Point(_) => 0.0,
        }
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, r: &mut R) -> f64 {
        match *self {
            PsiDist::InvGamma { shape, scale } => {
                let g: f64 = Gamma::new(shape, 1.0 / scale).expect("valid gamma").sample(r);
                1.0 / g
            }
            PsiDist::Point(v) => v,
        }
    }

    /// Same mean, variance multiplied by `eps` (a point mass when eps = 0).
    pub fn scaled(&self, eps: f64) -> PsiDist {
        let (mean, var) = (self.mean(), self.variance());
        if eps == 0.0 || var == 0.0 {
            return PsiDist::Point(mean);
        }
        let shape = mean * mean / (eps * var) + 2.0;
        PsiDist::InvGamma {
            shape,
            scale: mean * (shape - 1.0),
        }
    }
}

/// Independent Gaussian loadings and inverse-gamma uniquenesses, the form
/// shared by the variational posterior and its variance-scaled variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPosterior {
    /// (p+1) × d loading means, outcome last.
    #[serde(with = "crate::model::row_major")]
    pub mu: DMatrix<f64>,
    #[serde(with = "mat_vec")]
    pub omega: Vec<DMatrix<f64>>,
    pub psi: Vec<PsiDist>,
}

impl LinearPosterior {
    pub fn p(&self) -> usize {
        self.mu.nrows() - 1
    }

    pub fn with_variance_scale(&self, eps: f64) -> LinearPosterior {
        LinearPosterior {
            mu: self.mu.clone(),
            omega: self.omega.iter().map(|o| o * eps).collect(),
            psi: self.psi.iter().map(|d| d.scaled(eps)).collect(),
        }
    }

    pub fn mean_params(&self) -> FactorParams {
        let psi = DVector::from_iterator(self.psi.len(), self.psi.iter().map(PsiDist::mean));
        FactorParams::from_joint(&self.mu.transpose(), &psi)
    }
}

pub(crate) mod mat_vec {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<Vec<f64>>> = v
            .iter()
            .map(|m| m.row_iter().map(|r| r.iter().copied().collect()).collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        let raw = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
        Ok(raw
            .into_iter()
            .map(|rows| {
                let nr = rows.len();
                let nc = rows.first().map_or(0, Vec::len);
                DMatrix::from_fn(nr, nc, |i, j| rows[i][j])
            })
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct McPrediction {
    pub mean: DVector<f64>,
    /// Monte Carlo standard error of every prediction.
    pub se: DVector<f64>,
    /// Average induced coefficient vector β*.
    pub coefficients: DVector<f64>,
    pub draws_used: usize,
}

/// Monte Carlo estimate of the posterior-mean rule β* = E_q[β̃(θ)].
/// Draws with a degenerate covariance are discarded and redrawn, up to ten
/// times the requested number of draws.
pub fn predict_bayes_mc(post: &LinearPosterior, x: &DMatrix<f64>, n_draws: usize, seed: u64) -> McPrediction {
    let p = post.p();
    let d = post.mu.ncols();
    let mut r = rng::stream(seed, "mc-predict", 0);
    let chols: Vec<DMatrix<f64>> = post
        .omega
        .iter()
        .map(|o| {
            if o.iter().all(|v| *v == 0.0) {
                DMatrix::zeros(d, d)
            } else {
                chol(o).map(|c| c.l()).unwrap_or_else(|| DMatrix::zeros(d, d))
            }
        })
        .collect();
    let mut coef_acc = Welford::new(p);
    let mut pred_acc = Welford::new(x.nrows());
    let mut attempts = 0;
    while coef_acc.n < n_draws && attempts < 10 * n_draws.max(1) {
        attempts += 1;
        let mut b_bar = DMatrix::zeros(d, p + 1);
        for j in 0..=p {
            let mut col = post.mu.row(j).transpose();
            if chols[j].iter().any(|v| *v != 0.0) {
                let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut r));
                col += &chols[j] * z;
            }
            b_bar.column_mut(j).copy_from(&col);
        }
        let psi = DVector::from_iterator(p + 1, post.psi.iter().map(|dist| dist.sample(&mut r)));
        let params = FactorParams::from_joint(&b_bar, &psi);
        let coef = match induced_coefficients(&params) {
            Ok(c) => c,
            Err(_) => continue,
        };
        let rule = PredictionRule {
            coefficients: coef,
            intercept: 0.0,
        };
        pred_acc.push(&rule.predict(x));
        coef_acc.push(&rule.coefficients);
    }
    let k = pred_acc.n.max(1) as f64;
    McPrediction {
        se: pred_acc.variance().map(|v| (v / k).sqrt()),
        mean: pred_acc.mean,
        coefficients: coef_acc.mean,
        draws_used: coef_acc.n,
    }
}

/// Second-order Taylor approximation of β* around the posterior means.
/// The ψ̄ term uses the analytic second derivative; the b_j terms use central
/// differences along the eigenvectors of Ω_j.
pub fn taylor_coefficients(post: &LinearPosterior) -> Option<DVector<f64>> {
    let p = post.p();
    let base = post.mean_params();
    let c0 = induced_coefficients(&base).ok()?;
    let lr = crate::linalg::LowRankCov::new(&base.b, &base.psi)?;
    // ∂²g/∂ψ_j² = 2 E_jj (xᵀE)_j β̃_j with E = (BᵀB + Ψ)⁻¹.
    let mut w = DVector::zeros(p);
    for j in 0..p {
        let col = lr.b_psi_inv.column(j);
        let e_jj = 1.0 / base.psi[j] - col.dot(&(&lr.core_inv * col));
        w[j] = e_jj * c0[j] * post.psi[j].variance();
    }
    let mut out = &c0 + lr.solve_vec(&w);
    for j in 0..p {
        let om = &post.omega[j];
        if om.iter().all(|v| *v == 0.0) {
            continue;
        }
        let eig = symmetrize(om).symmetric_eigen();
        let bj = base.b.column(j).into_owned();
        let h = 1e-4 * bj.norm().max(1.0);
        for k in 0..eig.eigenvalues.len() {
            let lam = eig.eigenvalues[k];
            if lam <= 0.0 {
                continue;
            }
            let u = eig.eigenvectors.column(k);
            let mut plus = base.clone();
            plus.b.column_mut(j).copy_from(&(&bj + u * h));
            let mut minus = base.clone();
            minus.b.column_mut(j).copy_from(&(&bj - u * h));
            let cp = induced_coefficients(&plus).ok()?;
            let cm = induced_coefficients(&minus).ok()?;
            out += (cp - &c0 * 2.0 + cm) * (0.5 * lam / (h * h));
        }
    }
    Some(out)
}

/// Taylor-approximated posterior-mean predictions.
pub fn predict_bayes_taylor(post: &LinearPosterior, x: &DMatrix<f64>) -> Option<DVector<f64>> {
    taylor_coefficients(post).map(|c| x * c)
}
