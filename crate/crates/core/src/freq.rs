//! Frequentist estimators: factor-analysis EM on a covariance matrix,
//! penalized FA with cross-validated shrinkage, semi-supervised EM for a
//! missing outcome, two-step factor regression and ridge regression.

use crate::data::{DataError, Dataset};
use crate::linalg::{chol, spd_inverse, symmetrize, trace_prod, LowRankCov};
use crate::model::{induced_coefficients, FactorParams, ModelError, PredictionRule};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FreqError {
    #[error("invalid factor dimension {d} for {k} variables")]
    InvalidDimension { d: usize, k: usize },
    #[error("covariance input is not symmetric with positive diagonal")]
    IndefiniteInput,
    #[error("EM did not converge in {iterations} iterations")]
    NotConverged { iterations: usize },
    #[error("every cross-validation fold failed")]
    AllFoldsFailed,
    #[error("factor scores are singular")]
    SingularScores,
    #[error("conditional outcome variance is not positive")]
    DivergedVariance,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy)]
pub struct FaOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub psi_floor: f64,
}

impl Default for FaOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 5000,
            psi_floor: 1e-6,
        }
    }
}

/// Result of factor-analysis EM on a k×k covariance.
#[derive(Debug, Clone)]
pub struct FaFit {
    /// d × k loadings.
    pub loadings: DMatrix<f64>,
    pub psi: DVector<f64>,
    /// log|Σ⁻¹| - tr(Σ⁻¹S) at the returned parameters.
    pub objective: f64,
    pub iterations: usize,
    pub trace: Vec<f64>,
}

impl FaFit {
    /// Split into model parameters with the last variable as outcome.
    pub fn to_params(&self) -> FactorParams {
        FactorParams::from_joint(&self.loadings, &self.psi)
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let mut s = self.loadings.transpose() * &self.loadings;
        for j in 0..self.psi.len() {
            s[(j, j)] += self.psi[j];
        }
        s
    }
}

fn check_cov(s: &DMatrix<f64>, d: usize) -> Result<(), FreqError> {
    let k = s.nrows();
    if d == 0 || d >= k {
        return Err(FreqError::InvalidDimension { d, k });
    }
    if s.ncols() != k || (s - s.transpose()).amax() > 1e-8 * s.amax().max(1.0) {
        return Err(FreqError::IndefiniteInput);
    }
    if (0..k).any(|j| !(s[(j, j)] > 0.0)) || s.iter().any(|v| !v.is_finite()) {
        return Err(FreqError::IndefiniteInput);
    }
    Ok(())
}

/// log|Σ⁻¹| - tr(Σ⁻¹S) for Σ = BᵀB + Ψ.
pub fn fa_objective(s: &DMatrix<f64>, b: &DMatrix<f64>, psi: &DVector<f64>) -> f64 {
    let lr = match LowRankCov::new(b, psi) {
        Some(lr) => lr,
        None => return f64::NEG_INFINITY,
    };
    let diag: f64 = (0..psi.len()).map(|j| s[(j, j)] / psi[j]).sum();
    let w = &lr.b_psi_inv * s * lr.b_psi_inv.transpose();
    -lr.logdet() - (diag - trace_prod(&lr.core_inv, &w))
}

/// Principal-axis start on the correlation scale: top-d eigenvectors scaled
/// by the excess over the mean of the discarded eigenvalues.
fn pca_start(s: &DMatrix<f64>, d: usize, floor: f64) -> (DMatrix<f64>, DVector<f64>) {
    let k = s.nrows();
    let sd = s.diagonal().map(f64::sqrt);
    let r = DMatrix::from_fn(k, k, |i, j| s[(i, j)] / (sd[i] * sd[j]));
    let eig = symmetrize(&r).symmetric_eigen();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let rest: f64 = order[d..].iter().map(|&i| eig.eigenvalues[i].max(0.0)).sum::<f64>() / (k - d) as f64;
    let mut b = DMatrix::zeros(d, k);
    for (h, &i) in order[..d].iter().enumerate() {
        let excess = eig.eigenvalues[i] - rest;
        let scale = if excess > 1e-10 { excess.sqrt() } else { 0.0 };
        let v = eig.eigenvectors.column(i);
        // Fix the sign so that the largest entry is positive.
        let imax = v.iamax();
        let sign = if v[imax] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..k {
            b[(h, j)] = sign * scale * v[j] * sd[j];
        }
    }
    let psi = DVector::from_fn(k, |j, _| {
        let comm: f64 = b.column(j).norm_squared();
        (s[(j, j)] - comm).max(0.05 * s[(j, j)]).max(floor)
    });
    (b, psi)
}

/// Maximum-likelihood factor analysis of covariance `s` by EM.
pub fn fa_mle(s: &DMatrix<f64>, d: usize, opts: &FaOptions) -> Result<FaFit, FreqError> {
    check_cov(s, d)?;
    let (b, psi) = pca_start(s, d, opts.psi_floor);
    fa_mle_from(s, b, psi, opts)
}

/// EM iterations started from the given loadings and uniquenesses.
pub fn fa_mle_from(
    s: &DMatrix<f64>,
    mut b: DMatrix<f64>,
    mut psi: DVector<f64>,
    opts: &FaOptions,
) -> Result<FaFit, FreqError> {
    check_cov(s, b.nrows())?;
    let d = b.nrows();
    let k = s.nrows();
    let mut obj = fa_objective(s, &b, &psi);
    let mut trace = vec![obj];
    for it in 1..=opts.max_iter {
        let lr = LowRankCov::new(&b, &psi).ok_or(FreqError::IndefiniteInput)?;
        let delta = &lr.core_inv * &lr.b_psi_inv; // B Σ⁻¹
        let ds = &delta * s;
        let big = DMatrix::identity(d, d) - &delta * b.transpose() + &ds * delta.transpose();
        let big_inv = spd_inverse(&big).ok_or(FreqError::IndefiniteInput)?;
        let b_new = big_inv * &ds;
        for j in 0..k {
            let v = s[(j, j)] - b_new.column(j).dot(&ds.column(j));
            psi[j] = v.max(opts.psi_floor);
        }
        b = b_new;
        let new_obj = fa_objective(s, &b, &psi);
        trace.push(new_obj);
        let done = (new_obj - obj).abs() <= opts.tol * obj.abs().max(1.0);
        obj = new_obj;
        if done {
            return Ok(FaFit {
                loadings: b,
                psi,
                objective: obj,
                iterations: it,
                trace,
            });
        }
    }
    Err(FreqError::NotConverged {
        iterations: opts.max_iter,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyTarget {
    Identity,
    Diagonal,
}

/// Shrinkage (1-γ)S + γΓ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Penalty {
    pub gamma: f64,
    pub target: PenaltyTarget,
}

impl Penalty {
    pub fn apply(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        self.apply_with(s, &self.target_of(s))
    }

    pub fn target_of(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        match self.target {
            PenaltyTarget::Identity => DMatrix::identity(s.nrows(), s.ncols()),
            PenaltyTarget::Diagonal => DMatrix::from_diagonal(&s.diagonal()),
        }
    }

    pub fn apply_with(&self, s: &DMatrix<f64>, target: &DMatrix<f64>) -> DMatrix<f64> {
        s * (1.0 - self.gamma) + target * self.gamma
    }
}

/// Penalized maximum-likelihood FA: `fa_mle` on the shrunk covariance.
pub fn fa_pml(s: &DMatrix<f64>, d: usize, penalty: &Penalty, opts: &FaOptions) -> Result<FaFit, FreqError> {
    if !(0.0..=1.0).contains(&penalty.gamma) {
        return Err(FreqError::InvalidInput(format!("penalty {} outside [0,1]", penalty.gamma)));
    }
    fa_mle(&penalty.apply(s), d, opts)
}

/// Cross-products XᵀX / n.
pub fn cross_cov(x: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&(x.transpose() * x / x.nrows() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvBlock {
    /// Features of every row.
    Features,
    /// Labeled features joined with the outcome.
    Joint,
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub gamma: f64,
    /// (γ, mean held-out log-likelihood per row) for every grid point.
    pub scores: Vec<(f64, f64)>,
}

pub const DEFAULT_PENALTY_GRID: [f64; 7] = [0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9];

fn fold_split(x: &DMatrix<f64>, folds: usize, k: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let train: Vec<usize> = (0..x.nrows()).filter(|i| i % folds != k).collect();
    let test: Vec<usize> = (0..x.nrows()).filter(|i| i % folds == k).collect();
    (x.select_rows(&train), x.select_rows(&test))
}

/// Gaussian log-likelihood per row of held-out rows with covariance BᵀB + Ψ.
pub fn gaussian_loglik(x: &DMatrix<f64>, b: &DMatrix<f64>, psi: &DVector<f64>) -> f64 {
    let k = psi.len() as f64;
    0.5 * fa_objective(&cross_cov(x), b, psi) - 0.5 * k * (2.0 * PI).ln()
}

/// Choose the shrinkage weight by k-fold held-out Gaussian log-likelihood.
/// Ties go to the larger γ.
pub fn cv_penalty(
    data: &Dataset,
    d: usize,
    folds: usize,
    grid: &[f64],
    target: PenaltyTarget,
    block: CvBlock,
    opts: &FaOptions,
) -> Result<CvResult, FreqError> {
    let x = match block {
        CvBlock::Features => data.x.clone(),
        CvBlock::Joint => data.joint_labeled(),
    };
    if folds < 2 || folds > x.nrows() {
        return Err(FreqError::AllFoldsFailed);
    }
    let mut grid: Vec<f64> = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let mut scores = Vec::with_capacity(grid.len());
    for &g in &grid {
        let pen = Penalty { gamma: g, target };
        let mut total = 0.0;
        let mut ok = 0usize;
        for k in 0..folds {
            let (train, test) = fold_split(&x, folds, k);
            if let Ok(fit) = fa_pml(&cross_cov(&train), d, &pen, opts) {
                total += gaussian_loglik(&test, &fit.loadings, &fit.psi);
                ok += 1;
            }
        }
        let score = if ok == 0 { f64::NEG_INFINITY } else { total / ok as f64 };
        scores.push((g, score));
    }
    let mut best: Option<(f64, f64)> = None;
    for &(g, sc) in &scores {
        if sc.is_finite() && best.is_none_or(|(_, b)| sc >= b) {
            best = Some((g, sc));
        }
    }
    let (gamma, _) = best.ok_or(FreqError::AllFoldsFailed)?;
    Ok(CvResult { gamma, scores })
}

/// E(z | x) and V(z | x) for a missing outcome under the joint model.
pub fn conditional_outcome_moments(params: &FactorParams, x: &DMatrix<f64>) -> Result<(DVector<f64>, f64), FreqError> {
    let coef = induced_coefficients(params)?;
    let lr = LowRankCov::new(&params.b, &params.psi).ok_or(ModelError::NotPositiveDefinite)?;
    // βᵀ(I - B(BᵀB+Ψ)⁻¹Bᵀ)β = βᵀ(I + BΨ⁻¹Bᵀ)⁻¹β.
    let v = params.beta.dot(&(&lr.core_inv * &params.beta)) + params.sigma2;
    if !(v > 0.0) {
        return Err(FreqError::DivergedVariance);
    }
    Ok((x * coef, v))
}

#[derive(Debug, Clone, Copy)]
pub struct EmOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub fa: FaOptions,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 2000,
            fa: FaOptions {
                tol: 1e-12,
                ..FaOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub params: FactorParams,
    /// Penalized observed-data objective after every iteration (index 0 is the start).
    pub objective_trace: Vec<f64>,
    /// Expected complete-data objective (before, after) each M-step.
    pub q_trace: Vec<(f64, f64)>,
    pub iterations: usize,
}

struct EmProblem {
    n: f64,
    m: f64,
    s_lab: DMatrix<f64>,
    s_unl: DMatrix<f64>,
    x_unl: DMatrix<f64>,
    xbar: DMatrix<f64>,
    penalty: Option<Penalty>,
    target: DMatrix<f64>,
}

impl EmProblem {
    fn gamma(&self) -> f64 {
        self.penalty.map_or(0.0, |p| p.gamma)
    }

    /// (1-γ)·(2/N)·loglik + γ·(log|Σ⁻¹| - tr Σ⁻¹Γ), N = n + m.
    fn objective(&self, b: &DMatrix<f64>, psi: &DVector<f64>) -> f64 {
        let k = psi.len();
        let p = k - 1;
        let lab = self.n * (fa_objective(&self.s_lab, b, psi) - k as f64 * (2.0 * PI).ln());
        let unl = if self.m > 0.0 {
            let bx = b.columns(0, p).into_owned();
            let px = psi.rows(0, p).into_owned();
            self.m * (fa_objective(&self.s_unl, &bx, &px) - p as f64 * (2.0 * PI).ln())
        } else {
            0.0
        };
        let ll = 0.5 * (lab + unl);
        let g = self.gamma();
        let pen = if g > 0.0 { fa_objective(&self.target, b, psi) } else { 0.0 };
        (1.0 - g) * 2.0 * ll / (self.n + self.m) + g * pen
    }

    fn completed_cov(&self, params: &FactorParams) -> Result<DMatrix<f64>, FreqError> {
        let (ez, v) = conditional_outcome_moments(params, &self.x_unl)?;
        let p = self.x_unl.ncols();
        let mut xt = DMatrix::zeros(self.x_unl.nrows(), p + 1);
        xt.columns_mut(0, p).copy_from(&self.x_unl);
        xt.column_mut(p).copy_from(&ez);
        let mut s = self.xbar.transpose() * &self.xbar + xt.transpose() * &xt;
        s[(p, p)] += self.m * v;
        let s = symmetrize(&(s / (self.n + self.m)));
        Ok(match &self.penalty {
            Some(pen) => pen.apply_with(&s, &self.target),
            None => s,
        })
    }
}

/// Semi-supervised EM: unlabeled outcomes are integrated out through their
/// conditional moments; the M-step is FA-EM on the completed covariance.
pub fn em_semisupervised(
    data: &Dataset,
    d: usize,
    penalty: Option<Penalty>,
    opts: &EmOptions,
) -> Result<EmFit, FreqError> {
    let xbar = data.joint_labeled();
    let s_lab = cross_cov(&xbar);
    // The shrinkage target is fixed from the labeled block so that the
    // objective does not move between iterations.
    let target = match &penalty {
        Some(p) => p.target_of(&s_lab),
        None => DMatrix::zeros(0, 0),
    };
    let x_unl = data.unlabeled_x();
    let s_unl = if x_unl.nrows() > 0 { cross_cov(&x_unl) } else { DMatrix::zeros(0, 0) };
    let prob = EmProblem {
        n: data.n() as f64,
        m: data.m() as f64,
        s_lab: s_lab.clone(),
        s_unl,
        x_unl,
        xbar,
        penalty,
        target,
    };
    let start_cov = match &prob.penalty {
        Some(p) => p.apply_with(&s_lab, &prob.target),
        None => s_lab,
    };
    let fit0 = fa_mle(&start_cov, d, &opts.fa)?;
    let mut b = fit0.loadings;
    let mut psi = fit0.psi;
    let mut obj = prob.objective(&b, &psi);
    let mut trace = vec![obj];
    let mut q_trace = Vec::new();
    if data.m() == 0 {
        return Ok(EmFit {
            params: FactorParams::from_joint(&b, &psi),
            objective_trace: trace,
            q_trace,
            iterations: 0,
        });
    }
    for it in 1..=opts.max_iter {
        let params = FactorParams::from_joint(&b, &psi);
        let st = prob.completed_cov(&params)?;
        let q0 = fa_objective(&st, &b, &psi);
        let fit = match fa_mle_from(&st, b.clone(), psi.clone(), &opts.fa) {
            Ok(f) => f,
            Err(FreqError::NotConverged { .. }) => return Err(FreqError::NotConverged { iterations: it }),
            Err(e) => return Err(e),
        };
        q_trace.push((q0, fit.objective));
        b = fit.loadings;
        psi = fit.psi;
        let new_obj = prob.objective(&b, &psi);
        trace.push(new_obj);
        let done = (new_obj - obj).abs() <= opts.tol * obj.abs().max(1.0);
        obj = new_obj;
        if done {
            return Ok(EmFit {
                params: FactorParams::from_joint(&b, &psi),
                objective_trace: trace,
                q_trace,
                iterations: it,
            });
        }
    }
    Err(FreqError::NotConverged {
        iterations: opts.max_iter,
    })
}

/// Observed-data objective used by `em_semisupervised`, exposed for checks.
pub fn em_objective(data: &Dataset, params: &FactorParams, penalty: Option<Penalty>) -> f64 {
    let xbar = data.joint_labeled();
    let s_lab = cross_cov(&xbar);
    let target = match &penalty {
        Some(p) => p.target_of(&s_lab),
        None => DMatrix::zeros(0, 0),
    };
    let x_unl = data.unlabeled_x();
    let s_unl = if x_unl.nrows() > 0 { cross_cov(&x_unl) } else { DMatrix::zeros(0, 0) };
    let prob = EmProblem {
        n: data.n() as f64,
        m: data.m() as f64,
        s_lab,
        s_unl,
        x_unl,
        xbar,
        penalty,
        target,
    };
    prob.objective(&params.joint_loadings(), &params.joint_psi())
}

#[derive(Debug, Clone)]
pub struct TwoStepFit {
    pub rule: PredictionRule,
    /// Feature-only factor model.
    pub loadings: DMatrix<f64>,
    pub psi: DVector<f64>,
    pub score_coefficients: DVector<f64>,
}

/// Penalized FA on the features of all rows, then least squares of the
/// outcome on the factor scores of the labeled rows.
pub fn two_step_fit(data: &Dataset, d: usize, penalty: &Penalty, opts: &FaOptions) -> Result<TwoStepFit, FreqError> {
    let n = data.n();
    if n < d + 1 {
        return Err(FreqError::SingularScores);
    }
    let fit = fa_pml(&cross_cov(&data.x), d, penalty, opts)?;
    let lr = LowRankCov::new(&fit.loadings, &fit.psi).ok_or(FreqError::IndefiniteInput)?;
    let w = lr.score_map();
    let f = data.labeled_x() * &w;
    let ftf = f.transpose() * &f;
    let scale = ftf.diagonal().amax();
    if !(scale > 1e-12) {
        return Err(FreqError::SingularScores);
    }
    let c = chol(&ftf).ok_or(FreqError::SingularScores)?;
    let l = c.l();
    let min_diag = (0..d).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if min_diag < 1e-10 * scale {
        return Err(FreqError::SingularScores);
    }
    let a = c.solve(&(f.transpose() * data.y()));
    Ok(TwoStepFit {
        rule: PredictionRule {
            coefficients: &w * &a,
            intercept: 0.0,
        },
        loadings: fit.loadings,
        psi: fit.psi,
        score_coefficients: a,
    })
}

#[derive(Debug, Clone)]
pub struct RidgeFit {
    pub rule: PredictionRule,
    pub lambda: f64,
    /// (λ, CV mean squared error) for every grid point.
    pub scores: Vec<(f64, f64)>,
}

pub fn default_ridge_grid() -> Vec<f64> {
    (-6..=8).map(|k| 10f64.powf(k as f64 * 0.5)).collect()
}

/// Ridge coefficients (XᵀX + λI)⁻¹Xᵀy, using the n×n dual when p > n.
pub fn ridge_solve(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let (n, p) = x.shape();
    if p <= n {
        let mut a = x.transpose() * x;
        for j in 0..p {
            a[(j, j)] += lambda;
        }
        chol(&a).map(|c| c.solve(&(x.transpose() * y)))
    } else {
        let mut a = x * x.transpose();
        for i in 0..n {
            a[(i, i)] += lambda;
        }
        chol(&a).map(|c| x.transpose() * c.solve(y))
    }
}

/// Ridge regression with λ chosen by k-fold prediction MSE; ties go to the
/// larger λ.
pub fn ridge_fit(data: &Dataset, folds: usize, grid: &[f64]) -> Result<RidgeFit, FreqError> {
    let x = data.labeled_x();
    let y = data.y().clone();
    let n = x.nrows();
    if folds < 2 || folds > n {
        return Err(FreqError::AllFoldsFailed);
    }
    let mut grid: Vec<f64> = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let mut scores = Vec::new();
    for &lam in &grid {
        let mut sse = 0.0;
        let mut cnt = 0usize;
        let mut failed = false;
        for k in 0..folds {
            let tr: Vec<usize> = (0..n).filter(|i| i % folds != k).collect();
            let te: Vec<usize> = (0..n).filter(|i| i % folds == k).collect();
            let xt = x.select_rows(&tr);
            let yt = DVector::from_iterator(tr.len(), tr.iter().map(|&i| y[i]));
            match ridge_solve(&xt, &yt, lam) {
                Some(c) => {
                    for &i in &te {
                        let r = y[i] - x.row(i).transpose().dot(&c);
                        sse += r * r;
                        cnt += 1;
                    }
                }
                None => failed = true,
            }
        }
        let score = if failed || cnt == 0 { f64::INFINITY } else { sse / cnt as f64 };
        scores.push((lam, score));
    }
    let mut best: Option<(f64, f64)> = None;
    for &(l, s) in &scores {
        if s.is_finite() && best.is_none_or(|(_, b)| s <= b) {
            best = Some((l, s));
        }
    }
    let (lambda, _) = best.ok_or(FreqError::AllFoldsFailed)?;
    let coef = ridge_solve(&x, &y, lambda).ok_or(FreqError::AllFoldsFailed)?;
    Ok(RidgeFit {
        rule: PredictionRule {
            coefficients: coef,
            intercept: 0.0,
        },
        lambda,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Outcome;
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::stream(seed, "test", 0);
        DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut r))
    }

    fn factor_data(n: usize, p: usize, m: usize, seed: u64) -> Dataset {
        let mut r = rng::stream(seed, "test-fa", 0);
        let b = DMatrix::from_fn(1, p + 1, |_, _| {
            let v: f64 = StandardNormal.sample(&mut r);
            v
        });
        let lam = gaussian(n + m, 1, seed + 1);
        let e = gaussian(n + m, p + 1, seed + 2) * 0.7;
        let xbar = &lam * &b + e;
        let x = xbar.columns(0, p).into_owned();
        let y = DVector::from_iterator(n, (0..n).map(|i| xbar[(i, p)]));
        Dataset::new(x, Outcome::Continuous(y), None).unwrap()
    }

    #[test]
    fn identity_covariance_gives_zero_loadings() {
        let s = DMatrix::identity(5, 5);
        let f = fa_mle(&s, 1, &FaOptions::default()).unwrap();
        assert!(f.loadings.amax() < 1e-8);
        assert!((f.psi.add_scalar(-1.0)).amax() < 1e-8);
    }

    #[test]
    fn rank_one_plus_noise_is_recovered() {
        let c = DVector::from_vec(vec![0.9, -0.5, 0.7, 0.3, 1.1]);
        let s = &c * c.transpose() + DMatrix::identity(5, 5) * 0.5;
        let opts = FaOptions {
            tol: 1e-14,
            max_iter: 20000,
            ..FaOptions::default()
        };
        let f = fa_mle(&s, 1, &opts).unwrap();
        assert!((f.covariance() - &s).amax() < 1e-4);
    }

    #[test]
    fn fa_objective_increases_along_em() {
        let data = factor_data(40, 6, 0, 3);
        let s = cross_cov(&data.joint_labeled());
        let f = fa_mle(&s, 2, &FaOptions::default()).unwrap();
        for w in f.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn full_shrinkage_to_identity() {
        let x = gaussian(30, 4, 4);
        let pen = Penalty {
            gamma: 1.0,
            target: PenaltyTarget::Identity,
        };
        let f = fa_pml(&cross_cov(&x), 1, &pen, &FaOptions::default()).unwrap();
        assert!(f.loadings.amax() < 1e-8);
        assert!((f.psi.add_scalar(-1.0)).amax() < 1e-8);
    }

    #[test]
    fn pml_is_mle_on_the_shrunk_covariance() {
        for (seed, gamma) in [(1u64, 0.1), (2, 0.5), (3, 0.9)] {
            let s = cross_cov(&gaussian(40, 5, seed));
            let shrunk = &s * (1.0 - gamma) + DMatrix::identity(5, 5) * gamma;
            let pen = Penalty { gamma, target: PenaltyTarget::Identity };
            let a = fa_pml(&s, 2, &pen, &FaOptions::default()).unwrap();
            let b = fa_mle(&shrunk, 2, &FaOptions::default()).unwrap();
            assert!((&a.loadings - &b.loadings).amax() < 1e-12, "seed {seed}");
            assert!((&a.psi - &b.psi).amax() < 1e-12);
        }
    }

    #[test]
    fn full_shrinkage_to_diagonal() {
        let x = gaussian(30, 4, 5) * 2.0;
        let s = cross_cov(&x);
        let pen = Penalty {
            gamma: 1.0,
            target: PenaltyTarget::Diagonal,
        };
        let f = fa_pml(&s, 1, &pen, &FaOptions::default()).unwrap();
        assert!(f.loadings.amax() < 1e-8);
        assert!((f.psi - s.diagonal()).amax() < 1e-8);
    }

    #[test]
    fn invalid_dimension_rejected() {
        let s = DMatrix::identity(3, 3);
        assert!(matches!(fa_mle(&s, 3, &FaOptions::default()), Err(FreqError::InvalidDimension { .. })));
    }

    #[test]
    fn conditional_moments_without_loadings() {
        let p = FactorParams {
            d: 1,
            b: DMatrix::zeros(1, 3),
            beta: DVector::from_vec(vec![0.0]),
            beta0: 0.0,
            psi: DVector::from_element(3, 1.0),
            sigma2: 0.7,
        };
        let x = gaussian(4, 3, 6);
        let (ez, v) = conditional_outcome_moments(&p, &x).unwrap();
        assert_eq!(ez, DVector::zeros(4));
        assert_eq!(v, 0.7);
        let mut q = p.clone();
        q.beta[0] = 2.0;
        let (_, v2) = conditional_outcome_moments(&q, &x).unwrap();
        assert!((v2 - 4.7).abs() < 1e-15);
    }

    #[test]
    fn em_without_unlabeled_equals_mle() {
        let data = factor_data(60, 4, 0, 11);
        let em = em_semisupervised(&data, 1, None, &EmOptions::default()).unwrap();
        let mle = fa_mle(&cross_cov(&data.joint_labeled()), 1, &EmOptions::default().fa).unwrap();
        let a = em.params.joint_covariance();
        assert!((a - mle.covariance()).amax() < 1e-8);
    }

    #[test]
    fn em_objective_is_monotone() {
        let data = factor_data(30, 5, 40, 12);
        let em = em_semisupervised(&data, 1, None, &EmOptions::default()).unwrap();
        assert!(em.iterations > 1);
        for w in em.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-10 * w[0].abs());
        }
        for &(a, b) in &em.q_trace {
            assert!(b >= a - 1e-10 * a.abs());
        }
    }

    #[test]
    fn em_conditional_mean_is_the_induced_rule() {
        let data = factor_data(30, 5, 10, 13);
        let em = em_semisupervised(&data, 1, None, &EmOptions::default()).unwrap();
        let xu = data.unlabeled_x();
        let (ez, _) = conditional_outcome_moments(&em.params, &xu).unwrap();
        let rule = crate::model::induced_rule(&em.params).unwrap();
        assert!((ez - rule.predict(&xu)).amax() < 1e-12);
    }

    #[test]
    fn em_beats_random_parameters() {
        let data = factor_data(20, 3, 15, 14);
        let em = em_semisupervised(&data, 1, None, &EmOptions::default()).unwrap();
        let best = em_objective(&data, &em.params, None);
        let mut r = rng::stream(14, "test-random", 0);
        for _ in 0..100 {
            let b = DMatrix::from_fn(1, 3, |_, _| {
                let v: f64 = StandardNormal.sample(&mut r);
                v
            });
            let beta: f64 = StandardNormal.sample(&mut r);
            let psi = DVector::from_fn(3, |_, _| {
                let v: f64 = StandardNormal.sample(&mut r);
                v.exp() * 0.5
            });
            let sigma: f64 = StandardNormal.sample(&mut r);
            let p = FactorParams {
                d: 1,
                b,
                beta: DVector::from_element(1, beta),
                beta0: 0.0,
                psi,
                sigma2: sigma.exp() * 0.5,
            };
            assert!(em_objective(&data, &p, None) <= best + 1e-12);
        }
    }

    #[test]
    fn cv_prefers_strong_shrinkage_on_white_noise() {
        let x = gaussian(30, 10, 21);
        let data = Dataset::new(x, Outcome::Continuous(DVector::zeros(30)), None).unwrap();
        let grid = [0.1, 0.5, 0.9, 1.0];
        let cv = cv_penalty(&data, 2, 5, &grid, PenaltyTarget::Identity, CvBlock::Features, &FaOptions::default())
            .unwrap();
        assert_eq!(cv.gamma, 1.0);
    }

    #[test]
    fn cv_rejects_too_many_folds() {
        let x = gaussian(4, 3, 22);
        let data = Dataset::new(x, Outcome::Continuous(DVector::zeros(4)), None).unwrap();
        let r = cv_penalty(&data, 1, 10, &[0.5], PenaltyTarget::Identity, CvBlock::Features, &FaOptions::default());
        assert!(matches!(r, Err(FreqError::AllFoldsFailed)));
    }

    #[test]
    fn ridge_matches_normal_equations() {
        let x = gaussian(20, 4, 31);
        let y = gaussian(20, 1, 32).column(0).into_owned();
        let lam = 0.7;
        let c = ridge_solve(&x, &y, lam).unwrap();
        let a = x.transpose() * &x + DMatrix::identity(4, 4) * lam;
        let oracle = a.try_inverse().unwrap() * x.transpose() * &y;
        assert!((c - oracle).amax() < 1e-12);
        // Primal and dual agree when p > n.
        let xw = gaussian(5, 8, 33);
        let yw = gaussian(5, 1, 34).column(0).into_owned();
        let dual = ridge_solve(&xw, &yw, lam).unwrap();
        let a = xw.transpose() * &xw + DMatrix::identity(8, 8) * lam;
        let oracle = a.try_inverse().unwrap() * xw.transpose() * &yw;
        assert!((dual - oracle).amax() < 1e-10);
    }

    #[test]
    fn ridge_tie_prefers_larger_lambda() {
        // y = 0 makes every λ tie at zero error.
        let x = gaussian(10, 3, 35);
        let data = Dataset::new(x, Outcome::Continuous(DVector::zeros(10)), None).unwrap();
        let f = ridge_fit(&data, 5, &[0.1, 1.0, 10.0]).unwrap();
        assert_eq!(f.lambda, 10.0);
    }

    #[test]
    fn two_step_composes_scores_and_regression() {
        let data = factor_data(40, 6, 20, 41);
        let pen = Penalty {
            gamma: 0.1,
            target: PenaltyTarget::Identity,
        };
        let f = two_step_fit(&data, 1, &pen, &FaOptions::default()).unwrap();
        let lr = LowRankCov::new(&f.loadings, &f.psi).unwrap();
        let scores = data.labeled_x() * lr.score_map();
        let pred_a = &scores * &f.score_coefficients;
        let pred_b = f.rule.predict(&data.labeled_x());
        assert!((pred_a - pred_b).amax() < 1e-12);
    }

    #[test]
    fn two_step_too_few_rows() {
        let data = factor_data(2, 6, 0, 42);
        let pen = Penalty {
            gamma: 0.1,
            target: PenaltyTarget::Identity,
        };
        assert!(matches!(two_step_fit(&data, 2, &pen, &FaOptions::default()), Err(FreqError::SingularScores)));
    }
}
